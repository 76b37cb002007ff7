"""Explanation-as-communication toolkit.

Train small attention classifiers, extract word-level explanations with
interchangeable explainers, and score those explanations by how well a
separate layperson model (or a human through the annotation service) can
recover the classifier's prediction from the selected words alone.
"""

__version__ = "0.1.0"
