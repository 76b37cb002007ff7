"""Shared fixtures: a small planted-keyword corpus and classifiers trained
on it once per session, reused by model, explainer, and game tests."""

import pytest

from commgame import data, models


@pytest.fixture(scope="session")
def syn():
    return data.generate_synthetic(
        n_train=320,
        n_test=120,
        vocab_size=100,
        n_classes=2,
        keywords_per_class=3,
        noise_len=6,
        seed=11,
    )


@pytest.fixture(scope="session")
def syn_dev(syn):
    return syn.test.examples[:60]


@pytest.fixture(scope="session")
def syn_eval(syn):
    return syn.test.examples[60:]


def _train(syn, syn_dev, transform):
    cfg = models.ModelConfig(
        vocab_size=len(syn.train.vocab),
        n_classes=2,
        transform=transform,
        emb_dim=24,
        hidden=12,
        attn_dim=12,
        seed=3,
    )
    model = models.AttentionClassifier(cfg)
    tcfg = models.TrainConfig(epochs=5, lr=5e-3, batch_size=16, seed=5)
    bundle, log = models.train_classifier(
        model, syn.train.examples, syn_dev, tcfg, syn.train.vocab
    )
    return model, bundle, log


@pytest.fixture(scope="session")
def softmax_model(syn, syn_dev):
    return _train(syn, syn_dev, "softmax")


@pytest.fixture(scope="session")
def sparsemax_model(syn, syn_dev):
    return _train(syn, syn_dev, "sparsemax")
