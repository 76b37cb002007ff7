"""Corpus ingestion, tokenization, vocabularies, embeddings, stopwords,
and the synthetic keyword corpus used for desk-scale evaluation.

Supported file formats (all UTF-8):
  tsv         one example per line, ``label<TAB>text``
  snli-jsonl  one JSON object per line with gold_label/sentence1/sentence2
  esnli-jsonl snli-jsonl plus ``premise_highlight``, a list of premise
              token indices marking the human rationale
Word-vector files are the plain text format ``token v1 ... vd``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ConfigError, DataFormatError, LabelError

log = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

NLI_LABELS = ["entailment", "neutral", "contradiction"]


def tokenize(text: str) -> list[str]:
    """Lowercase and split on word/punctuation boundaries."""
    return _TOKEN_RE.findall(text.lower())


def bundled_stopwords() -> frozenset[str]:
    """The packaged 127-word English stopword list."""
    raw = resources.files("commgame").joinpath("stopwords_en.txt").read_text("utf-8")
    return frozenset(w for w in raw.splitlines() if w)


@dataclass
class Vocabulary:
    """Token/id bijection with specials at fixed slots: pad=0, unk=1."""

    id_to_token: list[str]
    token_to_id: dict[str, int] = field(repr=False)
    stopword_flags: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, token_lists, stopwords: frozenset[str] | None = None) -> "Vocabulary":
        """First-appearance ordering after the two specials."""
        if stopwords is None:
            stopwords = bundled_stopwords()
        id_to_token = [PAD_TOKEN, UNK_TOKEN]
        token_to_id = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
        for tokens in token_lists:
            for tok in tokens:
                if tok not in token_to_id:
                    token_to_id[tok] = len(id_to_token)
                    id_to_token.append(tok)
        flags = np.array([t in stopwords for t in id_to_token], dtype=bool)
        flags[PAD_ID] = False
        flags[UNK_ID] = False
        return cls(id_to_token, token_to_id, flags)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    @property
    def fingerprint(self) -> str:
        digest = hashlib.sha256("\n".join(self.id_to_token).encode("utf-8"))
        return digest.hexdigest()

    def to_json(self) -> str:
        return json.dumps(
            {
                "tokens": self.id_to_token,
                "stopword_flags": self.stopword_flags.astype(int).tolist(),
                "fingerprint": self.fingerprint,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        obj = json.loads(text)
        tokens = obj["tokens"]
        vocab = cls(
            tokens,
            {t: i for i, t in enumerate(tokens)},
            np.array(obj["stopword_flags"], dtype=bool),
        )
        want = obj.get("fingerprint")
        if want is not None and want != vocab.fingerprint:
            raise DataFormatError("vocabulary fingerprint does not match its content")
        return vocab


def stopword_mask(vocab: Vocabulary) -> np.ndarray:
    """Boolean vector over vocab ids; True marks a stopword."""
    return vocab.stopword_flags.copy()


@dataclass
class Example:
    """One labeled instance. For NLI, `tokens`/`words` hold the premise and
    the hypothesis fields are set; `highlight` (when present) marks human
    rationale positions over the premise."""

    example_id: str
    words: list[str]
    tokens: list[int]
    gold_label: int
    hypothesis_words: list[str] | None = None
    hypothesis_tokens: list[int] | None = None
    highlight: list[bool] | None = None


@dataclass
class Corpus:
    examples: list[Example]
    vocab: Vocabulary
    label_names: list[str]
    task: str  # "textclf" or "nli"

    def __len__(self) -> int:
        return len(self.examples)


def _read_tsv(path: str, keep_labels: list[str] | None):
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise DataFormatError(f"{path}: line {lineno}: expected label<TAB>text")
            label, text = line.split("\t", 1)
            words = tokenize(text)
            if not words:
                raise DataFormatError(f"{path}: line {lineno}: empty text field")
            if keep_labels is not None and label not in keep_labels:
                continue
            rows.append((lineno, label, words))
    return rows


def _read_snli(path: str, with_highlights: bool):
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}: line {lineno}: invalid JSON") from exc
            try:
                label = obj["gold_label"]
                premise = tokenize(obj["sentence1"])
                hypothesis = tokenize(obj["sentence2"])
            except (KeyError, TypeError) as exc:
                raise DataFormatError(
                    f"{path}: line {lineno}: missing gold_label/sentence1/sentence2"
                ) from exc
            if label == "-":
                # no annotator consensus; the standard convention is to drop
                continue
            if not premise or not hypothesis:
                raise DataFormatError(f"{path}: line {lineno}: empty sentence")
            highlight = None
            if with_highlights:
                idxs = obj.get("premise_highlight", [])
                highlight = [False] * len(premise)
                for i in idxs:
                    if not isinstance(i, int) or not 0 <= i < len(premise):
                        raise DataFormatError(
                            f"{path}: line {lineno}: highlight index {i} out of range"
                        )
                    highlight[i] = True
            rows.append((lineno, label, premise, hypothesis, highlight))
    return rows


def load_corpus(
    path: str,
    fmt: str,
    vocab: Vocabulary | None = None,
    label_names: list[str] | None = None,
    keep_labels: list[str] | None = None,
) -> Corpus:
    """Load one split. Passing vocab=None declares this the training split:
    the vocabulary (and, for tsv, the label set) is built from its content.
    Later splits reuse them and map unseen tokens to unk.
    """
    if fmt == "tsv":
        rows = _read_tsv(path, keep_labels)
        if label_names is None:
            label_names = keep_labels if keep_labels else sorted({r[1] for r in rows})
        if vocab is None:
            vocab = Vocabulary.build(words for _, _, words in rows)
        label_ids = {name: i for i, name in enumerate(label_names)}
        examples = []
        for lineno, label, words in rows:
            if label not in label_ids:
                raise LabelError(f"{path}: line {lineno}: unknown label {label!r}")
            examples.append(
                Example(
                    example_id=f"{path}:{lineno}",
                    words=words,
                    tokens=vocab.encode(words),
                    gold_label=label_ids[label],
                )
            )
        return Corpus(examples, vocab, list(label_names), "textclf")

    if fmt in ("snli-jsonl", "esnli-jsonl"):
        rows = _read_snli(path, with_highlights=fmt == "esnli-jsonl")
        if label_names is None:
            label_names = list(NLI_LABELS)
        if vocab is None:
            vocab = Vocabulary.build(
                [r[2] + r[3] for r in rows]
            )
        label_ids = {name: i for i, name in enumerate(label_names)}
        examples = []
        for lineno, label, premise, hypothesis, highlight in rows:
            if label not in label_ids:
                raise LabelError(f"{path}: line {lineno}: unknown label {label!r}")
            examples.append(
                Example(
                    example_id=f"{path}:{lineno}",
                    words=premise,
                    tokens=vocab.encode(premise),
                    gold_label=label_ids[label],
                    hypothesis_words=hypothesis,
                    hypothesis_tokens=vocab.encode(hypothesis),
                    highlight=highlight,
                )
            )
        return Corpus(examples, vocab, list(label_names), "nli")

    raise ConfigError(f"unknown corpus format {fmt!r}")


@dataclass
class EmbeddingTable:
    """Dense id-indexed word vectors; `frozen` tables are never updated by
    training. `n_random` counts rows that had no pretrained vector."""

    matrix: np.ndarray
    frozen: bool = True
    n_random: int = 0

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def load_embeddings(path: str, vocab: Vocabulary, seed: int = 0) -> EmbeddingTable:
    """Attach pretrained vectors to vocab ids. Ids missing from the file get
    uniform(-0.1, 0.1) rows; the pad row is zero."""
    vectors: dict[int, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                raise DataFormatError(f"{path}: line {lineno}: expected token v1 ... vd")
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise DataFormatError(
                    f"{path}: line {lineno}: dimension {len(values)} != {dim}"
                )
            tid = vocab.token_to_id.get(token)
            if tid is not None and tid not in vectors:
                try:
                    vectors[tid] = np.array([float(v) for v in values])
                except ValueError as exc:
                    raise DataFormatError(
                        f"{path}: line {lineno}: non-numeric vector entry"
                    ) from exc
    if dim is None:
        dim = 0
    rng = np.random.default_rng(seed)
    matrix = np.zeros((len(vocab), dim))
    n_random = 0
    for tid in range(len(vocab)):
        if tid == PAD_ID:
            continue
        vec = vectors.get(tid)
        if vec is None:
            matrix[tid] = rng.uniform(-0.1, 0.1, size=dim)
            if tid != UNK_ID:  # specials are not counted as misses
                n_random += 1
        else:
            matrix[tid] = vec
    if n_random:
        log.warning(
            "%d of %d vocabulary words had no pretrained vector and were "
            "randomly initialized",
            n_random,
            len(vocab) - 2,
        )
    return EmbeddingTable(matrix, frozen=True, n_random=n_random)


@dataclass
class SyntheticCorpus:
    train: Corpus
    test: Corpus
    keywords: dict[int, list[str]]


def generate_synthetic(
    n_train: int,
    n_test: int,
    vocab_size: int,
    n_classes: int = 2,
    keywords_per_class: int = 3,
    noise_len: int = 8,
    seed: int = 0,
) -> SyntheticCorpus:
    """Build a keyword-planted corpus: every example is uniform noise tokens
    plus 1-3 keywords of exactly one class, which determines the label, so
    the classes are linearly separable on word presence alone."""
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    if min(n_train, n_test) < 0 or vocab_size <= 0 or noise_len < 0:
        raise ConfigError("sizes must be nonnegative and vocab_size positive")
    if keywords_per_class < 1:
        raise ConfigError("keywords_per_class must be at least 1")
    n_key = keywords_per_class * n_classes
    if n_key >= vocab_size:
        raise ConfigError(
            f"keywords_per_class*n_classes = {n_key} must be < vocab_size = {vocab_size}"
        )
    keywords = {
        c: [f"key{c}n{j}" for j in range(keywords_per_class)] for c in range(n_classes)
    }
    noise_pool = [f"w{i:04d}" for i in range(vocab_size - n_key)]
    rng = np.random.default_rng(seed)

    def make_split(n: int, tag: str) -> list[tuple[str, list[str], int]]:
        rows = []
        for i in range(n):
            label = i % n_classes
            words = [noise_pool[j] for j in rng.integers(0, len(noise_pool), noise_len)]
            n_planted = int(rng.integers(1, 4))
            for _ in range(n_planted):
                kw = keywords[label][int(rng.integers(keywords_per_class))]
                words.insert(int(rng.integers(0, len(words) + 1)), kw)
            rows.append((f"{tag}-{i:05d}", words, label))
        return rows

    train_rows = make_split(n_train, "train")
    test_rows = make_split(n_test, "test")
    label_names = [f"c{c}" for c in range(n_classes)]
    vocab = Vocabulary.build([w for _, w, _ in train_rows])

    def to_corpus(rows) -> Corpus:
        return Corpus(
            [
                Example(eid, words, vocab.encode(words), label)
                for eid, words, label in rows
            ],
            vocab,
            label_names,
            "textclf",
        )

    return SyntheticCorpus(to_corpus(train_rows), to_corpus(test_rows), keywords)


def write_tsv(corpus: Corpus, path: str) -> None:
    """Inverse of the tsv loader for generated corpora."""
    with open(path, "w", encoding="utf-8") as f:
        for ex in corpus.examples:
            f.write(f"{corpus.label_names[ex.gold_label]}\t{' '.join(ex.words)}\n")
