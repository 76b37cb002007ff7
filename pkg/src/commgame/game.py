"""The communication game: run classifier -> explainer -> layperson
pipelines and score them. Metrics: communication success rate (CSR),
layperson accuracy, k-sweeps with a freshly trained layperson per k,
explanation entropy, word overlap between explainers, and inter-annotator
agreement (Cohen's kappa).
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from .data import PAD_ID, Example, Vocabulary
from .errors import (
    AlignmentError,
    CommgameError,
    ConfigError,
    ContractError,
    MetricUndefinedError,
)
from .explainers import Message
from .models import (
    AttentionClassifier,
    BowLayperson,
    TrainConfig,
    train_layperson,
)


@dataclass(frozen=True)
class CommunicationRecord:
    """One played round: what the classifier said, what the layperson
    recovered from the message, and the gold label for reference."""

    example_id: str
    y: int
    y_hat: int
    y_tilde: int
    message: Message
    message_size: int

    def __post_init__(self):
        if self.message_size != len(self.message.token_ids):
            raise ContractError(
                f"message_size {self.message_size} != |token set| "
                f"{len(self.message.token_ids)}"
            )


@dataclass
class RunReport:
    explainer_id: str
    classifier_id: str
    csr: float
    acc_l: float
    mean_k: float
    confusion: list[list[int]]  # rows gold y, columns layperson prediction
    entropy: float | None  # None when every message was empty

    def __post_init__(self):
        if not (0.0 <= self.csr <= 1.0 and 0.0 <= self.acc_l <= 1.0):
            raise ContractError("rates must lie in [0, 1]")


def play(
    classifier: AttentionClassifier,
    explain_fn,
    layperson: BowLayperson,
    examples: list[Example],
) -> list[CommunicationRecord]:
    """One round per example: classify, explain the prediction, have the
    layperson guess from the message alone."""
    records = []
    for ex in examples:
        y_hat = classifier.classify(ex).label
        msg = explain_fn(ex)
        hyp = list(msg.hypothesis) if msg.hypothesis is not None else ex.hypothesis_tokens
        y_tilde = layperson.predict(sorted(msg.token_ids), hyp)
        records.append(
            CommunicationRecord(
                ex.example_id, ex.gold_label, y_hat, y_tilde, msg, len(msg.token_ids)
            )
        )
    return records


def csr(records: list[CommunicationRecord]) -> float:
    """Fraction of rounds where the layperson recovered the classifier's
    prediction (success: y_tilde == y_hat)."""
    if not records:
        raise MetricUndefinedError("CSR over an empty record list")
    return sum(r.y_tilde == r.y_hat for r in records) / len(records)


def acc(records: list[CommunicationRecord]) -> float:
    """Layperson accuracy against the gold label."""
    if not records:
        raise MetricUndefinedError("accuracy over an empty record list")
    return sum(r.y_tilde == r.y for r in records) / len(records)


def confusion(records: list[CommunicationRecord], n_classes: int) -> list[list[int]]:
    table = [[0] * n_classes for _ in range(n_classes)]
    for r in records:
        table[r.y][r.y_tilde] += 1
    return table


def explanation_entropy(messages, base: float = 2.0) -> float:
    """Shannon entropy of the relative selection frequencies of tokens
    pooled across all messages."""
    if base <= 0 or base == 1.0:
        raise ConfigError(f"entropy base must be positive and != 1, got {base}")
    counts: Counter = Counter()
    for msg in messages:
        counts.update(msg.token_ids if isinstance(msg, Message) else set(msg))
    if not counts:
        raise MetricUndefinedError("entropy of an all-empty message collection")
    f = np.array(sorted(counts.values()), dtype=float)
    f /= f.sum()
    return float(-(f * (np.log(f) / np.log(base))).sum())


def jaccard(a, b) -> float:
    """Set overlap; two empty sets count as perfect agreement."""
    a, b = set(a), set(b)
    union = a | b
    return len(a & b) / len(union) if union else 1.0


def word_overlap(records_a, records_b) -> float:
    """Mean per-example Jaccard overlap between two explainers' messages.
    Inputs must cover the same examples in the same order."""
    if len(records_a) != len(records_b):
        raise AlignmentError(
            f"record lists differ in length: {len(records_a)} vs {len(records_b)}"
        )
    if not records_a:
        raise MetricUndefinedError("overlap over empty record lists")
    scores = []
    for ra, rb in zip(records_a, records_b):
        if ra.example_id != rb.example_id:
            raise AlignmentError(
                f"example id mismatch: {ra.example_id!r} vs {rb.example_id!r}"
            )
        scores.append(jaccard(ra.message.token_ids, rb.message.token_ids))
    return float(np.mean(scores))


@dataclass(frozen=True)
class AgreementResult:
    p_o: float
    p_e: float
    kappa: float
    degenerate: bool  # p_e == 1: both annotators constant and equal


def agreement(labels_a: list[int], labels_b: list[int]) -> AgreementResult:
    """Observed agreement and Cohen's kappa with chance correction from the
    two annotators' marginal label frequencies."""
    if len(labels_a) != len(labels_b):
        raise AlignmentError(
            f"annotations differ in length: {len(labels_a)} vs {len(labels_b)}"
        )
    if not labels_a:
        raise MetricUndefinedError("agreement over empty annotations")
    n = len(labels_a)
    p_o = sum(x == y for x, y in zip(labels_a, labels_b)) / n
    ca, cb = Counter(labels_a), Counter(labels_b)
    # integer numerator keeps p_e exact regardless of label iteration order
    p_e = sum(ca[label] * cb.get(label, 0) for label in ca) / (n * n)
    if p_e == 1.0:
        return AgreementResult(p_o, p_e, 1.0, True)
    kappa = (p_o - p_e) / (1.0 - p_e)
    return AgreementResult(p_o, p_e, kappa, False)


def run_report(
    records: list[CommunicationRecord],
    explainer_id: str,
    classifier_id: str,
    n_classes: int,
    entropy_base: float = 2.0,
) -> RunReport:
    try:
        entropy = explanation_entropy([r.message for r in records], entropy_base)
    except MetricUndefinedError:
        entropy = None
    return RunReport(
        explainer_id,
        classifier_id,
        csr(records),
        acc(records),
        float(np.mean([r.message_size for r in records])),
        confusion(records, n_classes),
        entropy,
    )


def full_length_message(example: Example) -> Message:
    """The no-compression terminal point of a sweep: every content token."""
    positions = [i for i, t in enumerate(example.tokens) if t != PAD_ID]
    hyp = tuple(example.hypothesis_tokens) if example.hypothesis_tokens else None
    ids = frozenset(example.tokens[p] for p in positions)
    return Message(ids, tuple(positions), None, hyp)


@dataclass
class SweepCell:
    k: int | None  # None marks the full-length terminal point
    report: RunReport
    dev_csr: float


def _pairs(examples, messages, y_hats):
    out = []
    for ex, msg, y_hat in zip(examples, messages, y_hats):
        hyp = list(msg.hypothesis) if msg.hypothesis is not None else ex.hypothesis_tokens
        out.append((sorted(msg.token_ids), y_hat, hyp))
    return out


def k_sweep(
    classifier: AttentionClassifier,
    explainer_factory,
    layperson_factory,
    train_examples: list[Example],
    dev_examples: list[Example],
    test_examples: list[Example],
    ks: list[int],
    train_cfg: TrainConfig,
    vocab: Vocabulary,
    explainer_id: str = "explainer",
    classifier_id: str = "classifier",
    include_full: bool = True,
    entropy_base: float = 2.0,
) -> list[SweepCell]:
    """CSR as a function of message size. Every cell trains a fresh
    layperson (from `layperson_factory(k)`) on that cell's own messages,
    keeping the best-dev-CSR epoch; sharing a layperson across cells would
    leak. The full-length cell (k=None) is appended as the terminal point.
    """
    if sorted(ks) != list(ks):
        raise ConfigError(f"ks must be sorted ascending, got {ks}")
    y_hat = {
        split: [classifier.classify(ex).label for ex in examples]
        for split, examples in (
            ("train", train_examples),
            ("dev", dev_examples),
            ("test", test_examples),
        )
    }
    cells: list[SweepCell] = []
    ks_with_full: list[int | None] = list(ks) + ([None] if include_full else [])
    for k in ks_with_full:
        explain = full_length_message if k is None else explainer_factory(k)
        try:
            msgs = {
                "train": [explain(ex) for ex in train_examples],
                "dev": [explain(ex) for ex in dev_examples],
                "test": [explain(ex) for ex in test_examples],
            }
            lay = layperson_factory(k)
            bundle, _ = train_layperson(
                lay,
                _pairs(train_examples, msgs["train"], y_hat["train"]),
                _pairs(dev_examples, msgs["dev"], y_hat["dev"]),
                train_cfg,
                vocab,
            )
        except CommgameError as exc:
            raise type(exc)(f"k={'full' if k is None else k}: {exc}") from exc
        records = []
        for ex, msg, yh in zip(test_examples, msgs["test"], y_hat["test"]):
            hyp = list(msg.hypothesis) if msg.hypothesis is not None else ex.hypothesis_tokens
            y_tilde = lay.predict(sorted(msg.token_ids), hyp)
            records.append(
                CommunicationRecord(
                    ex.example_id, ex.gold_label, yh, y_tilde, msg, len(msg.token_ids)
                )
            )
        label = f"{explainer_id}@k={'full' if k is None else k}"
        report = run_report(
            records, label, classifier_id, classifier.cfg.n_classes, entropy_base
        )
        cells.append(SweepCell(k, report, bundle.dev_metric["value"]))
    return cells


def curve_csv(cells: list[SweepCell]) -> str:
    lines = ["k,csr,acc_l"]
    for cell in cells:
        k = "full" if cell.k is None else cell.k
        lines.append(f"{k},{cell.report.csr:.6f},{cell.report.acc_l:.6f}")
    return "\n".join(lines) + "\n"


def report_json(reports: list[RunReport]) -> str:
    return json.dumps([asdict(r) for r in reports], indent=2)


def report_table(reports: list[RunReport]) -> str:
    """Aligned plain-text table, one explainer per row."""
    headers = ["explainer", "classifier", "CSR", "ACC_L", "mean k", "H"]
    rows = [
        [
            r.explainer_id,
            r.classifier_id,
            f"{r.csr * 100:.2f}",
            f"{r.acc_l * 100:.2f}",
            f"{r.mean_k:.2f}",
            "-" if r.entropy is None else f"{r.entropy:.2f}",
        ]
        for r in reports
    ]
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    def fmt(row):
        return "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(row) for row in rows)
    return "\n".join(lines) + "\n"
