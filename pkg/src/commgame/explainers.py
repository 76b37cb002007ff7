"""Explanation methods: baselines (random, erasure, gradient, attention),
the selective sparse-attention reader, the jointly trained explainer, and
human highlights. Every method emits a Message, an order-free bag of
tokens selected from the input (premise) positions.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .data import PAD_ID, Example, Vocabulary, stopword_mask
from .errors import (
    ConfigError,
    ContractError,
    DataFormatError,
    InputError,
    NumericError,
)
from .errors import FingerprintMismatchError
from .models import (
    AttentionClassifier,
    BowLayperson,
    CheckpointBundle,
    Encoder,
    TrainConfig,
    _uniform,
)

Array = np.ndarray

KINDS = (
    "random",
    "erasure",
    "topk_gradient",
    "topk_attention",
    "selective_attention",
    "joint",
    "human_highlights",
)
K_REQUIRED = ("random", "erasure", "topk_gradient", "topk_attention", "joint")


@dataclass(frozen=True)
class Message:
    """Bag of selected tokens plus their source positions for audit."""

    token_ids: frozenset[int]
    positions: tuple[int, ...]
    k_requested: int | None = None
    hypothesis: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "positions", tuple(sorted(self.positions)))


def _mk_message(tokens: list[int], positions, k: int | None, example) -> Message:
    hyp = None
    if isinstance(example, Example) and example.hypothesis_tokens is not None:
        hyp = tuple(example.hypothesis_tokens)
    ids = frozenset(tokens[p] for p in positions)
    return Message(ids, tuple(positions), k, hyp)


def _tokens_of(example) -> list[int]:
    tokens = getattr(example, "tokens", None)
    return list(tokens) if tokens is not None else list(example)


def _example_rng(seed: int, example) -> np.random.Generator:
    eid = getattr(example, "example_id", None) or repr(list(example))
    return np.random.default_rng([seed, zlib.crc32(eid.encode("utf-8"))])


def _content_positions(tokens: list[int]) -> list[int]:
    return [i for i, t in enumerate(tokens) if t != PAD_ID]


def explain_random(example, k: int, seed: int = 0) -> Message:
    """Uniform sample of k distinct content positions."""
    if k < 0:
        raise ConfigError(f"k must be nonnegative, got {k}")
    tokens = _tokens_of(example)
    positions = _content_positions(tokens)
    rng = _example_rng(seed, example)
    take = min(k, len(positions))
    chosen = rng.choice(len(positions), size=take, replace=False) if take else []
    return _mk_message(tokens, [positions[int(i)] for i in chosen], k, example)


def explain_erasure(classifier: AttentionClassifier, example, k: int) -> Message:
    """Greedy repeated erasure: at each round, erase the most-attended
    remaining position and rerun the classifier on the partially erased
    input. Performs exactly min(k, length) + 1 forward passes."""
    if k < 1:
        raise ConfigError(f"erasure needs k >= 1, got {k}")
    tokens = _tokens_of(example)
    fp = classifier.forward(example)
    erased: list[int] = []
    rounds = min(k, len(fp.valid_positions))
    for _ in range(rounds):
        candidates = [p for p in fp.valid_positions if p not in erased]
        best = max(candidates, key=lambda p: (fp.attention.probs[p], -p))
        erased.append(best)
        fp = classifier.forward(example, erased=frozenset(erased))
    return _mk_message(tokens, erased, k, example)


def explain_topk_gradient(classifier, example, k: int) -> Message:
    """Input-times-gradient attribution: position score is the absolute
    inner product of the embedding row with the gradient of the predicted
    class's logit. Ties break toward earlier positions."""
    if k < 0:
        raise ConfigError(f"k must be nonnegative, got {k}")
    tokens = _tokens_of(example)
    fp = classifier.forward(example)
    onehot = np.zeros_like(fp.logits.value)
    onehot[0, fp.label] = 1.0
    target = ad.sum_all(ad.mul(fp.logits, ad.leaf(onehot)))
    grad = ad.backward(target).get(fp.emb)
    if grad is None:
        grad = np.zeros_like(fp.emb.value)
    scores = np.abs((grad * fp.emb.value).sum(axis=1))
    order = sorted(range(len(fp.valid_positions)), key=lambda i: (-scores[i], i))
    chosen = [fp.valid_positions[i] for i in order[:k]]
    return _mk_message(tokens, chosen, k, example)


def _attended_forward(classifier, example, stopword_ids: frozenset[int]):
    tokens = _tokens_of(example)
    if stopword_ids:
        mask = np.array([t not in stopword_ids for t in tokens])
        fp = classifier.forward(example, score_mask=mask)
    else:
        fp = classifier.forward(example)
    return tokens, fp


def explain_topk_attention(
    classifier, example, k: int, stopword_ids: frozenset[int] = frozenset()
) -> Message:
    """The k most-attended positions from a single forward pass; stopword
    scores are masked out before the transform; zero-probability positions
    are never selected."""
    if k < 0:
        raise ConfigError(f"k must be nonnegative, got {k}")
    tokens, fp = _attended_forward(classifier, example, stopword_ids)
    probs = fp.attention.probs
    candidates = [p for p in fp.valid_positions if probs[p] > 0.0]
    candidates.sort(key=lambda p: (-probs[p], p))
    return _mk_message(tokens, candidates[:k], k, example)


def explain_selective(
    classifier, example, stopword_ids: frozenset[int] = frozenset()
) -> Message:
    """Every position the sparse attention head kept; the message length is
    emergent, so no k is accepted."""
    if classifier.cfg.transform == "softmax":
        raise ConfigError(
            "selective explanation needs a sparse attention head "
            "(softmax support is always the whole input)"
        )
    tokens, fp = _attended_forward(classifier, example, stopword_ids)
    return _mk_message(tokens, fp.attention.support.tolist(), None, example)


def explain_human_highlights(example: Example) -> Message:
    """The annotator-marked premise positions."""
    if example.highlight is None:
        raise DataFormatError(
            f"example {example.example_id} carries no highlight mask"
        )
    positions = [i for i, flag in enumerate(example.highlight) if flag]
    return _mk_message(example.tokens, positions, None, example)


def highlight_examples(examples: list[Example], neutral_label: int | None = None):
    """Upstream filter for the human-highlight explainer: keep examples that
    carry a mask, dropping neutral pairs (which have none by convention)."""
    kept = []
    for ex in examples:
        if ex.highlight is None:
            continue
        if neutral_label is not None and ex.gold_label == neutral_label:
            continue
        kept.append(ex)
    return kept


@dataclass
class JointConfig:
    vocab_size: int
    n_classes: int
    classifier_state_dim: int  # dimensionality of the classifier states h
    emb_dim: int = 24
    hidden: int = 12
    attn_dim: int = 12
    ffn_dim: int = 32
    lam: float = 1.0
    beta: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must be in [0, 1], got {self.beta}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lam}")


class JointExplainer:
    """Trainable explainer: its own embedding + BiLSTM + additive attention
    with a sparsemax head, a label embedding injected into the attention
    query when prediction access is granted, and a feed-forward
    faithfulness head mapping its states toward the classifier's."""

    def __init__(self, cfg: JointConfig):
        self.cfg = cfg
        self.params: dict[str, ad.Node] = {}
        rng = np.random.default_rng(cfg.seed)
        self.encoder = Encoder(
            "exp",
            cfg.vocab_size,
            cfg.emb_dim,
            cfg.hidden,
            cfg.attn_dim,
            transform="sparsemax",
            alpha=1.5,
            rng=rng,
            params=self.params,
        )
        sa = 1.0 / np.sqrt(cfg.attn_dim)
        self.label_emb = ad.leaf(
            _uniform(rng, (cfg.n_classes, cfg.attn_dim), sa), "label_emb"
        )
        self.params["label_emb"] = self.label_emb
        sf = 1.0 / np.sqrt(cfg.ffn_dim)
        self.ffn_w1 = ad.leaf(
            _uniform(rng, (2 * cfg.hidden, cfg.ffn_dim), sf), "ffn_w1"
        )
        self.ffn_b1 = ad.leaf(np.zeros((1, cfg.ffn_dim)), "ffn_b1")
        self.ffn_w2 = ad.leaf(
            _uniform(rng, (cfg.ffn_dim, cfg.classifier_state_dim), sf), "ffn_w2"
        )
        self.ffn_b2 = ad.leaf(np.zeros((1, cfg.classifier_state_dim)), "ffn_b2")
        for name in ("ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2"):
            self.params[name] = getattr(self, name)

    def attention(
        self,
        tokens: list[int],
        stopword_ids: frozenset[int],
        y_hat: int | None,
    ):
        """Sparsemax attention over non-stopword content positions, with the
        predicted label's embedding added to the query when provided."""
        valid = _content_positions(tokens)
        if not valid:
            raise InputError("empty token sequence (all positions are pad)")
        sub_tokens = [tokens[i] for i in valid]
        mask = np.array([t not in stopword_ids for t in sub_tokens])
        if not mask.any():
            raise InputError("every content token is a stopword")
        enc = self.encoder.encode(sub_tokens)
        extra = None
        if y_hat is not None:
            extra = ad.take_rows(self.label_emb, [int(y_hat)])
        _, probs, dist, _ = self.encoder.attend(
            enc.states, extra_query=extra, score_mask=mask
        )
        return probs, dist, enc.states, valid

    def faithfulness_vector(self, states: ad.Node) -> ad.Node:
        """h-tilde: mean over positions of the FFN-mapped explainer states."""
        hidden = ad.tanh(ad.add(ad.matmul(states, self.ffn_w1), self.ffn_b1))
        mapped = ad.add(ad.matmul(hidden, self.ffn_w2), self.ffn_b2)
        return ad.mean_rows(mapped)

    def snapshot(self):
        return {name: node.value.copy() for name, node in self.params.items()}

    def load_tensors(self, tensors):
        for name, node in self.params.items():
            node.value = tensors[name].copy()


@dataclass
class JointInstance:
    """One training row for the joint game: the input, the classifier's
    prediction to be communicated, and the mean classifier state."""

    tokens: list[int]
    y_hat: int
    h_bar: Array  # (1, classifier_state_dim)
    hypothesis: list[int] | None = None


def prepare_joint_instances(
    classifier: AttentionClassifier, examples: list[Example]
) -> list[JointInstance]:
    out = []
    for ex in examples:
        res = classifier.classify(ex)
        h_bar = res.states.mean(axis=0, keepdims=True)
        out.append(JointInstance(ex.tokens, res.label, h_bar, ex.hypothesis_tokens))
    return out


def joint_loss(
    explainer: JointExplainer,
    layperson: BowLayperson,
    inst: JointInstance,
    stopword_ids: frozenset[int],
    grant_access: bool,
) -> ad.Node:
    y_hat = inst.y_hat if grant_access else None
    probs, _, states, valid = explainer.attention(inst.tokens, stopword_ids, y_hat)
    h_tilde = explainer.faithfulness_vector(states)
    omega = ad.squared_distance(h_tilde, ad.leaf(inst.h_bar))
    sub_tokens = [inst.tokens[i] for i in valid]
    logits = layperson.forward_soft(probs, sub_tokens, inst.hypothesis)
    ce = ad.cross_entropy_logits(logits, inst.y_hat)
    return ad.add(ad.scale(omega, explainer.cfg.lam), ce)


def train_joint(
    explainer: JointExplainer,
    layperson: BowLayperson,
    train_instances: list[JointInstance],
    dev_instances: list[JointInstance],
    cfg: TrainConfig,
    stopword_ids: frozenset[int] = frozenset(),
    eval_k: int = 3,
) -> list[dict]:
    """Minimize lam*Omega + cross-entropy of the layperson recovering the
    classifier's prediction from the soft message. The probability that the
    explainer sees that prediction rises linearly from 0 to beta, one coin
    per example. Classifier parameters are never touched (the classifier
    only appears through precomputed h_bar constants and y_hat targets)."""
    if train_instances and train_instances[0].h_bar.shape[1] != explainer.cfg.classifier_state_dim:
        raise ConfigError(
            f"faithfulness head maps to width {explainer.cfg.classifier_state_dim} "
            f"but classifier states have width {train_instances[0].h_bar.shape[1]}"
        )
    params = dict(explainer.params)
    for name, node in layperson.params.items():
        params[f"lay.{name}"] = node
    state = ad.AdamWState()
    order_rng = np.random.default_rng(cfg.seed)
    coin_rng = np.random.default_rng(cfg.seed + 1)
    log: list[dict] = []
    total = max(1, cfg.epochs * len(train_instances) - 1)
    seen = 0
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(train_instances))
        for start in range(0, len(train_instances), cfg.batch_size):
            batch = [train_instances[i] for i in order[start : start + cfg.batch_size]]
            acc: dict[str, Array] = {}
            for inst in batch:
                p_access = explainer.cfg.beta * (seen / total)
                grant = bool(coin_rng.random() < p_access)
                seen += 1
                loss = joint_loss(explainer, layperson, inst, stopword_ids, grant)
                if not np.isfinite(loss.value):
                    raise NumericError(f"joint training diverged at epoch {epoch}")
                for name, g in ad.grads_for(loss, params).items():
                    if name in acc:
                        acc[name] += g
                    else:
                        acc[name] = g.copy()
            for name in acc:
                acc[name] /= len(batch)
            ad.adamw_step(params, acc, state, lr=cfg.lr, weight_decay=cfg.weight_decay)
        value = joint_dev_csr(explainer, layperson, dev_instances, stopword_ids, eval_k)
        log.append({"epoch": epoch, "split": "dev", "metric": "csr", "value": value})
    return log


def extract_joint_message(
    explainer: JointExplainer,
    example,
    k: int,
    y_hat: int,
    stopword_ids: frozenset[int] = frozenset(),
    seed: int = 0,
) -> Message:
    """Test-time reading of the trained explainer: top-k of its sparsemax
    attention, stopwords already masked out. Prediction access is granted
    by a per-example coin with the training-endpoint probability beta."""
    if k < 0:
        raise ConfigError(f"k must be nonnegative, got {k}")
    tokens = _tokens_of(example)
    rng = _example_rng(seed, example)
    grant = bool(rng.random() < explainer.cfg.beta)
    probs, dist, _, valid = explainer.attention(
        tokens, stopword_ids, y_hat if grant else None
    )
    flat = np.zeros(len(tokens))
    flat[valid] = dist.probs
    candidates = [p for p in valid if flat[p] > 0.0]
    candidates.sort(key=lambda p: (-flat[p], p))
    return _mk_message(tokens, candidates[:k], k, example)


def joint_dev_csr(explainer, layperson, instances, stopword_ids, k: int) -> float:
    if not instances:
        return 0.0
    hits = 0
    for i, inst in enumerate(instances):
        msg = extract_joint_message(
            explainer,
            _FakeId(f"dev-{i}", inst.tokens),
            k,
            inst.y_hat,
            stopword_ids,
        )
        if layperson.predict(sorted(msg.token_ids), inst.hypothesis) == inst.y_hat:
            hits += 1
    return hits / len(instances)


class _FakeId:
    """Minimal example stand-in so message extraction can seed per-item."""

    def __init__(self, example_id: str, tokens: list[int]):
        self.example_id = example_id
        self.tokens = tokens

    def __repr__(self):
        return self.example_id


def joint_bundle(
    explainer: JointExplainer,
    train_cfg: TrainConfig,
    vocab: Vocabulary,
    dev_csr: float,
) -> CheckpointBundle:
    return CheckpointBundle(
        explainer.snapshot(),
        {"kind": "joint", "model": asdict(explainer.cfg), "train": asdict(train_cfg)},
        vocab.fingerprint,
        {"name": "csr", "value": dev_csr},
    )


def restore_joint(bundle: CheckpointBundle, vocab: Vocabulary) -> JointExplainer:
    if bundle.vocab_fingerprint != vocab.fingerprint:
        raise FingerprintMismatchError(
            "joint checkpoint was built against a different vocabulary "
            f"(expected {bundle.vocab_fingerprint[:12]}..., "
            f"got {vocab.fingerprint[:12]}...)"
        )
    explainer = JointExplainer(JointConfig(**bundle.config["model"]))
    explainer.load_tensors(bundle.tensors)
    return explainer


@dataclass
class ExplainerConfig:
    kind: str
    k: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown explainer kind {self.kind!r}")
        if self.kind in K_REQUIRED and self.k is None:
            raise ConfigError(f"explainer {self.kind!r} requires k")
        if self.kind == "selective_attention" and self.k is not None:
            raise ConfigError(
                "selective explanation has an emergent length; k is not accepted"
            )


def make_explainer(
    cfg: ExplainerConfig,
    classifier: AttentionClassifier | None = None,
    vocab: Vocabulary | None = None,
    joint: JointExplainer | None = None,
):
    """Bind an ExplainerConfig to its dependencies, returning a callable
    example -> Message. Joint explanation also needs the classifier (for
    the prediction being explained)."""
    stop_ids = frozenset()
    if vocab is not None:
        stop_ids = frozenset(np.flatnonzero(stopword_mask(vocab)).tolist())
    if cfg.kind == "random":
        return lambda ex: explain_random(ex, cfg.k, cfg.seed)
    if cfg.kind == "human_highlights":
        return explain_human_highlights
    if cfg.kind == "joint":
        if joint is None or classifier is None:
            raise ConfigError("joint explanation needs a trained explainer and classifier")
        return lambda ex: extract_joint_message(
            joint, ex, cfg.k, classifier.forward(ex).label, stop_ids, cfg.seed
        )
    if classifier is None:
        raise ConfigError(f"explainer {cfg.kind!r} needs a classifier")
    if cfg.kind == "erasure":
        return lambda ex: explain_erasure(classifier, ex, cfg.k)
    if cfg.kind == "topk_gradient":
        return lambda ex: explain_topk_gradient(classifier, ex, cfg.k)
    if cfg.kind == "topk_attention":
        return lambda ex: explain_topk_attention(classifier, ex, cfg.k, stop_ids)
    return lambda ex: explain_selective(classifier, ex, stop_ids)


def dump_messages(
    path: str,
    examples: list[Example],
    messages: list[Message],
    y_hats: list[int],
    explainer_name: str,
    vocab: Vocabulary,
) -> None:
    """JSON-lines dump, one record per example, consumed by the evaluation
    metrics and the annotation service."""
    if not (len(examples) == len(messages) == len(y_hats)):
        raise ContractError("examples, messages, and predictions must align")
    with open(path, "w", encoding="utf-8") as f:
        for ex, msg, y_hat in zip(examples, messages, y_hats):
            record = {
                "example_id": ex.example_id,
                "explainer": explainer_name,
                "k": msg.k_requested,
                "message_tokens": sorted(vocab.decode(sorted(msg.token_ids))),
                "y_hat": int(y_hat),
                "y": int(ex.gold_label),
            }
            if ex.hypothesis_words is not None:
                record["hypothesis"] = ex.hypothesis_words
            f.write(json.dumps(record) + "\n")


def load_messages(path: str) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}: line {lineno}: invalid JSON") from exc
    return records
