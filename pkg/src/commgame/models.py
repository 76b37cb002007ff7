"""Classifier and layperson models plus the shared training loop.

The classifier is a BiLSTM with additive attention whose normalizer is a
pluggable simplex transform (softmax, sparsemax, or entmax). The layperson
is a linear bag-of-words model; its NLI variant also encodes the
hypothesis with a BiLSTM and sums the two paths before the output layer.

Pad tokens are stripped before encoding and re-inserted as exact zeros in
the attention vector, so predictions do not depend on padding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .data import PAD_ID, EmbeddingTable, Example, Vocabulary
from .errors import (
    ConfigError,
    ContractError,
    FingerprintMismatchError,
    InputError,
    NumericError,
)
from .transforms import (
    Distribution,
    ScoreVector,
    attention_jvp,
    attention_transform,
)

Array = np.ndarray

TRANSFORMS = ("softmax", "sparsemax", "entmax")


def _uniform(rng: np.random.Generator, shape, scale: float) -> Array:
    return rng.uniform(-scale, scale, size=shape)


def _lstm_params(rng, prefix, in_dim, hidden, params: dict[str, ad.Node]) -> ad.LstmParams:
    scale = 1.0 / np.sqrt(hidden)
    wx = ad.leaf(_uniform(rng, (in_dim, 4 * hidden), scale), f"{prefix}.wx")
    wh = ad.leaf(_uniform(rng, (hidden, 4 * hidden), scale), f"{prefix}.wh")
    b_init = _uniform(rng, (1, 4 * hidden), scale)
    b_init[:, hidden : 2 * hidden] += 1.0  # open the forget gate at start
    b = ad.leaf(b_init, f"{prefix}.b")
    params[f"{prefix}.wx"] = wx
    params[f"{prefix}.wh"] = wh
    params[f"{prefix}.b"] = b
    return ad.LstmParams(wx, wh, b)


def attention_probs_node(
    scores: ad.Node, kind: str, alpha: float, mask: Array | None = None
) -> tuple[ad.Node, Distribution]:
    """Graph op wrapping a simplex transform of a (T, 1) score column.

    The forward result is also returned as a Distribution; the backward
    rule is the transform's Jacobian-vector product (all three Jacobians
    are symmetric, so the vjp equals the jvp).
    """
    vec = scores.value.reshape(-1)
    if mask is None:
        mask = np.ones(vec.shape, dtype=bool)
    dist = attention_transform(ScoreVector(vec, mask), kind, alpha)

    def rule(g):
        jv = attention_jvp(dist, g.reshape(-1), kind, alpha)
        return (jv.reshape(scores.value.shape),)

    return ad.Node(dist.probs.reshape(-1, 1), (scores,), rule), dist


@dataclass
class EncoderPass:
    emb: ad.Node          # (T, d) gathered embedding rows (post-erasure)
    states: ad.Node       # (T, 2h) concatenated BiLSTM states
    last_fwd: ad.Node     # (1, h)
    last_bwd: ad.Node     # (1, h)


class Encoder:
    """Embedding + BiLSTM + additive attention over the resulting states."""

    def __init__(
        self,
        prefix: str,
        vocab_size: int,
        emb_dim: int,
        hidden: int,
        attn_dim: int,
        transform: str,
        alpha: float,
        rng: np.random.Generator,
        params: dict[str, ad.Node],
        pretrained: EmbeddingTable | None = None,
        with_attention: bool = True,
    ):
        if transform not in TRANSFORMS:
            raise ConfigError(f"unknown attention transform {transform!r}")
        self.prefix = prefix
        self.hidden = hidden
        self.transform = transform
        self.alpha = alpha
        if pretrained is not None:
            if pretrained.matrix.shape[0] != vocab_size:
                raise ConfigError(
                    f"embedding table has {pretrained.matrix.shape[0]} rows, "
                    f"vocabulary has {vocab_size}"
                )
            emb_dim = pretrained.dim
            self.emb = ad.leaf(pretrained.matrix.copy(), f"{prefix}.emb")
            self.emb_frozen = True
        else:
            self.emb = ad.leaf(
                _uniform(rng, (vocab_size, emb_dim), 0.1), f"{prefix}.emb"
            )
            self.emb_frozen = False
            params[f"{prefix}.emb"] = self.emb
        self.emb_dim = emb_dim
        self.fwd = _lstm_params(rng, f"{prefix}.fwd", emb_dim, hidden, params)
        self.bwd = _lstm_params(rng, f"{prefix}.bwd", emb_dim, hidden, params)
        if with_attention:
            sa = 1.0 / np.sqrt(attn_dim)
            self.attn_w = ad.leaf(
                _uniform(rng, (2 * hidden, attn_dim), sa), f"{prefix}.attn_w"
            )
            self.attn_q = ad.leaf(_uniform(rng, (1, attn_dim), sa), f"{prefix}.attn_q")
            # zero-initialized score vector: tied scores, uniform attention
            # at construction time
            self.attn_v = ad.leaf(np.zeros((attn_dim, 1)), f"{prefix}.attn_v")
            params[f"{prefix}.attn_w"] = self.attn_w
            params[f"{prefix}.attn_q"] = self.attn_q
            params[f"{prefix}.attn_v"] = self.attn_v

    def encode(self, tokens: list[int], erased: frozenset[int] = frozenset()) -> EncoderPass:
        """Run the BiLSTM over token ids; `erased` positions keep their slot
        but contribute a zeroed embedding row."""
        t_len = len(tokens)
        vocab_rows = self.emb.value.shape[0]
        if any(t < 0 or t >= vocab_rows for t in tokens):
            raise ContractError(f"token id out of vocabulary range 0..{vocab_rows - 1}")
        emb = ad.take_rows(self.emb, tokens)
        if erased:
            keep = np.ones((t_len, 1))
            for pos in erased:
                keep[pos, 0] = 0.0
            emb = ad.mul(emb, ad.leaf(keep))
        h = self.hidden
        zeros = ad.leaf(np.zeros((1, h)))

        def run(order, cell):
            hs: list[ad.Node | None] = [None] * t_len
            h_t, c_t = zeros, zeros
            for step, i in enumerate(order):
                x_i = ad.take_rows(emb, [i])
                h_t, c_t = ad.lstm_cell(x_i, h_t, c_t, cell, step=step)
                hs[i] = h_t
            return hs, h_t

        fwd_states, last_f = run(range(t_len), self.fwd)
        bwd_states, last_b = run(range(t_len - 1, -1, -1), self.bwd)
        states = ad.concat_cols(ad.stack_rows(fwd_states), ad.stack_rows(bwd_states))
        return EncoderPass(emb, states, last_f, last_b)

    def attend(
        self,
        states: ad.Node,
        extra_query: ad.Node | None = None,
        score_mask: Array | None = None,
    ) -> tuple[ad.Node, ad.Node, Distribution, ad.Node]:
        """Additive scorer then the configured simplex transform.

        Returns (scores, probs, distribution, context)."""
        pre = ad.add(ad.matmul(states, self.attn_w), self.attn_q)
        if extra_query is not None:
            pre = ad.add(pre, extra_query)
        scores = ad.matmul(ad.tanh(pre), self.attn_v)  # (T, 1)
        probs, dist = attention_probs_node(scores, self.transform, self.alpha, score_mask)
        context = ad.matmul(ad.transpose(probs), states)  # (1, 2h)
        return scores, probs, dist, context


@dataclass
class ModelConfig:
    vocab_size: int
    n_classes: int
    task: str = "textclf"  # or "nli"
    transform: str = "softmax"
    alpha: float = 1.5
    emb_dim: int = 64
    hidden: int = 128
    attn_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.task not in ("textclf", "nli"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"unknown attention transform {self.transform!r}")
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")


@dataclass
class ForwardPass:
    logits: ad.Node
    attention: Distribution   # over the original (padded) positions
    states: ad.Node           # (T_valid, 2h)
    context: ad.Node
    emb: ad.Node              # (T_valid, emb_dim)
    valid_positions: list[int]
    label: int


@dataclass
class ClassifyResult:
    label: int
    attention: Distribution
    states: Array
    context: Array
    logits: Array


class AttentionClassifier:
    """BiLSTM classifier whose prediction is an argmax over logits computed
    from the attention-weighted context vector."""

    def __init__(self, cfg: ModelConfig, pretrained: EmbeddingTable | None = None):
        self.cfg = cfg
        self.params: dict[str, ad.Node] = {}
        rng = np.random.default_rng(cfg.seed)
        self.encoder = Encoder(
            "enc",
            cfg.vocab_size,
            cfg.emb_dim,
            cfg.hidden,
            cfg.attn_dim,
            cfg.transform,
            cfg.alpha,
            rng,
            self.params,
            pretrained=pretrained,
        )
        if cfg.task == "nli":
            self.hyp_encoder = Encoder(
                "hyp",
                cfg.vocab_size,
                cfg.emb_dim,
                cfg.hidden,
                cfg.attn_dim,
                cfg.transform,
                cfg.alpha,
                rng,
                self.params,
                pretrained=pretrained,
                with_attention=False,
            )
            sq = 1.0 / np.sqrt(cfg.attn_dim)
            self.query_w = ad.leaf(
                _uniform(rng, (2 * cfg.hidden, cfg.attn_dim), sq), "query_w"
            )
            self.params["query_w"] = self.query_w
        else:
            self.hyp_encoder = None
            self.query_w = None
        so = 1.0 / np.sqrt(2 * cfg.hidden)
        self.out_w = ad.leaf(_uniform(rng, (2 * cfg.hidden, cfg.n_classes), so), "out_w")
        self.out_b = ad.leaf(np.zeros((1, cfg.n_classes)), "out_b")
        self.params["out_w"] = self.out_w
        self.params["out_b"] = self.out_b

    def _split_valid(self, tokens: list[int]) -> list[int]:
        valid = [i for i, t in enumerate(tokens) if t != PAD_ID]
        if not valid:
            raise InputError("empty token sequence (all positions are pad)")
        return valid

    def forward(
        self,
        example: Example | list[int],
        hypothesis: list[int] | None = None,
        erased: frozenset[int] = frozenset(),
        score_mask: Array | None = None,
    ) -> ForwardPass:
        """Build the computation graph for one example.

        `erased` holds original positions whose embedding is zeroed.
        `score_mask` (over original positions, True = keep) masks attention
        scores before the transform; masked positions get probability 0.
        """
        if isinstance(example, Example):
            tokens = example.tokens
            if hypothesis is None:
                hypothesis = example.hypothesis_tokens
        else:
            tokens = list(example)
        valid = self._split_valid(tokens)
        sub_tokens = [tokens[i] for i in valid]
        sub_erased = frozenset(j for j, i in enumerate(valid) if i in erased)
        sub_mask = None
        if score_mask is not None:
            sub_mask = np.asarray([bool(score_mask[i]) for i in valid])
            if not sub_mask.any():
                raise InputError("score mask removes every non-pad position")
        enc = self.encoder.encode(sub_tokens, sub_erased)

        extra_query = None
        if self.cfg.task == "nli":
            if hypothesis is None:
                raise InputError("nli model needs hypothesis tokens")
            hyp_valid = [t for t in hypothesis if t != PAD_ID]
            if not hyp_valid:
                raise InputError("empty hypothesis token sequence")
            hyp = self.hyp_encoder.encode(hyp_valid)
            hyp_last = ad.concat_cols(hyp.last_fwd, hyp.last_bwd)  # (1, 2h)
            extra_query = ad.matmul(hyp_last, self.query_w)

        _, probs, dist, context = self.encoder.attend(
            enc.states, extra_query=extra_query, score_mask=sub_mask
        )
        logits = ad.add(ad.matmul(context, self.out_w), self.out_b)

        full = np.zeros(len(tokens))
        full[valid] = dist.probs
        attention = Distribution(full, np.flatnonzero(full > 0.0))
        label = int(np.argmax(logits.value))
        return ForwardPass(logits, attention, enc.states, context, enc.emb, valid, label)

    def classify(self, example: Example | list[int], hypothesis=None) -> ClassifyResult:
        fp = self.forward(example, hypothesis)
        return ClassifyResult(
            fp.label,
            fp.attention,
            fp.states.value.copy(),
            fp.context.value.copy(),
            fp.logits.value.copy(),
        )

    def loss(self, example: Example) -> ad.Node:
        fp = self.forward(example)
        return ad.cross_entropy_logits(fp.logits, example.gold_label)

    def snapshot(self) -> dict[str, Array]:
        tensors = {name: node.value.copy() for name, node in self.params.items()}
        if self.encoder.emb_frozen:
            tensors["enc.emb"] = self.encoder.emb.value.copy()
            if self.hyp_encoder is not None:
                tensors["hyp.emb"] = self.hyp_encoder.emb.value.copy()
        return tensors

    def load_tensors(self, tensors: dict[str, Array]) -> None:
        for name, node in self.params.items():
            if node.value.shape != tensors[name].shape:
                raise ContractError(f"checkpoint tensor {name} has wrong shape")
            node.value = tensors[name].copy()
        if self.encoder.emb_frozen and "enc.emb" in tensors:
            self.encoder.emb.value = tensors["enc.emb"].copy()
            if self.hyp_encoder is not None and "hyp.emb" in tensors:
                self.hyp_encoder.emb.value = tensors["hyp.emb"].copy()


@dataclass
class LaypersonConfig:
    vocab_size: int
    n_classes: int
    task: str = "textclf"
    emb_dim: int = 32
    hidden: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.task not in ("textclf", "nli"):
            raise ConfigError(f"unknown task {self.task!r}")


class BowLayperson:
    """Order-free linear reader of messages.

    textclf: logits are the sum of per-token weight rows; an empty message
    yields all-zero logits and therefore class 0 under lowest-index
    tie-breaking (there is deliberately no bias term).

    nli: the message-bag projection is summed with the last state of a
    hypothesis BiLSTM before the output layer; an empty message reduces to
    a hypothesis-only prediction.
    """

    def __init__(self, cfg: LaypersonConfig):
        self.cfg = cfg
        self.params: dict[str, ad.Node] = {}
        rng = np.random.default_rng(cfg.seed)
        if cfg.task == "textclf":
            self.w = ad.leaf(np.zeros((cfg.vocab_size, cfg.n_classes)), "w")
            self.params["w"] = self.w
            self.hyp_encoder = None
        else:
            g = 2 * cfg.hidden
            self.msg_w = ad.leaf(np.zeros((cfg.vocab_size, g)), "msg_w")
            self.params["msg_w"] = self.msg_w
            self.hyp_encoder = Encoder(
                "hyp",
                cfg.vocab_size,
                cfg.emb_dim,
                cfg.hidden,
                attn_dim=1,
                transform="softmax",
                alpha=1.5,
                rng=rng,
                params=self.params,
                with_attention=False,
            )
            so = 1.0 / np.sqrt(g)
            self.out_w = ad.leaf(_uniform(rng, (g, cfg.n_classes), so), "out_w")
            self.out_b = ad.leaf(np.zeros((1, cfg.n_classes)), "out_b")
            self.params["out_w"] = self.out_w
            self.params["out_b"] = self.out_b

    def _bag(self, message_ids) -> list[int]:
        # set semantics: duplicates collapse; sorted for determinism
        return sorted({int(t) for t in message_ids if int(t) != PAD_ID})

    def forward_message(self, message_ids, hypothesis: list[int] | None = None) -> ad.Node:
        bag = self._bag(message_ids)
        if self.cfg.task == "textclf":
            if not bag:
                return ad.leaf(np.zeros((1, self.cfg.n_classes)))
            rows = ad.take_rows(self.w, bag)
            return ad.matmul(ad.leaf(np.ones((1, len(bag)))), rows)
        if hypothesis is None:
            raise InputError("nli layperson needs hypothesis tokens")
        hyp_valid = [t for t in hypothesis if t != PAD_ID]
        if not hyp_valid:
            raise InputError("empty hypothesis token sequence")
        hyp = self.hyp_encoder.encode(hyp_valid)
        z = ad.concat_cols(hyp.last_fwd, hyp.last_bwd)
        if bag:
            rows = ad.take_rows(self.msg_w, bag)
            u = ad.matmul(ad.leaf(np.ones((1, len(bag)))), rows)
            z = ad.add(z, u)
        return ad.add(ad.matmul(z, self.out_w), self.out_b)

    def forward_soft(
        self,
        probs: ad.Node,
        token_ids: list[int],
        hypothesis: list[int] | None = None,
    ) -> ad.Node:
        """Probability-weighted bag for training through an attention map:
        every position contributes its weight row scaled by its attention."""
        if self.cfg.task == "textclf":
            rows = ad.take_rows(self.w, token_ids)
            return ad.matmul(ad.transpose(probs), rows)
        if hypothesis is None:
            raise InputError("nli layperson needs hypothesis tokens")
        hyp = self.hyp_encoder.encode([t for t in hypothesis if t != PAD_ID])
        z = ad.concat_cols(hyp.last_fwd, hyp.last_bwd)
        rows = ad.take_rows(self.msg_w, token_ids)
        u = ad.matmul(ad.transpose(probs), rows)
        return ad.add(ad.matmul(ad.add(z, u), self.out_w), self.out_b)

    def predict(self, message_ids, hypothesis: list[int] | None = None) -> int:
        return int(np.argmax(self.forward_message(message_ids, hypothesis).value))

    def snapshot(self) -> dict[str, Array]:
        return {name: node.value.copy() for name, node in self.params.items()}

    def load_tensors(self, tensors: dict[str, Array]) -> None:
        for name, node in self.params.items():
            node.value = tensors[name].copy()


@dataclass
class TrainConfig:
    epochs: int
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 16
    patience: int | None = None
    seed: int = 0
    dev_metric: str = "accuracy"

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.patience is None:
            self.patience = self.epochs
        if self.patience > self.epochs:
            raise ConfigError(
                f"patience {self.patience} exceeds epochs {self.epochs}"
            )


@dataclass
class CheckpointBundle:
    """Everything needed to reload a model: raw tensors, the configs that
    shaped them, the vocabulary fingerprint they were trained against, and
    the dev metric the checkpoint achieved."""

    tensors: dict[str, Array]
    config: dict
    vocab_fingerprint: str
    dev_metric: dict

    def save(self, path: str) -> None:
        ad.save_tensor_blob(
            path,
            self.tensors,
            {
                "config": self.config,
                "vocab_fingerprint": self.vocab_fingerprint,
                "dev_metric": self.dev_metric,
            },
        )

    @classmethod
    def load(cls, path: str) -> "CheckpointBundle":
        tensors, manifest = ad.load_tensor_blob(path)
        return cls(
            tensors,
            manifest["config"],
            manifest["vocab_fingerprint"],
            manifest["dev_metric"],
        )


def _train_generic(params, examples, loss_fn, dev_fn, cfg: TrainConfig, snapshot, restore):
    """Shared mini-batch loop: AdamW updates, per-epoch dev evaluation,
    early stopping on `patience` stale epochs, best-dev weights returned."""
    state = ad.AdamWState()
    rng = np.random.default_rng(cfg.seed)
    log: list[dict] = []
    best_metric = -np.inf
    best_tensors = snapshot()
    stale = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(examples))
        step = 0
        for start in range(0, len(examples), cfg.batch_size):
            batch = [examples[i] for i in order[start : start + cfg.batch_size]]
            acc_grads: dict[str, Array] = {}
            batch_loss = 0.0
            try:
                for ex in batch:
                    loss = loss_fn(ex)
                    batch_loss += loss.value.item()
                    for name, g in ad.grads_for(loss, params).items():
                        if name in acc_grads:
                            acc_grads[name] += g
                        else:
                            acc_grads[name] = g.copy()
            except NumericError as exc:
                raise NumericError(
                    f"training diverged at epoch {epoch} step {step}: {exc}"
                ) from exc
            if not np.isfinite(batch_loss):
                raise NumericError(
                    f"training diverged: non-finite loss at epoch {epoch} step {step}"
                )
            for name in acc_grads:
                acc_grads[name] /= len(batch)
            ad.adamw_step(
                params, acc_grads, state, lr=cfg.lr, weight_decay=cfg.weight_decay
            )
            step += 1
        value = dev_fn()
        log.append(
            {"epoch": epoch, "split": "dev", "metric": cfg.dev_metric, "value": value}
        )
        if value > best_metric:
            best_metric = value
            best_tensors = snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    restore(best_tensors)
    if not np.isfinite(best_metric):  # zero-epoch run: report the initial dev value
        best_metric = dev_fn()
    return best_tensors, best_metric, log


def accuracy(model: AttentionClassifier, examples: list[Example]) -> float:
    if not examples:
        return 0.0
    hits = sum(1 for ex in examples if model.forward(ex).label == ex.gold_label)
    return hits / len(examples)


def train_classifier(
    model: AttentionClassifier,
    train_examples: list[Example],
    dev_examples: list[Example],
    cfg: TrainConfig,
    vocab: Vocabulary,
) -> tuple[CheckpointBundle, list[dict]]:
    tensors, best, log = _train_generic(
        model.params,
        train_examples,
        model.loss,
        lambda: accuracy(model, dev_examples),
        cfg,
        model.snapshot,
        model.load_tensors,
    )
    bundle = CheckpointBundle(
        tensors,
        {
            "kind": "classifier",
            "model": asdict(model.cfg),
            "train": asdict(cfg),
            "optimizer": "adamw-decoupled-decay",
            "emb_frozen": model.encoder.emb_frozen,
        },
        vocab.fingerprint,
        {"name": cfg.dev_metric, "value": best},
    )
    return bundle, log


MessagePair = tuple  # (message token ids, target label, hypothesis ids or None)


def layperson_accuracy(lay: BowLayperson, pairs: list[MessagePair]) -> float:
    if not pairs:
        return 0.0
    hits = sum(1 for msg, target, hyp in pairs if lay.predict(msg, hyp) == target)
    return hits / len(pairs)


def train_layperson(
    lay: BowLayperson,
    train_pairs: list[MessagePair],
    dev_pairs: list[MessagePair],
    cfg: TrainConfig,
    vocab: Vocabulary,
) -> tuple[CheckpointBundle, list[dict]]:
    """Fit the layperson to recover each message's target label; when the
    targets are classifier predictions the dev metric is exactly CSR."""

    def loss_fn(pair):
        msg, target, hyp = pair
        return ad.cross_entropy_logits(lay.forward_message(msg, hyp), target)

    tensors, best, log = _train_generic(
        lay.params,
        train_pairs,
        loss_fn,
        lambda: layperson_accuracy(lay, dev_pairs),
        cfg,
        lay.snapshot,
        lay.load_tensors,
    )
    bundle = CheckpointBundle(
        tensors,
        {
            "kind": "layperson",
            "model": asdict(lay.cfg),
            "train": asdict(cfg),
            "optimizer": "adamw-decoupled-decay",
        },
        vocab.fingerprint,
        {"name": cfg.dev_metric, "value": best},
    )
    return bundle, log


def restore_classifier(
    bundle: CheckpointBundle,
    vocab: Vocabulary,
    pretrained: EmbeddingTable | None = None,
) -> AttentionClassifier:
    if bundle.vocab_fingerprint != vocab.fingerprint:
        raise FingerprintMismatchError(
            "checkpoint was built against a different vocabulary "
            f"(expected {bundle.vocab_fingerprint[:12]}..., "
            f"got {vocab.fingerprint[:12]}...)"
        )
    cfg = ModelConfig(**bundle.config["model"])
    if bundle.config.get("emb_frozen") and pretrained is None:
        # rebuild the frozen table from the checkpoint itself
        pretrained = EmbeddingTable(bundle.tensors["enc.emb"].copy(), frozen=True)
    model = AttentionClassifier(cfg, pretrained=pretrained)
    model.load_tensors(bundle.tensors)
    return model


def restore_layperson(bundle: CheckpointBundle, vocab: Vocabulary) -> BowLayperson:
    if bundle.vocab_fingerprint != vocab.fingerprint:
        raise FingerprintMismatchError(
            "checkpoint was built against a different vocabulary "
            f"(expected {bundle.vocab_fingerprint[:12]}..., "
            f"got {vocab.fingerprint[:12]}...)"
        )
    lay = BowLayperson(LaypersonConfig(**bundle.config["model"]))
    lay.load_tensors(bundle.tensors)
    return lay


def write_metric_log(log: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for record in log:
            f.write(json.dumps(record) + "\n")
