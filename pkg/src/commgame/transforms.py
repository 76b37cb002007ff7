"""Softmax, sparsemax, and alpha-entmax maps onto the probability simplex,
their Tsallis entropies, and analytic Jacobian-vector products.

All three transforms share the signature scores -> Distribution. Masked
positions behave as score -inf: they get probability exactly zero and
never enter the support.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, InputError

Array = np.ndarray

# Bisection entries below this are snapped to exact zero so support sets
# stay well-defined.
SUPPORT_CLAMP = 1e-12


@dataclass(frozen=True)
class ScoreVector:
    """Raw attention scores with a validity mask (True = usable position)."""

    scores: Array
    mask: Array

    def __post_init__(self):
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=np.float64))
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))
        if self.scores.ndim != 1 or self.mask.shape != self.scores.shape:
            raise ContractError(
                f"scores and mask must be matching 1-d vectors, got "
                f"{self.scores.shape} and {self.mask.shape}"
            )


@dataclass(frozen=True)
class Distribution:
    """Probability vector plus its support (indices with probs > 0)."""

    probs: Array
    support: Array

    def __post_init__(self):
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=np.float64))
        object.__setattr__(self, "support", np.asarray(self.support, dtype=np.int64))


def _finish(probs: Array) -> Distribution:
    return Distribution(probs, np.flatnonzero(probs > 0.0))


def _as_scores(s) -> ScoreVector:
    if isinstance(s, ScoreVector):
        return s
    arr = np.asarray(s, dtype=np.float64)
    return ScoreVector(arr, np.ones(arr.shape, dtype=bool))


def _unmasked(s: ScoreVector) -> tuple[Array, Array]:
    idx = np.flatnonzero(s.mask)
    if idx.size == 0:
        raise InputError("all positions are masked; nothing to normalize")
    return s.scores[idx], idx


def _single_position(sv: ScoreVector, idx: Array) -> Distribution | None:
    # any simplex map over one position is exactly [1.0]
    if idx.size != 1:
        return None
    probs = np.zeros(sv.scores.shape)
    probs[idx] = 1.0
    return _finish(probs)


def softmax(s) -> Distribution:
    """Dense exponential normalization over the unmasked positions."""
    sv = _as_scores(s)
    z, idx = _unmasked(sv)
    single = _single_position(sv, idx)
    if single is not None:
        return single
    e = np.exp(z - z.max())
    probs = np.zeros(sv.scores.shape)
    probs[idx] = e / e.sum()
    return _finish(probs)


def _sparsemax_vec(z: Array) -> Array:
    # Exact Euclidean projection onto the simplex via the sort formulation.
    zs = np.sort(z)[::-1]
    cumsum = np.cumsum(zs)
    ks = np.arange(1, z.size + 1)
    feasible = 1.0 + ks * zs > cumsum
    k_star = ks[feasible][-1]
    tau = (cumsum[k_star - 1] - 1.0) / k_star
    return np.maximum(z - tau, 0.0)


def sparsemax(s) -> Distribution:
    """Euclidean projection of the scores onto the probability simplex."""
    sv = _as_scores(s)
    z, idx = _unmasked(sv)
    single = _single_position(sv, idx)
    if single is not None:
        return single
    probs = np.zeros(sv.scores.shape)
    probs[idx] = _sparsemax_vec(z)
    return _finish(probs)


def _entmax_bisect_vec(z: Array, alpha: float) -> Array:
    # Threshold form of the entmax optimality condition:
    # p_i = [(alpha-1) z_i - tau]_+ ^ (1/(alpha-1)), tau set so sum(p) = 1.
    b = (alpha - 1.0) * z
    expo = 1.0 / (alpha - 1.0)
    lo = b.min() - 1.0
    hi = b.max()
    p = np.zeros_like(b)
    with np.errstate(over="ignore"):
        for _ in range(100):
            tau = 0.5 * (lo + hi)
            p = np.maximum(b - tau, 0.0) ** expo
            total = p.sum()
            if abs(total - 1.0) <= 1e-12:
                break
            if total > 1.0:
                lo = tau
            else:
                hi = tau
    p[p < SUPPORT_CLAMP] = 0.0
    return p


def entmax(s, alpha: float) -> Distribution:
    """The alpha-family of simplex maps: 1 is softmax, 2 is sparsemax,
    values in between interpolate sparsity; solved by bisection otherwise."""
    if alpha < 1.0:
        raise ConfigError(f"entmax alpha must be >= 1, got {alpha}")
    if alpha == 1.0:
        return softmax(s)
    if alpha == 2.0:
        return sparsemax(s)
    sv = _as_scores(s)
    z, idx = _unmasked(sv)
    single = _single_position(sv, idx)
    if single is not None:
        return single
    probs = np.zeros(sv.scores.shape)
    probs[idx] = _entmax_bisect_vec(z, alpha)
    return _finish(probs)


def tsallis_entropy(p, alpha: float) -> float:
    """Generalized entropy of a probability vector; alpha=1 is Shannon
    entropy in nats, alpha=2 is the Gini index."""
    probs = p.probs if isinstance(p, Distribution) else np.asarray(p, dtype=np.float64)
    if alpha < 1.0:
        raise ConfigError(f"entropy alpha must be >= 1, got {alpha}")
    if alpha == 1.0:
        pos = probs[probs > 0.0]
        return float(-(pos * np.log(pos)).sum())
    return float((probs - probs**alpha).sum() / (alpha * (alpha - 1.0)))


def softmax_jvp(p: Distribution, v) -> Array:
    """J_softmax(v) = p (.) v - p * (p . v)."""
    v = np.asarray(v, dtype=np.float64)
    pv = p.probs * v
    return pv - p.probs * pv.sum()


def sparsemax_jvp(p: Distribution, v) -> Array:
    """Jacobian-vector product of sparsemax at a point with support S:
    centers v over S and zeros everything off S."""
    if p.support.size == 0:
        raise ContractError("sparsemax Jacobian needs a nonempty support")
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros_like(v)
    vs = v[p.support]
    out[p.support] = vs - vs.mean()
    return out


def entmax_jvp(p: Distribution, v, alpha: float) -> Array:
    """Jacobian-vector product of entmax for alpha > 1: with weights
    g_i = p_i^(2-alpha) on the support, returns g(.)v - (sum(gv)/sum(g)) g."""
    if alpha <= 1.0:
        raise ConfigError(f"entmax Jacobian needs alpha > 1, got {alpha}")
    if p.support.size == 0:
        raise ContractError("entmax Jacobian needs a nonempty support")
    v = np.asarray(v, dtype=np.float64)
    g = np.zeros_like(v)
    g[p.support] = p.probs[p.support] ** (2.0 - alpha)
    gv = g * v
    return gv - (gv.sum() / g.sum()) * g


def attention_transform(s, kind: str, alpha: float = 1.5) -> Distribution:
    """Dispatch by head name: 'softmax', 'sparsemax', or 'entmax'."""
    if kind == "softmax":
        return softmax(s)
    if kind == "sparsemax":
        return sparsemax(s)
    if kind == "entmax":
        return entmax(s, alpha)
    raise ConfigError(f"unknown attention transform {kind!r}")


def attention_jvp(p: Distribution, v, kind: str, alpha: float = 1.5) -> Array:
    if kind == "softmax":
        return softmax_jvp(p, v)
    if kind == "sparsemax":
        return sparsemax_jvp(p, v)
    if kind == "entmax":
        return entmax_jvp(p, v, alpha)
    raise ConfigError(f"unknown attention transform {kind!r}")
