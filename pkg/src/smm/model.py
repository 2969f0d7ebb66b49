"""The differentiable answer model.

Two operand embeddings are scaled by operator-conditioned sigmoid gates,
concatenated with the operator embedding, passed through one tanh hidden layer
and a softmax head over the answers 1..10. Gradients are derived by hand;
``gradient_check`` verifies them against central finite differences computed
in extended precision by an independent batched implementation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from smm import kernels
from smm.errors import ConfigError, InputError, TrainingError

VOCAB_SIZE = 10
PROB_FLOOR = 1e-12
LN_VOCAB = math.log(VOCAB_SIZE)

PARAM_NAMES = ("num_embed", "op_embed", "gate_w", "gate_b", "w1", "b1", "w2", "b2")


class Op(IntEnum):
    COUNT_UP = 0
    ADD = 1

    @property
    def symbol(self) -> str:
        return ">" if self is Op.COUNT_UP else "+"


class TokenVocab:
    """Number tokens 1..10 and the two operator tokens."""

    number_tokens = tuple(range(1, VOCAB_SIZE + 1))
    operator_tokens = (Op.COUNT_UP, Op.ADD)

    @staticmethod
    def number_index(token: int) -> int:
        if not (isinstance(token, (int, np.integer)) and 1 <= token <= VOCAB_SIZE):
            raise InputError(f"number token {token!r} not in 1..{VOCAB_SIZE}")
        return int(token) - 1

    @staticmethod
    def number_token(index: int) -> int:
        if not 0 <= index < VOCAB_SIZE:
            raise InputError(f"index {index!r} not in 0..{VOCAB_SIZE - 1}")
        return index + 1

    @staticmethod
    def op_index(op) -> int:
        try:
            return int(Op(op))
        except ValueError:
            raise InputError(f"operator {op!r} not in vocabulary") from None


@dataclass
class ModelParams:
    num_embed: np.ndarray  # (10, d)
    op_embed: np.ndarray  # (2, d)
    gate_w: np.ndarray  # (2d, d)
    gate_b: np.ndarray  # (2d,)
    w1: np.ndarray  # (H, 3d)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (10, H)
    b2: np.ndarray  # (10,)

    @property
    def d(self) -> int:
        return self.num_embed.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    def arrays(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, n) for n in PARAM_NAMES)

    def copy(self) -> ModelParams:
        return ModelParams(*(a.copy() for a in self.arrays()))

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    @classmethod
    def zeros(cls, d: int, H: int) -> ModelParams:
        return cls(**{n: np.zeros(s) for n, s in _shapes(d, H).items()})


@dataclass
class Gradients:
    num_embed: np.ndarray
    op_embed: np.ndarray
    gate_w: np.ndarray
    gate_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def arrays(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, n) for n in PARAM_NAMES)

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


@dataclass(frozen=True)
class AnswerDistribution:
    """Probabilities over answer tokens 1..10 (index 0 holds answer 1)."""

    probs: np.ndarray

    def __getitem__(self, token: int) -> float:
        return float(self.probs[TokenVocab.number_index(token)])

    def argmax(self) -> int:
        # np.argmax returns the first maximum, i.e. the smallest token on ties
        return int(np.argmax(self.probs)) + 1

    @classmethod
    def uniform(cls) -> AnswerDistribution:
        return cls(np.full(VOCAB_SIZE, 1.0 / VOCAB_SIZE))

    @classmethod
    def one_hot(cls, token: int) -> AnswerDistribution:
        p = np.zeros(VOCAB_SIZE)
        p[TokenVocab.number_index(token)] = 1.0
        return cls(p)


@dataclass
class ForwardTrace:
    ia: int
    ib: int
    iop: int
    gate: np.ndarray
    x: np.ndarray
    z: np.ndarray
    h: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def _shapes(d: int, H: int) -> dict[str, tuple[int, ...]]:
    return {
        "num_embed": (VOCAB_SIZE, d),
        "op_embed": (2, d),
        "gate_w": (2 * d, d),
        "gate_b": (2 * d,),
        "w1": (H, 3 * d),
        "b1": (H,),
        "w2": (VOCAB_SIZE, H),
        "b2": (VOCAB_SIZE,),
    }


def init_params(seed: int, d: int = 16, H: int = 32) -> ModelParams:
    """Uniform +-sqrt(1/fan_in) weights, zero biases.

    Embedding tables count their vocabulary size as fan-in (they act on a
    one-hot input).
    """
    if not isinstance(d, (int, np.integer)) or d < 2:
        raise ConfigError("d", f"embedding width must be an integer >= 2, got {d!r}")
    if not isinstance(H, (int, np.integer)) or H < 2:
        raise ConfigError("hidden", f"hidden width must be an integer >= 2, got {H!r}")
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in _shapes(d, H).items():
        if len(shape) == 1:
            arrays[name] = np.zeros(shape)
        else:
            fan_in = shape[0] if name in ("num_embed", "op_embed") else shape[1]
            s = math.sqrt(1.0 / fan_in)
            arrays[name] = rng.uniform(-s, s, size=shape)
    return ModelParams(**arrays)


def _indices(problem) -> tuple[int, int, int]:
    return (TokenVocab.number_index(problem.a), TokenVocab.number_index(problem.b),
            TokenVocab.op_index(problem.op))


def forward(params: ModelParams, problem) -> tuple[AnswerDistribution, ForwardTrace]:
    ia, ib, iop = _indices(problem)
    gate, x, z, h, logits, p = kernels.forward(*params.arrays(), ia, ib, iop)
    return AnswerDistribution(p), ForwardTrace(ia, ib, iop, gate, x, z, h, logits, p)


def answer_probs(params: ModelParams, problem) -> np.ndarray:
    """Probabilities only; skips building the trace."""
    return kernels.probs(*params.arrays(), *_indices(problem))


def _check_target(target: int) -> int:
    try:
        return TokenVocab.number_index(target)
    except InputError:
        raise InputError(f"target {target!r} not in 1..{VOCAB_SIZE}") from None


def cross_entropy(dist: AnswerDistribution, target: int) -> float:
    it = _check_target(target)
    return -math.log(max(float(dist.probs[it]), PROB_FLOOR))


def backward(params: ModelParams, trace: ForwardTrace, target: int) -> Gradients:
    it = _check_target(target)
    d_ea, d_eb, d_eop, d_gw, d_gb, d_w1, d_b1, d_w2, d_b2 = kernels.backward(
        params.num_embed, params.op_embed, params.gate_w, params.w1, params.w2,
        trace.ia, trace.ib, trace.iop, trace.gate, trace.x, trace.h, trace.probs, it)
    d_ne = np.zeros_like(params.num_embed)
    d_ne[trace.ia] += d_ea
    d_ne[trace.ib] += d_eb
    d_oe = np.zeros_like(params.op_embed)
    d_oe[trace.iop] = d_eop
    return Gradients(d_ne, d_oe, d_gw, d_gb, d_w1, d_b1, d_w2, d_b2)


def sgd_step(params: ModelParams, grads: Gradients, lr: float,
             step: int | None = None, problem=None) -> ModelParams:
    if not lr >= 0:
        raise ConfigError("lr", f"learning rate must be non-negative, got {lr!r}")
    if not grads.all_finite():
        raise TrainingError(f"non-finite gradient at step {step} on problem {problem}")
    return ModelParams(*(p - lr * g for p, g in zip(params.arrays(), grads.arrays())))


def train_in_place(params: ModelParams, problem, target: int, lr: float) -> float:
    """One fused forward/backward/SGD step on ``params``; returns the pre-update loss."""
    ia, ib, iop = _indices(problem)
    return kernels.train_step(*params.arrays(), ia, ib, iop, _check_target(target), lr)


def entropy_confidence(dist: AnswerDistribution | np.ndarray) -> float:
    """1 minus the Shannon entropy normalised by ln(10)."""
    p = dist.probs if isinstance(dist, AnswerDistribution) else np.asarray(dist)
    nz = p[p > 0]
    h = float(-(nz * np.log(nz)).sum())
    return min(1.0, max(0.0, 1.0 - h / LN_VOCAB))


# -- finite-difference oracle -------------------------------------------------

def _batched_loss(arrays: dict[str, np.ndarray], ia: int, ib: int, iop: int,
                  it: int) -> np.ndarray:
    """Loss for a batch of parameter sets.

    Each array is either its plain shape or carries one leading batch axis.
    Written independently of the kernels, in whatever dtype the arrays carry.
    """
    def mv(w, v):
        return np.einsum("...ij,...j->...i", w, v)

    ne, oe = arrays["num_embed"], arrays["op_embed"]
    d = ne.shape[-1]
    e_a, e_b, e_op = ne[..., ia, :], ne[..., ib, :], oe[..., iop, :]
    u = mv(arrays["gate_w"], e_op) + arrays["gate_b"]
    g = 1 / (1 + np.exp(-u))
    g_a, g_b = g[..., :d], g[..., d:]
    batch = np.broadcast_shapes(e_a.shape, g_a.shape, e_op.shape, e_b.shape)
    x = np.concatenate([np.broadcast_to(g_a * e_a, batch), np.broadcast_to(g_b * e_b, batch),
                        np.broadcast_to(e_op, batch)], axis=-1)
    h = np.tanh(mv(arrays["w1"], x) + arrays["b1"])
    logits = mv(arrays["w2"], h) + arrays["b2"]
    m = logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(logits - m).sum(axis=-1)) + m[..., 0]
    return log_z - logits[..., it]


def sample_entries(size: int, max_entries: int | None) -> np.ndarray:
    """Evenly spaced flat indices; all of them when ``max_entries`` is None or large enough."""
    if max_entries is None or size <= max_entries:
        return np.arange(size)
    return np.unique(np.linspace(0, size - 1, max_entries).round().astype(np.int64))


def finite_difference_gradients(params: ModelParams, problem, target: int, eps: float,
                                max_per_group: int | None = None,
                                dtype=np.longdouble) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Central differences, as ``{name: (flat_indices, values)}``."""
    ia, ib, iop = _indices(problem)
    it = _check_target(target)
    base = {n: a.astype(dtype) for n, a in zip(PARAM_NAMES, params.arrays())}
    eps_t = dtype(eps)
    out = {}
    for name in PARAM_NAMES:
        a = base[name]
        idx = sample_entries(a.size, max_per_group)
        k = idx.size
        batch = np.broadcast_to(a, (k,) + a.shape).copy()
        flat = batch.reshape(k, a.size)
        rows = np.arange(k)
        flat[rows, idx] += eps_t
        plus = _batched_loss({**base, name: batch}, ia, ib, iop, it)
        flat[rows, idx] -= 2 * eps_t
        minus = _batched_loss({**base, name: batch}, ia, ib, iop, it)
        out[name] = (idx, ((plus - minus) / (2 * eps_t)).astype(np.float64))
    return out


def gradient_check(params: ModelParams, problem, target: int, eps: float = 1e-5,
                   max_per_group: int | None = 256, report: bool = False):
    """Max relative error between analytic and central-difference gradients.

    Up to ``max_per_group`` evenly spaced entries of each parameter are checked
    (every entry when None). With ``report=True`` also returns the
    per-parameter maxima.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ConfigError("eps", f"perturbation must lie in [1e-6, 1e-3], got {eps!r}")
    _, trace = forward(params, problem)
    analytic = backward(params, trace, target)
    numeric = finite_difference_gradients(params, problem, target, eps, max_per_group)
    per = {}
    for name in PARAM_NAMES:
        idx, n = numeric[name]
        a = getattr(analytic, name).reshape(-1)[idx]
        rel = np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))
        per[name] = float(rel.max())
    worst = max(per.values())
    return (worst, per) if report else worst
