"""Solution generation: retrieval, finger-counting, the counting oracle, and
success statistics that drive stochastic strategy selection.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum

import numpy as np

from smm.curriculum import Problem, counting_problem, true_answer
from smm.errors import ConfigError, DomainError, InputError
from smm.model import VOCAB_SIZE, AnswerDistribution, ModelParams, Op, answer_probs, entropy_confidence

SELECTION_MODES = ("trust", "weights")


class StrategyKind(str, Enum):
    RETRIEVAL_ADD = "retrieval_add"
    FINGER_COUNT = "finger_count"
    RETRIEVAL_COUNT = "retrieval_count"
    ORACLE_COUNT = "oracle_count"


@dataclass(frozen=True)
class StrategyStats:
    w_retrieval_add: float = 0.5
    w_finger: float = 0.5
    w_retrieval_count: float = 0.5
    beta: float = 0.05
    w_floor: float = 0.05

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ConfigError("beta", f"must lie in (0, 1), got {self.beta}")
        if not 0 < self.w_floor < 0.5:
            raise ConfigError("w_floor", f"must lie in (0, 0.5), got {self.w_floor}")
        for key, name in _WEIGHT_FIELDS.items():
            w = getattr(self, name)
            if not self.w_floor <= w <= 1:
                raise ConfigError(key, f"weight {w} outside [w_floor={self.w_floor}, 1]")


# config key -> field
_WEIGHT_FIELDS = {
    "w_init_retrieval_add": "w_retrieval_add",
    "w_init_finger": "w_finger",
    "w_init_retrieval_count": "w_retrieval_count",
}

_WEIGHT_OF = {
    StrategyKind.RETRIEVAL_ADD: "w_retrieval_add",
    StrategyKind.FINGER_COUNT: "w_finger",
    StrategyKind.RETRIEVAL_COUNT: "w_retrieval_count",
}


@dataclass(frozen=True)
class TrialOutcome:
    strategy: StrategyKind
    answer: int
    confidence: float
    distribution: AnswerDistribution
    steps: int
    correct: bool


def retrieve(params: ModelParams, problem: Problem) -> tuple[int, float, AnswerDistribution]:
    dist = AnswerDistribution(answer_probs(params, problem))
    return dist.argmax(), entropy_confidence(dist), dist


def sample_token(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw of an answer token from ``probs``."""
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, VOCAB_SIZE - 1) + 1


def count_next(params: ModelParams, current: int, rng: np.random.Generator) -> int:
    if not 1 <= current <= VOCAB_SIZE - 1:
        raise InputError(f"cannot count up from {current}")
    return sample_token(answer_probs(params, counting_problem(current)), rng)


def finger_count(params: ModelParams, a: int, b: int, rng: np.random.Generator) -> tuple[int, int]:
    """Count up ``b`` steps from ``a`` using the model's own counting; slips propagate."""
    current = a
    for _ in range(b):
        current = count_next(params, min(current, VOCAB_SIZE - 1), rng)
    return current, b


def oracle_count(current: int) -> int:
    if not 1 <= current <= VOCAB_SIZE - 1:
        raise DomainError(f"no successor for {current} within 1..{VOCAB_SIZE}")
    return current + 1


def finger_probability(stats: StrategyStats, confidence: float | None = None) -> float:
    """Probability that selection picks finger-counting.

    Without ``confidence`` this is ``w_finger / (w_retrieval_add + w_finger)``.
    With it, retrieval competes with its trust ``w_retrieval_add * confidence``
    and finger-counting with ``w_finger * (1 - trust)``, so finger-counting
    fades only once retrieval is both confident and reliable.
    """
    w_r, w_f = stats.w_retrieval_add, stats.w_finger
    if confidence is not None:
        w_r = w_r * confidence
        w_f = w_f * (1.0 - w_r)
    return w_f / (w_r + w_f)


def choose_addition_strategy(stats: StrategyStats, rng: np.random.Generator,
                             confidence: float | None = None) -> StrategyKind:
    if rng.random() < 1.0 - finger_probability(stats, confidence):
        return StrategyKind.RETRIEVAL_ADD
    return StrategyKind.FINGER_COUNT


def solve_addition(params: ModelParams, stats: StrategyStats, problem: Problem, theta_add: float,
                   rng: np.random.Generator, selection: str = "trust") -> TrialOutcome:
    if problem.op is not Op.ADD:
        raise InputError(f"{problem} is not an addition problem")
    answer, conf, dist = retrieve(params, problem)
    strategy = choose_addition_strategy(stats, rng, conf if selection == "trust" else None)
    steps = 0
    if strategy is StrategyKind.RETRIEVAL_ADD and conf < theta_add:
        strategy = StrategyKind.FINGER_COUNT
    if strategy is StrategyKind.FINGER_COUNT:
        answer, steps = finger_count(params, problem.a, problem.b, rng)
    return TrialOutcome(strategy, answer, conf, dist, steps, answer == true_answer(problem))


def solve_counting(params: ModelParams, problem: Problem, theta_count: float,
                   rng: np.random.Generator | None = None) -> TrialOutcome:
    if problem.op is not Op.COUNT_UP:
        raise InputError(f"{problem} is not a counting problem")
    answer, conf, dist = retrieve(params, problem)
    if conf >= theta_count:
        strategy = StrategyKind.RETRIEVAL_COUNT
    else:
        strategy, answer = StrategyKind.ORACLE_COUNT, oracle_count(problem.b)
    return TrialOutcome(strategy, answer, conf, dist, 0, answer == true_answer(problem))


def update_stats(stats: StrategyStats, strategy: StrategyKind, correct: bool) -> StrategyStats:
    name = _WEIGHT_OF.get(strategy)
    if name is None:  # oracle trials carry no strategy evidence
        return stats
    w = (1 - stats.beta) * getattr(stats, name) + stats.beta * (1.0 if correct else 0.0)
    return dataclasses.replace(stats, **{name: min(1.0, max(stats.w_floor, w))})
