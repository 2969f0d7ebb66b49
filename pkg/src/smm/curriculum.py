"""Problem generation under a Gaussian difficulty schedule.

Addition difficulty is the target sum; counting difficulty is the current
number. Both are drawn from a Normal whose mean ramps linearly over training,
rounded half-up and clamped to the valid range.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from smm.errors import ConfigError, DomainError, InputError
from smm.model import VOCAB_SIZE, Op

MAX_ADDEND = 5


@dataclass(frozen=True)
class Problem:
    a: int
    b: int
    op: Op

    def __post_init__(self):
        object.__setattr__(self, "op", Op(self.op))
        for name in ("a", "b"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and 1 <= v <= VOCAB_SIZE):
                raise InputError(f"operand {name}={v!r} not in 1..{VOCAB_SIZE}")
            object.__setattr__(self, name, int(v))

    @property
    def is_addition(self) -> bool:
        return self.op is Op.ADD

    def __str__(self) -> str:
        return f"{self.a}{self.op.symbol}{self.b}"

    @classmethod
    def parse(cls, text: str) -> Problem:
        """Parse ``"a+b"`` (addition) or ``"a>b"`` (count up)."""
        s = text.strip()
        for sym, op in (("+", Op.ADD), (">", Op.COUNT_UP)):
            if sym in s:
                left, _, right = s.partition(sym)
                break
        else:
            raise InputError(f"no operator in {text!r}; expected 'a+b' or 'a>b'")
        operands = []
        for tok in (left.strip(), right.strip()):
            if not tok.isdigit() or not 1 <= int(tok) <= VOCAB_SIZE:
                raise InputError(f"bad operand {tok!r} in {text!r}")
            operands.append(int(tok))
        return cls(operands[0], operands[1], op)


def counting_problem(current: int) -> Problem:
    return Problem(max(current - 1, 1), current, Op.COUNT_UP)


def true_answer(problem: Problem) -> int:
    ans = problem.a + problem.b if problem.op is Op.ADD else problem.b + 1
    if ans > VOCAB_SIZE:
        raise DomainError(f"answer to {problem} exceeds {VOCAB_SIZE}")
    return ans


ADDITION_PROBLEMS = tuple(Problem(a, b, Op.ADD)
                          for a in range(1, MAX_ADDEND + 1) for b in range(1, MAX_ADDEND + 1))
COUNTING_PROBLEMS = tuple(counting_problem(b) for b in range(1, VOCAB_SIZE))


@dataclass(frozen=True)
class CurriculumSchedule:
    mu0: float = 2.0
    mu1: float = 10.0
    sigma: float = 3.0
    ramp_steps: int = 30_000
    add_onset: int = 10_000
    p_add: float = 0.5

    def __post_init__(self):
        if not self.mu0 <= self.mu1:
            raise ConfigError("mu0", f"mu0={self.mu0} must not exceed mu1={self.mu1}")
        if not self.sigma > 0:
            raise ConfigError("sigma", f"must be > 0, got {self.sigma}")
        if not 0 < self.p_add < 1:
            raise ConfigError("p_add", f"must lie in (0, 1), got {self.p_add}")
        if not self.add_onset >= 0:
            raise ConfigError("add_onset", f"must be >= 0, got {self.add_onset}")
        if not self.ramp_steps >= 1:
            raise ConfigError("ramp_steps", f"must be >= 1, got {self.ramp_steps}")


def difficulty_mean(sched: CurriculumSchedule, t: int) -> float:
    return sched.mu0 + (sched.mu1 - sched.mu0) * min(1.0, t / sched.ramp_steps)


COUNT_MU0, COUNT_MU1 = 1.0, 9.0


def counting_mean(sched: CurriculumSchedule, t: int) -> float:
    return COUNT_MU0 + (COUNT_MU1 - COUNT_MU0) * min(1.0, t / sched.ramp_steps)


def _draw_level(rng: np.random.Generator, mean: float, sigma: float, lo: int, hi: int) -> int:
    v = math.floor(rng.normal(mean, sigma) + 0.5)
    return min(hi, max(lo, v))


def pairs_with_sum(s: int) -> list[tuple[int, int]]:
    return [(a, s - a) for a in range(max(1, s - MAX_ADDEND), min(MAX_ADDEND, s - 1) + 1)]


def sample_addition(sched: CurriculumSchedule, t: int, rng: np.random.Generator) -> Problem:
    s = _draw_level(rng, difficulty_mean(sched, t), sched.sigma, 2, 2 * MAX_ADDEND)
    lo = max(1, s - MAX_ADDEND)
    a = lo + int(rng.integers(min(MAX_ADDEND, s - 1) - lo + 1))
    return Problem(a, s - a, Op.ADD)


def sample_counting(sched: CurriculumSchedule, t: int, rng: np.random.Generator) -> Problem:
    b = _draw_level(rng, counting_mean(sched, t), sched.sigma, 1, VOCAB_SIZE - 1)
    return counting_problem(b)


def sample_trial(sched: CurriculumSchedule, t: int, rng: np.random.Generator) -> Problem:
    if t >= sched.add_onset and rng.random() < sched.p_add:
        return sample_addition(sched, t, rng)
    return sample_counting(sched, t, rng)
