"""Run configuration: a flat JSON object with strict key checking."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from smm.curriculum import CurriculumSchedule, Problem
from smm.errors import ConfigError, InputError
from smm.strategies import SELECTION_MODES, StrategyStats


@dataclass(frozen=True)
class RunConfig:
    seed: int = 1
    total_steps: int = 50_000
    d: int = 16
    hidden: int = 32
    lr: float = 0.025
    # curriculum
    mu0: float = 2.0
    mu1: float = 10.0
    sigma: float = 3.0
    ramp_steps: int = 30_000
    add_onset: int = 10_000
    p_add: float = 0.5
    # strategies
    theta_add: float = 0.85
    theta_count: float = 0.85
    beta: float = 0.05
    w_floor: float = 0.05
    w_init_retrieval_add: float = 0.5
    w_init_finger: float = 0.5
    w_init_retrieval_count: float = 0.5
    selection: str = "trust"
    # telemetry
    probes: tuple[str, ...] = ("3+4",)
    snapshot_every: int = 10
    window: int = 500
    out_dir: str = "runs/default"

    def __post_init__(self):
        object.__setattr__(self, "probes", tuple(self.probes))
        _require_int(self, "seed", lo=0)
        _require_int(self, "total_steps", lo=1)
        _require_int(self, "d", lo=2)
        _require_int(self, "hidden", lo=2)
        _require_int(self, "window", lo=1)
        _require_int(self, "snapshot_every", lo=1)
        _require_int(self, "ramp_steps", lo=1)
        _require_int(self, "add_onset", lo=0)
        if not (isinstance(self.lr, (int, float)) and self.lr > 0):
            raise ConfigError("lr", f"must be > 0, got {self.lr!r}")
        for key in ("theta_add", "theta_count"):
            v = getattr(self, key)
            if not (isinstance(v, (int, float)) and 0 <= v <= 1):
                raise ConfigError(key, f"must lie in [0, 1], got {v!r}")
        if self.selection not in SELECTION_MODES:
            raise ConfigError("selection", f"must be one of {SELECTION_MODES}, got {self.selection!r}")
        for i, text in enumerate(self.probes):
            try:
                Problem.parse(text)
            except InputError as exc:
                raise ConfigError(f"probes[{i}]", str(exc)) from None
        # delegate range checks to the component types
        self.schedule()
        self.initial_stats()

    def schedule(self) -> CurriculumSchedule:
        return CurriculumSchedule(mu0=self.mu0, mu1=self.mu1, sigma=self.sigma,
                                  ramp_steps=self.ramp_steps,
                                  add_onset=self.add_onset, p_add=self.p_add)

    def initial_stats(self) -> StrategyStats:
        return StrategyStats(w_retrieval_add=self.w_init_retrieval_add, w_finger=self.w_init_finger,
                             w_retrieval_count=self.w_init_retrieval_count,
                             beta=self.beta, w_floor=self.w_floor)

    def probe_problems(self) -> list[Problem]:
        return [Problem.parse(p) for p in self.probes]

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["probes"] = list(self.probes)
        return out

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown configuration key")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"not valid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(str(path), "top level must be a JSON object")
        return cls.from_dict(data)


def _require_int(cfg, key: str, lo: int):
    v = getattr(cfg, key)
    if isinstance(v, bool) or not isinstance(v, int) or v < lo:
        raise ConfigError(key, f"must be an integer >= {lo}, got {v!r}")


@dataclass(frozen=True)
class SweepSpec:
    base: RunConfig = field(default_factory=RunConfig)
    onsets: tuple[int, ...] = (0, 5_000, 10_000, 20_000)
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    parallelism: int = 0  # 0 means one worker per logical core
    out_dir: str = "runs/sweep"

    def __post_init__(self):
        object.__setattr__(self, "onsets", tuple(self.onsets))
        object.__setattr__(self, "seeds", tuple(self.seeds))
        if not self.onsets:
            raise ConfigError("onsets", "at least one onset required")
        if not self.seeds:
            raise ConfigError("seeds", "at least one seed required")
        for key in ("onsets", "seeds"):
            for v in getattr(self, key):
                if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                    raise ConfigError(key, f"entries must be non-negative integers, got {v!r}")
        if isinstance(self.parallelism, bool) or not isinstance(self.parallelism, int) or self.parallelism < 0:
            raise ConfigError("parallelism", f"must be an integer >= 0, got {self.parallelism!r}")

    def run_name(self, onset: int, seed: int) -> str:
        return f"onset{onset}_seed{seed}"

    def run_configs(self) -> list[tuple[int, int, RunConfig]]:
        root = Path(self.out_dir)
        return [(onset, seed, self.base.replace(add_onset=onset, seed=seed,
                                                out_dir=str(root / self.run_name(onset, seed))))
                for onset in self.onsets for seed in self.seeds]

    def to_dict(self) -> dict:
        return {"base": self.base.to_dict(), "onsets": list(self.onsets), "seeds": list(self.seeds),
                "parallelism": self.parallelism, "out_dir": self.out_dir}

    @classmethod
    def from_dict(cls, data: dict) -> SweepSpec:
        known = {"base", "onsets", "seeds", "parallelism", "out_dir"}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown sweep key")
        data = dict(data)
        if "base" in data:
            data["base"] = RunConfig.from_dict(data["base"])
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> SweepSpec:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"not valid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(str(path), "top level must be a JSON object")
        return cls.from_dict(data)
