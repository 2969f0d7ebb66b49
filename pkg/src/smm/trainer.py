"""The trial loop, experiment runner and checkpointing."""
from __future__ import annotations

import datetime as _dt
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from smm import __version__, kernels
from smm.config import RunConfig
from smm.curriculum import ADDITION_PROBLEMS, COUNTING_PROBLEMS, Problem, sample_trial, true_answer
from smm.errors import CheckpointError, SMMError, TrainingError
from smm.model import PARAM_NAMES, ModelParams, Op, answer_probs, init_params, train_in_place
from smm.strategies import StrategyKind, StrategyStats, solve_addition, solve_counting, update_stats
from smm.telemetry import TelemetrySink, change_point, peak, range_stats, read_trials

CHECKPOINT_SCHEMA = 1


@dataclass
class RunState:
    params: ModelParams
    stats: StrategyStats
    rng: np.random.Generator
    step: int = 0


@dataclass(frozen=True)
class TrialRecord:
    step: int
    problem: Problem
    strategy: StrategyKind
    answer: int
    truth: int
    correct: bool
    confidence: float
    target: int
    loss: float

    @property
    def is_addition(self) -> bool:
        return self.problem.op is Op.ADD

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "a": self.problem.a,
            "b": self.problem.b,
            "op": "add" if self.is_addition else "count",
            "strategy": self.strategy.value,
            "answer": self.answer,
            "truth": self.truth,
            "correct": self.correct,
            "confidence": self.confidence,
            "target": self.target,
            "loss": self.loss,
        }


def trial_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1])


def new_state(config: RunConfig) -> RunState:
    return RunState(init_params(config.seed, config.d, config.hidden), config.initial_stats(),
                    trial_rng(config.seed), 0)


def evaluate_model(params: ModelParams, task: Op) -> float:
    """Argmax retrieval accuracy over all 25 addition or all 9 counting problems."""
    problems = ADDITION_PROBLEMS if Op(task) is Op.ADD else COUNTING_PROBLEMS
    hits = sum(int(np.argmax(answer_probs(params, p))) + 1 == true_answer(p) for p in problems)
    return hits / len(problems)


def run_trial(state: RunState, config: RunConfig, sink: TelemetrySink | None = None,
              schedule=None, probes=frozenset()) -> TrialRecord:
    if state.step >= config.total_steps:
        raise SMMError(f"run already complete ({state.step} of {config.total_steps} steps)")
    sched = schedule if schedule is not None else config.schedule()
    problem = sample_trial(sched, state.step, state.rng)
    truth = true_answer(problem)
    if problem.op is Op.ADD:
        outcome = solve_addition(state.params, state.stats, problem, config.theta_add, state.rng,
                                 config.selection)
        target = outcome.answer
    else:
        outcome = solve_counting(state.params, problem, config.theta_count, state.rng)
        target = truth
    loss = train_in_place(state.params, problem, target, config.lr)
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss} at step {state.step} on problem {problem}")
    state.stats = update_stats(state.stats, outcome.strategy, outcome.correct)
    rec = TrialRecord(state.step, problem, outcome.strategy, outcome.answer, truth, outcome.correct,
                      outcome.confidence, target, loss)
    if sink is not None:
        if problem in probes:
            sink.snapshot_probe(state.step, problem, outcome.distribution)
        params = state.params
        sink.record_trial(rec.to_json(),
                          lambda: (evaluate_model(params, Op.ADD), evaluate_model(params, Op.COUNT_UP)),
                          final=state.step == config.total_steps - 1)
    state.step += 1
    return rec


# -- checkpoints ------------------------------------------------------------------

def _fmt_array(a: np.ndarray) -> str:
    if a.ndim == 1:
        return "[" + ",".join(format(float(v), ".17g") for v in a) + "]"
    return "[" + ",".join(_fmt_array(row) for row in a) + "]"


def checkpoint_text(state: RunState, seed: int) -> str:
    doc = {
        "schema_version": CHECKPOINT_SCHEMA,
        "d": state.params.d,
        "H": state.params.hidden,
        "seed": seed,
        "step": state.step,
        "stats": {k: getattr(state.stats, k) for k in
                  ("w_retrieval_add", "w_finger", "w_retrieval_count", "beta", "w_floor")},
        "rng_state": state.rng.bit_generator.state,
        "arrays": {name: f"@@{name}@@" for name in PARAM_NAMES},
    }
    text = json.dumps(doc, indent=1)
    for name, arr in zip(PARAM_NAMES, state.params.arrays()):
        text = text.replace(f'"@@{name}@@"', _fmt_array(arr))
    return text + "\n"


def save_checkpoint(state: RunState, path: str | Path, seed: int = 0) -> Path:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(checkpoint_text(state, seed), encoding="utf-8")
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path) -> RunState:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(doc, dict) or "schema_version" not in doc:
        raise CheckpointError(f"{path}: not a checkpoint (no schema_version)")
    if doc["schema_version"] != CHECKPOINT_SCHEMA:
        raise CheckpointError(f"{path}: schema_version {doc['schema_version']} is not supported "
                              f"(expected {CHECKPOINT_SCHEMA})")
    try:
        d, H = int(doc["d"]), int(doc["H"])
        expected = ModelParams.zeros(d, H)
        arrays = {}
        for name, ref in zip(PARAM_NAMES, expected.arrays()):
            arr = np.array(doc["arrays"][name], dtype=np.float64)
            if arr.shape != ref.shape:
                raise CheckpointError(f"{path}: {name} has shape {arr.shape}, expected {ref.shape}")
            arrays[name] = np.ascontiguousarray(arr)
        params = ModelParams(**arrays)
        if not params.all_finite():
            raise CheckpointError(f"{path}: non-finite parameter values")
        stats = StrategyStats(**doc["stats"])
        rng = np.random.default_rng()
        rng.bit_generator.state = doc["rng_state"]
        return RunState(params, stats, rng, int(doc["step"]))
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError, SMMError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc!r})") from None


# -- experiments ------------------------------------------------------------------

@dataclass
class RunArtifacts:
    out_dir: Path
    paths: dict[str, Path]
    summary: dict
    error: str | None = None


def summarize(config: RunConfig, params: ModelParams, metrics_rows: list[dict], records) -> dict:
    usage = [r["finger_usage"] for r in metrics_rows]
    acc = [r["add_acc"] for r in metrics_rows]
    peak_i, peak_v = peak(usage)
    records = list(records)
    tail_start = max(0, config.total_steps - 2000)
    onset_stats = range_stats(records, config.add_onset, config.add_onset + 2000)
    tail = range_stats(records, tail_start, config.total_steps)
    return {
        "steps": config.total_steps,
        "add_onset": config.add_onset,
        "seed": config.seed,
        "final_add_accuracy": evaluate_model(params, Op.ADD),
        "final_count_accuracy": evaluate_model(params, Op.COUNT_UP),
        "peak_usage": peak_v,
        "peak_usage_window": peak_i,
        "final_usage": next((u for u in reversed(usage) if u is not None), None),
        "usage_last_2000": tail["finger_usage"],
        "accuracy_change_point": change_point(acc, 0.5) if acc else None,
        "early_add_accuracy": onset_stats["add_acc"],
        "backend": kernels.BACKEND,
    }


def run_experiment(config: RunConfig, quiet: bool = True) -> RunArtifacts:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = _dt.datetime.now(_dt.timezone.utc)
    t0 = time.perf_counter()
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")
    err_path = out / "error.json"
    if err_path.exists():
        err_path.unlink()
    state = new_state(config)
    sched = config.schedule()
    probes = frozenset(config.probe_problems())
    sink = TelemetrySink(out, config.window, config.snapshot_every, probes)
    error = None
    try:
        while state.step < config.total_steps:
            run_trial(state, config, sink, sched, probes)
            if not quiet and state.step % 10_000 == 0:
                print(f"  step {state.step}/{config.total_steps}", flush=True)
    except TrainingError as exc:
        error = str(exc)
        err_path.write_text(json.dumps({"error": error, "step": state.step}, indent=2) + "\n",
                            encoding="utf-8")
    finally:
        sink.close()
    paths = dict(sink.paths)
    paths["config"] = out / "config.json"
    if error is None:
        paths["checkpoint"] = save_checkpoint(state, out / "checkpoint.json", config.seed)
        summary = summarize(config, state.params, sink.metrics_rows, read_trials(paths["trials"]))
        paths["summary"] = out / "summary.json"
        paths["summary"].write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    else:
        summary = {"error": error}
        paths["error"] = err_path
    meta = {
        "started": started.isoformat(),
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "elapsed_seconds": time.perf_counter() - t0,
        "smm_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "checkpoint_schema": CHECKPOINT_SCHEMA,
    }
    paths["meta"] = out / "meta.json"
    paths["meta"].write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    artifacts = RunArtifacts(out, paths, summary, error)
    if error is not None:
        exc = TrainingError(error)
        exc.artifacts = artifacts
        raise exc
    return artifacts
