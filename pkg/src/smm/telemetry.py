"""Trial logs, windowed metrics and probe snapshots.

Every metrics row is derived from trial records alone (the retrieval-only
evaluation travels on the record that closes each window), so
``metrics_from_log`` reproduces ``metrics.csv`` byte for byte.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from smm.model import VOCAB_SIZE

TRIAL_FIELDS = ("step", "a", "b", "op", "strategy", "answer", "truth", "correct",
                "confidence", "target", "loss")
METRICS_FIELDS = ("window", "step_start", "step_end", "add_trials", "add_acc", "add_acc_retrieval",
                  "count_trials", "count_acc", "count_acc_retrieval", "oracle_rate",
                  "finger_usage", "mean_confidence")
SNAPSHOT_FIELDS = ("step", "probe", "occurrence") + tuple(f"p{i}" for i in range(1, VOCAB_SIZE + 1))

Evaluator = Callable[[], "tuple[float, float]"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class MetricsWindow:
    index: int
    step_start: int
    step_end: int = -1
    add_trials: int = 0
    add_correct: int = 0
    finger: int = 0
    count_trials: int = 0
    count_correct: int = 0
    oracle: int = 0
    conf_sum: float = 0.0
    add_acc_retrieval: float | None = None
    count_acc_retrieval: float | None = None

    @property
    def trials(self) -> int:
        return self.add_trials + self.count_trials

    def add(self, rec: dict):
        self.step_end = rec["step"]
        self.conf_sum += rec["confidence"]
        if rec["op"] == "add":
            self.add_trials += 1
            self.add_correct += rec["correct"]
            self.finger += rec["strategy"] == "finger_count"
        else:
            self.count_trials += 1
            self.count_correct += rec["correct"]
            self.oracle += rec["strategy"] == "oracle_count"

    def row(self) -> dict:
        has_add = self.add_trials > 0
        has_count = self.count_trials > 0
        return {
            "window": self.index,
            "step_start": self.step_start,
            "step_end": self.step_end,
            "add_trials": self.add_trials,
            "add_acc": self.add_correct / self.add_trials if has_add else None,
            "add_acc_retrieval": self.add_acc_retrieval,
            "count_trials": self.count_trials,
            "count_acc": self.count_correct / self.count_trials if has_count else None,
            "count_acc_retrieval": self.count_acc_retrieval,
            "oracle_rate": self.oracle / self.count_trials if has_count else None,
            "finger_usage": self.finger / self.add_trials if has_add else None,
            "mean_confidence": self.conf_sum / self.trials,
        }


class WindowAccumulator:
    """Tiles the trial stream into consecutive windows of ``size`` trials."""

    def __init__(self, size: int):
        self.size = size
        self.current: MetricsWindow | None = None
        self.next_index = 0

    def push(self, rec: dict) -> bool:
        """Add a record; True when it completes a window (call ``close_window``)."""
        if self.current is None:
            self.current = MetricsWindow(self.next_index, rec["step"])
        self.current.add(rec)
        return self.current.trials == self.size

    def close_window(self, evals: tuple[float, float] | None) -> dict | None:
        w = self.current
        if w is None:
            return None
        if evals is not None:
            w.add_acc_retrieval, w.count_acc_retrieval = evals
        self.current = None
        self.next_index += 1
        return w.row()


class TelemetrySink:
    """Writes trials.jsonl, metrics.csv and snapshots.csv for one run."""

    def __init__(self, out_dir: str | Path, window: int = 500, snapshot_every: int = 10,
                 probes: Iterable = ()):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.window = WindowAccumulator(window)
        self.snapshot_every = snapshot_every
        self.probes = {str(p) for p in probes}
        self.occurrences = {p: 0 for p in self.probes}
        self.paths = {
            "trials": self.out_dir / "trials.jsonl",
            "metrics": self.out_dir / "metrics.csv",
            "snapshots": self.out_dir / "snapshots.csv",
        }
        self._trials = open(self.paths["trials"], "w", encoding="utf-8", newline="\n")
        self._metrics = open(self.paths["metrics"], "w", encoding="utf-8", newline="")
        self._snapshots = open(self.paths["snapshots"], "w", encoding="utf-8", newline="")
        self._mw = csv.writer(self._metrics, lineterminator="\n")
        self._sw = csv.writer(self._snapshots, lineterminator="\n")
        self._mw.writerow(METRICS_FIELDS)
        self._sw.writerow(SNAPSHOT_FIELDS)
        self.metrics_rows: list[dict] = []

    def record_trial(self, rec: dict, evaluator: Evaluator | None = None, final: bool = False):
        """Log one trial; ``final`` closes a trailing partial window on this record."""
        closes = self.window.push(rec) or final
        if closes:
            evals = evaluator() if evaluator is not None else None
            if evals is not None:
                rec = {**rec, "eval_add": evals[0], "eval_count": evals[1]}
            self._write_metrics(self.window.close_window(evals))
        self._trials.write(json.dumps(rec) + "\n")

    def snapshot_probe(self, step: int, problem, dist) -> bool:
        key = str(problem)
        if key not in self.occurrences:
            return False
        self.occurrences[key] += 1
        n = self.occurrences[key]
        if n % self.snapshot_every:
            return False
        probs = dist.probs if hasattr(dist, "probs") else dist
        self._sw.writerow([step, key, n] + [repr(float(p)) for p in probs])
        return True

    def _write_metrics(self, row: dict):
        self.metrics_rows.append(row)
        self._mw.writerow([_fmt(row[k]) for k in METRICS_FIELDS])

    def close(self):
        """Flush any open window (without evaluation), then close the files."""
        if self.window.current is not None and not self._metrics.closed:
            self._write_metrics(self.window.close_window(None))
        for f in (self._trials, self._metrics, self._snapshots):
            if not f.closed:
                f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# -- readers and pure recomputation -------------------------------------------

def read_trials(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as f:
        for line in f:
            yield json.loads(line)


def metrics_from_records(records: Iterable[dict], window: int) -> list[dict]:
    acc = WindowAccumulator(window)
    rows = []
    for rec in records:
        if acc.push(rec) or "eval_add" in rec:
            rows.append(acc.close_window(_evals_of(rec)))
    if acc.current is not None:
        rows.append(acc.close_window(None))
    return rows


def _evals_of(rec: dict):
    if "eval_add" in rec:
        return rec["eval_add"], rec["eval_count"]
    return None


def metrics_csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_FIELDS)
    for row in rows:
        w.writerow([_fmt(row[k]) for k in METRICS_FIELDS])
    return buf.getvalue()


def metrics_from_log(trials_path: str | Path, window: int) -> str:
    return metrics_csv_text(metrics_from_records(read_trials(trials_path), window))


def _parse_cell(text: str):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        return float(text)


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as f:
        return [{k: _parse_cell(v) for k, v in row.items()} for row in csv.DictReader(f)]


@dataclass
class SnapshotRow:
    step: int
    probe: str
    occurrence: int
    probs: np.ndarray = field(repr=False)


def read_snapshots(path: str | Path, probe: str | None = None) -> list[SnapshotRow]:
    out = []
    with open(path, encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            if probe is not None and row["probe"] != probe:
                continue
            probs = np.array([float(row[f"p{i}"]) for i in range(1, VOCAB_SIZE + 1)])
            out.append(SnapshotRow(int(row["step"]), row["probe"], int(row["occurrence"]), probs))
    return out


# -- series analysis ------------------------------------------------------------

def change_point(series, level: float, persist: int = 3) -> int | None:
    """First index whose value is >= level and stays so for ``persist`` consecutive entries.

    ``None`` entries (windows without data) break a run.
    """
    vals = list(series)
    if not vals:
        raise ValueError("change_point needs a non-empty series")
    run = 0
    for i, v in enumerate(vals):
        run = run + 1 if v is not None and v >= level else 0
        if run == persist:
            return i - persist + 1
    return None


def peak(series) -> tuple[int | None, float | None]:
    """Index and value of the first maximum, ignoring ``None``."""
    best_i, best_v = None, None
    for i, v in enumerate(series):
        if v is not None and (best_v is None or v > best_v):
            best_i, best_v = i, v
    return best_i, best_v


def range_stats(records: Iterable[dict], start: int, stop: int) -> dict:
    """Behavioural rates over trials with step in [start, stop); ``None`` when undefined."""
    add = add_ok = finger = count = oracle = 0
    for rec in records:
        if not start <= rec["step"] < stop:
            continue
        if rec["op"] == "add":
            add += 1
            add_ok += rec["correct"]
            finger += rec["strategy"] == "finger_count"
        else:
            count += 1
            oracle += rec["strategy"] == "oracle_count"
    return {
        "add_trials": add,
        "add_acc": add_ok / add if add else None,
        "finger_usage": finger / add if add else None,
        "count_trials": count,
        "oracle_rate": oracle / count if count else None,
    }
