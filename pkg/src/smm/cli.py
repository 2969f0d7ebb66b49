"""Command-line interface.

Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from smm import charts
from smm.config import RunConfig, SweepSpec
from smm.curriculum import MAX_ADDEND, Problem
from smm.errors import ConfigError, InputError, SMMError
from smm.model import VOCAB_SIZE, AnswerDistribution, Op, answer_probs, entropy_confidence, gradient_check, init_params
from smm.telemetry import read_metrics, read_snapshots
from smm.trainer import load_checkpoint, run_experiment

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
FIGURES = ("fig1a", "fig1b", "fig2", "all")
GRADCHECK_TOLERANCE = 1e-4
AGGREGATE_FIELDS = ("onset", "seed", "status", "accuracy_change_point", "usage_peak_window",
                    "usage_peak", "final_add_accuracy", "early_add_accuracy")


def _err(msg: str):
    print(f"error: {msg}", file=sys.stderr)


# -- train --------------------------------------------------------------------

def cmd_train(args) -> int:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        config = config.replace(**overrides)
    if not args.quiet:
        print(f"training seed={config.seed} steps={config.total_steps} onset={config.add_onset} "
              f"-> {config.out_dir}", flush=True)
    art = run_experiment(config, quiet=args.quiet)
    s = art.summary
    print(f"final addition accuracy   {s['final_add_accuracy']:.3f}")
    print(f"final counting accuracy   {s['final_count_accuracy']:.3f}")
    print(f"peak finger usage         {_fmt_opt(s['peak_usage'])} (window {s['peak_usage_window']})")
    print(f"final finger usage        {_fmt_opt(s['final_usage'])}")
    print(f"artifacts                 {art.out_dir}")
    return EXIT_OK


def _fmt_opt(v) -> str:
    return "n/a" if v is None else f"{v:.3f}"


# -- sweep --------------------------------------------------------------------

def _sweep_worker(item: tuple[int, int, dict]) -> tuple[int, int, dict | None, str | None]:
    onset, seed, cfg = item
    try:
        art = run_experiment(RunConfig.from_dict(cfg))
        return onset, seed, art.summary, None
    except Exception as exc:  # reported per run; the sweep carries on
        return onset, seed, None, f"{type(exc).__name__}: {exc}"


def run_sweep(spec: SweepSpec, quiet: bool = True) -> tuple[list[dict], list[str]]:
    """Run every (onset, seed) pair; returns aggregate rows and failure messages."""
    root = Path(spec.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "sweep.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n", encoding="utf-8")
    items = [(onset, seed, cfg.to_dict()) for onset, seed, cfg in spec.run_configs()]
    workers = spec.parallelism or os.cpu_count() or 1
    workers = min(workers, len(items))
    if workers == 1:
        results = map(_sweep_worker, items)
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(_sweep_worker, items)
    rows, failures = [], []
    try:
        for onset, seed, summary, error in results:
            name = spec.run_name(onset, seed)
            if error is not None:
                failures.append(f"{name}: {error}")
                rows.append({"onset": onset, "seed": seed, "status": "failed"})
            else:
                rows.append({
                    "onset": onset, "seed": seed, "status": "ok",
                    "accuracy_change_point": summary["accuracy_change_point"],
                    "usage_peak_window": summary["peak_usage_window"],
                    "usage_peak": summary["peak_usage"],
                    "final_add_accuracy": summary["final_add_accuracy"],
                    "early_add_accuracy": summary["early_add_accuracy"],
                })
            if not quiet:
                print(f"  {name}: {'FAILED' if error else 'ok'}", flush=True)
    finally:
        if workers > 1:
            pool.shutdown()
    rows.sort(key=lambda r: (r["onset"], r["seed"]))
    write_aggregate(rows, root / "aggregate.csv")
    return rows, failures


def write_aggregate(rows: list[dict], path: Path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(AGGREGATE_FIELDS)
        for row in rows:
            w.writerow(["" if row.get(k) is None else (repr(row[k]) if isinstance(row[k], float) else row[k])
                        for k in AGGREGATE_FIELDS])


def cmd_sweep(args) -> int:
    spec = SweepSpec.load(args.spec)
    if args.out is not None:
        spec = SweepSpec(spec.base, spec.onsets, spec.seeds, spec.parallelism, args.out)
    if args.seed is not None:
        spec = SweepSpec(spec.base, spec.onsets, (args.seed,), spec.parallelism, spec.out_dir)
    n = len(spec.onsets) * len(spec.seeds)
    if not args.quiet:
        print(f"sweep: {len(spec.onsets)} onsets x {len(spec.seeds)} seeds = {n} runs -> {spec.out_dir}",
              flush=True)
    rows, failures = run_sweep(spec, quiet=args.quiet)
    root = Path(spec.out_dir)
    if len(failures) < n:
        plot_directory(root, "all")
    print(f"aggregate: {root / 'aggregate.csv'} ({len(rows)} rows)")
    if failures:
        print(f"{len(failures)} run(s) failed:", file=sys.stderr)
        for line in failures:
            print(f"  {line}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# -- plot ---------------------------------------------------------------------

def _run_dirs(root: Path) -> list[Path]:
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / "metrics.csv").exists()
                  and p.name.startswith("onset"))


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing file {path}")
    return path


def _series(rows: list[dict], key: str) -> tuple[list[int], list]:
    return [r["step_end"] for r in rows], [r[key] for r in rows]


def _onset_of(run: Path) -> int:
    return json.loads(_require(run / "config.json").read_text())["add_onset"]


def _averaged(runs: list[Path], key: str) -> tuple[list[int], list]:
    """Seed-average of a metrics column, window by window (None entries skipped)."""
    tables = [read_metrics(_require(r / "metrics.csv")) for r in runs]
    n = min(len(t) for t in tables)
    xs = [tables[0][i]["step_end"] for i in range(n)]
    ys = []
    for i in range(n):
        vals = [t[i][key] for t in tables if t[i][key] is not None]
        ys.append(sum(vals) / len(vals) if vals else None)
    return xs, ys


def plot_directory(root: Path, figure: str) -> list[Path]:
    """Render figures for a run directory or a sweep directory; returns written paths."""
    if figure not in FIGURES:
        raise ConfigError("figure", f"unknown figure {figure!r}; valid names: {', '.join(FIGURES)}")
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"missing directory {root}")
    wanted = ("fig1a", "fig1b", "fig2") if figure == "all" else (figure,)
    runs = _run_dirs(root)
    written = []
    if runs:  # sweep: overlays across onsets
        by_onset: dict[int, list[Path]] = {}
        for run in runs:
            by_onset.setdefault(_onset_of(run), []).append(run)
        for fig, key, fname, title, ylab in (
                ("fig1a", "add_acc", charts.FIG1A, "Addition accuracy by onset", "accuracy"),
                ("fig1b", "finger_usage", charts.FIG1B, "Finger-counting usage by onset", "usage rate")):
            if fig not in wanted:
                continue
            series = []
            for onset in sorted(by_onset):
                xs, ys = _averaged(by_onset[onset], key)
                if sum(y is not None for y in ys) >= 2:
                    series.append(charts.Series(f"onset {onset}", xs, ys))
            charts.render_line_chart(series, title, "training step", ylab, root / fname)
            written.append(root / fname)
        if figure == "fig2":
            raise ConfigError("figure", "fig2 needs a single run directory, not a sweep")
        return written
    rows = read_metrics(_require(root / "metrics.csv"))
    if "fig1a" in wanted:
        xs, beh = _series(rows, "add_acc")
        _, ret = _series(rows, "add_acc_retrieval")
        charts.render_line_chart([charts.Series("behavioral", xs, beh), charts.Series("retrieval only", xs, ret)],
                                 "Addition accuracy", "training step", "accuracy", root / charts.FIG1A)
        written.append(root / charts.FIG1A)
    if "fig1b" in wanted:
        xs, usage = _series(rows, "finger_usage")
        charts.render_line_chart([charts.Series("finger-counting", xs, usage)], "Finger-counting usage",
                                 "training step", "usage rate", root / charts.FIG1B)
        written.append(root / charts.FIG1B)
    if "fig2" in wanted:
        cfg = json.loads(_require(root / "config.json").read_text())
        if not cfg.get("probes"):
            raise InputError("run has no probe problems to plot")
        probe = cfg["probes"][0]
        snaps = read_snapshots(_require(root / "snapshots.csv"), probe)
        charts.render_distribution_quarters(snaps, cfg["total_steps"], probe, root / charts.FIG2)
        written.append(root / charts.FIG2)
    return written


def cmd_plot(args) -> int:
    for path in plot_directory(Path(args.directory), args.figure):
        print(path)
    return EXIT_OK


# -- probe --------------------------------------------------------------------

def probe_report(params, problem: Problem) -> dict:
    dist = AnswerDistribution(answer_probs(params, problem))
    return {"problem": str(problem), "probs": [float(p) for p in dist.probs],
            "argmax": dist.argmax(), "confidence": entropy_confidence(dist)}


def cmd_probe(args) -> int:
    problem = Problem.parse(args.problem)
    state = load_checkpoint(args.checkpoint)
    rep = probe_report(state.params, problem)
    print(f"problem {rep['problem']}  (checkpoint step {state.step})")
    print("answer  probability")
    for tok, p in enumerate(rep["probs"], start=1):
        mark = "  <" if tok == rep["argmax"] else ""
        print(f"{tok:>6}  {p:.6f}{mark}")
    print(f"argmax {rep['argmax']}  confidence {rep['confidence']:.6f}")
    print(json.dumps(rep))
    return EXIT_OK


# -- gradcheck ----------------------------------------------------------------

def random_draw(rng: np.random.Generator, d: int, hidden: int):
    params = init_params(int(rng.integers(2**31)), d, hidden)
    if rng.random() < 0.5:
        problem = Problem(int(rng.integers(1, MAX_ADDEND + 1)), int(rng.integers(1, MAX_ADDEND + 1)), Op.ADD)
    else:
        b = int(rng.integers(1, VOCAB_SIZE))
        problem = Problem(max(b - 1, 1), b, Op.COUNT_UP)
    return params, problem, int(rng.integers(1, VOCAB_SIZE + 1))


def run_gradcheck(seed: int, trials: int, d: int = 16, hidden: int = 32, eps: float = 1e-5) -> dict:
    if trials < 1:
        raise ConfigError("trials", f"must be >= 1, got {trials}")
    rng = np.random.default_rng(seed)
    worst, per = 0.0, {}
    for _ in range(trials):
        params, problem, target = random_draw(rng, d, hidden)
        err, groups = gradient_check(params, problem, target, eps, report=True)
        worst = max(worst, err)
        for k, v in groups.items():
            per[k] = max(per.get(k, 0.0), v)
    return {"trials": trials, "eps": eps, "max_relative_error": worst, "per_parameter": per}


def cmd_gradcheck(args) -> int:
    rep = run_gradcheck(args.seed, args.trials, eps=args.eps)
    for name, v in rep["per_parameter"].items():
        print(f"{name:<10} {v:.3e}")
    ok = rep["max_relative_error"] < GRADCHECK_TOLERANCE
    print(f"max relative error {rep['max_relative_error']:.3e} over {rep['trials']} draws "
          f"(eps {rep['eps']:g}): {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_RUNTIME


# -- export-embeddings --------------------------------------------------------

def embedding_table(num_embed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Embedding rows and their pairwise cosine similarities."""
    norms = np.linalg.norm(num_embed, axis=1)
    unit = num_embed / np.where(norms > 0, norms, 1.0)[:, None]
    return num_embed, unit @ unit.T


def cmd_export_embeddings(args) -> int:
    state = load_checkpoint(args.checkpoint)
    emb, cos = embedding_table(state.params.num_embed)
    out = Path(args.output)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True)
    with open(out, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["token"] + [f"e{j + 1}" for j in range(emb.shape[1])])
        for i, row in enumerate(emb, start=1):
            w.writerow([i] + [repr(float(v)) for v in row])
        w.writerow(["cosine"] + [str(t) for t in range(1, VOCAB_SIZE + 1)])
        for i, row in enumerate(cos, start=1):
            w.writerow([i] + [repr(float(v)) for v in row])
    print(f"wrote {emb.shape[0]} embeddings (d={emb.shape[1]}) and cosine block to {out}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smm", description="Small Math Model simulator")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run one experiment")
    t.add_argument("--config", help="JSON run configuration (defaults when omitted)")
    t.add_argument("--out", help="output directory (overrides out_dir)")
    t.add_argument("--seed", type=int, help="seed override")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="run an onset x seed grid")
    s.add_argument("--spec", required=True, help="JSON sweep specification")
    s.add_argument("--out", help="output directory (overrides out_dir)")
    s.add_argument("--seed", type=int, help="run only this seed")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_sweep)

    pl = sub.add_parser("plot", help="render SVG figures from logged data")
    pl.add_argument("directory", help="run or sweep directory")
    pl.add_argument("figure", nargs="?", default="all", help=f"one of {', '.join(FIGURES)}")
    pl.set_defaults(func=cmd_plot)

    pr = sub.add_parser("probe", help="print a checkpoint's answer distribution")
    pr.add_argument("checkpoint")
    pr.add_argument("problem", help='"a+b" or "a>b"')
    pr.set_defaults(func=cmd_probe)

    g = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--trials", type=int, default=100)
    g.add_argument("--eps", type=float, default=1e-5)
    g.set_defaults(func=cmd_gradcheck)

    e = sub.add_parser("export-embeddings", help="write number embeddings and their cosine similarities")
    e.add_argument("checkpoint")
    e.add_argument("output")
    e.set_defaults(func=cmd_export_embeddings)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (SMMError, OSError) as exc:
        _err(str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
