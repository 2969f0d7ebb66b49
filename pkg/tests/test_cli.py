import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from smm import charts, trainer
from smm.cli import embedding_table, main
from smm.config import RunConfig, SweepSpec
from smm.trainer import new_state, save_checkpoint


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "r"
    cfg = write_json(out.parent / "cfg.json", {"total_steps": 3000, "add_onset": 1000, "window": 100,
                                               "probes": ["1+1"], "snapshot_every": 5})
    assert main(["train", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    return out


@pytest.fixture
def counting_checkpoint(tmp_path, counting_state):
    return save_checkpoint(counting_state, tmp_path / "count.json", 1)


# -- train ----------------------------------------------------------------------

def test_train_writes_artifacts(small_run):
    for name in ("config.json", "trials.jsonl", "metrics.csv", "snapshots.csv", "checkpoint.json",
                 "summary.json", "meta.json"):
        assert (small_run / name).exists()


def test_train_output(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {"total_steps": 20})
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "a" / "b"), "--quiet"]) == 0
    out = capsys.readouterr().out
    assert "final addition accuracy" in out and "peak finger usage" in out


def test_train_sigma_zero_exit2(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {"sigma": 0})
    assert main(["train", "--config", str(cfg)]) == 2
    assert "sigma" in capsys.readouterr().err


def test_train_unknown_key_exit2(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {"totl_steps": 5})
    assert main(["train", "--config", str(cfg)]) == 2
    assert "totl_steps" in capsys.readouterr().err


def test_train_runtime_failure_exit1(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(trainer, "train_in_place", lambda *a: float("inf"))
    cfg = write_json(tmp_path / "c.json", {"total_steps": 5})
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r"), "--quiet"]) == 1
    assert "non-finite" in capsys.readouterr().err
    assert (tmp_path / "r" / "error.json").exists()


def test_missing_config_exit1(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.json")]) == 1


def test_unknown_command_exit2():
    with pytest.raises(SystemExit) as exc:
        main(["fly"])
    assert exc.value.code == 2


# -- plot -----------------------------------------------------------------------

def test_plot_run_all(small_run, capsys):
    assert main(["plot", str(small_run)]) == 0
    for name in (charts.FIG1A, charts.FIG1B, charts.FIG2):
        root = ET.parse(small_run / name).getroot()
        assert root.tag.endswith("svg")
    fig2 = ET.parse(small_run / charts.FIG2).getroot()
    n_snaps = len((small_run / "snapshots.csv").read_text().splitlines()) - 1
    assert len([e for e in fig2.iter() if e.tag.endswith("polyline")]) == n_snaps
    assert sum("(n=" in (e.text or "") for e in fig2.iter() if e.tag.endswith("text")) == 4


def test_plot_unknown_figure_lists_names(small_run, capsys):
    assert main(["plot", str(small_run), "fig9"]) == 2
    err = capsys.readouterr().err
    assert all(name in err for name in ("fig1a", "fig1b", "fig2"))


def test_plot_empty_dir_exit1(tmp_path, capsys):
    assert main(["plot", str(tmp_path)]) == 1
    assert "missing" in capsys.readouterr().err


def test_plot_does_not_touch_model(small_run, monkeypatch):
    def boom(*a, **k):
        raise AssertionError("model executed during plotting")
    monkeypatch.setattr("smm.model.answer_probs", boom)
    monkeypatch.setattr(trainer, "run_trial", boom)
    assert main(["plot", str(small_run), "fig1b"]) == 0


# -- sweep ----------------------------------------------------------------------

def sweep_spec(tmp_path, name, parallelism):
    spec = SweepSpec(base=RunConfig(total_steps=400, window=100), onsets=(0, 10_000, 20_000),
                     seeds=(1, 2, 3, 4, 5), parallelism=parallelism, out_dir=str(tmp_path / name))
    return write_json(tmp_path / f"{name}.json", spec.to_dict())


def test_sweep_grid_and_rerun(tmp_path, capsys):
    assert main(["sweep", "--spec", str(sweep_spec(tmp_path, "a", 1)), "--quiet"]) == 0
    assert main(["sweep", "--spec", str(sweep_spec(tmp_path, "b", 2)), "--quiet"]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    dirs = sorted(p.name for p in a.iterdir() if p.is_dir())
    assert len(dirs) == 15 and "onset10000_seed5" in dirs
    rows = list(csv.DictReader((a / "aggregate.csv").open()))
    assert len(rows) == 15 and all(r["status"] == "ok" for r in rows)
    assert (a / "aggregate.csv").read_bytes() == (b / "aggregate.csv").read_bytes()
    fig = ET.parse(a / charts.FIG1B).getroot()
    assert len([e for e in fig.iter() if e.tag.endswith("polyline")]) == 1  # only onset 0 saw addition
    fig = ET.parse(a / charts.FIG1A).getroot()
    assert len([e for e in fig.iter() if e.tag.endswith("polyline")]) == 1


def test_sweep_overlay_one_line_per_onset(tmp_path):
    spec = SweepSpec(base=RunConfig(total_steps=600, window=100), onsets=(0, 200), seeds=(1, 2),
                     parallelism=1, out_dir=str(tmp_path / "s"))
    assert main(["sweep", "--spec", str(write_json(tmp_path / "s.json", spec.to_dict())), "--quiet"]) == 0
    assert main(["plot", str(tmp_path / "s"), "fig1a"]) == 0
    fig = ET.parse(tmp_path / "s" / charts.FIG1A).getroot()
    assert len([e for e in fig.iter() if e.tag.endswith("polyline")]) == 2
    assert main(["plot", str(tmp_path / "s"), "fig2"]) == 2


def test_sweep_failures_reported(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(trainer, "train_in_place", lambda *a: float("nan"))
    spec = SweepSpec(base=RunConfig(total_steps=50), onsets=(0,), seeds=(1, 2), parallelism=1,
                     out_dir=str(tmp_path / "s"))
    assert main(["sweep", "--spec", str(write_json(tmp_path / "s.json", spec.to_dict())), "--quiet"]) == 1
    err = capsys.readouterr().err
    assert "onset0_seed1" in err and "onset0_seed2" in err
    rows = list(csv.DictReader((tmp_path / "s" / "aggregate.csv").open()))
    assert [r["status"] for r in rows] == ["failed", "failed"]


# -- probe ----------------------------------------------------------------------

def test_probe_counting_checkpoint(counting_checkpoint, capsys):
    assert main(["probe", str(counting_checkpoint), "3>4"]) == 0
    rep = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert rep["argmax"] == 5
    assert len(rep["probs"]) == 10 and abs(sum(rep["probs"]) - 1) < 1e-9
    assert 0 <= rep["confidence"] <= 1


def test_probe_bad_token(counting_checkpoint, capsys):
    assert main(["probe", str(counting_checkpoint), "4>?"]) == 2
    assert "'?'" in capsys.readouterr().err


def test_probe_missing_checkpoint(tmp_path):
    assert main(["probe", str(tmp_path / "none.json"), "3+4"]) == 1


# -- gradcheck ------------------------------------------------------------------

def test_gradcheck_deterministic(capsys):
    assert main(["gradcheck", "--seed", "7", "--trials", "10"]) == 0
    first = capsys.readouterr().out
    assert main(["gradcheck", "--seed", "7", "--trials", "10"]) == 0
    assert capsys.readouterr().out == first
    assert "PASS" in first


def test_gradcheck_zero_trials():
    assert main(["gradcheck", "--trials", "0"]) == 2


# -- export-embeddings ----------------------------------------------------------

def _read_export(path):
    rows = list(csv.reader(path.open()))
    split = next(i for i, r in enumerate(rows) if r[0] == "cosine")
    emb = np.array([[float(v) for v in r[1:]] for r in rows[1:split]])
    cos = np.array([[float(v) for v in r[1:]] for r in rows[split + 1:]])
    return rows[0], emb, cos


def test_export_shape_and_diagonal(counting_checkpoint, tmp_path):
    out = tmp_path / "sub" / "emb.csv"
    assert main(["export-embeddings", str(counting_checkpoint), str(out)]) == 0
    header, emb, cos = _read_export(out)
    assert header == ["token"] + [f"e{j}" for j in range(1, 17)]
    assert emb.shape == (10, 16) and cos.shape == (10, 10)
    assert np.all(np.abs(np.diag(cos) - 1) <= 1e-9)
    assert np.allclose(cos, cos.T)


def test_untrained_cosines_near_zero(tmp_path):
    ck = save_checkpoint(new_state(RunConfig()), tmp_path / "ck.json", 1)
    assert main(["export-embeddings", str(ck), str(tmp_path / "e.csv")]) == 0
    _, _, cos = _read_export(tmp_path / "e.csv")
    off = cos[~np.eye(10, dtype=bool)].mean()
    # Monte Carlo reference: mean off-diagonal cosine of random uniform 10x16 tables
    rng = np.random.default_rng(0)
    ref = []
    for _ in range(5000):
        _, c = embedding_table(rng.uniform(-1, 1, (10, 16)))
        ref.append(abs(c[~np.eye(10, dtype=bool)].mean()))
    assert abs(off) <= np.quantile(ref, 0.999)


def test_export_unwritable(counting_checkpoint, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["export-embeddings", str(counting_checkpoint), str(blocker / "e.csv")]) == 1
