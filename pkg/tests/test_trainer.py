import json

import numpy as np
import pytest

from smm import trainer
from smm.config import RunConfig
from smm.curriculum import Problem, sample_trial
from smm.errors import CheckpointError, TrainingError
from smm.model import ModelParams, Op, answer_probs, init_params, train_in_place
from smm.strategies import StrategyKind
from smm.telemetry import read_trials
from smm.trainer import (evaluate_model, load_checkpoint, new_state, run_experiment, run_trial,
                         save_checkpoint)


def trials(cfg, n, state=None):
    state = state or new_state(cfg)
    sched = cfg.schedule()
    return [run_trial(state, cfg, None, sched) for _ in range(n)], state


def test_same_seed_same_records():
    cfg = RunConfig(seed=4, total_steps=2000, add_onset=500)
    a, _ = trials(cfg, 2000)
    b, _ = trials(cfg, 2000)
    assert a == b
    c, _ = trials(cfg.replace(seed=5), 2000)
    assert a != c


def test_onset_gate_and_target_rule():
    cfg = RunConfig(seed=2, total_steps=3000, add_onset=1000)
    recs, _ = trials(cfg, 3000)
    assert not any(r.is_addition for r in recs[:1000])
    assert any(r.is_addition for r in recs[1000:])
    for r in recs:
        if r.is_addition:
            assert r.target == r.answer
        else:
            assert r.target == r.problem.b + 1
    # wrong finger-counting answers are trained on, not corrected
    assert any(r.is_addition and r.strategy is StrategyKind.FINGER_COUNT and not r.correct for r in recs)


def test_oracle_counting_trial_is_correct():
    cfg = RunConfig(seed=1, total_steps=200, add_onset=200)
    recs, _ = trials(cfg, 200)
    oracle = [r for r in recs if r.strategy is StrategyKind.ORACLE_COUNT]
    assert oracle
    assert all(r.correct and r.answer == r.problem.b + 1 for r in oracle)


def test_run_refuses_past_total():
    cfg = RunConfig(total_steps=3)
    _, state = trials(cfg, 3)
    with pytest.raises(Exception, match="already complete"):
        run_trial(state, cfg)


def test_evaluate_zero_weights():
    zero = ModelParams.zeros(16, 32)
    assert evaluate_model(zero, Op.ADD) == 0.0
    # every counting item b=1..9 answers b+1, never 1
    assert evaluate_model(zero, Op.COUNT_UP) == 0.0


def test_evaluate_counting_trained(counting_state):
    assert evaluate_model(counting_state.params, Op.COUNT_UP) == 1.0
    assert int(np.argmax(answer_probs(counting_state.params, Problem(3, 4, Op.COUNT_UP)))) + 1 == 5


def test_loss_nonincreasing_on_own_step():
    """Across a trial's own update the loss on its target falls in at least 99% of trials."""
    rng = np.random.default_rng(0)
    cfg = RunConfig(add_onset=0)
    sched = cfg.schedule()
    params = init_params(3)
    worse = 0
    n = 2000
    for t in range(n):
        p = sample_trial(sched, t * 25, rng)
        target = int(rng.integers(1, 11)) if p.op is Op.ADD else p.b + 1
        before = train_in_place(params, p, target, 0.1)
        after = -np.log(max(answer_probs(params, p)[target - 1], 1e-12))
        worse += after > before
    assert worse / n <= 0.01


# -- checkpoints ----------------------------------------------------------------

def test_checkpoint_resume_identical(tmp_path):
    cfg = RunConfig(seed=6, total_steps=1300, add_onset=600)
    _, state = trials(cfg, 1200)
    save_checkpoint(state, tmp_path / "ck.json", cfg.seed)
    loaded = load_checkpoint(tmp_path / "ck.json")
    assert loaded.step == 1200 and loaded.stats == state.stats
    for x, y in zip(loaded.params.arrays(), state.params.arrays()):
        assert np.array_equal(x, y)
    a, _ = trials(cfg, 100, state)
    b, _ = trials(cfg, 100, loaded)
    assert a == b


def test_checkpoint_text_stable(tmp_path):
    cfg = RunConfig(total_steps=50)
    _, state = trials(cfg, 50)
    p = save_checkpoint(state, tmp_path / "a.json", 1)
    q = save_checkpoint(load_checkpoint(p), tmp_path / "b.json", 1)
    assert p.read_bytes() == q.read_bytes()


def test_corrupted_checkpoint(tmp_path):
    cfg = RunConfig(total_steps=10)
    _, state = trials(cfg, 10)
    p = save_checkpoint(state, tmp_path / "ck.json")
    text = p.read_text()
    p.write_text(text[: len(text) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
    doc = json.loads(text)
    doc["arrays"]["w1"] = doc["arrays"]["w1"][:-1]
    p.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="w1"):
        load_checkpoint(p)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.json")


def test_schema_mismatch_names_both(tmp_path):
    cfg = RunConfig(total_steps=10)
    _, state = trials(cfg, 10)
    p = save_checkpoint(state, tmp_path / "ck.json")
    doc = json.loads(p.read_text())
    doc["schema_version"] = 99
    p.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match=r"99.*expected 1"):
        load_checkpoint(p)


# -- experiments ----------------------------------------------------------------

def test_short_run_artifacts(tmp_path):
    art = run_experiment(RunConfig(total_steps=10, add_onset=100, out_dir=str(tmp_path / "new" / "run")))
    for name in ("config", "trials", "metrics", "snapshots", "checkpoint", "summary", "meta"):
        assert art.paths[name].exists(), name
    recs = list(read_trials(art.paths["trials"]))
    assert len(recs) == 10 and all(r["op"] == "count" for r in recs)
    assert [r["step"] for r in recs] == list(range(10))
    assert art.summary["final_add_accuracy"] * 25 == round(art.summary["final_add_accuracy"] * 25)
    assert art.summary["peak_usage"] is None
    saved = json.loads(art.paths["config"].read_text())
    assert RunConfig.from_dict(saved) == RunConfig(total_steps=10, add_onset=100,
                                                   out_dir=str(tmp_path / "new" / "run"))


def test_timestamps_only_in_meta(tmp_path):
    cfg = RunConfig(total_steps=300, add_onset=100)
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        run_experiment(cfg.replace(out_dir=str(d)))
    for name in ("trials.jsonl", "metrics.csv", "snapshots.csv", "checkpoint.json", "summary.json"):
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes(), name
    meta = json.loads((dirs[0] / "meta.json").read_text())
    assert "started" in meta and "finished" in meta


def test_nonfinite_loss_aborts_with_marker(tmp_path, monkeypatch):
    real = trainer.train_in_place
    calls = []

    def flaky(params, problem, target, lr):
        calls.append(1)
        return float("nan") if len(calls) == 21 else real(params, problem, target, lr)

    monkeypatch.setattr(trainer, "train_in_place", flaky)
    out = tmp_path / "run"
    with pytest.raises(TrainingError, match="non-finite") as exc:
        run_experiment(RunConfig(total_steps=100, out_dir=str(out)))
    err = json.loads((out / "error.json").read_text())
    assert err["step"] == 20
    assert len((out / "trials.jsonl").read_text().splitlines()) == 20
    assert not (out / "checkpoint.json").exists()
    assert exc.value.artifacts.error is not None


def test_error_marker_cleared_on_success(tmp_path):
    out = tmp_path / "run"
    out.mkdir()
    (out / "error.json").write_text("{}")
    run_experiment(RunConfig(total_steps=5, out_dir=str(out)))
    assert not (out / "error.json").exists()
