import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smm import _kernels_py, kernels
from smm.model import init_params

try:
    from smm import _kernels as _kernels_c
except ImportError:
    _kernels_c = None

needs_compiled = pytest.mark.skipif(_kernels_c is None, reason="compiled kernels not built")

inputs = st.tuples(st.integers(0, 2**31 - 1), st.integers(0, 9), st.integers(0, 9), st.integers(0, 1),
                   st.integers(0, 9), st.floats(0.5, 4.0))


def _params(seed, scale):
    return [a * scale for a in init_params(seed, d=8, H=12).arrays()]


@needs_compiled
@given(inputs)
def test_forward_parity(case):
    seed, ia, ib, iop, _, scale = case
    arrays = _params(seed, scale)
    for x, y in zip(_kernels_c.forward(*arrays, ia, ib, iop), _kernels_py.forward(*arrays, ia, ib, iop)):
        assert np.allclose(x, y, rtol=0, atol=1e-12)


@needs_compiled
@given(inputs)
def test_backward_parity(case):
    seed, ia, ib, iop, it, scale = case
    arrays = _params(seed, scale)
    ne, oe, gw, gb, w1, b1, w2, b2 = arrays
    gate, x, _, h, _, p = _kernels_py.forward(*arrays, ia, ib, iop)
    got = _kernels_c.backward(ne, oe, gw, w1, w2, ia, ib, iop, gate, x, h, p, it)
    ref = _kernels_py.backward(ne, oe, gw, w1, w2, ia, ib, iop, gate, x, h, p, it)
    for a, b in zip(got, ref):
        assert np.allclose(a, b, rtol=0, atol=1e-12)


@needs_compiled
@given(inputs)
def test_train_step_parity(case):
    seed, ia, ib, iop, it, scale = case
    a1, a2 = _params(seed, scale), _params(seed, scale)
    l1 = _kernels_c.train_step(*a1, ia, ib, iop, it, 0.05)
    l2 = _kernels_py.train_step(*a2, ia, ib, iop, it, 0.05)
    assert l1 == pytest.approx(l2, rel=1e-12, abs=1e-15)
    for x, y in zip(a1, a2):
        assert np.allclose(x, y, rtol=0, atol=1e-12)


def test_backend_flag_consistent():
    assert kernels.BACKEND in ("cython", "python")
    if _kernels_c is not None and os.environ.get("SMM_PURE_PYTHON", "") in ("", "0"):
        assert kernels.BACKEND == "cython"


def test_pure_python_override_selects_fallback():
    env = dict(os.environ, SMM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from smm import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_fallback_reproduces_trial_stream(tmp_path):
    """A short run is identical in both backends up to float rounding of logged losses."""
    code = ("import json,sys;from smm.config import RunConfig;from smm.trainer import run_experiment;"
            "run_experiment(RunConfig(total_steps=3000, add_onset=1000, out_dir=sys.argv[1]))")
    logs = []
    for flag in ("1", "0"):
        out = tmp_path / f"run{flag}"
        subprocess.run([sys.executable, "-c", code, str(out)], env=dict(os.environ, SMM_PURE_PYTHON=flag),
                       check=True)
        logs.append([line for line in (out / "trials.jsonl").read_text().splitlines()])
    a = [json.loads(x) for x in logs[0]]
    b = [json.loads(x) for x in logs[1]]
    assert len(a) == len(b) == 3000
    for r, s in zip(a, b):
        assert {k: v for k, v in r.items() if k not in ("loss", "confidence", "eval_add", "eval_count")} == \
               {k: v for k, v in s.items() if k not in ("loss", "confidence", "eval_add", "eval_count")}
        assert r["loss"] == pytest.approx(s["loss"], rel=1e-9, abs=1e-12)
