import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hda import kernels
from hda.kernels import _pykernels

IMPLS = kernels.backends()
needs_ext = pytest.mark.skipif("cython" not in IMPLS, reason="compiled extension not built")


def test_backend_name_is_known():
    assert kernels.BACKEND in ("cython", "python")
    assert "python" in IMPLS


def test_pure_python_env_forces_fallback():
    code = "from hda import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, HDA_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("impl", list(IMPLS))
def test_sgd_kernel_formula(impl):
    r = np.random.default_rng(0)
    w, g, v = r.normal(size=(3, 4)), r.normal(size=(3, 4)), r.normal(size=(3, 4))
    w0, v0 = w.copy(), v.copy()
    kernels.sgd_momentum_update(w, g, v, 0.1, 0.9, 0.01, impl=IMPLS[impl])
    v_exp = 0.9 * v0 + g + 0.01 * w0
    np.testing.assert_allclose(v, v_exp, rtol=0, atol=1e-15)
    np.testing.assert_allclose(w, w0 - 0.1 * v_exp, rtol=0, atol=1e-15)


def test_sgd_kernel_shape_mismatch():
    with pytest.raises(ValueError):
        kernels.sgd_momentum_update(np.zeros(3), np.zeros(2), np.zeros(3), 0.1, 0.9, 0.0)


@needs_ext
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_sgd_backends_agree(n, m, seed):
    r = np.random.default_rng(seed)
    base = [r.normal(size=(n, m)) for _ in range(3)]
    outs = {}
    for name, impl in IMPLS.items():
        w, g, v = (a.copy() for a in base)
        kernels.sgd_momentum_update(w, g, v, 0.05, 0.9, 5e-4, impl=impl)
        outs[name] = (w, v)
    np.testing.assert_allclose(outs["cython"][0], outs["python"][0], rtol=0, atol=1e-15)
    np.testing.assert_allclose(outs["cython"][1], outs["python"][1], rtol=0, atol=1e-15)


@needs_ext
@given(st.integers(4, 40), st.integers(1, 4), st.integers(0, 2**31))
def test_kurtosis_backends_agree(n, d, seed):
    x = np.random.default_rng(seed).normal(size=(n, d))
    if d > 1:
        x[:, 0] = 1.0  # one constant column to exercise the skip mask
    kc, vc = kernels.column_kurtosis(x, impl=IMPLS["cython"])
    kp, vp = kernels.column_kurtosis(x, impl=IMPLS["python"])
    assert np.array_equal(np.asarray(vc, dtype=bool), np.asarray(vp, dtype=bool))
    np.testing.assert_allclose(np.asarray(kc)[vp], np.asarray(kp)[vp], rtol=0, atol=1e-10)


@needs_ext
@given(st.integers(5, 60), st.integers(1, 4), st.integers(2, 4), st.integers(0, 2**31))
def test_probe_backends_agree(n, d, classes, seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(n, d))
    y = r.integers(0, classes, size=n)
    params = (r.normal(size=(d, 8)) * 0.5, np.zeros(8), r.normal(size=(8, classes)) * 0.5, np.zeros(classes))
    trained = {}
    for name, impl in IMPLS.items():
        p = [a.copy() for a in params]
        kernels.probe_train(x, y, *p, epochs=30, lr=0.1, impl=impl)
        trained[name] = p
    for a, b in zip(trained["cython"], trained["python"]):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-10)
    pc = kernels.probe_predict(x, *trained["cython"], impl=IMPLS["cython"])
    pp = kernels.probe_predict(x, *trained["python"], impl=IMPLS["python"])
    assert np.array_equal(pc, pp)


def test_pykernels_kurtosis_flags_constant_columns():
    x = np.column_stack([np.ones(10), np.arange(10.0)])
    k, valid = _pykernels.column_kurtosis(x)
    assert valid.tolist() == [False, True]
    # uniform grid 0..9: excess kurtosis = -6(n^2+1)/(5(n^2-1))
    assert k[1] == pytest.approx(-6 * 101 / (5 * 99), abs=1e-12)
