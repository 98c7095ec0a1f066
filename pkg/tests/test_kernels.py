import importlib
import os

import numpy as np
import pytest

from autorl import _kernels_py, kernels

try:
    from autorl import _ckernels
except ImportError:  # extension not built
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled extension not built")


def random_layers(rng, sizes):
    ws = [rng.normal(size=(o, i)) / np.sqrt(i) for i, o in zip(sizes[:-1], sizes[1:])]
    bs = [rng.normal(size=o) * 0.1 for o in sizes[1:]]
    return ws, bs


def test_backend_flag_is_consistent():
    assert kernels.BACKEND in ("cython", "python")
    forced = os.environ.get("AUTORL_PURE_PYTHON", "") not in ("", "0")
    assert kernels.BACKEND == ("cython" if _ckernels is not None and not forced else "python")


def test_pure_python_selected_by_env(monkeypatch):
    monkeypatch.setenv("AUTORL_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("AUTORL_PURE_PYTHON")
        importlib.reload(kernels)


@needs_ext
@pytest.mark.parametrize("act", [kernels.RELU, kernels.TANH, kernels.ELU])
@pytest.mark.parametrize("out_kind", [kernels.IDENTITY, kernels.SCALED_TANH])
@pytest.mark.parametrize("sizes", [[3, 8, 2], [5, 16, 16, 1], [4, 33, 7, 65, 3]])
def test_backends_agree(rng, act, out_kind, sizes):
    ws, bs = random_layers(rng, sizes)
    x = rng.normal(size=(37, sizes[0]))
    dout = rng.normal(size=(37, sizes[-1]))
    results = []
    for mod in (_kernels_py, _ckernels):
        out, cache = mod.mlp_forward(ws, bs, x, act, out_kind, 2.0)
        gw = [np.zeros_like(w) for w in ws]
        gb = [np.zeros_like(b) for b in bs]
        dx = mod.mlp_backward(ws, cache, dout, act, out_kind, 2.0, gw, gb, True)
        results.append((out, gw, gb, dx))
    (o1, gw1, gb1, dx1), (o2, gw2, gb2, dx2) = results
    np.testing.assert_allclose(o1, o2, rtol=0, atol=1e-12)
    np.testing.assert_allclose(dx1, dx2, rtol=0, atol=1e-10)
    for a, b in zip(gw1 + gb1, gw2 + gb2):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-10)


@needs_ext
def test_adam_and_soft_update_agree(rng):
    p = rng.normal(size=257)
    g = rng.normal(size=257)
    states = []
    for mod in (_kernels_py, _ckernels):
        pp, m, v = p.copy(), np.zeros(257), np.zeros(257)
        for step in range(1, 4):
            mod.adam_update(pp, g, m, v, 1e-3, 0.9, 0.999, 1e-8, step)
        t = p.copy()
        mod.soft_update(t, pp, 0.3)
        states.append((pp, m, v, t))
    for a, b in zip(*states):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


@pytest.mark.parametrize("mod", [_kernels_py, pytest.param(_ckernels, marks=needs_ext)])
def test_soft_update_limits(rng, mod):
    src = rng.normal(size=50)
    tgt = rng.normal(size=50)
    before = tgt.copy()
    mod.soft_update(tgt, src, 0.0)
    assert np.array_equal(tgt, before)
    mod.soft_update(tgt, src, 1.0)
    assert np.array_equal(tgt, src)


@pytest.mark.parametrize("mod", [_kernels_py, pytest.param(_ckernels, marks=needs_ext)])
def test_all_finite(mod):
    a = np.ones(10)
    assert mod.all_finite(a)
    a[7] = np.nan
    assert not mod.all_finite(a)
    a[7] = np.inf
    assert not mod.all_finite(a)
