import os
import subprocess
import sys

import numpy as np
import pytest

from bgpad import kernels


def _inputs(name, rng):
    if name == "rolling_pearson":
        x = rng.poisson(20, 300).astype(float)
        y = x + rng.normal(size=300)
        x[40:80] = 3.0  # constant stretch -> invalid windows
        return (x, y, 25)
    if name in ("rbf_cross",):
        return (rng.normal(size=(40, 5)), rng.normal(size=(30, 5)), 0.3)
    if name == "linear_cross":
        return (rng.normal(size=(40, 5)), rng.normal(size=(30, 5)))
    if name == "smo":
        X = rng.normal(size=(80, 3))
        Q = np.exp(-0.5 * ((X[:, None] - X[None]) ** 2).sum(-1))
        n, nu = 80, 0.1
        alpha = np.full(n, 1.0 / n)
        return (Q, alpha, Q @ alpha, 1 / (nu * n), 1e-10, 100_000, np.zeros(50))
    if name == "assign":
        return (rng.normal(size=(100, 4)), rng.normal(size=(5, 4)))
    raise AssertionError(name)


def _copy(args):
    return tuple(a.copy() if isinstance(a, np.ndarray) else a for a in args)


@pytest.mark.parametrize("name", sorted(kernels.IMPLEMENTATIONS))
def test_flavours_agree(name):
    jit, np_ = kernels.IMPLEMENTATIONS[name]
    args = _inputs(name, np.random.default_rng(0))
    a_args, b_args = _copy(args), _copy(args)
    a, b = jit(*a_args), np_(*b_args)
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    for u, v in zip(a, b):
        u, v = np.asarray(u), np.asarray(v)
        if u.dtype.kind in "bi":
            assert np.array_equal(u, v)
        else:
            assert np.allclose(u, v, rtol=0, atol=1e-10)
    if name == "smo":
        # in-place state (alpha, G, objective trace) must match as well
        for u, v in zip(a_args[:3] + a_args[6:], b_args[:3] + b_args[6:]):
            assert np.allclose(u, v, rtol=0, atol=1e-10)


def test_env_flag_selects_numpy():
    env = dict(os.environ, BGPAD_DISABLE_NUMBA="1")
    code = ("import bgpad, bgpad.kernels as k; "
            "print(bgpad.backend(), k.rbf_cross is k.IMPLEMENTATIONS['rbf_cross'][1])")
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert res.stdout.split() == ["numpy", "True"]
