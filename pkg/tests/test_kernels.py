import importlib
import os
import subprocess
import sys

import numpy as np
import pytest

from causalot import kernels
from causalot.simplex import dense_to_csc

cy = kernels.backend_module("cython")
py = kernels.backend_module("python")


def test_compiled_backend_is_default():
    assert kernels.BACKEND == "cython"


def test_env_forces_fallback():
    code = "from causalot import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, CAUSALOT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("first", [True, False])
def test_price_agrees(first):
    rng = np.random.default_rng(0)
    A = rng.normal(size=(20, 50)) * (rng.uniform(size=(20, 50)) < 0.3)
    colptr, rowind, vals, _ = dense_to_csc(A)
    c = rng.normal(size=50)
    y = rng.normal(size=20)
    elig = (rng.uniform(size=50) < 0.8).astype(np.uint8)
    for start, end in [(0, 50), (10, 30), (49, 50)]:
        a = cy.price(colptr, rowind, vals, c, y, elig, start, end, 1e-10, first)
        b = py.price(colptr, rowind, vals, c, y, elig, start, end, 1e-10, first)
        assert a[0] == b[0]
        assert a[1] == pytest.approx(b[1], abs=1e-12)
        if a[0] >= 0:
            assert a[1] == pytest.approx(c[a[0]] - A[:, a[0]] @ y)


@pytest.mark.parametrize("bland", [True, False])
def test_ratio_test_agrees(bland):
    rng = np.random.default_rng(1)
    for _ in range(50):
        xb = np.round(rng.uniform(0, 2, 15), 1)  # rounding creates ties
        d = np.round(rng.normal(size=15), 1)
        basis = rng.permutation(100)[:15].astype(np.int64)
        assert cy.ratio_test(xb, d, basis, 1e-9, bland) == py.ratio_test(xb, d, basis, 1e-9, bland)
    assert py.ratio_test(np.ones(3), -np.ones(3), np.arange(3), 1e-9, bland) == -1


def test_eta_update_agrees_and_inverts():
    rng = np.random.default_rng(2)
    B = rng.normal(size=(6, 6)) + 6 * np.eye(6)
    binv = np.linalg.inv(B)
    a = rng.normal(size=6)
    d = binv @ a
    r = 2
    b1, b2 = binv.copy(), binv.copy()
    cy.eta_update(b1, d, r)
    py.eta_update(b2, d, r)
    np.testing.assert_allclose(b1, b2, atol=1e-14)
    B[:, r] = a
    np.testing.assert_allclose(b1, np.linalg.inv(B), atol=1e-10)


def test_bessel_paths_agree():
    rng = np.random.default_rng(3)
    dt = 1e-3
    dB = rng.normal(scale=np.sqrt(dt), size=(200, 100))
    pool = rng.normal(size=(200, 256))
    R1, s1 = cy.bessel_paths(0.1, dt, dB, pool)
    R2, s2 = py.bessel_paths(0.1, dt, dB, pool)
    np.testing.assert_allclose(R1, R2, rtol=1e-12)
    np.testing.assert_array_equal(s1, s2)
    assert np.all(R1 > 0)
    assert s1.sum() > 0


def test_bessel_large_radius_is_plain_euler():
    dt = 1e-3
    dB = np.full((1, 3), 0.01)
    R, s = py.bessel_paths(5.0, dt, dB, np.zeros((1, 256)))
    r = 5.0
    for k in range(3):
        r = r + dt / r + 0.01
        assert R[0, k + 1] == pytest.approx(r)
    assert s[0] == 0
