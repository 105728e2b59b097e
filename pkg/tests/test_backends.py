"""Compiled and pure-numpy kernels must agree bit-for-bit in behavior.

Skipped entirely when the compiled extension is unavailable.
"""

import numpy as np
import pytest

from apcd._backend import get_kernels
from apcd.checks import random_measurements, random_model
from apcd.extraction import observation_quadratics
from apcd.model import LinearPolicy
from apcd.simulator import NoiseBank
from apcd.smoothing import _stack_systems, closed_loop_systems

try:
    compiled = get_kernels("compiled")
except ImportError:  # pragma: no cover
    compiled = None

pure = get_kernels("python")

pytestmark = pytest.mark.skipif(
    compiled is None, reason="compiled extension not built"
)


@pytest.fixture
def model(rng):
    return random_model(rng, steps=6, gu_zero=True)


def test_backend_names():
    assert pure.BACKEND_NAME == "python"
    assert compiled.BACKEND_NAME == "compiled"


def test_rollout_linear_agrees(model, rng):
    d = model.dims
    Fx, Fu, f, _ = model.stacked_transitions()
    Lq = np.stack([np.linalg.cholesky(s.Qcov) for s in model.transitions])
    pol = model.prior_policy
    Ls = np.stack([np.linalg.cholesky(pol.S[t]) for t in range(d.steps)])
    bank = NoiseBank(5, d, 1)
    x0 = rng.standard_normal(d.n_x)
    args = (Fx, Fu, f, Lq, pol.K, pol.k, Ls, x0, bank.e_q[0], bank.e_s[0])
    sc, cc = compiled.rollout_linear(*args)
    sp, cp = pure.rollout_linear(*args)
    np.testing.assert_allclose(sc, sp, atol=1e-13)
    np.testing.assert_allclose(cc, cp, atol=1e-13)


def test_rollout_mixture_agrees(model, rng):
    from apcd.extraction import extract_vanilla

    seqs = [random_measurements(model, rng) for _ in range(2)]
    mix = extract_vanilla(model, seqs)
    d = model.dims
    Fx, Fu, f, _ = model.stacked_transitions()
    Lq = np.stack([np.linalg.cholesky(s.Qcov) for s in model.transitions])
    Ks, ks, wmean, wprec, wlogn = mix.rollout_data()
    bank = NoiseBank(6, d, 1)
    x0 = rng.standard_normal(d.n_x)
    args = (Fx, Fu, f, Lq, Ks, ks, wmean, wprec, wlogn, x0, bank.e_q[0])
    out_c = compiled.rollout_mixture(*args)
    out_p = pure.rollout_mixture(*args)
    for a, b in zip(out_c, out_p):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_filter_smoother_agree(model, rng):
    Z = random_measurements(model, rng)
    trans, emis = closed_loop_systems(model)
    A, b, Qc = _stack_systems(trans)
    C, d, Rc = _stack_systems(emis)
    args = (A, b, Qc, C, d, Rc, model.prior.mu0, model.prior.sigma0, Z)
    out_c = compiled.kf_forward(*args)
    out_p = pure.kf_forward(*args)
    for a_, b_ in zip(out_c[:5], out_p[:5]):
        np.testing.assert_allclose(a_, b_, atol=1e-11)
    assert out_c[5] == out_p[5]

    sm_c = compiled.rts_backward(A, *out_c[2:4], *out_c[0:2])
    sm_p = pure.rts_backward(A, *out_p[2:4], *out_p[0:2])
    np.testing.assert_allclose(sm_c[0], sm_p[0], atol=1e-11)
    np.testing.assert_allclose(sm_c[1], sm_p[1], atol=1e-11)


def test_backward_extract_agrees(model, rng):
    Z = random_measurements(model, rng)
    Rxi, Rxixi = observation_quadratics(model, Z)
    Fx, Fu, f, Qcov = model.stacked_transitions()
    pol = model.prior_policy
    for natural in (0, 1):
        args = (Fx, Fu, f, Qcov, Rxi, Rxixi, pol.K, pol.k, pol.S, natural)
        out_c = compiled.backward_extract(*args)
        out_p = pure.backward_extract(*args)
        for a, b in zip(out_c[:5], out_p[:5]):
            np.testing.assert_allclose(a, b, atol=1e-10)
        assert out_c[5] == out_p[5] == 0
