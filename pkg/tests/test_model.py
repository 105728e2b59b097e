import numpy as np
import pytest

from apcd.errors import SingularEmissionError
from apcd.model import (
    Dims,
    EmissionStep,
    GaussianPrior,
    LinearPolicy,
    TransitionStep,
    build_model,
    chol_psd,
    closed_loop_emission,
    closed_loop_transition,
    is_pd,
    is_psd,
    model_from_json,
    model_to_json,
    obs_loglik_quadratic,
    validate_model,
)


def make_small_model(steps=4, time_varying=False):
    dims = Dims(n_x=2, n_u=1, n_z=1, steps=steps, dt=0.1)
    prior = GaussianPrior(mu0=np.zeros(2), sigma0=np.eye(2))
    tr = TransitionStep(
        Fx=np.array([[1.0, 0.1], [0.0, 1.0]]),
        Fu=np.array([[0.0], [0.1]]),
        f=np.zeros(2),
        Qcov=0.01 * np.eye(2),
    )
    em = EmissionStep(
        Gx=np.array([[1.0, 0.0]]),
        Gu=np.zeros((1, 1)),
        g=np.zeros(1),
        Rcov=np.array([[0.5]]),
    )
    pol = LinearPolicy.constant(steps, np.zeros((1, 2)), np.zeros(1), np.eye(1))
    if time_varying:
        trs = [
            TransitionStep(Fx=tr.Fx, Fu=tr.Fu, f=np.array([0.0, 0.01 * t]), Qcov=tr.Qcov)
            for t in range(steps - 1)
        ]
        return build_model(dims, prior, trs, em, pol)
    return build_model(dims, prior, tr, em, pol)


class TestPsdHelpers:
    def test_psd_accepts_semidefinite(self):
        a = np.diag([1.0, 0.0])
        assert is_psd(a)
        assert not is_pd(a)

    def test_psd_rejects_indefinite(self):
        assert not is_psd(np.diag([1.0, -1e-3]))

    def test_chol_psd_semidefinite_factor(self):
        a = np.array([[4.0, 0.0], [0.0, 0.0]])
        L = chol_psd(a)
        np.testing.assert_allclose(L @ L.T, a, atol=1e-12)


class TestValidate:
    def test_valid_model_empty_report(self):
        assert validate_model(make_small_model()) == []

    def test_bad_qcov_reported_with_step(self):
        m = make_small_model()
        bad = TransitionStep(
            Fx=m.transitions[0].Fx,
            Fu=m.transitions[0].Fu,
            f=m.transitions[0].f,
            Qcov=np.diag([1.0, -1.0]),
        )
        trs = list(m.transitions)
        trs[1] = bad
        m2 = build_model(m.dims, m.prior, trs, m.emissions, m.prior_policy)
        report = validate_model(m2)
        assert any("Qcov" in r and "t=1" in r for r in report)

    def test_length_mismatch_reported(self):
        m = make_small_model()
        m2 = build_model(
            m.dims, m.prior, m.transitions[:-1], m.emissions, m.prior_policy
        )
        assert any("transitions length" in r for r in validate_model(m2))


class TestObsQuadratic:
    def test_matches_density_up_to_constant(self, rng):
        m = make_small_model()
        em = m.emissions[0]
        z = rng.standard_normal(1)
        q = obs_loglik_quadratic(em, z)
        Rinv = np.linalg.inv(em.Rcov)

        def neg_loglik(xi):
            r = em.Gxi @ xi + em.g - z
            return 0.5 * float(r @ Rinv @ r)

        xi0 = rng.standard_normal(3)
        base = neg_loglik(xi0) - (0.5 * xi0 @ q.Rxixi @ xi0 + q.Rxi @ xi0)
        for _ in range(10):
            xi = rng.standard_normal(3)
            quad = 0.5 * xi @ q.Rxixi @ xi + q.Rxi @ xi
            assert neg_loglik(xi) - quad == pytest.approx(base, abs=1e-10)

    def test_singular_emission_raises(self):
        em = EmissionStep(
            Gx=np.array([[1.0, 0.0]]),
            Gu=np.zeros((1, 1)),
            g=np.zeros(1),
            Rcov=np.zeros((1, 1)),
        )
        with pytest.raises(SingularEmissionError):
            obs_loglik_quadratic(em, np.zeros(1))


class TestClosedLoop:
    def test_transition_marginalization(self, rng):
        m = make_small_model()
        tr = m.transitions[0]
        K = rng.standard_normal((1, 2))
        k = rng.standard_normal(1)
        S = np.array([[0.3]])
        sys = closed_loop_transition(tr, K, k, S)
        # moments of x' = Fx x + Fu(Kx + k + noise) + f + q
        np.testing.assert_allclose(sys.A, tr.Fx + tr.Fu @ K)
        np.testing.assert_allclose(sys.b, tr.Fu @ k + tr.f)
        np.testing.assert_allclose(sys.cov, tr.Qcov + tr.Fu @ S @ tr.Fu.T)

    def test_emission_marginalization(self, rng):
        m = make_small_model()
        em = m.emissions[0]
        K = rng.standard_normal((1, 2))
        sys = closed_loop_emission(em, K, np.zeros(1), np.eye(1))
        np.testing.assert_allclose(sys.A, em.Gx + em.Gu @ K)


class TestJsonRoundTrip:
    @pytest.mark.parametrize("time_varying", [False, True])
    def test_round_trip(self, time_varying):
        m = make_small_model(time_varying=time_varying)
        doc = model_to_json(m)
        m2 = model_from_json(doc)
        assert m2.dims == m.dims
        for a, b in zip(m.transitions, m2.transitions):
            np.testing.assert_array_equal(a.Fx, b.Fx)
            np.testing.assert_array_equal(a.f, b.f)
        np.testing.assert_array_equal(m.prior_policy.K, m2.prior_policy.K)
        assert doc["transitions"]["broadcast"] is (not time_varying)
