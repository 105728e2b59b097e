import numpy as np
import pytest

from apcd.checks import random_measurements, random_model
from apcd.errors import ConfigError
from apcd.extraction import (
    extract_natural,
    extract_vanilla,
    extract_vanilla_reference,
    load_policy,
    observation_quadratics,
    policy_from_json,
    policy_to_json,
    save_policy,
)
from apcd.model import LinearPolicy


@pytest.fixture
def model(rng):
    return random_model(rng, steps=6, gu_zero=True)


@pytest.fixture
def sequences(model, rng):
    return [random_measurements(model, rng) for _ in range(3)]


class TestBatchKernel:
    def test_matches_stepwise_reference(self, model, sequences):
        Z = sequences[0]
        ref = extract_vanilla_reference(model, Z)
        mix = extract_vanilla(model, [Z])
        got = mix.components[0]
        np.testing.assert_allclose(got.K, ref.K, atol=1e-10)
        np.testing.assert_allclose(got.k, ref.k, atol=1e-10)
        np.testing.assert_allclose(got.S, ref.S, atol=1e-10)

    def test_natural_equals_vanilla_for_deterministic(self, rng):
        model = random_model(rng, steps=5, deterministic=True)
        Z = random_measurements(model, rng)
        van = extract_vanilla(model, [Z]).components[0]
        nat = extract_natural(model, [Z])
        np.testing.assert_allclose(nat.K, van.K, atol=1e-8)
        np.testing.assert_allclose(nat.k, van.k, atol=1e-8)

    def test_empty_sequence_list(self, model):
        with pytest.raises(ConfigError):
            extract_vanilla(model, [])
        with pytest.raises(ConfigError):
            extract_natural(model, [])


class TestObservationQuadratics:
    def test_quadratic_term_sequence_independent(self, model, sequences):
        _, R1 = observation_quadratics(model, sequences[0])
        _, R2 = observation_quadratics(model, sequences[1])
        np.testing.assert_array_equal(R1, R2)


class TestMixture:
    def test_weights_sum_to_one(self, model, sequences, rng):
        mix = extract_vanilla(model, sequences)
        for t in (0, model.dims.steps - 1):
            w = mix.weights(t, rng.standard_normal(model.dims.n_x))
            assert w.shape == (3,)
            assert w.sum() == pytest.approx(1.0, abs=1e-12)
            assert (w >= 0).all()

    def test_mean_is_convex_combination(self, model, sequences):
        mix = extract_vanilla(model, sequences)
        x = mix.weight_means[0, 2]
        u = mix.mean(2, x)
        comps = np.stack([c.mean(2, x) for c in mix.components])
        assert (u >= comps.min(axis=0) - 1e-12).all()
        assert (u <= comps.max(axis=0) + 1e-12).all()


class TestPriorRecovery:
    def test_uninformative_measurements_recover_prior(self, rng):
        model = random_model(rng, steps=5, gu_zero=True)
        scaled = [
            type(e)(Gx=e.Gx, Gu=e.Gu, g=e.g, Rcov=1e12 * e.Rcov)
            for e in model.emissions
        ]
        from apcd.model import build_model

        m2 = build_model(
            model.dims, model.prior, list(model.transitions), scaled,
            model.prior_policy,
        )
        Z = random_measurements(model, rng)
        pol = extract_vanilla(m2, [Z]).components[0]
        prior = m2.prior_policy
        np.testing.assert_allclose(pol.K, prior.K, atol=1e-4)
        np.testing.assert_allclose(pol.S, prior.S, atol=1e-4)


class TestNaturalAveraging:
    def test_natural_uses_mean_quadratic(self, model, sequences):
        nat = extract_natural(model, sequences)
        z_mean = np.mean(np.stack(sequences), axis=0)
        # Rxi is linear in z, so averaging sequences equals averaging z.
        nat_mean_z = extract_natural(model, [z_mean])
        np.testing.assert_allclose(nat.K, nat_mean_z.K, atol=1e-10)
        np.testing.assert_allclose(nat.k, nat_mean_z.k, atol=1e-10)


class TestSerialization:
    def test_linear_round_trip(self, model, sequences, tmp_path):
        pol = extract_natural(model, sequences)
        save_policy(tmp_path / "p.json", pol)
        back = load_policy(tmp_path / "p.json")
        assert isinstance(back, LinearPolicy)
        np.testing.assert_array_equal(back.K, pol.K)
        np.testing.assert_array_equal(back.S, pol.S)

    def test_mixture_round_trip(self, model, sequences, tmp_path):
        mix = extract_vanilla(model, sequences)
        save_policy(tmp_path / "m.json", mix)
        back = load_policy(tmp_path / "m.json")
        assert back.n_components == mix.n_components
        np.testing.assert_array_equal(back.weight_means, mix.weight_means)
        for a, b in zip(back.components, mix.components):
            np.testing.assert_array_equal(a.K, b.K)

    def test_bad_schema_rejected(self):
        with pytest.raises(ConfigError):
            policy_from_json({"schema": "nope", "kind": "linear"})

    def test_json_kind_tags(self, model, sequences):
        assert policy_to_json(extract_natural(model, sequences))["kind"] == "linear"
        assert policy_to_json(extract_vanilla(model, sequences))["kind"] == "mixture"
