"""Self-verification suites: random model generation, oracle-equivalence
checks, and finite-difference projection-optimality checks.

These back the `oracle-check` command and the acceptance tests. Each check
returns a scalar error measure; the suite wraps them with tolerances into a
pass/fail report.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .extraction import extract_natural, extract_vanilla
from .model import (
    ChmmModel,
    Dims,
    EmissionStep,
    GaussianPrior,
    LinearPolicy,
    TransitionStep,
    build_model,
    sym,
)
from .simulator import NoiseBank, simulate
from .smoothing import (
    gaussian_kl,
    joint_gaussian_oracle,
    policy_joint_xi,
    reduced_marginal,
    smooth_sequence,
)

JOINT_REG = 1e-12


def random_spd(dim: int, rng, scale: float = 1.0) -> np.ndarray:
    L = rng.standard_normal((dim, dim))
    return sym(scale * (L @ L.T / dim + 0.1 * np.eye(dim)))


def random_model(
    rng,
    n_x: int | None = None,
    n_u: int | None = None,
    n_z: int | None = None,
    steps: int | None = None,
    gu_zero: bool = False,
    deterministic: bool = False,
    qcov_scale: float = 0.1,
) -> ChmmModel:
    """Random stable time-invariant model with a stochastic prior policy.

    gu_zero removes the control feedthrough in the emission (required for
    closed-loop filtering to be exact); deterministic zeroes the process
    noise.
    """
    n_x = n_x if n_x is not None else int(rng.integers(1, 4))
    n_u = n_u if n_u is not None else int(rng.integers(1, 3))
    n_z = n_z if n_z is not None else int(rng.integers(1, 3))
    steps = steps if steps is not None else int(rng.integers(3, 8))
    dims = Dims(n_x=n_x, n_u=n_u, n_z=n_z, steps=steps, dt=0.1)

    Fx = rng.standard_normal((n_x, n_x))
    rad = np.abs(np.linalg.eigvals(Fx)).max()
    if rad > 0:
        Fx *= (0.5 + 0.4 * rng.random()) / rad
    Fu = rng.standard_normal((n_x, n_u))
    f = 0.1 * rng.standard_normal(n_x)
    Qcov = np.zeros((n_x, n_x)) if deterministic else random_spd(n_x, rng, qcov_scale)
    transition = TransitionStep(Fx=Fx, Fu=Fu, f=f, Qcov=Qcov)

    Gx = rng.standard_normal((n_z, n_x))
    Gu = np.zeros((n_z, n_u)) if gu_zero else 0.5 * rng.standard_normal((n_z, n_u))
    g = 0.1 * rng.standard_normal(n_z)
    emission = EmissionStep(Gx=Gx, Gu=Gu, g=g, Rcov=random_spd(n_z, rng, 0.5))

    prior = GaussianPrior(
        mu0=rng.standard_normal(n_x), sigma0=random_spd(n_x, rng, 0.5)
    )
    policy = LinearPolicy.constant(
        steps,
        0.3 * rng.standard_normal((n_u, n_x)),
        0.1 * rng.standard_normal(n_u),
        random_spd(n_u, rng, 0.5),
    )
    return build_model(dims, prior, transition, emission, policy)


def random_measurements(model: ChmmModel, rng) -> np.ndarray:
    """One measurement sequence simulated under the prior policy."""
    bank = NoiseBank(int(rng.integers(2**31)), model.dims, 1)
    _, meas = simulate(model, model.prior_policy, bank, 0)
    return meas.z


def _rel(err: float, scale: float) -> float:
    return err / max(scale, 1e-12)


def oracle_conditional_error(model: ChmmModel, Z: np.ndarray) -> float:
    """Max relative deviation of the extracted N=1 policy from the exact
    conditional control law p(u_t | x_t, Z) of the joint-Gaussian oracle."""
    mix = extract_vanilla(model, [Z])
    pol = mix.components[0]
    oracle = joint_gaussian_oracle(model, Z)
    worst = 0.0
    for t in range(model.dims.steps):
        K, k, S = oracle.control_conditional(t)
        worst = max(
            worst,
            _rel(np.abs(pol.K[t] - K).max(), np.abs(K).max()),
            _rel(np.abs(pol.k[t] - k).max(), np.abs(k).max()),
            _rel(np.abs(pol.S[t] - S).max(), np.abs(S).max()),
        )
    return worst


def smoother_error(model: ChmmModel, Z: np.ndarray) -> float:
    """Max relative deviation of the RTS smoothed marginals from the oracle.

    Exact only when the emission has no control feedthrough (Gu = 0).
    """
    _, smoothed = smooth_sequence(model, Z)
    oracle = joint_gaussian_oracle(model, Z)
    worst = 0.0
    for t, marg in enumerate(smoothed):
        ref = oracle.smoothed_marginal(t)
        worst = max(
            worst,
            _rel(np.abs(marg.mean - ref.mean).max(), np.abs(ref.mean).max()),
            _rel(np.abs(marg.cov - ref.cov).max(), np.abs(ref.cov).max()),
        )
    return worst


# ---------------------------------------------------------------------------
# Projection optimality via finite differences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KlObjective:
    """KL between the conditioned trajectory law and the policy-induced one.

    direction 'posterior-policy' is D[p(Xi|Z) || p(Xi; policy)]; the reverse
    is 'policy-posterior'. With reduced=True both laws are restricted to the
    (x_0, u_0..u_T) coordinates, which stay non-singular for deterministic
    dynamics.
    """

    model: ChmmModel
    Z: np.ndarray
    direction: str
    reduced: bool = False

    def __post_init__(self):
        oracle = joint_gaussian_oracle(self.model, self.Z)
        mean, cov = oracle.xi_posterior()
        object.__setattr__(self, "_p", self._restrict(mean, cov))

    def _restrict(self, mean, cov):
        if self.reduced:
            mean, cov = reduced_marginal(mean, cov, self.model.dims)
        return mean, sym(cov) + JOINT_REG * np.eye(mean.shape[0])

    def __call__(self, policy: LinearPolicy) -> float:
        q = self._restrict(*policy_joint_xi(self.model, policy))
        p = self._p
        if self.direction == "posterior-policy":
            return gaussian_kl(p[0], p[1], q[0], q[1])
        if self.direction == "policy-posterior":
            return gaussian_kl(q[0], q[1], p[0], p[1])
        raise ValueError(f"unknown direction {self.direction!r}")


def _perturbed(policy: LinearPolicy, t: int, which: str, idx, delta: float):
    K, k = policy.K.copy(), policy.k.copy()
    if which == "K":
        K[t][idx] += delta
    else:
        k[t][idx] += delta
    return LinearPolicy(K=K, k=k, S=policy.S)


def kl_gradient_norm(objective: KlObjective, policy: LinearPolicy, eps: float = 1e-5):
    """Relative norm of the central-difference KL gradient over all (K, k).

    Normalized by the largest central second difference (curvature scale),
    so a stationary point reads as a small number regardless of units.
    """
    base = objective(policy)
    grads, curvs = [], []
    for t in range(policy.steps):
        entries = [("K", (i, j)) for i in range(policy.K.shape[1])
                   for j in range(policy.K.shape[2])]
        entries += [("k", (i,)) for i in range(policy.k.shape[1])]
        for which, idx in entries:
            hi = objective(_perturbed(policy, t, which, idx, eps))
            lo = objective(_perturbed(policy, t, which, idx, -eps))
            grads.append((hi - lo) / (2.0 * eps))
            curvs.append((hi - 2.0 * base + lo) / eps**2)
    gnorm = float(np.linalg.norm(grads))
    scale = max(float(np.abs(np.array(curvs)).max(initial=0.0)), 1e-12)
    return gnorm / scale


def perturbation_increases(
    objective: KlObjective, policy: LinearPolicy, rng, trials: int = 20,
    scale: float = 1e-2,
) -> bool:
    """True iff every random (K, k) perturbation increases the divergence."""
    base = objective(policy)
    for _ in range(trials):
        K = policy.K + scale * rng.standard_normal(policy.K.shape)
        k = policy.k + scale * rng.standard_normal(policy.k.shape)
        if objective(LinearPolicy(K=K, k=k, S=policy.S)) <= base:
            return False
    return True


def mprojection_check(model: ChmmModel, Z: np.ndarray, rng):
    """Stationarity of D[p(Xi|Z) || p(Xi; pi)] at the extracted policy."""
    mix = extract_vanilla(model, [Z])
    pol = mix.components[0]
    obj = KlObjective(model, Z, "posterior-policy")
    return kl_gradient_norm(obj, pol), perturbation_increases(obj, pol, rng)


def iprojection_check(model: ChmmModel, Z: np.ndarray, rng):
    """Stationarity of D[p(Xi; pi) || p(Xi|Z)] for the likelihood-space
    recursion on a deterministic-dynamics model, in reduced coordinates."""
    pol = extract_natural(model, [Z])
    obj = KlObjective(model, Z, "policy-posterior", reduced=True)
    return kl_gradient_norm(obj, pol), perturbation_increases(obj, pol, rng)


# ---------------------------------------------------------------------------
# Suite runner
# ---------------------------------------------------------------------------

@dataclass
class CheckReport:
    name: str
    passed: bool
    worst: float
    tolerance: float
    trials: int

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"[{status}] {self.name}: worst {self.worst:.3e}"
            f" (tol {self.tolerance:.0e}, {self.trials} trials)"
        )


def run_oracle_suite(
    trials: int = 50, steps: int | None = None, seed: int = 0
) -> list[CheckReport]:
    """Oracle-equivalence and projection-optimality checks on random models."""
    rng = np.random.default_rng(seed)
    kw = {"steps": steps} if steps is not None else {}

    worst_cond = 0.0
    for _ in range(trials):
        m = random_model(rng, **kw)
        worst_cond = max(worst_cond, oracle_conditional_error(m, random_measurements(m, rng)))

    worst_smooth = 0.0
    for _ in range(trials):
        m = random_model(rng, gu_zero=True, **kw)
        worst_smooth = max(worst_smooth, smoother_error(m, random_measurements(m, rng)))

    proj_trials = max(3, trials // 10)
    worst_m, m_incr = 0.0, True
    for _ in range(proj_trials):
        m = random_model(rng, steps=steps or 4)
        g, incr = mprojection_check(m, random_measurements(m, rng), rng)
        worst_m = max(worst_m, g)
        m_incr = m_incr and incr

    worst_i, i_incr = 0.0, True
    for _ in range(proj_trials):
        m = random_model(rng, steps=steps or 4, deterministic=True)
        g, incr = iprojection_check(m, random_measurements(m, rng), rng)
        worst_i = max(worst_i, g)
        i_incr = i_incr and incr

    return [
        CheckReport("conditional-control vs dense oracle", worst_cond <= 1e-8,
                    worst_cond, 1e-8, trials),
        CheckReport("smoothed marginals vs dense oracle", worst_smooth <= 1e-10,
                    worst_smooth, 1e-10, trials),
        CheckReport("moment-projection stationarity", worst_m <= 1e-5 and m_incr,
                    worst_m, 1e-5, proj_trials),
        CheckReport("information-projection stationarity", worst_i <= 1e-5 and i_incr,
                    worst_i, 1e-5, proj_trials),
    ]
