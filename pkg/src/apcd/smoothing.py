"""Forward-backward Gaussian inference on the closed-loop model, plus an
exact dense joint-Gaussian oracle for small horizons.

The filter and smoother operate on the closed-loop systems obtained by
marginalizing the control under the prior policy; they are exact when the
emission does not depend on u (Gu = 0), which holds for the benchmark. The
oracle builds the single joint Gaussian over (x_0..x_T, u_0..u_T, z_0..z_T)
and conditions on the measurements; it is the independent reference for
smoothed marginals and for the conditional control law p(u_t | x_t, Z).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._backend import kernels
from .errors import (
    ConfigError,
    DegenerateInnovationError,
    DegeneratePropagationError,
    NumericalError,
)
from .model import AffineGaussianSystem, ChmmModel, GaussianPrior, LinearPolicy
from .model import closed_loop_emission, closed_loop_transition, sym

ORACLE_REG = 1e-14
ORACLE_MAX_DIM = 5000


@dataclass(frozen=True, eq=False)
class GaussianMarginal:
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class FilterResult:
    """Predicted/filtered marginals and per-step log-evidence increments."""

    predicted_means: np.ndarray
    predicted_covs: np.ndarray
    filtered_means: np.ndarray
    filtered_covs: np.ndarray
    loglik_steps: np.ndarray

    def predicted(self, t: int) -> GaussianMarginal:
        return GaussianMarginal(self.predicted_means[t], self.predicted_covs[t])

    def filtered(self, t: int) -> GaussianMarginal:
        return GaussianMarginal(self.filtered_means[t], self.filtered_covs[t])

    @property
    def log_evidence(self) -> float:
        return float(self.loglik_steps.sum())


def closed_loop_systems(model: ChmmModel, policy: LinearPolicy | None = None):
    """Per-step closed-loop transition/emission systems under a policy.

    Defaults to the model's prior policy.
    """
    pol = policy if policy is not None else model.prior_policy
    trans = [
        closed_loop_transition(s, *pol.step(t))
        for t, s in enumerate(model.transitions)
    ]
    emis = [
        closed_loop_emission(s, *pol.step(t)) for t, s in enumerate(model.emissions)
    ]
    return trans, emis


def _stack_systems(systems: list[AffineGaussianSystem]):
    return (
        np.stack([s.A for s in systems]),
        np.stack([s.b for s in systems]),
        np.stack([s.cov for s in systems]),
    )


def kalman_filter(
    transitions: list[AffineGaussianSystem],
    emissions: list[AffineGaussianSystem],
    prior: GaussianPrior,
    Z: np.ndarray,
) -> FilterResult:
    """Linear-Gaussian filter on the closed-loop system.

    Z is the (steps, n_z) measurement array. The log-evidence increments sum
    to log p(Z) under the closed loop.
    """
    if len(emissions) != Z.shape[0]:
        raise ConfigError("measurement length does not match emissions")
    A, b, Qc = _stack_systems(transitions)
    C, d, Rc = _stack_systems(emissions)
    pm, pP, fm, fP, ll, status, bad_t = kernels.kf_forward(
        A, b, Qc, C, d, Rc, prior.mu0, prior.sigma0, Z
    )
    if status == 1:
        raise DegenerateInnovationError(
            "innovation covariance not positive definite", step=bad_t
        )
    return FilterResult(
        predicted_means=pm,
        predicted_covs=pP,
        filtered_means=fm,
        filtered_covs=fP,
        loglik_steps=ll,
    )


def rts_smoother(
    filter_result: FilterResult, transitions: list[AffineGaussianSystem]
) -> list[GaussianMarginal]:
    """Backward smoothing pass; the last marginal equals the filtered one."""
    A = np.stack([s.A for s in transitions])
    sm, sP, status, bad_t = kernels.rts_backward(
        A,
        filter_result.filtered_means,
        filter_result.filtered_covs,
        filter_result.predicted_means,
        filter_result.predicted_covs,
    )
    if status == 2:
        raise DegeneratePropagationError(
            "predicted covariance singular in smoother", step=bad_t
        )
    return [GaussianMarginal(sm[t], sP[t]) for t in range(sm.shape[0])]


def smooth_sequence(
    model: ChmmModel, Z: np.ndarray, policy: LinearPolicy | None = None
) -> tuple[FilterResult, list[GaussianMarginal]]:
    """Filter + smooth one measurement sequence under the (prior) policy."""
    trans, emis = closed_loop_systems(model, policy)
    fr = kalman_filter(trans, emis, model.prior, Z)
    return fr, rts_smoother(fr, trans)


# ---------------------------------------------------------------------------
# Dense joint-Gaussian machinery
# ---------------------------------------------------------------------------

class GaussianChain:
    """Sequentially built joint Gaussian over affine-dependent variables.

    Each appended block is an affine function of earlier blocks plus
    independent Gaussian noise; means, cross-covariances, and the block
    covariance are filled into preallocated arrays.
    """

    def __init__(self, total_dim: int):
        self.mean = np.zeros(total_dim)
        self.cov = np.zeros((total_dim, total_dim))
        self.dim = 0

    def append(self, deps, c: np.ndarray, noise_cov: np.ndarray | None) -> slice:
        """Append a block y = sum_i L_i v_{off_i} + c + noise.

        deps is a list of (offset, L) pairs referencing earlier blocks.
        Returns the index slice of the new block.
        """
        nb = c.shape[0]
        d = self.dim
        lo, hi = d, d + nb
        m = c.copy()
        for off, L in deps:
            m += L @ self.mean[off : off + L.shape[1]]
        cross = np.zeros((nb, d))
        for off, L in deps:
            cross += L @ self.cov[off : off + L.shape[1], :d]
        block = np.zeros((nb, nb))
        for off, L in deps:
            block += cross[:, off : off + L.shape[1]] @ L.T
        if noise_cov is not None:
            block = block + noise_cov
        self.mean[lo:hi] = m
        self.cov[lo:hi, :d] = cross
        self.cov[:d, lo:hi] = cross.T
        self.cov[lo:hi, lo:hi] = sym(block)
        self.dim = hi
        return slice(lo, hi)


def _xi_chain(model: ChmmModel, policy: LinearPolicy, extra_dim: int = 0):
    """Joint Gaussian over (x_0, u_0, ..., x_T, u_T) under the given policy."""
    d = model.dims
    total = d.steps * (d.n_x + d.n_u) + extra_dim
    chain = GaussianChain(total)
    x_off = lambda t: t * (d.n_x + d.n_u)  # noqa: E731
    u_off = lambda t: x_off(t) + d.n_x  # noqa: E731
    chain.append([], model.prior.mu0, model.prior.sigma0)
    for t in range(d.steps):
        K, k, S = policy.step(t)
        chain.append([(x_off(t), K)], k, S)
        if t < d.steps - 1:
            tr = model.transitions[t]
            chain.append(
                [(x_off(t), tr.Fx), (u_off(t), tr.Fu)], tr.f, tr.Qcov
            )
    return chain, x_off, u_off


def policy_joint_xi(model: ChmmModel, policy: LinearPolicy):
    """Mean/cov of the trajectory joint p(Xi; policy); no conditioning."""
    chain, _, _ = _xi_chain(model, policy)
    return chain.mean.copy(), chain.cov.copy()


class JointGaussianOracle:
    """Exact conditional machinery from the dense trajectory joint.

    Builds p(x_0..x_T, u_0..u_T, z_0..z_T) under the prior policy,
    conditions on the measurements, and exposes smoothed marginals and the
    conditional control law. Intended for small horizons only.
    """

    def __init__(self, model: ChmmModel, Z: np.ndarray):
        d = model.dims
        total = d.steps * (d.n_x + d.n_u + d.n_z)
        if total > ORACLE_MAX_DIM:
            raise ConfigError(
                f"oracle joint dimension {total} exceeds {ORACLE_MAX_DIM}"
            )
        self.model = model
        self.n_xi_total = d.steps * (d.n_x + d.n_u)
        chain, self._x_off, self._u_off = _xi_chain(
            model, model.prior_policy, extra_dim=d.steps * d.n_z
        )
        for t in range(d.steps):
            em = model.emissions[t]
            chain.append(
                [(self._x_off(t), em.Gx), (self._u_off(t), em.Gu)], em.g, em.Rcov
            )
        nxi = self.n_xi_total
        cov = chain.cov + ORACLE_REG * np.eye(total)
        self.z_mean = chain.mean[nxi:].copy()
        self.z_cov = sym(cov[nxi:, nxi:])
        z_obs = Z.reshape(-1)
        Cxz = cov[:nxi, nxi:]
        try:
            cho = scipy.linalg.cho_factor(self.z_cov)
        except scipy.linalg.LinAlgError as exc:
            raise NumericalError("joint covariance not PD; ill-posed model") from exc
        gain = scipy.linalg.cho_solve(cho, Cxz.T).T
        self.post_mean = chain.mean[:nxi] + gain @ (z_obs - self.z_mean)
        self.post_cov = sym(cov[:nxi, :nxi] - gain @ Cxz.T)
        self._z_obs = z_obs
        self._z_cho = cho

    def xi_posterior(self):
        """Mean/cov of p(Xi | Z) over the stacked (x_t, u_t) trajectory."""
        return self.post_mean, self.post_cov

    def smoothed_marginal(self, t: int) -> GaussianMarginal:
        d = self.model.dims
        sl = slice(self._x_off(t), self._x_off(t) + d.n_x)
        return GaussianMarginal(self.post_mean[sl], sym(self.post_cov[sl, sl]))

    def control_conditional(self, t: int):
        """Exact affine-Gaussian law p(u_t | x_t, Z) as (K, k, Sigma)."""
        d = self.model.dims
        xs = slice(self._x_off(t), self._x_off(t) + d.n_x)
        us = slice(self._u_off(t), self._u_off(t) + d.n_u)
        Sxx = self.post_cov[xs, xs]
        Sux = self.post_cov[us, xs]
        Suu = self.post_cov[us, us]
        K = np.linalg.solve(Sxx, Sux.T).T
        k = self.post_mean[us] - K @ self.post_mean[xs]
        Sigma = sym(Suu - K @ Sux.T)
        return K, k, Sigma

    def log_evidence(self) -> float:
        """log p(Z) from the joint measurement marginal."""
        resid = self._z_obs - self.z_mean
        alpha = scipy.linalg.cho_solve(self._z_cho, resid)
        ldet = 2.0 * np.log(np.diag(self._z_cho[0])).sum()
        n = resid.shape[0]
        return float(-0.5 * (resid @ alpha + ldet + n * np.log(2.0 * np.pi)))


def joint_gaussian_oracle(model: ChmmModel, Z: np.ndarray) -> JointGaussianOracle:
    """Dense-conditioning oracle over the full trajectory; see the class."""
    return JointGaussianOracle(model, Z)


def reduced_indices(dims) -> np.ndarray:
    """Indices of (x_0, u_0, ..., u_T) inside the stacked Xi vector.

    For deterministic dynamics the trajectory joint is singular but its
    restriction to these coordinates is not; KL divergences between
    trajectory laws are computed there.
    """
    step = dims.n_x + dims.n_u
    idx = list(range(dims.n_x))
    for t in range(dims.steps):
        off = t * step + dims.n_x
        idx.extend(range(off, off + dims.n_u))
    return np.array(idx)


def reduced_marginal(mean: np.ndarray, cov: np.ndarray, dims):
    idx = reduced_indices(dims)
    return mean[idx], sym(cov[np.ix_(idx, idx)])


def gaussian_kl(mean0, cov0, mean1, cov1) -> float:
    """KL divergence D[N(mean0, cov0) || N(mean1, cov1)]."""
    n = mean0.shape[0]
    cho = scipy.linalg.cho_factor(cov1)
    dm = mean1 - mean0
    tr = np.trace(scipy.linalg.cho_solve(cho, cov0))
    quad = dm @ scipy.linalg.cho_solve(cho, dm)
    ldet1 = 2.0 * np.log(np.diag(cho[0])).sum()
    ldet0 = np.linalg.slogdet(cov0)[1]
    return float(0.5 * (tr + quad - n + ldet1 - ldet0))
