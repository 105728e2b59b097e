"""Policy extraction from measurement sequences: the vanilla and natural
backward recursions in their linear-Gaussian closed forms.

Both recursions share the policy and value updates; they differ only in how
the next-step value is propagated into the Q-function. The vanilla flavor
multiplies in probability space, so the propagation is damped by the
process noise through (I + Vxx Qcov)^-1; the natural flavor adds in
likelihood space and is independent of Qcov. The two coincide for
deterministic dynamics.

For N > 1 sequences the vanilla result is a mixture of per-sequence
policies weighted by the smoothed state marginals p(x_t | Z^n); the natural
result stays a single linear-Gaussian policy driven by the averaged
observation quadratics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import (
    ConfigError,
    DegeneratePropagationError,
    IndefiniteQError,
)
from .model import (
    ChmmModel,
    LinearPolicy,
    ObsQuadratic,
    TransitionStep,
    obs_loglik_quadratic,
    sym,
)
from .smoothing import GaussianMarginal, smooth_sequence

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class QuadraticValue:
    """Value quadratic 0.5 x'Vxx x + Vx'x (+ const, untracked)."""

    Vx: np.ndarray
    Vxx: np.ndarray

    @staticmethod
    def zero(n_x: int) -> "QuadraticValue":
        return QuadraticValue(Vx=np.zeros(n_x), Vxx=np.zeros((n_x, n_x)))


@dataclass(frozen=True, eq=False)
class QuadraticQ:
    """Q quadratic 0.5 xi'Qxixi xi + Qxi'xi with named (x, u) blocks."""

    Qxi: np.ndarray
    Qxixi: np.ndarray
    n_x: int

    @property
    def Qx(self):
        return self.Qxi[: self.n_x]

    @property
    def Qu(self):
        return self.Qxi[self.n_x :]

    @property
    def Qxx(self):
        return self.Qxixi[: self.n_x, : self.n_x]

    @property
    def Qux(self):
        return self.Qxixi[self.n_x :, : self.n_x]

    @property
    def Quu(self):
        return self.Qxixi[self.n_x :, self.n_x :]


class MixturePolicy:
    """N-component extracted policy with state-dependent smoothed weights."""

    def __init__(
        self,
        components: list[LinearPolicy],
        weight_means: np.ndarray,
        weight_covs: np.ndarray,
    ):
        if len(components) < 1:
            raise ConfigError("mixture needs at least one component")
        if weight_means.shape[0] != len(components):
            raise ConfigError("one weight-marginal track per component required")
        self.components = components
        self.weight_means = weight_means
        self.weight_covs = weight_covs
        self._rollout_cache = None

    @classmethod
    def from_marginals(
        cls,
        components: list[LinearPolicy],
        weight_marginals: list[list[GaussianMarginal]],
    ) -> "MixturePolicy":
        means = np.stack(
            [np.stack([g.mean for g in track]) for track in weight_marginals]
        )
        covs = np.stack(
            [np.stack([g.cov for g in track]) for track in weight_marginals]
        )
        return cls(components, means, covs)

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def steps(self) -> int:
        return self.components[0].steps

    def rollout_data(self):
        """Stacked arrays for the mixture rollout kernel (cached)."""
        if self._rollout_cache is None:
            Ks = np.stack([c.K for c in self.components])
            ks = np.stack([c.k for c in self.components])
            prec = np.linalg.inv(self.weight_covs)
            prec = 0.5 * (prec + np.swapaxes(prec, -1, -2))
            sign, logdet = np.linalg.slogdet(self.weight_covs)
            if np.any(sign <= 0):
                raise ConfigError("weight marginal covariance not PD")
            wlogn = -0.5 * logdet
            self._rollout_cache = (Ks, ks, self.weight_means, prec, wlogn)
        return self._rollout_cache

    def weights(self, t: int, x: np.ndarray) -> np.ndarray:
        """Smoothed-marginal responsibilities at (t, x); sum to one."""
        _, _, means, prec, wlogn = self.rollout_data()
        dx = x - means[:, t]
        lw = wlogn[:, t] - 0.5 * np.einsum("ni,nij,nj->n", dx, prec[:, t], dx)
        m = lw.max()
        if np.isfinite(m):
            w = np.exp(lw - m)
            s = w.sum()
            if s > 0:
                return w / s
        logger.warning("mixture weights underflowed at t=%d; uniform fallback", t)
        return np.full(self.n_components, 1.0 / self.n_components)

    def mean(self, t: int, x: np.ndarray) -> np.ndarray:
        return mixture_mean_control(self, t, x)


def mixture_mean_control(mix: MixturePolicy, t: int, x: np.ndarray) -> np.ndarray:
    """Responsibility-weighted mean control of the mixture at (t, x)."""
    w = mix.weights(t, x)
    u = np.zeros(mix.components[0].k.shape[1])
    for n, comp in enumerate(mix.components):
        u += w[n] * comp.mean(t, x)
    return u


# ---------------------------------------------------------------------------
# Per-step updates (reference implementations; the batch recursion in the
# kernels must agree with composing these).
# ---------------------------------------------------------------------------

def policy_from_q(K, k, S, q: QuadraticQ):
    """Posterior policy (K*, k*, Sigma*) from the prior step and Q-function.

    Sigma* = (S^-1 + Quu)^-1, K* = Sigma*(S^-1 K - Qux),
    k* = Sigma*(S^-1 k - Qu).
    """
    n_u = K.shape[0]
    Sinv = sym(np.linalg.solve(S, np.eye(n_u)))
    A = sym(Sinv + q.Quu)
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise IndefiniteQError("S^-1 + Quu not positive definite") from exc
    Sigma = sym(np.linalg.solve(A, np.eye(n_u)))
    Kst = Sigma @ (Sinv @ K - q.Qux)
    kst = Sigma @ (Sinv @ k - q.Qu)
    return Kst, kst, Sigma


def value_from_q(K, k, S, Kst, kst, Sigma, q: QuadraticQ) -> QuadraticValue:
    """Value update shared by both recursions.

    Vx = Qx + K'S^-1 k - K*'Sigma*^-1 k*, and likewise for Vxx; computed in
    the solved form a' Sigma* a to avoid inverting Sigma*.
    """
    n_u = K.shape[0]
    Sinv = sym(np.linalg.solve(S, np.eye(n_u)))
    a_k = Sinv @ k - q.Qu
    a_K = Sinv @ K - q.Qux
    Vx = q.Qx + K.T @ (Sinv @ k) - a_K.T @ (Sigma @ a_k)
    Vxx = sym(q.Qxx + K.T @ Sinv @ K - a_K.T @ Sigma @ a_K)
    return QuadraticValue(Vx=Vx, Vxx=Vxx)


def vanilla_q_update(
    step: TransitionStep, obs: ObsQuadratic, v_next: QuadraticValue
) -> QuadraticQ:
    """Probability-space propagation of the next value through the dynamics.

    Uses the solve form (I + Vxx Qcov)^-1 Vxx, which equals
    (Vxx^-1 + Qcov)^-1 whenever Vxx is invertible but stays defined for
    singular Vxx (first backward steps under partial observation).
    """
    n_x = step.Fx.shape[0]
    Fxi = step.Fxi
    M = np.eye(n_x) + v_next.Vxx @ step.Qcov
    try:
        lam = sym(np.linalg.solve(M, v_next.Vxx))
        vec = np.linalg.solve(M, v_next.Vxx @ step.f + v_next.Vx)
    except np.linalg.LinAlgError as exc:
        raise DegeneratePropagationError("value propagation singular") from exc
    return QuadraticQ(
        Qxi=obs.Rxi + Fxi.T @ vec,
        Qxixi=sym(obs.Rxixi + Fxi.T @ lam @ Fxi),
        n_x=n_x,
    )


def natural_q_update(
    step: TransitionStep, obs_mean: ObsQuadratic, v_next: QuadraticValue
) -> QuadraticQ:
    """Likelihood-space propagation; independent of the process noise.

    obs_mean must be the arithmetic mean of the per-sequence observation
    quadratics when extracting from N > 1 sequences.
    """
    n_x = step.Fx.shape[0]
    Fxi = step.Fxi
    return QuadraticQ(
        Qxi=obs_mean.Rxi + Fxi.T @ (v_next.Vxx @ step.f + v_next.Vx),
        Qxixi=sym(obs_mean.Rxixi + Fxi.T @ v_next.Vxx @ Fxi),
        n_x=n_x,
    )


# ---------------------------------------------------------------------------
# Full-horizon extraction
# ---------------------------------------------------------------------------

def _as_z(sequence) -> np.ndarray:
    z = getattr(sequence, "z", sequence)
    return np.asarray(z, dtype=float)


def observation_quadratics(model: ChmmModel, Z: np.ndarray):
    """Stacked (Rxi, Rxixi) for one sequence; Rxixi is sequence-independent."""
    steps = model.dims.steps
    n_xi = model.dims.n_xi
    Rxi = np.empty((steps, n_xi))
    Rxixi = np.empty((steps, n_xi, n_xi))
    cache: dict[int, tuple] = {}
    for t, em in enumerate(model.emissions):
        key = id(em)
        if key not in cache:
            Gxi = em.Gxi
            W = np.linalg.solve(em.Rcov, Gxi)
            cache[key] = (Gxi.T @ np.linalg.solve(em.Rcov, np.eye(em.Rcov.shape[0])), sym(Gxi.T @ W))
        GR, quad = cache[key]
        Rxi[t] = GR @ (em.g - Z[t])
        Rxixi[t] = quad
    return Rxi, Rxixi


def _run_backward(model: ChmmModel, Rxi, Rxixi, natural: bool) -> LinearPolicy:
    Fx, Fu, f, Qcov = model.stacked_transitions()
    pol = model.prior_policy
    Kst, kst, Sigst, _, _, status, bad_t = kernels.backward_extract(
        Fx, Fu, f, Qcov, Rxi, Rxixi, pol.K, pol.k, pol.S, int(natural)
    )
    if status == 3:
        raise IndefiniteQError("S^-1 + Quu not positive definite", step=bad_t)
    if status == 4:
        raise DegeneratePropagationError("value propagation singular", step=bad_t)
    return LinearPolicy(K=Kst, k=kst, S=Sigst)


def extract_vanilla(model: ChmmModel, sequences) -> MixturePolicy:
    """Per-sequence backward passes plus smoothed-marginal mixture weights."""
    zs = [_as_z(s) for s in sequences]
    if len(zs) < 1:
        raise ConfigError("need at least one measurement sequence")
    components = []
    tracks = []
    for Z in zs:
        Rxi, Rxixi = observation_quadratics(model, Z)
        components.append(_run_backward(model, Rxi, Rxixi, natural=False))
        _, smoothed = smooth_sequence(model, Z)
        tracks.append(smoothed)
    return MixturePolicy.from_marginals(components, tracks)


def extract_natural(model: ChmmModel, sequences) -> LinearPolicy:
    """Single linear-Gaussian policy from the averaged observation quadratics."""
    zs = [_as_z(s) for s in sequences]
    if len(zs) < 1:
        raise ConfigError("need at least one measurement sequence")
    Rxi_sum = None
    Rxixi = None
    for Z in zs:
        Rxi, Rxixi = observation_quadratics(model, Z)
        Rxi_sum = Rxi if Rxi_sum is None else Rxi_sum + Rxi
    return _run_backward(model, Rxi_sum / len(zs), Rxixi, natural=True)


def extract_vanilla_reference(model: ChmmModel, Z: np.ndarray) -> LinearPolicy:
    """Single-sequence vanilla pass composed from the per-step operations.

    Slow reference path used to validate the batch kernel.
    """
    steps = model.dims.steps
    pol = model.prior_policy
    v = QuadraticValue.zero(model.dims.n_x)
    Ks, ks, Ss = [], [], []
    for t in range(steps - 1, -1, -1):
        obs = obs_loglik_quadratic(model.emissions[t], Z[t])
        if t == steps - 1:
            q = QuadraticQ(Qxi=obs.Rxi, Qxixi=obs.Rxixi, n_x=model.dims.n_x)
        else:
            q = vanilla_q_update(model.transitions[t], obs, v)
        K, k, S = pol.step(t)
        Kst, kst, Sigma = policy_from_q(K, k, S, q)
        v = value_from_q(K, k, S, Kst, kst, Sigma, q)
        Ks.append(Kst)
        ks.append(kst)
        Ss.append(Sigma)
    return LinearPolicy(
        K=np.stack(Ks[::-1]), k=np.stack(ks[::-1]), S=np.stack(Ss[::-1])
    )


# ---------------------------------------------------------------------------
# Policy serialization (apcd-policy/v1)
# ---------------------------------------------------------------------------

POLICY_SCHEMA = "apcd-policy/v1"


def _linear_to_json(pol: LinearPolicy) -> dict:
    return {"K": pol.K.tolist(), "k": pol.k.tolist(), "S": pol.S.tolist()}


def _linear_from_json(doc: dict) -> LinearPolicy:
    return LinearPolicy(
        K=np.asarray(doc["K"], dtype=float),
        k=np.asarray(doc["k"], dtype=float),
        S=np.asarray(doc["S"], dtype=float),
    )


def policy_to_json(policy) -> dict:
    if isinstance(policy, LinearPolicy):
        return {"schema": POLICY_SCHEMA, "kind": "linear", **_linear_to_json(policy)}
    if isinstance(policy, MixturePolicy):
        return {
            "schema": POLICY_SCHEMA,
            "kind": "mixture",
            "components": [_linear_to_json(c) for c in policy.components],
            "weight_means": policy.weight_means.tolist(),
            "weight_covs": policy.weight_covs.tolist(),
        }
    raise ConfigError(f"cannot serialize policy of type {type(policy).__name__}")


def policy_from_json(doc: dict):
    if doc.get("schema") != POLICY_SCHEMA:
        raise ConfigError(f"unexpected policy schema: {doc.get('schema')!r}")
    if doc["kind"] == "linear":
        return _linear_from_json(doc)
    if doc["kind"] == "mixture":
        return MixturePolicy(
            [_linear_from_json(c) for c in doc["components"]],
            np.asarray(doc["weight_means"], dtype=float),
            np.asarray(doc["weight_covs"], dtype=float),
        )
    raise ConfigError(f"unknown policy kind {doc['kind']!r}")


def save_policy(path, policy) -> None:
    import json

    with open(path, "w") as fh:
        json.dump(policy_to_json(policy), fh)
        fh.write("\n")


def load_policy(path):
    import json

    with open(path) as fh:
        return policy_from_json(json.load(fh))
