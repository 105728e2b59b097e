"""Time-varying linear-Gaussian controlled HMM: types, validation, and the
derived quadratic/affine forms consumed by smoothing and extraction.

Conventions
-----------
* The joint state-control vector is ``xi = (x, u)`` with ``n_xi = n_x + n_u``.
* Quadratic forms are tracked up to an additive constant: a form is the pair
  ``(linear, quadratic)`` in ``0.5 * v' Qvv v + Qv' v + const``.
* Every stored symmetric matrix is re-symmetrized on construction; PSD checks
  use the relative eigenvalue tolerance ``-1e-10 * max(eig)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SingularEmissionError

PSD_RTOL = 1e-10
SYM_ATOL = 1e-12

MODEL_SCHEMA = "chmm-model/v1"


def sym(a: np.ndarray) -> np.ndarray:
    """Symmetric part (X + X')/2."""
    return 0.5 * (a + a.T)


def is_symmetric(a: np.ndarray, atol: float = SYM_ATOL) -> bool:
    return bool(np.all(np.abs(a - a.T) <= atol * max(1.0, np.abs(a).max(initial=0.0))))


def min_rel_eig(a: np.ndarray) -> float:
    """Smallest eigenvalue scaled by the largest; 0 for the zero matrix."""
    w = np.linalg.eigvalsh(sym(a))
    top = float(np.abs(w).max(initial=0.0))
    if top == 0.0:
        return 0.0
    return float(w.min()) / top


def is_psd(a: np.ndarray) -> bool:
    return min_rel_eig(a) >= -PSD_RTOL


def is_pd(a: np.ndarray) -> bool:
    w = np.linalg.eigvalsh(sym(a))
    return bool(w.min(initial=np.inf) > 0.0)


def chol_psd(a: np.ndarray) -> np.ndarray:
    """Cholesky-like factor L with L L' = a for PSD a.

    Falls back to an eigendecomposition factor when the matrix is only
    semidefinite (zero blocks in the benchmark process noise).
    """
    a = sym(a)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(a)
        w = np.clip(w, 0.0, None)
        return v * np.sqrt(w)


@dataclass(frozen=True)
class Dims:
    """Problem dimensions and time discretization."""

    n_x: int
    n_u: int
    n_z: int
    steps: int
    dt: float

    @property
    def n_xi(self) -> int:
        return self.n_x + self.n_u

    def check(self) -> list[str]:
        out = []
        for name in ("n_x", "n_u", "n_z"):
            if getattr(self, name) < 1:
                out.append(f"dims.{name} < 1")
        if self.steps < 2:
            out.append("dims.steps < 2")
        if not self.dt > 0:
            out.append("dims.dt <= 0")
        return out


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    mu0: np.ndarray
    sigma0: np.ndarray


@dataclass(frozen=True, eq=False)
class TransitionStep:
    """x' = Fx x + Fu u + f + q,  q ~ N(0, Qcov)."""

    Fx: np.ndarray
    Fu: np.ndarray
    f: np.ndarray
    Qcov: np.ndarray

    @property
    def Fxi(self) -> np.ndarray:
        return np.hstack([self.Fx, self.Fu])


@dataclass(frozen=True, eq=False)
class EmissionStep:
    """z = Gx x + Gu u + g + r,  r ~ N(0, Rcov)."""

    Gx: np.ndarray
    Gu: np.ndarray
    g: np.ndarray
    Rcov: np.ndarray

    @property
    def Gxi(self) -> np.ndarray:
        return np.hstack([self.Gx, self.Gu])


@dataclass(frozen=True, eq=False)
class LinearPolicy:
    """Affine-Gaussian feedback law u_t ~ N(K_t x_t + k_t, S_t), stacked over t.

    S may be all-zero as the deterministic sentinel (demonstrator policies).
    """

    K: np.ndarray  # (steps, n_u, n_x)
    k: np.ndarray  # (steps, n_u)
    S: np.ndarray  # (steps, n_u, n_u)

    @property
    def steps(self) -> int:
        return self.K.shape[0]

    def mean(self, t: int, x: np.ndarray) -> np.ndarray:
        return self.K[t] @ x + self.k[t]

    def step(self, t: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.K[t], self.k[t], self.S[t]

    def is_deterministic(self) -> bool:
        return bool(np.all(self.S == 0.0))

    @staticmethod
    def constant(steps: int, K: np.ndarray, k: np.ndarray, S: np.ndarray) -> "LinearPolicy":
        return LinearPolicy(
            K=np.broadcast_to(K, (steps,) + K.shape).copy(),
            k=np.broadcast_to(k, (steps,) + k.shape).copy(),
            S=np.broadcast_to(S, (steps,) + S.shape).copy(),
        )


@dataclass(frozen=True, eq=False)
class ObsQuadratic:
    """Quadratic form of the negative observation log-likelihood in xi."""

    Rxi: np.ndarray
    Rxixi: np.ndarray


@dataclass(frozen=True, eq=False)
class AffineGaussianSystem:
    """y = A v + b + noise, noise ~ N(0, cov)."""

    A: np.ndarray
    b: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class ChmmModel:
    dims: Dims
    prior: GaussianPrior
    transitions: list[TransitionStep]
    emissions: list[EmissionStep]
    prior_policy: LinearPolicy

    def with_prior_policy(self, policy: LinearPolicy) -> "ChmmModel":
        return ChmmModel(self.dims, self.prior, self.transitions, self.emissions, policy)

    # Stacked views used by the compiled kernels.
    def stacked_transitions(self):
        T = self.dims.steps - 1
        Fx = np.stack([s.Fx for s in self.transitions])
        Fu = np.stack([s.Fu for s in self.transitions])
        f = np.stack([s.f for s in self.transitions])
        Q = np.stack([s.Qcov for s in self.transitions])
        assert Fx.shape[0] == T
        return Fx, Fu, f, Q

    def stacked_emissions(self):
        Gx = np.stack([s.Gx for s in self.emissions])
        Gu = np.stack([s.Gu for s in self.emissions])
        g = np.stack([s.g for s in self.emissions])
        R = np.stack([s.Rcov for s in self.emissions])
        return Gx, Gu, g, R


def build_model(
    dims: Dims,
    prior: GaussianPrior,
    transition: TransitionStep | list[TransitionStep],
    emission: EmissionStep | list[EmissionStep],
    prior_policy: LinearPolicy,
) -> ChmmModel:
    """Assemble a model, broadcasting single time-invariant steps over t."""
    if isinstance(transition, TransitionStep):
        transitions = [transition] * (dims.steps - 1)
    else:
        transitions = list(transition)
    if isinstance(emission, EmissionStep):
        emissions = [emission] * dims.steps
    else:
        emissions = list(emission)
    return ChmmModel(dims, prior, transitions, emissions, prior_policy)


def validate_model(model: ChmmModel) -> list[str]:
    """Check every type invariant; returns an empty report iff all hold."""
    report = list(model.dims.check())
    d = model.dims

    p = model.prior
    if p.mu0.shape != (d.n_x,):
        report.append("prior.mu0 shape mismatch")
    if p.sigma0.shape != (d.n_x, d.n_x):
        report.append("prior.sigma0 shape mismatch")
    else:
        if not is_symmetric(p.sigma0):
            report.append("sigma0 not symmetric")
        elif not is_pd(p.sigma0):
            report.append("sigma0 not PD")

    if len(model.transitions) != d.steps - 1:
        report.append(
            f"transitions length {len(model.transitions)} != steps-1 ({d.steps - 1})"
        )
    if len(model.emissions) != d.steps:
        report.append(f"emissions length {len(model.emissions)} != steps ({d.steps})")

    for t, s in enumerate(model.transitions):
        shapes = (
            (s.Fx, (d.n_x, d.n_x), "Fx"),
            (s.Fu, (d.n_x, d.n_u), "Fu"),
            (s.f, (d.n_x,), "f"),
            (s.Qcov, (d.n_x, d.n_x), "Qcov"),
        )
        for arr, shape, name in shapes:
            if arr.shape != shape:
                report.append(f"{name} shape mismatch, t={t}")
        if s.Qcov.shape == (d.n_x, d.n_x):
            if not is_symmetric(s.Qcov):
                report.append(f"Qcov not symmetric, t={t}")
            elif not is_psd(s.Qcov):
                report.append(f"Qcov not PSD, t={t}")

    for t, s in enumerate(model.emissions):
        shapes = (
            (s.Gx, (d.n_z, d.n_x), "Gx"),
            (s.Gu, (d.n_z, d.n_u), "Gu"),
            (s.g, (d.n_z,), "g"),
            (s.Rcov, (d.n_z, d.n_z), "Rcov"),
        )
        for arr, shape, name in shapes:
            if arr.shape != shape:
                report.append(f"{name} shape mismatch, t={t}")
        if s.Rcov.shape == (d.n_z, d.n_z):
            if not is_symmetric(s.Rcov):
                report.append(f"Rcov not symmetric, t={t}")
            elif not is_pd(s.Rcov):
                report.append(f"Rcov not PD, t={t}")

    pol = model.prior_policy
    if pol.K.shape != (d.steps, d.n_u, d.n_x):
        report.append("prior_policy.K shape mismatch")
    if pol.k.shape != (d.steps, d.n_u):
        report.append("prior_policy.k shape mismatch")
    if pol.S.shape != (d.steps, d.n_u, d.n_u):
        report.append("prior_policy.S shape mismatch")
    else:
        for t in range(pol.S.shape[0]):
            if not is_symmetric(pol.S[t]):
                report.append(f"policy S not symmetric, t={t}")
            elif not is_pd(pol.S[t]):
                report.append(f"policy S not PD, t={t}")

    return report


def obs_loglik_quadratic(emission: EmissionStep, z: np.ndarray) -> ObsQuadratic:
    """Quadratic form of -log p(z|xi) up to a xi-independent constant.

    Rxixi = Gxi' R^-1 Gxi and Rxi = Gxi' R^-1 (g - z), so that
    -log p(z|xi) = 0.5 xi' Rxixi xi + Rxi' xi + const.
    """
    Gxi = emission.Gxi
    try:
        W = np.linalg.solve(emission.Rcov, Gxi)  # R^-1 Gxi
        rhs = np.linalg.solve(emission.Rcov, emission.g - z)
    except np.linalg.LinAlgError as exc:
        raise SingularEmissionError("emission covariance not invertible") from exc
    return ObsQuadratic(Rxi=Gxi.T @ rhs, Rxixi=sym(Gxi.T @ W))


def closed_loop_transition(step: TransitionStep, K, k, S) -> AffineGaussianSystem:
    """Marginalize u ~ N(Kx + k, S) out of the transition."""
    A = step.Fx + step.Fu @ K
    b = step.Fu @ k + step.f
    cov = sym(step.Qcov + step.Fu @ S @ step.Fu.T)
    return AffineGaussianSystem(A=A, b=b, cov=cov)


def closed_loop_emission(step: EmissionStep, K, k, S) -> AffineGaussianSystem:
    """Marginalize u ~ N(Kx + k, S) out of the emission."""
    C = step.Gx + step.Gu @ K
    d = step.Gu @ k + step.g
    cov = sym(step.Rcov + step.Gu @ S @ step.Gu.T)
    return AffineGaussianSystem(A=C, b=d, cov=cov)


# ---------------------------------------------------------------------------
# JSON serialization (chmm-model/v1). Matrices are row-major nested lists.
# Time-invariant step lists may be stored as a single step with
# "broadcast": true.
# ---------------------------------------------------------------------------

def _mat(a: np.ndarray) -> list:
    return np.asarray(a, dtype=float).tolist()


def _steps_to_json(steps: list, fields: list[str]) -> dict:
    first = steps[0]
    broadcast = all(
        all(np.array_equal(getattr(s, f), getattr(first, f)) for f in fields)
        for s in steps[1:]
    )
    if broadcast:
        return {"broadcast": True, "step": {f: _mat(getattr(first, f)) for f in fields}}
    return {
        "broadcast": False,
        "steps": [{f: _mat(getattr(s, f)) for f in fields} for s in steps],
    }


def model_to_json(model: ChmmModel) -> dict:
    d = model.dims
    pol = model.prior_policy
    return {
        "schema": MODEL_SCHEMA,
        "dims": {
            "n_x": d.n_x,
            "n_u": d.n_u,
            "n_z": d.n_z,
            "steps": d.steps,
            "dt": d.dt,
        },
        "prior": {"mu0": _mat(model.prior.mu0), "sigma0": _mat(model.prior.sigma0)},
        "transitions": _steps_to_json(model.transitions, ["Fx", "Fu", "f", "Qcov"]),
        "emissions": _steps_to_json(model.emissions, ["Gx", "Gu", "g", "Rcov"]),
        "prior_policy": {
            "K": _mat(pol.K),
            "k": _mat(pol.k),
            "S": _mat(pol.S),
        },
    }


def _steps_from_json(block: dict, cls, fields: list[str], count: int) -> list:
    def make(d):
        return cls(**{f: np.asarray(d[f], dtype=float) for f in fields})

    if block.get("broadcast"):
        return [make(block["step"])] * count
    steps = [make(s) for s in block["steps"]]
    return steps


def model_from_json(doc: dict) -> ChmmModel:
    if doc.get("schema") != MODEL_SCHEMA:
        raise ConfigError(f"unexpected model schema: {doc.get('schema')!r}")
    d = doc["dims"]
    dims = Dims(
        n_x=int(d["n_x"]),
        n_u=int(d["n_u"]),
        n_z=int(d["n_z"]),
        steps=int(d["steps"]),
        dt=float(d["dt"]),
    )
    prior = GaussianPrior(
        mu0=np.asarray(doc["prior"]["mu0"], dtype=float),
        sigma0=np.asarray(doc["prior"]["sigma0"], dtype=float),
    )
    transitions = _steps_from_json(
        doc["transitions"], TransitionStep, ["Fx", "Fu", "f", "Qcov"], dims.steps - 1
    )
    emissions = _steps_from_json(
        doc["emissions"], EmissionStep, ["Gx", "Gu", "g", "Rcov"], dims.steps
    )
    pol = doc["prior_policy"]
    policy = LinearPolicy(
        K=np.asarray(pol["K"], dtype=float),
        k=np.asarray(pol["k"], dtype=float),
        S=np.asarray(pol["S"], dtype=float),
    )
    return ChmmModel(dims, prior, transitions, emissions, policy)


def save_model(path, model: ChmmModel) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_json(model), fh, indent=1)
        fh.write("\n")


def load_model(path) -> ChmmModel:
    with open(path) as fh:
        return model_from_json(json.load(fh))
