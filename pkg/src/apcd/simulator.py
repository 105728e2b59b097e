"""Planar-mass tracking benchmark and seeded closed-loop simulation.

All randomness flows through a NoiseBank: a seed fully determines every
trajectory, measurement sequence, and downstream evaluation. Policies are
evaluated on identical noise realizations (common random numbers) by
sharing the bank across candidates.
"""

from __future__ import annotations

import csv
import pathlib
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import ConfigError, SimulationDivergedError
from .lqer import LqerCost
from .model import (
    ChmmModel,
    Dims,
    EmissionStep,
    GaussianPrior,
    LinearPolicy,
    TransitionStep,
    build_model,
    chol_psd,
    load_model,
    save_model,
    sym,
)


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray  # (steps, n_x)
    controls: np.ndarray  # (steps, n_u)


@dataclass(frozen=True, eq=False)
class MeasurementSequence:
    z: np.ndarray  # (steps, n_z)


class NoiseBank:
    """Standard-normal draws for M experiments, reproducible from a seed."""

    def __init__(self, seed: int, dims: Dims, M: int):
        self.seed = int(seed)
        self.M = int(M)
        self.dims = dims
        rng = np.random.default_rng(self.seed)
        T = dims.steps - 1
        self.e_x0 = rng.standard_normal((M, dims.n_x))
        self.e_q = rng.standard_normal((M, T, dims.n_x))
        self.e_s = rng.standard_normal((M, dims.steps, dims.n_u))
        self.e_r = rng.standard_normal((M, dims.steps, dims.n_z))


@dataclass(frozen=True)
class BenchmarkSpec:
    """Planar double-integrator tracking benchmark parameters."""

    dt: float = 2e-3
    horizon: float = 2.0
    mass: float = 1.0
    rp: float = 1e4
    rv: float = 1.0
    ru: float = 1.0
    lam: float = 1e-4
    sigma0_sq: float = 1e-1
    reference_kind: str = "lissajous"
    reference_scale: float = 1.0
    reference_period: float = 2.0
    input_noise_scales: tuple = (10.0, 100.0)
    input_noise_base: float = 1e-4
    meas_noise_scales: tuple = (0.1, 0.1)
    meas_noise_base: float = 30.0

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt)) + 1


def make_random_spd(dim: int, scales, rng, base: float = 1.0) -> np.ndarray:
    """Random SPD matrix base * D C D with unit-scale correlated factor C.

    C = L L'/dim + 1e-3 I for standard-normal L; D = diag(scales) realizes
    the anisotropy (e.g. scales (10, 100) for the benchmark input noise).
    base rescales the whole matrix: the benchmark process noise uses
    base = 1e-4 because the risk-sensitive demonstrator synthesis at
    lambda = 1e-4 only stays well-posed below a critical force-noise
    variance of ~20 on the 100-scaled axis.
    """
    scales = np.asarray(scales, dtype=float)
    L = rng.standard_normal((dim, dim))
    C = L @ L.T / dim + 1e-3 * np.eye(dim)
    D = np.diag(scales)
    return sym(base * (D @ C @ D))


def generate_reference_path(
    kind: str, steps: int, dt: float, scale: float = 1.0, period: float | None = None
):
    """Smooth planar reference path starting at the origin; (steps, 2).

    period fixes the traversal time of one full figure; shorter horizons
    cover a fraction of it at the same speed instead of a faster full lap.
    """
    total = period if period is not None else dt * (steps - 1)
    t = np.arange(steps) * dt
    th = 2.0 * np.pi * t / total
    if kind == "line":
        return np.column_stack([scale * t / total, np.zeros(steps)])
    if kind == "circle":
        return scale * np.column_stack([np.sin(th), 1.0 - np.cos(th)])
    if kind == "lissajous":
        return scale * np.column_stack([np.sin(th), 0.5 * np.sin(2.0 * th)])
    raise ConfigError(f"unknown reference path kind {kind!r}")


def build_tracking_model(spec: BenchmarkSpec, rng) -> tuple[ChmmModel, LqerCost]:
    """Force-controlled planar mass with Brownian (force-channel) input noise.

    State (p, v) in R^4, control = force in R^2, Euler discretization at dt.
    Emission is position only (Gu = 0). The prior policy slot carries a
    unit-variance zero-mean placeholder; extraction swaps in sigma^2 I.
    """
    dt = spec.dt
    steps = spec.steps
    I2 = np.eye(2)
    Z2 = np.zeros((2, 2))
    dims = Dims(n_x=4, n_u=2, n_z=2, steps=steps, dt=dt)

    Fx = np.block([[I2, dt * I2], [Z2, I2]])
    Fu = np.vstack([Z2, (dt / spec.mass) * I2])
    f = np.zeros(4)
    sigma_force = make_random_spd(
        2, spec.input_noise_scales, rng, base=spec.input_noise_base
    )
    Qcov = np.block([[Z2, Z2], [Z2, dt * sigma_force]]) + 1e-12 * np.eye(4)

    Rcov = make_random_spd(
        2, spec.meas_noise_scales, rng, base=spec.meas_noise_base
    )
    emission = EmissionStep(
        Gx=np.hstack([I2, Z2]), Gu=np.zeros((2, 2)), g=np.zeros(2), Rcov=Rcov
    )
    transition = TransitionStep(Fx=Fx, Fu=Fu, f=f, Qcov=sym(Qcov))
    prior = GaussianPrior(mu0=np.zeros(4), sigma0=spec.sigma0_sq * np.eye(4))
    policy = LinearPolicy.constant(
        steps, np.zeros((2, 4)), np.zeros(2), np.eye(2)
    )
    model = build_model(dims, prior, transition, emission, policy)

    reference = generate_reference_path(
        spec.reference_kind, steps, dt, spec.reference_scale, spec.reference_period
    )
    cost = LqerCost(
        Rp=spec.rp * I2,
        Rv=spec.rv * I2,
        Ru=spec.ru * I2,
        lam=spec.lam,
        reference=reference,
    )
    return model, cost


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def _transition_chols(model: ChmmModel) -> np.ndarray:
    """Per-step Cholesky factors of Qcov; shared broadcast steps hit a cache."""
    local: dict[int, np.ndarray] = {}
    out = []
    for s in model.transitions:
        key = id(s)
        if key not in local:
            local[key] = chol_psd(s.Qcov)
        out.append(local[key])
    return np.stack(out)


def _emission_chols(model: ChmmModel) -> np.ndarray:
    local: dict[int, np.ndarray] = {}
    out = []
    for s in model.emissions:
        key = id(s)
        if key not in local:
            local[key] = chol_psd(s.Rcov)
        out.append(local[key])
    return np.stack(out)


def _policy_chols(policy: LinearPolicy) -> np.ndarray:
    if policy.is_deterministic():
        return np.zeros_like(policy.S)
    try:
        return np.linalg.cholesky(policy.S)
    except np.linalg.LinAlgError:
        return np.stack([chol_psd(policy.S[t]) for t in range(policy.steps)])


def _check_finite(states: np.ndarray, controls: np.ndarray) -> None:
    bad = ~(np.isfinite(states).all(axis=1) & np.isfinite(controls).all(axis=1))
    if bad.any():
        t = int(np.argmax(bad))
        raise SimulationDivergedError("closed loop diverged", step=t)


def simulate(
    model: ChmmModel,
    policy,
    bank: NoiseBank,
    run_index: int,
    with_policy_noise: bool = True,
) -> tuple[Trajectory, MeasurementSequence]:
    """One seeded closed-loop rollout with recorded measurements.

    The policy consumes the true state. Accepts a LinearPolicy (stochastic
    if S is nonzero), a mixture policy exposing rollout_data(), or any
    object with a mean(t, x) method (slow path).
    """
    if run_index >= bank.M:
        raise ConfigError(f"run_index {run_index} outside bank (M={bank.M})")
    d = model.dims
    Fx, Fu, f, _ = model.stacked_transitions()
    Lq = _transition_chols(model)
    x0 = model.prior.mu0 + chol_psd(model.prior.sigma0) @ bank.e_x0[run_index]
    e_q = bank.e_q[run_index]

    if hasattr(policy, "rollout_data"):
        Ks, ks, wmean, wprec, wlogn = policy.rollout_data()
        states, controls, _ = kernels.rollout_mixture(
            Fx, Fu, f, Lq, Ks, ks, wmean, wprec, wlogn, x0, e_q
        )
    elif isinstance(policy, LinearPolicy):
        Ls = (
            _policy_chols(policy)
            if with_policy_noise
            else np.zeros_like(policy.S)
        )
        states, controls = kernels.rollout_linear(
            Fx, Fu, f, Lq, policy.K, policy.k, Ls, x0, e_q, bank.e_s[run_index]
        )
    else:
        states = np.empty((d.steps, d.n_x))
        controls = np.empty((d.steps, d.n_u))
        x = x0
        for t in range(d.steps):
            states[t] = x
            u = policy.mean(t, x)
            controls[t] = u
            if t < d.steps - 1:
                x = Fx[t] @ x + Fu[t] @ u + f[t] + Lq[t] @ e_q[t]
    _check_finite(states, controls)

    Gx, Gu, g, _ = model.stacked_emissions()
    Lr = _emission_chols(model)
    z = (
        np.einsum("tij,tj->ti", Gx, states)
        + np.einsum("tij,tj->ti", Gu, controls)
        + g
        + np.einsum("tij,tj->ti", Lr, bank.e_r[run_index])
    )
    return Trajectory(states=states, controls=controls), MeasurementSequence(z=z)


def generate_dataset(
    model: ChmmModel, demo_policy, M: int, seed: int
) -> tuple[list[tuple[Trajectory, MeasurementSequence]], NoiseBank]:
    """M independent seeded runs plus the bank for common-random-number reuse."""
    if M < 1:
        raise ConfigError("M must be >= 1")
    bank = NoiseBank(seed, model.dims, M)
    runs = [simulate(model, demo_policy, bank, i) for i in range(M)]
    return runs, bank


# ---------------------------------------------------------------------------
# Dataset directory layout: model.json, bank-seed.txt, per-run CSVs.
# ---------------------------------------------------------------------------

def _write_csv(path, header: list[str], rows: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, row in enumerate(rows):
            w.writerow([i] + [repr(float(v)) for v in row])


def _read_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        return np.array([[float(v) for v in row[1:]] for row in r])


def save_dataset(directory, model: ChmmModel, bank: NoiseBank, runs) -> None:
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_model(directory / "model.json", model)
    (directory / "bank-seed.txt").write_text(f"{bank.seed}\n{bank.M}\n")
    n_x = model.dims.n_x
    n_z = model.dims.n_z
    for i, (traj, meas) in enumerate(runs):
        _write_csv(
            directory / f"run_{i}_states.csv",
            ["t"] + [f"x{j + 1}" for j in range(n_x)],
            traj.states,
        )
        _write_csv(
            directory / f"run_{i}_measurements.csv",
            ["t"] + [f"z{j + 1}" for j in range(n_z)],
            meas.z,
        )


def load_dataset(directory):
    """Returns (model, bank, states list, measurement sequences list)."""
    directory = pathlib.Path(directory)
    model = load_model(directory / "model.json")
    seed_txt = (directory / "bank-seed.txt").read_text().split()
    seed, M = int(seed_txt[0]), int(seed_txt[1])
    bank = NoiseBank(seed, model.dims, M)
    states = []
    sequences = []
    for i in range(M):
        states.append(_read_csv(directory / f"run_{i}_states.csv"))
        sequences.append(
            MeasurementSequence(z=_read_csv(directory / f"run_{i}_measurements.csv"))
        )
    return model, bank, states, sequences
