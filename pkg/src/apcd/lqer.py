"""Demonstration policy synthesis: risk-sensitive (exponential-of-quadratic)
regulator for the tracking cost, plus the plain LQR used for the small-risk
limit check.

The value function is tracked as x'Px + 2p'x (constant untracked) in cost
units. Each backward step first applies the risk transform

    P~ = (P^-1 - lam Qcov)^-1 = (I - lam P Qcov)^-1 P,
    p~ = (I - lam P Qcov)^-1 p

which is the Gaussian expectation of the exponentiated quadratic over the
process noise, then performs the usual quadratic minimization over u. The
transform is well-posed iff the eigenvalues of Qcov P stay below 1/lam.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RiskBreakdownError
from .model import ChmmModel, LinearPolicy, sym


@dataclass(frozen=True, eq=False)
class LqerCost:
    """Tracking cost weights and reference.

    The exponent of the objective is (lam/2) * sum_t of
    ||p_t - p*_t||^2_Rp + ||v_t||^2_Rv + ||u_t||^2_Ru, including t = T.
    """

    Rp: np.ndarray
    Rv: np.ndarray
    Ru: np.ndarray
    lam: float
    reference: np.ndarray  # (steps, dim_p)

    def state_weight(self) -> np.ndarray:
        n_p = self.Rp.shape[0]
        n_v = self.Rv.shape[0]
        C = np.zeros((n_p + n_v, n_p + n_v))
        C[:n_p, :n_p] = self.Rp
        C[n_p:, n_p:] = self.Rv
        return C

    def state_target(self, t: int) -> np.ndarray:
        return np.concatenate([self.reference[t], np.zeros(self.Rv.shape[0])])


def _synthesize(model: ChmmModel, cost: LqerCost, lam: float) -> LinearPolicy:
    d = model.dims
    steps = d.steps
    C = cost.state_weight()
    K = np.zeros((steps, d.n_u, d.n_x))
    k = np.zeros((steps, d.n_u))

    P = C.copy()
    p = -C @ cost.state_target(steps - 1)
    I = np.eye(d.n_x)
    for t in range(steps - 2, -1, -1):
        tr = model.transitions[t]
        if lam != 0.0:
            QP = tr.Qcov @ P
            eigs = np.linalg.eigvals(QP).real
            if lam * eigs.max(initial=0.0) >= 1.0:
                raise RiskBreakdownError(
                    "risk transform lost positive definiteness (lambda too large)",
                    step=t,
                )
            M = I - lam * P @ tr.Qcov  # (P^-1 - lam Q)^-1 = (I - lam P Q)^-1 P
            Pt = sym(np.linalg.solve(M, P))
            pt = np.linalg.solve(M, p)
        else:
            Pt, pt = P, p
        w = Pt @ tr.f + pt
        Qxx = C + tr.Fx.T @ Pt @ tr.Fx
        Quu = cost.Ru + tr.Fu.T @ Pt @ tr.Fu
        Qux = tr.Fu.T @ Pt @ tr.Fx
        qx = -C @ cost.state_target(t) + tr.Fx.T @ w
        qu = tr.Fu.T @ w
        K[t] = -np.linalg.solve(Quu, Qux)
        k[t] = -np.linalg.solve(Quu, qu)
        P = sym(Qxx + Qux.T @ K[t])
        p = qx + Qux.T @ k[t]
    return LinearPolicy(K=K, k=k, S=np.zeros((steps, d.n_u, d.n_u)))


def lqer_synthesize(model: ChmmModel, cost: LqerCost) -> LinearPolicy:
    """Risk-sensitive tracking regulator; deterministic policy (S = 0).

    Raises RiskBreakdownError with the first breaking step if lam is too
    large for the model's process noise.
    """
    return _synthesize(model, cost, cost.lam)


def lqr_synthesize(model: ChmmModel, cost: LqerCost) -> LinearPolicy:
    """Risk-neutral Riccati recursion with the tracking linear term."""
    return _synthesize(model, cost, 0.0)


def cost_to_json(cost: LqerCost) -> dict:
    return {
        "Rp": cost.Rp.tolist(),
        "Rv": cost.Rv.tolist(),
        "Ru": cost.Ru.tolist(),
        "lam": cost.lam,
        "reference": cost.reference.tolist(),
    }


def cost_from_json(doc: dict) -> LqerCost:
    return LqerCost(
        Rp=np.asarray(doc["Rp"], dtype=float),
        Rv=np.asarray(doc["Rv"], dtype=float),
        Ru=np.asarray(doc["Ru"], dtype=float),
        lam=float(doc["lam"]),
        reference=np.asarray(doc["reference"], dtype=float),
    )


def save_cost(path, cost: LqerCost) -> None:
    import json

    with open(path, "w") as fh:
        json.dump(cost_to_json(cost), fh)
        fh.write("\n")


def load_cost(path) -> LqerCost:
    import json

    with open(path) as fh:
        return cost_from_json(json.load(fh))
