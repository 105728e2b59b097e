"""Pure-numpy reference kernels.

Same call signatures as the compiled core in ``_core.pyx``; selected at
import time by ``_backend`` when the extension is unavailable or the
``APCD_BACKEND=python`` environment variable is set.

Status codes returned by the stateful kernels:
    0  success
    1  innovation covariance not positive definite
    2  predicted covariance singular in the smoother
    3  S^-1 + Quu not positive definite
    4  value propagation system singular
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"

_LOG_2PI = float(np.log(2.0 * np.pi))


def _sym(a):
    return 0.5 * (a + a.T)


def rollout_linear(Fx, Fu, f, Lq, K, k, Ls, x0, e_q, e_s):
    """Closed-loop rollout under a per-step affine-Gaussian policy.

    Lq/Ls are Cholesky-like factors of the process/policy noise; pass zero
    factors for deterministic channels. Returns (states, controls).
    """
    T1 = K.shape[0]
    n_x = x0.shape[0]
    n_u = K.shape[1]
    X = np.empty((T1, n_x))
    U = np.empty((T1, n_u))
    x = x0.copy()
    for t in range(T1):
        X[t] = x
        u = K[t] @ x + k[t] + Ls[t] @ e_s[t]
        U[t] = u
        if t < T1 - 1:
            x = Fx[t] @ x + Fu[t] @ u + f[t] + Lq[t] @ e_q[t]
    return X, U


def rollout_mixture(Fx, Fu, f, Lq, Ks, ks, wmean, wprec, wlogn, x0, e_q):
    """Deterministic rollout under the mixture mean control.

    Component weights at (t, x) are softmax of the smoothed-marginal Gaussian
    log densities (max-subtracted). Returns (states, controls, n_underflow)
    where n_underflow counts steps that fell back to uniform weights.
    """
    N, T1 = Ks.shape[0], Ks.shape[1]
    n_x = x0.shape[0]
    n_u = Ks.shape[2]
    X = np.empty((T1, n_x))
    U = np.empty((T1, n_u))
    x = x0.copy()
    n_underflow = 0
    lw = np.empty(N)
    for t in range(T1):
        X[t] = x
        for n in range(N):
            dx = x - wmean[n, t]
            lw[n] = wlogn[n, t] - 0.5 * dx @ wprec[n, t] @ dx
        m = lw.max()
        if np.isfinite(m):
            w = np.exp(lw - m)
            s = w.sum()
        else:
            s = 0.0
        if s > 0.0:
            w = w / s
        else:
            w = np.full(N, 1.0 / N)
            n_underflow += 1
        u = np.zeros(n_u)
        for n in range(N):
            u += w[n] * (Ks[n, t] @ x + ks[n, t])
        U[t] = u
        if t < T1 - 1:
            x = Fx[t] @ x + Fu[t] @ u + f[t] + Lq[t] @ e_q[t]
    return X, U, n_underflow


def kf_forward(A, b, Qc, C, d, Rc, mu0, Sig0, Z):
    """Kalman filter on the closed-loop system.

    Returns (pred_m, pred_P, filt_m, filt_P, loglik, status, bad_t) with
    per-step log-evidence increments in loglik.
    """
    T1, n = Z.shape[0], mu0.shape[0]
    m_z = Z.shape[1]
    pm = np.empty((T1, n))
    pP = np.empty((T1, n, n))
    fm = np.empty((T1, n))
    fP = np.empty((T1, n, n))
    ll = np.zeros(T1)
    m = mu0.copy()
    P = Sig0.copy()
    I = np.eye(n)
    for t in range(T1):
        pm[t] = m
        pP[t] = P
        innov = Z[t] - (C[t] @ m + d[t])
        S = _sym(C[t] @ P @ C[t].T + Rc[t])
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            return pm, pP, fm, fP, ll, 1, t
        alpha = np.linalg.solve(S, innov)
        Kg = np.linalg.solve(S, C[t] @ P).T
        m = m + Kg @ innov
        IKC = I - Kg @ C[t]
        P = _sym(IKC @ P @ IKC.T + Kg @ Rc[t] @ Kg.T)
        fm[t] = m
        fP[t] = P
        ll[t] = -0.5 * (
            innov @ alpha + 2.0 * np.log(np.diag(L)).sum() + m_z * _LOG_2PI
        )
        if t < T1 - 1:
            m = A[t] @ m + b[t]
            P = _sym(A[t] @ P @ A[t].T + Qc[t])
    return pm, pP, fm, fP, ll, 0, -1


def rts_backward(A, fm, fP, pm, pP):
    """RTS smoother pass; inputs from kf_forward.

    Returns (sm, sP, status, bad_t).
    """
    T1, n = fm.shape
    sm = fm.copy()
    sP = fP.copy()
    for t in range(T1 - 2, -1, -1):
        try:
            G = np.linalg.solve(pP[t + 1], A[t] @ fP[t]).T
        except np.linalg.LinAlgError:
            return sm, sP, 2, t
        sm[t] = fm[t] + G @ (sm[t + 1] - pm[t + 1])
        sP[t] = _sym(fP[t] + G @ (sP[t + 1] - pP[t + 1]) @ G.T)
    return sm, sP, 0, -1


def backward_extract(Fx, Fu, f, Qcov, Rxi, Rxixi, Kp, kp, Sp, natural):
    """Backward recursion producing the extracted policy (K*, k*, Sigma*).

    Per step (t = T..0): Q-update (vanilla or natural flavor), then the
    shared policy and value updates. The terminal value is the zero
    quadratic, so Q_T is the observation quadratic alone. The vanilla
    propagation uses the solve form (I + Vxx Qcov)^-1 so a singular Vxx is
    harmless.

    Returns (Kst, kst, Sigst, Vx_out, Vxx_out, status, bad_t).
    """
    T1 = Rxi.shape[0]
    n_x = Fx.shape[1]
    n_u = Kp.shape[1]
    Kst = np.empty((T1, n_u, n_x))
    kst = np.empty((T1, n_u))
    Sigst = np.empty((T1, n_u, n_u))
    Vx_out = np.empty((T1, n_x))
    Vxx_out = np.empty((T1, n_x, n_x))
    Vx = np.zeros(n_x)
    Vxx = np.zeros((n_x, n_x))
    I = np.eye(n_x)
    Iu = np.eye(n_u)
    for t in range(T1 - 1, -1, -1):
        if t == T1 - 1:
            Qxi = Rxi[t].copy()
            Qxixi = Rxixi[t].copy()
        else:
            Fxi = np.hstack([Fx[t], Fu[t]])
            if natural:
                lam = Vxx
                vec = Vxx @ f[t] + Vx
            else:
                M = I + Vxx @ Qcov[t]
                try:
                    lam = _sym(np.linalg.solve(M, Vxx))
                    vec = np.linalg.solve(M, Vxx @ f[t] + Vx)
                except np.linalg.LinAlgError:
                    return Kst, kst, Sigst, Vx_out, Vxx_out, 4, t
            Qxi = Rxi[t] + Fxi.T @ vec
            Qxixi = _sym(Rxixi[t] + Fxi.T @ lam @ Fxi)
        Qu = Qxi[n_x:]
        Qx = Qxi[:n_x]
        Quu = Qxixi[n_x:, n_x:]
        Qux = Qxixi[n_x:, :n_x]
        Qxx = Qxixi[:n_x, :n_x]
        try:
            Sinv = np.linalg.solve(Sp[t], Iu)
            Sinv = _sym(Sinv)
            Amat = _sym(Sinv + Quu)
            np.linalg.cholesky(Amat)
            Sig = _sym(np.linalg.solve(Amat, Iu))
        except np.linalg.LinAlgError:
            return Kst, kst, Sigst, Vx_out, Vxx_out, 3, t
        a_k = Sinv @ kp[t] - Qu
        a_K = Sinv @ Kp[t] - Qux
        kst[t] = Sig @ a_k
        Kst[t] = Sig @ a_K
        Sigst[t] = Sig
        Vx = Qx + Kp[t].T @ (Sinv @ kp[t]) - a_K.T @ (Sig @ a_k)
        Vxx = _sym(Qxx + Kp[t].T @ Sinv @ Kp[t] - a_K.T @ Sig @ a_K)
        Vx_out[t] = Vx
        Vxx_out[t] = Vxx
    return Kst, kst, Sigst, Vx_out, Vxx_out, 0, -1
