# cython: language_level=3
"""Compiled kernels for the per-step hot loops.

Mirrors the signatures and status codes of ``_kernels_py``; the matrices
involved are tiny (state dim ~4), so the point of compiling is removing
per-step Python/numpy dispatch overhead, not BLAS. All factorizations are
hand-rolled Cholesky / partially-pivoted LU on small buffers.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()

BACKEND_NAME = "compiled"

cdef double LOG_2PI = 1.8378770664093453


cdef int _chol(double[:, :] A, double[:, :] L, int n) noexcept:
    """Lower Cholesky of symmetric A into L; -1 if not positive definite."""
    cdef int i, j, p
    cdef double s
    for i in range(n):
        for j in range(i + 1):
            s = A[i, j]
            for p in range(j):
                s -= L[i, p] * L[j, p]
            if i == j:
                if s <= 0.0:
                    return -1
                L[i, i] = sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    return 0


cdef void _chol_solve_vec(double[:, :] L, double[:] b, double[:] x, int n) noexcept:
    """Solve L L' x = b."""
    cdef int i, p
    cdef double s
    for i in range(n):
        s = b[i]
        for p in range(i):
            s -= L[i, p] * x[p]
        x[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = x[i]
        for p in range(i + 1, n):
            s -= L[p, i] * x[p]
        x[i] = s / L[i, i]


cdef void _chol_solve_mat(double[:, :] L, double[:, :] B, double[:, :] X,
                          int n, int m) noexcept:
    """Solve L L' X = B for an n x m right-hand side."""
    cdef int i, p, j
    cdef double s
    for j in range(m):
        for i in range(n):
            s = B[i, j]
            for p in range(i):
                s -= L[i, p] * X[p, j]
            X[i, j] = s / L[i, i]
        for i in range(n - 1, -1, -1):
            s = X[i, j]
            for p in range(i + 1, n):
                s -= L[p, i] * X[p, j]
            X[i, j] = s / L[i, i]


cdef int _lu(double[:, :] A, int[:] piv, int n) noexcept:
    """In-place LU with partial pivoting; -1 if singular."""
    cdef int i, j, p, imax
    cdef double amax, v, tmp
    for j in range(n):
        imax = j
        amax = A[j, j] if A[j, j] >= 0 else -A[j, j]
        for i in range(j + 1, n):
            v = A[i, j] if A[i, j] >= 0 else -A[i, j]
            if v > amax:
                amax = v
                imax = i
        if amax == 0.0:
            return -1
        piv[j] = imax
        if imax != j:
            for p in range(n):
                tmp = A[j, p]
                A[j, p] = A[imax, p]
                A[imax, p] = tmp
        for i in range(j + 1, n):
            A[i, j] /= A[j, j]
            for p in range(j + 1, n):
                A[i, p] -= A[i, j] * A[j, p]
    return 0


cdef void _lu_solve_vec(double[:, :] LU, int[:] piv, double[:] b, double[:] x,
                        int n) noexcept:
    cdef int i, p
    cdef double s, tmp
    for i in range(n):
        x[i] = b[i]
    for i in range(n):
        if piv[i] != i:
            tmp = x[i]
            x[i] = x[piv[i]]
            x[piv[i]] = tmp
    for i in range(n):
        s = x[i]
        for p in range(i):
            s -= LU[i, p] * x[p]
        x[i] = s
    for i in range(n - 1, -1, -1):
        s = x[i]
        for p in range(i + 1, n):
            s -= LU[i, p] * x[p]
        x[i] = s / LU[i, i]


cdef void _symmetrize(double[:, :] A, int n) noexcept:
    cdef int i, j
    cdef double v
    for i in range(n):
        for j in range(i):
            v = 0.5 * (A[i, j] + A[j, i])
            A[i, j] = v
            A[j, i] = v


@cython.boundscheck(False)
@cython.wraparound(False)
def rollout_linear(double[:, :, :] Fx, double[:, :, :] Fu, double[:, :] f,
                   double[:, :, :] Lq, double[:, :, :] K, double[:, :] k,
                   double[:, :, :] Ls, double[:] x0, double[:, :] e_q,
                   double[:, :] e_s):
    cdef int T1 = K.shape[0]
    cdef int n_x = x0.shape[0]
    cdef int n_u = K.shape[1]
    X_arr = np.empty((T1, n_x))
    U_arr = np.empty((T1, n_u))
    xn_arr = np.empty(n_x)
    cdef double[:, :] X = X_arr
    cdef double[:, :] U = U_arr
    cdef double[:] xn = xn_arr
    cdef int t, i, j
    cdef double s
    for i in range(n_x):
        X[0, i] = x0[i]
    for t in range(T1):
        for i in range(n_u):
            s = k[t, i]
            for j in range(n_x):
                s += K[t, i, j] * X[t, j]
            for j in range(n_u):
                s += Ls[t, i, j] * e_s[t, j]
            U[t, i] = s
        if t < T1 - 1:
            for i in range(n_x):
                s = f[t, i]
                for j in range(n_x):
                    s += Fx[t, i, j] * X[t, j] + Lq[t, i, j] * e_q[t, j]
                for j in range(n_u):
                    s += Fu[t, i, j] * U[t, j]
                xn[i] = s
            for i in range(n_x):
                X[t + 1, i] = xn[i]
    return X_arr, U_arr


@cython.boundscheck(False)
@cython.wraparound(False)
def rollout_mixture(double[:, :, :] Fx, double[:, :, :] Fu, double[:, :] f,
                    double[:, :, :] Lq, double[:, :, :, :] Ks,
                    double[:, :, :] ks, double[:, :, :] wmean,
                    double[:, :, :, :] wprec, double[:, :] wlogn,
                    double[:] x0, double[:, :] e_q):
    cdef int N = Ks.shape[0]
    cdef int T1 = Ks.shape[1]
    cdef int n_x = x0.shape[0]
    cdef int n_u = Ks.shape[2]
    X_arr = np.empty((T1, n_x))
    U_arr = np.empty((T1, n_u))
    lw_arr = np.empty(N)
    dx_arr = np.empty(n_x)
    xn_arr = np.empty(n_x)
    cdef double[:, :] X = X_arr
    cdef double[:, :] U = U_arr
    cdef double[:] lw = lw_arr
    cdef double[:] dx = dx_arr
    cdef double[:] xn = xn_arr
    cdef int t, n, i, j, n_underflow = 0
    cdef double s, m, wsum, w, q
    for i in range(n_x):
        X[0, i] = x0[i]
    for t in range(T1):
        for n in range(N):
            for i in range(n_x):
                dx[i] = X[t, i] - wmean[n, t, i]
            q = 0.0
            for i in range(n_x):
                s = 0.0
                for j in range(n_x):
                    s += wprec[n, t, i, j] * dx[j]
                q += dx[i] * s
            lw[n] = wlogn[n, t] - 0.5 * q
        m = lw[0]
        for n in range(1, N):
            if lw[n] > m:
                m = lw[n]
        wsum = 0.0
        if m == m and m != float("inf") and m != -float("inf"):
            for n in range(N):
                lw[n] = exp(lw[n] - m)
                wsum += lw[n]
        if wsum > 0.0:
            for n in range(N):
                lw[n] /= wsum
        else:
            for n in range(N):
                lw[n] = 1.0 / N
            n_underflow += 1
        for i in range(n_u):
            U[t, i] = 0.0
        for n in range(N):
            w = lw[n]
            for i in range(n_u):
                s = ks[n, t, i]
                for j in range(n_x):
                    s += Ks[n, t, i, j] * X[t, j]
                U[t, i] += w * s
        if t < T1 - 1:
            for i in range(n_x):
                s = f[t, i]
                for j in range(n_x):
                    s += Fx[t, i, j] * X[t, j] + Lq[t, i, j] * e_q[t, j]
                for j in range(n_u):
                    s += Fu[t, i, j] * U[t, j]
                xn[i] = s
            for i in range(n_x):
                X[t + 1, i] = xn[i]
    return X_arr, U_arr, n_underflow


@cython.boundscheck(False)
@cython.wraparound(False)
def kf_forward(double[:, :, :] A, double[:, :] b, double[:, :, :] Qc,
               double[:, :, :] C, double[:, :] d, double[:, :, :] Rc,
               double[:] mu0, double[:, :] Sig0, double[:, :] Z):
    cdef int T1 = Z.shape[0]
    cdef int n = mu0.shape[0]
    cdef int mz = Z.shape[1]
    pm_arr = np.empty((T1, n))
    pP_arr = np.empty((T1, n, n))
    fm_arr = np.empty((T1, n))
    fP_arr = np.empty((T1, n, n))
    ll_arr = np.zeros(T1)
    cdef double[:, :] pm = pm_arr
    cdef double[:, :, :] pP = pP_arr
    cdef double[:, :] fm = fm_arr
    cdef double[:, :, :] fP = fP_arr
    cdef double[:] ll = ll_arr
    # scratch
    m_arr = np.array(mu0, dtype=float, copy=True)
    P_arr = np.array(Sig0, dtype=float, copy=True)
    cdef double[:] m = m_arr
    cdef double[:, :] P = P_arr
    cdef double[:] innov = np.empty(mz)
    cdef double[:] alpha = np.empty(mz)
    cdef double[:, :] S = np.empty((mz, mz))
    cdef double[:, :] Lc = np.empty((mz, mz))
    cdef double[:, :] CP = np.empty((mz, n))
    cdef double[:, :] Xs = np.empty((mz, n))
    cdef double[:, :] Kg = np.empty((n, mz))
    cdef double[:, :] IKC = np.empty((n, n))
    cdef double[:, :] T1n = np.empty((n, n))
    cdef double[:, :] T2n = np.empty((n, n))
    cdef double[:, :] KR = np.empty((n, mz))
    cdef double[:] mn = np.empty(n)
    cdef int t, i, j, p
    cdef double s, quad, ldet
    for t in range(T1):
        for i in range(n):
            pm[t, i] = m[i]
            for j in range(n):
                pP[t, i, j] = P[i, j]
        # innovation
        for i in range(mz):
            s = Z[t, i] - d[t, i]
            for j in range(n):
                s -= C[t, i, j] * m[j]
            innov[i] = s
        # CP = C P ; S = CP C' + R
        for i in range(mz):
            for j in range(n):
                s = 0.0
                for p in range(n):
                    s += C[t, i, p] * P[p, j]
                CP[i, j] = s
        for i in range(mz):
            for j in range(mz):
                s = Rc[t, i, j]
                for p in range(n):
                    s += CP[i, p] * C[t, j, p]
                S[i, j] = s
        _symmetrize(S, mz)
        if _chol(S, Lc, mz) != 0:
            return pm_arr, pP_arr, fm_arr, fP_arr, ll_arr, 1, t
        _chol_solve_vec(Lc, innov, alpha, mz)
        _chol_solve_mat(Lc, CP, Xs, mz, n)
        for i in range(n):
            for j in range(mz):
                Kg[i, j] = Xs[j, i]
        # state update
        for i in range(n):
            s = m[i]
            for j in range(mz):
                s += Kg[i, j] * innov[j]
            mn[i] = s
        for i in range(n):
            m[i] = mn[i]
        # Joseph covariance update
        for i in range(n):
            for j in range(n):
                s = 1.0 if i == j else 0.0
                for p in range(mz):
                    s -= Kg[i, p] * C[t, p, j]
                IKC[i, j] = s
        for i in range(n):
            for j in range(n):
                s = 0.0
                for p in range(n):
                    s += IKC[i, p] * P[p, j]
                T1n[i, j] = s
        for i in range(n):
            for j in range(n):
                s = 0.0
                for p in range(n):
                    s += T1n[i, p] * IKC[j, p]
                T2n[i, j] = s
        for i in range(n):
            for j in range(mz):
                s = 0.0
                for p in range(mz):
                    s += Kg[i, p] * Rc[t, p, j]
                KR[i, j] = s
        for i in range(n):
            for j in range(n):
                s = T2n[i, j]
                for p in range(mz):
                    s += KR[i, p] * Kg[j, p]
                P[i, j] = s
        _symmetrize(P, n)
        for i in range(n):
            fm[t, i] = m[i]
            for j in range(n):
                fP[t, i, j] = P[i, j]
        quad = 0.0
        for i in range(mz):
            quad += innov[i] * alpha[i]
        ldet = 0.0
        for i in range(mz):
            ldet += log(Lc[i, i])
        ll[t] = -0.5 * (quad + 2.0 * ldet + mz * LOG_2PI)
        # predict
        if t < T1 - 1:
            for i in range(n):
                s = b[t, i]
                for j in range(n):
                    s += A[t, i, j] * m[j]
                mn[i] = s
            for i in range(n):
                m[i] = mn[i]
            for i in range(n):
                for j in range(n):
                    s = 0.0
                    for p in range(n):
                        s += A[t, i, p] * P[p, j]
                    T1n[i, j] = s
            for i in range(n):
                for j in range(n):
                    s = Qc[t, i, j]
                    for p in range(n):
                        s += T1n[i, p] * A[t, j, p]
                    T2n[i, j] = s
            for i in range(n):
                for j in range(n):
                    P[i, j] = T2n[i, j]
            _symmetrize(P, n)
    return pm_arr, pP_arr, fm_arr, fP_arr, ll_arr, 0, -1


@cython.boundscheck(False)
@cython.wraparound(False)
def rts_backward(double[:, :, :] A, double[:, :] fm, double[:, :, :] fP,
                 double[:, :] pm, double[:, :, :] pP):
    cdef int T1 = fm.shape[0]
    cdef int n = fm.shape[1]
    sm_arr = np.array(fm, dtype=float, copy=True)
    sP_arr = np.array(fP, dtype=float, copy=True)
    cdef double[:, :] sm = sm_arr
    cdef double[:, :, :] sP = sP_arr
    cdef double[:, :] Pp = np.empty((n, n))
    cdef double[:, :] Lc = np.empty((n, n))
    cdef double[:, :] B = np.empty((n, n))
    cdef double[:, :] Xs = np.empty((n, n))
    cdef double[:, :] G = np.empty((n, n))
    cdef double[:, :] D = np.empty((n, n))
    cdef double[:, :] GD = np.empty((n, n))
    cdef double[:] dv = np.empty(n)
    cdef int t, i, j, p
    cdef double s
    for t in range(T1 - 2, -1, -1):
        for i in range(n):
            for j in range(n):
                Pp[i, j] = pP[t + 1, i, j]
        if _chol(Pp, Lc, n) != 0:
            return sm_arr, sP_arr, 2, t
        # B = A fP[t]
        for i in range(n):
            for j in range(n):
                s = 0.0
                for p in range(n):
                    s += A[t, i, p] * fP[t, p, j]
                B[i, j] = s
        _chol_solve_mat(Lc, B, Xs, n, n)
        for i in range(n):
            for j in range(n):
                G[i, j] = Xs[j, i]
        for i in range(n):
            dv[i] = sm[t + 1, i] - pm[t + 1, i]
        for i in range(n):
            s = fm[t, i]
            for j in range(n):
                s += G[i, j] * dv[j]
            sm[t, i] = s
        for i in range(n):
            for j in range(n):
                D[i, j] = sP[t + 1, i, j] - pP[t + 1, i, j]
        for i in range(n):
            for j in range(n):
                s = 0.0
                for p in range(n):
                    s += G[i, p] * D[p, j]
                GD[i, j] = s
        for i in range(n):
            for j in range(n):
                s = fP[t, i, j]
                for p in range(n):
                    s += GD[i, p] * G[j, p]
                D[i, j] = s
        for i in range(n):
            for j in range(n):
                sP[t, i, j] = 0.5 * (D[i, j] + D[j, i])
    return sm_arr, sP_arr, 0, -1


@cython.boundscheck(False)
@cython.wraparound(False)
def backward_extract(double[:, :, :] Fx, double[:, :, :] Fu, double[:, :] f,
                     double[:, :, :] Qcov, double[:, :] Rxi,
                     double[:, :, :] Rxixi, double[:, :, :] Kp,
                     double[:, :] kp, double[:, :, :] Sp, int natural):
    cdef int T1 = Rxi.shape[0]
    cdef int n_x = Fx.shape[1]
    cdef int n_u = Kp.shape[1]
    cdef int n_xi = n_x + n_u
    Kst_arr = np.empty((T1, n_u, n_x))
    kst_arr = np.empty((T1, n_u))
    Sig_arr = np.empty((T1, n_u, n_u))
    Vx_arr = np.empty((T1, n_x))
    Vxx_arr = np.empty((T1, n_x, n_x))
    cdef double[:, :, :] Kst = Kst_arr
    cdef double[:, :] kst = kst_arr
    cdef double[:, :, :] Sigst = Sig_arr
    cdef double[:, :] Vx_out = Vx_arr
    cdef double[:, :, :] Vxx_out = Vxx_arr
    cdef double[:] Vx = np.zeros(n_x)
    cdef double[:, :] Vxx = np.zeros((n_x, n_x))
    cdef double[:] qxi = np.empty(n_xi)
    cdef double[:, :] qq = np.empty((n_xi, n_xi))
    cdef double[:, :] M = np.empty((n_x, n_x))
    cdef int[:] piv = np.empty(n_x, dtype=np.intc)
    cdef double[:, :] lam = np.empty((n_x, n_x))
    cdef double[:] vec = np.empty(n_x)
    cdef double[:] rhs = np.empty(n_x)
    cdef double[:] col = np.empty(n_x)
    cdef double[:, :] LF = np.empty((n_x, n_xi))
    cdef double[:, :] Ls = np.empty((n_u, n_u))
    cdef double[:, :] Sinv = np.empty((n_u, n_u))
    cdef double[:, :] Amat = np.empty((n_u, n_u))
    cdef double[:, :] La = np.empty((n_u, n_u))
    cdef double[:, :] Sig = np.empty((n_u, n_u))
    cdef double[:, :] Eu = np.empty((n_u, n_u))
    cdef double[:] a_k = np.empty(n_u)
    cdef double[:, :] a_K = np.empty((n_u, n_x))
    cdef double[:] Sk = np.empty(n_u)
    cdef double[:] Sak = np.empty(n_u)
    cdef double[:, :] SaK = np.empty((n_u, n_x))
    cdef double[:, :] SKp = np.empty((n_u, n_x))
    cdef int t, i, j, p
    cdef double s, fxi_pi, fxi_pj
    for i in range(n_u):
        for j in range(n_u):
            Eu[i, j] = 1.0 if i == j else 0.0
    for t in range(T1 - 1, -1, -1):
        if t == T1 - 1:
            for i in range(n_xi):
                qxi[i] = Rxi[t, i]
                for j in range(n_xi):
                    qq[i, j] = Rxixi[t, i, j]
        else:
            if natural:
                for i in range(n_x):
                    for j in range(n_x):
                        lam[i, j] = Vxx[i, j]
                for i in range(n_x):
                    s = Vx[i]
                    for j in range(n_x):
                        s += Vxx[i, j] * f[t, j]
                    vec[i] = s
            else:
                for i in range(n_x):
                    for j in range(n_x):
                        s = 1.0 if i == j else 0.0
                        for p in range(n_x):
                            s += Vxx[i, p] * Qcov[t, p, j]
                        M[i, j] = s
                if _lu(M, piv, n_x) != 0:
                    return Kst_arr, kst_arr, Sig_arr, Vx_arr, Vxx_arr, 4, t
                for j in range(n_x):
                    for i in range(n_x):
                        rhs[i] = Vxx[i, j]
                    _lu_solve_vec(M, piv, rhs, col, n_x)
                    for i in range(n_x):
                        lam[i, j] = col[i]
                _symmetrize(lam, n_x)
                for i in range(n_x):
                    s = Vx[i]
                    for j in range(n_x):
                        s += Vxx[i, j] * f[t, j]
                    rhs[i] = s
                _lu_solve_vec(M, piv, rhs, vec, n_x)
            # LF = lam [Fx Fu]
            for i in range(n_x):
                for j in range(n_xi):
                    s = 0.0
                    for p in range(n_x):
                        if j < n_x:
                            s += lam[i, p] * Fx[t, p, j]
                        else:
                            s += lam[i, p] * Fu[t, p, j - n_x]
                    LF[i, j] = s
            for i in range(n_xi):
                for j in range(n_xi):
                    s = Rxixi[t, i, j]
                    for p in range(n_x):
                        fxi_pi = Fx[t, p, i] if i < n_x else Fu[t, p, i - n_x]
                        s += fxi_pi * LF[p, j]
                    qq[i, j] = s
            _symmetrize(qq, n_xi)
            for i in range(n_xi):
                s = Rxi[t, i]
                for p in range(n_x):
                    fxi_pi = Fx[t, p, i] if i < n_x else Fu[t, p, i - n_x]
                    s += fxi_pi * vec[p]
                qxi[i] = s
        # Sinv from Cholesky of Sp[t]
        for i in range(n_u):
            for j in range(n_u):
                Amat[i, j] = Sp[t, i, j]
        if _chol(Amat, Ls, n_u) != 0:
            return Kst_arr, kst_arr, Sig_arr, Vx_arr, Vxx_arr, 3, t
        _chol_solve_mat(Ls, Eu, Sinv, n_u, n_u)
        _symmetrize(Sinv, n_u)
        for i in range(n_u):
            for j in range(n_u):
                Amat[i, j] = Sinv[i, j] + qq[n_x + i, n_x + j]
        _symmetrize(Amat, n_u)
        if _chol(Amat, La, n_u) != 0:
            return Kst_arr, kst_arr, Sig_arr, Vx_arr, Vxx_arr, 3, t
        _chol_solve_mat(La, Eu, Sig, n_u, n_u)
        _symmetrize(Sig, n_u)
        # a_k = Sinv kp - Qu ; a_K = Sinv Kp - Qux
        for i in range(n_u):
            s = -qxi[n_x + i]
            for j in range(n_u):
                s += Sinv[i, j] * kp[t, j]
            a_k[i] = s
            Sk[i] = s + qxi[n_x + i]  # Sinv kp
        for i in range(n_u):
            for j in range(n_x):
                s = -qq[n_x + i, j]
                for p in range(n_u):
                    s += Sinv[i, p] * Kp[t, p, j]
                a_K[i, j] = s
                SKp[i, j] = s + qq[n_x + i, j]  # Sinv Kp
        for i in range(n_u):
            s = 0.0
            for j in range(n_u):
                s += Sig[i, j] * a_k[j]
            Sak[i] = s
            kst[t, i] = s
        for i in range(n_u):
            for j in range(n_x):
                s = 0.0
                for p in range(n_u):
                    s += Sig[i, p] * a_K[p, j]
                SaK[i, j] = s
                Kst[t, i, j] = s
        for i in range(n_u):
            for j in range(n_u):
                Sigst[t, i, j] = Sig[i, j]
        # value update
        for i in range(n_x):
            s = qxi[i]
            for p in range(n_u):
                s += Kp[t, p, i] * Sk[p] - a_K[p, i] * Sak[p]
            Vx[i] = s
        for i in range(n_x):
            for j in range(n_x):
                s = qq[i, j]
                for p in range(n_u):
                    s += Kp[t, p, i] * SKp[p, j] - a_K[p, i] * SaK[p, j]
                M[i, j] = s
        for i in range(n_x):
            for j in range(n_x):
                Vxx[i, j] = 0.5 * (M[i, j] + M[j, i])
            Vx_out[t, i] = Vx[i]
        for i in range(n_x):
            for j in range(n_x):
                Vxx_out[t, i, j] = Vxx[i, j]
    return Kst_arr, kst_arr, Sig_arr, Vx_arr, Vxx_arr, 0, -1
