"""Timing comparison of the compiled and pure-numpy kernel backends.

Runs each kernel on benchmark-sized inputs (1001-step planar tracking
model) and on a small random model, and reports per-call wall time for
both backends plus the speedup.

Usage: python benchmarks/bench_backends.py [--repeats 20]
"""

import argparse
import time

import numpy as np

from apcd._backend import get_kernels
from apcd.checks import random_measurements, random_model
from apcd.extraction import extract_vanilla, observation_quadratics
from apcd.simulator import BenchmarkSpec, NoiseBank, build_tracking_model
from apcd.smoothing import _stack_systems, closed_loop_systems


def _time(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def _cases():
    rng = np.random.default_rng(0)
    model, _ = build_tracking_model(BenchmarkSpec(), rng)
    d = model.dims
    bank = NoiseBank(1, d, 1)
    Fx, Fu, f, Qcov = model.stacked_transitions()
    Lq = np.stack([np.linalg.cholesky(s.Qcov + 1e-12 * np.eye(4)) for s in model.transitions])
    pol = model.prior_policy
    Ls = np.stack([np.linalg.cholesky(pol.S[t]) for t in range(d.steps)])
    x0 = np.zeros(d.n_x)

    small = random_model(np.random.default_rng(1), steps=6, gu_zero=True)
    Z_small = random_measurements(small, np.random.default_rng(2))
    mix = extract_vanilla(small, [Z_small, random_measurements(small, np.random.default_rng(3))])
    sFx, sFu, sf, _ = small.stacked_transitions()
    sLq = np.stack([np.linalg.cholesky(s.Qcov) for s in small.transitions])
    Ks, ks, wmean, wprec, wlogn = mix.rollout_data()
    sbank = NoiseBank(4, small.dims, 1)
    sx0 = small.prior.mu0

    trans, emis = closed_loop_systems(model)
    A, b, Qc = _stack_systems(trans)
    C, dd, Rc = _stack_systems(emis)
    Z = np.zeros((d.steps, d.n_z))

    Rxi, Rxixi = observation_quadratics(model, Z)

    cases = {
        "rollout_linear (1001 steps)": lambda k: k.rollout_linear(
            Fx, Fu, f, Lq, pol.K, pol.k, Ls, x0, bank.e_q[0], bank.e_s[0]
        ),
        "rollout_mixture (small model)": lambda k: k.rollout_mixture(
            sFx, sFu, sf, sLq, Ks, ks, wmean, wprec, wlogn, sx0, sbank.e_q[0]
        ),
        "kf_forward (1001 steps)": lambda k: k.kf_forward(
            A, b, Qc, C, dd, Rc, model.prior.mu0, model.prior.sigma0, Z
        ),
        "backward_extract (1001 steps)": lambda k: k.backward_extract(
            Fx, Fu, f, Qcov, Rxi, Rxixi, pol.K, pol.k, pol.S, 0
        ),
    }
    fr = get_kernels("python").kf_forward(
        A, b, Qc, C, dd, Rc, model.prior.mu0, model.prior.sigma0, Z
    )
    cases["rts_backward (1001 steps)"] = lambda k: k.rts_backward(
        A, fr[2], fr[3], fr[0], fr[1]
    )
    return cases


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    compiled = get_kernels("compiled")
    pure = get_kernels("python")

    print(f"{'kernel':<32} {'compiled':>12} {'python':>12} {'speedup':>8}")
    for name, call in _cases().items():
        tc = _time(lambda: call(compiled), args.repeats)
        tp = _time(lambda: call(pure), args.repeats)
        print(f"{name:<32} {tc * 1e3:>10.3f}ms {tp * 1e3:>10.3f}ms {tp / tc:>7.1f}x")


if __name__ == "__main__":
    main()
