"""Benchmark sweep: dataset generation, permutation counting, extraction of
both policy flavors over random sequence subsets, and common-random-number
evaluation against the demonstrator's objective.

Every candidate policy in a sweep cell is evaluated on bit-identical noise
realizations drawn from the shared NoiseBank, so objective differences
reflect the policies and not the noise.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .errors import ConfigError, SimulationDivergedError
from .extraction import extract_natural, extract_vanilla
from .lqer import LqerCost, lqer_synthesize
from .model import ChmmModel, LinearPolicy
from .simulator import BenchmarkSpec, NoiseBank, build_tracking_model, generate_dataset, simulate


@dataclass(frozen=True)
class SweepConfig:
    benchmark: BenchmarkSpec = field(default_factory=BenchmarkSpec)
    sigma_sq: tuple = (1e4,)
    n_grid: tuple = (1, 2, 4, 8)
    M: int = 100
    pool: int = 50
    f_bar: float = 0.01
    seed: int = 0
    jobs: int = 1

    def check(self) -> None:
        if not (0 < self.f_bar < 1 or self.f_bar == 1):
            raise ConfigError("f_bar must lie in (0, 1]")
        if not (max(self.n_grid) <= self.pool <= self.M):
            raise ConfigError("need N <= pool <= M")


@dataclass(frozen=True)
class SweepRow:
    sigma_sq: float
    N: int
    perm: int
    method: str  # vanilla | natural | lqer
    objective: float
    quad_cost: float
    diverged: bool


@dataclass
class SweepResult:
    rows: list[SweepRow]

    CSV_HEADER = [
        "sigma_sq",
        "N",
        "perm",
        "method",
        "objective",
        "quad_cost",
        "diverged",
    ]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.CSV_HEADER)
            for r in self.rows:
                w.writerow(_row_to_csv(r))

    @staticmethod
    def read_csv(path) -> "SweepResult":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != SweepResult.CSV_HEADER:
                raise ConfigError(f"unexpected results header: {header}")
            rows = [_row_from_csv(row) for row in reader]
        return SweepResult(rows)

    def summary(self) -> list[dict]:
        """Per-(sigma_sq, N, method) median and interquartile range."""
        cells: dict[tuple, list[float]] = {}
        for r in self.rows:
            cells.setdefault((r.sigma_sq, r.N, r.method), []).append(r.objective)
        out = []
        for (s, n, m), vals in sorted(cells.items()):
            arr = np.array(vals)
            out.append(
                {
                    "sigma_sq": s,
                    "N": n,
                    "method": m,
                    "median": float(np.median(arr)),
                    "q25": float(np.quantile(arr, 0.25)),
                    "q75": float(np.quantile(arr, 0.75)),
                    "count": len(vals),
                }
            )
        return out

    def write_summary_csv(self, path) -> None:
        cols = ["sigma_sq", "N", "method", "median", "q25", "q75", "count"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in self.summary():
                w.writerow(
                    [
                        repr(float(row["sigma_sq"])),
                        row["N"],
                        row["method"],
                        repr(row["median"]),
                        repr(row["q25"]),
                        repr(row["q75"]),
                        row["count"],
                    ]
                )

    def write_plot_data(self, directory) -> list:
        """Per-(sigma_sq, method) objective-vs-N series for external plotting."""
        import pathlib

        directory = pathlib.Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        series: dict[tuple, list] = {}
        for row in self.summary():
            series.setdefault((row["sigma_sq"], row["method"]), []).append(row)
        written = []
        for (s, m), rows in sorted(series.items()):
            path = directory / f"objective_vs_n_sigma{s:g}_{m}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["N", "median", "q25", "q75"])
                for row in sorted(rows, key=lambda r: r["N"]):
                    w.writerow(
                        [row["N"], repr(row["median"]), repr(row["q25"]), repr(row["q75"])]
                    )
            written.append(path)
        return written


def _row_to_csv(r: SweepRow) -> list:
    return [
        repr(float(r.sigma_sq)),
        r.N,
        r.perm,
        r.method,
        repr(float(r.objective)),
        repr(float(r.quad_cost)),
        int(r.diverged),
    ]


def _row_from_csv(row: list) -> SweepRow:
    return SweepRow(
        sigma_sq=float(row[0]),
        N=int(row[1]),
        perm=int(row[2]),
        method=row[3],
        objective=float(row[4]),
        quad_cost=float(row[5]),
        diverged=bool(int(row[6])),
    )


def required_permutations(pool: int, N: int, f_bar: float) -> int:
    """Smallest P with f(P) <= f_bar for the subset-exclusion product.

    With B = C(pool, N) subsets and A = C(pool-1, N) of them excluding a
    fixed sequence, the probability that P distinct random subsets all
    exclude it is f(P) = prod_{p=1..P} (A - p)/(B - p). Evaluated with
    exact integer binomials and log accumulation.
    """
    if not 1 <= N <= pool:
        raise ConfigError("need 1 <= N <= pool")
    if f_bar >= 1.0:
        return 1
    A = math.comb(pool - 1, N)
    B = math.comb(pool, N)
    if A == 0:
        return 1
    log_f = 0.0
    P = 0
    while True:
        P += 1
        if A - P <= 0:
            return P  # no exclusive subsets remain; f hits zero
        log_f += math.log(Fraction(A - P, B - P))
        if log_f <= math.log(f_bar):
            return P


def quadratic_cost(cost: LqerCost, states: np.ndarray, controls: np.ndarray) -> float:
    """0.5 * sum_t of the tracking stage costs along one trajectory."""
    dp = states[:, :2] - cost.reference
    v = states[:, 2:]
    total = (
        np.einsum("ti,ij,tj->", dp, cost.Rp, dp)
        + np.einsum("ti,ij,tj->", v, cost.Rv, v)
        + np.einsum("ti,ij,tj->", controls, cost.Ru, controls)
    )
    return 0.5 * float(total)


def evaluate_objective(
    model: ChmmModel, cost: LqerCost, policy, bank: NoiseBank, runs
) -> tuple[float, float]:
    """Risk objective and mean quadratic cost over the given run indices.

    Simulates with the policy's mean control on the shared noise bank. The
    risk objective is (2/lam) * log-mean-exp((lam/2) J_i) with
    max-subtraction; a diverged run yields the +inf sentinel.
    """
    costs = []
    for i in runs:
        try:
            traj, _ = simulate(model, policy, bank, i, with_policy_noise=False)
        except SimulationDivergedError:
            return float("inf"), float("inf")
        costs.append(quadratic_cost(cost, traj.states, traj.controls))
    J = np.array(costs)
    if not np.isfinite(J).all():
        # finite states can still overflow the quadratic cost
        return float("inf"), float("inf")
    lam = cost.lam
    a = 0.5 * lam * J
    m = a.max()
    risk = (2.0 / lam) * (m + np.log(np.mean(np.exp(a - m))))
    return float(risk), float(J.mean())


def _sample_subsets(rng, pool_indices: np.ndarray, N: int, P: int) -> list[tuple]:
    """P pairwise-distinct N-subsets of the pool, as sorted index tuples."""
    max_subsets = math.comb(len(pool_indices), N)
    P = min(P, max_subsets)
    seen: set[tuple] = set()
    out = []
    while len(out) < P:
        pick = tuple(sorted(rng.choice(pool_indices, size=N, replace=False).tolist()))
        if pick not in seen:
            seen.add(pick)
            out.append(pick)
    return out


def _rho_policy(model: ChmmModel, sigma_sq: float) -> LinearPolicy:
    d = model.dims
    return LinearPolicy.constant(
        d.steps,
        np.zeros((d.n_u, d.n_x)),
        np.zeros(d.n_u),
        sigma_sq * np.eye(d.n_u),
    )


# Worker-process state for parallel sweeps; set once per worker.
_WORKER: dict = {}


def _pool_init(payload):
    _WORKER["payload"] = payload


def _cell_job(args):
    sigma_sq, N, perm, subset = args
    payload = _WORKER["payload"]
    return _run_cell(payload, sigma_sq, N, perm, subset)


def _run_cell(payload, sigma_sq, N, perm, subset):
    model, cost, bank, sequences, eval_runs = payload
    model_rho = model.with_prior_policy(_rho_policy(model, sigma_sq))
    subset_seqs = [sequences[i] for i in subset]
    rows = []
    for method, extractor in (
        ("vanilla", extract_vanilla),
        ("natural", extract_natural),
    ):
        policy = extractor(model_rho, subset_seqs)
        obj, quad = evaluate_objective(model, cost, policy, bank, eval_runs)
        rows.append(
            SweepRow(
                sigma_sq=sigma_sq,
                N=N,
                perm=perm,
                method=method,
                objective=obj,
                quad_cost=quad,
                diverged=not math.isfinite(obj),
            )
        )
    return rows


def prepare_sweep(config: SweepConfig):
    """Model, cost, demonstrator, dataset, and bank for a sweep config."""
    config.check()
    ss = np.random.SeedSequence(config.seed)
    model_seed, bank_seed, subset_seed = ss.spawn(3)
    model, cost = build_tracking_model(
        config.benchmark, np.random.default_rng(model_seed)
    )
    demonstrator = lqer_synthesize(model, cost)
    runs, bank = generate_dataset(
        model, demonstrator, config.M, int(bank_seed.generate_state(1)[0])
    )
    return model, cost, demonstrator, runs, bank, np.random.default_rng(subset_seed)


def run_sweep(config: SweepConfig, partial_path=None) -> SweepResult:
    """The full sigma^2 x N experiment; returns one row per evaluated policy.

    Cells run serially for jobs == 1, otherwise on a process pool. Rows are
    returned in deterministic (sigma_sq, N, perm, method) order regardless
    of completion order; partial_path, when given, receives rows as they
    complete.
    """
    model, cost, demonstrator, runs, bank, rng = prepare_sweep(config)
    sequences = [meas.z for _, meas in runs]
    eval_runs = list(range(config.M))
    pool_indices = np.sort(rng.choice(config.M, size=config.pool, replace=False))
    payload = (model, cost, bank, sequences, eval_runs)

    base_obj, base_quad = evaluate_objective(model, cost, demonstrator, bank, eval_runs)

    jobs_list = []
    for sigma_sq in config.sigma_sq:
        for N in config.n_grid:
            P = required_permutations(config.pool, N, config.f_bar)
            subsets = _sample_subsets(rng, pool_indices, N, P)
            for perm, subset in enumerate(subsets):
                jobs_list.append((float(sigma_sq), int(N), perm, subset))

    rows: list[SweepRow] = []
    partial = open(partial_path, "w", newline="") if partial_path else None
    try:
        if partial:
            csv.writer(partial).writerow(SweepResult.CSV_HEADER)
        if config.jobs <= 1:
            _pool_init(payload)
            results = map(_cell_job, jobs_list)
            for got in results:
                rows.extend(got)
                if partial:
                    w = csv.writer(partial)
                    for r in got:
                        w.writerow(_row_to_csv(r))
                    partial.flush()
        else:
            with ProcessPoolExecutor(
                max_workers=config.jobs,
                initializer=_pool_init,
                initargs=(payload,),
            ) as ex:
                for got in ex.map(_cell_job, jobs_list, chunksize=1):
                    rows.extend(got)
                    if partial:
                        w = csv.writer(partial)
                        for r in got:
                            w.writerow(_row_to_csv(r))
                        partial.flush()
    finally:
        if partial:
            partial.close()

    for sigma_sq in config.sigma_sq:
        for N in config.n_grid:
            rows.append(
                SweepRow(
                    sigma_sq=float(sigma_sq),
                    N=int(N),
                    perm=-1,
                    method="lqer",
                    objective=base_obj,
                    quad_cost=base_quad,
                    diverged=not math.isfinite(base_obj),
                )
            )
    rows.sort(key=lambda r: (r.sigma_sq, r.N, r.perm, r.method))
    return SweepResult(rows)


def desk_config(**overrides) -> SweepConfig:
    """CI-scale default: shorter horizon, fewer experiments."""
    bench = BenchmarkSpec(horizon=0.5)
    cfg = SweepConfig(benchmark=bench, M=40, pool=20, n_grid=(1, 2, 4, 8))
    return replace(cfg, **overrides) if overrides else cfg


def full_scale_config(**overrides) -> SweepConfig:
    """Full-scale configuration: 2 s horizon, 100 runs, 50-sequence pool."""
    cfg = SweepConfig()
    return replace(cfg, **overrides) if overrides else cfg
