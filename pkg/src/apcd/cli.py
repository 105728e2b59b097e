"""Command-line entry point: dataset generation, policy extraction,
evaluation, the full sweep, oracle self-checks, and plot-data export.

Every command is deterministic given (config, seed) and writes a
manifest.json describing the run: a canonical digest of the effective
configuration, the seed, the tool version, timestamps, and the output
paths.

Exit codes: 0 success, 1 usage/config error, 2 numerical failure.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import pathlib
import sys
import time
from datetime import datetime, timezone

import click
import numpy as np

from . import __version__
from .errors import ApcdError, ConfigError, NumericalError
from .extraction import extract_natural, extract_vanilla, load_policy, save_policy
from .harness import (
    SweepConfig,
    desk_config,
    evaluate_objective,
    full_scale_config,
    run_sweep,
    SweepResult,
)
from .lqer import lqer_synthesize, load_cost, save_cost
from .simulator import (
    BenchmarkSpec,
    build_tracking_model,
    generate_dataset,
    load_dataset,
    save_dataset,
)

logger = logging.getLogger("apcd")

_LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


def _setup_logging():
    logging.basicConfig(level=logging.INFO, format=_LOG_FORMAT, stream=sys.stderr)


class _Stage:
    """Context manager logging one single-line timing record per stage."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, *_):
        ms = 1e3 * (time.perf_counter() - self.t0)
        status = "ok" if exc_type is None else "error"
        logger.info("stage=%s status=%s elapsed_ms=%.1f", self.name, status, ms)
        return False


def config_digest(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def write_manifest(out_dir, config: dict, seed: int, outputs: list, started: str):
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "config_digest": config_digest(config),
        "config": config,
        "seed": seed,
        "version": __version__,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "outputs": [str(p) for p in outputs],
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


def load_config(path) -> dict:
    """Parse the JSON config with field/position diagnostics."""
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"malformed config {path}: line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    known = {"benchmark", "sweep"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    return doc


def _build_dataclass(cls, base, section: dict, label: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - fields
    if unknown:
        raise ConfigError(f"unknown {label} field(s): {sorted(unknown)}")
    coerced = {
        k: tuple(v) if isinstance(v, list) else v for k, v in section.items()
    }
    return dataclasses.replace(base, **coerced)


def build_sweep_config(doc: dict, full_scale: bool, **overrides) -> SweepConfig:
    base = full_scale_config() if full_scale else desk_config()
    bench = _build_dataclass(
        BenchmarkSpec, base.benchmark, doc.get("benchmark", {}), "benchmark"
    )
    cfg = _build_dataclass(
        SweepConfig,
        dataclasses.replace(base, benchmark=bench),
        doc.get("sweep", {}),
        "sweep",
    )
    effective = {k: v for k, v in overrides.items() if v is not None}
    if effective:
        cfg = dataclasses.replace(cfg, **effective)
    return cfg


def _effective_config(cfg: SweepConfig) -> dict:
    doc = dataclasses.asdict(cfg)
    doc["benchmark"] = dataclasses.asdict(cfg.benchmark)
    return json.loads(json.dumps(doc, default=list))


@click.group()
def cli():
    """Feedback-policy extraction from partial observations."""
    _setup_logging()


_config_opt = click.option(
    "--config", "config_path", type=click.Path(), default=None,
    help="JSON config file; flags override its fields.",
)
_seed_opt = click.option("--seed", type=int, default=None, help="Master seed.")
_full_opt = click.option(
    "--full-scale", is_flag=True, help="Full experiment scale instead of desk scale."
)


@cli.command()
@_config_opt
@click.option("--out", type=click.Path(), required=True, help="Dataset directory.")
@_seed_opt
@click.option("--steps", type=int, default=None, help="Override horizon step count.")
@click.option("-M", "--runs", "m_runs", type=int, default=None, help="Experiment count.")
@_full_opt
def gen(config_path, out, seed, steps, m_runs, full_scale):
    """Generate a demonstrator dataset (model, cost, runs, noise bank)."""
    doc = load_config(config_path)
    cfg = build_sweep_config(doc, full_scale, seed=seed, M=m_runs)
    if steps is not None:
        bench = dataclasses.replace(
            cfg.benchmark, horizon=(steps - 1) * cfg.benchmark.dt
        )
        cfg = dataclasses.replace(cfg, benchmark=bench)
    started = _utcnow()
    with _Stage("gen"):
        ss = np.random.SeedSequence(cfg.seed)
        model_seed, bank_seed, _ = ss.spawn(3)
        model, cost = build_tracking_model(
            cfg.benchmark, np.random.default_rng(model_seed)
        )
        demonstrator = lqer_synthesize(model, cost)
        runs, bank = generate_dataset(
            model, demonstrator, cfg.M, int(bank_seed.generate_state(1)[0])
        )
        save_dataset(out, model, bank, runs)
        save_cost(pathlib.Path(out) / "cost.json", cost)
    outputs = sorted(str(p) for p in pathlib.Path(out).iterdir())
    write_manifest(out, _effective_config(cfg), cfg.seed, outputs, started)
    click.echo(f"dataset with {cfg.M} runs written to {out}")


@cli.command()
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--method", type=click.Choice(["vanilla", "natural"]), required=True)
@click.option("--n", "n_seq", type=int, required=True, help="Sequences to extract from.")
@click.option("--sigma-sq", type=float, default=1e4, show_default=True,
              help="Prior-policy covariance magnitude.")
@_seed_opt
@click.option("--pool", type=int, default=None,
              help="Sequence pool size (defaults to all runs).")
@click.option("--out", type=click.Path(), required=True, help="Policy JSON path.")
def extract(dataset, method, n_seq, sigma_sq, seed, pool, out):
    """Extract a policy from N randomly chosen dataset sequences."""
    if n_seq < 1:
        raise click.UsageError("--n must be >= 1")
    model, _, _, sequences = load_dataset(dataset)
    pool = pool if pool is not None else len(sequences)
    if not 1 <= pool <= len(sequences):
        raise click.UsageError(f"--pool must lie in [1, {len(sequences)}]")
    if n_seq > pool:
        raise click.UsageError(f"--n {n_seq} exceeds pool size {pool}")
    seed = 0 if seed is None else seed
    started = _utcnow()
    with _Stage("extract"):
        rng = np.random.default_rng(seed)
        pool_idx = np.sort(rng.choice(len(sequences), size=pool, replace=False))
        picked = np.sort(rng.choice(pool_idx, size=n_seq, replace=False))
        from .harness import _rho_policy

        model_rho = model.with_prior_policy(_rho_policy(model, sigma_sq))
        chosen = [sequences[i] for i in picked]
        extractor = extract_vanilla if method == "vanilla" else extract_natural
        policy = extractor(model_rho, chosen)
        save_policy(out, policy)
    cfg = {
        "dataset": str(dataset),
        "method": method,
        "n": n_seq,
        "sigma_sq": sigma_sq,
        "pool": pool,
        "picked": [int(i) for i in picked],
    }
    write_manifest(pathlib.Path(out).parent, cfg, seed, [out], started)
    click.echo(f"{method} policy from {n_seq} sequence(s) written to {out}")


@cli.command()
@click.argument("dataset", type=click.Path(exists=True))
@click.argument("policy_file", type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None, help="Evaluation JSON path.")
def evaluate(dataset, policy_file, out):
    """Evaluate a policy's risk objective on a dataset's validation runs."""
    started = _utcnow()
    with _Stage("evaluate"):
        model, bank, _, _ = load_dataset(dataset)
        cost = load_cost(pathlib.Path(dataset) / "cost.json")
        policy = load_policy(policy_file)
        obj, quad = evaluate_objective(model, cost, policy, bank, range(bank.M))
    click.echo(f"objective {obj:.6e}  mean quadratic cost {quad:.6e}")
    if out:
        doc = {"objective": obj, "quad_cost": quad, "runs": bank.M}
        with open(out, "w") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        cfg = {"dataset": str(dataset), "policy": str(policy_file)}
        write_manifest(pathlib.Path(out).parent, cfg, 0, [out], started)


@cli.command()
@_config_opt
@click.option("--out", type=click.Path(), required=True, help="Results directory.")
@_seed_opt
@click.option("--jobs", type=int, default=None,
              help="Worker processes (default: available cores).")
@click.option("--pool", type=int, default=None, help="Extraction pool size.")
@_full_opt
def sweep(config_path, out, seed, jobs, pool, full_scale):
    """Run the sigma^2 x N sweep and write results.csv / summary.csv."""
    doc = load_config(config_path)
    if jobs is None:
        jobs = os.cpu_count() or 1
    cfg = build_sweep_config(doc, full_scale, seed=seed, jobs=jobs, pool=pool)
    cfg.check()
    out_dir = pathlib.Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = _utcnow()
    with _Stage("sweep"):
        result = run_sweep(cfg, partial_path=out_dir / "results.partial.csv")
        result.write_csv(out_dir / "results.csv")
        result.write_summary_csv(out_dir / "summary.csv")
        (out_dir / "results.partial.csv").unlink(missing_ok=True)
    outputs = [out_dir / "results.csv", out_dir / "summary.csv"]
    write_manifest(out_dir, _effective_config(cfg), cfg.seed, outputs, started)
    click.echo(f"{len(result.rows)} result rows written to {out_dir / 'results.csv'}")


@cli.command("oracle-check")
@click.option("--trials", type=int, default=50, show_default=True)
@click.option("--steps", type=click.IntRange(2, 10), default=None,
              help="Fixed horizon for the random models (<= 10).")
@_seed_opt
def oracle_check(trials, steps, seed):
    """Run the oracle-equivalence and projection-optimality suites."""
    from .checks import run_oracle_suite

    with _Stage("oracle-check"):
        reports = run_oracle_suite(
            trials=trials, steps=steps, seed=0 if seed is None else seed
        )
    for r in reports:
        click.echo(r.line())
    if not all(r.passed for r in reports):
        raise NumericalError("oracle suite reported failures")
    click.echo("all checks passed")


@cli.command("plot-data")
@click.argument("results_csv", type=click.Path(exists=True))
@click.option("--out", type=click.Path(), required=True, help="Plot-data directory.")
def plot_data(results_csv, out):
    """Export per-method objective-vs-N series from a results CSV."""
    started = _utcnow()
    with _Stage("plot-data"):
        result = SweepResult.read_csv(results_csv)
        written = result.write_plot_data(out)
    cfg = {"results": str(results_csv)}
    write_manifest(out, cfg, 0, written, started)
    click.echo(f"{len(written)} plot-data file(s) written to {out}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except (click.UsageError, ConfigError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return 2
    except ApcdError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
