"""Sweep orchestration: seeded realizations, median-BMI aggregation, and
plot-ready CSV emission.

Outputs of a sweep (all deterministic for a fixed config):

* ``results.csv``      - one row per (snr, sigma_theta_sq, algorithm) cell;
* ``realizations.csv`` - one row per realization with its BMI and the
  optimized demapper variance;
* ``cells/``           - per-cell JSON used for interrupt/resume, keyed by
  the config hash;
* ``run_meta.json``    - config echo, hash, and wall times (wall times are
  intentionally kept out of the CSVs so those stay byte-identical).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np

from .channel import ChannelParams, transmit
from .constellation import Constellation, build_qam, maxwell_boltzmann_shape, shape_for_entropy
from .estimators import (
    BpsOptParams,
    EstimatorConfig,
    FactorTables,
    _distance_tables,
    bps_estimate,
    bps_opt_estimate,
    cpn_estimate,
    make_grid,
    map_bp_estimate,
    q_matrix,
)
from .metrics import optimize_demapper_variance
from .postproc import postprocess
from .training import TrainSchedule, load_params, save_params, save_report, train, weights_to_csv

KNOWN_ALGORITHMS = ("bps", "cpn", "map_bp", "bps_opt")

WORKERS_ENV_VAR = "WIENER_CPE_WORKERS"


class ConfigError(ValueError):
    """Invalid experiment configuration; maps to CLI exit code 1."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One sweep: constellation, channel grid, estimators, and scale."""

    order: int = 64
    target_entropy: float | None = None
    mb_lambda: float | None = None
    snr_db: tuple[float, ...] = (16.0, 20.0, 24.0)
    sigma_theta_sq: tuple[float, ...] = (1e-5, 1.18e-4, 1e-3)
    algorithms: tuple[str, ...] = ("bps", "cpn", "map_bp")
    half_window: int = 32
    num_test_phases: int = 60
    realizations: int = 100
    num_symbols: int = 2**15
    seed: int = 0
    exclude_edges: bool = False
    r_max: int = 3
    full_sequence_bp: bool = False
    trained_params_path: str | None = None
    phi0: float = 0.0
    random_phi0: bool = False

    def __post_init__(self):
        object.__setattr__(self, "snr_db", tuple(float(v) for v in self.snr_db))
        object.__setattr__(self, "sigma_theta_sq", tuple(float(v) for v in self.sigma_theta_sq))
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        if not self.snr_db or not self.sigma_theta_sq:
            raise ConfigError("sweep lists must be nonempty")
        if self.realizations < 1:
            raise ConfigError("realizations must be at least 1")
        if not self.algorithms:
            raise ConfigError("need at least one algorithm")
        for name in self.algorithms:
            if name not in KNOWN_ALGORITHMS:
                raise ConfigError(f"unknown algorithm {name!r}; known: {KNOWN_ALGORITHMS}")
        if self.target_entropy is not None and self.mb_lambda is not None:
            raise ConfigError("set at most one of target_entropy and mb_lambda")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def build_constellation(config: ExperimentConfig) -> Constellation:
    c = build_qam(config.order)
    if config.target_entropy is not None:
        c, _ = shape_for_entropy(c, config.target_entropy)
    elif config.mb_lambda is not None:
        c = maxwell_boltzmann_shape(c, config.mb_lambda)
    return c


def _load_opt_params(config: ExperimentConfig) -> BpsOptParams:
    if config.trained_params_path is None:
        # uniform weights with a near-zero temperature recover plain BPS
        return BpsOptParams.uniform(config.half_window, temperature=1e-6)
    params = load_params(config.trained_params_path)
    if params.weights.size != 2 * config.half_window + 1:
        raise ConfigError("trained params window length does not match half_window")
    return params


def config_hash(config: ExperimentConfig) -> str:
    """Hash of the result-relevant config content (trained parameters are
    hashed by value, not by path)."""
    doc = asdict(config)
    doc.pop("trained_params_path")
    if config.trained_params_path is not None:
        params = _load_opt_params(config)
        doc["trained_params"] = {
            "raw_weights": params.raw_weights.tolist(),
            "raw_temp": params.raw_temp,
        }
    canonical = json.dumps(doc, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class CellResult:
    """Aggregated scores of one (snr, sigma_theta_sq, algorithm) cell."""

    snr_db: float
    sigma_theta_sq: float
    algorithm: str
    bmi_median: float
    bmi_q25: float
    bmi_q75: float
    slips_median: float
    bmi_values: tuple[float, ...]
    sigma_opt_values: tuple[float, ...]
    slip_counts: tuple[int, ...]
    wall_time_s: float


def aggregate_cell(values) -> tuple[float, float, float]:
    """(median, lower quartile, upper quartile) of the realization scores."""
    arr = np.asarray(values, dtype=np.float64)
    return (
        float(np.median(arr)),
        float(np.percentile(arr, 25)),
        float(np.percentile(arr, 75)),
    )


def _evaluate_realization(args):
    (constellation, config, snr_db, sigma_theta_sq, realization, opt_params) = args
    params = ChannelParams(
        snr_db=snr_db,
        sigma_theta_sq=sigma_theta_sq,
        num_symbols=config.num_symbols,
        seed=config.seed + realization,
        phi0=config.phi0,
        random_phi0=config.random_phi0,
    )
    trace = transmit(constellation, params)
    grid = make_grid(config.num_test_phases, constellation.sym_order)
    # the emission kernel exp(-d^2/(2 sigma^2)) takes the per-component
    # noise variance, matching the true circular-Gaussian likelihood
    cfg = EstimatorConfig(
        half_window=config.half_window,
        grid=grid,
        sigma_n_sq=max(trace.sigma_n_sq / 2.0, 1e-12),
        sigma_theta_sq=sigma_theta_sq,
        wrap_terms=config.r_max,
        full_sequence_bp=config.full_sequence_bp,
    )
    want_min = bool({"bps", "bps_opt"} & set(config.algorithms))
    want_log_r = bool({"cpn", "map_bp"} & set(config.algorithms))
    d_table, log_r = _distance_tables(
        trace.rx_symbols, grid, constellation, cfg.sigma_n_sq, want_min, want_log_r
    )
    tables = None
    if want_log_r:
        tables = FactorTables(log_r, q_matrix(grid, cfg.sigma_theta_sq, cfg.wrap_terms))

    out = {}
    for algo in config.algorithms:
        if algo == "bps":
            phi_raw = bps_estimate(trace.rx_symbols, cfg, constellation, d_table=d_table)
        elif algo == "cpn":
            phi_raw = cpn_estimate(trace.rx_symbols, cfg, constellation, tables=tables)
        elif algo == "map_bp":
            phi_raw = map_bp_estimate(trace.rx_symbols, cfg, constellation, tables=tables)
        else:
            phi_raw = bps_opt_estimate(
                trace.rx_symbols, cfg, constellation, opt_params, d_table=d_table
            )
        corrected = postprocess(
            phi_raw, trace.rx_symbols, trace.phase_path, constellation.sym_order
        )
        x_hat = corrected.x_hat
        bits = trace.bits
        if config.exclude_edges and config.num_symbols > 2 * config.half_window:
            sl = slice(config.half_window, config.num_symbols - config.half_window)
            x_hat = x_hat[sl]
            bits = bits[sl]
        sigma_opt, report = optimize_demapper_variance(
            x_hat, bits, constellation, edge_excluded=config.exclude_edges
        )
        out[algo] = (report.bmi_bits, sigma_opt, len(corrected.slip_events))
    return out


def _worker_count(workers: int | None) -> int:
    if workers is not None:
        return max(1, workers)
    env = os.environ.get(WORKERS_ENV_VAR)
    return max(1, int(env)) if env else 1


def _cell_path(cells_dir: Path, digest: str, i_snr: int, i_sigma: int, algo: str) -> Path:
    return cells_dir / f"{digest}_s{i_snr}_g{i_sigma}_{algo}.json"


def run_sweep(
    config: ExperimentConfig, output_dir, workers: int | None = None
) -> list[CellResult]:
    """Run all (snr, sigma, algorithm) cells and persist the result tables.

    Realization r of every cell uses seed = config.seed + r (common random
    numbers across cells). Completed cells are checkpointed under
    ``cells/`` and skipped on re-run when the config hash matches.
    """
    out_dir = Path(output_dir)
    cells_dir = out_dir / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    digest = config_hash(config)
    constellation = build_constellation(config)
    opt_params = _load_opt_params(config) if "bps_opt" in config.algorithms else None
    n_workers = _worker_count(workers)

    results: list[CellResult] = []
    wall_times: dict[str, float] = {}
    for i_snr, snr in enumerate(config.snr_db):
        for i_sigma, sigma in enumerate(config.sigma_theta_sq):
            cached = {
                algo: _cell_path(cells_dir, digest, i_snr, i_sigma, algo)
                for algo in config.algorithms
            }
            if all(p.exists() for p in cached.values()):
                for algo in config.algorithms:
                    results.append(_load_cell(cached[algo], snr, sigma, algo))
                continue
            started = time.perf_counter()
            tasks = [
                (constellation, config, snr, sigma, r, opt_params)
                for r in range(config.realizations)
            ]
            if n_workers > 1:
                with ProcessPoolExecutor(max_workers=n_workers) as pool:
                    per_realization = list(pool.map(_evaluate_realization, tasks))
            else:
                per_realization = [_evaluate_realization(t) for t in tasks]
            elapsed = time.perf_counter() - started
            for algo in config.algorithms:
                bmi_values = tuple(res[algo][0] for res in per_realization)
                sigma_values = tuple(res[algo][1] for res in per_realization)
                slip_counts = tuple(res[algo][2] for res in per_realization)
                median, q25, q75 = aggregate_cell(bmi_values)
                cell = CellResult(
                    snr_db=snr,
                    sigma_theta_sq=sigma,
                    algorithm=algo,
                    bmi_median=median,
                    bmi_q25=q25,
                    bmi_q75=q75,
                    slips_median=float(np.median(slip_counts)),
                    bmi_values=bmi_values,
                    sigma_opt_values=sigma_values,
                    slip_counts=slip_counts,
                    wall_time_s=elapsed / len(config.algorithms),
                )
                results.append(cell)
                _save_cell(cached[algo], cell)
                wall_times[f"snr={snr} sigma={sigma} algo={algo}"] = cell.wall_time_s

    _write_results_csv(out_dir / "results.csv", results, config, digest)
    _write_realizations_csv(out_dir / "realizations.csv", results, config)
    meta = {
        "config": asdict(config),
        "config_hash": digest,
        "wall_times_s": wall_times,
        "workers": n_workers,
    }
    with open(out_dir / "run_meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    return results


def _save_cell(path: Path, cell: CellResult) -> None:
    doc = {
        "bmi_values": list(cell.bmi_values),
        "sigma_opt_values": list(cell.sigma_opt_values),
        "slip_counts": list(cell.slip_counts),
        "wall_time_s": cell.wall_time_s,
    }
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
    tmp.replace(path)


def _load_cell(path: Path, snr: float, sigma: float, algo: str) -> CellResult:
    with open(path) as fh:
        doc = json.load(fh)
    median, q25, q75 = aggregate_cell(doc["bmi_values"])
    return CellResult(
        snr_db=snr,
        sigma_theta_sq=sigma,
        algorithm=algo,
        bmi_median=median,
        bmi_q25=q25,
        bmi_q75=q75,
        slips_median=float(np.median(doc["slip_counts"])),
        bmi_values=tuple(doc["bmi_values"]),
        sigma_opt_values=tuple(doc["sigma_opt_values"]),
        slip_counts=tuple(int(v) for v in doc["slip_counts"]),
        wall_time_s=float(doc["wall_time_s"]),
    )


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def _write_results_csv(path: Path, results, config: ExperimentConfig, digest: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "config_hash",
                "snr_db",
                "sigma_theta_sq",
                "algorithm",
                "M",
                "N",
                "num_symbols",
                "realizations",
                "bmi_median",
                "bmi_q25",
                "bmi_q75",
                "slips_median",
            ]
        )
        for cell in results:
            writer.writerow(
                [
                    digest,
                    _fmt(cell.snr_db),
                    _fmt(cell.sigma_theta_sq),
                    cell.algorithm,
                    config.num_test_phases,
                    config.half_window,
                    config.num_symbols,
                    config.realizations,
                    _fmt(cell.bmi_median),
                    _fmt(cell.bmi_q25),
                    _fmt(cell.bmi_q75),
                    _fmt(cell.slips_median),
                ]
            )


def _write_realizations_csv(path: Path, results, config: ExperimentConfig) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["snr_db", "sigma_theta_sq", "algorithm", "M", "N", "realization", "bmi", "sigma_opt"]
        )
        for cell in results:
            for r, (bmi_val, sigma_val) in enumerate(
                zip(cell.bmi_values, cell.sigma_opt_values)
            ):
                writer.writerow(
                    [
                        _fmt(cell.snr_db),
                        _fmt(cell.sigma_theta_sq),
                        cell.algorithm,
                        config.num_test_phases,
                        config.half_window,
                        r,
                        _fmt(bmi_val),
                        _fmt(sigma_val),
                    ]
                )


def emit_plot_data(results, config: ExperimentConfig, output_dir) -> list[Path]:
    """One BMI-vs-SNR CSV per sigma_theta_sq (one column per algorithm),
    plus a window-weights CSV when trained parameters are configured."""
    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lookup = {(c.snr_db, c.sigma_theta_sq, c.algorithm): c.bmi_median for c in results}
    written = []
    for sigma in config.sigma_theta_sq:
        path = out_dir / f"bmi_vs_snr_sigma_theta_{sigma:.6g}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["snr_db", *config.algorithms])
            for snr in config.snr_db:
                row = [_fmt(snr)]
                complete = True
                for algo in config.algorithms:
                    key = (snr, sigma, algo)
                    if key not in lookup:
                        complete = False
                        break
                    row.append(_fmt(lookup[key]))
                if complete:
                    writer.writerow(row)
        written.append(path)
    if config.trained_params_path is not None:
        path = out_dir / "learned_weights.csv"
        weights_to_csv(_load_opt_params(config), path)
        written.append(path)
    return written


def run_train(
    config: ExperimentConfig,
    schedule: TrainSchedule,
    output_dir,
    loss_kind: str = "bce",
    heldout_realizations: int = 0,
    heldout_seed_offset: int = 10_000,
):
    """Train the softmin-BPS parameters for one (snr, sigma_theta_sq) cell.

    Persists ``params.json``, ``report.json``, and ``weights.csv`` under
    ``output_dir``; optionally evaluates on held-out seeds afterwards.
    """
    if len(config.snr_db) != 1 or len(config.sigma_theta_sq) != 1:
        raise ConfigError("training requires a single (snr, sigma_theta_sq) cell")
    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    constellation = build_constellation(config)
    grid = make_grid(config.num_test_phases, constellation.sym_order)
    channel = ChannelParams(
        snr_db=config.snr_db[0],
        sigma_theta_sq=config.sigma_theta_sq[0],
        num_symbols=config.num_symbols,
        seed=config.seed,
        phi0=config.phi0,
        random_phi0=config.random_phi0,
    )
    noise_var = 10.0 ** (-config.snr_db[0] / 10.0) if math.isfinite(config.snr_db[0]) else 0.0
    cfg = EstimatorConfig(
        half_window=config.half_window,
        grid=grid,
        sigma_n_sq=max(noise_var / 2.0, 1e-12),
        sigma_theta_sq=config.sigma_theta_sq[0],
        wrap_terms=config.r_max,
    )
    report = train(schedule, channel, cfg, constellation, loss_kind=loss_kind)
    save_params(report.params, out_dir / "params.json")
    save_report(report, out_dir / "report.json")
    weights_to_csv(report.params, out_dir / "weights.csv")

    if heldout_realizations > 0:
        eval_config = replace(
            config,
            algorithms=("bps", "bps_opt"),
            realizations=heldout_realizations,
            seed=config.seed + heldout_seed_offset,
            trained_params_path=str(out_dir / "params.json"),
        )
        run_sweep(eval_config, out_dir / "heldout")
    return report
