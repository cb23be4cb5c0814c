"""Feed-forward phase estimators for the Wiener phase-noise channel.

Four estimators over a common grid of test phases:

* ``bps_estimate``      - windowed blind phase search (argmin of summed
  minimum symbol distances);
* ``cpn_estimate``      - constant-phase-noise MAP variant (argmax of the
  windowed sum of log emission factors, priors included);
* ``map_bp_estimate``   - sum-product marginalization on the chain factor
  graph (windowed per output symbol, optional full-sequence variant);
* ``bps_opt_estimate``  - weighted softmin BPS with a complex-exponential
  phase readout, differentiable in its window weights and temperature.

Emission factors R and transition factors Q are kept in the log domain
throughout; message recursions renormalize every step, which never changes
the argmax.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .constellation import Constellation
from .numerics import softmax, wrap_sector

_TABLE_CHUNK = 2048
_BRUTE_FORCE_LIMIT = 10_000_000
_DEGENERATE_Q_FLOOR = 1e-12


@dataclass(frozen=True)
class PhaseGrid:
    """Test phases phi_i = -pi/n + (i-1)*2*pi/(n*M) covering one symmetry sector."""

    phases: np.ndarray
    m_count: int
    sym_order: int

    def __post_init__(self):
        phases = np.ascontiguousarray(self.phases, dtype=np.float64)
        phases.setflags(write=False)
        object.__setattr__(self, "phases", phases)


def make_grid(m_count: int, sym_order: int = 4) -> PhaseGrid:
    """Uniform grid of ``m_count`` test phases over [-pi/n, pi/n)."""
    if m_count < 2:
        raise ValueError("need at least 2 test phases")
    if sym_order < 1:
        raise ValueError("sym_order must be a positive integer")
    idx = np.arange(m_count, dtype=np.float64)
    phases = -np.pi / sym_order + idx * (2.0 * np.pi) / (sym_order * m_count)
    return PhaseGrid(phases, m_count, sym_order)


@dataclass(frozen=True)
class EstimatorConfig:
    """Shared estimator knobs.

    ``half_window`` is N (window length 2N+1; N=0 degenerates to a
    single-symbol window). ``sigma_n_sq`` and ``sigma_theta_sq`` are the
    noise parameters assumed by the estimator, which may differ from the
    channel truth; ``sigma_n_sq`` is the per-component (real/imag) noise
    variance, so the emission kernel exp(-d^2/(2 sigma_n_sq)) is matched to
    a circular Gaussian of total variance 2 sigma_n_sq. ``wrap_terms``
    truncates the wrapped-normal transition kernel; ``full_sequence_bp``
    switches the BP estimator to one forward/backward pass over the whole
    sequence instead of per-symbol windows.
    """

    half_window: int
    grid: PhaseGrid
    sigma_n_sq: float
    sigma_theta_sq: float
    wrap_terms: int = 3
    full_sequence_bp: bool = False

    def __post_init__(self):
        if self.half_window < 0:
            raise ValueError("half_window must be nonnegative")
        if self.sigma_n_sq <= 0:
            raise ValueError("sigma_n_sq must be positive")
        if self.sigma_theta_sq < 0:
            raise ValueError("sigma_theta_sq must be nonnegative")
        if self.wrap_terms < 1:
            raise ValueError("wrap_terms must be at least 1")


@dataclass(frozen=True)
class BpsOptParams:
    """Window weights (on the simplex) and softmin temperature.

    ``weights`` is the softmax of ``raw_weights`` and ``temperature`` the
    exponential of ``raw_temp``; training operates on the raw values so the
    constraints hold exactly.
    """

    weights: np.ndarray
    temperature: float
    raw_weights: np.ndarray
    raw_temp: float

    def __post_init__(self):
        for name in ("weights", "raw_weights"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @classmethod
    def from_raw(cls, raw_weights, raw_temp: float) -> "BpsOptParams":
        raw_weights = np.asarray(raw_weights, dtype=np.float64)
        return cls(
            weights=softmax(raw_weights),
            temperature=float(np.exp(raw_temp)),
            raw_weights=raw_weights,
            raw_temp=float(raw_temp),
        )

    @classmethod
    def uniform(cls, half_window: int, temperature: float = 0.1) -> "BpsOptParams":
        return cls.from_raw(np.zeros(2 * half_window + 1), math.log(temperature))


@dataclass(frozen=True)
class FactorTables:
    """Log-domain emission table (K x M) and transition matrix (M x M)."""

    r_table: np.ndarray
    q_matrix: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.r_table)):
            raise ValueError("emission table has non-finite entries")
        if not np.all(np.isfinite(self.q_matrix)):
            raise ValueError("transition matrix has non-finite entries")
        rows = logsumexp(self.q_matrix, axis=1)
        if np.max(np.abs(np.expm1(rows))) > 1e-12:
            raise ValueError("transition matrix rows must sum to 1")


def _distance_tables(
    y,
    grid: PhaseGrid,
    constellation: Constellation,
    sigma_n_sq: float | None,
    want_min: bool,
    want_log_r: bool,
):
    """Shared chunked pass over |y_k - x e^{j phi_m}|^2.

    The squared distances are assembled from |y|^2 + |x|^2 - 2 Re(y conj(x))
    with the cross terms as one real matrix product per chunk, which is both
    faster and lighter on memory than materializing complex differences.
    """
    y = np.asarray(y, dtype=np.complex128)
    rotated = (np.exp(1j * grid.phases)[:, None] * constellation.points[None, :]).ravel()
    rot_ri = np.stack([rotated.real, rotated.imag])  # (2, M*X)
    point_sq = (np.abs(constellation.points) ** 2)[None, None, :]
    num_points = constellation.num_points
    log_p = np.log(constellation.probs)[None, None, :] if want_log_r else None

    d_min = np.empty((y.size, grid.m_count)) if want_min else None
    log_r = np.empty((y.size, grid.m_count)) if want_log_r else None
    inv2s = 1.0 / (2.0 * sigma_n_sq) if want_log_r else 0.0
    for start in range(0, y.size, _TABLE_CHUNK):
        stop = min(start + _TABLE_CHUNK, y.size)
        yc = y[start:stop]
        y_sq = (np.abs(yc) ** 2)[:, None]
        cross = np.stack([yc.real, yc.imag], axis=1) @ rot_ri  # (k, M*X)
        # partial = |x|^2 - 2 Re(y conj(x e^{j phi})); d2 = partial + |y|^2
        partial = cross.reshape(stop - start, grid.m_count, num_points)
        partial *= -2.0
        partial += point_sq
        if want_min:
            d_min[start:stop] = partial.min(axis=2) + y_sq
        if want_log_r:
            # exponent = log P(x) - d2/(2 sigma^2); the -|y|^2 term is a
            # per-symbol constant and cancels against the row peak
            partial *= -inv2s
            partial += log_p
            peak = partial.max(axis=2)
            partial -= peak[:, :, None]
            np.exp(partial, out=partial)
            log_r[start:stop] = peak + np.log(partial.sum(axis=2)) - y_sq * inv2s
    return d_min, log_r


def min_distance_table(y, grid: PhaseGrid, constellation: Constellation) -> np.ndarray:
    """d[k, m] = min over x of |y_k - x e^{j phi_m}|^2."""
    d_min, _ = _distance_tables(y, grid, constellation, None, want_min=True, want_log_r=False)
    return d_min


def r_table(y, grid: PhaseGrid, constellation: Constellation, sigma_n_sq: float) -> np.ndarray:
    """Log emission factors log sum_x P(x) exp(-|y_k - x e^{j phi_m}|^2 / (2 sigma_n^2)).

    The Gaussian normalization constant is dropped consistently; rows are
    computed with log-sum-exp so entries are always finite.
    """
    if sigma_n_sq <= 0:
        raise ValueError("sigma_n_sq must be positive")
    _, log_r = _distance_tables(
        y, grid, constellation, sigma_n_sq, want_min=False, want_log_r=True
    )
    return log_r


def q_matrix(grid: PhaseGrid, sigma_theta_sq: float, r_max: int = 3) -> np.ndarray:
    """Log wrapped-normal transition matrix, rows normalized to sum 1.

    Entry (i, j) is the log probability of stepping from grid phase i to
    grid phase j. The wrapping sum is truncated at the wider of ``r_max``
    and ceil(5 sigma_theta n / (2 pi)); a zero increment variance is
    replaced by a tiny floor so the kernel degenerates to (numerically)
    an identity instead of a special-cased delta.
    """
    if sigma_theta_sq < 0:
        raise ValueError("sigma_theta_sq must be nonnegative")
    if r_max < 1:
        raise ValueError("r_max must be at least 1")
    var = max(sigma_theta_sq, _DEGENERATE_Q_FLOOR)
    n = grid.sym_order
    period = 2.0 * np.pi / n
    r_eff = max(r_max, int(math.ceil(5.0 * math.sqrt(var) * n / (2.0 * np.pi))))
    shifts = period * np.arange(-r_eff, r_eff + 1)
    diff = grid.phases[:, None] - grid.phases[None, :]
    log_terms = -((diff[:, :, None] + shifts[None, None, :]) ** 2) / (2.0 * var)
    logq = logsumexp(log_terms, axis=2)
    return logq - logsumexp(logq, axis=1, keepdims=True)


def build_factor_tables(y, cfg: EstimatorConfig, constellation: Constellation) -> FactorTables:
    return FactorTables(
        r_table=r_table(y, cfg.grid, constellation, cfg.sigma_n_sq),
        q_matrix=q_matrix(cfg.grid, cfg.sigma_theta_sq, cfg.wrap_terms),
    )


def _windowed_sum(table: np.ndarray, half_window: int) -> np.ndarray:
    """Sliding-window column sums with windows truncated at the edges."""
    size = table.shape[0]
    padded = np.vstack([np.zeros((1, table.shape[1])), np.cumsum(table, axis=0)])
    k = np.arange(size)
    hi = np.minimum(k + half_window, size - 1)
    lo = np.maximum(k - half_window, 0)
    return padded[hi + 1] - padded[lo]


def weighted_window_sums(table: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """D[k, m] = sum_j w_j table[k - N + j, m], zero-padded at the edges."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size % 2 == 0:
        raise ValueError("window length must be odd (2N+1)")
    half = (weights.size - 1) // 2
    pad = np.zeros((half, table.shape[1]))
    padded = np.concatenate([pad, table, pad], axis=0)
    windows = np.lib.stride_tricks.sliding_window_view(padded, weights.size, axis=0)
    return np.einsum("kmj,j->km", windows, weights)


def _check_length(y, cfg: EstimatorConfig):
    if len(y) < 2 * cfg.half_window + 1:
        raise ValueError("sequence shorter than the estimation window")


def bps_estimate(y, cfg: EstimatorConfig, constellation: Constellation, d_table=None) -> np.ndarray:
    """Blind phase search: per-symbol argmin over the grid of the windowed
    sum of minimum symbol distances. Windows are truncated at the sequence
    edges; argmin ties break to the lowest grid index.
    """
    _check_length(y, cfg)
    d = d_table if d_table is not None else min_distance_table(y, cfg.grid, constellation)
    sums = _windowed_sum(d, cfg.half_window)
    return cfg.grid.phases[np.argmin(sums, axis=1)]


def cpn_estimate(y, cfg: EstimatorConfig, constellation: Constellation, tables=None) -> np.ndarray:
    """Constant-phase-noise MAP: argmax of the windowed sum of log emission
    factors (symbol priors included, transition model dropped).
    """
    _check_length(y, cfg)
    log_r = (
        tables.r_table
        if tables is not None
        else r_table(y, cfg.grid, constellation, cfg.sigma_n_sq)
    )
    sums = _windowed_sum(log_r, cfg.half_window)
    return cfg.grid.phases[np.argmax(sums, axis=1)]


_MESSAGE_FLOOR = 1e-300


def _propagate(messages, r_lin_block, q_lin, log_r_block):
    # One sum-product step for a batch of messages: multiply in the
    # emission, renormalize each row by its peak (the log-domain
    # normalization, done in linear arithmetic), push through the
    # transition matrix. Rows whose linear product underflows entirely are
    # recomputed through the log domain, which always has a finite peak.
    v = messages * r_lin_block
    peak = v.max(axis=1, keepdims=True)
    dead = peak[:, 0] < _MESSAGE_FLOOR
    if np.any(dead):
        with np.errstate(divide="ignore"):
            b = np.log(messages[dead]) + log_r_block[dead]
        v[dead] = np.exp(b - b.max(axis=1, keepdims=True))
        peak[dead] = 1.0
    return (v / peak) @ q_lin


def _chain_log_marginals_windowed(log_r, log_q, half_window: int) -> np.ndarray:
    size, _ = log_r.shape
    q_lin = np.exp(log_q)
    r_lin = np.exp(log_r - log_r.max(axis=1, keepdims=True))
    fwd = np.ones_like(log_r)
    bwd = np.ones_like(log_r)
    for s in range(half_window, 0, -1):
        head = slice(0, size - s)
        fwd[s:] = _propagate(fwd[s:], r_lin[head], q_lin, log_r[head])
        bwd[head] = _propagate(bwd[head], r_lin[s:], q_lin, log_r[s:])
    with np.errstate(divide="ignore"):
        return np.log(fwd) + log_r + np.log(bwd)


def _chain_log_marginals_full(log_r, log_q) -> np.ndarray:
    size, _ = log_r.shape
    q_lin = np.exp(log_q)
    r_lin = np.exp(log_r - log_r.max(axis=1, keepdims=True))
    fwd = np.ones_like(log_r)
    bwd = np.ones_like(log_r)
    for k in range(1, size):
        fwd[k] = _propagate(fwd[k - 1 : k], r_lin[k - 1 : k], q_lin, log_r[k - 1 : k])[0]
    for k in range(size - 2, -1, -1):
        bwd[k] = _propagate(bwd[k + 1 : k + 2], r_lin[k + 1 : k + 2], q_lin, log_r[k + 1 : k + 2])[0]
    with np.errstate(divide="ignore"):
        return np.log(fwd) + log_r + np.log(bwd)


def map_bp_estimate(
    y,
    cfg: EstimatorConfig,
    constellation: Constellation,
    tables: FactorTables | None = None,
    return_marginals: bool = False,
):
    """Approximate MAP phase estimates by sum-product message passing.

    For each output symbol the forward recursion folds in the window
    symbols before it and the backward recursion those after it; the
    estimate is the argmax of the (log) center marginal. The transition
    matrix is symmetric (circulant wrapped normal on a uniform grid), so
    the same matrix serves both directions.

    With ``cfg.full_sequence_bp`` the messages are instead propagated once
    along the entire sequence, which matches the windowed variant when the
    window covers the whole sequence for every symbol (N >= K-1).
    """
    _check_length(y, cfg)
    if tables is None:
        tables = build_factor_tables(y, cfg, constellation)
    if cfg.full_sequence_bp:
        log_marginals = _chain_log_marginals_full(tables.r_table, tables.q_matrix)
    else:
        log_marginals = _chain_log_marginals_windowed(
            tables.r_table, tables.q_matrix, cfg.half_window
        )
    estimates = cfg.grid.phases[np.argmax(log_marginals, axis=1)]
    if return_marginals:
        return estimates, log_marginals
    return estimates


def brute_force_map(y_window, cfg: EstimatorConfig, constellation: Constellation):
    """Exact center marginal by direct enumeration over grid^(2N+1).

    Test oracle only: refuses when M^(2N+1) exceeds 10^7. Returns the
    argmax phase and the normalized probability marginal of the center
    variable.
    """
    y_window = np.asarray(y_window, dtype=np.complex128)
    window = 2 * cfg.half_window + 1
    if y_window.size != window:
        raise ValueError(f"window must contain exactly {window} symbols")
    m = cfg.grid.m_count
    if m**window > _BRUTE_FORCE_LIMIT:
        raise ValueError("enumeration size guard exceeded")
    tables = build_factor_tables(y_window, cfg, constellation)

    shape = (m,) * window
    log_w = np.zeros(shape)
    for pos in range(window):
        sh = [1] * window
        sh[pos] = m
        log_w = log_w + tables.r_table[pos].reshape(sh)
        if pos > 0:
            sh_q = [1] * window
            sh_q[pos - 1] = m
            sh_q[pos] = m
            log_w = log_w + tables.q_matrix.reshape(sh_q)
    center = window // 2
    other_axes = tuple(a for a in range(window) if a != center)
    log_marginal = logsumexp(log_w, axis=other_axes) if other_axes else log_w
    log_marginal = log_marginal - logsumexp(log_marginal)
    marginal = np.exp(log_marginal)
    return float(cfg.grid.phases[int(np.argmax(marginal))]), marginal


def softmin(x, t: float) -> np.ndarray:
    """exp(-x_i/t) / sum_j exp(-x_j/t), stabilized by subtracting the minimum."""
    if t <= 0:
        raise ValueError("temperature must be positive")
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(-(x - x.min(axis=-1, keepdims=True)) / t)
    return z / z.sum(axis=-1, keepdims=True)


def bps_opt_estimate(
    y,
    cfg: EstimatorConfig,
    constellation: Constellation,
    params: BpsOptParams,
    d_table=None,
) -> np.ndarray:
    """Weighted softmin BPS with complex-exponential readout.

    D_m = sum_i w_i d_{i,m} over the window; the estimate is
    arg(e^{j phi n} . softmin_t(D)) / n, continuous in [-pi/n, pi/n).
    When the softmin collapses symmetrically (|readout| < 1e-12) the
    estimate falls back to the hard argmin grid phase.
    """
    _check_length(y, cfg)
    if params.weights.size != 2 * cfg.half_window + 1:
        raise ValueError("weights length must equal the window length 2N+1")
    d = d_table if d_table is not None else min_distance_table(y, cfg.grid, constellation)
    weighted = weighted_window_sums(d, params.weights)
    soft = softmax(-weighted / params.temperature, axis=1)
    n = cfg.grid.sym_order
    readout = soft @ np.exp(1j * n * cfg.grid.phases)
    estimates = wrap_sector(np.angle(readout) / n, n)
    collapsed = np.abs(readout) < 1e-12
    if np.any(collapsed):
        estimates[collapsed] = cfg.grid.phases[np.argmin(weighted[collapsed], axis=1)]
    return estimates


def estimates_to_csv(phi_true, phi_hat_raw, path) -> None:
    """Per-symbol estimate dump (k, phi_true, phi_hat_raw)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "phi_true", "phi_hat_raw"])
        for k, (pt, ph) in enumerate(zip(phi_true, phi_hat_raw)):
            writer.writerow([k, f"{pt:.17g}", f"{ph:.17g}"])
