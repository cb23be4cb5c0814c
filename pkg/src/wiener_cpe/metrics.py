"""Mismatched circular-Gaussian bit-metric demapper and BMI scoring."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from .constellation import Constellation, entropy_bits

_LLR_CHUNK = 4096
_LN2 = math.log(2.0)

DEFAULT_CLAMP = 50.0
SIGMA_SQ_RANGE = (1e-6, 10.0)


@dataclass(frozen=True)
class LlrFrame:
    """Per-symbol, per-bit LLRs with the convention L = log P(b=0)/P(b=1),
    clamped symmetrically to +-clamp."""

    llrs: np.ndarray
    clamp: float


@dataclass(frozen=True)
class BmiReport:
    """BMI of one scored frame.

    ``bmi_bits`` is clamped into [0, entropy_bits]; ``negative_clamped``
    records that the raw value was pathological (below zero).
    ``degenerate`` flags frames whose symbols were all identical.
    """

    bmi_bits: float
    entropy_bits: float
    demapper_sigma_sq: float
    num_symbols_scored: int
    edge_excluded: bool
    negative_clamped: bool = False
    degenerate: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "BmiReport":
        return cls(**json.loads(text))


def llrs(
    x_hat,
    constellation: Constellation,
    sigma_demap_sq: float,
    clamp: float = DEFAULT_CLAMP,
) -> LlrFrame:
    """Bit-level LLRs of a mismatched circular-Gaussian demapper.

    L_{k,b} = log [ sum_{x: bit_b(x)=0} P(x) e^{-|x_hat_k - x|^2 / sigma^2} ]
            - log [ sum_{x: bit_b(x)=1} P(x) e^{-|x_hat_k - x|^2 / sigma^2} ]

    Shaped symbol priors enter both class sums; everything is computed with
    log-sum-exp and clamped to +-clamp.
    """
    if sigma_demap_sq <= 0:
        raise ValueError("sigma_demap_sq must be positive")
    x_hat = np.asarray(x_hat, dtype=np.complex128)
    out = np.empty((x_hat.size, constellation.bits_per_symbol))
    for start in range(0, x_hat.size, _LLR_CHUNK):
        stop = min(start + _LLR_CHUNK, x_hat.size)
        out[start:stop] = _llrs_from_d2(
            _demapper_d2(x_hat[start:stop], constellation), constellation, sigma_demap_sq
        )
    np.clip(out, -clamp, clamp, out=out)
    return LlrFrame(out, clamp)


def _demapper_d2(x_hat, constellation: Constellation) -> np.ndarray:
    """Squared distances (k, num_points) from symbols to constellation points."""
    points = constellation.points
    point_ri = np.stack([points.real, points.imag])
    cross = np.stack([x_hat.real, x_hat.imag], axis=1) @ point_ri
    return (np.abs(x_hat) ** 2)[:, None] + (np.abs(points) ** 2)[None, :] - 2.0 * cross


def _class_selector(constellation: Constellation) -> np.ndarray:
    # (num_points, 2m): even columns pick bit=0 points, odd columns bit=1;
    # both class sums per bit come out of one matrix product
    m = constellation.bits_per_symbol
    selector = np.zeros((constellation.num_points, 2 * m))
    for b in range(m):
        selector[constellation.bit_labels[:, b] == 0, 2 * b] = 1.0
        selector[constellation.bit_labels[:, b] == 1, 2 * b + 1] = 1.0
    return selector


def _llrs_from_d2(d2, constellation: Constellation, sigma_demap_sq: float) -> np.ndarray:
    metric = np.log(constellation.probs)[None, :] - d2 / sigma_demap_sq
    peak = metric.max(axis=1, keepdims=True)
    class_sums = np.exp(metric - peak) @ _class_selector(constellation)
    # the row peak cancels in the ratio; a class whose mass underflows
    # relative to the peak yields an infinite LLR, removed by the clamp
    with np.errstate(divide="ignore"):
        log_sums = np.log(class_sums)
    return log_sums[:, 0::2] - log_sums[:, 1::2]


def bmi(bits, llr_frame: LlrFrame, constellation: Constellation) -> float:
    """Bit-wise mutual information in bits per symbol.

    H(X) minus the per-bit binary cross entropies evaluated from the LLRs;
    the raw (possibly negative) value is returned.
    """
    bits = np.asarray(bits)
    l_matrix = llr_frame.llrs
    if bits.shape != l_matrix.shape:
        raise ValueError("bits and LLRs must have matching shapes")
    sign = 1.0 - 2.0 * bits.astype(np.float64)
    penalty = np.logaddexp(0.0, -sign * l_matrix) / _LN2
    return entropy_bits(constellation.probs) - float(penalty.sum(axis=1).mean())


def _golden_section_max(fun, lo: float, hi: float, tol: float):
    # Golden-section search for the maximum of a unimodal function.
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fun(c), fun(d)
    while (b - a) > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fun(d)
    return (c, fc) if fc >= fd else (d, fd)


def optimize_demapper_variance(
    x_hat,
    bits,
    constellation: Constellation,
    clamp: float = DEFAULT_CLAMP,
    edge_excluded: bool = False,
) -> tuple[float, BmiReport]:
    """Maximize BMI over the demapper noise variance.

    Golden-section search on log sigma^2 over [1e-6, 10] with tolerance
    1e-4 in the log domain. A frame of identical symbols cannot carry
    information about the variance and is returned flagged as degenerate.
    """
    x_hat = np.asarray(x_hat, dtype=np.complex128)
    bits = np.asarray(bits)
    if x_hat.size == 0:
        raise ValueError("empty frame")
    degenerate = bool(np.all(x_hat == x_hat.flat[0]))
    d2 = _demapper_d2(x_hat, constellation)  # shared by all candidate variances

    def score(log_sigma_sq: float) -> float:
        frame = LlrFrame(
            np.clip(_llrs_from_d2(d2, constellation, math.exp(log_sigma_sq)), -clamp, clamp),
            clamp,
        )
        return bmi(bits, frame, constellation)

    if degenerate:
        sigma_sq = math.sqrt(SIGMA_SQ_RANGE[0] * SIGMA_SQ_RANGE[1])
        best = score(math.log(sigma_sq))
    else:
        log_best, best = _golden_section_max(
            score, math.log(SIGMA_SQ_RANGE[0]), math.log(SIGMA_SQ_RANGE[1]), tol=1e-4
        )
        sigma_sq = math.exp(log_best)

    entropy = entropy_bits(constellation.probs)
    clamped = min(max(best, 0.0), entropy)
    report = BmiReport(
        bmi_bits=clamped,
        entropy_bits=entropy,
        demapper_sigma_sq=sigma_sq,
        num_symbols_scored=int(x_hat.size),
        edge_excluded=edge_excluded,
        negative_clamped=best < 0.0,
        degenerate=degenerate,
    )
    return sigma_sq, report
