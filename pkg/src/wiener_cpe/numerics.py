"""Small shared numeric helpers (stable softmax, sector wrapping)."""

from __future__ import annotations

import numpy as np


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Stable softmax along ``axis``."""
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def wrap_sector(phi, sym_order: int):
    """Wrap phases into the symmetry sector [-pi/n, pi/n)."""
    period = 2.0 * np.pi / sym_order
    return phi - period * np.floor(phi / period + 0.5)
