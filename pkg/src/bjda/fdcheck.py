"""Central-difference gradient oracle.

Independent of the tape's adjoint rules: it only ever calls a scalar-valued
forward function, perturbing one input entry at a time with step h and
forming (f(x+h) - f(x-h)) / (2h).
"""
from __future__ import annotations

from typing import Callable

import numpy as np

FD_STEP = 1e-4


def central_difference(f: Callable[[np.ndarray], float], x0: np.ndarray,
                       h: float = FD_STEP) -> np.ndarray:
    """Numeric gradient of f at x0, entry by entry."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    it = np.nditer(x0, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x0.copy()
        xm = x0.copy()
        xp[idx] += h
        xm[idx] -= h
        grad[idx] = (f(xp) - f(xm)) / (2.0 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray,
                  floor: float = 1e-8) -> float:
    """Largest entrywise deviation, normalized by the numeric gradient scale.

    A global scale (rather than per-entry) keeps near-zero entries from
    inflating the ratio on otherwise well-conditioned inputs.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    denom = max(float(np.max(np.abs(numeric))), floor)
    return float(np.max(np.abs(analytic - numeric))) / denom
