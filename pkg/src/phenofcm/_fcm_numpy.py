"""Pure numpy fallback for the fuzzy c-means inner kernels.

Mirrors the compiled extension in ``_fcm_core.pyx`` function for function.
Distances are computed with explicit differences (not the Gram-matrix trick)
so that an element bitwise-equal to a center yields an exact zero distance,
which the membership kernel maps to full membership.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def _zero_tol(m: float) -> float:
    # Squared distances below this would overflow d2**(-1/(m-1)); treat them
    # as exact hits. Irrelevantly small for any standardized data.
    return max(10.0 ** (-300.0 * (m - 1.0)), 1e-300)


def pairwise_sq_dist(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape (K, c)."""
    diff = x[:, None, :] - centers[None, :, :]
    return np.einsum("kce,kce->kc", diff, diff)


def memberships(d2: np.ndarray, m: float) -> np.ndarray:
    """Membership weights from squared distances; rows sum to 1.

    Elements coinciding with one or more centers get their membership split
    equally over the coinciding centers.
    """
    tol = _zero_tol(m)
    if m == 2.0:
        u = 1.0 / np.maximum(d2, tol)
    else:
        u = np.maximum(d2, tol) ** (-1.0 / (m - 1.0))
    w = u / u.sum(axis=1, keepdims=True)
    hits = d2 <= tol
    rows = hits.any(axis=1)
    if rows.any():
        w[rows] = hits[rows] / hits[rows].sum(axis=1, keepdims=True)
    return w


def weighted_centers(x: np.ndarray, w: np.ndarray, m: float) -> np.ndarray:
    """Centers as membership^m weighted means of the elements."""
    wm = w * w if m == 2.0 else w ** m
    return (wm.T @ x) / wm.sum(axis=0)[:, None]


def objective(d2: np.ndarray, w: np.ndarray, m: float) -> float:
    """The fuzzy c-means objective: sum of w^m times squared distance."""
    wm = w * w if m == 2.0 else w ** m
    return float(np.sum(wm * d2))
