"""Polynomial graph filters over the state-action transition digraph.

A filter of order ``K`` with a bias tap is a coefficient vector
``h = [h_0, ..., h_K, h_{K+1}]`` acting as::

    q = sum_{j<=K} h_j P^j r + h_{K+1} P^{K+1} q0

Powers of ``P`` are never formed; everything is nested mat-vecs (Horner).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg


def _square(A):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    return A


def check_coeffs(h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 1 or h.size < 2:
        raise ValueError("filter coefficients need at least one reward tap and a bias tap")
    if not np.all(np.isfinite(h)):
        raise ValueError("filter coefficients must be finite")
    return h


def classical_coeffs(gamma: float, order: int) -> np.ndarray:
    """Coefficients ``gamma**j`` for ``j = 0..order+1`` (truncated policy evaluation)."""
    if order < 0:
        raise ValueError("filter order must be non-negative")
    return gamma ** np.arange(order + 2, dtype=np.float64)


def apply_filter(A, h, x) -> np.ndarray:
    """Return ``sum_j h[j] A^j x``."""
    A = _square(A)
    h = np.asarray(h, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.shape[0],):
        raise ValueError(f"signal length {x.shape} does not match matrix size {A.shape[0]}")
    if h.ndim != 1 or h.size == 0:
        raise ValueError("need at least one filter tap")
    y = h[-1] * x
    for hj in h[-2::-1]:
        y = hj * x + A @ y
    return y


def filtered_evaluation(p_pi, r, q0, coeffs) -> np.ndarray:
    """Biased filter output ``sum_{j<=K} h_j P^j r + h_{K+1} P^{K+1} q0``."""
    P = _square(p_pi)
    h = check_coeffs(coeffs)
    n = P.shape[0]
    r = np.asarray(r, dtype=np.float64)
    q0 = np.asarray(q0, dtype=np.float64)
    if r.shape != (n,) or q0.shape != (n,):
        raise ValueError("r and q0 must match the size of p_pi")
    u = h[-1] * q0
    for hj in h[-2::-1]:
        u = hj * r + P @ u
    return u


def krylov_matrix(p_pi, r, order: int) -> np.ndarray:
    """Columns ``r, P r, ..., P^order r``."""
    P = _square(p_pi)
    cols = [np.asarray(r, dtype=np.float64)]
    for _ in range(order):
        cols.append(P @ cols[-1])
    return np.stack(cols, axis=1)


def fit_minimal_filter(p_pi, r, target_q, order: int):
    """Least-squares fit of ``target_q`` by a bias-free order-``order`` filter on ``r``.

    Returns ``(coeffs, residual)`` where ``coeffs`` has length ``order + 2`` with a
    zero bias tap and ``residual`` is the 2-norm of the misfit. Rank-deficient
    Krylov bases get the minimum-norm solution.
    """
    if order < 0:
        raise ValueError("filter order must be non-negative")
    Kr = krylov_matrix(p_pi, r, order)
    target_q = np.asarray(target_q, dtype=np.float64)
    if target_q.shape != (Kr.shape[0],):
        raise ValueError("target_q does not match the size of p_pi")
    # SVD-based: Krylov columns of a stochastic matrix turn collinear fast
    hbar, *_ = scipy.linalg.lstsq(Kr, target_q, lapack_driver="gelsd")
    residual = float(np.linalg.norm(Kr @ hbar - target_q))
    return np.append(hbar, 0.0), residual
