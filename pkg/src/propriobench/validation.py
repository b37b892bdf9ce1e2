"""Input validation helpers shared by the data model and the estimators."""

from __future__ import annotations

import numpy as np


def check_finite(x, name: str = "array") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def check_vector(x, n: int, name: str = "vector") -> np.ndarray:
    x = check_finite(x, name)
    if x.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {x.shape}")
    return x


def check_unit_quaternion(q, tol: float = 1e-6, name: str = "quaternion") -> np.ndarray:
    q = check_vector(q, 4, name)
    n = np.linalg.norm(q)
    if abs(n - 1.0) > tol:
        raise ValueError(f"{name} norm {n:.6f} deviates from 1 beyond {tol}")
    return q


def check_square(M, n: int, name: str = "matrix") -> np.ndarray:
    M = check_finite(M, name)
    if M.shape != (n, n):
        raise ValueError(f"{name} must be {n}x{n}, got {M.shape}")
    return M


def check_psd(M, name: str = "matrix", tol: float = 1e-9) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    sym_err = np.abs(M - M.T).max() if M.size else 0.0
    scale = max(np.abs(M).max(), 1.0) if M.size else 1.0
    if sym_err > tol * scale:
        raise ValueError(f"{name} is not symmetric (max asymmetry {sym_err:.2e})")
    if M.size:
        w = np.linalg.eigvalsh(0.5 * (M + M.T))
        if w.min() < -tol * scale:
            raise ValueError(f"{name} is not PSD (min eigenvalue {w.min():.2e})")
    return M


def check_positive(value: float, name: str = "value") -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value


def symmetrize(M: np.ndarray, floor: float | None = None) -> np.ndarray:
    """Symmetrize a covariance in place; optionally clip negative eigenvalues."""
    M = 0.5 * (M + M.T)
    if floor is not None and M.size and np.diag(M).min() < floor:
        w, V = np.linalg.eigh(M)
        M = (V * np.clip(w, floor, None)) @ V.T
        M = 0.5 * (M + M.T)
    return M
