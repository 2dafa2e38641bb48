"""Small dense linear-algebra helpers shared by the filters."""

import numpy as np

SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-12


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return (A + Aᵀ)/2."""
    return 0.5 * (a + a.T)


def is_symmetric(a: np.ndarray, tol: float = SYMMETRY_TOL) -> bool:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    return bool(np.max(np.abs(a - a.T), initial=0.0) <= tol)


def min_eigenvalue(a: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix (0.0 for an empty one)."""
    if a.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(symmetrize(a))[0])


def spectral_radius(a: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(a)), initial=0.0))


def condition_number(a: np.ndarray) -> float:
    return float(np.linalg.cond(a))


def inf_norm(a: np.ndarray) -> float:
    """Induced infinity norm (maximum absolute row sum)."""
    return float(np.linalg.norm(np.atleast_2d(a), np.inf))


def project_pd(a: np.ndarray, floor: float = 1e-10) -> tuple[np.ndarray, bool]:
    """Symmetrize ``a`` and lift its spectrum so the smallest eigenvalue is >= floor.

    Returns the projected matrix and whether a shift was applied.
    """
    sym = symmetrize(a)
    lam_min = min_eigenvalue(sym)
    if lam_min < floor:
        return sym + (floor - lam_min) * np.eye(sym.shape[0]), True
    return sym, False
