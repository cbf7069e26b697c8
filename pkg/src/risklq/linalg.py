"""Small shared linear-algebra helpers.

Conventions used across the package:
- matrices are float64 numpy arrays, symmetrized defensively after every
  Riccati-type update ((M + M') / 2) to keep floating-point drift out of
  PSD checks;
- linear systems are solved with a condition-number guard instead of
  forming explicit inverses; near-singular stages fail loudly.
"""
from __future__ import annotations

import numpy as np

from .errors import SingularityError, StructuralError

COND_LIMIT = 1e12


def as_matrix(value, rows, cols, name):
    """Coerce to a (rows, cols) float array, validating shape and finiteness."""
    arr = np.asarray(value, dtype=float)
    if arr.shape != (rows, cols):
        raise StructuralError(f"{name}: expected shape {(rows, cols)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise StructuralError(f"{name}: contains non-finite entries")
    return arr


def as_vector(value, size, name):
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape != (size,):
        raise StructuralError(f"{name}: expected length {size}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise StructuralError(f"{name}: contains non-finite entries")
    return arr


def freeze(arr):
    """Return a read-only copy; constructed types hand these out so shared
    instances stay immutable across threads."""
    out = np.array(arr, dtype=float)
    out.flags.writeable = False
    return out


def symmetrize(M):
    return 0.5 * (M + M.T)


def is_symmetric(M, tol=1e-12):
    scale = max(1.0, float(np.linalg.norm(M, 2)))
    return float(np.linalg.norm(M - M.T, 2)) <= tol * scale


def min_eig_sym(M):
    return float(np.linalg.eigvalsh(symmetrize(M)).min())


def check_psd(M, name, sym_tol=1e-12, eig_floor=-1e-10):
    """Validate symmetry within sym_tol and eigenvalues >= eig_floor (relative)."""
    if not is_symmetric(M, sym_tol):
        raise StructuralError(f"{name}: not symmetric within {sym_tol:g}")
    scale = max(1.0, float(np.linalg.norm(M, 2)))
    if min_eig_sym(M) < eig_floor * scale:
        raise StructuralError(f"{name}: not positive semi-definite "
                              f"(min eigenvalue {min_eig_sym(M):.3e})")


def is_pd(M, tol=1e-12):
    scale = max(1.0, float(np.linalg.norm(M, 2)))
    return min_eig_sym(M) > tol * scale


def psd_sqrt(M):
    """Symmetric PSD square root via eigendecomposition; tiny negative
    eigenvalues from roundoff are clipped to zero."""
    vals, vecs = np.linalg.eigh(symmetrize(M))
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def spectral_radius(M):
    return float(np.abs(np.linalg.eigvals(M)).max())


def guarded_solve(M, rhs, context):
    """Solve M x = rhs for symmetric M, failing when cond(M) exceeds COND_LIMIT.

    `context` names the offending stage in the error message.
    """
    Ms = symmetrize(M)
    vals = np.abs(np.linalg.eigvalsh(Ms))
    vmax = float(vals.max())
    vmin = float(vals.min())
    if vmax == 0.0 or vmin <= vmax / COND_LIMIT:
        cond = np.inf if vmin == 0.0 else vmax / vmin
        raise SingularityError(f"{context}: matrix singular or ill conditioned "
                               f"(condition number {cond:.3e} > {COND_LIMIT:.1e})")
    return np.linalg.solve(Ms, rhs)
