"""Small dense linear-algebra helpers shared by the sieve and kernel solvers."""

import logging

import numpy as np
import scipy.linalg

from .errors import ConditioningError

logger = logging.getLogger(__name__)


def default_rtol(shape):
    """Moore-Penrose cutoff relative to the largest singular value."""
    return max(shape) * np.finfo(float).eps


def pinv(a, rtol=None):
    """Pseudoinverse via SVD; singular values below ``rtol * s_max`` are dropped."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.zeros(a.shape[::-1])
    if rtol is None:
        rtol = default_rtol(a.shape)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    cutoff = rtol * s[0] if s.size else 0.0
    keep = s > cutoff
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (vt.T * s_inv) @ u.T


def rank(a, rtol=1e-10):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def null_space(a, rtol=1e-10):
    """Orthonormal basis (columns) of ``{v : a @ v = 0}``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    n_cols = a.shape[1]
    if a.size == 0:
        return np.eye(n_cols)
    _, s, vt = np.linalg.svd(a, full_matrices=True)
    r = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    return vt[r:].T.copy()


def symmetrize(k):
    k = np.asarray(k, dtype=float)
    return 0.5 * (k + k.T)


def check_symmetric(k, rtol=1e-10):
    k = np.asarray(k, dtype=float)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {k.shape}")
    scale = max(np.abs(k).max(initial=0.0), 1.0)
    asym = np.abs(k - k.T).max(initial=0.0)
    if asym > rtol * scale:
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")


def min_eigenvalue(k):
    if k.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(symmetrize(k))[0])


def is_psd(k, rtol=1e-10):
    k = np.asarray(k, dtype=float)
    if k.size == 0:
        return True
    norm = np.linalg.norm(k, 2)
    return min_eigenvalue(k) >= -rtol * max(norm, 1e-300)


def matrix_sqrt_psd(k):
    """Symmetric square root of a PSD matrix.

    Negative eigenvalues (round-off) are clipped to zero before taking roots,
    so ``matrix_sqrt_psd(k) @ matrix_sqrt_psd(k)`` reproduces the clipped input.
    """
    k = np.asarray(k, dtype=float)
    check_symmetric(k)
    vals, vecs = np.linalg.eigh(symmetrize(k))
    vals = np.clip(vals, 0.0, None)
    return symmetrize((vecs * np.sqrt(vals)) @ vecs.T)


def solve_psd(a, b, jitter=None):
    """Solve ``a x = b`` for symmetric PSD ``a`` by Cholesky.

    On factorization failure the diagonal is loaded with ``jitter``,
    ``10 * jitter`` and ``100 * jitter`` in turn; each escalation is logged.
    """
    a = symmetrize(a)
    n = a.shape[0]
    if jitter is None or jitter <= 0:
        jitter = 1e-10 * max(np.trace(a) / max(n, 1), 1e-300)
    loads = (0.0, jitter, 10 * jitter, 100 * jitter)
    for i, load in enumerate(loads):
        if i > 0:
            logger.warning("Cholesky failed; retrying with diagonal jitter %.3e", load)
        try:
            factor = scipy.linalg.cho_factor(a + load * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            continue
        return scipy.linalg.cho_solve(factor, b)
    raise ConditioningError(
        f"matrix could not be factorized even with jitter {100 * jitter:.3e} "
        f"(min eigenvalue {min_eigenvalue(a):.3e})"
    )
