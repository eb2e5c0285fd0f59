"""Small dense linear-algebra helpers shared by the services."""

import numpy as np


def vtu(vec, n):
    """Fill the upper triangle (diagonal included) of an n x n matrix row by row."""
    out = np.zeros((n, n))
    out[np.triu_indices(n)] = vec
    return out


def vtsu(vec, n):
    """Fill the strictly upper triangle of an n x n matrix row by row."""
    out = np.zeros((n, n))
    out[np.triu_indices(n, 1)] = vec
    return out


def vtf(vec, rows, cols):
    """Reshape a vector column by column into a rows x cols matrix."""
    return np.reshape(np.asarray(vec, dtype=float), (rows, cols), order="F")


def upper_entries(mat):
    return np.asarray(mat)[np.triu_indices(mat.shape[0])]


def strict_upper_entries(mat):
    return np.asarray(mat)[np.triu_indices(mat.shape[0], 1)]


def sym(mat):
    return 0.5 * (mat + mat.T)


def min_eig_sym(mat):
    if mat.size == 0:
        return np.inf
    return float(np.linalg.eigvalsh(sym(mat))[0])


def upper_factor(mat):
    """
    Upper-triangular U with nonnegative diagonal such that U.T @ U == mat.

    Positive definite input goes through Cholesky. Semidefinite input falls
    back to a QR factorization of a symmetric square root, so singular (or
    zero) matrices still get a triangular factor.
    """
    mat = sym(np.asarray(mat, dtype=float))
    n = mat.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    try:
        return np.linalg.cholesky(mat).T
    except np.linalg.LinAlgError:
        pass
    lam, vecs = np.linalg.eigh(mat)
    root = np.sqrt(np.clip(lam, 0.0, None))[:, None] * vecs.T
    upper = np.linalg.qr(root, mode="r")
    signs = np.where(np.diag(upper) < 0, -1.0, 1.0)
    return signs[:, None] * upper
