"""Dense linear algebra helpers: orthogonal blocks, DCT basis, products."""

import numpy as np

__all__ = [
    "random_orthogonal",
    "verify_orthonormal",
    "dct_matrix",
    "dct_basis",
    "matvec",
    "matvec_transpose",
]


def random_orthogonal(dim, seed):
    """Sample a Haar-uniform orthogonal matrix.

    Parameters
    ----------
    dim : int
        Positive dimension of the returned matrix.
    seed : int or numpy.random.SeedSequence
        Seed for ``numpy.random.default_rng``.

    Returns
    -------
    (dim, dim) float64 array
        ``Q`` from the QR decomposition of a standard Gaussian matrix, with the
        signs of ``diag(R)`` folded into the columns of ``Q``.
    """
    dim = int(dim)
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def verify_orthonormal(block, tol=1e-10):
    """Return True iff ``max|M^T M - I| <= tol`` for the square matrix ``block``."""
    m = np.asarray(block, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    gram = m.T @ m
    gram[np.diag_indices_from(gram)] -= 1.0
    return bool(np.max(np.abs(gram), initial=0.0) <= tol)


def dct_matrix(side):
    """Orthonormal 1-D DCT-II matrix ``C[x, p] = alpha_p cos(pi (2x+1) p / 2n)``."""
    side = int(side)
    if side < 1:
        raise ValueError(f"side must be >= 1, got {side}")
    x = np.arange(side)[:, None]
    p = np.arange(side)[None, :]
    c = np.cos(np.pi * (2 * x + 1) * p / (2 * side))
    alpha = np.full(side, np.sqrt(2.0 / side))
    alpha[0] = np.sqrt(1.0 / side)
    return c * alpha


def dct_basis(side):
    """Orthonormal 2-D DCT-II basis of ``side x side`` images.

    Rows index pixels ``(x, y)`` as ``x * side + y``; columns index frequency
    pairs ``(p, q)`` as ``p * side + q``. The result has shape
    ``(side**2, side**2)``.
    """
    c = dct_matrix(side)
    return np.kron(c, c)


def _check_vec(m, v, axis):
    m = np.asarray(m)
    v = np.asarray(v)
    if m.ndim != 2 or v.ndim != 1 or m.shape[axis] != v.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {m.shape}, vector {v.shape}")
    return m, v


# Both products accumulate over the summed index in the same sequential
# order, so matvec_transpose(m, v) == matvec(m.T, v) bit for bit. BLAS gives
# no such guarantee; hot paths call ``@`` directly instead.


def matvec(m, v):
    m, v = _check_vec(m, v, 1)
    out = np.zeros(m.shape[0], dtype=np.result_type(m, v))
    for j in range(m.shape[1]):
        out += m[:, j] * v[j]
    return out


def matvec_transpose(m, v):
    """Compute ``M^T v`` row by row, without forming ``M^T``."""
    m, v = _check_vec(m, v, 0)
    out = np.zeros(m.shape[1], dtype=np.result_type(m, v))
    for i in range(m.shape[0]):
        out += m[i] * v[i]
    return out
