"""Small dense factorizations, hand-rolled for reproducibility.

Everything downstream (tangent spectra, Cauchy-Green tensors, the top
singular pair used by the suppression gradient) runs through these three
routines. They are written out explicitly instead of calling LAPACK so the
results are identical across BLAS builds and platforms; NumPy is used as the
array container only. Matrices here are tiny (dimension <= 64), where cyclic
Jacobi methods are both simple and accurate to close to machine precision.

Sign convention: the first nonzero component of every right singular vector
(and of every eigenvector) is made non-negative, so factorizations are unique
up to exactly degenerate spectra.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InvalidInputError

MAX_DIM = 64
_JACOBI_TOL = 1e-15
_MAX_SWEEPS = 60


def _as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise InvalidInputError("expected a non-empty 2-D matrix")
    if a.shape[0] > MAX_DIM or a.shape[1] > MAX_DIM:
        raise InvalidInputError(f"matrix dimensions {a.shape} exceed {MAX_DIM}")
    if not np.isfinite(a).all():
        raise InvalidInputError("matrix has non-finite entries")
    return a


def _fix_signs(vecs: np.ndarray, *coupled: np.ndarray) -> None:
    """Flip columns of vecs (and coupled partners) so the first nonzero
    component of each vecs column is non-negative."""
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        nz = np.nonzero(col)[0]
        if nz.size and col[nz[0]] < 0.0:
            vecs[:, j] = -col
            for other in coupled:
                other[:, j] = -other[:, j]


def svd(m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD via one-sided Jacobi rotations.

    Returns (u, sigma, v) with m = u @ diag(sigma) @ v.T, sigma sorted
    descending, u of shape (rows, k) and v of shape (cols, k) for
    k = min(rows, cols).
    """
    a = _as_matrix(m)
    transposed = a.shape[0] < a.shape[1]
    if transposed:
        a = a.T
    a = np.array(a, copy=True)
    rows, cols = a.shape
    v = np.eye(cols)

    # Orthogonalize column pairs until every Gram off-diagonal is negligible
    # relative to the column norms it couples.
    for _ in range(_MAX_SWEEPS):
        off = 0.0
        for i in range(cols - 1):
            for j in range(i + 1, cols):
                ai = a[:, i]
                aj = a[:, j]
                alpha = float(ai @ ai)
                beta = float(aj @ aj)
                gamma = float(ai @ aj)
                if gamma == 0.0:
                    continue
                scale = math.sqrt(alpha * beta)
                if scale == 0.0 or abs(gamma) <= _JACOBI_TOL * scale:
                    continue
                off = max(off, abs(gamma) / scale)
                theta = 0.5 * math.atan2(2.0 * gamma, alpha - beta)
                c = math.cos(theta)
                s = math.sin(theta)
                ai_new = c * ai + s * aj
                aj_new = -s * ai + c * aj
                a[:, i] = ai_new
                a[:, j] = aj_new
                vi = c * v[:, i] + s * v[:, j]
                vj = -s * v[:, i] + c * v[:, j]
                v[:, i] = vi
                v[:, j] = vj
        if off <= _JACOBI_TOL:
            break

    sigma = np.sqrt(np.einsum("ij,ij->j", a, a))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    a = a[:, order]
    v = v[:, order]

    u = np.zeros((rows, cols))
    tiny = np.finfo(np.float64).tiny
    # Below ~eps * sigma_1 a rotated column is cancellation noise, so its
    # direction is completed orthogonally instead of normalized.
    floor = 8.0 * np.finfo(np.float64).eps * sigma[0] if cols else 0.0
    for j in range(cols):
        if sigma[j] > max(floor, tiny):
            u[:, j] = a[:, j] / sigma[j]
        else:
            if sigma[j] <= tiny:
                sigma[j] = 0.0
            u[:, j] = _orthonormal_complement(u[:, :j])

    if transposed:
        u, v = v, u
    _fix_signs(v, u)
    return u, sigma, v


def _orthonormal_complement(basis: np.ndarray) -> np.ndarray:
    """A unit vector orthogonal to the given orthonormal columns."""
    n = basis.shape[0]
    for k in range(n):
        cand = np.zeros(n)
        cand[k] = 1.0
        cand -= basis @ (basis.T @ cand)
        norm = math.sqrt(float(cand @ cand))
        if norm > 1e-3:
            return cand / norm
    raise InvalidInputError("cannot complete orthonormal basis")


def sym_eig(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix via cyclic Jacobi rotations.

    Returns (w, q) with eigenvalues w sorted descending and orthonormal
    eigenvectors in the columns of q. Raises InvalidInputError when the
    input is asymmetric beyond 1e-12 (max-abs entry difference).
    """
    a = _as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise InvalidInputError("sym_eig expects a square matrix")
    if np.max(np.abs(a - a.T)) > 1e-12:
        raise InvalidInputError("matrix is not symmetric within 1e-12")
    n = a.shape[0]
    a = np.array((a + a.T) / 2.0, copy=True)
    q = np.eye(n)
    norm_scale = max(float(np.sqrt(np.sum(a * a))), np.finfo(np.float64).tiny)

    for _ in range(_MAX_SWEEPS):
        off = 0.0
        for p in range(n - 1):
            for r in range(p + 1, n):
                apr = a[p, r]
                if apr == 0.0:
                    continue
                off = max(off, abs(apr))
                if abs(apr) <= _JACOBI_TOL * norm_scale:
                    continue
                theta = 0.5 * math.atan2(2.0 * apr, a[p, p] - a[r, r])
                c = math.cos(theta)
                s = math.sin(theta)
                rot_p = c * a[p, :] + s * a[r, :]
                rot_r = -s * a[p, :] + c * a[r, :]
                a[p, :] = rot_p
                a[r, :] = rot_r
                col_p = c * a[:, p] + s * a[:, r]
                col_r = -s * a[:, p] + c * a[:, r]
                a[:, p] = col_p
                a[:, r] = col_r
                qp = c * q[:, p] + s * q[:, r]
                qr = -s * q[:, p] + c * q[:, r]
                q[:, p] = qp
                q[:, r] = qr
        if off <= _JACOBI_TOL * norm_scale:
            break

    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    w = w[order]
    q = q[:, order]
    _fix_signs(q)
    return w, q


def spectral_norm(m) -> float:
    """Largest singular value, through the same Jacobi path as svd()."""
    return float(svd(m)[1][0])


def svd2_batch(ys: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-sided Jacobi SVD of a batch of 2x2 matrices, vectorized.

    For two columns a single rotation makes the Gram off-diagonal exactly
    zero, so the general sweep above reduces to closed form. Returns
    (sigma, u, v) with shapes (B, 2), (B, 2, 2), (B, 2, 2); sigma sorted
    descending per item, same sign convention as svd(). Zero matrices get
    sigma = 0 with identity factors.
    """
    a = np.asarray(ys, dtype=np.float64)
    if a.ndim != 3 or a.shape[1:] != (2, 2):
        raise InvalidInputError("svd2_batch expects shape (B, 2, 2)")
    c1 = a[:, :, 0]
    c2 = a[:, :, 1]
    alpha = np.einsum("bi,bi->b", c1, c1)
    beta = np.einsum("bi,bi->b", c2, c2)
    gamma = np.einsum("bi,bi->b", c1, c2)
    theta = 0.5 * np.arctan2(2.0 * gamma, alpha - beta)
    c = np.cos(theta)
    s = np.sin(theta)
    r1 = c[:, None] * c1 + s[:, None] * c2
    r2 = -s[:, None] * c1 + c[:, None] * c2
    s1 = np.sqrt(np.einsum("bi,bi->b", r1, r1))
    s2 = np.sqrt(np.einsum("bi,bi->b", r2, r2))

    # Right singular vectors are the accumulated rotation columns.
    v1 = np.stack([c, s], axis=1)
    v2 = np.stack([-s, c], axis=1)

    swap = s2 > s1
    s1w = np.where(swap, s2, s1)
    s2w = np.where(swap, s1, s2)
    r1w = np.where(swap[:, None], r2, r1)
    r2w = np.where(swap[:, None], r1, r2)
    v1w = np.where(swap[:, None], v2, v1)
    v2w = np.where(swap[:, None], v1, v2)

    tiny = np.finfo(np.float64).tiny
    u1 = np.where(s1w[:, None] > tiny, r1w / np.maximum(s1w, tiny)[:, None], 0.0)
    # Complete u2 orthogonally when the second column is cancellation noise
    # (norm at or below ~eps * sigma_1); its computed magnitude is kept.
    floor2 = np.maximum(8.0 * np.finfo(np.float64).eps * s1w, tiny)
    u2_norm = np.where(s2w > floor2, s2w, 1.0)
    u2 = np.where(
        (s2w > floor2)[:, None],
        r2w / u2_norm[:, None],
        np.stack([-u1[:, 1], u1[:, 0]], axis=1),
    )
    degenerate = s1w <= tiny
    if np.any(degenerate):
        u1 = u1.copy()
        u2 = u2.copy()
        v1w = v1w.copy()
        v2w = v2w.copy()
        u1[degenerate] = (1.0, 0.0)
        u2[degenerate] = (0.0, 1.0)
        v1w[degenerate] = (1.0, 0.0)
        v2w[degenerate] = (0.0, 1.0)
        s1w = np.where(degenerate, 0.0, s1w)
        s2w = np.where(degenerate, 0.0, s2w)

    # Sign fix on v: first nonzero component non-negative.
    sign1 = np.where(v1w[:, 0] != 0.0, np.sign(v1w[:, 0]), np.sign(v1w[:, 1]))
    sign1 = np.where(sign1 == 0.0, 1.0, sign1)
    sign2 = np.where(v2w[:, 0] != 0.0, np.sign(v2w[:, 0]), np.sign(v2w[:, 1]))
    sign2 = np.where(sign2 == 0.0, 1.0, sign2)
    v1w = v1w * sign1[:, None]
    u1 = u1 * sign1[:, None]
    v2w = v2w * sign2[:, None]
    u2 = u2 * sign2[:, None]

    sigma = np.stack([s1w, s2w], axis=1)
    u = np.stack([u1, u2], axis=2)
    v = np.stack([v1w, v2w], axis=2)
    return sigma, u, v


def singular_values_batch(ys: np.ndarray) -> np.ndarray:
    """Descending singular values for a batch of square (B, d, d) matrices.

    Vectorized for d = 2; general d loops over svd(). Rows with non-finite
    entries yield NaN rather than raising, so sweep drivers can keep going.
    """
    a = np.asarray(ys, dtype=np.float64)
    if a.ndim != 3:
        raise InvalidInputError("expected shape (B, d, d)")
    bad = ~np.isfinite(a).all(axis=(1, 2))
    if a.shape[1:] == (2, 2):
        safe = np.where(bad[:, None, None], 0.0, a)
        sigma = svd2_batch(safe)[0]
    else:
        sigma = np.empty(a.shape[:2])
        for i in range(a.shape[0]):
            if bad[i]:
                continue
            sigma[i] = svd(a[i])[1]
    sigma[bad] = np.nan
    return sigma
