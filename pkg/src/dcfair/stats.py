"""Empirical distance covariance and conditional distance covariance.

Three routes compute the empirical distance covariance of two samples:

* :func:`dcov_direct` evaluates the double-centred entrywise formula,
* :func:`dcov` uses centring-matrix products (the batched form),
* :func:`dcov_sform` uses the mean-of-products / product-of-means /
  triple-index decomposition.

The conditional statistic is available per conditioning point
(:func:`cdc_local`), summed over points (:func:`cdc_stat_direct`) and in a
single batched matrix form (:func:`cdc_stat`).

All samples are ``(n, d)`` arrays whose rows are observations; 1-D input is
read as ``n`` scalar observations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class KernelMatrix:
    """Gaussian kernel evaluated on every pair of conditioning points."""

    values: np.ndarray
    bandwidth: float
    dim_u: int

    def weights(self) -> np.ndarray:
        """Column-normalised weights; column ``u`` holds ``omega[:, u]``."""
        return self.values / self.values.sum(axis=0, keepdims=True)


@dataclass(frozen=True)
class CenteredDistancePair:
    A: np.ndarray
    B: np.ndarray
    raw_a: np.ndarray
    raw_b: np.ndarray


@dataclass(frozen=True)
class DcovResult:
    value: float
    n: int

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class CdcResult:
    value: float
    n: int
    bandwidth: float
    per_point: Optional[np.ndarray] = None

    def __float__(self) -> float:
        return self.value


def as_batch(x, name: str = "X") -> np.ndarray:
    """Validate and return ``x`` as a finite float64 ``(n, d)`` array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must have n >= 1 and d >= 1, got shape {arr.shape}")
    finite = np.isfinite(arr)
    if not finite.all():
        row = int(np.argwhere(~finite)[0, 0])
        raise ValueError(f"{name} has a non-finite entry in row {row}")
    return arr


def _check_counts(**batches: np.ndarray) -> int:
    counts = {name: b.shape[0] for name, b in batches.items()}
    if len(set(counts.values())) != 1:
        detail = ", ".join(f"{k}.n={v}" for k, v in counts.items())
        raise ValueError(f"sample counts differ: {detail}")
    return next(iter(counts.values()))


def _squared_distances(X: np.ndarray) -> np.ndarray:
    # per-coordinate accumulation keeps the result exactly symmetric
    n = X.shape[0]
    sq = np.zeros((n, n))
    for j in range(X.shape[1]):
        col = X[:, j]
        diff = col[:, None] - col[None, :]
        sq += diff * diff
    return sq


def pairwise_distance_matrix(X) -> np.ndarray:
    """Euclidean distances between all pairs of rows of ``X``."""
    return np.sqrt(_squared_distances(as_batch(X)))


def double_center(D) -> np.ndarray:
    """Double-centre a distance matrix with centring-matrix products.

    Equivalent to ``a_kl - mean_row_k - mean_col_l + grand_mean``.
    """
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[0]
    if D.ndim != 2 or D.shape[1] != n:
        raise ValueError(f"distance matrix must be square, got shape {D.shape}")
    J = np.full((n, n), 1.0 / n)
    return D - J @ D - D @ J + J @ D @ J


def centered_distances(Y, Z) -> CenteredDistancePair:
    Y = as_batch(Y, "Y")
    Z = as_batch(Z, "Z")
    _check_counts(Y=Y, Z=Z)
    a = pairwise_distance_matrix(Y)
    b = pairwise_distance_matrix(Z)
    return CenteredDistancePair(double_center(a), double_center(b), a, b)


def dcov_direct(Y, Z) -> DcovResult:
    """Distance covariance from explicit row, column and grand means."""
    Y = as_batch(Y, "Y")
    Z = as_batch(Z, "Z")
    n = _check_counts(Y=Y, Z=Z)
    a = pairwise_distance_matrix(Y)
    b = pairwise_distance_matrix(Z)

    def centred(m):
        row = m.mean(axis=1)
        col = m.mean(axis=0)
        return m - row[:, None] - col[None, :] + m.mean()

    A = centred(a)
    B = centred(b)
    total = 0.0
    for k in range(n):
        total += float(np.sum(A[k] * B[k]))
    return DcovResult(total / n**2, n)


def dcov(Y, Z) -> DcovResult:
    """Distance covariance as ``<A, B> / n^2`` with matrix-centred ``A, B``."""
    pair = centered_distances(Y, Z)
    n = pair.A.shape[0]
    return DcovResult(float(np.vdot(pair.A, pair.B)) / n**2, n)


def dcov_sform(Y, Z) -> DcovResult:
    """Distance covariance as ``S1 + S2 - 2 S3``.

    ``S1`` is the mean of products of pairwise distances, ``S2`` the product
    of the mean distances and ``S3`` the triple-index mean
    ``n^-3 sum_{i,j,l} a_ij b_il``. Rows are processed in blocks, so memory is
    ``O(n * block)`` and large reference samples stay affordable.
    """
    Y = as_batch(Y, "Y")
    Z = as_batch(Z, "Z")
    n = _check_counts(Y=Y, Z=Z)
    block = max(1, min(n, 2**22 // n))
    s1 = sa = sb = s3 = 0.0
    for start in range(0, n, block):
        stop = min(n, start + block)
        a = np.sqrt(((Y[start:stop, None, :] - Y[None, :, :]) ** 2).sum(axis=2))
        b = np.sqrt(((Z[start:stop, None, :] - Z[None, :, :]) ** 2).sum(axis=2))
        s1 += float(np.sum(a * b))
        ra = a.sum(axis=1)
        rb = b.sum(axis=1)
        sa += float(ra.sum())
        sb += float(rb.sum())
        s3 += float(ra @ rb)
    S1 = s1 / n**2
    S2 = (sa / n**2) * (sb / n**2)
    S3 = s3 / n**3
    return DcovResult(S1 + S2 - 2.0 * S3, n)


def silverman_bandwidth(n: int, r: int) -> float:
    """Silverman's rule ``(n (r + 2) / 4) ** (-1 / (r + 4))``."""
    if n < 1 or r < 1:
        raise ValueError(f"silverman_bandwidth needs n >= 1 and r >= 1, got n={n}, r={r}")
    return float((n * (r + 2) / 4.0) ** (-1.0 / (r + 4)))


def gaussian_kernel_matrix(U, h: float) -> KernelMatrix:
    """Radial Gaussian kernel with prefactor ``1 / (sqrt(2 pi) h)`` for any ``r``."""
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    U = as_batch(U, "U")
    sq = _squared_distances(U)
    K = np.exp(-sq / (2.0 * h * h)) / (_SQRT_2PI * h)
    return KernelMatrix(K, float(h), U.shape[1])


def cdc_local(dY, dZ, K: KernelMatrix, u: int) -> float:
    """Conditional distance covariance at conditioning point ``u``.

    Returns ``D1 + D2 - 2 D3`` computed with the normalised weights
    ``omega_k = K[k, u] / sum_k K[k, u]``.
    """
    dY = np.asarray(dY, dtype=np.float64)
    dZ = np.asarray(dZ, dtype=np.float64)
    n = K.values.shape[0]
    if dY.shape != (n, n) or dZ.shape != (n, n):
        raise ValueError(
            f"distance matrices {dY.shape} and {dZ.shape} do not match kernel size {n}"
        )
    if not 0 <= u < n:
        raise IndexError(f"conditioning index {u} out of range [0, {n})")
    col = K.values[:, u]
    w = col / col.sum()
    yw = dY @ w
    zw = dZ @ w
    d1 = float(w @ ((dY * dZ) @ w))
    d2 = float(w @ yw) * float(w @ zw)
    d3 = float(w @ (yw * zw))
    return d1 + d2 - 2.0 * d3


def _resolve_cdc_inputs(Y, Z, U, h):
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    Y = as_batch(Y, "Y")
    Z = as_batch(Z, "Z")
    U = as_batch(U, "U")
    n = _check_counts(Y=Y, Z=Z, U=U)
    return Y, Z, U, n


def cdc_stat_direct(Y, Z, U, h: float) -> CdcResult:
    """Kernel-weighted sum of :func:`cdc_local` over every conditioning point."""
    Y, Z, U, n = _resolve_cdc_inputs(Y, Z, U, h)
    dY = pairwise_distance_matrix(Y)
    dZ = pairwise_distance_matrix(Z)
    K = gaussian_kernel_matrix(U, h)
    mass = K.values.sum(axis=0)
    local = np.array([cdc_local(dY, dZ, K, u) for u in range(n)])
    value = 12.0 / n * float(np.sum(mass**4 / n**4 * local))
    return CdcResult(value, n, float(h), local)


def cdc_stat(Y, Z, U, h: float) -> CdcResult:
    """Batched matrix form ``12 / n^5 * (E1 + E2 - 2 E3)``.

    With ``s = K 1``::

        E1 = <s * s, diag(K' (DY * DZ) K)>
        E2 = <diag(K' DY K), diag(K' DZ K)>
        E3 = <s, diag(K' ((DY K) * (DZ K)))>
    """
    Y, Z, U, n = _resolve_cdc_inputs(Y, Z, U, h)
    dY = pairwise_distance_matrix(Y)
    dZ = pairwise_distance_matrix(Z)
    K = gaussian_kernel_matrix(U, h).values
    s = K.sum(axis=1)
    YK = dY @ K
    ZK = dZ @ K
    e1 = float((s * s) @ np.einsum("ku,ku->u", K, (dY * dZ) @ K))
    e2 = float(np.einsum("ku,ku->u", K, YK) @ np.einsum("ku,ku->u", K, ZK))
    e3 = float(s @ np.einsum("ku,ku->u", K, YK * ZK))
    return CdcResult(12.0 / n**5 * (e1 + e2 - 2.0 * e3), n, float(h))
