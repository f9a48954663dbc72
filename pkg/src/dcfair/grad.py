"""Analytic gradients of the dependence statistics with respect to ``Y``.

Both statistics are linear in the ``Y`` distance matrix once ``Z`` and ``U``
are fixed, so each gradient is ``G = d stat / d dY`` pushed through
``d dY_kl / d Y_k = (Y_k - Y_l) / ||Y_k - Y_l||``. Coincident rows take the
zero subgradient.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .stats import (
    _check_counts,
    _resolve_cdc_inputs,
    as_batch,
    gaussian_kernel_matrix,
    pairwise_distance_matrix,
)


@dataclass(frozen=True)
class GradientResult:
    grad: np.ndarray
    value: float


def _push_through_distances(Y: np.ndarray, dY: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Chain ``G = d stat / d dY`` (n x n) back to the rows of ``Y``."""
    W = G + G.T
    with np.errstate(divide="ignore", invalid="ignore"):
        W = np.where(dY > 0, W / dY, 0.0)
    # sum_l W_kl (Y_k - Y_l)
    return W.sum(axis=1)[:, None] * Y - W @ Y


def dcov_grad(Y, Z) -> GradientResult:
    """Gradient of ``dcov(Y, Z)`` with respect to ``Y``.

    Since double centring is a self-adjoint projection and ``B`` is already
    centred, ``<A, B> = <a, B>`` and ``d stat / d a_kl = B_kl / n^2``.
    """
    Y = as_batch(Y, "Y")
    Z = as_batch(Z, "Z")
    n = _check_counts(Y=Y, Z=Z)
    a = pairwise_distance_matrix(Y)
    b = pairwise_distance_matrix(Z)
    B = b - b.mean(axis=0) - b.mean(axis=1)[:, None] + b.mean()
    G = B / n**2
    return GradientResult(_push_through_distances(Y, a, G), float(np.vdot(a, G)))


def cdc_grad(Y, Z, U, h: float) -> GradientResult:
    """Gradient of ``cdc_stat(Y, Z, U, h)`` with respect to ``Y``.

    Per term of the matrix form, with ``s = K 1`` and ``c_u = K_u' DZ K_u``:

    * ``d E1 / d dY = DZ * (K diag(s^2) K')``
    * ``d E2 / d dY = K diag(c) K'``
    * ``d E3 / d dY = (K * (DZ K)) diag(s) K'``

    E2 and E3 share the right factor ``K'`` and are folded into one product.
    """
    Y, Z, U, n = _resolve_cdc_inputs(Y, Z, U, h)
    dY = pairwise_distance_matrix(Y)
    dZ = pairwise_distance_matrix(Z)
    K = gaussian_kernel_matrix(U, h).values
    s = K.sum(axis=1)
    ZK = dZ @ K
    c = np.einsum("ku,ku->u", K, ZK)
    g1 = dZ * ((K * (s * s)) @ K.T)
    g23 = (K * (c - 2.0 * ZK * s)) @ K.T
    G = 12.0 / n**5 * (g1 + g23)
    # the statistic is linear in dY, so its value is <G, dY>
    return GradientResult(_push_through_distances(Y, dY, G), float(np.vdot(G, dY)))


def numeric_grad(f: Callable[[np.ndarray], float], Y, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a sample matrix."""
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    Y = np.array(Y, dtype=np.float64)
    grad = np.zeros_like(Y)
    for idx in np.ndindex(*Y.shape):
        orig = Y[idx]
        Y[idx] = orig + step
        fp = float(f(Y))
        Y[idx] = orig - step
        fm = float(f(Y))
        Y[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * step)
    return grad
