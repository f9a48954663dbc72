"""Extended-precision reference statistics for finite-difference checks.

Central differences at step 1e-5 lose about ``eps * |f| / step`` to rounding;
in float64 that can exceed the tolerance on small gradient components. These
straightforward ``longdouble`` evaluations keep the same step while pushing
the rounding floor down by roughly three orders of magnitude.
"""
import numpy as np

LD = np.longdouble


def _dist(X):
    X = np.asarray(X, dtype=LD)
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def _center(d):
    return d - d.mean(axis=0)[None, :] - d.mean(axis=1)[:, None] + d.mean()


def dcov_ld(Y, Z):
    A, B = _center(_dist(Y)), _center(_dist(Z))
    return (A * B).sum() / LD(len(A)) ** 2


def cdc_ld(Y, Z, U, h):
    dY, dZ = _dist(Y), _dist(Z)
    n = len(dY)
    h = LD(h)
    K = np.exp(-_dist(U) ** 2 / (2 * h * h)) / (np.sqrt(2 * LD(np.pi)) * h)
    mass = K.sum(axis=0)
    W = K / mass
    total = LD(0)
    for u in range(n):
        w = W[:, u]
        yw, zw = dY @ w, dZ @ w
        local = w @ (dY * dZ) @ w + (w @ yw) * (w @ zw) - 2 * (w @ (yw * zw))
        total += mass[u] ** 4 / LD(n) ** 4 * local
    return 12 * total / n


def central_differences(f, Y, step=1e-5):
    """Same formula as ``dcfair.grad.numeric_grad`` with ``f`` in longdouble."""
    Y = np.asarray(Y, dtype=LD)
    grad = np.zeros(Y.shape, dtype=LD)
    for idx in np.ndindex(*Y.shape):
        up, down = Y.copy(), Y.copy()
        up[idx] += LD(step)
        down[idx] -= LD(step)
        grad[idx] = (f(up) - f(down)) / (2 * LD(step))
    return grad.astype(np.float64)
