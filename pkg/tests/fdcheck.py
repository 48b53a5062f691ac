"""Central finite-difference gradient checking shared across test modules."""

import numpy as np


def fd_grad(f, x, h=1e-6):
    """Central-difference gradient of scalar f at x, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(xf.size):
        saved = xf[i]
        xf[i] = saved + h
        hi = f(x)
        xf[i] = saved - h
        lo = f(x)
        xf[i] = saved
        flat[i] = (hi - lo) / (2.0 * h)
    return grad


def rel_error(a, b):
    na = np.linalg.norm(np.asarray(a).ravel())
    nb = np.linalg.norm(np.asarray(b).ravel())
    return np.linalg.norm((np.asarray(a) - np.asarray(b)).ravel()) / max(na, nb, 1e-12)
