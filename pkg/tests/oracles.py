"""Independent numerical oracles shared across test modules.

Everything here is written against plain numpy/scipy, never against the
library under test, so agreement between the two is meaningful evidence.
"""

import numpy as np


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x)
        flat[i] = orig - h
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def rel_err(got, want, floor=1e-8):
    """Max elementwise relative error with an absolute floor for tiny values."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    return float(np.max(np.abs(got - want) / np.maximum(np.abs(want), floor)))


def gauss_pdf(x, mean, std):
    z = (np.asarray(x) - mean) / std
    return np.exp(-0.5 * z * z) / (std * np.sqrt(2.0 * np.pi))


def mixture_pdf(x, weights, means, stds):
    """Density of a 1-D Gaussian mixture, plain quadratic-time form."""
    total = np.zeros_like(np.asarray(x, dtype=np.float64))
    for w, m, s in zip(weights, means, stds):
        total = total + w * gauss_pdf(x, m, s)
    return total
