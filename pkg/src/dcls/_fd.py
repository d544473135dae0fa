"""Finite-difference kernels used whenever an analytic derivative is missing."""

import numpy as np

EPS = np.finfo(float).eps
STEP_FIRST = EPS ** 0.5
STEP_NESTED = EPS ** (1.0 / 3.0)
# balances the O(d^4) truncation of 4th-order stencils against rounding
STEP_FOURTH = EPS ** 0.2


def _steps(x, rel):
    return rel * np.maximum(1.0, np.abs(x))


def gradient4(f, x, rel=STEP_FOURTH):
    """Fourth-order central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    steps = _steps(x, rel)
    for i, d in enumerate(steps):
        e = np.zeros_like(x)
        e[i] = d
        g[i] = (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * d)
    return g


def jacobian4(f, x, rel=STEP_FOURTH):
    """Fourth-order central-difference Jacobian; column j is df/dx_j."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i, d in enumerate(_steps(x, rel)):
        e = np.zeros_like(x)
        e[i] = d
        fp2, fp1 = np.asarray(f(x + 2 * e)), np.asarray(f(x + e))
        fm1, fm2 = np.asarray(f(x - e)), np.asarray(f(x - 2 * e))
        cols.append((-fp2 + 8 * fp1 - 8 * fm1 + fm2) / (12 * d))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def jacobian(f, x, rel=STEP_FIRST):
    """Second-order central-difference Jacobian."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i, d in enumerate(_steps(x, rel)):
        e = np.zeros_like(x)
        e[i] = d
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * d))
    return np.column_stack(cols)


def directional(f, x, u, rel=STEP_FIRST):
    """Central-difference derivative of f at x along u.

    The step is scaled so that the perturbation x + t*u has relative size
    ``rel`` in the largest component of x.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    nu = np.max(np.abs(u))
    if nu == 0.0:
        return np.zeros_like(np.asarray(f(x), dtype=float))
    t = rel * max(1.0, np.max(np.abs(x))) / nu
    return (np.asarray(f(x + t * u)) - np.asarray(f(x - t * u))) / (2 * t)
