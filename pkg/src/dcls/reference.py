"""Continuous Lagrange-d'Alembert solutions used as the accuracy oracle.

The equations

    d/dt dL/dv - dL/dq = A(q, v)^T lambda,    g(q, v) = 0,

with A the variation annihilator (dg/dv under Chetaev's rule), are reduced
to an ODE by differentiating the constraint once:

    [ L_vv  -A^T ] [ a      ]   [ L_q - L_vq v ]
    [ g_v    0   ] [ lambda ] = [ -g_q v       ]

where L_vq v denotes (d/dq dL/dv) v.  The linear system is solved at every
right-hand-side evaluation and the ODE is integrated with an adaptive
8th-order Runge-Kutta method.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp

from . import _fd
from . import segments as seg
from . import systems as sy
from .errors import DCLSError


class ReferenceError(DCLSError):
    pass


def accelerations(sys: sy.ContinuousSystem, q, v):
    """Return (a, lambda) of the index-reduced Lagrange-d'Alembert equations."""
    n, m = sys.dim_q, sys.dim_g
    H = sy.lagrangian_hessian(sys, q, v)
    Lvv, Lvq = H[n:, n:], H[n:, :n]
    Lq, _ = sy.lagrangian_gradient(sys, q, v)
    rhs = Lq - Lvq @ v
    if m == 0:
        return np.linalg.solve(Lvv, rhs), np.zeros(0)
    A = sy.variation_annihilator(sys, q, v)
    gq, gv = sy.constraint_jacobians(sys, q, v)
    K = np.block([[Lvv, -A.T], [gv, np.zeros((m, m))]])
    sol = np.linalg.solve(K, np.concatenate([rhs, -gq @ v]))
    return sol[:n], sol[n:]


def lagrangian_field(sys: sy.ContinuousSystem):
    """Unconstrained Euler-Lagrange accelerations a(q, v), usable as a segment field."""
    n = sys.dim_q
    grad = sys.lagrangian_gradient or (lambda q, v: sy.lagrangian_gradient(sys, q, v))
    hess = sys.lagrangian_hessian or (lambda q, v: sy.lagrangian_hessian(sys, q, v))

    def accel(q, v):
        # called at every Runge-Kutta stage, so the validating wrappers are skipped
        H = hess(q, v)
        Lq, _ = grad(q, v)
        return np.linalg.solve(H[n:, n:], np.asarray(Lq, float) - H[n:, :n] @ v)

    return accel


def lagrangian_field_jacobian(sys: sy.ContinuousSystem, accel=None):
    """(da/dq, da/dv) of the Euler-Lagrange field by second-order central differences."""
    n = sys.dim_q
    accel = accel or lagrangian_field(sys)

    def jac(q, v):
        J = _fd.jacobian(lambda z: accel(z[:n], z[n:]), np.concatenate([q, v]), rel=_fd.STEP_NESTED)
        return J[:, :n], J[:, n:]

    return jac


def lagrangian_flow(sys: sy.ContinuousSystem, method="rk4", substeps=4) -> seg.FlowOfField:
    """Segment generator following the unconstrained Euler-Lagrange flow of ``sys``."""
    accel = lagrangian_field(sys)
    return seg.FlowOfField(accel, method=method, substeps=substeps,
                           accel_jacobian=lagrangian_field_jacobian(sys, accel))


def reference_solution(sys: sy.ContinuousSystem, q0, v0, T, times=None, tol=1e-12):
    """Integrate the constrained equations from (q0, v0) to T.

    Returns (t, Q, V) sampled at ``times`` (default: just T).
    """
    n = sys.dim_q
    q0 = np.asarray(q0, dtype=float)
    v0 = np.asarray(v0, dtype=float)

    def rhs(t, y):
        a, _ = accelerations(sys, y[:n], y[n:])
        return np.concatenate([y[n:], a])

    t_eval = np.atleast_1d(T if times is None else times).astype(float)
    try:
        sol = solve_ivp(rhs, (0.0, float(t_eval[-1])), np.concatenate([q0, v0]),
                        method="DOP853", rtol=tol, atol=tol, t_eval=t_eval)
    except (np.linalg.LinAlgError, sy.RegularityError) as exc:
        raise ReferenceError(f"reference integration failed: {exc}") from exc
    if not sol.success:
        raise ReferenceError(f"reference integration failed: {sol.message}")
    return sol.t, sol.y[:n].T, sol.y[n:].T
