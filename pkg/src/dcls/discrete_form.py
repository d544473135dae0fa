"""The discrete Lagrange one-form and everything derived from it.

sigma_d is the discrete analogue of dL, obtained by quadrature of L along
curve segments.  With y = B^{-T} sigma_d, where B = [J-; J+] is the stacked
boundary Jacobian, the two Legendre transforms are F+L = y[n:] and
F-L = -y[:n], and theta+ - theta- = sigma_d follows from B^T y = sigma_d.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _fd
from . import segments as seg
from . import systems as sy
from .errors import DomainError

EXACT = "exact"
PULLED_BACK = "pulled_back"
ANCHOR = "anchor"
QUADRATURE = "quadrature"


@dataclass(frozen=True)
class Quadrature:
    """Nodes on [0, 1] and positive weights summing to one."""

    nodes: tuple
    weights: tuple
    name: str = ""

    def __post_init__(self):
        if len(self.nodes) != len(self.weights) or not self.nodes:
            raise ValueError("quadrature needs matching, non-empty nodes and weights")
        if any(w <= 0 for w in self.weights):
            raise ValueError("quadrature weights must be positive")
        if abs(sum(self.weights) - 1.0) > 1e-14:
            raise ValueError("quadrature weights must sum to one")
        if any(not 0.0 <= t <= 1.0 for t in self.nodes):
            raise ValueError("quadrature nodes must lie in [0, 1]")


_R3 = 1.0 / (2.0 * np.sqrt(3.0))
QUADRATURES = {
    "midpoint": Quadrature((0.5,), (1.0,), "midpoint"),
    "trapezoid": Quadrature((0.0, 1.0), (0.5, 0.5), "trapezoid"),
    "gauss2": Quadrature((0.5 - _R3, 0.5 + _R3), (0.5, 0.5), "gauss2"),
}


def get_quadrature(name: str) -> Quadrature:
    try:
        return QUADRATURES[name]
    except KeyError:
        raise KeyError(f"unknown quadrature {name!r}; choose from {', '.join(QUADRATURES)}") from None


@dataclass(frozen=True)
class DiscreteSystem:
    """A discrete constrained Lagrangian system built from a continuous one.

    The discrete constraint is g evaluated at the segment anchor (or
    quadrature-averaged along the segment); the variation space at a state v
    lives at the forward point d+(v) and is annihilated by dg/dv there.
    """

    system: sy.ContinuousSystem
    scheme: seg.SegmentScheme
    quadrature: Quadrature = QUADRATURES["midpoint"]
    sigma_mode: str = EXACT
    constraint_placement: str = ANCHOR
    feasibility_tol: float = sy.FEASIBILITY_TOL

    def __post_init__(self):
        if self.sigma_mode not in (EXACT, PULLED_BACK):
            raise ValueError(f"unknown sigma mode {self.sigma_mode!r}")
        if self.constraint_placement not in (ANCHOR, QUADRATURE):
            raise ValueError(f"unknown constraint placement {self.constraint_placement!r}")

    @property
    def n(self):
        return self.system.dim_q

    @property
    def m(self):
        return self.system.dim_g

    @property
    def h(self):
        return self.scheme.h

    def with_step(self, h):
        return DiscreteSystem(
            self.system, self.scheme.with_step(h), self.quadrature,
            self.sigma_mode, self.constraint_placement, self.feasibility_tol,
        )

    def node_times(self):
        a = self.scheme.alpha_minus
        return [a + t * self.h for t in self.quadrature.nodes]


def _split(z, n):
    return z[:n], z[n:]


# ----------------------------------------------------------------------------
# discrete Lagrangian and sigma_d

def discrete_lagrangian(d: DiscreteSystem, q, v) -> float:
    """L_d = h sum_i w_i L(c(t_i), c'(t_i))."""
    total = 0.0
    for t, w in zip(d.node_times(), d.quadrature.weights):
        c, dc, _ = seg.segment_state(d.scheme, t, q, v)
        total += w * sy.eval_lagrangian(d.system, c, dc)
    return d.h * total


def sigma_d(d: DiscreteSystem, q, v) -> np.ndarray:
    """The discrete one-form as a covector on R^{2n}."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    n = d.n
    out = np.zeros(2 * n)
    if d.sigma_mode == EXACT:
        for t, w in zip(d.node_times(), d.quadrature.weights):
            c, dc, Phi = seg.segment_state(d.scheme, t, q, v, want_jac=True)
            gq, gv = sy.lagrangian_gradient(d.system, c, dc)
            out += w * (Phi.T @ np.concatenate([gq, gv]))
    else:
        # segment variations interpolated affinely between the boundary variations
        Jm, Jp = seg.boundary_jacobians(d.scheme, q, v)
        dJ = Jp - Jm
        for tau, t, w in zip(d.quadrature.nodes, d.node_times(), d.quadrature.weights):
            c, dc, _ = seg.segment_state(d.scheme, t, q, v)
            gq, gv = sy.lagrangian_gradient(d.system, c, dc)
            out += w * ((Jm + tau * dJ).T @ gq + dJ.T @ gv / d.h)
    out *= d.h
    if not np.all(np.isfinite(out)):
        raise DomainError("non-finite sigma_d")
    return out


def sigma_jacobian(d: DiscreteSystem, q, v) -> np.ndarray:
    """d(sigma_d)/d(q, v); exact for Linear segments, central differences otherwise."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    n = d.n
    if d.scheme.is_linear:
        # Phi is constant in (q, v) for straight segments, so no curvature terms appear
        H = np.zeros((2 * n, 2 * n))
        for t, w in zip(d.node_times(), d.quadrature.weights):
            c, dc, Phi = seg.segment_state(d.scheme, t, q, v, want_jac=True)
            H += w * (Phi.T @ sy.lagrangian_hessian(d.system, c, dc) @ Phi)
        return d.h * H
    return _fd.jacobian(lambda z: sigma_d(d, *_split(z, n)), np.concatenate([q, v]), rel=_fd.STEP_NESTED)


def _dual(d, q, v):
    """y = B^{-T} sigma_d together with the frame used."""
    fr = seg.frame(d.scheme, q, v)
    return fr.Binv.T @ sigma_d(d, q, v), fr


def legendre_plus(d: DiscreteSystem, q, v) -> np.ndarray:
    """<F+L(v), dq> = sigma_d(v) . lift_plus(dq)."""
    y, _ = _dual(d, q, v)
    return y[d.n:]


def legendre_minus(d: DiscreteSystem, q, v) -> np.ndarray:
    """<F-L(v), dq> = -sigma_d(v) . lift_minus(dq)."""
    y, _ = _dual(d, q, v)
    return -y[: d.n]


def legendre_minus_jacobian(d: DiscreteSystem, q, v) -> np.ndarray:
    """d(F-L)/d(q, v), an n x 2n matrix."""
    n = d.n
    if d.scheme.is_linear:
        fr = seg.frame(d.scheme, q, v)
        return -(fr.Binv.T @ sigma_jacobian(d, q, v))[:n]
    z = np.concatenate([np.asarray(q, float), np.asarray(v, float)])
    return _fd.jacobian(lambda x: legendre_minus(d, *_split(x, n)), z, rel=_fd.STEP_NESTED)


def theta_plus(d: DiscreteSystem, q, v) -> np.ndarray:
    """theta+ . dv = sigma_d . dv+, i.e. J+^T F+L."""
    y, fr = _dual(d, q, v)
    return fr.Jp.T @ y[d.n:]


def theta_minus(d: DiscreteSystem, q, v) -> np.ndarray:
    """theta- . dv = -sigma_d . dv-, i.e. -J-^T y[:n]."""
    y, fr = _dual(d, q, v)
    return -fr.Jm.T @ y[: d.n]


def delta_sigma(d: DiscreteSystem, v_state, w_state, tol=seg.ADJACENCY_TOL) -> np.ndarray:
    """The covector dq -> sigma_d(w) dq- + sigma_d(v) dq+ at the junction point."""
    seg.check_adjacent(d.scheme, v_state, w_state, tol)
    fr_v = seg.frame(d.scheme, *v_state)
    fr_w = seg.frame(d.scheme, *w_state)
    return (fr_w.lift_minus_matrix.T @ sigma_d(d, *w_state)
            + fr_v.lift_plus_matrix.T @ sigma_d(d, *v_state))


# ----------------------------------------------------------------------------
# momentum maps and two-forms

def generator_vector(d: DiscreteSystem, gen_index, q, v) -> np.ndarray:
    return sy.generator_lift(d.system, gen_index, q, v).as_vector()


def momentum(d: DiscreteSystem, gen_index: int, q, v, side: str = "plus") -> float:
    """J+_xi = theta+(xi v) or J-_xi = theta-(xi v) for a registered generator."""
    xi = generator_vector(d, gen_index, q, v)
    if side == "plus":
        return float(theta_plus(d, q, v) @ xi)
    if side == "minus":
        return float(theta_minus(d, q, v) @ xi)
    raise ValueError(f"side must be 'plus' or 'minus', got {side!r}")


def momentum_combination(d: DiscreteSystem, coeffs, q, v) -> float:
    """J+ paired with sum_i coeffs[i] xi_i."""
    th = theta_plus(d, q, v)
    return float(sum(c * (th @ generator_vector(d, i, q, v)) for i, c in enumerate(coeffs)))


def omega_matrix(d: DiscreteSystem, q, v, side: str = "plus") -> np.ndarray:
    """W with omega(a, b) = a^T W b, from a central-difference Jacobian of theta.

    In a single chart, d theta(a, b) = D[theta.b].a - D[theta.a].b for constant a, b.
    """
    n = d.n
    theta = {"plus": theta_plus, "minus": theta_minus}[side]
    z = np.concatenate([np.asarray(q, float), np.asarray(v, float)])
    D = _fd.jacobian(lambda x: theta(d, *_split(x, n)), z)
    # theta+ - theta- = sigma_d, so both sides agree whenever sigma_d is closed
    return D.T - D


def omega(d: DiscreteSystem, q, v, dv, dw, side: str = "plus") -> float:
    return float(np.asarray(dv) @ omega_matrix(d, q, v, side) @ np.asarray(dw))


def dpm_bilinear(d: DiscreteSystem, w_state, dq, dq_next) -> float:
    """d+-sigma_d(w)(dq, dq~) at the state w.

    dq lives at d-(w) and dq~ at d+(w).  This is the derivative along
    lift_plus(., dq~) of the function z -> sigma_d(z) . lift_minus(z, dq),
    the lift of the constant field dq.
    """
    n = d.n
    q, v = (np.asarray(x, float) for x in w_state)
    z = np.concatenate([q, v])
    u = seg.lift_plus(d.scheme, q, v, dq_next)

    def f(x):
        xq, xv = _split(x, n)
        return sigma_d(d, xq, xv) @ seg.lift_minus(d.scheme, xq, xv, dq)

    return float(_fd.directional(f, z, u))


def dmp_bilinear(d: DiscreteSystem, w_state, dq, dq_next) -> float:
    """The companion d-+sigma_d(w)(dq, dq~), with the roles of the lifts swapped."""
    n = d.n
    q, v = (np.asarray(x, float) for x in w_state)
    z = np.concatenate([q, v])
    u = seg.lift_minus(d.scheme, q, v, dq)

    def f(x):
        xq, xv = _split(x, n)
        return sigma_d(d, xq, xv) @ seg.lift_plus(d.scheme, xq, xv, dq_next)

    return float(_fd.directional(f, z, u))


# ----------------------------------------------------------------------------
# discrete constraint and force annihilator

def discrete_constraint(d: DiscreteSystem, q, v) -> np.ndarray:
    if d.m == 0:
        return np.zeros(0)
    if d.constraint_placement == ANCHOR:
        return sy.eval_constraint(d.system, q, v)
    total = np.zeros(d.m)
    for t, w in zip(d.node_times(), d.quadrature.weights):
        c, dc, _ = seg.segment_state(d.scheme, t, q, v)
        total += w * sy.eval_constraint(d.system, c, dc)
    return total


def discrete_constraint_jacobian(d: DiscreteSystem, q, v) -> np.ndarray:
    """d g_d / d(q, v), an m x 2n matrix."""
    if d.m == 0:
        return np.zeros((0, 2 * d.n))
    if d.constraint_placement == ANCHOR:
        return np.hstack(sy.constraint_jacobians(d.system, q, v))
    G = np.zeros((d.m, 2 * d.n))
    for t, w in zip(d.node_times(), d.quadrature.weights):
        c, dc, Phi = seg.segment_state(d.scheme, t, q, v, want_jac=True)
        G += w * (np.hstack(sy.constraint_jacobians(d.system, c, dc)) @ Phi)
    return G


def annihilator_at(d: DiscreteSystem, point, v_fiber) -> np.ndarray:
    """Rows annihilating the discrete variations at a configuration point."""
    return sy.variation_annihilator(d.system, point, v_fiber)


def force_annihilator(d: DiscreteSystem, q, v) -> np.ndarray:
    """mu(v): rows spanning ann E_d(v), placed at the forward point d+(v)."""
    if d.m == 0:
        return np.zeros((0, d.n))
    return annihilator_at(d, seg.boundary_plus(d.scheme, q, v), v)


def variation_space(d: DiscreteSystem, q, v) -> np.ndarray:
    """Orthonormal basis (columns) of E_d(v), a subspace of T_{d+(v)} Q."""
    return sy.null_space(force_annihilator(d, q, v), d.n)


def is_feasible(d: DiscreteSystem, q, v, tol=None) -> bool:
    tol = d.feasibility_tol if tol is None else tol
    g = discrete_constraint(d, q, v)
    return bool(g.size == 0 or np.max(np.abs(g)) <= tol)


def make_discrete_system(system, h, gamma=0.5, quadrature="midpoint", generator=None, **kwargs):
    """Convenience constructor: Linear segments unless a generator is given."""
    scheme = seg.SegmentScheme(seg.Bias(gamma), generator or seg.Linear(), h)
    quad = get_quadrature(quadrature) if isinstance(quadrature, str) else quadrature
    return DiscreteSystem(system, scheme, quad, **kwargs)


def random_states(d: DiscreteSystem, rng, count, scale=1.0) -> Sequence:
    """Feasible random states: v is projected onto the constraint fiber when g is linear in v."""
    out = []
    n = d.n
    for _ in range(count):
        q = scale * rng.standard_normal(n)
        v = scale * rng.standard_normal(n)
        if d.m:
            v = project_velocity(d, q, v)
        out.append((q, v))
    return out


def project_velocity(d: DiscreteSystem, q, v, tol=1e-14, max_iter=20):
    """Newton-project v onto {g_d(q, .) = 0} along the row space of dg_d/dv."""
    n = d.n
    v = np.asarray(v, float).copy()
    for _ in range(max_iter):
        g = discrete_constraint(d, q, v)
        if np.max(np.abs(g)) <= tol:
            break
        Gv = discrete_constraint_jacobian(d, q, v)[:, n:]
        v -= Gv.T @ np.linalg.solve(Gv @ Gv.T, g)
    return v
