"""Curve-segment discretizations of the tangent bundle of R^n.

A tangent vector (q, v) is mapped to a curve segment t -> psi(h, t, (q, v))
on [alpha-(h), alpha+(h)] with psi(h, 0) = q and d/dt psi(h, 0) = v.  The
segment endpoints are the boundary maps d-(q, v) and d+(q, v).  At fixed h
the pair (R^{2n}, d+, d-) is a discrete tangent bundle, and everything below
is linear algebra on the stacked 2n x 2n Jacobian [J-; J+].
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from . import _fd
from .errors import AdjacencyError, DegenerateBundleError, DomainError, FirstOrderError, InversionError

STACK_RTOL = 1e-8
ADJACENCY_TOL = 1e-9


@dataclass(frozen=True)
class Bias:
    """Split of the step around the anchor: alpha- = -(1-gamma) h, alpha+ = gamma h."""

    gamma: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")

    def alpha_minus(self, h):
        return -(1.0 - self.gamma) * h

    def alpha_plus(self, h):
        # written as h + alpha_minus so that alpha+ - alpha- == h exactly
        return h + self.alpha_minus(h)


@dataclass(frozen=True)
class Linear:
    """psi(h, t, (q, v)) = q + t v."""


# explicit Runge-Kutta tableaux (A, b) for the segment flows
_TABLEAUX = {
    "rk4": (
        np.array([[0, 0, 0, 0], [0.5, 0, 0, 0], [0, 0.5, 0, 0], [0, 0, 1.0, 0]]),
        np.array([1 / 6, 1 / 3, 1 / 3, 1 / 6]),
    ),
    "midpoint": (np.array([[0, 0], [0.5, 0]]), np.array([0.0, 1.0])),
}


@dataclass(frozen=True)
class FlowOfField:
    """Segment given by the configuration projection of the flow of q'' = a(q, q').

    ``accel_jacobian`` returns (da/dq, da/dv); without it the sensitivity
    equation uses a finite-difference Jacobian of ``accel``.
    """

    accel: Callable[[np.ndarray, np.ndarray], np.ndarray]
    method: str = "rk4"
    substeps: int = 4
    accel_jacobian: Optional[Callable] = None

    def __post_init__(self):
        if self.method not in _TABLEAUX:
            raise ValueError(f"unknown one-step method {self.method!r}")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError("substeps must be a positive integer")


def zero_field(q, v):
    return np.zeros_like(q)


@dataclass(frozen=True)
class SegmentScheme:
    bias: Bias
    generator: object
    h: float

    def __post_init__(self):
        if not (np.isfinite(self.h) and self.h > 0):
            raise ValueError(f"time step must be positive, got {self.h}")

    @property
    def alpha_minus(self):
        return self.bias.alpha_minus(self.h)

    @property
    def alpha_plus(self):
        return self.bias.alpha_plus(self.h)

    @property
    def is_linear(self):
        return isinstance(self.generator, Linear)

    def with_step(self, h):
        return SegmentScheme(self.bias, self.generator, h)


def linear_scheme(h, gamma=0.5):
    return SegmentScheme(Bias(gamma), Linear(), h)


# ----------------------------------------------------------------------------
# segment evaluation

def _flow(gen: FlowOfField, t, q, v, want_jac):
    n = q.size
    A, b = _TABLEAUX[gen.method]
    stages = len(b)
    dt = t / gen.substeps
    z = np.concatenate([q, v])
    Phi = np.eye(2 * n) if want_jac else None
    Jf = np.zeros((2 * n, 2 * n))
    Jf[:n, n:] = np.eye(n)

    def f(x):
        return np.concatenate([x[n:], np.asarray(gen.accel(x[:n], x[n:]), dtype=float)])

    def df(x):
        if gen.accel_jacobian is not None:
            aq, av = gen.accel_jacobian(x[:n], x[n:])
        else:
            Ja = _fd.jacobian4(lambda y: np.asarray(gen.accel(y[:n], y[n:]), dtype=float), x)
            aq, av = Ja[:, :n], Ja[:, n:]
        Jf[n:, :n] = aq
        Jf[n:, n:] = av
        return Jf

    for _ in range(gen.substeps):
        ks, Ks = [], []
        for i in range(stages):
            zi, Pi = z, Phi
            for j in range(i):
                if A[i, j]:
                    zi = zi + (dt * A[i, j]) * ks[j]
                    if want_jac:
                        Pi = Pi + (dt * A[i, j]) * Ks[j]
            ks.append(f(zi))
            if want_jac:
                Ks.append(df(zi) @ Pi)
        for i in range(stages):
            if b[i]:
                z = z + (dt * b[i]) * ks[i]
                if want_jac:
                    Phi = Phi + (dt * b[i]) * Ks[i]
        if not np.all(np.isfinite(z)):
            raise DomainError(f"segment flow left the finite domain at t={t}")
    return z[:n], z[n:], Phi


def segment_state(s: SegmentScheme, t, q, v, want_jac=False):
    """Return (c(t), c'(t), Phi) where Phi = d(c, c')/d(q, v) when requested."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    if s.is_linear:
        Phi = None
        if want_jac:
            n = q.size
            Phi = np.eye(2 * n)
            Phi[:n, n:] = t * np.eye(n)
        return q + t * v, v.copy(), Phi
    if t == 0.0:
        return q.copy(), v.copy(), (np.eye(2 * q.size) if want_jac else None)
    return _flow(s.generator, t, q, v, want_jac)


def psi(s: SegmentScheme, t, q, v):
    return segment_state(s, t, q, v)[0]


def boundary_minus(s: SegmentScheme, q, v):
    return psi(s, s.alpha_minus, q, v)


def boundary_plus(s: SegmentScheme, q, v):
    return psi(s, s.alpha_plus, q, v)


def boundary_jacobians(s: SegmentScheme, q, v):
    """(J-, J+), each n x 2n, the derivatives of the boundary maps in (q, v)."""
    n = np.asarray(q).size
    if s.is_linear:
        I = np.eye(n)
        return np.hstack([I, s.alpha_minus * I]), np.hstack([I, s.alpha_plus * I])
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    return _flow_jacobians(s, q.tobytes(), v.tobytes(), n)


@lru_cache(maxsize=256)
def _flow_jacobians(s, qb, vb, n):
    # frames, lifts and stacked Jacobians at one state share these flow integrations
    q, v = np.frombuffer(qb), np.frombuffer(vb)
    _, _, Pm = segment_state(s, s.alpha_minus, q, v, want_jac=True)
    _, _, Pp = segment_state(s, s.alpha_plus, q, v, want_jac=True)
    Jm, Jp = Pm[:n], Pp[:n]
    if not (np.all(np.isfinite(Jm)) and np.all(np.isfinite(Jp))):
        raise DomainError("non-finite boundary Jacobian")
    Jm.flags.writeable = False
    Jp.flags.writeable = False
    return Jm, Jp


class Frame:
    """Boundary Jacobians and the inverse stacked Jacobian at one state.

    Columns [:, :n] of ``Binv`` are the minus lifts (vert+ = ker J+) and
    columns [:, n:] the plus lifts (vert- = ker J-).
    """

    __slots__ = ("Jm", "Jp", "Binv", "n")

    def __init__(self, Jm, Jp, Binv):
        self.Jm, self.Jp, self.Binv = Jm, Jp, Binv
        self.n = Jm.shape[0]

    @property
    def lift_minus_matrix(self):
        return self.Binv[:, : self.n]

    @property
    def lift_plus_matrix(self):
        return self.Binv[:, self.n:]


_LINEAR_FRAMES: dict = {}


def frame(s: SegmentScheme, q, v) -> Frame:
    n = np.asarray(q).size
    if s.is_linear:
        key = (s.alpha_minus, s.alpha_plus, n)
        fr = _LINEAR_FRAMES.get(key)
        if fr is None:
            Jm, Jp = boundary_jacobians(s, q, v)
            fr = Frame(Jm, Jp, _checked_inverse(np.vstack([Jm, Jp])))
            _LINEAR_FRAMES[key] = fr
        return fr
    Jm, Jp = boundary_jacobians(s, q, v)
    return Frame(Jm, Jp, _checked_inverse(np.vstack([Jm, Jp])))


def _checked_inverse(B):
    sv = np.linalg.svd(B, compute_uv=False)
    if sv[-1] <= STACK_RTOL * sv[0]:
        raise DegenerateBundleError(
            f"stacked boundary Jacobian is singular (sigma_min/sigma_max = {sv[-1] / sv[0]:.3e})"
        )
    return np.linalg.inv(B)


def stacked_jacobian(s: SegmentScheme, q, v):
    Jm, Jp = boundary_jacobians(s, q, v)
    return np.vstack([Jm, Jp])


# ----------------------------------------------------------------------------
# inverses and the vertical splitting

def invert_boundaries(s: SegmentScheme, m_minus, m_plus, guess=None, tol=1e-12, max_iter=50):
    """Return (q, v) with d-(q, v) = m_minus and d+(q, v) = m_plus."""
    m_minus = np.asarray(m_minus, dtype=float)
    m_plus = np.asarray(m_plus, dtype=float)
    n = m_minus.size
    if s.is_linear:
        v = (m_plus - m_minus) / s.h
        return m_minus - s.alpha_minus * v, v
    if guess is None:
        v = (m_plus - m_minus) / s.h
        q = m_minus - s.alpha_minus * v
    else:
        q, v = (np.asarray(x, dtype=float).copy() for x in guess)
    scale = max(1.0, np.max(np.abs(m_minus)), np.max(np.abs(m_plus)))
    res = np.inf
    for _ in range(max_iter):
        r = np.concatenate([boundary_minus(s, q, v) - m_minus, boundary_plus(s, q, v) - m_plus])
        res = np.max(np.abs(r))
        if res <= tol * scale:
            return q, v
        dz = np.linalg.solve(stacked_jacobian(s, q, v), -r)
        q, v = q + dz[:n], v + dz[n:]
    raise InversionError(f"boundary inversion did not converge (residual {res:.3e})", residual=res)


@dataclass(frozen=True)
class Decomposition:
    minus_part: np.ndarray
    plus_part: np.ndarray


def decompose(s: SegmentScheme, q, v, dv) -> Decomposition:
    """Split dv = dv- + dv+ with dv- in ker J+ and dv+ in ker J-."""
    fr = frame(s, q, v)
    dv = np.asarray(dv, dtype=float)
    return Decomposition(
        minus_part=fr.lift_minus_matrix @ (fr.Jm @ dv),
        plus_part=fr.lift_plus_matrix @ (fr.Jp @ dv),
    )


def lift_plus(s: SegmentScheme, q, v, dq):
    """The unique vector in ker J- that J+ maps to dq."""
    return frame(s, q, v).lift_plus_matrix @ np.asarray(dq, dtype=float)


def lift_minus(s: SegmentScheme, q, v, dq):
    """The unique vector in ker J+ that J- maps to dq."""
    return frame(s, q, v).lift_minus_matrix @ np.asarray(dq, dtype=float)


def check_adjacent(s: SegmentScheme, v_state, w_state, tol=ADJACENCY_TOL):
    gap = boundary_plus(s, *v_state) - boundary_minus(s, *w_state)
    err = float(np.max(np.abs(gap))) if gap.size else 0.0
    if err > tol * max(1.0, float(np.max(np.abs(boundary_plus(s, *v_state))))):
        raise AdjacencyError(f"states are not adjacent: |d+(v) - d-(w)| = {err:.3e}")
    return err


def transport(s: SegmentScheme, v_state, w_state, dv, tol=ADJACENCY_TOL):
    """Carry dv in vert-_v to the vector of vert+_w with the same junction projection."""
    check_adjacent(s, v_state, w_state, tol)
    Jp = frame(s, *v_state).Jp
    return lift_minus(s, *w_state, Jp @ np.asarray(dv, dtype=float))


# ----------------------------------------------------------------------------
# configuration sequences

def discrete_derivative(s: SegmentScheme, m):
    """States (Q, V), shape (N, n) each, with d-(v_k) = m_k and d+(v_k) = m_{k+1}."""
    m = np.asarray(m, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    N = m.shape[0] - 1
    if N < 1:
        raise ValueError("need at least two configurations")
    Q = np.empty((N, m.shape[1]))
    V = np.empty_like(Q)
    guess = None
    for k in range(N):
        try:
            Q[k], V[k] = invert_boundaries(s, m[k], m[k + 1], guess=guess)
        except InversionError as exc:
            raise InversionError(f"inversion failed at index {k}: {exc}", residual=exc.residual) from exc
        guess = (Q[k], V[k])
    return Q, V


def reconstruct_configurations(s: SegmentScheme, Q, V, tol=ADJACENCY_TOL):
    """Configurations m_0..m_N of a first-order state sequence."""
    Q = np.asarray(Q, dtype=float)
    V = np.asarray(V, dtype=float)
    if Q.ndim == 1:
        Q, V = Q[None, :], V[None, :]
    N = Q.shape[0]
    plus = np.array([boundary_plus(s, Q[k], V[k]) for k in range(N)])
    minus = np.array([boundary_minus(s, Q[k], V[k]) for k in range(N)])
    if N > 1:
        gaps = np.max(np.abs(plus[:-1] - minus[1:]), axis=1)
        worst = int(np.argmax(gaps))
        if gaps[worst] > tol * max(1.0, float(np.max(np.abs(plus)))):
            raise FirstOrderError(
                f"sequence is not first order at k={worst} (gap {gaps[worst]:.3e})",
                index=worst,
                violation=float(gaps[worst]),
            )
    return np.vstack([minus[:1], plus])
