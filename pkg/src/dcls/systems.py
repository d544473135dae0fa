"""Continuous constrained Lagrangian systems on a single chart R^n.

A system is the triple (L, D, E): a Lagrangian, a constraint submanifold
``D = g^{-1}(0)`` of the velocity phase space and the space of admissible
variations ``E``.  Under Chetaev's rule the annihilator of ``E`` at (q, v) is
the row space of dg/dv(q, v).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _fd
from .errors import DomainError, RegularityError, UnsupportedOperationError

CHETAEV = "chetaev"
RANK_RTOL = 1e-10
FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True)
class ExplicitAnnihilator:
    """Variation rule given directly as (q, v) -> m x n annihilator rows."""

    rows: Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Generator:
    """Affine infinitesimal generator xi_Q(q) = A q + b."""

    A: np.ndarray
    b: np.ndarray
    label: str = ""

    def base(self, q):
        return self.A @ q + self.b


@dataclass(frozen=True)
class GeneratorLift:
    base: np.ndarray
    fiber: np.ndarray

    def as_vector(self):
        return np.concatenate([self.base, self.fiber])


@dataclass(frozen=True)
class ContinuousSystem:
    dim_q: int
    lagrangian: Callable[[np.ndarray, np.ndarray], float]
    lagrangian_gradient: Optional[Callable] = None
    lagrangian_hessian: Optional[Callable] = None
    constraint: Optional[Callable] = None
    constraint_jacobians: Optional[Callable] = None
    variation_rule: object = CHETAEV
    generators: tuple = ()
    name: str = "custom"
    params: dict = field(default_factory=dict)
    dim_g: int = -1

    def __post_init__(self):
        if self.dim_q < 1:
            raise ValueError("dim_q must be positive")
        m = self.dim_g
        if m < 0:
            if self.constraint is None:
                m = 0
            else:
                z = np.zeros(self.dim_q)
                m = int(np.atleast_1d(self.constraint(z, z)).size)
            object.__setattr__(self, "dim_g", m)
        if m >= self.dim_q:
            raise ValueError(f"need fewer constraints than dimensions, got m={m}, n={self.dim_q}")
        object.__setattr__(self, "generators", tuple(self.generators))

    @property
    def n(self):
        return self.dim_q

    @property
    def m(self):
        return self.dim_g


def _check_dims(sys, q, v):
    q = np.asarray(q, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    if q.size != sys.dim_q or v.size != sys.dim_q:
        raise ValueError(f"expected vectors of length {sys.dim_q}, got {q.size} and {v.size}")
    return q, v


def eval_lagrangian(sys: ContinuousSystem, q, v) -> float:
    q, v = _check_dims(sys, q, v)
    val = float(sys.lagrangian(q, v))
    if not np.isfinite(val):
        raise DomainError(f"non-finite Lagrangian at q={q}, v={v}")
    return val


def lagrangian_gradient(sys: ContinuousSystem, q, v):
    """Return (dL/dq, dL/dv), falling back to 4th-order central differences."""
    q, v = _check_dims(sys, q, v)
    if sys.lagrangian_gradient is not None:
        gq, gv = sys.lagrangian_gradient(q, v)
        gq, gv = np.asarray(gq, dtype=float), np.asarray(gv, dtype=float)
    else:
        n = sys.dim_q
        g = _fd.gradient4(lambda z: sys.lagrangian(z[:n], z[n:]), np.concatenate([q, v]))
        gq, gv = g[:n], g[n:]
    if not (np.all(np.isfinite(gq)) and np.all(np.isfinite(gv))):
        raise DomainError("non-finite Lagrangian gradient")
    return gq, gv


def lagrangian_hessian(sys: ContinuousSystem, q, v) -> np.ndarray:
    """Full 2n x 2n Hessian of L in (q, v) ordering."""
    q, v = _check_dims(sys, q, v)
    if sys.lagrangian_hessian is not None:
        return np.asarray(sys.lagrangian_hessian(q, v), dtype=float)
    n = sys.dim_q

    def grad(z):
        return np.concatenate(lagrangian_gradient(sys, z[:n], z[n:]))

    H = _fd.jacobian4(grad, np.concatenate([q, v]))
    return 0.5 * (H + H.T)


def eval_constraint(sys: ContinuousSystem, q, v) -> np.ndarray:
    if sys.constraint is None:
        raise UnsupportedOperationError(f"system {sys.name!r} has no constraint")
    q, v = _check_dims(sys, q, v)
    g = np.atleast_1d(np.asarray(sys.constraint(q, v), dtype=float))
    if not np.all(np.isfinite(g)):
        raise DomainError("non-finite constraint value")
    return g


def constraint_jacobians(sys: ContinuousSystem, q, v):
    """Return (dg/dq, dg/dv), each m x n."""
    n, m = sys.dim_q, sys.dim_g
    if m == 0:
        return np.zeros((0, n)), np.zeros((0, n))
    q, v = _check_dims(sys, q, v)
    if sys.constraint_jacobians is not None:
        gq, gv = sys.constraint_jacobians(q, v)
        return np.atleast_2d(np.asarray(gq, dtype=float)), np.atleast_2d(np.asarray(gv, dtype=float))
    J = _fd.jacobian4(lambda z: eval_constraint(sys, z[:n], z[n:]), np.concatenate([q, v]))
    return J[:, :n], J[:, n:]


def numerical_rank(M, rtol=RANK_RTOL):
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def variation_annihilator(sys: ContinuousSystem, q, v) -> np.ndarray:
    """Rows spanning ann E at (q, v); dg/dv under Chetaev's rule.

    Raises RegularityError when the rows are rank deficient.
    """
    n, m = sys.dim_q, sys.dim_g
    if m == 0:
        return np.zeros((0, n))
    q, v = _check_dims(sys, q, v)
    if isinstance(sys.variation_rule, ExplicitAnnihilator):
        A = np.atleast_2d(np.asarray(sys.variation_rule.rows(q, v), dtype=float))
    else:
        A = constraint_jacobians(sys, q, v)[1]
    if A.shape != (m, n):
        raise ValueError(f"annihilator has shape {A.shape}, expected {(m, n)}")
    if numerical_rank(A) < m:
        raise RegularityError(f"variation annihilator is rank deficient at q={q}, v={v}")
    return A


def null_space(A, n=None):
    """Orthonormal basis (columns) of ker A; the full space when A has no rows."""
    if A.shape[0] == 0:
        return np.eye(n if n is not None else A.shape[1])
    _, s, Vt = np.linalg.svd(A)
    rank = int(np.sum(s > RANK_RTOL * s[0])) if s.size and s[0] > 0 else 0
    return Vt[rank:].T


def variation_basis(sys: ContinuousSystem, q, v) -> np.ndarray:
    """Orthonormal basis (columns) of the fiber E_(q,v)."""
    return null_space(variation_annihilator(sys, q, v), sys.dim_q)


def generator_lift(sys: ContinuousSystem, gen_index: int, q, v) -> GeneratorLift:
    """Tangent lift (A q + b, A v) of a registered affine generator."""
    if not 0 <= gen_index < len(sys.generators):
        raise IndexError(f"generator index {gen_index} out of range for {len(sys.generators)} generators")
    q, v = _check_dims(sys, q, v)
    gen = sys.generators[gen_index]
    return GeneratorLift(base=gen.A @ q + gen.b, fiber=gen.A @ v)


# ----------------------------------------------------------------------------
# benchmark systems

def _translation(n, i, label):
    b = np.zeros(n)
    b[i] = 1.0
    return Generator(A=np.zeros((n, n)), b=b, label=label)


def _rotation(n, i, j, label, b=None):
    A = np.zeros((n, n))
    A[i, j], A[j, i] = -1.0, 1.0
    return Generator(A=A, b=np.zeros(n) if b is None else b, label=label)


def _positive(params, key, default):
    val = float(params.get(key, default))
    if not np.isfinite(val) or val <= 0:
        raise ValueError(f"parameter {key!r} must be positive, got {val}")
    return val


def _dimension(params, default):
    n = params.get("n", default)
    if int(n) != n or int(n) < 1:
        raise ValueError(f"parameter 'n' must be a positive integer, got {n}")
    return int(n)


def _free_particle(p):
    n, mass = _dimension(p, 1), _positive(p, "mass", 1.0)
    H = _kinetic_hessian(n, mass)
    gens = [_translation(n, i, f"translation_{i}") for i in range(n)]
    return ContinuousSystem(
        dim_q=n,
        lagrangian=lambda q, v: 0.5 * mass * v @ v,
        lagrangian_gradient=lambda q, v: (np.zeros(n), mass * v),
        lagrangian_hessian=lambda q, v: H.copy(),
        generators=gens,
        name="free_particle",
        params={"n": n, "mass": mass},
    )


def _harmonic(p):
    n, mass, k = _dimension(p, 1), _positive(p, "mass", 1.0), _positive(p, "stiffness", 1.0)
    H = _kinetic_hessian(n, mass)
    H[:n, :n] = -k * np.eye(n)
    gens = [_rotation(n, i, j, f"rotation_{i}{j}") for i in range(n) for j in range(i + 1, n)]
    return ContinuousSystem(
        dim_q=n,
        lagrangian=lambda q, v: 0.5 * mass * v @ v - 0.5 * k * q @ q,
        lagrangian_gradient=lambda q, v: (-k * q, mass * v),
        lagrangian_hessian=lambda q, v: H.copy(),
        generators=gens,
        name="harmonic",
        params={"n": n, "mass": mass, "stiffness": k},
    )


def _pendulum(p):
    mass, length, grav = _positive(p, "mass", 1.0), _positive(p, "length", 1.0), _positive(p, "gravity", 1.0)
    inertia, mgl = mass * length ** 2, mass * grav * length

    def hess(q, v):
        return np.array([[-mgl * np.cos(q[0]), 0.0], [0.0, inertia]])

    return ContinuousSystem(
        dim_q=1,
        lagrangian=lambda q, v: 0.5 * inertia * v[0] ** 2 + mgl * np.cos(q[0]),
        lagrangian_gradient=lambda q, v: (np.array([-mgl * np.sin(q[0])]), inertia * v),
        lagrangian_hessian=hess,
        name="pendulum",
        params={"mass": mass, "length": length, "gravity": grav},
    )


def _kinetic_hessian(n, mass):
    zero = np.zeros((n, n))
    return np.block([[zero, zero], [zero, mass * np.eye(n)]])


def _nonholonomic_particle(p):
    mass = _positive(p, "mass", 1.0)
    H = _kinetic_hessian(3, mass)
    return ContinuousSystem(
        dim_q=3,
        lagrangian=lambda q, v: 0.5 * mass * v @ v,
        lagrangian_gradient=lambda q, v: (np.zeros(3), mass * v),
        lagrangian_hessian=lambda q, v: H.copy(),
        constraint=lambda q, v: np.array([v[2] - q[1] * v[0]]),
        constraint_jacobians=lambda q, v: (
            np.array([[0.0, -v[0], 0.0]]),
            np.array([[-q[1], 0.0, 1.0]]),
        ),
        generators=[_translation(3, 0, "translation_x"), _translation(3, 2, "translation_z")],
        name="nonholonomic_particle",
        params={"mass": mass},
        dim_g=1,
    )


def _planar_particle(p):
    # integrable distribution span{d/dx, d/dy} in R^3
    mass = _positive(p, "mass", 1.0)
    H = _kinetic_hessian(3, mass)
    return ContinuousSystem(
        dim_q=3,
        lagrangian=lambda q, v: 0.5 * mass * v @ v,
        lagrangian_gradient=lambda q, v: (np.zeros(3), mass * v),
        lagrangian_hessian=lambda q, v: H.copy(),
        constraint=lambda q, v: np.array([v[2]]),
        constraint_jacobians=lambda q, v: (np.zeros((1, 3)), np.array([[0.0, 0.0, 1.0]])),
        generators=[
            _translation(3, 0, "translation_x"),
            _translation(3, 1, "translation_y"),
            _rotation(3, 0, 1, "rotation_z"),
        ],
        name="planar_particle",
        params={"mass": mass},
        dim_g=1,
    )


def _chaplygin_sleigh(p):
    m, inertia = _positive(p, "mass", 1.0), _positive(p, "inertia", 1.0)
    a = float(p.get("offset", 0.5))
    if not np.isfinite(a):
        raise ValueError("parameter 'offset' must be finite")

    def mass_matrix(th):
        s, c = np.sin(th), np.cos(th)
        return np.array([
            [m, 0.0, -m * a * s],
            [0.0, m, m * a * c],
            [-m * a * s, m * a * c, inertia + m * a * a],
        ])

    def dmass(th):
        s, c = np.sin(th), np.cos(th)
        return np.array([[0.0, 0.0, -m * a * c], [0.0, 0.0, -m * a * s], [-m * a * c, -m * a * s, 0.0]])

    def d2mass(th):
        s, c = np.sin(th), np.cos(th)
        return np.array([[0.0, 0.0, m * a * s], [0.0, 0.0, -m * a * c], [m * a * s, -m * a * c, 0.0]])

    def lag(q, v):
        return 0.5 * v @ mass_matrix(q[2]) @ v

    def grad(q, v):
        return np.array([0.0, 0.0, 0.5 * v @ dmass(q[2]) @ v]), mass_matrix(q[2]) @ v

    def hess(q, v):
        H = np.zeros((6, 6))
        H[2, 2] = 0.5 * v @ d2mass(q[2]) @ v
        col = dmass(q[2]) @ v
        H[3:, 2] = col
        H[2, 3:] = col
        H[3:, 3:] = mass_matrix(q[2])
        return H

    def g(q, v):
        return np.array([-v[0] * np.sin(q[2]) + v[1] * np.cos(q[2])])

    def gjac(q, v):
        s, c = np.sin(q[2]), np.cos(q[2])
        return np.array([[0.0, 0.0, -v[0] * c - v[1] * s]]), np.array([[-s, c, 0.0]])

    return ContinuousSystem(
        dim_q=3,
        lagrangian=lag,
        lagrangian_gradient=grad,
        lagrangian_hessian=hess,
        constraint=g,
        constraint_jacobians=gjac,
        generators=[
            _translation(3, 0, "translation_x"),
            _translation(3, 1, "translation_y"),
            _rotation(3, 0, 1, "rotation", b=np.array([0.0, 0.0, 1.0])),
        ],
        name="chaplygin_sleigh",
        params={"mass": m, "inertia": inertia, "offset": a},
        dim_g=1,
    )


def _degenerate(p):
    # L = v is affine in the velocity: every Legendre transform is constant
    n = _dimension(p, 1)
    zero = np.zeros((2 * n, 2 * n))
    return ContinuousSystem(
        dim_q=n,
        lagrangian=lambda q, v: float(np.sum(v)),
        lagrangian_gradient=lambda q, v: (np.zeros(n), np.ones(n)),
        lagrangian_hessian=lambda q, v: zero,
        generators=[_translation(n, i, f"translation_{i}") for i in range(n)],
        name="degenerate",
        params={"n": n},
    )


_BUILTINS = {
    "free_particle": (_free_particle, {"n", "mass"}),
    "harmonic": (_harmonic, {"n", "mass", "stiffness"}),
    "pendulum": (_pendulum, {"mass", "length", "gravity"}),
    "nonholonomic_particle": (_nonholonomic_particle, {"mass"}),
    "chaplygin_sleigh": (_chaplygin_sleigh, {"mass", "inertia", "offset"}),
    "planar_particle": (_planar_particle, {"mass"}),
    "degenerate": (_degenerate, {"n"}),
}

BUILTIN_NAMES: Sequence[str] = tuple(_BUILTINS)


def builtin_system(name: str, params: Optional[dict] = None) -> ContinuousSystem:
    """Construct one of the registered benchmark systems.

    >>> builtin_system("free_particle", {"n": 2}).generators[1].b
    array([0., 1.])
    """
    if name not in _BUILTINS:
        raise KeyError(f"unknown system {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    factory, allowed = _BUILTINS[name]
    params = dict(params or {})
    unknown = set(params) - allowed
    if unknown:
        raise ValueError(f"unknown parameter(s) for {name}: {', '.join(sorted(unknown))}")
    return factory(params)
