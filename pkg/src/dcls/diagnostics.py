"""Numerical certificates for the structural properties of computed evolutions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.linalg import qr, subspace_angles

from . import _fd
from . import discrete_form as df
from . import reference as ref
from . import segments as seg
from . import solver as so
from . import systems as sy
from .errors import DCLSError, RegularityError

PASS, FAIL, NOT_APPLICABLE = "pass", "fail", "not_applicable"


def energy(d: df.DiscreteSystem, q, v) -> float:
    """Continuous energy <dL/dv, v> - L at the state's anchor (diagnostic only)."""
    _, gv = sy.lagrangian_gradient(d.system, q, v)
    return float(gv @ np.asarray(v, float) - sy.eval_lagrangian(d.system, q, v))


@dataclass
class ConservationSeries:
    energy: np.ndarray
    momenta: np.ndarray
    constraint: np.ndarray
    legendre_mismatch: np.ndarray


def conservation_series(d: df.DiscreteSystem, traj: so.Trajectory, generators: Sequence[int] = ()) -> ConservationSeries:
    K = len(traj.Q)
    E = np.array([energy(d, *traj.state(k)) for k in range(K)])
    J = np.array([[df.momentum(d, i, *traj.state(k)) for i in generators] for k in range(K)]).reshape(K, len(generators))
    G = np.array([df.discrete_constraint(d, *traj.state(k)) for k in range(K)]).reshape(K, d.m)
    mismatch = np.array([_legendre_gap(d, v, w, lam) for v, w, lam in traj.pairs()])
    return ConservationSeries(E, J, G, mismatch)


def _legendre_gap(d, v_state, w_state, lam):
    gap = df.legendre_plus(d, *v_state) - df.legendre_minus(d, *w_state)
    if d.m:
        gap = gap - df.force_annihilator(d, *v_state).T @ lam
    return float(np.max(np.abs(gap)))


def legendre_match_series(d: df.DiscreteSystem, traj: so.Trajectory) -> float:
    """max_k |F+L(v_k) - F-L(v_{k+1}) - mu(v_k)^T lambda_k|."""
    gaps = [_legendre_gap(d, v, w, lam) for v, w, lam in traj.pairs()]
    return max(gaps) if gaps else 0.0


# ----------------------------------------------------------------------------
# momentum

@dataclass
class MomentumCheck:
    residual: float
    status: str
    detail: str = ""


def _pair_states(pair):
    if isinstance(pair, so.SolutionPair):
        return pair.v_state, pair.w_state
    return pair[0], pair[1]


def generator_admissible(d: df.DiscreteSystem, gen_index, q, v, tol=1e-9) -> bool:
    """Whether xi_Q(d+(v)) lies in E_d(v)."""
    if d.m == 0:
        return True
    mp = seg.boundary_plus(d.scheme, q, v)
    xi = d.system.generators[gen_index].base(mp)
    mu = df.force_annihilator(d, q, v)
    return bool(np.max(np.abs(mu @ xi)) <= tol * max(1.0, np.max(np.abs(xi))))


def symmetry_defect(d: df.DiscreteSystem, gen_index, q, v) -> float:
    """|sigma_d(v) . xi_V(v)|, which must vanish for a symmetric system."""
    return abs(float(df.sigma_d(d, q, v) @ df.generator_vector(d, gen_index, q, v)))


def momentum_theorem_check(d: df.DiscreteSystem, pair, gen_index: int, newton_tol=1e-12, tol=1e-9) -> MomentumCheck:
    """|J_xi(F(v)) - J_xi(v)| when xi d+(v) is an admissible variation."""
    v_state, w_state = _pair_states(pair)
    if not generator_admissible(d, gen_index, *v_state, tol=tol):
        return MomentumCheck(float("nan"), NOT_APPLICABLE, "generator is not an admissible variation at d+(v)")
    sym = max(symmetry_defect(d, gen_index, *v_state), symmetry_defect(d, gen_index, *w_state))
    if sym > 1e-10 * max(1.0, float(np.max(np.abs(df.sigma_d(d, *v_state))))):
        return MomentumCheck(float("nan"), NOT_APPLICABLE, f"sigma_d(xi v) = {sym:.3e}: system is not symmetric")
    r = abs(df.momentum(d, gen_index, *w_state) - df.momentum(d, gen_index, *v_state))
    return MomentumCheck(r, PASS if r <= 10 * newton_tol else FAIL)


def admissible_generator(d: df.DiscreteSystem, base_coeffs) -> Callable:
    """State -> generator coefficients closest to ``base_coeffs`` with xi d+(v) in E_d(v)."""
    c0 = np.asarray(base_coeffs, dtype=float)
    gens = d.system.generators
    if c0.size != len(gens):
        raise ValueError(f"expected {len(gens)} coefficients, got {c0.size}")

    def xi(q, v):
        if d.m == 0:
            return c0.copy()
        mp = seg.boundary_plus(d.scheme, q, v)
        G = df.force_annihilator(d, q, v) @ np.column_stack([g.base(mp) for g in gens])
        c = c0 - np.linalg.lstsq(G, G @ c0, rcond=None)[0]
        if np.max(np.abs(c)) <= 1e-12 * max(1.0, np.max(np.abs(c0))):
            raise RegularityError("no admissible generator near the requested one")
        return c

    return xi


def nonholonomic_momentum_residual(d: df.DiscreteSystem, pair, xi_field: Callable) -> float:
    """|[J_{xi(w)}(w) - J_{xi(v)}(v)] - <J(w), xi(w) - xi(v)>| for the pair (v, w = F(v)).

    Applying the momentum theorem with the admissible xi(v) gives
    J_{xi(v)}(w) = J_{xi(v)}(v), so the momentum change is the momentum at w
    paired with the change of the generator.
    """
    v_state, w_state = _pair_states(pair)
    cv = xi_field(*v_state)
    cw = xi_field(*w_state)
    lhs = df.momentum_combination(d, cw, *w_state) - df.momentum_combination(d, cv, *v_state)
    Jw = np.array([df.momentum(d, i, *w_state) for i in range(len(cv))])
    return abs(lhs - float(Jw @ (cw - cv)))


# ----------------------------------------------------------------------------
# K-distributions

@dataclass
class KBasis:
    minus: np.ndarray
    zero: np.ndarray
    plus: np.ndarray


def k_bases(d: df.DiscreteSystem, q, v) -> KBasis:
    """Bases (columns) of K-, K0 and K+ at a state; each has 2(n - m) vectors."""
    q = np.asarray(q, float)
    v = np.asarray(v, float)
    n, m = d.n, d.m
    fr = seg.frame(d.scheme, q, v)
    if m == 0:
        I = np.eye(2 * n)
        return KBasis(I, I.copy(), I.copy())
    G = df.discrete_constraint_jacobian(d, q, v)
    mu_m = df.annihilator_at(d, seg.boundary_minus(d.scheme, q, v), v)
    mu_p = df.annihilator_at(d, seg.boundary_plus(d.scheme, q, v), v)
    Km = sy.null_space(np.vstack([G, mu_m @ fr.Jm]), 2 * n)
    K0 = sy.null_space(np.vstack([mu_m @ fr.Jm, mu_p @ fr.Jp]), 2 * n)
    Kp = sy.null_space(np.vstack([G, mu_p @ fr.Jp]), 2 * n)
    r = n - m
    for label, K in (("K-", Km), ("K0", K0), ("K+", Kp)):
        if K.shape[1] != 2 * r:
            raise RegularityError(f"{label} has fiber dimension {K.shape[1]}, expected {2 * r}")
    return KBasis(Km, K0, Kp)


def max_subspace_angle(A, B) -> float:
    return float(np.max(subspace_angles(A, B))) if A.size and B.size else 0.0


# ----------------------------------------------------------------------------
# symplecticity

@dataclass(frozen=True)
class SymplecticConfig:
    pairs: int = 10
    seed: int = 0
    fd_step: float = 1e-6
    newton_tol: float = 1e-13


@dataclass
class SymplecticResult:
    max_defect: float
    defects: np.ndarray
    subspace: str


def flow_tangent(d: df.DiscreteSystem, q, v, directions, fd_step=1e-6, newton_tol=1e-13):
    """Columns TF(u) for each column u of ``directions``, by central differences of the step.

    Perturbed states are projected back onto D_d along the velocity fiber, so
    directions transverse to T D_d are differentiated through that projection.
    """
    z = np.concatenate([np.asarray(q, float), np.asarray(v, float)])
    n = d.n
    cfg = so.StepConfig(tol=newton_tol)

    def F(x):
        xv = df.project_velocity(d, x[:n], x[n:]) if d.m else x[n:]
        w = so.step(d, (x[:n], xv), cfg).w_state
        return np.concatenate(w)

    cols = []
    for j in range(directions.shape[1]):
        u = directions[:, j]
        eps = fd_step * max(1.0, np.max(np.abs(z))) / np.max(np.abs(u))
        cols.append((F(z + eps * u) - F(z - eps * u)) / (2 * eps))
    return np.column_stack(cols)


def symplectic_check(d: df.DiscreteSystem, q, v, cfg: Optional[SymplecticConfig] = None) -> SymplecticResult:
    """max |omega(F(v))(TF a, TF b) - omega(v)(a, b)| / max(1, |omega(v)(a, b)|) over random a, b in K0."""
    cfg = cfg or SymplecticConfig()
    q = np.asarray(q, float)
    v = np.asarray(v, float)
    rng = np.random.default_rng(cfg.seed)
    B = k_bases(d, q, v).zero
    TB = flow_tangent(d, q, v, B, cfg.fd_step, cfg.newton_tol)
    w = so.step(d, (q, v), so.StepConfig(tol=cfg.newton_tol)).w_state
    W0 = omega_on(d, q, v)
    W1 = omega_on(d, *w)
    defects = []
    for _ in range(cfg.pairs):
        a, b = rng.standard_normal(B.shape[1]), rng.standard_normal(B.shape[1])
        before = (B @ a) @ W0 @ (B @ b)
        after = (TB @ a) @ W1 @ (TB @ b)
        defects.append(abs(after - before) / max(1.0, abs(before)))
    defects = np.array(defects)
    return SymplecticResult(float(defects.max()), defects, "full" if d.m == 0 else "K0")


def omega_on(d, q, v):
    return df.omega_matrix(d, q, v, "plus")


# ----------------------------------------------------------------------------
# involutivity

@dataclass
class InvolutivityResult:
    involutive: bool
    max_defect: float
    brackets: Dict[tuple, np.ndarray] = field(default_factory=dict)


def lie_bracket(X: Callable, Y: Callable, q) -> np.ndarray:
    """[X, Y](q) = DY(q) X(q) - DX(q) Y(q) by central differences."""
    q = np.asarray(q, float)
    return (_fd.directional(Y, q, X(q), rel=_fd.STEP_NESTED)
            - _fd.directional(X, q, Y(q), rel=_fd.STEP_NESTED))


def involutivity_check(fields: Sequence[Callable], q, tol=1e-8) -> InvolutivityResult:
    """Distance of every pairwise bracket from span{X_k(q)}."""
    q = np.asarray(q, float)
    span = np.column_stack([np.asarray(X(q), float) for X in fields])
    brackets, worst = {}, 0.0
    for i in range(len(fields)):
        for j in range(i + 1, len(fields)):
            br = lie_bracket(fields[i], fields[j], q)
            coef = np.linalg.lstsq(span, br, rcond=None)[0]
            worst = max(worst, float(np.linalg.norm(br - span @ coef)))
            brackets[(i, j)] = br
    return InvolutivityResult(worst <= tol, worst, brackets)


def distribution_fields(system: sy.ContinuousSystem, q_ref, v_ref=None) -> List[Callable]:
    """Smooth local basis fields of the configuration distribution ker A(q).

    The dependent coordinates are fixed by pivoted QR at q_ref, and each
    remaining coordinate direction is completed so that A(q) X_j(q) = 0.
    Meaningful for constraints linear in the velocity.
    """
    n, m = system.dim_q, system.dim_g
    if m == 0:
        return [(lambda q, i=i: np.eye(n)[i]) for i in range(n)]
    v_ref = np.zeros(n) if v_ref is None else np.asarray(v_ref, float)
    A0 = sy.variation_annihilator(system, q_ref, v_ref)
    _, _, piv = qr(A0, pivoting=True)
    dep, free = list(piv[:m]), sorted(piv[m:])

    def make(j):
        def X(q):
            A = sy.variation_annihilator(system, q, v_ref)
            out = np.zeros(n)
            out[j] = 1.0
            out[dep] = -np.linalg.solve(A[:, dep], A[:, j])
            return out
        return X

    return [make(j) for j in free]


# ----------------------------------------------------------------------------
# convergence

@dataclass
class ConvergenceResult:
    hs: np.ndarray
    errors: np.ndarray
    slope: float
    exact: bool


def convergence_order(d: df.DiscreteSystem, q0, v0, T, hs, reference=None, cfg=None, exact_tol=1e-12) -> ConvergenceResult:
    """Endpoint errors |q_N - q_ref(T)| over step sizes and their log-log slope.

    The state's anchor configuration at step N = T/h is compared with the
    continuous solution at T.  ``reference`` may be a precomputed q_ref(T).
    """
    hs = np.asarray(list(hs), dtype=float)
    if hs.size == 0:
        raise ValueError("need at least one step size")
    if reference is None:
        _, Qr, _ = ref.reference_solution(d.system, q0, v0, T)
        reference = Qr[-1]
    errors = []
    for h in hs:
        N = int(round(T / h))
        if N < 1 or abs(N * h - T) > 1e-9 * T:
            raise ValueError(f"step {h} does not divide T={T}")
        traj = so.evolve(d.with_step(h), (q0, v0), N, cfg)
        if not traj.ok:
            raise DCLSError(f"evolution failed for h={h}: {traj.error}")
        errors.append(float(np.max(np.abs(traj.Q[-1] - reference))))
    errors = np.array(errors)
    exact = bool(np.all(errors <= exact_tol))
    if exact or hs.size < 2:
        slope = float("nan")
    else:
        slope = float(np.polyfit(np.log(hs), np.log(errors), 1)[0])
    return ConvergenceResult(hs, errors, slope, exact)
