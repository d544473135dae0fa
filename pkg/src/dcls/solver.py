"""Evolution of a discrete constrained Lagrangian system.

A pair (v, w) of states is a solution pair when

    d-(w) = d+(v),    g_d(w) = 0,    F+L(v) - F-L(w) = mu(v)^T lambda,

the last block saying that delta sigma_d(v, w) annihilates the variations
E_d(v).  Sequences are evolutions exactly when every consecutive pair is a
solution pair, so trajectories are built by iterating the pair solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import _fd
from . import discrete_form as df
from . import segments as seg
from . import systems as sy
from .errors import ConvergenceError, DCLSError, DomainError, RegularityError

# smallest admissible sigma_min / sigma_max of the Newton matrix
NEWTON_RCOND = 1e-13
NONDEGENERATE_RTOL = 1e-6


@dataclass(frozen=True)
class StepConfig:
    tol: float = 1e-12
    max_iter: int = 50
    jacobian: str = "auto"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.jacobian not in ("auto", "fd"):
            raise ValueError("jacobian must be 'auto' or 'fd'")


@dataclass
class SolutionPair:
    v_state: tuple
    w_state: tuple
    multipliers: np.ndarray
    residual: float
    iterations: int
    history: List[float] = field(default_factory=list)


@dataclass
class Trajectory:
    """States v_0..v_N, multipliers of each step and configurations m_0..m_{N+1}."""

    Q: np.ndarray
    V: np.ndarray
    multipliers: np.ndarray
    iterations: np.ndarray
    residuals: np.ndarray
    configurations: np.ndarray
    failed_at: Optional[int] = None
    error: Optional[str] = None

    @property
    def steps(self):
        return len(self.Q) - 1

    @property
    def ok(self):
        return self.failed_at is None

    def state(self, k):
        return self.Q[k], self.V[k]

    def pairs(self):
        for k in range(self.steps):
            yield self.state(k), self.state(k + 1), self.multipliers[k]


def _as_state(state):
    q, v = state
    return np.asarray(q, dtype=float).reshape(-1), np.asarray(v, dtype=float).reshape(-1)


def _unpack(d, unknowns):
    if isinstance(unknowns, (tuple, list)) and len(unknowns) == 3:
        qt, vt, lam = unknowns
        return (np.asarray(qt, float).reshape(-1), np.asarray(vt, float).reshape(-1),
                np.asarray(lam, float).reshape(-1) if lam is not None else np.zeros(0))
    x = np.asarray(unknowns, dtype=float)
    n = d.n
    return x[:n], x[n:2 * n], x[2 * n:]


class _Anchor:
    """Quantities that depend only on the given state v."""

    def __init__(self, d, q, v):
        self.mplus = seg.boundary_plus(d.scheme, q, v)
        self.Fplus = df.legendre_plus(d, q, v)
        self.mu = df.force_annihilator(d, q, v)


def _residual(d, anchor, qt, vt, lam):
    r1 = seg.boundary_minus(d.scheme, qt, vt) - anchor.mplus
    r2 = df.discrete_constraint(d, qt, vt)
    r3 = anchor.Fplus - df.legendre_minus(d, qt, vt)
    if d.m:
        r3 = r3 - anchor.mu.T @ lam
    return np.concatenate([r1, r2, r3])


def residual(d: df.DiscreteSystem, v_state, unknowns) -> np.ndarray:
    """Residual blocks (adjacency, constraint, Legendre balance) of length 2n + m."""
    q, v = _as_state(v_state)
    qt, vt, lam = _unpack(d, unknowns)
    if lam.size != d.m:
        raise ValueError(f"expected {d.m} multipliers, got {lam.size}")
    return _residual(d, _Anchor(d, q, v), qt, vt, lam)


def _newton_matrix(d, anchor, qt, vt, cfg):
    n, m = d.n, d.m
    K = np.zeros((2 * n + m, 2 * n + m))
    if cfg.jacobian == "fd":
        def f(x):
            return _residual(d, anchor, x[:n], x[n:2 * n], np.zeros(m))
        K[:, :2 * n] = _fd.jacobian(f, np.concatenate([qt, vt]), rel=_fd.STEP_NESTED)
    else:
        Jm, _ = seg.boundary_jacobians(d.scheme, qt, vt)
        K[:n, :2 * n] = Jm
        K[n:n + m, :2 * n] = df.discrete_constraint_jacobian(d, qt, vt)
        K[n + m:, :2 * n] = -df.legendre_minus_jacobian(d, qt, vt)
    if m:
        K[n + m:, 2 * n:] = -anchor.mu.T
    return K


def initial_guess(d: df.DiscreteSystem, v_state):
    """q~ = d+(v) - alpha- v, v~ = v, lambda = 0: exact for the free particle."""
    q, v = _as_state(v_state)
    mp = seg.boundary_plus(d.scheme, q, v)
    return mp - d.scheme.alpha_minus * v, v.copy(), np.zeros(d.m)


def step(d: df.DiscreteSystem, v_state, cfg: Optional[StepConfig] = None, guess=None) -> SolutionPair:
    """One application of the evolution map F by Newton's method on (q~, v~, lambda)."""
    cfg = cfg or StepConfig()
    q, v = _as_state(v_state)
    if d.m and not df.is_feasible(d, q, v):
        raise DomainError(f"state violates the discrete constraint by {np.max(np.abs(df.discrete_constraint(d, q, v))):.3e}")
    anchor = _Anchor(d, q, v)
    n = d.n
    qt, vt, lam = guess if guess is not None else initial_guess(d, (q, v))
    x = np.concatenate([qt, vt, lam])
    history = []
    for it in range(cfg.max_iter + 1):
        R = _residual(d, anchor, x[:n], x[n:2 * n], x[2 * n:])
        r = float(np.max(np.abs(R)))
        history.append(r)
        if not np.isfinite(r):
            raise ConvergenceError("non-finite residual in Newton iteration", history)
        if r <= cfg.tol and it > 0:
            return SolutionPair((q, v), (x[:n].copy(), x[n:2 * n].copy()), x[2 * n:].copy(), r, it, history)
        if it == cfg.max_iter:
            break
        K = _newton_matrix(d, anchor, x[:n], x[n:2 * n], cfg)
        if it == 0:
            # an exact initial guess is still checked: the solution must be locally unique
            sv = np.linalg.svd(K, compute_uv=False)
            if sv[-1] <= NEWTON_RCOND * sv[0]:
                raise RegularityError(
                    "Newton matrix of the discrete Lagrange-d'Alembert equations is singular: "
                    f"sigma_min/sigma_max = {sv[-1] / sv[0]:.3e}; the bilinear form "
                    "d+-sigma_d on E_d x T d+(vert- cap T D_d) is degenerate"
                )
            if r <= cfg.tol:
                return SolutionPair((q, v), (x[:n].copy(), x[n:2 * n].copy()), x[2 * n:].copy(), r, 0, history)
        try:
            x = x + np.linalg.solve(K, -R)
        except np.linalg.LinAlgError as exc:
            raise RegularityError(f"singular Newton matrix: {exc}") from exc
    raise ConvergenceError(f"Newton did not converge in {cfg.max_iter} iterations (residual {history[-1]:.3e})", history)


def evolve(d: df.DiscreteSystem, v0_state, N: int, cfg: Optional[StepConfig] = None) -> Trajectory:
    """Iterate the evolution map N times; on failure the partial trajectory is returned."""
    if N < 1:
        raise ValueError("need at least one step")
    cfg = cfg or StepConfig()
    q0, v0 = _as_state(v0_state)
    n, m = d.n, d.m
    Q = np.empty((N + 1, n))
    V = np.empty((N + 1, n))
    lams = np.zeros((N, m))
    iters = np.zeros(N, dtype=int)
    res = np.zeros(N)
    Q[0], V[0] = q0, v0
    failed, message = None, None
    k = 0
    for k in range(N):
        try:
            pair = step(d, (Q[k], V[k]), cfg)
        except DCLSError as exc:
            failed, message = k, f"{type(exc).__name__}: {exc}"
            break
        Q[k + 1], V[k + 1] = pair.w_state
        lams[k] = pair.multipliers
        iters[k], res[k] = pair.iterations, pair.residual
    if failed is not None:
        Q, V, lams, iters, res = Q[:failed + 1], V[:failed + 1], lams[:failed], iters[:failed], res[:failed]
    configs = np.vstack([seg.boundary_minus(d.scheme, Q[0], V[0])[None, :],
                         np.array([seg.boundary_plus(d.scheme, Q[j], V[j]) for j in range(len(Q))])])
    return Trajectory(Q, V, lams, iters, res, configs, failed, message)


def adjacent_state(d: df.DiscreteSystem, v_state, w_fiber):
    """The state with velocity w_fiber whose backward point is d+(v)."""
    q, v = _as_state(v_state)
    w_fiber = np.asarray(w_fiber, dtype=float)
    mp = seg.boundary_plus(d.scheme, q, v)
    if d.scheme.is_linear:
        return mp - d.scheme.alpha_minus * w_fiber, w_fiber
    qt = mp - d.scheme.alpha_minus * w_fiber
    for _ in range(50):
        r = seg.boundary_minus(d.scheme, qt, w_fiber) - mp
        if np.max(np.abs(r)) <= 1e-14 * max(1.0, np.max(np.abs(mp))):
            break
        Jm, _ = seg.boundary_jacobians(d.scheme, qt, w_fiber)
        qt = qt - np.linalg.solve(Jm[:, :d.n], r)
    return qt, w_fiber


def newton_order(history, floor=1e-14):
    """Observed convergence order from the last three iterates above ``floor``.

    With three iterates the slope of log r_{k+1} against log r_k is returned.
    When Newton lands below the floor in one step (a linear residual) only one
    pair exists and the estimate log r_1 / log r_0 is used, with r_1 clamped
    to the floor; this is the q-order for unit asymptotic constant.
    """
    r = [x for x in history if x > 0]
    above = [x for x in r if x > floor]
    if len(above) >= 3:
        lr = np.log(above[-3:])
        return float((lr[2] - lr[1]) / (lr[1] - lr[0]))
    if len(r) >= 2 and r[0] < 1:
        return float(np.log(max(r[1], floor)) / np.log(r[0]))
    if len(above) == 2 and len(r) >= 3:
        lr = np.log([above[0], above[1], max(r[2], floor)])
        return float((lr[2] - lr[1]) / (lr[1] - lr[0]))
    return float("nan")


# ----------------------------------------------------------------------------
# regularity and skew-critical nondegeneracy

@dataclass
class RegularityReport:
    matrix: np.ndarray
    singular_values: np.ndarray
    condition: float
    regular: bool

    @property
    def sigma_min(self):
        return float(self.singular_values[-1]) if self.singular_values.size else 0.0


def _summarize(M):
    if M.size == 0:
        return np.zeros(0), np.inf, False
    sv = np.linalg.svd(M, compute_uv=False)
    ok = bool(sv[-1] > NONDEGENERATE_RTOL * max(1.0, sv[0]))
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    return sv, cond, ok


def _constrained_plus_directions(d, w_state):
    """Basis (columns) of T d+(vert-_w cap T_w D_d)."""
    q, v = w_state
    P = seg.frame(d.scheme, q, v).lift_plus_matrix
    G = df.discrete_constraint_jacobian(d, q, v)
    return sy.null_space(G @ P, d.n)


def regularity_matrix(d: df.DiscreteSystem, v_state, w_state) -> RegularityReport:
    """Entries d+-sigma_d(w)(dq_i, dq~_j) paired over E_d(v) and the constrained plus directions."""
    v_state, w_state = _as_state(v_state), _as_state(w_state)
    seg.check_adjacent(d.scheme, v_state, w_state)
    E = df.variation_space(d, *v_state)
    Rb = _constrained_plus_directions(d, w_state)
    if E.shape[1] != Rb.shape[1]:
        raise RegularityError(
            f"dimension balance fails: fdim E_d = {E.shape[1]}, constrained fiber = {Rb.shape[1]}"
        )
    n = d.n
    qw, vw = w_state
    z = np.concatenate([qw, vw])

    def f(x):
        xq, xv = x[:n], x[n:]
        return df.sigma_d(d, xq, xv) @ seg.frame(d.scheme, xq, xv).lift_minus_matrix @ E

    M = np.empty((Rb.shape[1], E.shape[1]))
    for j in range(Rb.shape[1]):
        u = seg.lift_plus(d.scheme, qw, vw, Rb[:, j])
        M[j] = _fd.directional(f, z, u)
    sv, cond, ok = _summarize(M)
    return RegularityReport(M, sv, cond, ok)


@dataclass
class SkewHessianReport:
    matrix: np.ndarray
    singular_values: np.ndarray
    nondegenerate: bool


def skew_hessian(d: df.DiscreteSystem, pair) -> SkewHessianReport:
    """The skew Hessian of (Sigma_d, W_d, g^_d) at a solution pair, on orthonormal bases.

    Rows run over ker T g^_d = {(0, dw): dw in vert- cap T D_d}, columns over
    W_d = {(lift_plus(v, dq), lift_minus(w, dq)): dq in E_d(v)}.  Each column
    field is extended by keeping dq constant, and the entry is the derivative
    of Sigma_d . W along the row direction on V x V.
    """
    if isinstance(pair, SolutionPair):
        v_state, w_state = pair.v_state, pair.w_state
    else:
        v_state, w_state = pair
    v_state, w_state = _as_state(v_state), _as_state(w_state)
    n = d.n
    qv, vv = v_state
    qw, vw = w_state
    E = df.variation_space(d, qv, vv)
    Pv = seg.frame(d.scheme, qv, vv).lift_plus_matrix
    Mw = seg.frame(d.scheme, qw, vw).lift_minus_matrix
    W0 = np.vstack([Pv @ E, Mw @ E])
    _, Rw = np.linalg.qr(W0)
    coeff = E @ np.linalg.inv(Rw)

    Rb = _constrained_plus_directions(d, w_state)
    K0 = np.vstack([np.zeros((2 * n, Rb.shape[1])), seg.frame(d.scheme, qw, vw).lift_plus_matrix @ Rb])
    Kq, _ = np.linalg.qr(K0)

    x0 = np.concatenate([qv, vv, qw, vw])

    def paired(x):
        a, b = x[:2 * n], x[2 * n:]
        fa = seg.frame(d.scheme, a[:n], a[n:])
        fb = seg.frame(d.scheme, b[:n], b[n:])
        return (df.sigma_d(d, a[:n], a[n:]) @ fa.lift_plus_matrix @ coeff
                + df.sigma_d(d, b[:n], b[n:]) @ fb.lift_minus_matrix @ coeff)

    S = np.array([_fd.directional(paired, x0, Kq[:, j]) for j in range(Kq.shape[1])])
    if S.shape[0] != S.shape[1]:
        return SkewHessianReport(S, np.zeros(0), False)
    sv, _, ok = _summarize(S)
    return SkewHessianReport(S, sv, ok)
