import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from dcls import reference as ref
from dcls import segments as seg
from dcls import systems as sy
from dcls.errors import AdjacencyError, FirstOrderError

H = 0.1


def linear(gamma=0.5, h=H):
    return seg.linear_scheme(h, gamma)


def zero_flow(gamma=0.5, method="rk4"):
    return seg.SegmentScheme(seg.Bias(gamma), seg.FlowOfField(seg.zero_field, method=method), H)


def pendulum_flow(gamma=0.5):
    return seg.SegmentScheme(seg.Bias(gamma), ref.lagrangian_flow(sy.builtin_system("pendulum")), H)


def test_bias_split():
    b = seg.Bias(0.25)
    assert b.alpha_minus(0.4) == pytest.approx(-0.3)
    assert b.alpha_plus(0.4) - b.alpha_minus(0.4) == 0.4
    with pytest.raises(ValueError):
        seg.Bias(1.5)
    with pytest.raises(ValueError):
        seg.SegmentScheme(seg.Bias(), seg.Linear(), 0.0)


def test_linear_segment_is_straight_line():
    q, v = np.array([1.0, -2.0]), np.array([0.5, 3.0])
    assert_allclose(seg.psi(linear(), 0.03, q, v), q + 0.03 * v)


@pytest.mark.parametrize("scheme", [zero_flow(), pendulum_flow(), zero_flow(method="midpoint")])
def test_segment_is_tangent_at_anchor(scheme):
    q, v = np.array([0.4]), np.array([-1.3])
    assert_allclose(seg.psi(scheme, 0.0, q, v), q)
    t = 1e-5
    slope = (seg.psi(scheme, t, q, v) - seg.psi(scheme, -t, q, v)) / (2 * t)
    assert_allclose(slope, v, atol=1e-6 * max(1, abs(v[0])))


def test_boundary_examples():
    q, v = np.array([1.0, 0.0]), np.array([0.0, 2.0])
    assert_allclose(seg.boundary_minus(linear(), q, v), [1.0, -0.1])
    assert_allclose(seg.boundary_plus(linear(), q, v), [1.0, 0.1])
    q, v = np.zeros(2), np.array([1.0, 2.0])
    assert_allclose(seg.boundary_minus(linear(1.0), q, v), [0.0, 0.0])
    assert_allclose(seg.boundary_plus(linear(1.0), q, v), [0.1, 0.2])


def test_zero_field_flow_reproduces_linear():
    q, v = np.array([1.0, 0.0]), np.array([0.0, 2.0])
    assert_allclose(seg.boundary_minus(zero_flow(), q, v), [1.0, -0.1], atol=1e-15)
    assert_allclose(seg.boundary_plus(zero_flow(), q, v), [1.0, 0.1], atol=1e-15)
    for a, b in zip(seg.boundary_jacobians(zero_flow(), q, v), seg.boundary_jacobians(linear(), q, v)):
        assert_allclose(a, b, atol=1e-14)


def test_linear_boundary_jacobians_n1():
    Jm, Jp = seg.boundary_jacobians(linear(), [0.0], [1.0])
    assert_allclose(Jm, [[1.0, -0.05]])
    assert_allclose(Jp, [[1.0, 0.05]])


@pytest.mark.parametrize("n", [1, 2, 3])
def test_stacked_determinant_is_h_to_the_n(n):
    B = seg.stacked_jacobian(linear(0.3), np.zeros(n), np.ones(n))
    assert abs(np.linalg.det(B)) == pytest.approx(H ** n, rel=1e-12)


def test_flow_jacobians_match_finite_differences():
    s = pendulum_flow(0.3)
    q, v = np.array([0.7]), np.array([-0.4])
    Jm, Jp = seg.boundary_jacobians(s, q, v)
    z = np.concatenate([q, v])
    eps = 1e-6
    for J, f in ((Jm, seg.boundary_minus), (Jp, seg.boundary_plus)):
        cols = [(f(s, *(z + eps * e).reshape(2, 1)) - f(s, *(z - eps * e).reshape(2, 1))) / (2 * eps)
                for e in np.eye(2)]
        assert_allclose(J, np.column_stack(cols), atol=1e-8)


def test_invert_boundaries_examples():
    q, v = seg.invert_boundaries(linear(1.0), [0.0, 0.0], [0.1, 0.2])
    assert_allclose(q, [0, 0], atol=1e-15)
    assert_allclose(v, [1, 2])
    q, v = seg.invert_boundaries(linear(), [1.0, -0.1], [1.0, 0.1])
    assert_allclose(q, [1, 0], atol=1e-15)
    assert_allclose(v, [0, 2])


@pytest.mark.parametrize("scheme", [linear(), linear(0.8), zero_flow(0.2)])
def test_zero_section(scheme):
    p = np.array([0.3, -1.2])
    q, v = seg.invert_boundaries(scheme, p, p)
    assert_allclose(q, p, atol=1e-14)
    assert_allclose(v, 0, atol=1e-14)


def test_zero_section_of_force_flow_is_unique():
    # under a force field the discrete zero vector is not (p, 0) but still unique
    s = pendulum_flow()
    p = np.array([0.9])
    a = seg.invert_boundaries(s, p, p)
    b = seg.invert_boundaries(s, p, p, guess=(p + 0.05, np.array([0.3])))
    assert_allclose(seg.boundary_minus(s, *a), p, atol=1e-12)
    assert_allclose(seg.boundary_plus(s, *a), p, atol=1e-12)
    assert_allclose(a[0], b[0], atol=1e-12)
    assert_allclose(a[1], b[1], atol=1e-12)


def test_decompose_example():
    parts = seg.decompose(linear(), [0.0], [1.0], [1.0, 0.0])
    assert_allclose(parts.minus_part, [0.5, -10.0])
    assert_allclose(parts.plus_part, [0.5, 10.0])
    Jm, Jp = seg.boundary_jacobians(linear(), [0.0], [1.0])
    assert_allclose(Jp @ parts.minus_part, 0, atol=1e-15)
    assert_allclose(Jm @ parts.plus_part, 0, atol=1e-15)


def test_decompose_idempotent_and_linear():
    s = linear()
    dv = np.array([1.0, 20.0])  # J- dv = 1 - 0.05 * 20 = 0
    parts = seg.decompose(s, [0.0], [1.0], dv)
    assert_allclose(parts.plus_part, dv)
    assert_allclose(parts.minus_part, 0, atol=1e-14)
    zero = seg.decompose(s, [0.0], [1.0], [0.0, 0.0])
    assert_allclose(zero.minus_part, 0)
    assert_allclose(zero.plus_part, 0)


def test_lifts_closed_form():
    s, q, v, dq = linear(), np.zeros(2), np.ones(2), np.array([1.0, 0.0])
    up = seg.lift_plus(s, q, v, dq)
    down = seg.lift_minus(s, q, v, dq)
    assert_allclose(up, [0.5, 0, 10, 0])
    assert_allclose(down, [0.5, 0, -10, 0])
    Jm, Jp = seg.boundary_jacobians(s, q, v)
    assert_allclose(Jp @ up, dq)
    assert_allclose(Jm @ up, 0, atol=1e-15)
    assert_allclose(Jm @ down, dq)
    assert_allclose(Jp @ down, 0, atol=1e-15)
    assert_allclose(seg.lift_plus(s, q, v, np.zeros(2)), 0)


def test_transport_between_adjacent_states():
    s = linear()
    v_state = (np.array([0.0]), np.array([1.0]))
    w_state = (np.array([0.1]), np.array([1.0]))
    dq = np.array([2.0])
    moved = seg.transport(s, v_state, w_state, seg.lift_plus(s, *v_state, dq))
    assert_allclose(moved, seg.lift_minus(s, *w_state, dq))
    assert_allclose(seg.transport(s, v_state, w_state, np.zeros(2)), 0)
    Jm_w = seg.boundary_jacobians(s, *w_state)[0]
    Jp_v = seg.boundary_jacobians(s, *v_state)[1]
    assert_allclose(Jm_w @ moved, Jp_v @ seg.lift_plus(s, *v_state, dq), atol=1e-10)
    with pytest.raises(AdjacencyError):
        seg.transport(s, v_state, (np.array([5.0]), np.array([1.0])), np.zeros(2))


def test_discrete_derivative_examples():
    s = linear(1.0)
    Q, V = seg.discrete_derivative(s, [0.0, 0.1, 0.3])
    assert_allclose(Q, [[0.0], [0.1]])
    assert_allclose(V, [[1.0], [2.0]])
    Q, V = seg.discrete_derivative(s, np.ones((4, 2)))
    assert_allclose(V, 0)
    assert_allclose(seg.reconstruct_configurations(s, Q, V), np.ones((4, 2)))


def test_reconstruct_single_state_and_errors():
    s = linear()
    m = seg.reconstruct_configurations(s, [[1.0]], [[2.0]])
    assert_allclose(m, [[0.9], [1.1]])
    with pytest.raises(FirstOrderError) as info:
        seg.reconstruct_configurations(s, [[0.0], [0.1], [5.0]], [[1.0], [1.0], [1.0]])
    assert info.value.index == 1
    assert info.value.violation == pytest.approx(4.8)  # d+(v_1) = 0.15, d-(v_2) = 4.95


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=3, max_size=8), st.floats(0, 1))
def test_discrete_derivative_round_trip(m, gamma):
    s = linear(gamma)
    Q, V = seg.discrete_derivative(s, m)
    assert_allclose(seg.reconstruct_configurations(s, Q, V)[:, 0], m, atol=1e-12)


def test_discrete_derivative_round_trip_under_flow():
    s = pendulum_flow(0.4)
    m = np.array([[0.0], [0.12], [0.2], [0.22]])
    Q, V = seg.discrete_derivative(s, m)
    assert_allclose(seg.reconstruct_configurations(s, Q, V), m, atol=1e-12)
