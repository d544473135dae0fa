import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from dcls import discrete_form as df
from dcls import reference as ref
from dcls import segments as seg
from dcls import systems as sy

H = 0.1


def make(name, h=H, gamma=0.5, quadrature="midpoint", params=None, **kw):
    return df.make_discrete_system(sy.builtin_system(name, params), h, gamma, quadrature, **kw)


def flow_system(name, h=H, gamma=0.5, **kw):
    system = sy.builtin_system(name)
    return df.make_discrete_system(system, h, gamma, generator=ref.lagrangian_flow(system), **kw)


def test_quadratures():
    for name, quad in df.QUADRATURES.items():
        assert sum(quad.weights) == pytest.approx(1.0)
        assert all(0.0 <= x <= 1.0 for x in quad.nodes)
    # Gauss-Legendre with two nodes integrates cubics exactly
    g = df.get_quadrature("gauss2")
    assert sum(w * x ** 3 for x, w in zip(g.nodes, g.weights)) == pytest.approx(0.25)
    with pytest.raises(KeyError):
        df.get_quadrature("simpson42")


@pytest.mark.parametrize("quadrature", ["midpoint", "trapezoid", "gauss2"])
def test_discrete_lagrangian_free_particle(quadrature):
    d = make("free_particle", quadrature=quadrature)
    assert df.discrete_lagrangian(d, [0.4], [3.0]) == pytest.approx(0.45)


def test_discrete_lagrangian_harmonic():
    assert df.discrete_lagrangian(make("harmonic"), [1.0], [0.0]) == pytest.approx(-0.05)


def test_discrete_lagrangian_consistency():
    q, v = np.array([0.7]), np.array([0.3])
    exact = sy.eval_lagrangian(sy.builtin_system("pendulum"), q, v)
    errs = [abs(df.discrete_lagrangian(make("pendulum", h=h, gamma=0.3), q, v) / h - exact) for h in (1e-2, 1e-3)]
    assert errs[1] < errs[0] / 5


def test_sigma_examples():
    assert_allclose(df.sigma_d(make("free_particle"), [0.0], [3.0]), [0.0, 0.3])
    assert_allclose(df.sigma_d(make("harmonic"), [1.0], [0.0]), [-0.1, 0.0])


def test_sigma_is_gradient_of_discrete_lagrangian():
    for d in (make("pendulum", gamma=0.3, quadrature="gauss2"), flow_system("pendulum", gamma=0.7)):
        q, v = np.array([0.4]), np.array([-0.9])
        z = np.concatenate([q, v])
        eps = 1e-6
        fd = [(df.discrete_lagrangian(d, *np.split(z + eps * e, 2)) - df.discrete_lagrangian(d, *np.split(z - eps * e, 2)))
              / (2 * eps) for e in np.eye(2)]
        assert_allclose(df.sigma_d(d, q, v), fd, atol=1e-9)


def test_pulled_back_equals_exact_for_linear_segments():
    rng = np.random.default_rng(2)
    exact = make("chaplygin_sleigh", quadrature="gauss2")
    pulled = make("chaplygin_sleigh", quadrature="gauss2", sigma_mode=df.PULLED_BACK)
    for _ in range(10):
        q, v = rng.standard_normal(3), rng.standard_normal(3)
        assert_allclose(df.sigma_d(pulled, q, v), df.sigma_d(exact, q, v), atol=1e-10)


def test_sigma_jacobian_matches_finite_differences():
    d = make("chaplygin_sleigh", gamma=0.3, quadrature="trapezoid")
    q, v = np.array([0.1, 0.2, 0.3]), np.array([1.0, -0.5, 0.8])
    z = np.concatenate([q, v])
    eps = 1e-6
    fd = np.column_stack([(df.sigma_d(d, *np.split(z + eps * e, 2)) - df.sigma_d(d, *np.split(z - eps * e, 2)))
                          / (2 * eps) for e in np.eye(6)])
    assert_allclose(df.sigma_jacobian(d, q, v), fd, atol=1e-8)


def test_theta_examples():
    d = make("free_particle")
    assert_allclose(df.theta_plus(d, [0.0], [3.0]), [3.0, 0.15])
    assert_allclose(df.theta_plus(d, [1.0], [0.0]), [0.0, 0.0])
    assert_allclose(df.theta_minus(d, [1.0], [0.0]), [0.0, 0.0])


@pytest.mark.parametrize("builder", [lambda: make("pendulum", gamma=0.2), lambda: flow_system("harmonic", gamma=0.6),
                                     lambda: make("chaplygin_sleigh")])
def test_theta_difference_is_sigma(builder):
    d = builder()
    rng = np.random.default_rng(3)
    for _ in range(100):
        q, v = rng.standard_normal(d.n), rng.standard_normal(d.n)
        assert_allclose(df.theta_plus(d, q, v) - df.theta_minus(d, q, v), df.sigma_d(d, q, v), atol=1e-12)


def test_legendre_closed_forms():
    free = make("free_particle")
    assert_allclose(df.legendre_plus(free, [0.2], [3.0]), [3.0])
    assert_allclose(df.legendre_minus(free, [0.2], [3.0]), [3.0])
    assert_allclose(df.legendre_plus(free, [0.2], [0.0]), [0.0], atol=1e-15)
    harm = make("harmonic")
    q, v = np.array([0.8]), np.array([-0.3])
    assert_allclose(df.legendre_plus(harm, q, v), v - H / 2 * q)
    assert_allclose(df.legendre_minus(harm, q, v), v + H / 2 * q)


def test_legendre_minus_jacobian():
    d = make("harmonic")
    assert_allclose(df.legendre_minus_jacobian(d, [0.8], [-0.3]), [[H / 2, 1.0]])
    f = flow_system("pendulum")
    q, v = np.array([0.5]), np.array([0.2])
    z = np.concatenate([q, v])
    eps = 1e-6
    fd = np.column_stack([(df.legendre_minus(f, *np.split(z + eps * e, 2)) - df.legendre_minus(f, *np.split(z - eps * e, 2)))
                          / (2 * eps) for e in np.eye(2)])
    assert_allclose(df.legendre_minus_jacobian(f, q, v), fd, atol=1e-7)


def test_delta_sigma():
    free = make("free_particle")
    v_state = (np.array([0.0]), np.array([2.0]))
    w_state = (np.array([0.1 + 0.05]), np.array([1.0]))  # d-(w) = 0.1 = d+(v)
    assert_allclose(df.delta_sigma(free, v_state, w_state), [1.0])
    harm = make("harmonic")
    q, v, vt = 0.3, 0.7, 0.5
    qt = q + H / 2 * (v + vt)
    expected = (v - H / 2 * q) - (vt + H / 2 * qt)
    assert_allclose(df.delta_sigma(harm, ([q], [v]), ([qt], [vt])), [expected])


def test_delta_sigma_consistency_with_euler_lagrange():
    # along a straight adjacent pair delta sigma / h tends to the Euler-Lagrange
    # residual dL/dq - d/dt dL/dv = -sin(q) at the junction point
    q, u = np.array([0.6]), np.array([0.8])
    errs = []
    for h in (1e-2, 1e-3):
        d = make("pendulum", h=h)
        v = (q, u)
        w = (q + h * u, u)
        junction = q[0] + h / 2 * u[0]
        errs.append(abs(df.delta_sigma(d, v, w)[0] / h + np.sin(junction)))
    assert errs[1] < errs[0] / 5


def test_momentum_examples():
    free = make("free_particle", params={"n": 2})
    assert df.momentum(free, 0, [0.3, 0.1], [1.5, -2.0]) == pytest.approx(1.5)
    assert df.momentum(free, 1, [0.3, 0.1], [1.5, -2.0]) == pytest.approx(-2.0)

    central = make("harmonic", params={"n": 2})
    rng = np.random.default_rng(4)
    for _ in range(20):
        q, v = rng.standard_normal(2), rng.standard_normal(2)
        Jp = df.momentum(central, 0, q, v, "plus")
        assert Jp == pytest.approx(df.momentum(central, 0, q, v, "minus"), abs=1e-12)
        assert Jp == pytest.approx(q[0] * v[1] - q[1] * v[0], abs=0.1 * H * (1 + np.sum(q ** 2 + v ** 2)))
    with pytest.raises(ValueError):
        df.momentum(central, 0, q, v, "sideways")


def test_omega_free_particle():
    d = make("free_particle")
    # theta+ = (v, alpha+ v) so omega = D theta^T - D theta = [[0, -1], [1, 0]]
    assert_allclose(df.omega_matrix(d, [0.0], [2.0]), [[0.0, -1.0], [1.0, 0.0]], atol=1e-6)
    assert df.omega(d, [0.0], [2.0], [1.0, 0.0], [0.0, 1.0]) == pytest.approx(-1.0, abs=1e-6)


def test_omega_antisymmetric_and_sides_agree():
    rng = np.random.default_rng(5)
    d = flow_system("pendulum", gamma=0.4)
    for _ in range(50):
        q, v = rng.standard_normal(1), rng.standard_normal(1)
        a = rng.standard_normal(2)
        assert abs(df.omega(d, q, v, a, a)) <= 1e-12
        assert_allclose(df.omega_matrix(d, q, v, "plus"), df.omega_matrix(d, q, v, "minus"), atol=1e-6)


def test_dpm_closed_forms():
    free = make("free_particle")
    assert df.dpm_bilinear(free, ([0.0], [1.0]), [1.0], [1.0]) == pytest.approx(-1.0 / H, rel=1e-8)
    harm = make("harmonic")
    # -(dF-L/dz) . lift_plus(1) with F-L = v + (h/2) q and lift_plus(1) = (1/2, 1/h)
    expected = -(H / 2 * 0.5 + 1.0 / H)
    assert df.dpm_bilinear(harm, ([0.4], [0.1]), [1.0], [1.0]) == pytest.approx(expected, rel=1e-8)


def test_dpm_closedness():
    rng = np.random.default_rng(6)
    d = make("pendulum", gamma=0.3, quadrature="gauss2")
    for _ in range(20):
        w = (rng.standard_normal(1), rng.standard_normal(1))
        a, b = rng.standard_normal(1), rng.standard_normal(1)
        assert df.dpm_bilinear(d, w, a, b) == pytest.approx(df.dmp_bilinear(d, w, a, b), abs=1e-6)


def test_constraint_and_annihilators():
    d = make("nonholonomic_particle")
    q, v = np.array([0.0, 2.0, 0.0]), np.array([1.0, 0.0, 1.0])
    assert_allclose(df.discrete_constraint(d, q, v), [-1.0])
    assert not df.is_feasible(d, q, v)
    vp = df.project_velocity(d, q, v)
    assert df.is_feasible(d, q, vp)
    # the force annihilator lives at d+(v), whose y coordinate is 2 + h/2 * v_y
    q2, v2 = np.array([0.0, 1.0, 0.0]), np.array([0.0, 2.0, 0.0])
    assert_allclose(df.force_annihilator(d, q2, v2), [[-1.1, 0.0, 1.0]])
    E = df.variation_space(d, q2, v2)
    assert E.shape == (3, 2)
    assert_allclose(df.force_annihilator(d, q2, v2) @ E, 0, atol=1e-14)


def test_quadrature_placement_matches_anchor_for_affine_constraint():
    anchor = make("nonholonomic_particle", quadrature="gauss2")
    spread = make("nonholonomic_particle", quadrature="gauss2", constraint_placement=df.QUADRATURE)
    rng = np.random.default_rng(7)
    for _ in range(10):
        q, v = rng.standard_normal(3), rng.standard_normal(3)
        # g(c(t), c'(t)) is affine in t along straight segments, so the average is the anchor value
        assert_allclose(df.discrete_constraint(spread, q, v), df.discrete_constraint(anchor, q, v), atol=1e-14)
        assert_allclose(df.discrete_constraint_jacobian(spread, q, v),
                        df.discrete_constraint_jacobian(anchor, q, v), atol=1e-8)


def test_unconstrained_helpers_are_empty():
    d = make("harmonic")
    assert df.discrete_constraint(d, [0.0], [1.0]).shape == (0,)
    assert df.force_annihilator(d, [0.0], [1.0]).shape == (0, 1)
    assert df.is_feasible(d, [0.0], [1.0])


def test_invalid_modes():
    with pytest.raises(ValueError):
        make("harmonic", sigma_mode="closed-ish")
    with pytest.raises(ValueError):
        make("harmonic", constraint_placement="somewhere")


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0, 1))
def test_legendre_transforms_are_lift_pairings(q, v, gamma):
    d = make("pendulum", gamma=gamma)
    q, v = np.array([q]), np.array([v])
    s = df.sigma_d(d, q, v)
    dq = np.array([1.0])
    assert df.legendre_plus(d, q, v)[0] == pytest.approx(s @ seg.lift_plus(d.scheme, q, v, dq), abs=1e-12)
    assert df.legendre_minus(d, q, v)[0] == pytest.approx(-s @ seg.lift_minus(d.scheme, q, v, dq), abs=1e-12)
