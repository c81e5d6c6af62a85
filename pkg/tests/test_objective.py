import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import exp_fns, neg_curvature_problem
from parocs.mesh import INTERVAL, NODAL, Field, inner, make_grid
from parocs.objective import (EtaFunctional, Objective, Perturbation, directional_J1, eval_J,
                              hamiltonian_du, second_variation, solve_adjoint)
from parocs.state import make_problem, solve_linearized, solve_state


def _rand(grid, seed, lo=0.1, hi=0.9):
    return Field(grid, INTERVAL, np.random.default_rng(seed).uniform(lo, hi, grid.shape(INTERVAL)))


def _smooth_dir(grid):
    return Field.from_function(grid, INTERVAL, lambda x, t: np.sin(np.pi * x) * np.cos(2 * t))


def _tracking_problem(nx=16, nt=16):
    yd = lambda x, t: 0.1 * np.sin(np.pi * x) * t  # noqa: E731
    return make_problem(make_grid(1, nx, nt), **exp_fns(),
                        L0=lambda x, t, y: 0.5 * (y - yd(x, t)) ** 2,
                        L0_y=lambda x, t, y: y - yd(x, t), L0_yy=lambda x, t, y: 1.0 + 0.0 * y,
                        m=0.5, g=lambda x, t: 0.2 * x - 0.1 + 0.0 * t, u_a=-1.0, u_b=1.0)


def test_zero_objective():
    ps = make_problem(make_grid(1, 8, 4), **exp_fns())
    assert eval_J(ps, _rand(ps.grid, 0)) == 0.0


def test_linear_integrand_hand_sum():
    ps = neg_curvature_problem(8, 4)
    u = _rand(ps.grid, 1)
    y = solve_state(ps, u)
    g = ps.grid
    expect = sum(g.weight * (y.values[i, j + 1] + g.axis[i] * u.values[i, j])
                 for i in range(g.n_nodes) for j in range(g.nt))
    assert eval_J(ps, u) == pytest.approx(expect, rel=1e-13)


def test_lower_bound_minimises_neg_curvature():
    ps = neg_curvature_problem()
    j0 = eval_J(ps, ps.u_a)
    for s in range(10):
        assert eval_J(ps, _rand(ps.grid, s, 0.0, 1.0)) >= j0


def test_adjoint_zero_for_zero_source():
    ps = make_problem(make_grid(1, 8, 4), **exp_fns())
    adj = solve_adjoint(ps, _rand(ps.grid, 0))
    assert np.all(adj.p.values == 0.0)


def test_adjoint_nonnegative_terminal_zero():
    ps = neg_curvature_problem()
    p = solve_adjoint(ps, ps.u_a).p
    assert p.values.min() >= 0.0 and np.all(p.values[:, -1] == 0.0)


def test_hamiltonian_du_examples():
    g = make_grid(1, 8, 4)
    ps = make_problem(g, m=1.0)
    d = hamiltonian_du(ps, Field.constant(g, NODAL, 1.0), Field.zeros(g, NODAL))
    assert np.all(d.values == 1.0)
    ps = make_problem(g, g=lambda x, t: x + 0.0 * t)
    d = hamiltonian_du(ps, Field.zeros(g, NODAL), Field.zeros(g, NODAL))
    assert np.array_equal(d.values, ps.g.values)


def test_hamiltonian_du_equals_gradient():
    ps = _tracking_problem()
    u = _rand(ps.grid, 3, -0.5, 0.5)
    obj = Objective(ps)
    y = obj.state(u)
    p = obj.adjoint(u, y)
    assert np.allclose(hamiltonian_du(ps, y, p).values, obj.gradient(u).values, atol=1e-14)


def test_J1_zero_direction():
    ps = _tracking_problem()
    assert directional_J1(ps, _rand(ps.grid, 0), Field.zeros(ps.grid, INTERVAL)) == 0.0


@pytest.mark.parametrize("make", [neg_curvature_problem, _tracking_problem])
def test_J1_adjoint_matches_linearized(make):
    ps = make()
    u, v = _rand(ps.grid, 4), _smooth_dir(ps.grid)
    a = directional_J1(ps, u, v, "adjoint")
    b = directional_J1(ps, u, v, "linearized")
    assert abs(a - b) <= 1e-10 * (1 + abs(a))


def test_J1_unknown_mode():
    ps = neg_curvature_problem(8, 4)
    with pytest.raises(ValueError):
        directional_J1(ps, ps.u_a, ps.u_a, "spectral")


def test_J1_central_difference_second_order():
    ps = _tracking_problem()
    u, v = _rand(ps.grid, 5, -0.5, 0.5), _smooth_dir(ps.grid)
    d = directional_J1(ps, u, v)
    errs = [abs((eval_J(ps, u + h * v) - eval_J(ps, u - h * v)) / (2 * h) - d) for h in (1e-1, 1e-2)]
    assert errs[0] / errs[1] == pytest.approx(100.0, rel=0.1)


def test_second_variation_zero_for_linear_problem():
    lin = dict(f=lambda x, t, y: y, f_y=lambda x, t, y: 1.0 + 0.0 * y, f_yy=lambda x, t, y: 0.0 * y)
    ps = make_problem(make_grid(1, 12, 8), **lin, L0=lambda x, t, y: y,
                      L0_y=lambda x, t, y: 1.0 + 0.0 * y, L0_yy=lambda x, t, y: 0.0 * y)
    u = _rand(ps.grid, 1)
    assert second_variation(ps, u, _smooth_dir(ps.grid), _rand(ps.grid, 2)) == 0.0


def test_second_variation_symmetric():
    ps = _tracking_problem()
    u, v, w = _rand(ps.grid, 1), _smooth_dir(ps.grid), _rand(ps.grid, 2, -1, 1)
    a, b = second_variation(ps, u, v, w), second_variation(ps, u, w, v)
    assert a == pytest.approx(b, rel=1e-12)


def test_second_variation_matches_difference_of_J1():
    ps = _tracking_problem()
    u, v = _rand(ps.grid, 6, -0.5, 0.5), _smooth_dir(ps.grid)
    h = 1e-3
    fd = (directional_J1(ps, u + h * v, v) - directional_J1(ps, u - h * v, v)) / (2 * h)
    j2 = second_variation(ps, u, v, v)
    assert abs(fd - j2) <= 1e-4 * abs(j2)


def test_second_variation_forward_difference_first_order():
    ps = _tracking_problem()
    u, v = _rand(ps.grid, 6, -0.5, 0.5), _smooth_dir(ps.grid)
    j2 = second_variation(ps, u, v, v)
    errs = [abs((directional_J1(ps, u + h * v, v) - directional_J1(ps, u, v)) / h - j2)
            for h in (1e-2, 1e-3)]
    assert errs[0] / errs[1] == pytest.approx(10.0, rel=0.1)


def test_neg_curvature_sign_facts():
    ps = neg_curvature_problem()
    for s in range(5):
        u = _rand(ps.grid, s, 0.0, 1.0)
        v = u - ps.u_a
        assert directional_J1(ps, ps.u_a, v) >= 0.0
        assert second_variation(ps, ps.u_a, v, v) < 0.0


def _gradient_matches_fd(ps, zeta=None, tikhonov=0.0, h=1e-5):
    u, v = _rand(ps.grid, 8, -0.5, 0.5), _smooth_dir(ps.grid)
    d = inner(Objective(ps, zeta, tikhonov).gradient(u), v)
    fd = (eval_J(ps, u + h * v, zeta, tikhonov) - eval_J(ps, u - h * v, zeta, tikhonov)) / (2 * h)
    assert abs(d - fd) <= 1e-6 * (1 + abs(d))
    lin = directional_J1(ps, u, v, "linearized", zeta, tikhonov)
    assert abs(d - lin) <= 1e-10 * (1 + abs(d))


def test_perturbed_gradients():
    ps = _tracking_problem()
    g = ps.grid
    xi = Field.from_function(g, INTERVAL, lambda x, t: 0.3 * np.cos(x + t))
    eta = Field.from_function(g, NODAL, lambda x, t: 0.2 * x * t)
    rho = Field.from_function(g, INTERVAL, lambda x, t: 0.1 * np.sin(4 * x))
    _gradient_matches_fd(ps, Perturbation(xi=xi))
    _gradient_matches_fd(ps, Perturbation(eta=eta))
    _gradient_matches_fd(ps, Perturbation(rho=rho))
    _gradient_matches_fd(ps, Perturbation(xi, eta, rho))
    _gradient_matches_fd(ps, tikhonov=0.3)


def test_eta_functional_gradient():
    ps = _tracking_problem()
    eta = EtaFunctional(lambda x, t, y, u: 0.1 * np.sin(np.pi * x) * y**2 + 0.2 * u**2,
                        lambda x, t, y, u: 0.2 * np.sin(np.pi * x) * y,
                        lambda x, t, y, u: 0.4 * u, lambda x, t, y, u: 0.4 + 0.0 * u)
    _gradient_matches_fd(ps, Perturbation(eta=eta))


def test_perturbation_conventions():
    ps = neg_curvature_problem(8, 4)
    g = ps.grid
    u = _rand(g, 1)
    base = eval_J(ps, u)
    one_i = Field.constant(g, INTERVAL, 1.0)
    one_n = Field.constant(g, NODAL, 1.0)
    y = solve_state(ps, u)
    assert eval_J(ps, u, Perturbation(rho=one_i)) == pytest.approx(base - inner(one_i, u))
    assert eval_J(ps, u, Perturbation(eta=one_n)) == pytest.approx(base + inner(one_n, y))
    assert eval_J(ps, u, tikhonov=2.0) == pytest.approx(base + inner(u, u))
    shifted = solve_state(ps, u, one_i)
    assert np.allclose(shifted.values, solve_state(ps, u + one_i).values)


def test_perturbation_scaled():
    g = make_grid(1, 8, 4)
    z = Perturbation(xi=Field.constant(g, INTERVAL, 2.0), rho=Field.constant(g, INTERVAL, 1.0))
    s = z.scaled(0.5)
    assert np.all(s.xi.values == 1.0) and np.all(s.rho.values == 0.5) and s.eta is None
    eta = EtaFunctional(lambda x, t, y, u: y, lambda x, t, y, u: 1.0, lambda x, t, y, u: 0.0)
    e = Perturbation(eta=eta).scaled(3.0).eta_functional
    assert e.fn(0, 0, 2.0, 0) == 6.0 and e.d_y(0, 0, 0, 0) == 3.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_duality_random_pairs(seed):
    ps = _tracking_problem(10, 8)
    rng = np.random.default_rng(seed)
    u = Field(ps.grid, INTERVAL, rng.uniform(-1, 1, ps.grid.shape(INTERVAL)))
    v = Field(ps.grid, INTERVAL, rng.standard_normal(ps.grid.shape(INTERVAL)))
    a = directional_J1(ps, u, v, "adjoint")
    b = directional_J1(ps, u, v, "linearized")
    assert abs(a - b) <= 1e-10 * (1 + abs(a))


def test_linearized_state_pairs_with_adjoint():
    ps = _tracking_problem()
    u, v = _rand(ps.grid, 2), _rand(ps.grid, 3, -1, 1)
    obj = Objective(ps)
    y = obj.state(u)
    z = solve_linearized(ps, y, v)
    q = obj.adjoint_source(u, y)
    p = obj.adjoint(u, y)
    assert inner(q, z) == pytest.approx(inner(p.step_start(), v), rel=1e-12)
