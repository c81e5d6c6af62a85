import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import neg_curvature_problem
from parocs.config import load_config
from parocs.mesh import INTERVAL, NODAL, Field, make_grid, norm
from parocs.objective import Perturbation, eval_J
from parocs.optimality import (METHODS, ConeSpec, Triple, UbarData, bang_bang_selection,
                               cone_membership, is_feasible, metric_dY, metric_dZ, phi_residual,
                               project_admissible, require_feasible, solve_ocp, vi_gap)
from parocs.state import make_problem, solve_state


@pytest.fixture(scope="module")
def small_tracking():
    return load_config("tracking", overrides={"grid": {"nx": 16, "nt": 16}}).build_problem()


def _box(nx=4, nt=1, lo=0.0, hi=1.0):
    return make_problem(make_grid(1, nx, nt), u_a=lo, u_b=hi)


def test_project_examples():
    ps = _box()
    f = Field(ps.grid, INTERVAL, [[-1.0], [0.5], [2.0]])
    assert np.array_equal(project_admissible(ps, f).values[:, 0], [0.0, 0.5, 1.0])
    inside = Field(ps.grid, INTERVAL, [[0.1], [0.2], [0.3]])
    assert np.array_equal(project_admissible(ps, inside).values, inside.values)


def _no_tiny(v):
    # keep products of generated values out of the subnormal range
    return 0.0 if abs(v) < 1e-50 else v


_vals = arrays(np.float64, (3, 1), elements=st.floats(-10, 10))


@settings(max_examples=50, deadline=None)
@given(_vals, _vals)
def test_projection_idempotent_and_nonexpansive(a, b):
    ps = _box()
    fa, fb = Field(ps.grid, INTERVAL, a), Field(ps.grid, INTERVAL, b)
    pa, pb = project_admissible(ps, fa), project_admissible(ps, fb)
    assert np.array_equal(project_admissible(ps, pa).values, pa.values)
    assert norm(pa - pb, "L2") <= norm(fa - fb, "L2") + 1e-15
    assert is_feasible(ps, pa)


def test_feasibility():
    ps = _box()
    with pytest.raises(ValueError):
        require_feasible(ps, Field.constant(ps.grid, INTERVAL, 1.5))
    require_feasible(ps, Field.constant(ps.grid, INTERVAL, 1.0))


def test_vi_gap_examples():
    ps = make_problem(make_grid(1, 8, 4), u_a=-1.0, u_b=2.0)
    g = ps.grid
    d = Field.from_function(g, INTERVAL, lambda x, t: x - 0.5 + 0.0 * t)
    vstar = Field(g, INTERVAL, bang_bang_selection(ps, d.values, np.zeros(g.shape(INTERVAL))))
    assert vi_gap(ps, d, None, vstar) == 0.0
    one = Field.constant(g, INTERVAL, 1.0)
    assert vi_gap(ps, one, None, ps.u_b) == pytest.approx(3.0 * g.measure)
    rho = Field.constant(g, INTERVAL, 2.0)
    # d - rho = -1 favours the upper bound
    assert vi_gap(ps, Field.constant(g, INTERVAL, 1.0), rho, ps.u_a) == pytest.approx(3.0 * g.measure)
    with pytest.raises(ValueError):
        vi_gap(ps, one, None, Field.constant(g, INTERVAL, 5.0))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (7, 4), elements=st.floats(-5, 5).map(_no_tiny)),
       arrays(np.float64, (7, 4), elements=st.floats(0, 1).map(_no_tiny)))
def test_vi_gap_nonnegative_and_zero_iff_bang_bang(d, u):
    ps = make_problem(make_grid(1, 8, 4))
    df, uf = Field(ps.grid, INTERVAL, d), Field(ps.grid, INTERVAL, u)
    gap = vi_gap(ps, df, None, uf)
    assert gap >= 0.0
    bb = np.all(np.where(d > 0, u == 0.0, True)) and np.all(np.where(d < 0, u == 1.0, True))
    assert (gap == 0.0) == bool(bb)


def test_phi_residual_at_solution(small_neg):
    res = solve_ocp(small_neg)
    phi = phi_residual(small_neg, res.psi)
    assert phi.dZ <= 1e-10 and phi.gap == 0.0
    assert phi.initial_res == 0.0 and phi.terminal_res == 0.0


def test_phi_residual_linear_in_state_bump(small_neg):
    psi = solve_ocp(small_neg).psi
    bump = np.zeros(small_neg.grid.shape(NODAL))
    bump[5, 6] = 1.0
    r = []
    for delta in (1e-6, 2e-6):
        y = psi.y.with_values(psi.y.values + delta * bump)
        r.append(norm(phi_residual(small_neg, Triple(y, psi.p, psi.u)).xi_res, "L2"))
    assert r[1] / r[0] == pytest.approx(2.0, rel=1e-3)


def test_phi_residual_rejects_infeasible(small_neg):
    psi = solve_ocp(small_neg).psi
    with pytest.raises(ValueError):
        phi_residual(small_neg, Triple(psi.y, psi.p, 2.0 * small_neg.u_b))


def test_metric_dY(small_neg):
    psi = solve_ocp(small_neg).psi
    assert metric_dY(psi, psi) == 0.0
    other = Triple(psi.y, psi.p, 0.5 * small_neg.u_b)
    assert metric_dY(psi, other) == metric_dY(other, psi) == pytest.approx(0.5 * small_neg.grid.measure)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_metric_triangle_and_symmetry(seed):
    g = make_grid(1, 8, 4)
    rng = np.random.default_rng(seed)

    def trip():
        return Triple(Field(g, NODAL, rng.standard_normal(g.shape(NODAL))),
                      Field(g, NODAL, rng.standard_normal(g.shape(NODAL))),
                      Field(g, INTERVAL, rng.standard_normal(g.shape(INTERVAL))))

    a, b, c = trip(), trip(), trip()
    assert metric_dY(a, b) == metric_dY(b, a)
    assert metric_dY(a, c) <= metric_dY(a, b) + metric_dY(b, c) + 1e-12

    def pert():
        return Perturbation(Field(g, INTERVAL, rng.standard_normal(g.shape(INTERVAL))),
                            Field(g, NODAL, rng.standard_normal(g.shape(NODAL))),
                            Field(g, INTERVAL, rng.standard_normal(g.shape(INTERVAL))))

    p, q, r = pert(), pert(), pert()
    assert metric_dZ(p, q) == metric_dZ(q, p)
    assert metric_dZ(p, r) <= metric_dZ(p, q) + metric_dZ(q, r) + 1e-12
    assert metric_dZ(p, p) == 0.0


def test_metric_dZ_errors():
    g = make_grid(1, 8, 4)
    rho = Field.constant(g, INTERVAL, 1.0)
    assert metric_dZ(Perturbation(rho=rho)) == 1.0
    with pytest.raises(ValueError):
        metric_dZ(Perturbation(rho=rho), rho_metric="Lstar")
    with pytest.raises(ValueError):
        metric_dZ(Perturbation(rho=rho), rho_metric="L3")
    with pytest.raises(ValueError):
        metric_dZ(Perturbation(xi=rho), Perturbation(xi=Field.zeros(make_grid(1, 8, 5), INTERVAL)))


def test_solve_neg_curvature(small_neg):
    res = solve_ocp(small_neg)
    assert res.converged and res.gap <= 1e-10
    assert np.array_equal(res.psi.u.values, small_neg.u_a.values)


@pytest.mark.parametrize("method", ["conditional_gradient", "projected_gradient"])
def test_solve_tracking_reaches_zero(small_tracking, method):
    res = solve_ocp(small_tracking, method=method, tol=1e-12, max_iters=400)
    assert res.converged
    assert res.objective <= 1e-12
    assert norm(res.psi.u - small_tracking.u_a, "L1") <= 1e-4


@pytest.mark.parametrize("method", ["conditional_gradient", "projected_gradient"])
def test_objective_decreases_along_iterates(small_tracking, method):
    res = solve_ocp(small_tracking, method=method, tol=1e-12, max_iters=30)
    js = [r["J"] for r in res.log]
    assert all(b <= a + 1e-15 for a, b in zip(js, js[1:]))


def test_max_iters_reported_unconverged(small_tracking):
    res = solve_ocp(small_tracking, method="projected_gradient", tol=1e-14, max_iters=1)
    assert not res.converged and res.iterations == 1


def test_large_tikhonov_drives_control_to_zero():
    ps = neg_curvature_problem(u_a=-1.0, u_b=1.0, g=0.0)
    res = solve_ocp(ps, method="tikhonov_fixed_point", tikhonov_lambda=1e6, u_init=ps.u_a * 0.0)
    assert res.converged and norm(res.psi.u, "Linf") < 1e-5


def test_tikhonov_solvers_agree():
    ps = neg_curvature_problem(u_a=-1.0, u_b=1.0, g=lambda x, t: x - 0.5 + 0.0 * t)
    a = solve_ocp(ps, method="tikhonov_fixed_point", tikhonov_lambda=0.1, tol=1e-12, max_iters=200)
    b = solve_ocp(ps, method="projected_gradient", tikhonov_lambda=0.1, tol=1e-12, max_iters=400)
    assert a.converged and b.converged
    assert norm(a.psi.u - b.psi.u, "Linf") < 1e-5


def test_solver_argument_errors(small_neg):
    with pytest.raises(ValueError):
        solve_ocp(small_neg, method="newton")
    with pytest.raises(ValueError):
        solve_ocp(small_neg, method="tikhonov_fixed_point")
    with pytest.raises(ValueError):
        solve_ocp(small_neg, u_init=2.0 * small_neg.u_b)
    assert set(METHODS) == {"conditional_gradient", "projected_gradient", "tikhonov_fixed_point"}


def test_perturbed_solve_moves_control(small_neg):
    g = small_neg.grid
    rho = Field.constant(g, INTERVAL, 5.0)
    res = solve_ocp(small_neg, Perturbation(rho=rho))
    assert res.converged and np.array_equal(res.psi.u.values, small_neg.u_b.values)
    assert res.objective == pytest.approx(eval_J(small_neg, small_neg.u_b, Perturbation(rho=rho)))


def test_cone_zero_member(small_neg):
    data = UbarData(small_neg, small_neg.u_a)
    for kind in "DGEC":
        assert cone_membership(data, Field.zeros(small_neg.grid, INTERVAL), ConeSpec(0.1, kind))


def test_cone_sign_violation(small_neg):
    data = UbarData(small_neg, small_neg.u_b)
    v = Field.constant(small_neg.grid, INTERVAL, 1.0)
    r = cone_membership(data, v, ConeSpec(0.1, "G"))
    assert not r.member and r.violated == "sign"


def test_cone_D_construction_and_G_violation(small_neg):
    data = UbarData(small_neg, small_neg.u_a)
    tau = float(np.quantile(np.abs(data.d.values), 0.3))
    v = Field(small_neg.grid, INTERVAL, np.where(np.abs(data.d.values) <= tau, 1.0, 0.0))
    assert cone_membership(data, v, ConeSpec(tau, "D")).member
    full = Field.constant(small_neg.grid, INTERVAL, 1.0)
    r = cone_membership(data, full, ConeSpec(1e-3, "G"))
    assert not r.member and r.violated == "G"
    r = cone_membership(data, full, ConeSpec(1e-3, "D"))
    assert not r.member and r.violated == "D"


def test_cone_spec_validation():
    with pytest.raises(ValueError):
        ConeSpec(0.0, "D")
    with pytest.raises(ValueError):
        ConeSpec(0.1, "Q")


@settings(max_examples=15, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 1000), st.sampled_from("DGEC"))
def test_cone_scaling_invariance(s, seed, kind):
    ps = neg_curvature_problem(10, 6)
    data = UbarData(ps, ps.u_a)
    rng = np.random.default_rng(seed)
    v = Field(ps.grid, INTERVAL, rng.uniform(0, 1, ps.grid.shape(INTERVAL)) * (rng.random(ps.grid.shape(INTERVAL)) < 0.3))
    spec = ConeSpec(float(np.median(np.abs(data.d.values))), kind)
    assert cone_membership(data, v, spec).member == cone_membership(data, s * v, spec).member


def test_ubar_data_consistency(small_neg):
    data = UbarData(small_neg, small_neg.u_a)
    assert data.J == pytest.approx(eval_J(small_neg, small_neg.u_a))
    v = Field.constant(small_neg.grid, INTERVAL, 0.5)
    assert data.J2(v) < 0.0
    y = solve_state(small_neg, small_neg.u_a)
    assert np.array_equal(data.y.values, y.values)
