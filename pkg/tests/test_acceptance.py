"""Acceptance criteria, one test each; every test prints a single pass/fail line."""

import time

import numpy as np
import pytest

import conftest
from parocs.cli import main
from parocs.config import load_config
from parocs.diagnostics import duality_check, gradient_check, hessian_check, taylor_check
from parocs.experiments import (FitError, example_neg_curvature, example_tracking, family_from_config,
                                linear_state_eta, lq_lipschitz_constant, lq_oracle_triple, lq_toy,
                                make_family, perturb_sweep, tikhonov_path)
from parocs.mesh import INTERVAL, NODAL, Field, make_grid, norm
from parocs.optimality import check_struct, solve_ocp
from parocs.state import make_problem, solve_state

PRESET_NAMES = ("neg-curvature", "tracking")


def _record(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def neg_report():
    return example_neg_curvature()


def test_criterion_01_duality():
    worst, elapsed = {}, 0.0
    for name in PRESET_NAMES:
        ps = load_config(name).build_problem()
        t0 = time.perf_counter()
        rep = duality_check(ps, 20, 0)
        elapsed = max(elapsed, time.perf_counter() - t0)
        worst[name] = rep["max_scaled_error"]
    ok = all(v <= 1e-10 for v in worst.values()) and elapsed < 10.0
    _record(1, ok, f"max scaled error {max(worst.values()):.2e} (<= 1e-10), slowest preset {elapsed:.1f}s (< 10s)")


def test_criterion_02_gradient_and_hessian():
    g_err, h_err = 0.0, 0.0
    for name in PRESET_NAMES:
        ps = load_config(name).build_problem()
        g_err = max(g_err, gradient_check(ps, 5, 0, h=1e-4)["max_rel_error"])
        h_err = max(h_err, hessian_check(ps, 5, 0)["max_rel_error"])
    _record(2, g_err <= 1e-5 and h_err <= 1e-4,
            f"J' rel error {g_err:.2e} (<= 1e-5), J'' rel error {h_err:.2e} (<= 1e-4)")


def _cubic_error(nx, nt, sample):
    exact = lambda x, t: t * np.sin(np.pi * x)  # noqa: E731
    ps = make_problem(make_grid(1, nx, nt), f=lambda x, t, y: y**3, f_y=lambda x, t, y: 3 * y**2,
                      f_yy=lambda x, t, y: 6 * y)
    s = lambda x: np.sin(np.pi * x)  # noqa: E731
    u = Field.from_function(ps.grid, INTERVAL,
                            lambda x, t: s(x) + np.pi**2 * t * s(x) + (t * s(x)) ** 3, sample)
    y = solve_state(ps, u, tol=1e-14)
    return norm(y - Field.from_function(ps.grid, NODAL, exact), "Linf")


def _orders(errs):
    return [float(np.log2(a / b)) for a, b in zip(errs, errs[1:])]


def test_criterion_03_manufactured_convergence():
    # the exact state is linear in t, so with forcing sampled at step ends the
    # implicit Euler quotient is exact and only the spatial error remains
    ex = _orders([_cubic_error(n, 8, "end") for n in (16, 32, 64)])
    # midpoint forcing leaves an O(dt) consistency error that dominates on a fine space grid
    et = _orders([_cubic_error(512, n, "mid") for n in (8, 16, 32)])
    ok = min(ex) >= 1.9 and min(et) >= 0.9
    _record(3, ok, f"dx orders {', '.join(f'{o:.3f}' for o in ex)} (>= 1.9), "
                   f"dt orders {', '.join(f'{o:.3f}' for o in et)} (>= 0.9)")


def test_criterion_04_taylor_remainders():
    rep = taylor_check(load_config("neg-curvature").build_problem())
    _record(4, rep["pass"], f"first-order slope {rep['slope_first']:.3f} (in [1.9, 2.1]), "
                            f"second-order slope {rep['slope_second']:.3f} (in [2.9, 3.1])")


def test_criterion_05_neg_curvature_optimum(neg_report):
    s = neg_report["solve"]
    c = neg_report["curvature"]
    ok = (s["converged"] and s["iterations"] <= 50 and s["u_minus_ua_L1"] <= 1e-8 and s["gap"] <= 1e-10
          and c["n"] == 200 and c["max_J2"] < 0 and neg_report["identity"]["max_rel_error"] <= 1e-10)
    _record(5, ok, f"|u - u_a|_L1 {s['u_minus_ua_L1']:.1e}, gap {s['gap']:.1e}, {s['iterations']} iters, "
                   f"max J'' {c['max_J2']:.3e} over {c['n']} samples, "
                   f"identity error {neg_report['identity']['max_rel_error']:.1e}")


def test_criterion_06_structural_constant(neg_report):
    ps = load_config("neg-curvature").build_problem()
    rep = check_struct(ps.g, np.logspace(-4, -1, 200))
    ok = 0.9 <= rep.constant <= 1.1
    _record(6, ok, f"kappa on g = x: {rep.constant:.4f} (in [0.9, 1.1]); "
                   f"kappa on dbar: {neg_report['struct']['kappa_dbar']:.4f}")


def test_criterion_07_growth_checkers(neg_report):
    trk = example_tracking(sweep=False)
    gf, a1, a2 = neg_report["growth_first"]["kappa_tilde"], neg_report["A1"]["gamma"], trk["A2"]["gamma"]
    ok = all(v is not None and v > 0 for v in (gf, a1, a2))
    _record(7, ok, f"growth_first {gf:.3e}, A1 {a1:.3e}, A2 on tracking {a2:.3e} (all > 0)")


def test_criterion_08_rho_sweep():
    cfg = load_config("neg-curvature")
    ps = cfg.build_problem()
    t0 = time.perf_counter()
    base = solve_ocp(ps)
    fam = family_from_config(ps, cfg.section("sweep"))
    try:
        rep = perturb_sweep(ps, base.psi, fam)
    except FitError as exc:
        moved = sum(r["dU_L1"] > 0 for r in exc.report.records) if exc.report else 0
        _record(8, False, f"fit failed: {exc}; {moved} of {len(fam.magnitudes)} magnitudes move u")
        return
    elapsed = time.perf_counter() - t0
    fu, fyp = rep.fits["u"], rep.fits["yp"]
    ok = (fu is not None and fyp is not None and fu.theta_hat >= 0.9 and fyp.theta_hat >= 0.9
          and fu.r_squared >= 0.98 and fyp.r_squared >= 0.98 and elapsed <= 300)
    detail = ", ".join(f"theta_{k} {f.theta_hat:.3f} (r2 {f.r_squared:.4f})" if f
                       else f"{k} fit failed ({rep.fit_errors[k]})" for k, f in (("u", fu), ("yp", fyp)))
    moved = sum(r["dU_L1"] > 0 for r in rep.records)
    _record(8, ok, f"{detail}; {moved} of {len(rep.records)} magnitudes move u; {elapsed:.0f}s")


def test_criterion_09_tikhonov_path():
    ps = load_config("neg-curvature").build_problem()
    rep = tikhonov_path(ps, [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 1e-4])
    fit = rep.fits["u"]
    if fit is None:
        top = max(r["dU_L1"] for r in rep.records)
        _record(9, False, f"fit failed: {rep.fit_errors['u']}; max |u_lambda - ubar|_L1 = {top:.1e}")
        return
    _record(9, 0.9 <= fit.theta_hat <= 1.1, f"control slope {fit.theta_hat:.3f} (in [0.9, 1.1])")


def test_criterion_10_nonlinear_eta():
    ps = load_config("neg-curvature").build_problem()
    base = solve_ocp(ps)
    fam = make_family(ps, "eta_functional",
                      {"eta": linear_state_eta(ps, lambda x, t: np.sin(np.pi * x) + 0.0 * t)},
                      [1e-1, 2.5e-2, 6.3e-3, 1.6e-3, 4e-4, 1e-4])
    try:
        rep = perturb_sweep(ps, base.psi, fam)
    except FitError as exc:
        moved = sum(r["dU_L1"] > 0 for r in exc.report.records) if exc.report else 0
        _record(10, False, f"fit failed: {exc}; {moved} of {len(fam.magnitudes)} magnitudes move u")
        return
    fit = rep.fits["u"]
    if fit is None:
        _record(10, False, f"control fit failed: {rep.fit_errors['u']}")
        return
    _record(10, fit.theta_hat >= 0.9, f"control slope {fit.theta_hat:.3f} (>= 0.9)")


def test_criterion_11_lq_oracle():
    g = make_grid(1, 12, 12)
    ps = lq_toy(g)
    lam = 0.05
    opts = {"method": "tikhonov_fixed_point", "tikhonov_lambda": lam, "tol": 1e-14, "max_iters": 100}
    base = solve_ocp(ps, **opts)
    err = norm(base.psi.u - lq_oracle_triple(g, lam).u, "Linf")
    fam = make_family(ps, "mixed", {"xi": lambda x, t: np.cos(np.pi * x) * t,
                                    "eta": lambda x, t: np.sin(2 * np.pi * x),
                                    "rho": lambda x, t: x * (1 - t)},
                      [1e-1, 4e-2, 1.6e-2, 6.3e-3, 2.5e-3, 1e-3])
    fit = perturb_sweep(ps, base.psi, fam, opts).fits["total"]
    kappa = lq_lipschitz_constant(g, lam, fam.shape)
    ok = err <= 1e-8 and abs(fit.theta_hat - 1.0) <= 0.02 and abs(fit.kappa_hat / kappa - 1.0) <= 0.1
    _record(11, ok, f"control error {err:.1e} (<= 1e-8), theta {fit.theta_hat:.4f} (1 +- 0.02), "
                    f"kappa {fit.kappa_hat:.4f} vs oracle {kappa:.4f} (within 10%)")


def _data_files(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


def test_criterion_12_determinism(tmp_path):
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        codes = [main(["solve", "--config", "neg-curvature", "--out", str(out / "solve")]),
                 main(["check", "ak", "--grid", "32,32", "--out", str(out / "ak")]),
                 main(["sweep", "--config", "tracking", "--grid", "16,32", "--out", str(out / "sweep")])]
        runs.append((codes, _data_files(out)))
    (c0, f0), (c1, f1) = runs
    same = f0 == f1 and len(f0) > 0
    _record(12, same and c0 == c1 == [0, 0, 0],
            f"{len(f0)} data files byte-identical across two runs: {same}; exit codes {c0}, {c1}")
