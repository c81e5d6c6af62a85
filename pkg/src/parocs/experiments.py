"""Stability experiments: perturbation sweeps, the Tikhonov path, worked examples and an LQ toy.

Every sweep solves the perturbed optimality system for a list of magnitudes
and fits ``log d_Y`` against ``log d_Z``.  Distances that come out exactly zero
are kept in the records and make the fit fail; they are never dropped.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .io import dumps, table_csv
from .linpde import apply_backward_operator
from .mesh import INTERVAL, NODAL, Field, Grid, inner, norm
from .objective import EtaFunctional, Objective, Perturbation
from .optimality import (Sampler, Triple, UbarData, check_Ak, check_growth_first, check_struct,
                         metric_dY, metric_dZ, parallel_map, phi_residual, solve_ocp)
from .state import AssumptionViolation, ProblemSpec, make_problem, solve_state

log = logging.getLogger(__name__)

FAMILY_KINDS = ("xi_only", "eta_field", "rho_field", "rho_smooth", "eta_functional", "mixed")
SWEEP_COLUMNS = ("magnitude", "dZ", "dU_L1", "dY_L2", "dP_L2", "iters", "gap")


class FitError(ValueError):
    """Exponent fit impossible; ``index`` names an offending point, ``report`` keeps partial records."""

    def __init__(self, message: str, index: int | None = None, report=None):
        super().__init__(message)
        self.index = index
        self.report = report


@dataclass
class FitResult:
    theta_hat: float
    kappa_hat: float
    r_squared: float
    interval: tuple
    n: int
    stderr: float

    def to_dict(self) -> dict:
        return asdict(self)


def fit_exponent(points) -> FitResult:
    """Least squares fit of ``log dY = theta log dZ + log kappa``.

    Parameters
    ----------
    points : iterable of (dZ, dY)
        At least four pairs, all strictly positive.

    Returns
    -------
    FitResult
        ``interval`` is the 95% t-interval of the slope.
    """
    pts = [(float(a), float(b)) for a, b in points]
    if len(pts) < 4:
        raise FitError(f"need at least 4 points for a fit, got {len(pts)}")
    for i, (a, b) in enumerate(pts):
        if not (a > 0 and b > 0) or not (math.isfinite(a) and math.isfinite(b)):
            raise FitError(f"point {i} is not positive: dZ={a!r}, dY={b!r}", index=i)
    lx = np.log([a for a, _ in pts])
    ly = np.log([b for _, b in pts])
    if np.ptp(lx) == 0:
        raise FitError("all dZ values coincide; slope undefined")
    res = stats.linregress(lx, ly)
    half = stats.t.ppf(0.975, len(pts) - 2) * res.stderr
    return FitResult(float(res.slope), float(math.exp(res.intercept)), float(res.rvalue**2),
                     (float(res.slope - half), float(res.slope + half)), len(pts), float(res.stderr))


# families


@dataclass
class PerturbationFamily:
    """Magnitudes times a unit-size base perturbation; magnitudes are kept in descending order."""

    kind: str
    shape: Perturbation
    magnitudes: list

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValueError(f"unknown family kind {self.kind!r}")
        mags = [float(s) for s in self.magnitudes]
        if not mags or any(not s > 0 for s in mags):
            raise ValueError("magnitudes must be positive")
        self.magnitudes = sorted(mags, reverse=True)
        sh = self.shape
        parts = [sh.xi, sh.eta_field, sh.rho]
        if sh.eta_functional is None and all(p is None or not np.any(p.values) for p in parts):
            raise ValueError("base perturbation must be nonzero")
        if self.kind == "rho_smooth" and (sh.rho is None or sh.rho_smooth is None):
            raise ValueError("rho_smooth family needs rho and its L* image")
        if self.kind == "eta_functional" and sh.eta_functional is None:
            raise ValueError("eta_functional family needs an EtaFunctional shape")

    @property
    def meets_design(self) -> bool:
        """At least 5 magnitudes spanning at least two decades."""
        m = self.magnitudes
        return len(m) >= 5 and m[0] / m[-1] >= 100.0 * (1 - 1e-9)

    def at(self, s: float) -> Perturbation:
        return self.shape.scaled(s)


def l_star(ps: ProblemSpec, rho: Field) -> Field:
    """``(-d/dt + A) rho`` on the grid, with ``rho`` extended by zero at ``t = T``."""
    return apply_backward_operator(ps.op, rho)


def make_family(ps: ProblemSpec, kind: str, shape: dict, magnitudes) -> PerturbationFamily:
    """Build a family from coefficient callables or constants keyed ``xi``, ``eta``, ``rho``.

    Callables take ``(x, t)``.  For ``rho_smooth`` the ``L*`` image of ``rho``
    is attached automatically; for ``eta_functional`` pass an
    :class:`EtaFunctional` under ``eta``.
    """
    g = ps.grid

    def make(role, v):
        if v is None:
            return None
        if isinstance(v, Field):
            return v
        if callable(v):
            return Field.from_function(g, role, v)
        return Field.constant(g, role, v)

    eta = shape.get("eta")
    eta = eta if isinstance(eta, EtaFunctional) else make(NODAL, eta)
    rho = make(INTERVAL, shape.get("rho"))
    rho_smooth = l_star(ps, rho) if (kind == "rho_smooth" and rho is not None) else None
    return PerturbationFamily(kind, Perturbation(make(INTERVAL, shape.get("xi")), eta, rho,
                                                 rho_smooth), magnitudes)


# sweeps


@dataclass
class StabilityReport:
    kind: str
    rho_metric: str
    mode: str
    records: list
    fits: dict
    fit_errors: dict
    reference_exponent: float | None
    threshold: float
    meets_design: bool
    monotone_u: bool | None = None

    def theta(self, which: str) -> float | None:
        f = self.fits.get(which)
        return None if f is None else f.theta_hat

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fits"] = {k: (None if v is None else v.to_dict()) for k, v in self.fits.items()}
        return d

    def to_json(self) -> str:
        return dumps(self.to_dict())

    def to_csv(self) -> str:
        return table_csv(self.records, SWEEP_COLUMNS)


def reference_exponent(dim: int):
    """Reference exponent and acceptance threshold for the space dimension."""
    return (1.0, 0.9) if dim == 1 else (None, 0.85)


def _fits(records):
    ok = [r for r in records if r["converged"]]
    fits, errors = {}, {}
    for name, key in (("u", "dU_L1"), ("yp", "dYP_L2"), ("total", "dY")):
        try:
            fits[name] = fit_exponent([(r["dZ"], r[key]) for r in ok])
        except FitError as exc:
            fits[name] = None
            errors[name] = str(exc)
    return fits, errors


def _monotone(values, tol=1e-8):
    return bool(all(b <= a + tol for a, b in zip(values, values[1:])))


def perturb_sweep(ps: ProblemSpec, psibar: Triple, family: PerturbationFamily,
                  solver_opts: dict | None = None, rho_metric: str | None = None,
                  path_following: bool = False) -> StabilityReport:
    """Solve the perturbed system for every magnitude and fit exponents.

    Records ``dZ`` (per ``rho_metric``; for a functional ``eta`` the sum of
    the norms in :attr:`NonlinearResult.bound`), ``|u - ubar|_L1``, ``|y - ybar|_L2``, ``|p - pbar|_L2``.
    Fits are made for ``u`` (control distance), ``yp`` (state plus adjoint) and
    ``total`` (``d_Y``), using converged records only.  When the family carries
    ``L* rho``, every record also holds ``dZ_Linf`` and ``dZ_Lstar``.

    Raises
    ------
    FitError
        Fewer than four converged records; ``exc.report`` holds them.
    """
    opts = {"tol": 1e-10, "max_iters": 50}
    opts.update(solver_opts or {})
    if rho_metric is None:
        rho_metric = "Lstar" if family.kind == "rho_smooth" else "Linf"

    def solve_one(s, u0):
        zeta = family.at(s)
        if zeta.eta_functional is not None:
            nl = nonlinear_perturb_solve(ps, zeta.eta_functional, zeta.xi, dict(opts, u_init=u0),
                                         rho=zeta.rho)
            res, dz = nl.result, nl.bound
        else:
            res = solve_ocp(ps, zeta, u_init=u0, **opts)
            dz = metric_dZ(zeta, None, rho_metric)
        psi = res.psi
        du, dy, dp = (norm(psi.u - psibar.u, "L1"), norm(psi.y - psibar.y, "L2"),
                      norm(psi.p - psibar.p, "L2"))
        rec = {"magnitude": s, "dZ": dz, "dU_L1": du, "dY_L2": dy, "dP_L2": dp,
               "dYP_L2": dy + dp, "dY": metric_dY(psi, psibar), "iters": res.iterations,
               "gap": res.gap, "converged": res.converged}
        if zeta.rho_smooth is not None and zeta.eta_functional is None:
            # both measures of rho: sup norm and |L* rho|_L2
            rec["dZ_Linf"] = metric_dZ(zeta, None, "Linf")
            rec["dZ_Lstar"] = metric_dZ(zeta, None, "Lstar")
        return rec, psi.u

    if path_following:
        records, u0 = [], psibar.u
        for s in family.magnitudes:
            rec, u_s = solve_one(s, u0)
            records.append(rec)
            if rec["converged"]:
                u0 = u_s
        mode = "path_following"
    else:
        records = [r for r, _ in parallel_map(lambda s: solve_one(s, psibar.u), family.magnitudes)]
        mode = "warm_start_ubar"
    ref, thr = reference_exponent(ps.grid.dim)
    report = StabilityReport(family.kind, rho_metric, mode, records, {}, {}, ref, thr,
                             family.meets_design,
                             _monotone([r["dU_L1"] for r in records]))
    if sum(r["converged"] for r in records) < 4:
        raise FitError("fewer than 4 converged sweep points", report=report)
    report.fits, report.fit_errors = _fits(records)
    return report



def perturb_sweep_smooth_rho(ps: ProblemSpec, psibar: Triple, family: PerturbationFamily,
                             solver_opts: dict | None = None, path_following: bool = False) -> StabilityReport:
    """:func:`perturb_sweep` with the ``rho`` component measured by ``|L* rho|_L2``."""
    if family.shape.rho_smooth is None:
        raise ValueError("family has no L* image of rho")
    return perturb_sweep(ps, psibar, family, solver_opts, "Lstar", path_following)


# nonlinear eta


@dataclass
class NonlinearResult:
    psi: Triple
    result: object
    norms: dict

    @property
    def bound(self) -> float:
        """Sum of the perturbation norms that control the distance to the reference solution."""
        return self.norms["xi_L2"] + self.norms["eta_y_sup_L2"] + self.norms["eta_u_Linf"]


def _box_samples(ps: ProblemSpec, k_y: float, n_y: int, n_u: int):
    ys = np.linspace(-k_y, k_y, n_y)
    lo, hi = ps.u_a.values, ps.u_b.values
    us = [lo + (hi - lo) * c for c in np.linspace(0.0, 1.0, n_u)]
    return ys, us


def eta_box_norms(ps: ProblemSpec, eta: EtaFunctional, k_y: float, n_y: int = 41, n_u: int = 5):
    """``|sup_R |d_y eta||_L2`` and ``|d_u eta|_{Linf(Q x R)}`` over ``R = [-k_y, k_y] x [u_a, u_b]``.

    The suprema are taken over a tensor sample of ``n_y`` state and ``n_u``
    control values per grid point; ``d_uu eta`` is checked for sign on the
    same sample.
    """
    x, t = ps.grid.space_time()
    shape = ps.grid.shape(INTERVAL)
    ys, us = _box_samples(ps, k_y, n_y, n_u)
    sup_y = np.zeros(shape)
    sup_u = 0.0
    for yv in ys:
        Y = np.full(shape, yv)
        for U in us:
            sup_y = np.maximum(sup_y, np.abs(np.broadcast_to(eta.d_y(x, t, Y, U), shape)))
            sup_u = max(sup_u, float(np.abs(np.broadcast_to(eta.d_u(x, t, Y, U), shape)).max()))
            if eta.d_uu is not None:
                eta.check_convex(x, t, Y, U)
    return float(np.sqrt(ps.grid.weight * np.sum(sup_y**2))), sup_u


def nonlinear_perturb_solve(ps: ProblemSpec, eta: EtaFunctional | None = None, xi: Field | None = None,
                            solver_opts: dict | None = None, rho: Field | None = None,
                            margin: float = 0.1) -> NonlinearResult:
    """Solve the problem with objective ``+ int eta(x, t, y, u)`` and state source ``+ xi``.

    Returns the solution and the norms bounding its distance to the
    unperturbed solution: ``|xi|_L2``, ``|sup_R |d_y eta||_L2`` and
    ``|d_u eta|_Linf`` over ``R = [-K_y, K_y] x [u_a, u_b]`` with ``K_y`` the
    observed state bound plus ``margin``.

    Raises
    ------
    AssumptionViolation
        ``d_uu eta < 0`` at a sampled point (``eta`` not convex in ``u``).
    """
    opts = {"tol": 1e-10, "max_iters": 50}
    opts.update(solver_opts or {})
    u0 = opts.pop("u_init", None)
    if u0 is None:
        u0 = 0.5 * (ps.u_a + ps.u_b)
    if eta is not None:
        y0 = solve_state(ps, u0, xi)
        eta_box_norms(ps, eta, (1 + margin) * max(norm(y0, "Linf"), 1.0), 11, 3)
    res = solve_ocp(ps, Perturbation(xi, eta, rho), u_init=u0, **opts)
    k_y = (1 + margin) * norm(res.psi.y, "Linf")
    norms = {"xi_L2": 0.0 if xi is None else norm(xi, "L2"), "eta_y_sup_L2": 0.0,
             "eta_u_Linf": 0.0, "K_y": k_y}
    if eta is not None:
        norms["eta_y_sup_L2"], norms["eta_u_Linf"] = eta_box_norms(ps, eta, max(k_y, 1e-12))
    return NonlinearResult(res.psi, res, norms)


def linear_state_eta(ps: ProblemSpec, weight) -> EtaFunctional:
    """``eta = w(x, t) y``: the objective gains ``int w y``."""

    def w(x, t):
        return np.asarray(weight(x, t), dtype=float)

    return EtaFunctional(lambda x, t, y, u: w(x, t) * y,
                         lambda x, t, y, u: w(x, t) + 0.0 * y,
                         lambda x, t, y, u: 0.0 * y,
                         lambda x, t, y, u: 0.0 * y)


# Tikhonov path


@dataclass
class TikhonovReport:
    records: list
    fits: dict
    fit_errors: dict
    monotone_u: bool
    monotone_y: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fits"] = {k: (None if v is None else v.to_dict()) for k, v in self.fits.items()}
        return d

    def to_csv(self) -> str:
        return table_csv(self.records, ("lambda", "dU_L1", "dY_L2", "iters", "gap", "converged"))


def tikhonov_path(ps: ProblemSpec, lambdas, solver_opts: dict | None = None,
                  psibar: Triple | None = None) -> TikhonovReport:
    """Solve the regularised problems from large to small ``lambda``, warm-starting along the path.

    ``psibar`` defaults to the conditional gradient solution of the
    unregularised problem.  Slopes of ``log |u_l - ubar|_L1`` and
    ``log |y_l - ybar|_L2`` against ``log lambda`` are fitted.
    """
    lams = sorted((float(v) for v in lambdas), reverse=True)
    if not lams or any(not v > 0 for v in lams):
        raise ValueError("lambdas must be positive")
    opts = {"tol": 1e-10, "max_iters": 200}
    opts.update(solver_opts or {})
    opts.pop("method", None)
    if psibar is None:
        base = solve_ocp(ps, tol=opts["tol"])
        psibar = base.psi
    u0 = psibar.u
    records = []
    for lam in lams:
        res = solve_ocp(ps, None, "tikhonov_fixed_point", u_init=u0, tikhonov_lambda=lam, **opts)
        records.append({"lambda": lam, "dU_L1": norm(res.psi.u - psibar.u, "L1"),
                        "dY_L2": norm(res.psi.y - psibar.y, "L2"), "iters": res.iterations,
                        "gap": res.gap, "converged": res.converged})
        if res.converged:
            u0 = res.psi.u
    ok = [r for r in records if r["converged"]]
    fits, errors = {}, {}
    for name, key in (("u", "dU_L1"), ("y", "dY_L2")):
        try:
            fits[name] = fit_exponent([(r["lambda"], r[key]) for r in ok])
        except FitError as exc:
            fits[name] = None
            errors[name] = str(exc)
    return TikhonovReport(records, fits, errors, _monotone([r["dU_L1"] for r in records]),
                          _monotone([r["dY_L2"] for r in records]))


# worked examples


def _solve_reference(ps: ProblemSpec, tol=1e-10, max_iters=50):
    res = solve_ocp(ps, tol=tol, max_iters=max_iters)
    return res, UbarData(ps, res.psi.u, res.psi.y, res.psi.p)


def example_neg_curvature(config=None, n_samples: int = 200, seed: int | None = None) -> dict:
    """Composite report for the negative-curvature example (``f = exp(y)``, ``L0 = y``).

    Sub-checks: the solver reaches ``u_a``; the structural constant of ``dbar``
    (and of ``g``) and absence of a singular set; the second variation is
    negative on every sample; first-order growth and ``gamma_1`` are positive;
    ``int pbar v = int z_v`` on every sample.  Failures are reported, not raised.
    """
    from .config import load_config

    cfg = config if config is not None else load_config("neg-curvature")
    seed = cfg.seed if seed is None else seed
    ps = cfg.build_problem()
    sol = cfg.section("solver")
    res, data = _solve_reference(ps, sol.get("tol", 1e-10), sol.get("max_iters", 50))
    out: dict = {"name": ps.name, "grid": ps.grid.to_dict()}
    dist = norm(res.psi.u - ps.u_a, "L1")
    out["solve"] = {"converged": res.converged, "iterations": res.iterations, "gap": res.gap,
                    "J": res.objective, "u_minus_ua_L1": dist}
    phi = phi_residual(ps, res.psi)
    out["residuals"] = {"dZ": phi.dZ, "gap": phi.gap}
    st_d = check_struct(data)
    st_g = check_struct(ps.g)
    out["struct"] = {"kappa_dbar": st_d.constant, "kappa_g": st_g.constant,
                     "eps_dbar": st_d.worst["eps"], "eps_g": st_g.worst["eps"],
                     "flags": st_d.flags}
    curv_samples = (Sampler(n_samples // 2, seed + 1, "bang_bang").draw(ps, data.u)
                    + Sampler(n_samples - n_samples // 2, seed + 2, "interior").draw(ps, data.u))
    j2, ident = [], []
    for u in curv_samples:
        v = u - data.u
        z = data.z(v)
        j2.append(data.J2(v, z))
        lhs = inner(data.p.step_start(), v)
        rhs = float(ps.grid.weight * z.samples().sum())
        ident.append(abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    out["curvature"] = {"max_J2": max(j2), "n": len(j2)}
    out["identity"] = {"max_rel_error": max(ident)}
    gf = check_growth_first(data, sampler=Sampler(n_samples, seed + 3, "mixed"))
    a1 = check_Ak(data, 1, "A", 0.1, Sampler(n_samples, seed + 4, "mixed"))
    out["growth_first"] = {"kappa_tilde": gf.constant, "n_degenerate": gf.n_degenerate}
    out["A1"] = {"gamma": a1.constant, "n_excluded": a1.n_excluded}
    out["passes"] = {
        "solve": bool(res.converged and dist <= 1e-8 and res.gap <= 1e-10),
        "struct": not st_d.flags,
        "negative_curvature": bool(max(j2) < 0),
        "growth_first": gf.positive,
        "A1": a1.positive,
        "identity": bool(max(ident) <= 1e-10),
    }
    return out


def example_tracking(config=None, n_samples: int = 200, seed: int | None = None,
                     sweep: bool = True) -> dict:
    """Composite report for the tracking example (target generated by ``u_a``).

    Sub-checks: ``ubar = u_a`` with ``J = 0``; ``gamma_2`` positive; the
    smallness indicator ``min(1 - pbar exp(ybar))`` (reported, flagged when
    below one half); optionally a smooth-``rho`` sweep with fitted exponents.
    """
    from .config import load_config

    cfg = config if config is not None else load_config("tracking")
    seed = cfg.seed if seed is None else seed
    ps = cfg.build_problem()
    sol = cfg.section("solver")
    res, data = _solve_reference(ps, sol.get("tol", 1e-10), sol.get("max_iters", 50))
    dist = norm(res.psi.u - ps.u_a, "L1")
    out: dict = {"name": ps.name, "grid": ps.grid.to_dict()}
    out["solve"] = {"converged": res.converged, "iterations": res.iterations, "gap": res.gap,
                    "J": res.objective, "u_minus_ua_L1": dist}
    x, t = ps.grid.space_time()
    fy = np.broadcast_to(ps.f_yy(x, t, data.y.values[:, 1:]), data.curvature.shape)
    small = float(np.min(1.0 - data.p.values[:, :-1] * fy))
    out["smallness"] = {"min_1_minus_p_fyy": small, "holds": small >= 0.5}
    a2 = check_Ak(data, 2, "A", 0.1, Sampler(n_samples, seed + 5, "mixed"))
    out["A2"] = {"gamma": a2.constant, "n_excluded": a2.n_excluded}
    out["passes"] = {"solve": bool(res.converged and dist <= 1e-8 and abs(res.objective) <= 1e-12),
                     "A2": a2.positive, "smallness": small >= 0.5}
    if sweep:
        sw = cfg.section("sweep")
        fam = family_from_config(ps, sw)
        try:
            rep = perturb_sweep_smooth_rho(ps, res.psi, fam, {"method": "projected_gradient",
                                                             "tol": 1e-10, "max_iters": 400})
            out["sweep"] = rep.to_dict()
            th = rep.theta("yp")
            out["passes"]["sweep_yp"] = th is not None and th >= rep.threshold
        except FitError as exc:
            out["sweep"] = {"error": str(exc)}
            out["passes"]["sweep_yp"] = False
    return out


def family_from_config(ps: ProblemSpec, sweep: dict) -> PerturbationFamily:
    """Family from a ``sweep`` config section (shape entries are expression strings in ``x, t``)."""
    from .expr import parse

    kind = sweep.get("family", "rho_field")
    shape = {}
    for key, src in (sweep.get("shape") or {}).items():
        if key not in ("xi", "eta", "rho"):
            raise ValueError(f"unknown shape component {key!r}")
        e = parse(src, ps.grid.dim)
        if kind == "eta_functional" and key == "eta":
            shape["eta"] = linear_state_eta(ps, lambda x, t, e=e: e(x, t, 0.0))
        else:
            shape[key] = (lambda x, t, e=e: e(x, t, 0.0))
    return make_family(ps, kind, shape, sweep.get("magnitudes", []))


# linear-quadratic toy with a dense oracle


def lq_toy(grid: Grid, bound: float = 100.0) -> ProblemSpec:
    """``f = y``, ``L0 = (y - yd)^2 / 2`` with ``yd = sin(pi x) sin(pi t)``, ``g = x / 10``, box ``[-bound, bound]``.

    With a Tikhonov term the reduced problem is a strictly convex quadratic
    whose box constraints stay inactive, so its solution map is affine.
    """
    def yd(x, t):
        return np.sin(np.pi * x) * np.sin(np.pi * t)

    return make_problem(grid, f=lambda x, t, y: y, f_y=lambda x, t, y: np.ones_like(y),
                        f_yy=lambda x, t, y: np.zeros_like(y),
                        L0=lambda x, t, y: 0.5 * (y - yd(x, t)) ** 2,
                        L0_y=lambda x, t, y: y - yd(x, t),
                        L0_yy=lambda x, t, y: np.ones_like(y),
                        g=lambda x, t: 0.1 * x + 0.0 * t, u_a=-bound, u_b=bound, name="lq-toy")


def lq_oracle(grid: Grid, lam: float, zeta: Perturbation | None = None) -> dict:
    """Dense KKT solution of the discretised LQ toy (1D, ``a = 1``), independent of the time stepper.

    The whole space-time implicit Euler system ``E Y = U + Xi + y0/dt`` is
    assembled as one dense matrix; the reduced optimality condition
    ``(S^T S + lam I) U = -S^T (S b - Yd + eta) - g + rho`` with ``S = E^{-1}``
    is then solved directly.  Returns nodal ``y``, ``p`` and interval ``u`` arrays.
    """
    if grid.dim != 1:
        raise ValueError("the dense oracle is one-dimensional")
    n, nt, dt, dx = grid.n_nodes, grid.nt, grid.dt, grid.dx
    lap = (2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)) / dx**2
    M = np.eye(n) / dt + lap + np.eye(n)
    E = np.zeros((n * nt, n * nt))
    for j in range(nt):
        E[j * n:(j + 1) * n, j * n:(j + 1) * n] = M
        if j > 0:
            E[j * n:(j + 1) * n, (j - 1) * n:j * n] = -np.eye(n) / dt
    x = grid.axis
    T = grid.times
    Yd = np.concatenate([np.sin(np.pi * x) * np.sin(np.pi * T[j + 1]) for j in range(nt)])
    G = np.concatenate([0.1 * x for _ in range(nt)])
    zeta = zeta or Perturbation()

    def flat(f):
        return np.zeros(n * nt) if f is None else f.samples().T.ravel()

    Xi, Eta, Rho = flat(zeta.xi), flat(zeta.eta_field), flat(zeta.rho)
    S = np.linalg.inv(E)
    b = S @ Xi
    H = S.T @ S + lam * np.eye(n * nt)
    U = np.linalg.solve(H, -S.T @ (b - Yd + Eta) - G + Rho)
    Y = S @ U + b
    P = np.linalg.solve(E.T, Y - Yd + Eta)
    y = np.zeros((n, nt + 1))
    y[:, 1:] = Y.reshape(nt, n).T
    p = np.zeros((n, nt + 1))
    p[:, :-1] = P.reshape(nt, n).T
    return {"y": y, "p": p, "u": U.reshape(nt, n).T}


def lq_oracle_triple(grid: Grid, lam: float, zeta: Perturbation | None = None) -> Triple:
    o = lq_oracle(grid, lam, zeta)
    return Triple(Field(grid, NODAL, o["y"]), Field(grid, NODAL, o["p"]), Field(grid, INTERVAL, o["u"]))


def lq_lipschitz_constant(grid: Grid, lam: float, shape: Perturbation) -> float:
    """``d_Y(psi(shape), psibar) / d_Z(shape, 0)`` from the oracle; exact because the map is affine."""
    base = lq_oracle_triple(grid, lam)
    pert = lq_oracle_triple(grid, lam, shape)
    return metric_dY(pert, base) / metric_dZ(shape)
