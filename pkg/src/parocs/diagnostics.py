"""Derivative and discretisation checks shared by the CLI and the test-suite."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .mesh import INTERVAL, Field, inner
from .objective import Objective, directional_J1, second_variation
from .optimality import ConeSpec, Sampler, UbarData, cone_membership
from .state import ProblemSpec, taylor_remainders


def random_pairs(ps: ProblemSpec, count: int, seed: int):
    """Seeded ``(u, v)`` pairs: ``u`` smooth and strictly inside the box, ``v`` smooth with unit sup norm."""
    rng = np.random.default_rng(seed)
    g = ps.grid
    shape = (g.n_axis,) * g.dim + (g.nt,)
    lo, hi = ps.u_a.values, ps.u_b.values
    out = []
    for _ in range(count):
        a = gaussian_filter(rng.standard_normal(shape), 2.0).reshape(g.shape(INTERVAL))
        a = (a - a.min()) / max(np.ptp(a), 1e-300)
        u = Field(g, INTERVAL, lo + (hi - lo) * (0.1 + 0.8 * a))
        b = gaussian_filter(rng.standard_normal(shape), 2.0).reshape(g.shape(INTERVAL))
        v = Field(g, INTERVAL, b / max(np.abs(b).max(), 1e-300))
        out.append((u, v))
    return out


def duality_check(ps: ProblemSpec, count: int = 20, seed: int = 0, tol: float = 1e-10) -> dict:
    """``J'(u) v`` via the adjoint against the linearised state; passes if every pair is within ``tol (1 + |value|)``."""
    worst = 0.0
    recs = []
    for u, v in random_pairs(ps, count, seed):
        a = directional_J1(ps, u, v, "adjoint")
        b = directional_J1(ps, u, v, "linearized")
        err = abs(a - b) / (1.0 + abs(a))
        worst = max(worst, err)
        recs.append({"adjoint": a, "linearized": b, "scaled_error": err})
    return {"check": "duality", "max_scaled_error": worst, "tol": tol, "pass": worst <= tol,
            "records": recs}


def gradient_check(ps: ProblemSpec, count: int = 5, seed: int = 0, h: float = 1e-4,
                   tol: float = 1e-5) -> dict:
    """``J'(u) v`` against the central difference ``(J(u + h v) - J(u - h v)) / 2h``."""
    obj = Objective(ps)
    worst = 0.0
    recs = []
    for u, v in random_pairs(ps, count, seed):
        g = inner(obj.gradient(u), v)
        fd = (obj.value(u + h * v) - obj.value(u - h * v)) / (2 * h)
        err = abs(g - fd) / max(abs(g), 1e-300)
        worst = max(worst, err)
        recs.append({"adjoint": g, "fd": fd, "rel_error": err})
    return {"check": "gradient", "max_rel_error": worst, "tol": tol, "step": h,
            "pass": worst <= tol, "records": recs}


def hessian_check(ps: ProblemSpec, count: int = 5, seed: int = 0, h: float = 1e-3,
                  tol: float = 1e-4) -> dict:
    """``J''(u)(v, v)`` against the central difference of ``J'(. ) v``."""
    worst = 0.0
    recs = []
    for u, v in random_pairs(ps, count, seed):
        j2 = second_variation(ps, u, v, v)
        fd = (directional_J1(ps, u + h * v, v) - directional_J1(ps, u - h * v, v)) / (2 * h)
        err = abs(j2 - fd) / max(abs(j2), 1e-300)
        worst = max(worst, err)
        recs.append({"J2": j2, "fd": fd, "rel_error": err})
    return {"check": "hessian", "max_rel_error": worst, "tol": tol, "step": h,
            "pass": worst <= tol, "records": recs}


def taylor_direction(ps: ProblemSpec, amplitude: float = 10.0):
    """Base point midway in the box and a smooth large-amplitude direction."""
    g = ps.grid
    u = 0.5 * (ps.u_a + ps.u_b)
    v = Field.from_function(g, INTERVAL, lambda x, t: amplitude * np.sin(np.pi * (x if g.dim == 1 else x[0]))
                            * np.cos(3.0 * t))
    return u, v


def taylor_check(ps: ProblemSpec, amplitude: float = 10.0, ts=(1e-1, 3e-2, 1e-2, 3e-3, 1e-3)) -> dict:
    """Log-log slopes of the first and second order state Taylor remainders."""
    u, v = taylor_direction(ps, amplitude)
    rep = taylor_remainders(ps, u, v, ts)
    ok = 1.9 <= rep.slope_first <= 2.1 and 2.9 <= rep.slope_second <= 3.1
    return {"check": "taylor", "slope_first": rep.slope_first, "slope_second": rep.slope_second,
            "ts": list(ts), "first_order": rep.first_order, "second_order": rep.second_order,
            "pass": bool(ok)}


def cone_check(data: UbarData, tau: float = 0.05, count: int = 50, seed: int = 0) -> dict:
    """Construction checks of the cones: ``0`` is in every cone; sampled directions zeroed
    where ``|dbar| > tau`` are in ``D``; membership is invariant under positive scaling."""
    ps = data.ps
    zero = Field.zeros(ps.grid, INTERVAL)
    zero_ok = all(cone_membership(data, zero, ConeSpec(tau, k)).member for k in "DGEC")
    d_ok, scale_ok = True, True
    for u in Sampler(count, seed, "mixed").draw(ps, data.u):
        v = u - data.u
        v = v.with_values(np.where(np.abs(data.d.values) > tau, 0.0, v.values))
        for kind in "DGE":
            r1 = cone_membership(data, v, ConeSpec(tau, kind))
            r2 = cone_membership(data, 3.0 * v, ConeSpec(tau, kind))
            if kind == "D" and not r1.member:
                d_ok = False
            if r1.member and not r2.member:
                scale_ok = False
    return {"check": "cones", "tau": tau, "zero_in_all": zero_ok, "constructed_in_D": d_ok,
            "scaling_invariant": scale_ok, "pass": bool(zero_ok and d_ok and scale_ok)}
