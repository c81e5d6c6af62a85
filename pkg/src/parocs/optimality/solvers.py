"""Solvers for the (perturbed, optionally Tikhonov-regularised) control problem."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..mesh import Field, inner
from ..objective import Objective, Perturbation
from ..state import ProblemSpec, state_alpha
from .system import Triple, bang_bang_selection, project_admissible, require_feasible

log = logging.getLogger(__name__)

METHODS = ("conditional_gradient", "projected_gradient", "tikhonov_fixed_point")
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class OCPResult:
    psi: Triple
    converged: bool
    iterations: int
    objective: float
    gap: float
    method: str
    log: list = field(default_factory=list)


class _Eval:
    """One evaluated iterate: control, state, adjoint, gradient field, value, gap."""

    def __init__(self, obj: Objective, u: Field):
        self.u = u
        self.y = obj.state(u)
        self.J = obj.value(u, self.y)
        self._obj = obj
        self._p = None
        self._d = None

    @property
    def p(self):
        if self._p is None:
            self._p = self._obj.adjoint(self.u, self.y, state_alpha(self._obj.ps, self.y))
        return self._p

    @property
    def d(self) -> Field:
        if self._d is None:
            self._d = self._obj.gradient(self.u, self.y, self.p)
        return self._d

    def selection(self) -> np.ndarray:
        return bang_bang_selection(self._obj.ps, self.d.values, self.u.values)

    def gap(self) -> float:
        vstar = self.selection()
        return float(self._obj.ps.grid.weight * np.sum(self.d.values * (self.u.values - vstar)))


def _golden_section(phi, lo: float, hi: float, tol: float, f_lo: float, f_hi: float):
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    e = a + GOLDEN * (b - a)
    fc, fe = phi(c), phi(e)
    while b - a > tol:
        if fc <= fe:
            b, e, fe = e, c, fc
            c = b - GOLDEN * (b - a)
            fc = phi(c)
        else:
            a, c, fc = c, e, fe
            e = a + GOLDEN * (b - a)
            fe = phi(e)
    cands = [(f_lo, lo), (f_hi, hi), (fc, c), (fe, e)]
    return min(cands, key=lambda p: (p[0], -p[1]))


def _conditional_gradient(obj, u, tol, max_iters, opts, history):
    ps = obj.ps
    cur = _Eval(obj, u)
    ls_tol = opts.get("line_search_tol", 1e-8)
    for it in range(max_iters):
        gap = cur.gap()
        history.append({"iter": it, "J": cur.J, "gap": gap, "step": None})
        if gap <= tol:
            return cur, True, it
        v = cur.u.with_values(cur.selection())
        direction = v - cur.u
        cache = {}

        def phi(a):
            if a not in cache:
                cache[a] = obj.value(cur.u + a * direction)
            return cache[a]

        f_one = obj.value(v)
        f_best, a_best = _golden_section(phi, 0.0, 1.0, ls_tol, cur.J, f_one)
        if a_best <= 0.0:
            log.warning("conditional gradient stalled at iteration %d (gap %.3e)", it, gap)
            return cur, False, it
        new_u = v if a_best == 1.0 else project_admissible(ps, cur.u + a_best * direction)
        history[-1]["step"] = a_best
        cur = _Eval(obj, new_u)
    gap = cur.gap()
    history.append({"iter": max_iters, "J": cur.J, "gap": gap, "step": None})
    return cur, gap <= tol, max_iters


def _projected_gradient(obj, u, tol, max_iters, opts, history):
    ps = obj.ps
    cur = _Eval(obj, u)
    sigma = opts.get("step", 1.0)
    armijo = opts.get("armijo", 1e-4)
    prev = None
    for it in range(max_iters):
        gap = cur.gap()
        history.append({"iter": it, "J": cur.J, "gap": gap, "step": None})
        if gap <= tol:
            return cur, True, it
        if prev is not None:
            s = cur.u - prev.u
            r = cur.d - prev.d
            sr = inner(s, r)
            if sr > 0:
                sigma = inner(s, s) / sr
        for _ in range(60):
            trial = project_admissible(ps, cur.u - sigma * cur.d)
            cand = _Eval(obj, trial)
            if cand.J <= cur.J + armijo * inner(cur.d, trial - cur.u):
                break
            sigma *= 0.5
        else:
            log.warning("projected gradient line search failed at iteration %d", it)
            return cur, False, it
        history[-1]["step"] = sigma
        prev, cur = cur, cand
    gap = cur.gap()
    history.append({"iter": max_iters, "J": cur.J, "gap": gap, "step": None})
    return cur, gap <= tol, max_iters


def _tikhonov_fixed_point(obj, u, tol, max_iters, opts, history):
    ps = obj.ps
    lam = obj.tikhonov
    if not lam > 0:
        raise ValueError("tikhonov_fixed_point needs tikhonov_lambda > 0")
    omega = opts.get("damping", 1.0)
    halvings = 0
    cur = _Eval(obj, u)
    last_res = math.inf
    for it in range(max_iters):
        gap = cur.gap()
        target = project_admissible(ps, cur.u.with_values(-(cur.d.values - lam * cur.u.values) / lam))
        res = float(np.abs(target.values - cur.u.values).max())
        history.append({"iter": it, "J": cur.J, "gap": gap, "step": omega, "residual": res})
        if gap <= tol:
            return cur, True, it
        if res == 0.0:
            return cur, False, it
        if res > last_res:
            halvings += 1
            if halvings > 4:
                log.warning("Tikhonov fixed point stalled (residual %.3e)", res)
                return cur, False, it
            omega *= 0.5
        last_res = res
        new = target if omega == 1.0 else project_admissible(ps, (1 - omega) * cur.u + omega * target)
        cur = _Eval(obj, new)
    gap = cur.gap()
    history.append({"iter": max_iters, "J": cur.J, "gap": gap, "step": omega})
    return cur, gap <= tol, max_iters


_DISPATCH = {
    "conditional_gradient": _conditional_gradient,
    "projected_gradient": _projected_gradient,
    "tikhonov_fixed_point": _tikhonov_fixed_point,
}


def solve_ocp(ps: ProblemSpec, zeta: Perturbation | None = None,
              method: str = "conditional_gradient", u_init: Field | None = None,
              tol: float = 1e-10, max_iters: int = 50, tikhonov_lambda: float = 0.0,
              **opts) -> OCPResult:
    """Find a point of the (perturbed) Pontryagin system.

    The returned triple satisfies ``vi_gap <= tol`` when ``converged`` is true;
    otherwise it is the last iterate reached.  ``tikhonov_lambda`` adds
    ``(lambda/2) int u^2`` to the objective for every method.
    """
    if method not in _DISPATCH:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if u_init is None:
        u_init = 0.5 * (ps.u_a + ps.u_b)
    require_feasible(ps, u_init)
    obj = Objective(ps, zeta, tikhonov_lambda)
    history: list = []
    cur, ok, iters = _DISPATCH[method](obj, u_init, tol, max_iters, opts, history)
    gap = cur.gap()
    if not ok:
        log.info("%s did not converge: gap %.3e after %d iterations", method, gap, iters)
    return OCPResult(Triple(cur.y, cur.p, cur.u), bool(ok), iters, cur.J, gap, method, history)
