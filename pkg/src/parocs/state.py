"""Problem data, the semilinear state solve and its first and second linearisations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .linpde import EllipticOperator, assemble_operator, solve_linear_forward
from .mesh import INTERVAL, NODAL, Field, Grid, norm


class AssumptionViolation(ValueError):
    """Problem data breaks a standing assumption (monotone f, convexity, bounds)."""


class NewtonFailure(RuntimeError):
    def __init__(self, step: int, residual: float, iterations: int):
        super().__init__(f"Newton failed at time step {step}: residual {residual:.3e} "
                         f"after {iterations} iterations")
        self.step = step
        self.residual = residual
        self.iterations = iterations


def _zero(x, t, y):
    return np.zeros_like(y)


def evaluate(fn: Callable, x, t, y) -> np.ndarray:
    """Evaluate a pointwise coefficient ``fn(x, t, y)`` and broadcast to ``y``'s shape."""
    y = np.asarray(y, dtype=float)
    return np.array(np.broadcast_to(fn(x, t, y), y.shape), dtype=float)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """All data of the control problem.

    The objective integrand is ``L0(x, t, y) + (m y + g) u`` and the state
    equation ``y_t + A y + f(x, t, y) = u``, with ``u_a <= u <= u_b``.
    Pointwise callables take ``(x, t, y)``; ``x`` is an array in 1D and a pair
    of arrays in 2D.
    """

    grid: Grid
    op: EllipticOperator
    f: Callable
    f_y: Callable
    f_yy: Callable
    L0: Callable
    L0_y: Callable
    L0_yy: Callable
    m: float
    g: Field
    y0: np.ndarray
    u_a: Field
    u_b: Field
    name: str = "problem"

    def replace(self, **changes) -> "ProblemSpec":
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        data.update(changes)
        return ProblemSpec(**data)


def _interval(grid: Grid, value) -> Field:
    if isinstance(value, Field):
        value._require(INTERVAL)
        return value
    if callable(value):
        return Field.from_function(grid, INTERVAL, value)
    return Field.constant(grid, INTERVAL, value)


def _spatial(grid: Grid, value) -> np.ndarray:
    if callable(value):
        return np.broadcast_to(np.asarray(value(grid.coords), dtype=float), (grid.n_nodes,)).copy()
    return np.broadcast_to(np.asarray(value, dtype=float), (grid.n_nodes,)).copy()


def check_derivative(fn, dfn, grid: Grid, rng, n_points: int = 10, y_range=(-2.0, 2.0),
                     h: float = 1e-5, tol: float = 1e-5) -> float:
    """Largest central-difference mismatch of ``dfn`` against ``fn`` at random points."""
    idx = rng.integers(0, grid.n_nodes, n_points)
    c = grid.coords
    x = c[idx] if grid.dim == 1 else tuple(ci[idx] for ci in c)
    t = rng.uniform(0.0, grid.horizon, n_points)
    y = rng.uniform(*y_range, n_points)
    fd = (evaluate(fn, x, t, y + h) - evaluate(fn, x, t, y - h)) / (2 * h)
    exact = evaluate(dfn, x, t, y)
    err = np.abs(fd - exact) / (1.0 + np.abs(exact))
    return float(err.max())


def make_problem(grid: Grid, *, a=1.0, f=None, f_y=None, f_yy=None, L0=None, L0_y=None,
                 L0_yy=None, m: float = 0.0, g=0.0, y0=0.0, u_a=0.0, u_b=1.0,
                 name: str = "problem", check: bool = True) -> ProblemSpec:
    """Assemble a :class:`ProblemSpec`, filling omitted functions with zero.

    When ``f`` (or ``L0``) is given its derivatives must be given too; they are
    cross-checked by finite differences at ten random points, where ``f_y >= 0``
    is checked as well.
    """
    if f is not None and (f_y is None or f_yy is None):
        raise ValueError("f needs f_y and f_yy")
    if L0 is not None and (L0_y is None or L0_yy is None):
        raise ValueError("L0 needs L0_y and L0_yy")
    f, f_y, f_yy = (fn or _zero for fn in (f, f_y, f_yy))
    L0, L0_y, L0_yy = (fn or _zero for fn in (L0, L0_y, L0_yy))
    ua, ub = _interval(grid, u_a), _interval(grid, u_b)
    if np.any(ua.values >= ub.values):
        raise AssumptionViolation("control bounds need u_a < u_b at every sample")
    if check:
        rng = np.random.default_rng(12345)
        for lo, hi, label in ((f, f_y, "f_y"), (f_y, f_yy, "f_yy"),
                              (L0, L0_y, "L0_y"), (L0_y, L0_yy, "L0_yy")):
            err = check_derivative(lo, hi, grid, rng)
            if err > 1e-5:
                raise AssumptionViolation(f"{label} is inconsistent with its primitive "
                                          f"(finite-difference mismatch {err:.2e})")
        idx = rng.integers(0, grid.n_nodes, 10)
        c = grid.coords
        xs = c[idx] if grid.dim == 1 else tuple(ci[idx] for ci in c)
        fy = evaluate(f_y, xs, rng.uniform(0.0, grid.horizon, 10), rng.uniform(-2.0, 2.0, 10))
        if fy.min() < 0:
            raise AssumptionViolation(f"f is decreasing in y at a sampled point (f_y = {fy.min():.3e})")
    return ProblemSpec(grid=grid, op=assemble_operator(grid, a), f=f, f_y=f_y, f_yy=f_yy,
                       L0=L0, L0_y=L0_y, L0_yy=L0_yy, m=float(m), g=_interval(grid, g),
                       y0=_spatial(grid, y0), u_a=ua, u_b=ub, name=name)


def solve_state(ps: ProblemSpec, u: Field, xi: Field | None = None, *, tol: float = 1e-12,
                max_iter: int = 50) -> Field:
    """Implicit Euler for ``y_t + A y + f(x, t, y) = u + xi``, Newton's method at each step.

    The step residual is declared converged once its max-norm drops below
    ``tol * (1 + |b|_inf + (1/dt + |A|_inf) |y|_inf)``, with ``b`` the step
    right-hand side; the operator term keeps the test above rounding on fine grids.
    One more Newton step is taken once the test holds, which brings the step
    error down to rounding level at quadratic convergence.
    """
    grid, op = ps.grid, ps.op
    u._require(INTERVAL)
    rhs = u.values if xi is None else u.values + xi.values
    x = grid.coords
    dt = grid.dt
    y = np.zeros(grid.shape(NODAL))
    y[:, 0] = ps.y0
    for j in range(grid.nt):
        t = grid.times[j + 1]
        prev = y[:, j]
        b = rhs[:, j] + prev / dt
        bmax = np.abs(b).max()
        cur = prev.copy()
        res = np.inf
        for it in range(max_iter + 1):
            F = cur / dt + op.apply(cur) + evaluate(ps.f, x, t, cur) - b
            res = np.abs(F).max()
            done = res <= tol * (1.0 + bmax + (1.0 / dt + op.inf_norm) * np.abs(cur).max())
            if done and res == 0.0:
                break
            if not done and it == max_iter:
                raise NewtonFailure(j, float(res), it)
            fy = evaluate(ps.f_y, x, t, cur)
            if fy.min() < 0:
                raise AssumptionViolation(f"f_y < 0 encountered at step {j} (min {fy.min():.3e})")
            cur = cur - op.solve_shifted(1.0 / dt + fy, F)
            if done:
                break
        y[:, j + 1] = cur
    return Field(grid, NODAL, y)


def state_alpha(ps: ProblemSpec, y: Field) -> Field:
    """``f_y(x, t, y)`` sampled at every time level (the linearised zero-order coefficient)."""
    x, t = ps.grid.space_time(np.arange(ps.grid.nt + 1))
    a = evaluate(ps.f_y, x, t, y.values)
    if a.min() < 0:
        raise AssumptionViolation(f"f_y < 0 along the state (min {a.min():.3e})")
    return Field(ps.grid, NODAL, a)


def solve_linearized(ps: ProblemSpec, y_u: Field, v: Field, alpha: Field | None = None) -> Field:
    """``z`` solving ``z_t + A z + f_y(y_u) z = v``, ``z(0) = 0``."""
    if alpha is None:
        alpha = state_alpha(ps, y_u)
    return solve_linear_forward(ps.op, alpha, v)


def solve_second_linearized(ps: ProblemSpec, y_u: Field, z_v: Field, z_w: Field,
                            alpha: Field | None = None) -> Field:
    """``omega`` solving the linearised equation with source ``-f_yy(y_u) z_v z_w``."""
    if alpha is None:
        alpha = state_alpha(ps, y_u)
    x, t = ps.grid.space_time()
    fyy = evaluate(ps.f_yy, x, t, y_u.values[:, 1:])
    # product of z's first so that omega(v, w) == omega(w, v) bitwise
    rhs = Field(ps.grid, INTERVAL, -fyy * (z_v.values[:, 1:] * z_w.values[:, 1:]))
    return solve_linear_forward(ps.op, alpha, rhs)


@dataclass
class TaylorReport:
    dy_linf: float
    dy_l2: float
    dy_l4: float
    z_l2: float
    z_linf: float
    phi_linf: float
    phi_l2: float
    linf_ratio: float | None
    z_over_dy_l2: float | None
    z_over_dy_linf: float | None
    comparison_ok: bool | None


def taylor_check(ps: ProblemSpec, u_bar: Field, u: Field) -> TaylorReport:
    """Remainder ``phi = y_u - y_ubar - z_{ubar, u - ubar}`` and the comparison ratios.

    ``linf_ratio`` is ``|phi|_inf / |y_u - y_ubar|_{L4}^2``.  The comparison
    ratios ``|z|_X / |y_u - y_ubar|_X`` lie in ``[1/2, 3/2]`` for controls whose
    states are uniformly close; ``comparison_ok`` records that.
    """
    yb = solve_state(ps, u_bar)
    yu = solve_state(ps, u)
    z = solve_linearized(ps, yb, u - u_bar)
    dy = yu - yb
    phi = dy - z
    dl2, dlinf, dl4 = norm(dy, "L2"), norm(dy, "Linf"), norm(dy, 4)
    zl2, zlinf = norm(z, "L2"), norm(z, "Linf")
    if dlinf == 0.0:
        return TaylorReport(0.0, 0.0, 0.0, zl2, zlinf, norm(phi, "Linf"), norm(phi, "L2"),
                            None, None, None, None)
    r2, rinf = zl2 / dl2, zlinf / dlinf
    return TaylorReport(dlinf, dl2, dl4, zl2, zlinf, norm(phi, "Linf"), norm(phi, "L2"),
                        norm(phi, "Linf") / dl4**2, r2, rinf,
                        bool(0.5 <= r2 <= 1.5 and 0.5 <= rinf <= 1.5))


@dataclass
class RemainderReport:
    ts: list
    first_order: list
    second_order: list
    slope_first: float
    slope_second: float


def taylor_remainders(ps: ProblemSpec, u: Field, v: Field, ts=(1e-1, 3e-2, 1e-2, 3e-3, 1e-3)) -> RemainderReport:
    """L2 norms of ``y_{u+tv} - y_u - t z`` and ``... - t^2/2 omega`` with log-log slopes."""
    y = solve_state(ps, u)
    alpha = state_alpha(ps, y)
    z = solve_linearized(ps, y, v, alpha)
    w = solve_second_linearized(ps, y, z, z, alpha)
    r1, r2 = [], []
    for t in ts:
        yt = solve_state(ps, u + t * v)
        r1.append(norm(yt - y - t * z, "L2"))
        r2.append(norm(yt - y - t * z - 0.5 * t * t * w, "L2"))
    lt = np.log(ts)
    s1 = float(np.polyfit(lt, np.log(r1), 1)[0])
    s2 = float(np.polyfit(lt, np.log(r2), 1)[0])
    return RemainderReport(list(ts), r1, r2, s1, s2)
