"""Objective value, adjoint state, first and second variations, and dH/du.

Discrete conventions: the objective integrates ``L0(y^{j+1}) + (m y^{j+1} + g^j) u^j``
over intervals ``j``.  The adjoint is the transpose of the linearised state
solve, so its level ``j`` pairs with interval ``j``; this is what makes the two
forms of ``J'(u) v`` agree to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .linpde import solve_linear_backward
from .mesh import INTERVAL, NODAL, Field, inner
from .state import (AssumptionViolation, ProblemSpec, evaluate, solve_linearized, solve_state,
                    state_alpha)


@dataclass(frozen=True)
class EtaFunctional:
    """A state- and control-dependent objective perturbation ``eta(x, t, y, u)``.

    ``d_uu`` must be nonnegative (convexity in ``u``); it is sampled by
    :meth:`check_convex`.
    """

    fn: Callable
    d_y: Callable
    d_u: Callable
    d_uu: Optional[Callable] = None

    def check_convex(self, x, t, y, u):
        if self.d_uu is None:
            return
        vals = np.asarray(self.d_uu(x, t, y, u))
        if np.min(vals) < 0:
            raise AssumptionViolation("eta is not convex in u (d_uu < 0 sampled)")


@dataclass(frozen=True)
class Perturbation:
    """``zeta = (xi, eta, rho)``.

    ``xi`` (interval) enters the state equation, a nodal ``eta`` adds ``+int eta y``
    to the objective and ``rho`` (interval) adds ``-int rho u``.  ``eta`` may be an
    :class:`EtaFunctional` instead.  ``rho_smooth`` holds ``L* rho`` when ``rho``
    is smooth enough for it to be meaningful.
    """

    xi: Optional[Field] = None
    eta: object = None
    rho: Optional[Field] = None
    rho_smooth: Optional[Field] = None

    def scaled(self, s: float) -> "Perturbation":
        def sc(v):
            return None if v is None else s * v

        eta = self.eta
        if isinstance(eta, EtaFunctional):
            e = eta
            eta = EtaFunctional(lambda x, t, y, u: s * e.fn(x, t, y, u),
                                lambda x, t, y, u: s * e.d_y(x, t, y, u),
                                lambda x, t, y, u: s * e.d_u(x, t, y, u),
                                None if e.d_uu is None else (lambda x, t, y, u: s * e.d_uu(x, t, y, u)))
        else:
            eta = sc(eta)
        return Perturbation(sc(self.xi), eta, sc(self.rho), sc(self.rho_smooth))

    @property
    def eta_field(self) -> Optional[Field]:
        return self.eta if isinstance(self.eta, Field) else None

    @property
    def eta_functional(self) -> Optional[EtaFunctional]:
        return self.eta if isinstance(self.eta, EtaFunctional) else None


@dataclass
class AdjointState:
    p: Field
    source_control: Field
    eta_used: object = None


class Objective:
    """The (possibly perturbed, possibly Tikhonov-regularised) reduced objective.

    ``J_zeta(u) = J(u; xi) + int eta y - int rho u + (lambda/2) int u^2``
    (or ``+ int eta(x, t, y, u)`` for a functional ``eta``).
    """

    def __init__(self, ps: ProblemSpec, zeta: Perturbation | None = None, tikhonov: float = 0.0):
        self.ps = ps
        self.zeta = zeta or Perturbation()
        self.tikhonov = float(tikhonov)
        self._x, self._t = ps.grid.space_time()

    def state(self, u: Field) -> Field:
        return solve_state(self.ps, u, self.zeta.xi)

    def value(self, u: Field, y: Field | None = None) -> float:
        ps, z = self.ps, self.zeta
        if y is None:
            y = self.state(u)
        Y, U = y.values[:, 1:], u.values
        dens = evaluate(ps.L0, self._x, self._t, Y) + (ps.m * Y + ps.g.values) * U
        if z.eta_field is not None:
            dens = dens + z.eta_field.values[:, 1:] * Y
        if z.eta_functional is not None:
            dens = dens + np.broadcast_to(z.eta_functional.fn(self._x, self._t, Y, U), Y.shape)
        if z.rho is not None:
            dens = dens - z.rho.values * U
        if self.tikhonov:
            dens = dens + 0.5 * self.tikhonov * U * U
        return float(ps.grid.weight * dens.sum())

    def adjoint_source(self, u: Field, y: Field) -> Field:
        ps, z = self.ps, self.zeta
        Y, U = y.values[:, 1:], u.values
        q = np.zeros(ps.grid.shape(NODAL))
        q[:, 1:] = evaluate(ps.L0_y, self._x, self._t, Y) + ps.m * U
        if z.eta_field is not None:
            q[:, 1:] += z.eta_field.values[:, 1:]
        if z.eta_functional is not None:
            q[:, 1:] += np.broadcast_to(z.eta_functional.d_y(self._x, self._t, Y, U), Y.shape)
        return Field(ps.grid, NODAL, q)

    def adjoint(self, u: Field, y: Field, alpha: Field | None = None) -> Field:
        if alpha is None:
            alpha = state_alpha(self.ps, y)
        return solve_linear_backward(self.ps.op, alpha, self.adjoint_source(u, y))

    def control_terms(self, u: Field, y: Field) -> np.ndarray:
        """Explicit u-derivative of the integrand, excluding the adjoint."""
        ps, z = self.ps, self.zeta
        Y, U = y.values[:, 1:], u.values
        d = ps.m * Y + ps.g.values
        if z.rho is not None:
            d = d - z.rho.values
        if z.eta_functional is not None:
            d = d + np.broadcast_to(z.eta_functional.d_u(self._x, self._t, Y, U), Y.shape)
        if self.tikhonov:
            d = d + self.tikhonov * U
        return d

    def gradient(self, u: Field, y: Field | None = None, p: Field | None = None) -> Field:
        """The field ``d`` with ``J_zeta'(u) v = inner(d, v)``."""
        if y is None:
            y = self.state(u)
        if p is None:
            p = self.adjoint(u, y)
        return Field(self.ps.grid, INTERVAL, p.values[:, :-1] + self.control_terms(u, y))


def eval_J(ps: ProblemSpec, u: Field, zeta: Perturbation | None = None, tikhonov: float = 0.0) -> float:
    return Objective(ps, zeta, tikhonov).value(u)


def solve_adjoint(ps: ProblemSpec, u: Field, y_u: Field | None = None,
                  eta=None) -> AdjointState:
    """Backward solve of ``-p_t + A p + f_y(y_u) p = L0_y(y_u) + m u (+ eta terms)``."""
    zeta = Perturbation(eta=eta) if eta is not None else None
    obj = Objective(ps, zeta)
    if y_u is None:
        y_u = obj.state(u)
    return AdjointState(obj.adjoint(u, y_u), u, eta)


def hamiltonian_du(ps: ProblemSpec, y: Field, p: Field) -> Field:
    """``p + m y + g`` on intervals: ``y`` at the step end, ``p`` at its paired level ``j``."""
    return Field(ps.grid, INTERVAL, p.values[:, :-1] + ps.m * y.values[:, 1:] + ps.g.values)


def directional_J1(ps: ProblemSpec, u: Field, v: Field, mode: str = "adjoint",
                   zeta: Perturbation | None = None, tikhonov: float = 0.0) -> float:
    """``J'(u) v`` via the adjoint (``inner(d, v)``) or via the linearised state ``z_{u,v}``."""
    obj = Objective(ps, zeta, tikhonov)
    y = obj.state(u)
    alpha = state_alpha(ps, y)
    if mode == "adjoint":
        return inner(obj.gradient(u, y, obj.adjoint(u, y, alpha)), v)
    if mode == "linearized":
        z = solve_linearized(ps, y, v, alpha)
        q = obj.adjoint_source(u, y)
        return inner(q, z) + float(ps.grid.weight * np.sum(obj.control_terms(u, y) * v.values))
    raise ValueError(f"unknown mode {mode!r}")


def second_variation(ps: ProblemSpec, u: Field, v1: Field, v2: Field,
                     tikhonov: float = 0.0) -> float:
    """``J''(u)(v1, v2) = int (L0_yy - p f_yy) z1 z2 + m (z1 v2 + z2 v1)``."""
    obj = Objective(ps, None, tikhonov)
    y = obj.state(u)
    alpha = state_alpha(ps, y)
    p = obj.adjoint(u, y, alpha)
    z1 = solve_linearized(ps, y, v1, alpha)
    z2 = z1 if v2 is v1 else solve_linearized(ps, y, v2, alpha)
    x, t = ps.grid.space_time()
    Y = y.values[:, 1:]
    curv = evaluate(ps.L0_yy, x, t, Y) - p.values[:, :-1] * evaluate(ps.f_yy, x, t, Y)
    Z1, Z2 = z1.values[:, 1:], z2.values[:, 1:]
    dens = curv * Z1 * Z2 + ps.m * (Z1 * v2.values + Z2 * v1.values)
    if tikhonov:
        dens = dens + tikhonov * v1.values * v2.values
    return float(ps.grid.weight * dens.sum())
