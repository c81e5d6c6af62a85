"""Admissible set, variational inequality, optimality mapping residuals, metrics and cones."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ..linpde import apply_forward_operator
from ..mesh import INTERVAL, NODAL, Field, inner, norm
from ..objective import Objective, Perturbation, hamiltonian_du
from ..state import ProblemSpec, evaluate, solve_linearized, solve_state, state_alpha

BOUND_TOL = 1e-12


@dataclass(frozen=True)
class Triple:
    """A candidate ``psi = (y, p, u)`` for the optimality mapping."""

    y: Field
    p: Field
    u: Field


def is_feasible(ps: ProblemSpec, u: Field, tol: float = BOUND_TOL) -> bool:
    return bool(np.all(u.values >= ps.u_a.values - tol) and np.all(u.values <= ps.u_b.values + tol))


def require_feasible(ps: ProblemSpec, u: Field):
    if not is_feasible(ps, u):
        lo = np.min(u.values - ps.u_a.values)
        hi = np.max(u.values - ps.u_b.values)
        raise ValueError(f"control is infeasible (min u - u_a = {lo:.3e}, max u - u_b = {hi:.3e})")


def project_admissible(ps: ProblemSpec, f: Field) -> Field:
    return f.with_values(np.clip(f.values, ps.u_a.values, ps.u_b.values))


def bang_bang_selection(ps: ProblemSpec, d: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Pointwise minimiser of ``d * v`` over the box; keeps ``u`` where ``d == 0``."""
    return np.where(d > 0, ps.u_a.values, np.where(d < 0, ps.u_b.values, u))


def vi_gap(ps: ProblemSpec, d: Field, rho: Field | None, u: Field) -> float:
    """``inner(d - rho, u - v*)`` with ``v*`` the pointwise minimiser; zero iff the VI holds."""
    require_feasible(ps, u)
    dd = d.values if rho is None else d.values - rho.values
    vstar = bang_bang_selection(ps, dd, u.values)
    return float(ps.grid.weight * np.sum(dd * (u.values - vstar)))


@dataclass
class PhiResidual:
    xi_res: Field
    eta_res: Field
    gap: float
    dZ: float
    initial_res: float
    terminal_res: float


def phi_residual(ps: ProblemSpec, psi: Triple, rho: Field | None = None) -> PhiResidual:
    """Single-valued parts of the optimality mapping at ``psi`` plus the VI gap.

    ``xi_res`` is the step residual of the state equation (interval field),
    ``eta_res`` that of the adjoint equation stored at the levels ``1..nt``
    of its source.  ``dZ`` adds their L2 norms; the inclusion is measured by
    ``gap`` separately.
    """
    grid = ps.grid
    y, p, u = psi.y, psi.p, psi.u
    require_feasible(ps, u)
    x, t = grid.space_time()
    Y = y.values[:, 1:]
    xi = apply_forward_operator(ps.op, y).values + evaluate(ps.f, x, t, Y) - u.values
    alpha = state_alpha(ps, y)
    P = np.concatenate([p.values[:, :-1], np.zeros((grid.n_nodes, 1))], axis=1)
    back = ((P[:, :-1] - P[:, 1:]) / grid.dt + ps.op.apply(P[:, :-1])
            + alpha.values[:, 1:] * P[:, :-1])
    source = evaluate(ps.L0_y, x, t, Y) + ps.m * u.values
    eta = np.zeros(grid.shape(NODAL))
    eta[:, 1:] = back - source
    xi_f = Field(grid, INTERVAL, xi)
    eta_f = Field(grid, NODAL, eta)
    gap = vi_gap(ps, hamiltonian_du(ps, y, p), rho, u)
    return PhiResidual(xi_f, eta_f, gap, norm(xi_f, "L2") + norm(eta_f, "L2"),
                       float(np.abs(y.values[:, 0] - ps.y0).max()),
                       float(np.abs(p.values[:, -1]).max()))


def metric_dY(psi1: Triple, psi2: Triple) -> float:
    return (norm(psi1.y - psi2.y, "L2") + norm(psi1.p - psi2.p, "L2")
            + norm(psi1.u - psi2.u, "L1"))


def _diff_norm(a, b, p):
    if a is None and b is None:
        return 0.0
    if a is None:
        return norm(b, p)
    if b is None:
        return norm(a, p)
    return norm(a - b, p)


def metric_dZ(zeta1: Perturbation | None, zeta2: Perturbation | None = None,
              rho_metric: str = "Linf") -> float:
    """``|xi1 - xi2|_L2 + |eta1 - eta2|_L2 + |rho1 - rho2|_Linf``.

    ``rho_metric="Lstar"`` measures the rho component by ``|L* rho|_L2`` instead,
    which needs ``rho_smooth`` on the perturbations.
    """
    z1, z2 = zeta1 or Perturbation(), zeta2 or Perturbation()
    for z in (z1, z2):
        if z.eta_functional is not None:
            raise ValueError("d_Z is defined for field perturbations only")
    out = _diff_norm(z1.xi, z2.xi, "L2") + _diff_norm(z1.eta, z2.eta, "L2")
    if rho_metric == "Linf":
        out += _diff_norm(z1.rho, z2.rho, "Linf")
    elif rho_metric == "Lstar":
        for z in (z1, z2):
            if z.rho is not None and z.rho_smooth is None:
                raise ValueError("rho_metric='Lstar' needs rho_smooth")
        out += _diff_norm(z1.rho_smooth, z2.rho_smooth, "L2")
    else:
        raise ValueError(f"unknown rho metric {rho_metric!r}")
    return out


class UbarData:
    """Reference point data: ``ubar``, its state and adjoint, and ``dbar = dH/du``.

    Caches what the cone tests and growth checkers need: the linearised
    coefficient and the curvature density ``L0_yy - p f_yy``.
    """

    def __init__(self, ps: ProblemSpec, ubar: Field, y: Field | None = None, p: Field | None = None):
        self.ps = ps
        self.u = ubar
        obj = Objective(ps)
        self.y = y if y is not None else solve_state(ps, ubar)
        self.alpha = state_alpha(ps, self.y)
        self.p = p if p is not None else obj.adjoint(ubar, self.y, self.alpha)
        self.d = hamiltonian_du(ps, self.y, self.p)
        self.J = obj.value(ubar, self.y)

    @cached_property
    def curvature(self) -> np.ndarray:
        x, t = self.ps.grid.space_time()
        Y = self.y.values[:, 1:]
        return (evaluate(self.ps.L0_yy, x, t, Y)
                - self.p.values[:, :-1] * evaluate(self.ps.f_yy, x, t, Y))

    def z(self, v: Field) -> Field:
        return solve_linearized(self.ps, self.y, v, self.alpha)

    def J1(self, v: Field) -> float:
        return inner(self.d, v)

    def J2(self, v: Field, z: Field | None = None) -> float:
        if z is None:
            z = self.z(v)
        Z = z.values[:, 1:]
        dens = self.curvature * Z * Z + 2.0 * self.ps.m * Z * v.values
        return float(self.ps.grid.weight * dens.sum())


def ubar_data(ps: ProblemSpec, ubar: Field) -> UbarData:
    return UbarData(ps, ubar)


@dataclass(frozen=True)
class ConeSpec:
    tau: float
    kind: str

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.kind not in ("D", "G", "E", "C"):
            raise ValueError(f"unknown cone kind {self.kind!r}")


@dataclass
class ConeResult:
    member: bool
    violated: str | None = None
    diagnostics: dict = field(default_factory=dict)

    def __bool__(self):
        return self.member


def cone_membership(data: UbarData, v: Field, spec: ConeSpec) -> ConeResult:
    """Membership of ``v`` in the extended critical cone ``spec.kind`` with parameter ``tau``."""
    ps = data.ps
    at_a = np.abs(data.u.values - ps.u_a.values) <= BOUND_TOL
    at_b = np.abs(data.u.values - ps.u_b.values) <= BOUND_TOL
    bad_a = int(np.count_nonzero(v.values[at_a] < 0))
    bad_b = int(np.count_nonzero(v.values[at_b] > 0))
    diag = {"sign_violations_lower": bad_a, "sign_violations_upper": bad_b}
    if bad_a or bad_b:
        return ConeResult(False, "sign", diag)
    if spec.kind in ("D", "C"):
        outside = int(np.count_nonzero(v.values[np.abs(data.d.values) > spec.tau]))
        diag["nonzero_outside_tau"] = outside
        if outside:
            return ConeResult(False, "D", diag)
    if spec.kind in ("G", "E", "C"):
        j1 = data.J1(v)
        z = data.z(v)
        p = "L2" if spec.kind == "E" else "L1"
        bound = spec.tau * norm(z, p)
        diag.update(J1=j1, bound=bound)
        if j1 > bound:
            return ConeResult(False, "E" if spec.kind == "E" else "G", diag)
    return ConeResult(True, None, diag)
