"""Discrete elliptic operator and the linear parabolic solvers built on it.

The forward solver is implicit Euler with a nonnegative zero-order
coefficient ``alpha``; the backward solver is its exact algebraic transpose,
so that ``inner(forward(u), r) == inner(u, backward(r).step_start())`` holds
to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.ndimage
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import INTERVAL, NODAL, Field, Grid, norm


class EllipticOperator:
    """Flux-form discretisation of ``-div(a grad y)`` with homogeneous Dirichlet data.

    Attributes
    ----------
    grid : Grid
    a_edges : ndarray or tuple of ndarray
        Coefficient at cell faces; ``(nx,)`` in 1D, one array per axis in 2D.
    lambda_min : float
        Smallest face coefficient (the ellipticity constant).
    matrix : scipy.sparse.csr_matrix
        The assembled symmetric positive definite matrix.
    inf_norm : float
        Maximum absolute row sum of ``matrix``.
    """

    def __init__(self, grid: Grid, a_edges):
        self.grid = grid
        self.a_edges = a_edges
        parts = a_edges if grid.dim == 2 else (a_edges,)
        self.lambda_min = float(min(np.min(p) for p in parts))
        if not self.lambda_min > 0:
            raise ValueError("diffusion coefficient must be positive everywhere")
        if grid.dim == 1:
            a = np.asarray(a_edges, dtype=float)
            h2 = grid.dx**2
            self._diag = (a[:-1] + a[1:]) / h2
            self._off = -a[1:-1] / h2
            self.matrix = sp.diags([self._off, self._diag, self._off], [-1, 0, 1], format="csr")
        else:
            self.matrix = _assemble_2d(grid, *a_edges)
        self.inf_norm = float(abs(self.matrix).sum(axis=1).max())

    def apply(self, y: np.ndarray) -> np.ndarray:
        return self.matrix @ y

    def solve_shifted(self, shift: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        """Solve ``(A + diag(shift)) x = rhs`` for ``shift >= 0``."""
        shift = np.broadcast_to(shift, (self.grid.n_nodes,))
        if self.grid.dim == 1:
            n = self.grid.n_nodes
            ab = np.zeros((2, n))
            ab[0] = self._diag + shift
            ab[1, :-1] = self._off
            try:
                return scipy.linalg.solveh_banded(ab, rhs, lower=True, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise RuntimeError("singular step matrix in banded solve") from exc
        mat = (self.matrix + sp.diags(shift)).tocsc()
        return spla.splu(mat).solve(rhs)


def _assemble_2d(grid: Grid, e1: np.ndarray, e2: np.ndarray):
    n = grid.n_axis
    h2 = grid.dx**2
    idx = np.arange(n * n).reshape(n, n)
    diag = ((e1[:-1, :] + e1[1:, :]) + (e2[:, :-1] + e2[:, 1:])) / h2
    rows = [idx.ravel()]
    cols = [idx.ravel()]
    vals = [diag.ravel()]
    # couplings along axis 1 through interior faces e1[1:-1]
    c1 = -e1[1:-1, :] / h2
    rows += [idx[:-1, :].ravel(), idx[1:, :].ravel()]
    cols += [idx[1:, :].ravel(), idx[:-1, :].ravel()]
    vals += [c1.ravel(), c1.ravel()]
    c2 = -e2[:, 1:-1] / h2
    rows += [idx[:, :-1].ravel(), idx[:, 1:].ravel()]
    cols += [idx[:, 1:].ravel(), idx[:, :-1].ravel()]
    vals += [c2.ravel(), c2.ravel()]
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n * n, n * n))


def assemble_operator(grid: Grid, a=1.0) -> EllipticOperator:
    """Build the discrete operator for a constant, callable ``a(x)`` or face-sampled coefficient.

    A callable receives face-midpoint coordinates (a pair of arrays in 2D).
    """
    faces = (np.arange(grid.nx) + 0.5) * grid.dx
    if grid.dim == 1:
        if callable(a):
            edges = np.broadcast_to(np.asarray(a(faces), dtype=float), faces.shape).copy()
        else:
            edges = np.broadcast_to(np.asarray(a, dtype=float), faces.shape).copy()
        return EllipticOperator(grid, edges)
    nodes = grid.axis
    if callable(a):
        f1, n2 = np.meshgrid(faces, nodes, indexing="ij")
        n1, f2 = np.meshgrid(nodes, faces, indexing="ij")
        e1 = np.broadcast_to(np.asarray(a((f1, n2)), dtype=float), f1.shape).copy()
        e2 = np.broadcast_to(np.asarray(a((n1, f2)), dtype=float), n1.shape).copy()
    elif isinstance(a, tuple):
        e1, e2 = (np.asarray(v, dtype=float) for v in a)
    else:
        e1 = np.full((grid.nx, grid.n_axis), float(a))
        e2 = np.full((grid.n_axis, grid.nx), float(a))
    return EllipticOperator(grid, (e1, e2))


def smallest_eigenvalue(op: EllipticOperator, iters: int = 200, seed: int = 0) -> float:
    """Inverse power iteration estimate of the smallest eigenvalue of ``op.matrix``."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.grid.n_nodes)
    v /= np.linalg.norm(v)
    zero = np.zeros(op.grid.n_nodes)
    lam = 0.0
    for _ in range(iters):
        w = op.solve_shifted(zero, v)
        w /= np.linalg.norm(w)
        lam_new = float(w @ op.apply(w))
        if abs(lam_new - lam) <= 1e-13 * abs(lam_new):
            return lam_new
        v, lam = w, lam_new
    return lam


def _alpha_values(grid: Grid, alpha) -> np.ndarray:
    if alpha is None:
        return np.zeros(grid.shape(NODAL))
    vals = alpha.values if isinstance(alpha, Field) else np.broadcast_to(alpha, grid.shape(NODAL))
    if np.min(vals) < 0:
        raise ValueError("zero-order coefficient alpha must be nonnegative")
    return vals


def solve_linear_forward(op: EllipticOperator, alpha, rhs: Field, y0=None) -> Field:
    """Implicit Euler for ``y_t + A y + alpha y = rhs``; ``alpha`` is nodal, ``rhs`` interval."""
    grid = op.grid
    rhs._require(INTERVAL)
    a = _alpha_values(grid, alpha)
    dt = grid.dt
    y = np.zeros(grid.shape(NODAL))
    if y0 is not None:
        y[:, 0] = y0
    r = rhs.values
    for j in range(grid.nt):
        y[:, j + 1] = op.solve_shifted(1.0 / dt + a[:, j + 1], r[:, j] + y[:, j] / dt)
    return Field(grid, NODAL, y)


def solve_linear_backward(op: EllipticOperator, alpha, rhs: Field) -> Field:
    """Transpose of :func:`solve_linear_forward`; returns ``p`` with ``p[:, nt] = 0``.

    Level ``j`` of the result is the multiplier of the step ``j -> j+1`` and is
    paired with interval ``j`` (see :meth:`Field.step_start`).
    """
    grid = op.grid
    rhs._require(NODAL)
    a = _alpha_values(grid, alpha)
    dt = grid.dt
    p = np.zeros(grid.shape(NODAL))
    q = rhs.values
    for j in range(grid.nt - 1, -1, -1):
        p[:, j] = op.solve_shifted(1.0 / dt + a[:, j + 1], q[:, j + 1] + p[:, j + 1] / dt)
    return Field(grid, NODAL, p)


def apply_forward_operator(op: EllipticOperator, y: Field, alpha=None) -> Field:
    """Step residual ``(y^{j+1} - y^j)/dt + A y^{j+1} + alpha^{j+1} y^{j+1}`` as an interval field."""
    y._require(NODAL)
    a = _alpha_values(op.grid, alpha)
    v = y.values
    out = (v[:, 1:] - v[:, :-1]) / op.grid.dt + op.apply(v[:, 1:]) + a[:, 1:] * v[:, 1:]
    return Field(op.grid, INTERVAL, out)


def apply_backward_operator(op: EllipticOperator, rho: Field, alpha=None) -> Field:
    """Discrete ``-d/dt + A + alpha`` applied to an interval field with zero terminal value."""
    rho._require(INTERVAL)
    a = _alpha_values(op.grid, alpha)
    r = np.concatenate([rho.values, np.zeros((op.grid.n_nodes, 1))], axis=1)
    out = (r[:, :-1] - r[:, 1:]) / op.grid.dt + op.apply(r[:, :-1]) + a[:, 1:] * r[:, :-1]
    return Field(op.grid, INTERVAL, out)


@dataclass
class BoundReport:
    max_l2_ratio: float
    max_ls_l1_ratio: float
    s: float
    n_used: int
    n_degenerate: int
    seed: int
    ratios: list = field(default_factory=list)


def random_control(grid: Grid, rng: np.random.Generator, smoothing: float = 2.0) -> Field:
    """Gaussian noise smoothed with a Gaussian filter of ``smoothing`` cells."""
    noise = rng.standard_normal(grid.shape(INTERVAL))
    if grid.dim == 2:
        n = grid.n_axis
        noise = scipy.ndimage.gaussian_filter(noise.reshape(n, n, grid.nt), smoothing)
        noise = noise.reshape(grid.shape(INTERVAL))
    else:
        noise = scipy.ndimage.gaussian_filter(noise, smoothing)
    return Field(grid, INTERVAL, noise)


def bound_ratio_sweep(grid: Grid, num_samples: int = 100, seed: int = 0, a=1.0,
                      s: float = 2.0, alpha_max: float = 10.0, controls=None) -> BoundReport:
    """Empirical a priori constants: max of ||y||_L2/||u||_L2 and ||y||_Ls/||u||_L1.

    Controls are smoothed Gaussian noise and ``alpha`` is uniform on
    ``[0, alpha_max]``; pass ``controls`` to override the control draws.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    op = assemble_operator(grid, a)
    rng = np.random.default_rng(seed)
    if controls is None:
        controls = [random_control(grid, rng) for _ in range(num_samples)]
    best2 = bests = 0.0
    used = degenerate = 0
    ratios = []
    for u in controls:
        alpha = Field(grid, NODAL, rng.uniform(0.0, alpha_max, grid.shape(NODAL)))
        n2, n1 = norm(u, "L2"), norm(u, "L1")
        if n1 == 0.0:
            degenerate += 1
            continue
        y = solve_linear_forward(op, alpha, u)
        r2, rs = norm(y, "L2") / n2, norm(y, s) / n1
        ratios.append((r2, rs))
        best2, bests = max(best2, r2), max(bests, rs)
        used += 1
    return BoundReport(best2, bests, s, used, degenerate, seed, ratios)
