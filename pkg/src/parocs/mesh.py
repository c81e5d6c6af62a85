"""Uniform space-time grids, grid functions and discrete norms on Q = Omega x (0, T).

State-like fields are *nodal*: ``values[i, j]`` is the value at interior node
``i`` and time level ``j = 0..nt``.  Control-like fields are *interval*
fields: ``values[i, j]`` is held on ``(t_j, t_{j+1}]`` for ``j = 0..nt-1``.
Every sample carries the rectangle-rule weight ``dx**dim * dt``; nodal fields
are integrated over levels ``1..nt`` so that level ``j + 1`` pairs with
interval ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

NODAL = "nodal"
INTERVAL = "interval"
Role = Literal["nodal", "interval"]


@dataclass(frozen=True)
class Grid:
    dim: int
    nx: int
    nt: int
    length: float
    horizon: float

    @property
    def dx(self) -> float:
        return self.length / self.nx

    @property
    def dt(self) -> float:
        return self.horizon / self.nt

    @property
    def n_axis(self) -> int:
        """Interior nodes per axis."""
        return self.nx - 1

    @property
    def n_nodes(self) -> int:
        return self.n_axis**self.dim

    @property
    def weight(self) -> float:
        return self.dx**self.dim * self.dt

    @property
    def measure(self) -> float:
        """Total discrete measure of Q (sum of all sample weights)."""
        return self.n_nodes * self.nt * self.weight

    @property
    def axis(self) -> np.ndarray:
        return self.dx * np.arange(1, self.nx)

    @property
    def coords(self):
        """Interior node coordinates: an (N,) array in 1D, a pair of (N,) arrays in 2D."""
        if self.dim == 1:
            return self.axis
        x1, x2 = np.meshgrid(self.axis, self.axis, indexing="ij")
        return (x1.ravel(), x2.ravel())

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.nt + 1)

    def space_time(self, levels=None):
        """Broadcastable (x, t) arrays over nodes x ``levels`` (default: levels 1..nt)."""
        t = self.times[1:] if levels is None else self.times[levels]
        c = self.coords
        x = c[:, None] if self.dim == 1 else tuple(ci[:, None] for ci in c)
        return x, t[None, :]

    def shape(self, role: Role) -> tuple[int, int]:
        if role == NODAL:
            return (self.n_nodes, self.nt + 1)
        if role == INTERVAL:
            return (self.n_nodes, self.nt)
        raise ValueError(f"unknown field role {role!r}")

    def to_dict(self) -> dict:
        return {"dim": self.dim, "nx": self.nx, "nt": self.nt,
                "length": self.length, "horizon": self.horizon}


def make_grid(dim: int, nx: int, nt: int, length: float = 1.0, horizon: float = 1.0) -> Grid:
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    if int(nx) != nx or nx < 2:
        raise ValueError(f"nx must be an integer >= 2, got {nx}")
    if int(nt) != nt or nt < 1:
        raise ValueError(f"nt must be an integer >= 1, got {nt}")
    if not length > 0 or not horizon > 0:
        raise ValueError("length and horizon must be positive")
    return Grid(int(dim), int(nx), int(nt), float(length), float(horizon))


class Field:
    """Immutable real grid function in the nodal or interval role."""

    __slots__ = ("grid", "role", "values")

    def __init__(self, grid: Grid, role: Role, values):
        arr = np.array(values, dtype=float)
        expected = grid.shape(role)
        if arr.shape != expected:
            raise ValueError(f"{role} field on this grid needs shape {expected}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("field values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "role", role)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Field is immutable")

    def __repr__(self):
        return f"Field({self.role}, shape={self.values.shape})"

    # construction helpers

    @classmethod
    def zeros(cls, grid: Grid, role: Role) -> "Field":
        return cls(grid, role, np.zeros(grid.shape(role)))

    @classmethod
    def constant(cls, grid: Grid, role: Role, c: float) -> "Field":
        return cls(grid, role, np.full(grid.shape(role), float(c)))

    @classmethod
    def from_function(cls, grid: Grid, role: Role, fn: Callable, sample: str = "end") -> "Field":
        """Sample ``fn(x, t)``.

        Nodal fields are sampled at every level.  Interval fields are sampled at
        the right end ``t_{j+1}`` (``sample="end"``) or the midpoint (``"mid"``).
        """
        if role == NODAL:
            x, t = grid.space_time(np.arange(grid.nt + 1))
        else:
            if sample == "end":
                tt = grid.times[1:]
            elif sample == "mid":
                tt = grid.times[:-1] + 0.5 * grid.dt
            else:
                raise ValueError(f"unknown sample position {sample!r}")
            x, _ = grid.space_time()
            t = tt[None, :]
        vals = np.broadcast_to(np.asarray(fn(x, t), dtype=float), grid.shape(role))
        return cls(grid, role, vals)

    def with_values(self, values) -> "Field":
        return Field(self.grid, self.role, values)

    # role conversions

    def step_end(self) -> "Field":
        """Interval view of a nodal field taken at the implicit level t_{j+1}."""
        self._require(NODAL)
        return Field(self.grid, INTERVAL, self.values[:, 1:])

    def step_start(self) -> "Field":
        """Interval view of a nodal field taken at level t_j (used for adjoints)."""
        self._require(NODAL)
        return Field(self.grid, INTERVAL, self.values[:, :-1])

    def samples(self) -> np.ndarray:
        """The quadrature samples: levels 1..nt for nodal fields, all intervals otherwise."""
        return self.values[:, 1:] if self.role == NODAL else self.values

    def at(self, x, t) -> np.ndarray:
        """Look up values at grid points ``(x, t)`` (nodal: levels; interval: step ends)."""
        g = self.grid
        if g.dim == 1:
            i = np.rint(np.asarray(x) / g.dx).astype(int) - 1
        else:
            i1 = np.rint(np.asarray(x[0]) / g.dx).astype(int) - 1
            i2 = np.rint(np.asarray(x[1]) / g.dx).astype(int) - 1
            i = i1 * g.n_axis + i2
        j = np.rint(np.asarray(t) / g.dt).astype(int)
        if self.role == INTERVAL:
            j = j - 1
        return self.values[i, j]

    def _require(self, role):
        if self.role != role:
            raise ValueError(f"expected a {role} field, got {self.role}")

    # arithmetic

    def _coerce(self, other):
        if isinstance(other, Field):
            _check_compatible(self, other)
            return other.values
        return other

    def __add__(self, other):
        return self.with_values(self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.with_values(self.values - self._coerce(other))

    def __rsub__(self, other):
        return self.with_values(self._coerce(other) - self.values)

    def __mul__(self, other):
        return self.with_values(self.values * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.with_values(self.values / self._coerce(other))

    def __neg__(self):
        return self.with_values(-self.values)


def _check_compatible(f: Field, g: Field):
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    if f.role != g.role:
        raise ValueError(f"role mismatch: {f.role} vs {g.role}")


def norm(f: Field, p="L2") -> float:
    """Discrete L1, L2 or Linf norm over Q."""
    s = f.samples()
    if p in ("L1", 1):
        return float(f.grid.weight * np.abs(s).sum())
    if p in ("L2", 2):
        return float(np.sqrt(f.grid.weight * np.square(s).sum()))
    if p in ("Linf", "inf", np.inf):
        return float(np.abs(s).max()) if s.size else 0.0
    if isinstance(p, (int, float)) and p >= 1:
        return float((f.grid.weight * (np.abs(s) ** p).sum()) ** (1.0 / p))
    raise ValueError(f"unsupported norm {p!r}")


def measure_below(f: Field, eps: float) -> float:
    """Discrete measure of {(x, t) : |f(x, t)| <= eps}."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    return float(f.grid.weight * np.count_nonzero(np.abs(f.samples()) <= eps))


def inner(f: Field, g: Field) -> float:
    _check_compatible(f, g)
    return float(f.grid.weight * np.sum(f.samples() * g.samples()))
