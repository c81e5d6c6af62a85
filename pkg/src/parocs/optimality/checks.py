"""Sampled checkers for the structural assumption, first-order growth and (A_k)/(B_k).

None of these prove anything: they evaluate the defining ratios on seeded
families of admissible controls and report the empirical constants.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from ..mesh import Field, measure_below, norm
from ..objective import Objective
from ..state import ProblemSpec, solve_state
from .system import UbarData

FAMILIES = ("bang_bang", "interior", "bump", "mixed")


@dataclass
class CheckReport:
    """Outcome of a sampled check.

    ``constant`` is the empirical constant (min ratio for growth checks, max
    ratio for ``struct``).  Samples whose denominator vanishes or that fall
    outside the proximity radius are counted, not used.
    """

    kind: str
    n_samples: int
    min_ratio: float | None
    max_ratio: float | None
    constant: float | None
    records: list = field(default_factory=list)
    seed: int | None = None
    n_degenerate: int = 0
    n_excluded: int = 0
    worst: dict | None = None
    flags: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    @property
    def positive(self) -> bool:
        return self.constant is not None and self.constant > 0

    def to_dict(self) -> dict:
        return asdict(self)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("PAROCS_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Ordered map, threaded when ``PAROCS_THREADS`` > 1."""
    n = _workers()
    if n == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# samplers


@dataclass(frozen=True)
class Sampler:
    """Seeded family of admissible controls near ``ubar``.

    bang_bang
        ``ubar`` switched to the opposite bound on a random union of
        space-time rectangles.
    interior
        ``ubar + s (w - ubar)`` for a smooth random ``w`` in the box, ``s <= scale``.
    bump
        One block of ``1..4`` cells per axis moved toward the feasible side by
        a random height.
    mixed
        Each draw picks one of the three at random.
    """

    count: int = 200
    seed: int = 0
    family: str = "mixed"
    scale: float = 0.3
    max_fraction: float = 0.2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown sample family {self.family!r}; choose from {FAMILIES}")
        if self.count < 1:
            raise ValueError("count must be positive")

    def draw(self, ps: ProblemSpec, ubar: Field) -> list[Field]:
        children = np.random.SeedSequence(self.seed).spawn(self.count)
        out = []
        for ss in children:
            rng = np.random.default_rng(ss)
            fam = self.family
            if fam == "mixed":
                fam = FAMILIES[int(rng.integers(0, 3))]
            vals = getattr(self, "_" + fam)(ps, ubar, rng)
            out.append(ubar.with_values(np.clip(vals, ps.u_a.values, ps.u_b.values)))
        return out

    def _opposite(self, ps, ubar, rng):
        lo, hi, u = ps.u_a.values, ps.u_b.values, ubar.values
        coin = rng.random(u.shape) < 0.5
        return np.where(u <= lo + 1e-12, hi, np.where(u >= hi - 1e-12, lo, np.where(coin, lo, hi)))

    def _rect_mask(self, ps, rng):
        g = ps.grid
        shape = (g.n_axis,) * g.dim + (g.nt,)
        mask = np.zeros(shape, dtype=bool)
        for _ in range(int(rng.integers(1, 4))):
            sl = []
            for n in shape:
                w = max(1, int(rng.uniform(0.02, self.max_fraction) * n))
                s = int(rng.integers(0, n - w + 1))
                sl.append(slice(s, s + w))
            mask[tuple(sl)] = True
        return mask.reshape(g.n_nodes, g.nt)

    def _bang_bang(self, ps, ubar, rng):
        mask = self._rect_mask(ps, rng)
        return np.where(mask, self._opposite(ps, ubar, rng), ubar.values)

    def _interior(self, ps, ubar, rng):
        g = ps.grid
        lo, hi = ps.u_a.values, ps.u_b.values
        shape = (g.n_axis,) * g.dim + (g.nt,)
        noise = gaussian_filter(rng.standard_normal(shape), sigma=3.0, mode="nearest")
        noise = (noise - noise.min()) / max(noise.max() - noise.min(), 1e-300)
        w = lo + (hi - lo) * (0.05 + 0.9 * noise.reshape(g.n_nodes, g.nt))
        s = rng.uniform(0.01, self.scale)
        return ubar.values + s * (w - ubar.values)

    def _bump(self, ps, ubar, rng):
        g = ps.grid
        shape = (g.n_axis,) * g.dim + (g.nt,)
        mask = np.zeros(shape, dtype=bool)
        sl = []
        for n in shape:
            w = int(rng.integers(1, 5))
            s = int(rng.integers(0, n - w + 1))
            sl.append(slice(s, s + w))
        mask[tuple(sl)] = True
        mask = mask.reshape(g.n_nodes, g.nt)
        h = rng.uniform(0.05, 1.0)
        target = self._opposite(ps, ubar, rng)
        return np.where(mask, ubar.values + h * (target - ubar.values), ubar.values)


def bump_control(ps: ProblemSpec, ubar: Field, cells, height: float) -> Field:
    """``ubar`` moved by ``height`` toward the opposite bound on the listed (node, interval) cells."""
    vals = np.array(ubar.values)
    lo, hi = ps.u_a.values, ps.u_b.values
    for i, j in cells:
        if vals[i, j] <= lo[i, j] + 1e-12:
            vals[i, j] += height
        else:
            vals[i, j] -= height
    return ubar.with_values(np.clip(vals, lo, hi))


# checkers


def _as_data(ps_or_data, ubar=None) -> UbarData:
    if isinstance(ps_or_data, UbarData):
        return ps_or_data
    if ubar is None:
        raise ValueError("ubar is required when a ProblemSpec is given")
    return UbarData(ps_or_data, ubar)


def check_struct(field_or_data, eps_grid=None) -> CheckReport:
    """Empirical constant of the structural assumption ``|{|d| <= eps}| <= kappa eps``.

    Accepts a :class:`UbarData` (uses ``dbar``) or any interval field.
    The default grid has 200 logarithmic points on ``[1e-4, 1e-1]``.
    """
    d = field_or_data.d if isinstance(field_or_data, UbarData) else field_or_data
    eps_grid = np.logspace(-4, -1, 200) if eps_grid is None else np.asarray(eps_grid, dtype=float)
    if eps_grid.size == 0 or np.any(eps_grid <= 0):
        raise ValueError("eps_grid must be nonempty and positive")
    ratios = np.array([measure_below(d, e) / e for e in eps_grid])
    k = int(np.argmax(ratios))
    flags = []
    m0 = measure_below(d, 0.0)
    if m0 > 0:
        flags.append(f"singular set of positive measure {m0:.6g}")
    recs = [{"eps": float(e), "ratio": float(r)} for e, r in zip(eps_grid, ratios)]
    return CheckReport("struct", len(eps_grid), float(ratios.min()), float(ratios.max()),
                       float(ratios[k]), recs, None, 0, 0, {"eps": float(eps_grid[k])}, flags,
                       {"measure_at_zero": m0})


def _finish(kind, sampler, records, ratios, params, n_deg, n_exc) -> CheckReport:
    if not ratios:
        return CheckReport(kind, sampler.count, None, None, None, records, sampler.seed,
                           n_deg, n_exc, None, ["no admissible samples"], params)
    arr = np.array([r for _, r in ratios])
    k = int(np.argmin(arr))
    return CheckReport(kind, sampler.count, float(arr.min()), float(arr.max()), float(arr.min()),
                       records, sampler.seed, n_deg, n_exc, records[ratios[k][0]], [], params)


def check_growth_first(ps_or_data, ubar: Field | None = None, sampler: Sampler | None = None) -> CheckReport:
    """``min J'(ubar)(u - ubar) / |u - ubar|_{L1}^2`` over sampled ``u != ubar``."""
    data = _as_data(ps_or_data, ubar)
    sampler = sampler or Sampler()
    records, ratios, n_deg = [], [], 0
    for idx, u in enumerate(sampler.draw(data.ps, data.u)):
        v = u - data.u
        l1 = norm(v, "L1")
        j1 = data.J1(v)
        rec = {"index": idx, "J1": j1, "v_L1": l1}
        if l1 == 0.0:
            n_deg += 1
            rec["ratio"] = None
        else:
            rec["ratio"] = j1 / l1**2
            ratios.append((idx, rec["ratio"]))
        records.append(rec)
    return _finish("growth_first", sampler, records, ratios, {"family": sampler.family}, n_deg, 0)


def default_radius(ps: ProblemSpec, mode: str) -> float:
    if mode == "A":
        return 0.1
    if mode == "B":
        return float(0.1 * ps.grid.measure * np.max(ps.u_b.values - ps.u_a.values))
    raise ValueError(f"mode must be 'A' or 'B', got {mode!r}")


def _proximity(data, u, v, mode):
    if mode == "A":
        y = solve_state(data.ps, u)
        return norm(y - data.y, "Linf"), y
    return norm(v, "L1"), None


def check_Ak(ps_or_data, k: int, mode: str = "A", radius: float | None = None,
             sampler: Sampler | None = None, ubar: Field | None = None) -> CheckReport:
    """Empirical ``gamma_k``: ``min (J' v + J'' v^2) / (|z_v|_{L2}^k |v|_{L1}^{2-k})``, ``v = u - ubar``.

    Mode ``A`` admits samples with ``|y_u - ybar|_inf < radius``, mode ``B``
    those with ``|u - ubar|_{L1} < radius``.
    """
    if k not in (0, 1, 2):
        raise ValueError("k must be 0, 1 or 2")
    data = _as_data(ps_or_data, ubar)
    radius = default_radius(data.ps, mode) if radius is None else float(radius)
    sampler = sampler or Sampler()

    def one(item):
        idx, u = item
        v = u - data.u
        dist, _ = _proximity(data, u, v, mode)
        z = data.z(v)
        j1, j2 = data.J1(v), data.J2(v, z)
        zl2, vl1 = norm(z, "L2"), norm(v, "L1")
        den = zl2**k * vl1 ** (2 - k)
        rec = {"index": idx, "J1": j1, "J2": j2, "z_L2": zl2, "v_L1": vl1, "distance": dist}
        rec["admitted"] = dist < radius
        rec["ratio"] = (j1 + j2) / den if den > 0 else None
        return rec

    records = parallel_map(one, list(enumerate(sampler.draw(data.ps, data.u))))
    n_exc = sum(not r["admitted"] for r in records)
    n_deg = sum(r["admitted"] and r["ratio"] is None for r in records)
    ratios = [(r["index"], r["ratio"]) for r in records if r["admitted"] and r["ratio"] is not None]
    return _finish(f"A{k}" if mode == "A" else f"B{k}", sampler, records, ratios,
                   {"k": k, "mode": mode, "radius": radius, "family": sampler.family}, n_deg, n_exc)


def quadratic_growth_check(ps_or_data, k: int, sampler: Sampler | None = None, mode: str = "A",
                           radius: float | None = None, ubar: Field | None = None) -> CheckReport:
    """``min (J(u) - J(ubar)) / (|y_u - ybar|_{L2}^k |u - ubar|_{L1}^{2-k})``; positive means growth."""
    if k not in (0, 1, 2):
        raise ValueError("k must be 0, 1 or 2")
    data = _as_data(ps_or_data, ubar)
    radius = default_radius(data.ps, mode) if radius is None else float(radius)
    sampler = sampler or Sampler()
    obj = Objective(data.ps)

    def one(item):
        idx, u = item
        v = u - data.u
        y = solve_state(data.ps, u)
        dy = y - data.y
        dist = norm(dy, "Linf") if mode == "A" else norm(v, "L1")
        dJ = obj.value(u, y) - data.J
        yl2, vl1 = norm(dy, "L2"), norm(v, "L1")
        den = yl2**k * vl1 ** (2 - k)
        return {"index": idx, "dJ": dJ, "dy_L2": yl2, "v_L1": vl1, "distance": dist,
                "admitted": dist < radius, "ratio": dJ / den if den > 0 else None}

    records = parallel_map(one, list(enumerate(sampler.draw(data.ps, data.u))))
    n_exc = sum(not r["admitted"] for r in records)
    n_deg = sum(r["admitted"] and r["ratio"] is None for r in records)
    ratios = [(r["index"], r["ratio"]) for r in records if r["admitted"] and r["ratio"] is not None]
    return _finish(f"growth{k}", sampler, records, ratios,
                   {"k": k, "mode": mode, "radius": radius, "family": sampler.family}, n_deg, n_exc)

