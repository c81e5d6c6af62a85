"""Run configuration: JSON documents, shipped presets and problem assembly."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .expr import Expression, ExpressionError, parse
from .mesh import INTERVAL, Field, Grid, make_grid
from .state import ProblemSpec, make_problem, solve_state

PRESETS = ("neg-curvature", "tracking")

_NUM_OR_EXPR = {"type": ["number", "string"]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dim": {"type": "integer"},
                "nx": {"type": "integer"},
                "nt": {"type": "integer"},
                "length": {"type": "number"},
                "horizon": {"type": "number"},
            },
        },
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "a": _NUM_OR_EXPR,
                "f": _NUM_OR_EXPR,
                "L0": _NUM_OR_EXPR,
                "m": {"type": "number"},
                "g": _NUM_OR_EXPR,
                "y0": _NUM_OR_EXPR,
                "u_a": _NUM_OR_EXPR,
                "u_b": _NUM_OR_EXPR,
                "tracking_target": {
                    "type": ["object", "null"],
                    "additionalProperties": False,
                    "properties": {"control": _NUM_OR_EXPR, "shift": {"type": "number"}},
                },
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["conditional_gradient", "projected_gradient",
                                    "tikhonov_fixed_point"]},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": {"type": "integer", "minimum": 1},
                "tikhonov_lambda": {"type": "number", "minimum": 0},
                "u_init": {"type": ["number", "string", "null"]},
            },
        },
        "check": {"type": "object"},
        "sweep": {"type": "object"},
        "tikhonov": {"type": "object"},
        "example": {"type": "object"},
    },
}

DEFAULTS = {
    "name": "custom",
    "seed": 0,
    "grid": {"dim": 1, "nx": 64, "nt": 128, "length": 1.0, "horizon": 1.0},
    "problem": {"a": "1", "f": "0", "L0": "0", "m": 0.0, "g": "0", "y0": "0",
                "u_a": "0", "u_b": "1", "tracking_target": None},
    "solver": {"method": "conditional_gradient", "tol": 1e-10, "max_iters": 50,
               "tikhonov_lambda": 0.0, "u_init": None},
    "check": {"samples": 200, "family": "mixed", "k": 1, "mode": "A", "radius": None,
              "eps": [1e-4, 1e-1, 200], "pairs": 20},
    "sweep": {"family": "rho_field", "shape": {"rho": "1"},
              "magnitudes": [1e-1, 2.5e-2, 6.3e-3, 1.6e-3, 4e-4, 1e-4],
              "rho_metric": "Linf", "path_following": False},
    "tikhonov": {"lambdas": [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 1e-4]},
    "example": {},
}


class ConfigError(ValueError):
    """Invalid configuration (schema, expression or grid)."""


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return resources.files("parocs.presets").joinpath(f"{name}.json").read_text()


@dataclass
class RunConfig:
    """A fully resolved configuration (defaults merged in)."""

    data: dict

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def name(self) -> str:
        return self.data["name"]

    def section(self, key: str) -> dict:
        return self.data[key]

    def grid(self) -> Grid:
        g = self.data["grid"]
        try:
            return make_grid(g["dim"], g["nx"], g["nt"], g["length"], g["horizon"])
        except ValueError as exc:
            raise ConfigError(f"invalid grid: {exc}") from exc

    def expressions(self) -> dict[str, Expression]:
        dim = self.data["grid"]["dim"]
        prob = self.data["problem"]
        out = {}
        keys = ["a", "f", "L0", "g", "y0", "u_a", "u_b"]
        for key in keys:
            try:
                out[key] = parse(prob[key], dim)
            except ExpressionError as exc:
                raise ConfigError(f"problem.{key}: {exc}") from exc
        tt = prob.get("tracking_target")
        if tt is not None:
            try:
                out["target_control"] = parse(tt.get("control", prob["u_a"]), dim)
            except ExpressionError as exc:
                raise ConfigError(f"problem.tracking_target.control: {exc}") from exc
        for key, allowed in (("a", {"x", "x2"}), ("y0", {"x", "x2"}), ("g", {"x", "x2", "t"}),
                             ("u_a", {"x", "x2", "t"}), ("u_b", {"x", "x2", "t"})):
            extra = out[key].free - allowed
            if extra:
                raise ConfigError(f"problem.{key} may not depend on {sorted(extra)}")
        return out

    def validate_expressions(self):
        """Evaluate every expression (and its y-derivatives) at ten seeded random points."""
        g = self.data["grid"]
        rng = np.random.default_rng(self.seed)
        for key, e in self.expressions().items():
            try:
                e.check(rng, 10, g["length"], g["horizon"])
                if key in ("f", "L0"):
                    e.diff().check(rng, 10, g["length"], g["horizon"])
                    e.diff().diff().check(rng, 10, g["length"], g["horizon"])
            except ExpressionError as exc:
                raise ConfigError(f"problem.{key}: {exc}") from exc

    def build_problem(self) -> ProblemSpec:
        grid = self.grid()
        self.validate_expressions()
        ex = self.expressions()
        prob = self.data["problem"]
        f, L0 = ex["f"], ex["L0"]
        fy, fyy = f.diff(), f.diff().diff()

        def a_fn(c):
            return ex["a"](c, 0.0, 0.0)

        def space_time(e):
            return lambda x, t: e(x, t, 0.0)

        kwargs = dict(a=a_fn, f=f, f_y=fy, f_yy=fyy, m=prob["m"], g=space_time(ex["g"]),
                      y0=lambda c: ex["y0"](c, 0.0, 0.0), u_a=space_time(ex["u_a"]),
                      u_b=space_time(ex["u_b"]), name=self.name)
        tt = prob.get("tracking_target")
        try:
            if tt is None:
                return make_problem(grid, L0=L0, L0_y=L0.diff(), L0_yy=L0.diff().diff(), **kwargs)
            base = make_problem(grid, **kwargs)
            target = Field.from_function(grid, INTERVAL, space_time(ex["target_control"]))
            target = target.with_values(np.clip(target.values, base.u_a.values, base.u_b.values))
            yd = solve_state(base, target) + float(tt.get("shift", 0.0))
            L0t, L0t_y, L0t_yy = tracking_functions(yd)
            return make_problem(grid, L0=L0t, L0_y=L0t_y, L0_yy=L0t_yy, **kwargs)
        except ValueError as exc:
            raise ConfigError(f"invalid problem: {exc}") from exc

    def initial_control(self, ps: ProblemSpec) -> Field | None:
        spec = self.data["solver"].get("u_init")
        if spec is None:
            return None
        try:
            e = parse(spec, ps.grid.dim)
        except ExpressionError as exc:
            raise ConfigError(f"solver.u_init: {exc}") from exc
        return Field.from_function(ps.grid, INTERVAL, lambda x, t: e(x, t, 0.0))


def tracking_functions(yd: Field):
    """``L0 = (y - yd)^2 / 2`` and its derivatives for a nodal target ``yd`` looked up on the grid."""

    def L0(x, t, y):
        return 0.5 * (y - yd.at(x, t)) ** 2

    def L0_y(x, t, y):
        return y - yd.at(x, t)

    def L0_yy(x, t, y):
        return np.ones_like(y)

    return L0, L0_y, L0_yy


def load_config(source=None, *, preset: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Resolve a configuration from a preset name, a JSON path, a dict, or nothing (defaults).

    ``source`` may also name a preset.  ``overrides`` are merged last.
    """
    raw: dict = {}
    try:
        if preset is not None:
            raw = json.loads(preset_text(preset))
        if isinstance(source, dict):
            raw = _merge(raw, source)
        elif source is not None:
            s = str(source)
            if s in PRESETS:
                raw = _merge(raw, json.loads(preset_text(s)))
            else:
                raw = _merge(raw, json.loads(Path(s).read_text()))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read configuration: {exc}") from exc
    if overrides:
        raw = _merge(raw, overrides)
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from exc
    cfg = RunConfig(_merge(DEFAULTS, raw))
    cfg.grid()
    return cfg
