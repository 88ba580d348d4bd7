"""Scenario configuration: INI-style ``key = value`` sections with a fixed schema.

Parsing collects every problem before raising, so a broken file yields one
itemized error. Relative file paths are resolved against the config file's
directory.
"""
import configparser
import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import CflViolation, ConfigError, MissingFile, TypeMismatch, UnknownKey
from .expressions import ExpressionError, parse_expression

# section -> key -> (kind, default). kind is one of
# int, float, ints, floats, str, expr, path, or a tuple of allowed choices.
SCHEMA = {
    "grid": {"cells": ("ints", "64"), "lengths": ("floats", None)},
    "time": {"T": ("float", "0.5"), "steps": ("int", "64"), "cfl": ("float", "1.0")},
    "fluid": {"mu": ("float", "1.0"), "eta": ("float", "0.0")},
    "base": {"family": (("rest", "stratified", "taylor", "vortex"), "rest"),
             "rho0": ("float", None), "amp": ("float", None), "omega": ("float", None),
             "delta": ("float", None), "pressure": (("linear", "quadratic"), None),
             "c2": ("float", "1.0")},
    "initial": {"rho": ("expr", "0"), "u1": ("expr", "0"), "u2": ("expr", "0"),
                "u3": ("expr", "0"), "file": ("path", None)},
    "targets": {"rho": ("expr", "0"), "u1": ("expr", "0"), "u2": ("expr", "0"),
                "u3": ("expr", "0")},
    "control": {"radius": ("float", "1.0"), "file": ("path", None)},
    "constraint": {"set": (("whole", "ball", "box"), "whole"),
                   "observable": (("identity", "kernel", "average"), "identity"),
                   "c_rho": ("float", "1.0"), "c_u": ("float", "1.0"),
                   "width": ("float", "0.1"), "radius": ("float", "0.0"),
                   "center_rho": ("expr", "0"), "center_u1": ("expr", "0"),
                   "center_u2": ("expr", "0"), "center_u3": ("expr", "0"),
                   "lo": ("floats", None), "hi": ("floats", None),
                   "functionals": ("str", None)},
    "optimizer": {"tol": ("float", "1e-6"), "max_iter": ("int", "500"),
                  "armijo_c": ("float", "1e-4"), "backtrack": ("float", "0.5"),
                  "eps0": ("float", "1e-2"), "schedule_length": ("int", "6"),
                  "gradient_mode": (("transpose", "continuous"), "transpose"),
                  "lambda": ("float", "1.0"), "al_penalty": ("float", "10.0")},
    "verify": {"checks": ("str", "all"), "samples": ("int", "100"),
               "spike_tau": ("float", None), "spike_widths": ("ints", "8,4,2,1"),
               "spike_w1": ("expr", "sin(2*pi*x1)"), "spike_w2": ("expr", "0"),
               "spike_w3": ("expr", "0"), "spike_fraction": ("float", "0.8"),
               "dependence_alphas": ("floats", "1,0.5,0.25,0.125"),
               "gradient_directions": ("int", "5"), "lame_cells": ("int", "8"),
               "adjoint_mode": (("continuous", "transpose"), "continuous")},
    "output": {"dir": ("str", "out")},
    "run": {"seed": ("int", "0"), "linear_solver": (("direct", "cg"), "direct")},
}

CHECKS = ("gradient", "pontryagin", "cone", "spike", "dependence", "lame", "energy", "ekeland")


def _convert(kind, raw, where, base_dir, problems):
    raw = raw.strip()
    try:
        if isinstance(kind, tuple):
            if raw not in kind:
                raise ValueError(f"expected one of {list(kind)}")
            return raw
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "ints":
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if kind == "floats":
            return tuple(float(v) for v in raw.replace(",", " ").split())
        if kind == "expr":
            return parse_expression(raw)
        if kind == "path":
            path = raw if os.path.isabs(raw) else os.path.join(base_dir, raw)
            if not os.path.exists(path):
                problems.append(MissingFile([f"{where}: file {raw!r} does not exist"]))
            return path
        return raw
    except (ValueError, ExpressionError) as exc:
        problems.append(TypeMismatch([f"{where}: {raw!r} is not a valid {kind}: {exc}"]))
        return None


@dataclass
class ScenarioConfig:
    path: str
    values: dict
    canonical: str
    hash: str
    overrides: dict = field(default_factory=dict)

    def get(self, section, key):
        return self.values[section][key]

    # -- builders ---------------------------------------------------------
    @property
    def seed(self):
        return self.get("run", "seed")

    @property
    def out_dir(self):
        d = self.get("output", "dir")
        return d if os.path.isabs(d) else os.path.join(os.path.dirname(self.path) or ".", d)

    def grid(self):
        from .grid import Grid
        return Grid(self.get("grid", "cells"), self.get("grid", "lengths"))

    def times(self, refine=1):
        from .base_state import time_grid
        return time_grid(self.get("time", "T"), self.get("time", "steps") * refine)

    def params(self):
        from .grid import FluidParams
        return FluidParams(self.get("fluid", "mu"), self.get("fluid", "eta"))

    def base(self, time_refine=1, space_refine=1):
        """Base state on the config grid; refinement factors multiply steps and cells."""
        from .base_state import PressureLaw, make_base
        grid = self.grid()
        if space_refine > 1:
            grid = grid.refine(space_refine)
        kw = {k: self.get("base", k) for k in ("rho0", "amp", "omega", "delta")
              if self.get("base", k) is not None}
        pressure = self.get("base", "pressure")
        if pressure == "linear":
            kw["pressure_law"] = PressureLaw.linear(self.get("base", "c2"))
        elif pressure == "quadratic":
            kw["pressure_law"] = PressureLaw.quadratic()
        return make_base(self.get("base", "family"), grid, self.times(time_refine), self.params(), **kw)

    def initial(self, grid):
        if self.get("initial", "file"):
            from .snapshot import read_sequence
            g, frames, _ = read_sequence(self.get("initial", "file"))
            if g.extents != grid.extents:
                from .errors import GridMismatch
                raise GridMismatch("initial-data snapshot grid differs from the config grid")
            # the file holds a density frame followed by a velocity frame
            return frames[0].reshape(grid.shape), frames[1].reshape((grid.dim,) + grid.shape)
        x = grid.coords()
        rho0 = self.get("initial", "rho")(0.0, x)
        u0 = np.stack([self.get("initial", f"u{a + 1}")(0.0, x) for a in range(grid.dim)])
        u0[:, grid.boundary_mask()] = 0.0
        return rho0, u0

    def targets(self, grid, times):
        from .control import Targets
        from .expressions import sample_scalar, sample_vector
        rho_d = sample_scalar(self.get("targets", "rho"), grid, times)
        u_d = sample_vector([self.get("targets", f"u{a + 1}") for a in range(3)], grid, times)
        return Targets(rho_d, u_d)

    @property
    def radius(self):
        return self.get("control", "radius")

    def control(self, grid, times):
        from .control import ControlField
        N, dt = len(times) - 1, float(times[1] - times[0])
        if self.get("control", "file"):
            from .snapshot import read_sequence
            _, frames, _ = read_sequence(self.get("control", "file"))
            if len(frames) != N:
                from .errors import GridMismatch
                raise GridMismatch(f"control file has {len(frames)} samples, expected {N}")
            return ControlField(grid, frames.reshape((N, grid.dim) + grid.shape), self.radius, dt)
        return ControlField.zeros(grid, N, self.radius, dt)

    def spike_value(self, grid):
        """Spike value from the config, scaled to ``spike_fraction * R`` in L2."""
        from .grid import norm_l2
        x = grid.coords()
        W = np.stack([self.get("verify", f"spike_w{a + 1}")(0.0, x) for a in range(grid.dim)])
        W[:, grid.boundary_mask()] = 0.0
        n = norm_l2(grid, W)
        return W * (self.get("verify", "spike_fraction") * self.radius / n) if n > 0 else W

    def constraint(self, grid, times):
        from .control import AverageObservable, ConstraintSpec, FieldObservable
        from .expressions import sample_scalar, sample_vector
        c = self.values["constraint"]
        if c["set"] == "whole":
            return ConstraintSpec()
        if c["observable"] == "average":
            specs = []
            for item in (c["functionals"] or "").split(";"):
                if item.strip():
                    name, center, width = [s.strip() for s in item.split(":")]
                    specs.append((name, tuple(float(v) for v in center.split()), float(width)))
            obs = AverageObservable(grid, times, specs)
            center = np.zeros(len(specs))
            lo = None if c["lo"] is None else np.array(c["lo"])
            hi = None if c["hi"] is None else np.array(c["hi"])
        else:
            obs = FieldObservable(grid, times, c["observable"], c["c_rho"], c["c_u"], c["width"])
            center = (sample_scalar(c["center_rho"], grid, times),
                      sample_vector([c[f"center_u{a + 1}"] for a in range(3)], grid, times))
            lo = None if c["lo"] is None else (c["lo"][0],) * 2
            hi = None if c["hi"] is None else (c["hi"][0],) * 2
        return ConstraintSpec(obs, c["set"], center=center, radius=c["radius"], lo=lo, hi=hi,
                              lambda_mult=self.get("optimizer", "lambda"))

    def optimizer_options(self):
        from .optimize import OptimizerOptions
        o = self.values["optimizer"]
        return OptimizerOptions(tol=o["tol"], max_iter=o["max_iter"], armijo_c=o["armijo_c"],
                                backtrack=o["backtrack"], eps0=o["eps0"],
                                schedule_length=o["schedule_length"],
                                gradient_mode=o["gradient_mode"], lambda_mult=o["lambda"],
                                al_penalty=o["al_penalty"])

    def checks(self):
        raw = self.get("verify", "checks").replace(",", " ").split()
        return list(CHECKS) if raw == ["all"] else raw


def _canonical(values):
    lines = []
    for section in SCHEMA:
        lines.append(f"[{section}]")
        for key in SCHEMA[section]:
            v = values[section][key]
            if v is None:
                continue
            if hasattr(v, "src"):
                v = v.src
            elif isinstance(v, tuple):
                v = ",".join(repr(e) for e in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def parse_config(path, overrides=None, preflight=True):
    """Read, validate and default-fill a scenario file.

    ``overrides`` maps ``"section.key"`` to raw string values (CLI flags).
    Raises a :class:`ConfigError` subclass listing every problem found.
    """
    if not os.path.exists(path):
        raise MissingFile([f"config file {path!r} does not exist"])
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise TypeMismatch([f"cannot parse {path}: {exc}"]) from None
    for k, v in (overrides or {}).items():
        sec, key = k.split(".", 1)
        if not parser.has_section(sec):
            parser.add_section(sec)
        parser.set(sec, key, str(v))

    base_dir = os.path.dirname(os.path.abspath(path))
    problems = []
    for sec in parser.sections():
        if sec not in SCHEMA:
            problems.append(UnknownKey([f"unknown section [{sec}]"]))
            continue
        for key in parser[sec]:
            if key not in SCHEMA[sec]:
                problems.append(UnknownKey([f"[{sec}] unknown key {key!r}"]))
    values = {}
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (kind, default) in keys.items():
            raw = parser.get(sec, key, fallback=None) if parser.has_section(sec) else None
            if raw is None:
                raw = default
            values[sec][key] = None if raw is None else _convert(
                kind, raw, f"[{sec}] {key}", base_dir, problems)

    if not problems:
        _semantic_checks(values, problems)
    if problems:
        kind = type(problems[0])
        raise kind([p.problems[0] for p in problems])

    canonical = _canonical(values)
    cfg = ScenarioConfig(os.path.abspath(path), values, canonical,
                         hashlib.sha256(canonical.encode()).hexdigest(), dict(overrides or {}))
    if preflight:
        try:
            base = cfg.base()
        except (TypeError, ValueError) as exc:
            raise TypeMismatch([f"[base] parameters do not fit family "
                                f"{values['base']['family']!r}: {exc}"]) from None
        bound = base.cfl_bound(values["time"]["cfl"])
        if base.dt > bound * (1 + 1e-12):
            raise CflViolation(
                f"dt = T/steps = {base.dt:.6g} exceeds the CFL bound {bound:.6g} "
                f"(cfl={values['time']['cfl']}); use at least "
                f"{int(np.ceil(values['time']['T'] / bound))} steps")
    return cfg


def _semantic_checks(values, problems):
    def bad(msg):
        problems.append(TypeMismatch([msg]))

    cells = values["grid"]["cells"]
    if not 1 <= len(cells) <= 3:
        bad("[grid] cells must list 1 to 3 integers")
    elif min(cells) < 4:
        bad("[grid] cells must be >= 4 per axis")
    lengths = values["grid"]["lengths"]
    if lengths is not None and len(lengths) != len(cells):
        bad("[grid] lengths must have one entry per axis")
    if not values["time"]["T"] > 0:
        bad("[time] T must be positive")
    if not values["time"]["steps"] > 0:
        bad("[time] steps must be positive")
    if not values["control"]["radius"] > 0:
        bad("[control] radius must be positive")
    mu, eta = values["fluid"]["mu"], values["fluid"]["eta"]
    if not mu > 0 or not 4 * mu + 3 * (eta - 2 * mu / 3) > 0:
        bad(f"[fluid] need mu > 0 and 4 mu + 3 lam > 0 (mu={mu}, eta={eta})")
    c = values["constraint"]
    if c["set"] == "ball" and not c["radius"] >= 0:
        bad("[constraint] radius must be nonnegative")
    if c["observable"] == "average" and c["set"] != "whole" and not c["functionals"]:
        bad("[constraint] the average observable needs 'functionals'")
    for name in values["verify"]["checks"].replace(",", " ").split():
        if name != "all" and name not in CHECKS:
            bad(f"[verify] unknown check {name!r}; known: {', '.join(CHECKS)}")
