"""Run-configuration parsing and validation.

Configs are YAML with nested sections.  Numeric leaves accept arithmetic
expressions in units of the reference coupling (``"100*g"``, ``"-3*g/400"``,
``"2*pi*0.1"``); ``g`` is 1 by definition.  Unknown keys anywhere are
rejected with the offending path, and random site ensembles require an
explicit seed.
"""

from __future__ import annotations

import ast
import hashlib
import math
from dataclasses import dataclass

import yaml

from . import params as pm
from .errors import ConfigError

_ALLOWED_FUNCS = {
    "sqrt": math.sqrt, "sin": math.sin, "cos": math.cos, "tan": math.tan,
    "exp": math.exp, "log": math.log, "abs": abs,
}
_ALLOWED_NAMES = {"g": 1.0, "pi": math.pi, "e": math.e}


def eval_expression(value, path: str) -> complex:
    """Evaluate a numeric config leaf (number or expression string)."""
    if isinstance(value, bool):
        raise ConfigError(f"{path}: expected a number, got a boolean")
    if isinstance(value, (int, float, complex)):
        return complex(value)
    if not isinstance(value, str):
        raise ConfigError(f"{path}: expected a number or expression string, "
                          f"got {type(value).__name__}")
    try:
        tree = ast.parse(value, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"{path}: cannot parse expression {value!r}: {exc}") from None
    return _eval_node(tree.body, path, value)


def _eval_node(node, path, original):
    if isinstance(node, ast.Constant):
        if isinstance(node.value, (int, float, complex)):
            return complex(node.value)
        raise ConfigError(f"{path}: non-numeric constant in {original!r}")
    if isinstance(node, ast.Name):
        if node.id in _ALLOWED_NAMES:
            return complex(_ALLOWED_NAMES[node.id])
        raise ConfigError(f"{path}: unknown symbol {node.id!r} in {original!r}")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
        val = _eval_node(node.operand, path, original)
        return val if isinstance(node.op, ast.UAdd) else -val
    if isinstance(node, ast.BinOp) and isinstance(
            node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)):
        left = _eval_node(node.left, path, original)
        right = _eval_node(node.right, path, original)
        try:
            if isinstance(node.op, ast.Add):
                return left + right
            if isinstance(node.op, ast.Sub):
                return left - right
            if isinstance(node.op, ast.Mult):
                return left * right
            if isinstance(node.op, ast.Div):
                return left / right
            return left ** right
        except ZeroDivisionError:
            raise ConfigError(f"{path}: division by zero in {original!r}") from None
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
            and node.func.id in _ALLOWED_FUNCS and len(node.args) == 1 \
            and not node.keywords:
        arg = _eval_node(node.args[0], path, original)
        if arg.imag == 0:
            return complex(_ALLOWED_FUNCS[node.func.id](arg.real))
        raise ConfigError(f"{path}: {node.func.id} of a complex value in {original!r}")
    raise ConfigError(f"{path}: unsupported expression element in {original!r}")


def _real(value, path: str) -> float:
    c = eval_expression(value, path)
    if c.imag != 0:
        raise ConfigError(f"{path}: expected a real value, got {c!r}")
    return c.real


def _require_mapping(raw, path):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping")
    return raw


def _check_keys(raw: dict, allowed: set[str], path: str) -> None:
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")


def _require(raw: dict, keys: list[str], path: str) -> None:
    missing = [k for k in keys if k not in raw]
    if missing:
        raise ConfigError(f"{path}: missing required field(s) {', '.join(missing)}")


@dataclass(frozen=True)
class SimulationOptions:
    n_max_a: int = 10
    n_max_b: int = 10
    tau_grid: tuple[float, ...] = ()
    engine: str = "auto"
    rtol: float = 1e-9
    regime_margin: float = 10.0
    dim_cap: int = 20000


@dataclass(frozen=True)
class SweepAxis:
    path: str
    values: tuple[float, ...]


@dataclass(frozen=True)
class SweepOptions:
    command: str
    axes: tuple[SweepAxis, ...]
    max_points: int = 1000


@dataclass(frozen=True)
class OutputOptions:
    directory: str = "out"
    formats: tuple[str, ...] = ("csv", "json")
    plots: bool = True


@dataclass(frozen=True)
class ValidationOptions:
    margin: float = 10.0
    coherence_threshold: float = 0.1
    warn_only: bool = False


@dataclass(frozen=True)
class DriveConfig:
    omega: float | None          # explicit Langevin coupling; None = derive
    from_effective: bool
    kappa_a: float | None
    kappa_b: float | None
    eps_a: complex
    eps_b: complex
    omega_grid: tuple[float, ...]


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs, resolved from one config file."""

    raw: dict
    sha256: str
    params: pm.PhysicalParams | None
    sites: list[pm.AtomSite]
    geometry: pm.ModeGeometry | None
    laser_splitting: float
    simulation: SimulationOptions
    drive: DriveConfig | None
    sweep: SweepOptions | None
    output: OutputOptions
    validation: ValidationOptions
    seed: int | None


_TOP_KEYS = {"parameters", "family", "geometry", "sites", "simulation",
             "drive", "sweep", "output", "validation"}

_PARAM_KEYS = {"g_a", "g_b", "Omega_1", "Omega_2", "Delta_1", "Delta_2",
               "delta_1", "delta_2", "kappa_a", "kappa_b", "Gamma", "tau"}


def _parse_grid(raw, path) -> tuple[float, ...]:
    if isinstance(raw, list):
        return tuple(_real(v, f"{path}[{i}]") for i, v in enumerate(raw))
    grid = _require_mapping(raw, path)
    _check_keys(grid, {"start", "stop", "num"}, path)
    _require(grid, ["start", "stop", "num"], path)
    num = grid["num"]
    if not isinstance(num, int) or num < 1:
        raise ConfigError(f"{path}.num: expected a positive integer")
    start = _real(grid["start"], f"{path}.start")
    stop = _real(grid["stop"], f"{path}.stop")
    if num == 1:
        return (start,)
    step = (stop - start) / (num - 1)
    return tuple(start + i * step for i in range(num))


def load_config(path: str, seed_override: int | None = None) -> RunConfig:
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        raw = yaml.safe_load(blob)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse YAML: {exc}") from None
    if raw is None:
        raw = {}
    cfg = resolve_config(raw, seed_override=seed_override)
    object.__setattr__(cfg, "sha256", hashlib.sha256(blob).hexdigest())
    return cfg


def resolve_config(raw: dict, seed_override: int | None = None) -> RunConfig:
    raw = _require_mapping(raw, "config")
    _check_keys(raw, _TOP_KEYS, "config")

    geometry = None
    laser_splitting = 0.0
    if "geometry" in raw:
        geometry, laser_splitting = _parse_geometry(raw["geometry"])

    params = None
    sites: list[pm.AtomSite] = []
    seed = None
    if "parameters" in raw and "family" in raw:
        raise ConfigError("config: give either parameters or family, not both")
    if "family" in raw:
        params, sites = _parse_family(raw["family"])
    elif "parameters" in raw:
        params = _parse_parameters(raw["parameters"])
    if "sites" in raw:
        if "family" in raw:
            raise ConfigError("sites: the family block already fixes the ensemble")
        sites, seed = _parse_sites(raw["sites"], geometry)
    if seed_override is not None:
        seed = seed_override
        if "sites" in raw:
            section = _require_mapping(raw["sites"], "sites")
            if section.get("mode", "uniform") == "random":
                if geometry is None:
                    raise ConfigError("sites: random sites need a geometry block")
                sites = pm.random_sites(geometry, int(section["count"]), seed)

    simulation = _parse_simulation(raw.get("simulation", {}))
    drive = _parse_drive(raw["drive"]) if "drive" in raw else None
    sweep = _parse_sweep(raw["sweep"]) if "sweep" in raw else None
    output = _parse_output(raw.get("output", {}))
    validation = _parse_validation(raw.get("validation", {}))

    return RunConfig(
        raw=raw, sha256="", params=params, sites=sites, geometry=geometry,
        laser_splitting=laser_splitting, simulation=simulation, drive=drive,
        sweep=sweep, output=output, validation=validation, seed=seed,
    )


def _parse_parameters(raw) -> pm.PhysicalParams:
    raw = _require_mapping(raw, "parameters")
    _check_keys(raw, _PARAM_KEYS, "parameters")
    _require(raw, ["g_a", "g_b", "Omega_1", "Omega_2", "Delta_1", "Delta_2",
                   "delta_1", "delta_2", "kappa_a", "kappa_b"], "parameters")
    try:
        return pm.PhysicalParams.from_detunings(
            g_a=eval_expression(raw["g_a"], "parameters.g_a"),
            g_b=eval_expression(raw["g_b"], "parameters.g_b"),
            Omega_1=eval_expression(raw["Omega_1"], "parameters.Omega_1"),
            Omega_2=eval_expression(raw["Omega_2"], "parameters.Omega_2"),
            Delta_1=_real(raw["Delta_1"], "parameters.Delta_1"),
            Delta_2=_real(raw["Delta_2"], "parameters.Delta_2"),
            delta_1=_real(raw["delta_1"], "parameters.delta_1"),
            delta_2=_real(raw["delta_2"], "parameters.delta_2"),
            kappa_a=_real(raw["kappa_a"], "parameters.kappa_a"),
            kappa_b=_real(raw["kappa_b"], "parameters.kappa_b"),
            Gamma=_real(raw.get("Gamma", 0.0), "parameters.Gamma"),
            tau=_real(raw.get("tau", 1.0), "parameters.tau"),
        )
    except ValueError as exc:
        raise ConfigError(f"parameters: {exc}") from None


def _parse_family(raw) -> tuple[pm.PhysicalParams, list[pm.AtomSite]]:
    raw = _require_mapping(raw, "family")
    _check_keys(raw, {"margin", "n_atoms", "xi_target", "kappa"}, "family")
    _require(raw, ["margin"], "family")
    n_atoms = raw.get("n_atoms", 1)
    if not isinstance(n_atoms, int) or n_atoms < 1:
        raise ConfigError("family.n_atoms: expected a positive integer")
    try:
        fam = pm.dispersive_family(
            margin=_real(raw["margin"], "family.margin"),
            n_atoms=n_atoms,
            xi_target=_real(raw.get("xi_target", 0.1), "family.xi_target"),
            kappa=_real(raw.get("kappa", 0.2), "family.kappa"),
        )
    except ValueError as exc:
        raise ConfigError(f"family: {exc}") from None
    return fam.params, fam.sites


def _parse_geometry(raw) -> tuple[pm.ModeGeometry, float]:
    raw = _require_mapping(raw, "geometry")
    allowed = {"q_a", "q_b", "m", "waist", "beam_width", "radial_profile",
               "laser_profile", "laser_splitting"}
    _check_keys(raw, allowed, "geometry")
    _require(raw, ["q_a", "q_b"], "geometry")
    m = raw.get("m", 0)
    if not isinstance(m, int):
        raise ConfigError("geometry.m: expected an integer azimuthal index")
    try:
        geo = pm.ModeGeometry(
            q_a=_real(raw["q_a"], "geometry.q_a"),
            q_b=_real(raw["q_b"], "geometry.q_b"),
            m=m,
            waist=_real(raw.get("waist", 35e-6), "geometry.waist"),
            beam_width=_real(raw.get("beam_width", 50e-6), "geometry.beam_width"),
            radial_profile=str(raw.get("radial_profile", "gaussian")),
            laser_profile=str(raw.get("laser_profile", "uniform")),
        )
    except ValueError as exc:
        raise ConfigError(f"geometry: {exc}") from None
    split = _real(raw.get("laser_splitting", 0.0), "geometry.laser_splitting")
    return geo, split


def _parse_sites(raw, geometry) -> tuple[list[pm.AtomSite], int | None]:
    raw = _require_mapping(raw, "sites")
    _check_keys(raw, {"mode", "count", "seed", "positions"}, "sites")
    mode = raw.get("mode", "uniform")
    if mode == "uniform":
        _require(raw, ["count"], "sites")
        count = raw["count"]
        if not isinstance(count, int) or count < 0:
            raise ConfigError("sites.count: expected a nonnegative integer")
        return pm.uniform_sites(count), None
    if mode == "random":
        _require(raw, ["count", "seed"], "sites")
        if geometry is None:
            raise ConfigError("sites: random sites need a geometry block")
        seed = raw["seed"]
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("sites.seed: expected a nonnegative integer "
                              "(mandatory for random sites)")
        return pm.random_sites(geometry, int(raw["count"]), seed), seed
    if mode == "explicit":
        _require(raw, ["positions"], "sites")
        if geometry is None:
            raise ConfigError("sites: explicit positions need a geometry block")
        positions = raw["positions"]
        if not isinstance(positions, list):
            raise ConfigError("sites.positions: expected a list of [z, rho, phi]")
        out = []
        for i, pos in enumerate(positions):
            if not (isinstance(pos, list) and len(pos) == 3):
                raise ConfigError(f"sites.positions[{i}]: expected [z, rho, phi]")
            p = tuple(_real(v, f"sites.positions[{i}][{j}]")
                      for j, v in enumerate(pos))
            out.append(pm.AtomSite(
                position=p,
                u_a=pm.mode_amplitude(geometry, p, "a"),
                u_b=pm.mode_amplitude(geometry, p, "b"),
                v_1=pm.mode_amplitude(geometry, p, "laser1"),
                v_2=pm.mode_amplitude(geometry, p, "laser2"),
            ))
        return out, None
    raise ConfigError(f"sites.mode: unknown mode {mode!r}")


def _parse_simulation(raw) -> SimulationOptions:
    raw = _require_mapping(raw, "simulation")
    allowed = {"n_max_a", "n_max_b", "tau_grid", "engine", "rtol",
               "regime_margin", "dim_cap"}
    _check_keys(raw, allowed, "simulation")
    for key in ("n_max_a", "n_max_b", "dim_cap"):
        if key in raw and (not isinstance(raw[key], int) or raw[key] < 0):
            raise ConfigError(f"simulation.{key}: expected a nonnegative integer")
    engine = raw.get("engine", "auto")
    if engine not in ("auto", "eigh", "expm", "ode"):
        raise ConfigError(f"simulation.engine: unknown engine {engine!r}")
    tau_grid = _parse_grid(raw["tau_grid"], "simulation.tau_grid") \
        if "tau_grid" in raw else ()
    return SimulationOptions(
        n_max_a=raw.get("n_max_a", 10),
        n_max_b=raw.get("n_max_b", 10),
        tau_grid=tau_grid,
        engine=engine,
        rtol=_real(raw.get("rtol", 1e-9), "simulation.rtol"),
        regime_margin=_real(raw.get("regime_margin", 10.0), "simulation.regime_margin"),
        dim_cap=raw.get("dim_cap", 20000),
    )


def _parse_drive(raw) -> DriveConfig:
    raw = _require_mapping(raw, "drive")
    allowed = {"Omega", "from_effective", "kappa_a", "kappa_b",
               "eps_a", "eps_b", "omega_grid"}
    _check_keys(raw, allowed, "drive")
    from_eff = bool(raw.get("from_effective", False))
    if ("Omega" in raw) == from_eff:
        raise ConfigError("drive: give exactly one of Omega or from_effective")
    grid = _parse_grid(raw["omega_grid"], "drive.omega_grid") \
        if "omega_grid" in raw else tuple(i / 10 - 3.0 for i in range(61))
    return DriveConfig(
        omega=_real(raw["Omega"], "drive.Omega") if "Omega" in raw else None,
        from_effective=from_eff,
        kappa_a=_real(raw["kappa_a"], "drive.kappa_a") if "kappa_a" in raw else None,
        kappa_b=_real(raw["kappa_b"], "drive.kappa_b") if "kappa_b" in raw else None,
        eps_a=eval_expression(raw.get("eps_a", 0.0), "drive.eps_a"),
        eps_b=eval_expression(raw.get("eps_b", 0.0), "drive.eps_b"),
        omega_grid=grid,
    )


def _parse_sweep(raw) -> SweepOptions:
    raw = _require_mapping(raw, "sweep")
    _check_keys(raw, {"command", "axes", "max_points"}, "sweep")
    _require(raw, ["command", "axes"], "sweep")
    command = raw["command"]
    if command not in ("validate", "effective", "simulate", "inout"):
        raise ConfigError(f"sweep.command: cannot sweep {command!r}")
    axes_raw = raw["axes"]
    if not isinstance(axes_raw, list) or not axes_raw:
        raise ConfigError("sweep.axes: expected a nonempty list")
    axes = []
    for i, ax in enumerate(axes_raw):
        ax = _require_mapping(ax, f"sweep.axes[{i}]")
        _check_keys(ax, {"path", "values"}, f"sweep.axes[{i}]")
        _require(ax, ["path", "values"], f"sweep.axes[{i}]")
        if not isinstance(ax["values"], list) or not ax["values"]:
            raise ConfigError(f"sweep.axes[{i}].values: expected a nonempty list")
        values = tuple(_real(v, f"sweep.axes[{i}].values[{j}]")
                       for j, v in enumerate(ax["values"]))
        axes.append(SweepAxis(path=str(ax["path"]), values=values))
    max_points = raw.get("max_points", 1000)
    if not isinstance(max_points, int) or max_points < 1:
        raise ConfigError("sweep.max_points: expected a positive integer")
    return SweepOptions(command=command, axes=tuple(axes), max_points=max_points)


def _parse_output(raw) -> OutputOptions:
    raw = _require_mapping(raw, "output")
    _check_keys(raw, {"directory", "formats", "plots"}, "output")
    formats = raw.get("formats", ["csv", "json"])
    if not isinstance(formats, list) or any(f not in ("csv", "json") for f in formats):
        raise ConfigError("output.formats: expected a list drawn from csv, json")
    return OutputOptions(
        directory=str(raw.get("directory", "out")),
        formats=tuple(formats),
        plots=bool(raw.get("plots", True)),
    )


def _parse_validation(raw) -> ValidationOptions:
    raw = _require_mapping(raw, "validation")
    _check_keys(raw, {"margin", "coherence_threshold", "warn_only"}, "validation")
    return ValidationOptions(
        margin=_real(raw.get("margin", 10.0), "validation.margin"),
        coherence_threshold=_real(raw.get("coherence_threshold", 0.1),
                                  "validation.coherence_threshold"),
        warn_only=bool(raw.get("warn_only", False)),
    )
