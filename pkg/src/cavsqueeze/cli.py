"""Config-driven batch front-end.

Subcommands: ``validate``, ``effective``, ``simulate``, ``inout``, ``sweep``.
Each run writes ``<command>.csv`` / ``<command>.json`` (full double
precision, deterministic bytes for a fixed config, seed and thread count),
an optional figure, and a ``manifest.json`` recording the config hash and an
inventory of outputs.  The manifest carries a timestamp and is the one file
excluded from the byte-determinism contract.

Exit codes: 0 success, 2 validation-gate failure, 3 numeric failure,
4 config/schema error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import itertools
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import __version__
from . import evolution as ev
from . import fockcore as fc
from . import inout as io
from . import params as pm
from . import plots
from .config import RunConfig, load_config, resolve_config
from .errors import CavSqueezeError, ConfigError

ENV_OUTDIR = "CAVSQUEEZE_OUT"
COMMANDS = ("validate", "effective", "simulate", "inout", "sweep")


class GateFailure(CavSqueezeError):
    """A validation gate failed and the run is not in warn-only mode."""


# ---------------------------------------------------------------------------
# serialization helpers
# ---------------------------------------------------------------------------

def fmt_float(x) -> str:
    """Full-precision text form; round-trips exactly through float()."""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return f"{x:.17g}"


def jsonable(obj):
    """Recursively convert to JSON-safe values (inf/nan as strings,
    complex as {re, im} pairs), keeping floats as floats."""
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isinf(x) or math.isnan(x):
            return fmt_float(x)
        return x
    if isinstance(obj, (np.complexfloating, complex)):
        c = complex(obj)
        return {"re": jsonable(c.real), "im": jsonable(c.imag)}
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    return obj


def parse_json_number(value) -> float:
    """Inverse of the inf/nan string markers used in the JSON outputs."""
    if isinstance(value, str):
        return float(value)
    return float(value)


def parse_json_complex(value) -> complex:
    if value is None:
        return complex("nan")
    return complex(parse_json_number(value["re"]), parse_json_number(value["im"]))


def write_json(path: str, obj) -> None:
    text = json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n"
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt_float(v) if isinstance(v, (int, float, np.floating))
                             and not isinstance(v, bool) else str(v) for v in row])


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# command implementations (pure: config in, result out)
# ---------------------------------------------------------------------------

@dataclass
class CommandResult:
    json_obj: dict
    csv_header: list[str]
    csv_rows: list[list]
    summary: dict[str, float]
    gates_ok: bool = True
    notes: list[str] = field(default_factory=list)
    figure: object = None  # callable(path) or None


def _need_params(cfg: RunConfig) -> pm.PhysicalParams:
    if cfg.params is None:
        raise ConfigError("this command needs a parameters or family block")
    return cfg.params


def run_validate(cfg: RunConfig) -> CommandResult:
    p = _need_params(cfg)
    rows = pm.regime_report(p, cfg.sites, t=p.tau, margin=cfg.validation.margin)
    lhs, rhs = pm.condition_sides(p, cfg.sites)
    dt = p.delta_tilde
    residual = lhs - rhs
    scale = abs(dt) if dt != 0 else max(abs(lhs), abs(rhs), 1e-30)
    condition_ok = abs(residual) < 1e-3 * scale

    coherence = None
    if cfg.geometry is not None:
        coherence = pm.coherence_report(cfg.geometry, 0.0, cfg.laser_splitting,
                                        cfg.validation.coherence_threshold)

    gates_ok = all(r.ok for r in rows) and condition_ok \
        and (coherence is None or coherence.ok)

    json_obj = {
        "delta_tilde": dt,
        "condition": {
            "lhs": lhs, "rhs": rhs, "residual": residual,
            "residual_over_delta_tilde": abs(residual) / scale,
            "ok": condition_ok,
        },
        "regime": [{"name": r.name, "required": r.required,
                    "actual": r.actual, "ok": r.ok} for r in rows],
        "coherence": None if coherence is None else {
            "ratio_axial": coherence.ratio_axial,
            "ratio_laser": coherence.ratio_laser,
            "ratio_laser_ordinary": coherence.ratio_laser_ordinary,
            "threshold": coherence.threshold,
            "ok": coherence.ok,
        },
        "gates_ok": gates_ok,
        "n_atoms": len(cfg.sites),
    }
    csv_rows = [[r.name, r.required, r.actual, r.ok] for r in rows]
    worst = min((r.actual for r in rows if math.isfinite(r.actual)), default=math.inf)
    summary = {
        "gates_ok": float(gates_ok),
        "condition_residual": residual,
        "residual_over_delta_tilde": abs(residual) / scale,
        "worst_regime_ratio": worst,
    }
    notes = [] if gates_ok else ["one or more validation gates failed"]
    return CommandResult(json_obj, ["inequality", "required", "actual", "ok"],
                         csv_rows, summary, gates_ok=gates_ok, notes=notes)


def run_effective(cfg: RunConfig) -> CommandResult:
    p = _need_params(cfg)
    model = pm.derive_effective(p, cfg.sites)
    taus = cfg.simulation.tau_grid or (p.tau,)
    csv_rows = []
    for tau in taus:
        xi = model.Omega_eff * tau
        csv_rows.append([tau, xi.real, xi.imag, abs(xi)])

    n = len(cfg.sites)
    dk = model.delta_k
    xi_tau = model.Omega_eff * p.tau
    json_obj = {
        "n_atoms": n,
        "delta_k": {"min": float(dk.min()), "max": float(dk.max()),
                    "mean": float(dk.mean()), "std": float(dk.std())},
        "Omega_eff": model.Omega_eff,
        "Omega_eff_abs": abs(model.Omega_eff),
        "delta_tilde": model.delta_tilde,
        "condition": {"lhs": model.condition_lhs, "rhs": model.condition_rhs,
                      "residual": model.condition_residual},
        "xi": {"tau": p.tau, "value": xi_tau, "abs": abs(xi_tau)},
        "scaling": {
            "xi_abs_per_atom": abs(xi_tau) / n if n else 0.0,
            "predicted_xi_abs": {"2N": 2 * abs(xi_tau), "10N": 10 * abs(xi_tau)},
        },
    }
    summary = {
        "Omega_eff_re": model.Omega_eff.real,
        "Omega_eff_im": model.Omega_eff.imag,
        "Omega_eff_abs": abs(model.Omega_eff),
        "delta_tilde": model.delta_tilde,
        "condition_residual": model.condition_residual,
        "xi_abs": abs(xi_tau),
        "delta_k_mean": float(dk.mean()),
    }

    def figure(path, rows=csv_rows):
        plots.plot_effective([r[0] for r in rows], [r[3] for r in rows], path)

    return CommandResult(json_obj, ["tau", "xi_re", "xi_im", "xi_abs"],
                         csv_rows, summary, figure=figure)


def run_simulate(cfg: RunConfig, strict: bool = False) -> CommandResult:
    p = _need_params(cfg)
    sim = cfg.simulation
    layout = fc.HilbertLayout(n_max_a=sim.n_max_a, n_max_b=sim.n_max_b,
                              n_atoms=len(cfg.sites))
    if layout.dim > sim.dim_cap:
        raise ConfigError(
            f"simulation dimension {layout.dim} exceeds the configured cap "
            f"{sim.dim_cap}; lower the cutoffs or the atom count"
        )
    taus = sim.tau_grid or tuple(i * p.tau / 20 for i in range(21))
    ctrl = ev.StepControl(rtol=sim.rtol)
    res = ev.compare_full_vs_effective(
        p, cfg.sites, layout, taus, engine=sim.engine,
        step_control=ctrl, regime_margin=sim.regime_margin,
    )
    csv_rows = [[pt.tau, pt.infidelity, pt.leakage, pt.var_antisqueezed,
                 pt.var_squeezed, pt.n_a, pt.n_b] for pt in res.points]
    last = res.points[-1]
    json_obj = {
        "Omega_eff": res.omega_eff,
        "flagged": res.flagged,
        "warnings": res.warnings,
        "layout": {"n_max_a": sim.n_max_a, "n_max_b": sim.n_max_b,
                   "n_atoms": len(cfg.sites), "dim": layout.dim},
        "final": {"tau": last.tau, "infidelity": last.infidelity,
                  "leakage": last.leakage, "var_squeezed": last.var_squeezed},
    }
    summary = {
        "final_infidelity": last.infidelity,
        "final_leakage": last.leakage,
        "final_var_squeezed": last.var_squeezed,
        "max_infidelity": max(pt.infidelity for pt in res.points),
        "flagged": float(res.flagged),
    }
    notes = list(res.warnings)
    if strict and res.flagged:
        raise GateFailure("; ".join(res.warnings))

    def figure(path, pts=res.points, omega=abs(res.omega_eff)):
        plots.plot_compare([q.tau for q in pts], [q.infidelity for q in pts],
                           [q.var_squeezed for q in pts], omega, path)

    return CommandResult(
        json_obj,
        ["tau", "infidelity", "leakage", "var_antisqueezed", "var_squeezed",
         "n_a", "n_b"],
        csv_rows, summary, gates_ok=not res.flagged, notes=notes, figure=figure)


def _resolve_drive(cfg: RunConfig) -> io.DriveParams:
    d = cfg.drive
    if d is None:
        raise ConfigError("this command needs a drive block")
    kappa_a = d.kappa_a
    kappa_b = d.kappa_b
    if kappa_a is None or kappa_b is None:
        if cfg.params is None:
            raise ConfigError("drive: kappa_a/kappa_b missing and no parameters "
                              "block to take them from")
        kappa_a = cfg.params.kappa_a if kappa_a is None else kappa_a
        kappa_b = cfg.params.kappa_b if kappa_b is None else kappa_b
    try:
        if d.from_effective:
            model = pm.derive_effective(_need_params(cfg), cfg.sites)
            return io.DriveParams.from_effective(model.Omega_eff, kappa_a, kappa_b,
                                                 d.eps_a, d.eps_b)
        return io.DriveParams(d.omega, kappa_a, kappa_b, d.eps_a, d.eps_b)
    except ValueError as exc:
        raise ConfigError(f"drive: {exc}") from None


def run_inout(cfg: RunConfig) -> CommandResult:
    drive = _resolve_drive(cfg)
    result = io.compute_io_result(drive)

    grid = list(cfg.drive.omega_grid)
    notes = []
    if result.is_critical:
        notes.append("PERFECT SQUEEZING POINT: Omega^2 = kappa_a kappa_b; "
                     "output displacements diverge and var_Y_out = 0")
        grid = [w for w in grid if w != 0.0]
    rows = io.variance_spectrum(drive, grid) if grid else np.zeros((0, 3))
    csv_rows = [list(r) for r in rows]

    desc = result.description
    json_obj = {
        "drive": {"Omega": drive.Omega, "kappa_a": drive.kappa_a,
                  "kappa_b": drive.kappa_b, "eps_a": drive.eps_a,
                  "eps_b": drive.eps_b},
        "is_critical": result.is_critical,
        "alpha_0": result.alpha_0,
        "beta_0": result.beta_0,
        "var_X_out": result.var_X_out,
        "var_Y_out": result.var_Y_out,
        "r": result.r,
        "alpha_eff": result.alpha_eff,
        "beta_eff": result.beta_eff,
        "output_state": None if desc is None else {
            "squeeze": desc.squeeze,
            "displacements_before": list(desc.displacements_before),
            "displacements_after": list(desc.displacements_after),
        },
    }
    summary = {
        "Omega": drive.Omega,
        "var_X_out": result.var_X_out,
        "var_Y_out": result.var_Y_out,
        "r": result.r,
        "is_critical": float(result.is_critical),
        "alpha_eff_abs": abs(result.alpha_eff) if result.alpha_eff is not None
        else math.inf,
    }

    def figure(path, spectrum=rows):
        if len(spectrum):
            plots.plot_spectrum(np.asarray(spectrum), path)

    return CommandResult(json_obj, ["omega", "var_X_out", "var_Y_out"],
                         csv_rows, summary, notes=notes, figure=figure)


def io_result_from_json(obj: dict) -> io.IOResult:
    """Rebuild the result bundle from an emitted inout.json payload."""
    drive = io.DriveParams(
        Omega=parse_json_number(obj["drive"]["Omega"]),
        kappa_a=parse_json_number(obj["drive"]["kappa_a"]),
        kappa_b=parse_json_number(obj["drive"]["kappa_b"]),
        eps_a=parse_json_complex(obj["drive"]["eps_a"]),
        eps_b=parse_json_complex(obj["drive"]["eps_b"]),
    )
    return io.compute_io_result(drive)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _set_path(raw: dict, path: str, value) -> dict:
    parts = path.split(".")
    node = raw
    for key in parts[:-1]:
        nxt = node.get(key)
        if not isinstance(nxt, dict):
            nxt = {}
            node[key] = nxt
        node = nxt
    node[parts[-1]] = value
    return raw


_RUNNERS = {
    "validate": run_validate,
    "effective": run_effective,
    "simulate": run_simulate,
    "inout": run_inout,
}


def _sweep_worker(args):
    idx, raw, command, seed = args
    try:
        cfg = resolve_config(raw, seed_override=seed)
        result = _RUNNERS[command](cfg)
        return idx, result.summary, None
    except Exception as exc:  # per-point isolation by design
        return idx, {}, f"{type(exc).__name__}: {exc}"


def run_sweep(cfg: RunConfig, threads: int = 1) -> CommandResult:
    import copy

    sw = cfg.sweep
    if sw is None:
        raise ConfigError("this command needs a sweep block")
    grids = [ax.values for ax in sw.axes]
    points = list(itertools.product(*grids))
    if len(points) > sw.max_points:
        raise ConfigError(
            f"sweep has {len(points)} points, above the cap {sw.max_points}"
        )

    tasks = []
    for idx, combo in enumerate(points):
        raw = copy.deepcopy(cfg.raw)
        raw.pop("sweep", None)
        for ax, value in zip(sw.axes, combo):
            _set_path(raw, ax.path, value)
        tasks.append((idx, raw, sw.command, cfg.seed))

    if threads <= 1:
        outcomes = [_sweep_worker(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_sweep_worker, tasks))
    outcomes.sort(key=lambda item: item[0])

    axis_names = [ax.path for ax in sw.axes]
    header = ["point"] + axis_names + ["metric", "value", "status"]
    csv_rows = []
    failures = 0
    metric_series: dict[str, list[float]] = {}
    for (idx, summary, error), combo in zip(outcomes, points):
        if error is not None:
            failures += 1
            csv_rows.append([idx, *combo, "error", "nan", f"failed: {error}"])
            for series in metric_series.values():
                series.append(math.nan)
            continue
        for name in sorted(summary):
            csv_rows.append([idx, *combo, name, summary[name], "ok"])
        for name in sorted(summary):
            metric_series.setdefault(name, [math.nan] * idx).append(summary[name])

    json_obj = {
        "command": sw.command,
        "axes": [{"path": ax.path, "values": list(ax.values)} for ax in sw.axes],
        "n_points": len(points),
        "n_failed": failures,
    }
    summary = {"n_points": float(len(points)), "n_failed": float(failures)}

    figure = None
    if len(sw.axes) == 1 and len(points) > 1:
        axis = sw.axes[0]

        def figure(path, values=list(axis.values), metrics=metric_series,
                   name=axis.path):
            plots.plot_sweep(name, values, metrics, path)

    return CommandResult(json_obj, header, csv_rows, summary,
                         gates_ok=failures == 0, figure=figure)


# ---------------------------------------------------------------------------
# file emission and entry point
# ---------------------------------------------------------------------------

def _emit(command: str, result: CommandResult, outdir: str, cfg: RunConfig,
          seed, threads: int) -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    written = []
    if "csv" in cfg.output.formats:
        path = os.path.join(outdir, f"{command}.csv")
        write_csv(path, result.csv_header, result.csv_rows)
        written.append(path)
    if "json" in cfg.output.formats:
        path = os.path.join(outdir, f"{command}.json")
        write_json(path, result.json_obj)
        written.append(path)
    if cfg.output.plots and result.figure is not None:
        path = os.path.join(outdir, f"{command}.png")
        result.figure(path)
        written.append(path)

    manifest = {
        "artifact_version": __version__,
        "command": command,
        "config_sha256": cfg.sha256,
        "timestamp_utc": datetime.now(timezone.utc).isoformat(),
        "seed": seed,
        "threads": threads,
        "status": "ok" if result.gates_ok else "gates_failed",
        "notes": result.notes,
        "summary": result.summary,
        "outputs": [{"path": os.path.basename(p), "sha256": _sha256_file(p),
                     "bytes": os.path.getsize(p)} for p in written],
    }
    tmp = os.path.join(outdir, "manifest.json.tmp")
    write_json(tmp, manifest)
    os.replace(tmp, os.path.join(outdir, "manifest.json"))
    return written


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cavsqueeze",
        description="Cavity-squeezing parameter engineering and simulation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
        ("validate", "check regime hierarchies, balance condition and coherence"),
        ("effective", "derive the effective parametric model"),
        ("simulate", "compare full dynamics against the engineered squeeze"),
        ("inout", "closed-form output squeezing observables"),
        ("sweep", "run another command over a parameter grid"),
    ):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", required=True, help="path to the YAML run config")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker processes for sweeps")
        p.add_argument("--seed", type=int, default=None,
                       help="override the site-generation seed")
        p.add_argument("--strict", action="store_true",
                       help="treat gate warnings as errors")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 4

    # precedence: --out flag, explicit config entry, environment, then ./out
    explicit_dir = None
    if isinstance(cfg.raw.get("output"), dict) and "directory" in cfg.raw["output"]:
        explicit_dir = cfg.output.directory
    outdir = args.out or explicit_dir or os.environ.get(ENV_OUTDIR) or "out"

    try:
        if args.command == "sweep":
            result = run_sweep(cfg, threads=args.threads)
        elif args.command == "simulate":
            result = run_simulate(cfg, strict=args.strict)
        else:
            result = _RUNNERS[args.command](cfg)
        if args.command == "validate" and not result.gates_ok \
                and not cfg.validation.warn_only:
            _emit(args.command, result, outdir, cfg, cfg.seed, args.threads)
            for note in result.notes:
                print(note, file=sys.stderr)
            _print_report(args.command, result)
            return 2
        if args.strict and not result.gates_ok:
            raise GateFailure("; ".join(result.notes) or "gates failed")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 4
    except GateFailure as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return 2
    except CavSqueezeError as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3

    _emit(args.command, result, outdir, cfg, cfg.seed, args.threads)
    _print_report(args.command, result)
    return 0


def _print_report(command: str, result: CommandResult) -> None:
    for note in result.notes:
        print(note)
    keys = sorted(result.summary)
    widths = max((len(k) for k in keys), default=0)
    print(f"[{command}] summary:")
    for key in keys:
        print(f"  {key:<{widths}}  {fmt_float(result.summary[key])}")


if __name__ == "__main__":
    sys.exit(main())
