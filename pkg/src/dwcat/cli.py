"""Command line front end: eigen, protocol, sweep, spectrum, design, wigner.

Configuration is a nested YAML file; every key has a default and
``--override a.b=value`` edits single entries. Times accept a ``/w`` suffix
(units of 1/omega, the default for bare numbers) or ``us``; temperatures
accept ``K`` or ``mK``.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import itertools
import json
import logging
import math
import platform
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .analysis import fidelity, populations, wigner
from .control import RAMP_KINDS, TransitionSet
from .device import MembraneGeometry, alpha_table, design_report
from .dynamics import (
    ProtocolConfig,
    StepPolicy,
    Trajectory,
    hold,
    run_protocol,
    target_state,
)
from .readout import CavityParams, output_spectrum
from .spectral import BasisPolicy, PotentialParams, UnitSystem, diagonalize, gap, relative_error
from .states import NumericalAbort, load_state, save_state

log = logging.getLogger("dwcat")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

DEFAULTS: dict = {
    "device": {"mass": 1.89275e-18, "omega": 2 * math.pi * 2e6, "beta": None},
    "basis": {"c1": 2.0, "c2": 5e-4, "zeta_switch": -2.5e-4, "dim": 50},
    "protocol": {
        "zeta_c": -2.5e-4,
        "zeta_f": 3e-4,
        "dt1": "1/w",
        "dt2": "110/w",
        "stage2_ramp": "gap_adapted",
        "stage3_ramp": "sine",
        "transitions": 4,
        "initial_occupation": 0.0,
        "xi": 0.0,
        "stage2_mode": "adiabatic",
    },
    "bath": {"temperature": "15mK", "quality_factor": 1e6},
    "stepping": {"max_phase": 0.05, "refresh": 0.5, "stride": 20, "check_convergence": False},
    "eigen": {"zeta_min": -1.0, "zeta_max": 3e-4, "points": 50, "gaps": [1, 2, 3, 4], "calibration": True,
              "calibration_dim": 1000, "calibration_zetas": [-2.5e-4, 3e-4], "calibration_levels": 26},
    "wigner": {"state": None, "x_range": [-60.0, 60.0], "p_range": [-0.5, 0.5], "resolution": 241},
    "spectrum": {"state": None, "kappa": 1.0, "g": 0.1, "hold_times": [0.0], "levels": 26,
                 "axis": [-0.2, 0.2, 4001], "floor": 1e-6},
    "sweep": {"axes": {}, "max_points": 1000},
    "design": {
        "membrane": {"length": 5e-6, "width": 1e-6, "thickness": 3.35e-10,
                     "mass_density": 2.26e3, "young_modulus": 1.02e12, "tension": None},
        "omega": 2 * math.pi * 2e6,
        "a_over_z0": 10.0,
        "b_over_z0": {"start": 0.1, "stop": 20.0, "num": 200},
        "max_order": 4,
    },
}


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------- config


def _merge(base: dict, extra: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in (extra or {}).items():
        where = f"{path}{key}"
        if key not in out:
            raise ConfigError(f"unknown config field '{where}'")
        if isinstance(out[key], dict) and key != "axes":
            if not isinstance(value, dict):
                raise ConfigError(f"field '{where}' must be a mapping")
            out[key] = _merge(out[key], value, where + ".")
        else:
            out[key] = value
    return out


def _coerce_numbers(obj):
    """YAML 1.1 reads 1e6 as a string; turn such plain numbers into floats."""
    if isinstance(obj, dict):
        return {k: _coerce_numbers(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_coerce_numbers(v) for v in obj]
    if isinstance(obj, str):
        try:
            return float(obj)
        except ValueError:
            return obj
    return obj


def load_config(path: str | None, overrides: list[str] | None = None) -> dict:
    raw: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
            raise ConfigError(f"{path}: YAML error{where}: {getattr(exc, 'problem', exc)}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        raw = _coerce_numbers(raw.get("config", raw))  # a run manifest is accepted too
    cfg = _merge(DEFAULTS, raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = cfg
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"unknown config field '{key}'")
            node = node[p]
        if parts[-1] not in node and parts[-2:-1] != ["axes"]:
            raise ConfigError(f"unknown config field '{key}'")
        try:
            node[parts[-1]] = _coerce_numbers(yaml.safe_load(value))
        except yaml.YAMLError as exc:
            raise ConfigError(f"override '{item}': {exc}") from exc
    return cfg


_TIME = re.compile(r"^\s*([-+0-9.eE]+)\s*(/w|/omega|us|µs)?\s*$")
_TEMP = re.compile(r"^\s*([-+0-9.eE]+)\s*(mK|K)?\s*$")


def parse_time(value, unit: UnitSystem, field: str) -> float:
    """Duration in 1/omega from a number or a string with /w or us suffix."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    m = _TIME.match(str(value))
    if not m:
        raise ConfigError(f"field '{field}': cannot parse time '{value}'")
    number = float(m.group(1))
    if m.group(2) in ("us", "µs"):
        return unit.time_to_dimensionless(number * 1e-6)
    return number


def parse_temperature(value, field: str) -> float:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    m = _TEMP.match(str(value))
    if not m:
        raise ConfigError(f"field '{field}': cannot parse temperature '{value}'")
    return float(m.group(1)) * (1e-3 if m.group(2) == "mK" else 1.0)


def parse_transitions(value, field: str = "protocol.transitions") -> TransitionSet:
    """Integer L means all even pairs up to L; a list gives explicit pairs."""
    try:
        if value is None or value == 0:
            return TransitionSet()
        if isinstance(value, int):
            return TransitionSet.up_to(value)
        return TransitionSet(tuple(tuple(p) for p in value))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field '{field}': {exc}") from exc


def units_from(cfg: dict) -> UnitSystem:
    d = cfg["device"]
    beta = d.get("beta")
    if beta is None:
        from .device import reference_units

        beta = reference_units().beta
    try:
        return UnitSystem(float(d["mass"]), float(d["omega"]), float(beta))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"device: {exc}") from exc


def policy_from(cfg: dict) -> BasisPolicy:
    b = cfg["basis"]
    try:
        return BasisPolicy(float(b["c1"]), float(b["c2"]), float(b["zeta_switch"]), int(b["dim"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"basis: {exc}") from exc


def protocol_from(cfg: dict) -> ProtocolConfig:
    unit = units_from(cfg)
    p = cfg["protocol"]
    for key in ("stage2_ramp", "stage3_ramp"):
        if p[key] not in RAMP_KINDS:
            raise ConfigError(f"field 'protocol.{key}': unknown ramp '{p[key]}'")
    s = cfg["stepping"]
    try:
        stepping3 = StepPolicy(
            max_phase=float(s["max_phase"]), refresh=float(s["refresh"]), stride=int(s["stride"]),
            check_convergence=bool(s["check_convergence"]),
        )
        return ProtocolConfig(
            zeta_c=float(p["zeta_c"]),
            zeta_f=float(p["zeta_f"]),
            dt1=parse_time(p["dt1"], unit, "protocol.dt1"),
            dt2=parse_time(p["dt2"], unit, "protocol.dt2"),
            stage2_ramp=p["stage2_ramp"],
            stage3_ramp=p["stage3_ramp"],
            transitions=parse_transitions(p["transitions"]),
            initial_occupation=float(p["initial_occupation"]),
            temperature=parse_temperature(cfg["bath"]["temperature"], "bath.temperature"),
            quality_factor=float(cfg["bath"]["quality_factor"]),
            xi=float(p["xi"]),
            unit=unit,
            policy=policy_from(cfg),
            stage2_mode=p["stage2_mode"],
            stage3_stepping=stepping3,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"protocol: {exc}") from exc


# ----------------------------------------------------------------- manifest


class Run:
    """Output directory bookkeeping: files written, log, manifest."""

    def __init__(self, out: Path, command: str, cfg: dict):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.cfg = cfg
        self.files: list[str] = []
        self.derived: dict = {}
        self.started = time.time()
        self.handler = logging.FileHandler(self.out / "run.log", mode="w")
        self.handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
        log.addHandler(self.handler)
        log.setLevel(logging.INFO)

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def close(self, status: str = "ok") -> dict:
        manifest = {
            "command": self.command,
            "status": status,
            "software": {"dwcat": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "started": _dt.datetime.fromtimestamp(self.started, _dt.timezone.utc).isoformat(),
            "elapsed_s": time.time() - self.started,
            "config": _plain(self.cfg),
            "derived": _plain(self.derived),
            "outputs": sorted(set(self.files)) + ["manifest.json", "run.log"],
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=1))
        log.removeHandler(self.handler)
        self.handler.close()
        return manifest


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _write_rows(path: Path, rows: list[dict]) -> None:
    fields: list[str] = []
    for row in rows:
        fields.extend(k for k in row if k not in fields)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


# ----------------------------------------------------------------- commands


def _eigen_point(args):
    zeta, gamma, policy, gaps = args
    eig = diagonalize(PotentialParams(zeta, gamma), policy)
    return zeta, eig.energies, eig.parities, [gap(eig, k, 0) for k in gaps]


def cmd_eigen(cfg: dict, run: Run, workers: int) -> int:
    unit = units_from(cfg)
    policy = policy_from(cfg)
    e = cfg["eigen"]
    zetas = np.linspace(float(e["zeta_min"]), float(e["zeta_max"]), int(e["points"]))
    gaps = [int(k) for k in e["gaps"]]
    tasks = [(float(z), unit.gamma, policy, gaps) for z in zetas]
    results = _map(_eigen_point, tasks, workers)
    dim = policy.dim
    _write_rows(run.path("eigenvalues.csv"),
                [{"zeta": z, **{f"E{n}": float(E[n]) for n in range(dim)}} for z, E, _, _ in results])
    _write_rows(run.path("parities.csv"),
                [{"zeta": z, **{f"P{n}": par[n] for n in range(dim)}} for z, _, par, _ in results])
    _write_rows(run.path("gaps.csv"),
                [{"zeta": z, **{f"delta{k}0": d for k, d in zip(gaps, g)}} for z, _, _, g in results])
    if e["calibration"]:
        report = calibration_report(unit.gamma, policy, [float(z) for z in e["calibration_zetas"]],
                                    int(e["calibration_dim"]), int(e["calibration_levels"]))
        run.path("calibration.json").write_text(json.dumps(report, indent=1))
        run.derived["calibration_max_error"] = {k: v["max_error"] for k, v in report.items()}
        for z, v in report.items():
            print(f"calibration zeta={z}: max eps_n (n < {e['calibration_levels']}) = {v['max_error']:.3e}")
    run.derived["gamma"] = unit.gamma
    print(f"wrote {len(results)} eigensystems to {run.out}")
    return EXIT_OK


def calibration_report(gamma: float, policy: BasisPolicy, zetas, high_dim: int, levels: int) -> dict:
    """Relative error of the policy-basis spectrum against a high truncation."""
    out = {}
    hi_policy = BasisPolicy(policy.c1, policy.c2, policy.zeta_switch, high_dim)
    for z in zetas:
        lo = diagonalize(PotentialParams(z, gamma), policy).energies[:levels]
        hi = diagonalize(PotentialParams(z, gamma), hi_policy).energies[:levels]
        eps = relative_error(hi, lo)
        out[str(z)] = {"c1": policy.c1, "c2": policy.c2, "dim": policy.dim, "high_dim": high_dim,
                       "eps": [float(v) for v in eps], "max_error": float(np.nanmax(eps))}
    return out


def _protocol_outputs(config: ProtocolConfig, traj: Trajectory, run: Run, wcfg: dict) -> dict:
    traj.to_csv(run.path("trajectory.csv"))
    traj.to_json(run.path("trajectory.json"))
    rho = traj.final_state
    save_state(run.path("final_state.npz"), rho, zeta=config.zeta_f)
    target, _ = target_state(config)
    result = {"final_fidelity": traj.final_fidelity, "fidelity_at_tc": traj.meta.get("fidelity_at_tc")}
    if config.xi:
        sym, _ = target_state(config, xi=0.0)
        result["fidelity_to_symmetric_ground"] = fidelity(rho.in_basis(sym.basis), sym.matrix)
        result["fidelity_to_asymmetric_ground"] = fidelity(rho.in_basis(target.basis), target.matrix)
    grid = wigner(rho, rho.basis, tuple(wcfg["x_range"]), tuple(wcfg["p_range"]), int(wcfg["resolution"]))
    grid.to_csv(run.path("wigner.csv"))
    grid.to_binary(run.path("wigner.bin"))
    result["wigner_covers_support"] = bool(grid.covers_support)
    run.path("result.json").write_text(json.dumps(_plain(result), indent=1))
    return result


def cmd_protocol(cfg: dict, run: Run, workers: int) -> int:
    config = protocol_from(cfg)
    run.derived.update({"gamma": config.unit.gamma, "z_zpm_m": config.unit.z_zpm,
                        "protocol": config.to_dict()})
    traj = run_protocol(config)
    result = _protocol_outputs(config, traj, run, cfg["wigner"])
    run.derived["result"] = result
    conv = traj.meta["stages"][-1].get("convergence")
    if conv:
        run.derived["convergence"] = conv
    print(f"final fidelity F = {result['final_fidelity']:.6f}")
    return EXIT_OK


def _sweep_point(args):
    index, cfg, assignment = args
    t0 = time.time()
    row = {"index": index, **{k: _plain(v) for k, v in assignment.items()}}
    try:
        config = protocol_from(cfg)
        traj = run_protocol(config)
        row.update({"final_fidelity": traj.final_fidelity, "status": "ok"})
        if config.xi:
            sym, _ = target_state(config, xi=0.0)
            row["fidelity_to_symmetric_ground"] = fidelity(traj.final_state.in_basis(sym.basis), sym.matrix)
    except Exception as exc:  # per-point failures are recorded, the sweep goes on
        row.update({"final_fidelity": float("nan"), "status": f"{type(exc).__name__}: {exc}"})
    row["runtime_s"] = time.time() - t0
    return row


_SWEEP_FIELDS = {
    "dt1": "protocol", "dt2": "protocol", "transitions": "protocol", "initial_occupation": "protocol",
    "xi": "protocol", "stage3_ramp": "protocol", "stage2_ramp": "protocol", "zeta_f": "protocol",
    "zeta_c": "protocol", "stage2_mode": "protocol", "temperature": "bath", "quality_factor": "bath",
}


def sweep_points(cfg: dict) -> list[tuple[int, dict, dict]]:
    axes = cfg["sweep"]["axes"] or {}
    if not axes:
        raise ConfigError("sweep.axes is empty")
    names = list(axes)
    for name in names:
        if name not in _SWEEP_FIELDS:
            raise ConfigError(f"sweep axis '{name}' is not a protocol field; choose from {sorted(_SWEEP_FIELDS)}")
        if not isinstance(axes[name], list) or not axes[name]:
            raise ConfigError(f"sweep axis '{name}' needs a non-empty list")
    size = math.prod(len(axes[n]) for n in names)
    if size > int(cfg["sweep"]["max_points"]):
        raise ConfigError(f"sweep has {size} points, above sweep.max_points={cfg['sweep']['max_points']}")
    points = []
    for i, combo in enumerate(itertools.product(*(axes[n] for n in names))):
        point = copy.deepcopy(cfg)
        assignment = dict(zip(names, combo))
        for name, value in assignment.items():
            point[_SWEEP_FIELDS[name]][name] = value
        protocol_from(point)  # validate before launching
        points.append((i, point, assignment))
    return points


def cmd_sweep(cfg: dict, run: Run, workers: int) -> int:
    points = sweep_points(cfg)
    rows = sorted(_map(_sweep_point, points, workers), key=lambda r: r["index"])
    for row in rows:
        d = run.out / f"point_{row['index']:04d}"
        d.mkdir(exist_ok=True)
        (d / "result.json").write_text(json.dumps(_plain(row), indent=1))
        run.files.append(f"{d.name}/result.json")
    _write_rows(run.path("sweep.csv"), rows)
    failed = sum(r["status"] != "ok" for r in rows)
    run.derived["points"] = len(rows)
    run.derived["failed"] = failed
    print(f"sweep: {len(rows)} points, {failed} failed")
    return EXIT_OK


def cmd_spectrum(cfg: dict, run: Run, workers: int) -> int:
    s = cfg["spectrum"]
    if not s["state"]:
        raise ConfigError("spectrum.state must name a saved state (.npz)")
    if not Path(s["state"]).exists():
        raise ConfigError(f"spectrum.state: no such file {s['state']}")
    rho, extra = load_state(s["state"])
    config = protocol_from(cfg)
    zeta = float(extra["zeta"]) if "zeta" in extra else config.zeta_f
    params = PotentialParams(zeta, config.unit.gamma, config.xi)
    eig = diagonalize(params, config.policy)
    rho = rho.in_basis(eig.basis)
    cavity = CavityParams(float(s["kappa"]), float(s["g"]))
    bath = config.bath
    lo, hi, n = s["axis"]
    axis = np.linspace(float(lo), float(hi), int(n))
    K = int(s["levels"])
    for i, raw in enumerate(s["hold_times"]):
        t = parse_time(raw, config.unit, f"spectrum.hold_times[{i}]")
        state = rho if t == 0 else hold(rho, params, bath, t).final_state
        pops = np.clip(populations(state, eig)[:K], 0.0, None)
        result = output_spectrum(pops, eig, cavity, bath, axis, floor=float(s["floor"]))
        result.to_csv(run.path(f"spectrum_{i:02d}.csv"))
        result.lines_to_json(run.path(f"lines_{i:02d}.json"))
        _write_rows(run.path(f"populations_{i:02d}.csv"), [{"n": k, "p": float(p)} for k, p in enumerate(pops)])
        run.derived[f"hold_{i:02d}"] = {"time": t, "min_S": float(result.values.min())}
    print(f"wrote {len(s['hold_times'])} spectra to {run.out}")
    return EXIT_OK


def cmd_design(cfg: dict, run: Run, workers: int) -> int:
    d = cfg["design"]
    try:
        membrane = MembraneGeometry(**{k: (None if v is None else float(v)) for k, v in d["membrane"].items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"design.membrane: {exc}") from exc
    b = d["b_over_z0"]
    grid = np.linspace(float(b["start"]), float(b["stop"]), int(b["num"]))
    a = float(d["a_over_z0"])
    report = design_report(membrane, d["omega"], a, grid)
    rows = report.pop("alpha_table")
    if int(d["max_order"]) != 4:
        rows = alpha_table(a, 1.0, grid, int(d["max_order"]))
    _write_rows(run.path("alpha_table.csv"), rows)
    run.path("design.json").write_text(json.dumps(_plain(report), indent=1))
    run.derived.update({k: report[k] for k in ("mass_kg", "beta_J_per_m4", "gamma", "z_zpm_m")})
    print(json.dumps(_plain(report), indent=1))
    return EXIT_OK


def cmd_wigner(cfg: dict, run: Run, workers: int) -> int:
    w = cfg["wigner"]
    if not w["state"] or not Path(w["state"]).exists():
        raise ConfigError(f"wigner.state: no such file {w['state']}")
    rho, _ = load_state(w["state"])
    grid = wigner(rho, rho.basis, tuple(w["x_range"]), tuple(w["p_range"]), int(w["resolution"]))
    grid.to_csv(run.path("wigner.csv"))
    grid.to_binary(run.path("wigner.bin"))
    run.derived.update({"covers_support": bool(grid.covers_support), **grid.meta})
    print(f"W(0,0)*pi = {grid.value_at(0.0, 0.0) * math.pi:.6f}; grid covers support: {grid.covers_support}")
    return EXIT_OK


COMMANDS = {
    "eigen": cmd_eigen,
    "protocol": cmd_protocol,
    "sweep": cmd_sweep,
    "spectrum": cmd_spectrum,
    "design": cmd_design,
    "wigner": cmd_wigner,
}


def _map(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dwcat", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML config (or a run manifest)")
        p.add_argument("--out", help="output directory (default runs/<command>)")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--seed", type=int, default=0, help="reserved; the pipeline is deterministic")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.override)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run = Run(Path(args.out or f"runs/{args.command}"), args.command, cfg)
    run.derived["seed"] = args.seed
    status, code = "ok", EXIT_OK
    try:
        code = COMMANDS[args.command](cfg, run, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        status, code = f"config error: {exc}", EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc} {exc.diagnostics}", file=sys.stderr)
        run.derived["abort"] = {"message": str(exc), **exc.diagnostics}
        status, code = f"numerical abort: {exc}", EXIT_NUMERICAL
    finally:
        run.close(status)
    return code


if __name__ == "__main__":
    sys.exit(main())
