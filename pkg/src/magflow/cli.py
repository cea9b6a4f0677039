"""Command-line front end: config parsing, dispatch, deterministic output.

Configs are flat ``section.key = value`` text files with ``#`` comments and a
strict schema: unknown keys are errors.  Every command writes one JSON
summary to stdout (schema_version 1, keys sorted, so identical runs are
byte-identical) and CSV artifacts under ``--out``.  Exit codes: 0 success,
2 nonconvergence, 1 any other error.
"""

from __future__ import annotations

import argparse
import json
import sys as _sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import critical_values as cv
from . import variational as vr
from .errors import MagflowError, MaxIterations, ParseError, ValidationError
from .fields import DriftField, ScalarField
from .flow import State, certify_orbit, energy_drift, integrate
from .loop_space import (
    lifted_action_A,
    lifted_to_dict,
    load_lifted,
    nodes_to_csv,
    save_lifted,
)
from .sphere_geom import Metric
from .tonelli import Lagrangian, MagneticSystem, default_extension_radius

COMMANDS = (
    "flow",
    "waist",
    "minimax",
    "scan",
    "multiplicity",
    "critical-values",
    "orbit-check",
)

_SCHEMA: dict[str, tuple[str, str]] = {
    # key: (type tag, default-as-string or "" for required-by-command)
    "system.metric": ("choice:round,conformal", "round"),
    "system.conformal_exponent": ("scalar_field", "constant(0.0)"),
    "system.density": ("scalar_field", "height(1.0, 0.0)"),
    "system.potential": ("scalar_field", "constant(0.0)"),
    "system.drift": ("drift_field", "none"),
    "system.extension_radius": ("auto_float", "auto"),
    "system.quad_depth": ("int:2,10", "6"),
    "system.lift_depth": ("int:2,9", "6"),
    "discretization.loop_nodes": ("int:16,8192", "128"),
    "discretization.path_nodes": ("int:8,256", "12"),
    "discretization.path_loop_nodes": ("int:16,8192", "512"),
    "solver.tol": ("float:>0", "1e-6"),
    "solver.max_iter": ("int:1,1000000", "20000"),
    "solver.max_sweeps": ("int:1,100000", "1500"),
    "solver.certify_h": ("float:>0", "1e-3"),
    "run.energy": ("float", "0.02"),
    "run.energy_grid": ("grid", ""),
    "run.labels": ("labels", "(1,0);(2,0)"),
    "run.seed_z0": ("float:open_pm1", "0.0"),
    "run.seed_amplitude": ("float", "0.05"),
    "run.seed_mode": ("int:0,64", "3"),
    "run.e_max": ("float:>0", "0.3"),
    "run.grid_step": ("float:>0", "0.01"),
    "run.loop_file": ("str", ""),
    "flow.q0": ("vec3", "1,0,0"),
    "flow.v0": ("vec3", "0,1,0"),
    "flow.time": ("float:>0", "10.0"),
    "flow.step": ("float:>0", "1e-3"),
    "rng.seed": ("int:0,18446744073709551615", "0"),
}


@dataclass
class RunConfig:
    values: dict[str, object] = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    def system(self) -> MagneticSystem:
        metric = (
            Metric.round()
            if self["system.metric"] == "round"
            else Metric.conformal(self["system.conformal_exponent"])
        )
        potential = self["system.potential"]
        ext = self["system.extension_radius"]
        if ext == "auto":
            ext = default_extension_radius(potential, e_ref=max(1.0, self["run.energy"]))
        lag = Lagrangian.electromagnetic(
            metric=metric,
            potential=potential,
            drift=self["system.drift"],
            extension_radius=float(ext),
        )
        return MagneticSystem(
            lag,
            self["system.density"],
            quad_depth=self["system.quad_depth"],
            lift_depth=self["system.lift_depth"],
            rng_seed=self["rng.seed"],
        )

    def solver(self) -> vr.SolverConfig:
        return vr.SolverConfig(
            tol=self["solver.tol"],
            max_iter=self["solver.max_iter"],
            max_sweeps=self["solver.max_sweeps"],
            certify_h=self["solver.certify_h"],
            path_nodes=self["discretization.path_nodes"],
        )


def _parse_value(key: str, raw: str):
    tag = _SCHEMA[key][0]
    try:
        if tag.startswith("choice:"):
            opts = tag.split(":", 1)[1].split(",")
            if raw not in opts:
                raise ValidationError(key, f"must be one of {opts}")
            return raw
        if tag == "scalar_field":
            return ScalarField.parse(raw)
        if tag == "drift_field":
            return DriftField.parse(raw)
        if tag == "auto_float":
            if raw == "auto":
                return "auto"
            v = float(raw)
            if v <= 0:
                raise ValidationError(key, "must be positive or 'auto'")
            return v
        if tag.startswith("int:"):
            lo, hi = (int(t) for t in tag.split(":", 1)[1].split(","))
            v = int(raw)
            if not lo <= v <= hi:
                raise ValidationError(key, f"must lie in [{lo}, {hi}]")
            return v
        if tag.startswith("float"):
            v = float(raw)
            if tag == "float:>0" and v <= 0:
                raise ValidationError(key, "must be positive")
            if tag == "float:open_pm1" and not -1.0 < v < 1.0:
                raise ValidationError(key, "must lie strictly between -1 and 1")
            return v
        if tag == "vec3":
            parts = [float(t) for t in raw.split(",")]
            if len(parts) != 3:
                raise ValidationError(key, "needs three comma-separated numbers")
            return np.array(parts)
        if tag == "grid":
            if raw == "":
                return []
            if ":" in raw:
                a, b, s = (float(t) for t in raw.split(":"))
                n = int(round((b - a) / s))
                return [a + k * s for k in range(n + 1)]
            return [float(t) for t in raw.split(",")]
        if tag == "labels":
            labels = []
            for tok in raw.split(";"):
                tok = tok.strip().strip("()")
                m, n = (int(t) for t in tok.split(","))
                if m < 1:
                    raise ValidationError(key, "iterate order must be >= 1")
                labels.append((m, n))
            return labels
        if tag == "str":
            return raw
    except (ValueError, TypeError) as exc:
        raise ValidationError(key, f"cannot parse '{raw}': {exc}") from exc
    raise ValidationError(key, f"unhandled schema tag {tag}")


def parse_config(path) -> RunConfig:
    """Strict parse of the flat key/value format; unknown keys are errors."""
    cfg = RunConfig()
    text = Path(path).read_text()
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ParseError(f"line {line_no}: expected 'key = value'", line_no)
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _SCHEMA:
            raise ValidationError(key)
        cfg.values[key] = _parse_value(key, raw)
    for key, (tag, default) in _SCHEMA.items():
        if key in cfg.values:
            continue
        if default == "":
            cfg.values[key] = [] if tag == "grid" else ""
        else:
            cfg.values[key] = _parse_value(key, default)
    return cfg


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def _emit(payload: dict) -> None:
    print(json.dumps(_jsonable(payload), sort_keys=True, indent=1))


def _report_dict(report) -> dict:
    return {
        "gradient_norm": report.gradient_norm,
        "mean_energy_residual": report.mean_energy_residual,
        "closure_residual": report.closure_residual,
        "self_intersections": report.self_intersections,
    }


def _cmd_flow(cfg: RunConfig, out: Path) -> int:
    system = cfg.system()
    s0 = State.of(cfg["flow.q0"], cfg["flow.v0"])
    traj = integrate(system, s0, cfg["flow.time"], cfg["flow.step"])
    csv_path = out / "trajectory.csv"
    with open(csv_path, "w") as fh:
        fh.write("t,qx,qy,qz,vx,vy,vz,E\n")
        for k in range(len(traj.times)):
            row = [traj.times[k], *traj.positions[k], *traj.velocities[k], traj.energy_series[k]]
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    _emit(
        {
            "schema_version": 1,
            "command": "flow",
            "steps": len(traj.times) - 1,
            "energy_drift": energy_drift(traj),
            "final_energy": float(traj.energy_series[-1]),
            "trajectory_csv": str(csv_path),
        }
    )
    return 0


def _cmd_waist(cfg: RunConfig, out: Path) -> int:
    system = cfg.system()
    e = cfg["run.energy"]
    seed = vr.default_seed_builder(
        system, e, cfg["run.seed_z0"], cfg["run.seed_amplitude"], cfg["run.seed_mode"]
    )(cfg["discretization.loop_nodes"])
    res = vr.find_waist(system, e, seed, cfg.solver())
    loop_path = out / "waist_loop.json"
    save_lifted(res.lifted, loop_path)
    nodes_to_csv(res.lifted.loop, out / "waist_nodes.csv")
    _emit(
        {
            "schema_version": 1,
            "command": "waist",
            "energy": e,
            "action": res.action,
            "gradient_norm": res.gradient_norm,
            "period": res.lifted.p,
            "iterations": res.iterations,
            "report": _report_dict(res.report),
            "loop_file": str(loop_path),
        }
    )
    return 0


def _cmd_minimax(cfg: RunConfig, out: Path) -> int:
    system = cfg.system()
    e = cfg["run.energy"]
    labels = cfg["run.labels"]
    if len(labels) < 2:
        raise ValidationError("run.labels", "need two labels for minimax")
    solver = cfg.solver()
    seeds = vr.default_seed_builder(
        system, e, cfg["run.seed_z0"], cfg["run.seed_amplitude"], cfg["run.seed_mode"]
    )
    waists = vr.prepare_waists(
        system, e, labels[:2], seeds, cfg["discretization.path_loop_nodes"], solver
    )
    mm = vr.minimax_between_labels(system, e, waists, labels[0], labels[1], solver)
    rep = certify_orbit(
        system, vr.polish_candidate(system, mm.saddle.loop, e), e, solver.certify_h
    )
    saddle_path = out / "saddle_loop.json"
    save_lifted(mm.saddle, saddle_path)
    _emit(
        {
            "schema_version": 1,
            "command": "minimax",
            "energy": e,
            "labels": [list(labels[0]), list(labels[1])],
            "value": mm.value,
            "converged": mm.converged,
            "saddle_gradient_norm": mm.saddle_gradient_norm,
            "report": _report_dict(rep),
            "loop_file": str(saddle_path),
        }
    )
    return 0 if mm.converged else 2


def _cmd_scan(cfg: RunConfig, out: Path) -> int:
    system = cfg.system()
    grid = cfg["run.energy_grid"]
    if not grid:
        rows = []
    else:
        rows = vr.scan_energy(
            system,
            grid,
            labels=tuple(cfg["run.labels"][:2]),
            cfg=cfg.solver(),
            path_n=cfg["discretization.path_loop_nodes"],
            seed_z0=cfg["run.seed_z0"],
            seed_amplitude=cfg["run.seed_amplitude"],
            seed_mode=cfg["run.seed_mode"],
        )
    csv_path = out / "scan.csv"
    cols = [
        "e",
        "status",
        "waist_action",
        "waist_gradient_norm",
        "waist_self_intersections",
        "minimax_value",
        "minimax_converged",
        "saddle_gradient_norm",
        "saddle_closure",
        "saddle_energy_residual",
    ]
    with open(csv_path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(repr(row[c]) if c in row else "" for c in cols) + "\n")
    _emit({"schema_version": 1, "command": "scan", "rows": rows, "scan_csv": str(csv_path)})
    clean = all(r["status"] == "ok" and r.get("minimax_converged", False) for r in rows)
    return 0 if clean else 2


def _cmd_multiplicity(cfg: RunConfig, out: Path) -> int:
    system = cfg.system()
    e = cfg["run.energy"]
    result = vr.multiplicity_search(
        system,
        e,
        cfg["run.labels"],
        cfg=cfg.solver(),
        path_n=cfg["discretization.path_loop_nodes"],
        seed_z0=cfg["run.seed_z0"],
        seed_amplitude=cfg["run.seed_amplitude"],
        seed_mode=cfg["run.seed_mode"],
    )
    orbits = []
    for k, rec in enumerate(result.orbits):
        loop_path = out / f"orbit_{k}.json"
        save_lifted(rec.lifted, loop_path)
        orbits.append(
            {
                "source": rec.source,
                "action": rec.action,
                "period": rec.lifted.p,
                "primitive_period": rec.primitive.p,
                "report": _report_dict(rec.report),
                "loop_file": str(loop_path),
            }
        )
    _emit(
        {
            "schema_version": 1,
            "command": "multiplicity",
            "energy": e,
            "distinct_count": result.distinct_count,
            "orbits": orbits,
            "failures": result.failures,
        }
    )
    return 0 if not result.failures else 2


def _cmd_critical_values(cfg: RunConfig, out: Path) -> int:
    system = cfg.system()
    e0_val = cv.compute_e0(system)
    try:
        res = cv.e1_lower_bound_symmetric(system, cfg["run.e_max"], tol=1e-4)
        method = "symmetric-latitude-oracle"
    except MagflowError:
        step = cfg["run.grid_step"]
        grid = [e0_val + step * k for k in range(1, int(cfg["run.e_max"] / step) + 1)]
        res = cv.e1_lower_bound_general(system, grid, cfg.solver())
        method = "general-descent"
    cert = None
    if res.certificate is not None:
        cert_path = out / "e1_witness.json"
        save_lifted(res.certificate.witness, cert_path)
        cert = {
            "energy": res.certificate.energy,
            "action_value": res.certificate.action_value,
            "loop_file": str(cert_path),
        }
    _emit(
        {
            "schema_version": 1,
            "command": "critical-values",
            "e0": e0_val,
            "e1_lower_bound": res.value,
            "negative_configuration_found": res.negative_found,
            "method": method,
            "certificate": cert,
        }
    )
    return 0


def _cmd_orbit_check(cfg: RunConfig, out: Path) -> int:
    if not cfg["run.loop_file"]:
        raise ValidationError("run.loop_file", "required for orbit-check")
    system = cfg.system()
    e = cfg["run.energy"]
    ll = load_lifted(cfg["run.loop_file"])
    rep = certify_orbit(system, ll.loop, e, cfg["solver.certify_h"])
    _emit(
        {
            "schema_version": 1,
            "command": "orbit-check",
            "energy": e,
            "action": lifted_action_A(system, e, ll),
            "loop": {"nodes": len(ll.nodes), "period": ll.p, "flux": ll.flux},
            "report": _report_dict(rep),
        }
    )
    return 0


_DISPATCH = {
    "flow": _cmd_flow,
    "waist": _cmd_waist,
    "minimax": _cmd_minimax,
    "scan": _cmd_scan,
    "multiplicity": _cmd_multiplicity,
    "critical-values": _cmd_critical_values,
    "orbit-check": _cmd_orbit_check,
}


def run_command(command: str, cfg: RunConfig, out_dir) -> int:
    """Dispatch a command; returns the process exit code."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return _DISPATCH[command](cfg, out)
    except MaxIterations as exc:
        print(f"nonconvergence: {exc}", file=_sys.stderr)
        return 2
    except MagflowError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=_sys.stderr)
        return 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="magflow",
        description="Periodic orbits of magnetic systems on the 2-sphere.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="flat key/value config file")
    parser.add_argument("--out", default=".", help="directory for CSV/JSON artifacts")
    parser.add_argument("--seed", type=int, default=None, help="override rng.seed")
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config)
    except MagflowError as exc:
        print(f"config error: {type(exc).__name__}: {exc}", file=_sys.stderr)
        return 1
    if args.seed is not None:
        cfg.values["rng.seed"] = int(args.seed)
    return run_command(args.command, cfg, args.out)


if __name__ == "__main__":
    raise SystemExit(main())
