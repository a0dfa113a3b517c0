"""Command-line entry point and scenario/config serialization.

Subcommands: ``analyze`` (closed-form predictions), ``sim1d`` (scalar
ensemble), ``sim4d`` (full formation run), ``sweep`` (rate/ell/seed grid),
``audit`` (rigidity and positive-definiteness checks). Configs are JSON,
time series are CSV with a fixed column order and 17-significant-digit
numbers, and every file-producing command writes a manifest next to its
primary output so the run can be regenerated from the artifact alone.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime
import hashlib
import json
import math
import sys

import numpy as np

from . import __version__
from .control import ControllerConfig
from .core import AgentPose
from .graphs import ObservationGraph
from .oned import (OneDConfig, conditional_variance_at_target,
                   convergence_metrics_1d, effective_gain,
                   expected_coherence_time, motion_probability,
                   run_1d_ensemble, sigma_ss_proportional,
                   sigma_ss_restrained)
from .rigidity import (gradient_consistency_residual,
                       is_positive_definite_minors, m_matrix)
from .sensors import SensorSpec
from .sim import Scenario, ScenarioError, builtin_scenarios, run, sweep


def _fmt(x) -> str:
    return format(float(x), ".17g")


def canonical_json(obj) -> str:
    """Key-order-independent JSON rendering used for config hashing."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def write_manifest(primary_out: str, config: dict, seed: int, outputs):
    manifest = {
        "tool": "rigidflock",
        "version": __version__,
        "config_hash": config_hash(config),
        "master_seed": seed,
        "created_utc": datetime.datetime.now(datetime.timezone.utc)
        .isoformat(),
        "outputs": list(outputs),
    }
    path = primary_out + ".manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


# --- scenario (de)serialization ----------------------------------------------


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "name": s.name,
        "agents": [{"p": [float(v) for v in a.p], "psi": float(a.psi)}
                   for a in s.desired],
        "edges": [[i, j] for i, j in s.graph.sorted_edges()],
        "controller": {
            "k_e": s.controller.k_e,
            "ell": s.controller.ell,
            "restraining": s.controller.restraining,
            "omega_cap": s.controller.omega_cap,
        },
        "sensor": {
            "dist_frac_sigma": s.sensor.dist_frac_sigma,
            "bearing_sigma": s.sensor.bearing_sigma,
            "heading_sigma": s.sensor.heading_sigma,
            "rate_hz": s.sensor.rate_hz,
        },
        "init_radius": s.init_radius,
        "horizon_steps": s.horizon_steps,
        "seed": s.seed,
    }


def scenario_from_dict(data: dict) -> Scenario:
    """Build and validate a Scenario, naming the offending field on error."""
    if "agents" not in data:
        raise ScenarioError("missing field: agents")
    if "edges" not in data:
        raise ScenarioError("missing field: edges")
    try:
        desired = tuple(AgentPose(np.asarray(a["p"], dtype=float),
                                  float(a.get("psi", 0.0)))
                        for a in data["agents"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid field agents: {exc}") from exc
    try:
        graph = ObservationGraph.from_pairs(len(desired), data["edges"])
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid field edges: {exc}") from exc
    try:
        controller = ControllerConfig(**data.get("controller", {}))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid field controller: {exc}") from exc
    try:
        sensor = SensorSpec(**data.get("sensor", {}))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid field sensor: {exc}") from exc
    return Scenario(
        desired=desired, graph=graph, controller=controller, sensor=sensor,
        init_radius=float(data.get("init_radius", 20.0)),
        horizon_steps=int(data.get("horizon_steps", 2000)),
        seed=int(data.get("seed", 0)),
        name=str(data.get("name", "scenario")))


def parse_scenario(path: str) -> Scenario:
    """Load a scenario from a JSON file or a ``builtin:<name>`` reference."""
    if path.startswith("builtin:"):
        key = path.split(":", 1)[1]
        for scen in builtin_scenarios():
            if scen.name == key:
                return scen
        names = ", ".join(s.name for s in builtin_scenarios())
        raise ScenarioError(f"unknown builtin scenario {key!r}; "
                            f"available: {names}")
    with open(path) as fh:
        data = json.load(fh)
    return scenario_from_dict(data)


# --- subcommands --------------------------------------------------------------


def _cmd_analyze(args) -> int:
    cfg = OneDConfig(k_ef=args.k_ef, ell=args.ell, sigma_m=args.sigma_m,
                     f=args.f)
    out = {
        "k_ef": args.k_ef, "ell": args.ell, "sigma_m": args.sigma_m,
        "sigma_ss": sigma_ss_proportional(cfg),
        "motion_prob_at_target": motion_probability(0.0, args.sigma_m,
                                                    args.ell),
        "effective_gain": effective_gain(cfg),
        "conditional_variance_at_target": conditional_variance_at_target(cfg),
    }
    try:
        out["sigma_ss_res"] = sigma_ss_restrained(cfg)
        out["ratio"] = out["sigma_ss_res"] / out["sigma_ss"]
        out["coherence_time_steps"] = expected_coherence_time(cfg)
    except ValueError:
        out["sigma_ss_res"] = None
        out["ratio"] = None
        out["coherence_time_steps"] = None
    print(json.dumps(out, indent=2))
    return 0


def _cmd_sim1d(args) -> int:
    with open(args.config) as fh:
        raw = json.load(fh)
    restrained = bool(raw.pop("restrained", True))
    cfg = OneDConfig(**raw)
    trace = run_1d_ensemble(cfg, restrained=restrained)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "mean_abs_dd", "sigma_a", "mean_abs_dv"])
        for k in range(cfg.horizon):
            writer.writerow([k, _fmt(trace.mean_abs_dd[k]),
                             _fmt(trace.sigma_a[k]),
                             _fmt(trace.mean_abs_dv[k])])
    metrics = convergence_metrics_1d(trace.mean_abs_dd, 0.0, cfg.f,
                                     debug=True)
    payload = {
        "t_c": metrics["t_c"],
        "sigma_t": metrics["sigma_t"],
        "mean_dv": float(np.mean(trace.mean_abs_dv)),
        "converged": metrics["converged"],
        "k_c_literal": metrics["k_c_literal"],
        "sigma_ss_pred": sigma_ss_proportional(cfg),
    }
    try:
        payload["sigma_ss_res_pred"] = sigma_ss_restrained(cfg)
    except ValueError:
        payload["sigma_ss_res_pred"] = None
    outputs = [args.out]
    if args.metrics:
        with open(args.metrics, "w") as fh:
            json.dump(payload, fh, indent=2)
        outputs.append(args.metrics)
    write_manifest(args.out, {**raw, "restrained": restrained}, cfg.seed,
                   outputs)
    return 0


_RUN_STATIC_COLS = ["step", "time_s", "e_F", "e_p", "e_psi", "fiedler"]


def _cmd_sim4d(args) -> int:
    scen = parse_scenario(args.scenario)
    if args.seed is not None:
        scen = dataclasses.replace(scen, seed=args.seed)
    rec = run(scen)
    n = scen.graph.n
    dt = 1.0 / scen.sensor.rate_hz
    cols = list(_RUN_STATIC_COLS)
    for a in range(n):
        cols += [f"p{a}_x", f"p{a}_y", f"p{a}_z", f"psi{a}"]
    for a in range(n):
        cols += [f"u{a}_x", f"u{a}_y", f"u{a}_z", f"omega{a}"]
    steps = scen.horizon_steps
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for k in range(steps + 1):
            row = [k, _fmt(k * dt), _fmt(rec.e_f[k]), _fmt(rec.e_p[k]),
                   _fmt(rec.e_psi[k]), _fmt(rec.fiedler[k])]
            for a in range(n):
                row += [_fmt(rec.positions[k, a, 0]),
                        _fmt(rec.positions[k, a, 1]),
                        _fmt(rec.positions[k, a, 2]),
                        _fmt(rec.headings[k, a])]
            for a in range(n):
                if k < steps:
                    row += [_fmt(rec.u[k, a, 0]), _fmt(rec.u[k, a, 1]),
                            _fmt(rec.u[k, a, 2]), _fmt(rec.omega[k, a])]
                else:
                    row += ["nan"] * 4
            writer.writerow(row)
    outputs = [args.out]
    if args.summary:
        with open(args.summary, "w") as fh:
            json.dump(rec.summary, fh, indent=2)
        outputs.append(args.summary)
    write_manifest(args.out, scenario_to_dict(scen), scen.seed, outputs)
    return 0


def _parse_rates(text: str):
    if ":" in text:
        lo, hi, step = (float(v) for v in text.split(":"))
        vals = []
        v = lo
        while v <= hi + 1e-9:
            vals.append(round(v, 9))
            v += step
        return vals
    return [float(v) for v in text.split(",") if v]


def _cmd_sweep(args) -> int:
    scen = parse_scenario(args.scenario)
    rates = _parse_rates(args.rates)
    ells = [float(v) for v in args.ells.split(",") if v]
    rows = sweep(scen, rates, ells, args.seeds)
    header = ["rate_hz", "ell", "seed", "t_cp", "t_cpsi", "sigma_tp",
              "sigma_tpsi", "mean_dv", "mean_domega", "a_p", "v_psi",
              "stable_rms_p", "converged"]
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([
                _fmt(row["rate_hz"]), _fmt(row["ell"]), row["seed"],
                _fmt(row["t_cp"]), _fmt(row["t_cpsi"]),
                _fmt(row["sigma_tp"]), _fmt(row["sigma_tpsi"]),
                _fmt(row["mean_dv"]), _fmt(row["mean_domega"]),
                _fmt(row["a_p"]), _fmt(row["v_psi"]),
                _fmt(row["stable_rms_p"]), int(row["converged"])])
    write_manifest(args.out, {**scenario_to_dict(scen),
                              "rates": rates, "ells": ells,
                              "seeds": args.seeds}, scen.seed, [args.out])
    return 0


def _cmd_audit(args) -> int:
    scen = parse_scenario(args.scenario)
    m_desired = m_matrix(scen.desired, scen.graph)
    pd_ok, minors = is_positive_definite_minors(m_desired)
    rng = np.random.default_rng(np.random.SeedSequence(scen.seed,
                                                       spawn_key=(11,)))
    residuals = []
    pd_flags = []
    for _ in range(args.samples):
        poses = tuple(AgentPose(rng.uniform(-10, 10, 3),
                                rng.uniform(-math.pi, math.pi))
                      for _ in range(scen.graph.n))
        residuals.append(gradient_consistency_residual(
            poses, scen.desired, scen.graph, scen.controller.k_e))
        ok, _ = is_positive_definite_minors(m_matrix(poses, scen.graph))
        pd_flags.append(ok)
    out = {
        "scenario": scen.name,
        "desired_pd": pd_ok,
        "desired_minors": minors,
        "samples": args.samples,
        "gradient_residual_max": max(residuals) if residuals else None,
        "pd_fraction_random_poses": (float(np.mean(pd_flags))
                                     if pd_flags else None),
    }
    print(json.dumps(out, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rigidflock",
        description="Formation control simulator and analysis toolkit")
    parser.add_argument("--version", action="version",
                        version=f"rigidflock {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="closed-form predictions")
    p.add_argument("--k-ef", type=float, required=True, dest="k_ef")
    p.add_argument("--ell", type=float, required=True)
    p.add_argument("--sigma-m", type=float, required=True, dest="sigma_m")
    p.add_argument("--f", type=float, default=10.0)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("sim1d", help="scalar ensemble simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics")
    p.set_defaults(func=_cmd_sim1d)

    p = sub.add_parser("sim4d", help="formation simulation run")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--summary")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_sim4d)

    p = sub.add_parser("sweep", help="rate/ell/seed grid")
    p.add_argument("--scenario", required=True)
    p.add_argument("--rates", default="10:200:10",
                   help="lo:hi:step or comma list")
    p.add_argument("--ells", default="0.05,0.2,0.35,0.5")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("audit", help="rigidity and stability audit")
    p.add_argument("--scenario", required=True)
    p.add_argument("--samples", type=int, default=100)
    p.set_defaults(func=_cmd_audit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, ValueError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
