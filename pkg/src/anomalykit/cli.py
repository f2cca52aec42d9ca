"""Command-line entry point binding the modules into reproducible runs.

Five subcommands: forward, linearize, probe, invert, verify. Each reads
one experiment config (JSON), optionally patched by --set key=value
overrides, writes its artifacts into the configured output directory
(ANOMALYKIT_OUT wins over the config value), and finishes by writing
manifest.json listing every emitted file with timings. Exit codes:
0 success, 1 configuration or data-layout error, 2 solver failure,
3 verification failure.
"""
from __future__ import annotations

import argparse
import datetime
import os
import sys
import time

import numpy as np

from anomalykit.acceptance import format_table, report_to_dict, run_acceptance
from anomalykit.cascade import CascadeError, finite_difference_check
from anomalykit.config import ConfigError, ExperimentConfig, RunManifest
from anomalykit.expressions import ExpressionError
from anomalykit.forward import (BoundaryCondition, SolverError, State,
                                extract_measurements, field_on_grid,
                                read_measurements_json, solve_stationary,
                                solve_time_dependent, write_measurements_json,
                                write_snapshot_csv)
from anomalykit.geometry import GeometryError
from anomalykit.inversion import (InversionError, InverseProblem,
                                  reconstruct_inclusion,
                                  recover_boundary_coefficient,
                                  synthesize_observation,
                                  write_coefficient_csv)
from anomalykit.probes import (ProbeError, ProbeSpec, run_probe,
                               write_probe_csv, write_probe_json)
from anomalykit.reactions import ReactionError

CONFIG_ERRORS = (ConfigError, GeometryError, ReactionError, CascadeError,
                 ExpressionError, InversionError, ValueError, KeyError)


def _now() -> str:
    return datetime.datetime.now().isoformat(timespec="seconds")


def _outdir(cfg: ExperimentConfig, override: str | None = None) -> str:
    out = os.environ.get("ANOMALYKIT_OUT") or override or cfg.get("output")
    os.makedirs(out, exist_ok=True)
    return out


def run_forward(cfg: ExperimentConfig, outdir: str) -> RunManifest:
    manifest = RunManifest(cfg.hash(), "forward", started=_now())
    t0 = time.perf_counter()
    grid = cfg.grid()
    params = cfg.model()
    reaction = cfg.reaction(grid)
    family = cfg.family(grid)
    run = cfg.get("run")
    eps = float(run.get("epsilon", 0.1))
    names = params.field_names

    if run.get("variant", "parabolic") == "stationary":
        data = {}
        chem = family.chemical_data(eps)
        prey = family.prey_data(eps)
        for i in range(params.n_chemicals):
            data[names[i]] = chem[i]
        for j in range(params.n_prey):
            data[names[params.n_chemicals + j]] = prey[j]
        sol = solve_stationary(params, reaction, BoundaryCondition.dirichlet(**data),
                               newton_tol=float(cfg.get("solver.newton_tol")),
                               max_iter=int(cfg.get("solver.max_iter")))
    else:
        init = State(family.chemical_data(eps), family.prey_data(eps))
        sol = solve_time_dependent(params, reaction, init,
                                   float(run["t_final"]), int(run["n_steps"]),
                                   store_every=int(run.get("store_every", 1)))
    manifest.timings["solve"] = time.perf_counter() - t0

    ms = extract_measurements(sol)
    mpath = os.path.join(outdir, "measurements.json")
    write_measurements_json(ms, mpath, cfg.hash())
    manifest.add_artifact(mpath)
    cpath = os.path.join(outdir, "fields.csv")
    write_snapshot_csv(ms, cpath, cfg.hash())
    manifest.add_artifact(cpath)
    manifest.checks["solved"] = True
    return manifest


def run_linearize(cfg: ExperimentConfig, outdir: str) -> RunManifest:
    manifest = RunManifest(cfg.hash(), "linearize", started=_now())
    t0 = time.perf_counter()
    grid = cfg.grid()
    params = cfg.model()
    reaction = cfg.reaction(grid)
    family = cfg.family(grid)
    run = cfg.get("run")
    report = finite_difference_check(params, reaction, family,
                                     variant=run.get("variant", "parabolic"),
                                     t_final=float(run["t_final"]),
                                     n_steps=int(run["n_steps"]))
    manifest.timings["cascade_and_checks"] = time.perf_counter() - t0
    rpath = os.path.join(outdir, "linearization.json")
    report.write_json(rpath, cfg.hash())
    manifest.add_artifact(rpath)
    manifest.checks["slopes_ok"] = report.passed
    return manifest


def run_probe_cmd(cfg: ExperimentConfig, outdir: str) -> RunManifest:
    manifest = RunManifest(cfg.hash(), "probe", started=_now())
    taus = tuple(float(t) for t in cfg.get("probe.taus"))
    alphas = tuple(float(a) for a in cfg.get("probe.alphas"))
    corners = cfg.corners()
    if not corners:
        raise ConfigError("missing config key 'probe.corners' entries")
    for k, corner in enumerate(corners):
        t0 = time.perf_counter()
        spec = ProbeSpec.from_corner(corner, taus)
        result = run_probe(spec, alphas=alphas)
        manifest.timings[f"corner_{k}"] = time.perf_counter() - t0
        if taus[0] * spec.rho * corner.h < 8.0:
            manifest.warnings.append(
                f"corner {k}: tau*rho*h = {taus[0] * spec.rho * corner.h:.3f} < 8; "
                "asymptotic regime not guaranteed at the smallest tau")
        jpath = os.path.join(outdir, f"probe_{k}.json")
        write_probe_json(result, jpath, cfg.hash())
        manifest.add_artifact(jpath)
        for alpha in alphas:
            cpath = os.path.join(outdir, f"probe_{k}_alpha{alpha:g}.csv")
            write_probe_csv(result, cpath, alpha=alpha, config_hash=cfg.hash())
            manifest.add_artifact(cpath)
        manifest.checks[f"corner_{k}_decay"] = result.passed
    return manifest


def run_invert(cfg: ExperimentConfig, outdir: str,
               observed_path: str | None = None) -> RunManifest:
    manifest = RunManifest(cfg.hash(), "invert", started=_now())
    grid = cfg.grid()
    params = cfg.model()
    run = cfg.get("run")
    inv = cfg.get("invert")
    fam = cfg.get("family")
    ip = InverseProblem(
        observed=None, params=params, exterior=cfg.taylor("exterior"),
        interior=cfg.taylor("interior"), grid=grid,
        u_init=fam.get("f1"), v_init=fam.get("g1") or [0.0] * params.n_prey,
        variant=run.get("variant", "parabolic"),
        t_final=float(run["t_final"]), n_steps=int(run["n_steps"]),
        candidate=inv.get("candidate", "circle"),
        vertex_count=int(inv.get("vertex_count", 4)),
        noise=float(inv.get("noise", 0.0)),
        seed=int(cfg.get("seeds.noise", default=0)),
        true_inclusion=cfg.inclusion())

    t0 = time.perf_counter()
    if observed_path is None:
        ip.observed = synthesize_observation(ip)
    else:
        ip.observed = read_measurements_json(observed_path)
    manifest.timings["observed"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    result = reconstruct_inclusion(
        ip, max_solves=int(inv.get("max_solves", 300)),
        n_restarts=int(inv.get("n_restarts", 3)),
        seed=int(cfg.get("seeds.restarts", default=0)))
    manifest.timings["reconstruction"] = time.perf_counter() - t0
    if result.stagnated:
        manifest.warnings.append(
            "reconstruction stagnated above the noise floor; "
            f"best misfit {result.misfit:.3e}")

    if inv.get("recover_coefficient") and result.inclusion is not None \
            and ip.true_inclusion is not None and observed_path is None:
        t0 = time.perf_counter()
        samples = recover_boundary_coefficient(
            ip, result.inclusion, int(inv.get("component", 1)),
            inv.get("multi_index", "u1u1"),
            n_samples=int(inv.get("n_samples", 32)))
        manifest.timings["coefficient_recovery"] = time.perf_counter() - t0
        result.coefficient_samples = samples
        spath = os.path.join(outdir, "coefficients.csv")
        write_coefficient_csv(samples, spath, cfg.hash())
        manifest.add_artifact(spath)

    rpath = os.path.join(outdir, "reconstruction.json")
    result.write_json(rpath, cfg.hash())
    manifest.add_artifact(rpath)
    manifest.checks["converged"] = result.converged
    manifest.checks["not_stagnated"] = not result.stagnated
    return manifest


def run_verify(cfg: ExperimentConfig, outdir: str,
               only: list[int] | None = None) -> RunManifest:
    import json

    manifest = RunManifest(cfg.hash(), "verify", started=_now())
    results = run_acceptance(only)
    for r in results:
        manifest.timings[f"criterion_{r.number}"] = r.runtime
        manifest.checks[f"criterion_{r.number}"] = r.passed
        if r.runtime > r.budget:
            manifest.warnings.append(
                f"criterion {r.number} exceeded its {r.budget:.0f}s budget")
    doc = report_to_dict(results)
    doc["config_hash"] = cfg.hash()
    jpath = os.path.join(outdir, "acceptance.json")
    with open(jpath, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    manifest.add_artifact(jpath)
    tpath = os.path.join(outdir, "acceptance.txt")
    with open(tpath, "w") as fh:
        fh.write(format_table(results))
    manifest.add_artifact(tpath)
    return manifest


def run_command(command: str, cfg: ExperimentConfig, outdir: str,
                observed_path: str | None = None,
                only: list[int] | None = None) -> RunManifest:
    """Dispatch one subcommand and finish with the manifest write."""
    if command == "forward":
        manifest = run_forward(cfg, outdir)
    elif command == "linearize":
        manifest = run_linearize(cfg, outdir)
    elif command == "probe":
        manifest = run_probe_cmd(cfg, outdir)
    elif command == "invert":
        manifest = run_invert(cfg, outdir, observed_path)
    elif command == "verify":
        manifest = run_verify(cfg, outdir, only)
    else:
        raise ConfigError(f"unknown command {command!r}")
    manifest.finished = _now()
    mpath = os.path.join(outdir, "manifest.json")
    manifest.write(mpath)
    return manifest


def _parse_args(argv):
    parser = argparse.ArgumentParser(
        prog="anomalykit",
        description="Numerical experiments for interior-anomaly identification "
                    "in taxis-diffusion systems.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
            ("forward", "solve the model and write fields + measurements"),
            ("linearize", "run the variation cascade and slope checks"),
            ("probe", "evaluate corner probe integrals and norms"),
            ("invert", "reconstruct the inclusion from measurements"),
            ("verify", "run the acceptance suite")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("-c", "--config", help="experiment config JSON file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a scalar config key")
        p.add_argument("--out", help="output directory (ANOMALYKIT_OUT wins)")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker cap for module-level parallelism")
        if name == "invert":
            p.add_argument("observed", nargs="?", default=None,
                           help="measurements JSON; omitted = self-data run")
        if name == "verify":
            p.add_argument("--only", default=None,
                           help="comma-separated criterion numbers")
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = _parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config) if args.config \
            else ExperimentConfig.default()
        cfg.apply_overrides(args.overrides)
        outdir = _outdir(cfg, args.out)
        only = None
        if getattr(args, "only", None):
            only = [int(tok) for tok in args.only.split(",") if tok.strip()]
        manifest = run_command(args.command, cfg, outdir,
                               observed_path=getattr(args, "observed", None),
                               only=only)
    except CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (SolverError, ProbeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2

    for warning in manifest.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"wrote {len(manifest.artifacts) + 1} artifacts to {outdir}")
    if args.command == "verify":
        failed = [k for k, ok in manifest.checks.items() if not ok]
        if failed:
            print(f"verification failed: {', '.join(sorted(failed))}",
                  file=sys.stderr)
            return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
