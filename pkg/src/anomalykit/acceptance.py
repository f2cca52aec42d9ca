"""The acceptance suite: eleven numbered checks over the whole stack.

Each check is a plain function returning (passed, details) where the
details dict carries only deterministic numbers, so serialized reports
are byte-stable across reruns. Wall-clock budgets are enforced by the
caller (the verify command records timings in the manifest; the test
suite asserts them), keeping time measurements out of the artifacts.
"""
from __future__ import annotations

import filecmp
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from anomalykit.cascade import DataFamily, finite_difference_check, solve_first_order
from anomalykit.forward import (ModelParams, initial_state,
                                solve_time_dependent, total_mass)
from anomalykit.geometry import (Inclusion, build_grid, octant_corner,
                                 sector_corner)
from anomalykit.inversion import (InverseProblem, apex_vanishing_test,
                                  discrepancy, reconstruct_inclusion,
                                  recover_boundary_coefficient,
                                  synthesize_observation)
from anomalykit.probes import (ProbeSpec, asymptotic_fit,
                               boundary_norm_estimates, corner_integral,
                               laplace_tail_identity)
from anomalykit.reactions import PiecewiseReaction, TaylorReaction


def benchmark_corners():
    """Three 2-D sectors at the standard half-angles plus one 3-D corner."""
    return [
        sector_corner((0.3, 0.4), 0.7, math.pi / 12, 0.45),
        sector_corner((0.3, 0.4), 2.0, math.pi / 6, 0.45),
        sector_corner((-0.2, 0.1), -1.2, math.pi / 4, 0.45),
        octant_corner((0.1, -0.2, 0.05), 0.7),
    ]


TAU_LADDER = (20.0, 40.0, 80.0, 160.0)


# ---------------------------------------------------------------------------
# 1-4: probe layer
# ---------------------------------------------------------------------------

def check_cgo_decay():
    """Unweighted probe integrals decay like tau^(-dim) on every benchmark."""
    details = {}
    passed = True
    for corner in benchmark_corners():
        spec = ProbeSpec.from_corner(corner, TAU_LADDER)
        vals = np.array([corner_integral(spec, t) for t in TAU_LADDER])
        fit = asymptotic_fit(TAU_LADDER, np.abs(vals))
        tol = 0.05 if corner.dim == 2 else 0.1
        ok = abs(fit.exponent + corner.dim) <= tol
        passed = passed and ok
        key = f"dim{corner.dim}_theta{corner.theta_c:.4f}"
        details[key] = {"exponent": fit.exponent, "target": -float(corner.dim),
                        "tolerance": tol, "ok": bool(ok)}
    return passed, details


def check_weighted_decay():
    """A radial weight r^alpha steepens the decay to tau^-(alpha+dim)."""
    corner = sector_corner((0.3, 0.4), 2.0, math.pi / 6, 0.45)
    spec = ProbeSpec.from_corner(corner, TAU_LADDER)
    vals = np.array([corner_integral(spec, t, alpha=1.0) for t in TAU_LADDER])
    fit = asymptotic_fit(TAU_LADDER, np.abs(vals))
    ok = abs(fit.exponent + 3.0) <= 0.08
    return bool(ok), {"exponent": fit.exponent, "target": -3.0,
                      "tolerance": 0.08}


def check_laplace_identity():
    """27-point sweep of the truncated-moment identity and its tail bound."""
    worst = 0.0
    bound_ok = True
    count = 0
    for alpha in (0.0, 1.0, 2.5):
        for mu in (1.0, 2.0 + 1.0j, 10.0):
            for delta in (0.5, 1.0, 2.0):
                res = laplace_tail_identity(alpha, mu, delta)
                worst = max(worst, abs(res.residual))
                if res.bound_applies:
                    bound_ok = bound_ok and res.bound_ok
                count += 1
    passed = worst < 1e-10 and bound_ok and count == 27
    return bool(passed), {"worst_residual": float(worst), "points": count,
                          "tail_bound_ok": bool(bound_ok)}


def check_norm_monotonicity():
    """Cap-to-bound norm ratios never increase along the tau ladder."""
    details = {}
    passed = True
    for corner in benchmark_corners():
        spec = ProbeSpec.from_corner(corner, TAU_LADDER)
        norms = [boundary_norm_estimates(spec, t) for t in TAU_LADDER]
        h1 = [b.h1_ratio for b in norms]
        fx = [b.flux_ratio for b in norms]
        ok = (all(b <= a * (1 + 1e-12) for a, b in zip(h1, h1[1:]))
              and all(b <= a * (1 + 1e-12) for a, b in zip(fx, fx[1:])))
        passed = passed and ok
        key = f"dim{corner.dim}_theta{corner.theta_c:.4f}"
        details[key] = {"h1_ratios": [float(x) for x in h1],
                        "flux_ratios": [float(x) for x in fx], "ok": bool(ok)}
    return passed, details


# ---------------------------------------------------------------------------
# 5-6: cascade layer
# ---------------------------------------------------------------------------

def _quadratic_two_chem():
    grid = build_grid(64, 64, (0.0, 1.0, 0.0, 1.0))
    params = ModelParams(
        n_chemicals=2, n_prey=1,
        chem_diffusion=[0.05, 0.08], prey_diffusion=[0.04],
        cross_diffusion=[[0.1], [0.0]], taxis=[[0.02], [0.01]])
    u0 = [0.2, 0.1]
    exterior = TaylorReaction(2, 1, u0=u0, order=2)
    exterior.set_coefficient(1, "u1u1", 0.5)
    exterior.set_coefficient(1, "u1v1", 0.2)
    exterior.set_coefficient(2, "u1u2", 0.3)
    interior = TaylorReaction(2, 1, u0=u0, order=2)
    interior.set_coefficient(1, "u1u1", 1.0)
    interior.set_coefficient(1, "u1v1", 0.2)
    interior.set_coefficient(2, "u1u2", 0.6)
    reaction = PiecewiseReaction(exterior, interior,
                                 Inclusion.circle((0.5, 0.5), 0.2), grid)
    pi = math.pi
    family = DataFamily.build(
        grid, u0, [0.0],
        f1=[f"0.2 + 0.1*sin({pi}*x1)*sin({pi}*x2)", f"0.15 + 0.05*cos({pi}*x1)"],
        f2=[f"0.05*sin({pi}*x1)", 0.0],
        g1=[f"0.3 + 0.1*x1"], g2=None)
    return grid, params, reaction, family


def check_linearization():
    """Divided-difference slopes for the first and second variations."""
    _grid, params, reaction, family = _quadratic_two_chem()
    report = finite_difference_check(params, reaction, family,
                                     variant="parabolic", t_final=0.1,
                                     n_steps=50)
    ok1 = abs(report.slope_first - 1.0) <= 0.25
    ok2 = abs(report.slope_second - 1.0) <= 0.3
    return bool(ok1 and ok2), {
        "slope_first": report.slope_first, "slope_second": report.slope_second,
        "errors_first": report.errors_first.tolist(),
        "errors_second": report.errors_second.tolist()}


def check_reduction_invariants():
    """Structural identities of the reduced system and its discretization."""
    grid = build_grid(32, 32, (0.0, 1.0, 0.0, 1.0))
    params = ModelParams(
        n_chemicals=1, n_prey=1, chem_diffusion=[0.05], prey_diffusion=[0.04],
        cross_diffusion=[[0.1]], taxis=[[0.02]])
    u0 = [0.3]

    # prey variation stays identically zero without prey data
    first = solve_first_order(params, (u0, [0.0]), f1=["0.1 + 0.05*x2"],
                              g1=None, grid=grid, t_final=0.05, n_steps=20)
    prey_max = float(np.max(np.abs(first.prey(1))))

    # the constant base state survives long integration
    exterior = TaylorReaction(1, 1, u0=u0, order=2)
    exterior.set_coefficient(1, "u1u1", 0.5)
    reaction = PiecewiseReaction(exterior, exterior,
                                 Inclusion.circle((0.5, 0.5), 0.2), grid)
    n_steps = 1000
    init = initial_state(params, grid, u_init=[0.3], v_init=[0.0])
    sol = solve_time_dependent(params, reaction, init, t_final=1.0,
                               n_steps=n_steps, store_every=n_steps)
    drift = max(float(np.max(np.abs(sol.final.u - 0.3))),
                float(np.max(np.abs(sol.final.v))))

    # without reactions, both masses are conserved step by step
    zero = TaylorReaction(1, 1, u0=u0, order=2)
    zreact = PiecewiseReaction(zero, zero, Inclusion.circle((0.5, 0.5), 0.2), grid)
    init = initial_state(params, grid,
                         u_init=["0.3 + 0.1*sin(3.141592653589793*x1)"],
                         v_init=["0.2 + 0.1*x2"])
    sol = solve_time_dependent(params, zreact, init, t_final=0.1, n_steps=100)
    worst_step = 0.0
    for name, pick in (("u", lambda s: s.u[0]), ("v", lambda s: s.v[0])):
        masses = [total_mass(grid, pick(s)) for s in sol.states]
        steps = np.abs(np.diff(masses))
        worst_step = max(worst_step, float(np.max(steps)))

    passed = (prey_max == 0.0 and drift <= 1e-12 * n_steps
              and worst_step <= 1e-10)
    return bool(passed), {
        "prey_variation_max": prey_max,
        "constant_state_drift": drift, "steps": n_steps,
        "worst_mass_step": worst_step}


# ---------------------------------------------------------------------------
# 7-9: inversion layer
# ---------------------------------------------------------------------------

def _benchmark_problem(nx=64, n_steps=30, radius=0.15, seed=11):
    grid = build_grid(nx, nx, (0.0, 1.0, 0.0, 1.0))
    params = ModelParams(
        n_chemicals=1, n_prey=1, chem_diffusion=[0.05], prey_diffusion=[0.04],
        cross_diffusion=[[0.0]], taxis=[[0.02]])
    exterior = TaylorReaction(1, 1, u0=[0.0], order=2)
    exterior.set_coefficient(1, "u1u1", 0.5)
    interior = TaylorReaction(1, 1, u0=[0.0], order=2)
    interior.set_coefficient(1, "u1u1", 1.0)
    pi = math.pi
    ip = InverseProblem(
        observed=None, params=params, exterior=exterior, interior=interior,
        grid=grid, u_init=[f"0.2 + 0.1*sin({pi}*x1)*sin({pi}*x2)"],
        v_init=[0.3], variant="parabolic", t_final=0.06, n_steps=n_steps,
        seed=seed, true_inclusion=Inclusion.circle((0.45, 0.55), radius))
    ip.observed = synthesize_observation(ip)
    return ip


def check_distinguishability():
    """Different interiors separate in data; identical ones do not."""
    ip = _benchmark_problem()
    d_same = discrepancy(ip.observed, ip.simulate(ip.true_inclusion))
    d_diff = discrepancy(ip.observed,
                         ip.simulate(Inclusion.circle((0.45, 0.55), 0.20)))
    passed = d_same <= 1e-10 and d_diff > 1e-6
    return bool(passed), {"identical": float(d_same), "different": float(d_diff)}


def check_shape_recovery():
    """Blind circle recovery to sub-2-cell accuracy within the solve budget."""
    ip = _benchmark_problem()
    res = reconstruct_inclusion(ip, max_solves=300, n_restarts=3)
    cell = max(ip.grid.hx, ip.grid.hy)
    err_center = math.hypot(res.parameters[0] - 0.45, res.parameters[1] - 0.55)
    err_radius = abs(res.parameters[2] - 0.15)
    monotone = all(b <= a for a, b in zip(res.history, res.history[1:]))
    passed = (err_center < 2 * cell and err_radius < 2 * cell
              and res.n_evaluations <= 300 and monotone)
    return bool(passed), {
        "center_error": float(err_center), "radius_error": float(err_radius),
        "cell": float(cell), "evaluations": res.n_evaluations,
        "misfit": res.misfit, "history_monotone": bool(monotone)}


def check_coefficient_recovery():
    """Constant exterior coefficient read back from the interface quotient."""
    errors = []
    cells = []
    for nx, n_steps in ((32, 25), (64, 100), (128, 400)):
        ip = _benchmark_problem(nx=nx, n_steps=n_steps)
        samples = recover_boundary_coefficient(ip, ip.true_inclusion, 1, "u1u1",
                                               n_samples=32)
        vals = np.array([v for _, v in samples])
        errors.append(float(np.max(np.abs(vals - 0.5))))
        cells.append(max(ip.grid.hx, ip.grid.hy))
    slope = float(np.polyfit(np.log(cells), np.log(errors), 1)[0])
    within = [e < 5 * c for e, c in zip(errors, cells)]
    passed = all(within) and slope >= 0.9
    return bool(passed), {"errors": errors, "cells": cells, "slope": slope}


# ---------------------------------------------------------------------------
# 10-11: classification and reproducibility
# ---------------------------------------------------------------------------

def check_apex_classifier():
    """Constant, Holder-vanishing, and zero residuals on every corner."""
    details = {}
    passed = True
    for corner in benchmark_corners():
        apex = np.asarray(corner.apex, dtype=float)
        cases = {
            "constant": (lambda p: np.ones(p.shape[:-1]), "nonzero"),
            "holder": (lambda p: np.linalg.norm(p - apex, axis=-1), "zero"),
            "zero": (lambda p: np.zeros(p.shape[:-1]), "zero"),
        }
        got = {}
        for name, (func, want) in cases.items():
            res = apex_vanishing_test(corner, func)
            got[name] = res.classification
            passed = passed and res.classification == want
        details[f"dim{corner.dim}_theta{corner.theta_c:.4f}"] = got
    return passed, details


def check_determinism():
    """Repeated runs write byte-identical non-manifest artifacts."""
    from anomalykit.cli import run_command
    from anomalykit.config import ExperimentConfig

    cfg = ExperimentConfig.default()
    cfg.set_value("grid.nx", 24)
    cfg.set_value("grid.ny", 24)
    cfg.set_value("run.n_steps", 10)
    cfg.set_value("run.t_final", 0.02)
    mismatched = []
    checked = 0
    with tempfile.TemporaryDirectory() as tmp:
        for command in ("forward", "probe"):
            dirs = []
            for k in (0, 1):
                out = os.path.join(tmp, f"{command}{k}")
                os.makedirs(out)
                run_command(command, cfg.copy(), out)
                dirs.append(out)
            names = sorted(n for n in os.listdir(dirs[0])
                           if n != "manifest.json")
            for name in names:
                checked += 1
                if not filecmp.cmp(os.path.join(dirs[0], name),
                                   os.path.join(dirs[1], name), shallow=False):
                    mismatched.append(f"{command}:{name}")
    passed = checked > 0 and not mismatched
    return bool(passed), {"files_compared": checked, "mismatched": mismatched}


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    details: dict
    runtime: float
    budget: float


CRITERIA = [
    (1, "cgo_decay", 10.0, check_cgo_decay),
    (2, "weighted_decay", 10.0, check_weighted_decay),
    (3, "laplace_identity", 1.0, check_laplace_identity),
    (4, "norm_monotonicity", 5.0, check_norm_monotonicity),
    (5, "linearization", 120.0, check_linearization),
    (6, "reduction_invariants", 60.0, check_reduction_invariants),
    (7, "distinguishability", 60.0, check_distinguishability),
    (8, "shape_recovery", 600.0, check_shape_recovery),
    (9, "coefficient_recovery", 600.0, check_coefficient_recovery),
    (10, "apex_classifier", 30.0, check_apex_classifier),
    (11, "determinism", 120.0, check_determinism),
]


def run_acceptance(numbers=None) -> list[CriterionResult]:
    import time
    results = []
    for number, name, budget, func in CRITERIA:
        if numbers is not None and number not in numbers:
            continue
        t0 = time.perf_counter()
        passed, details = func()
        results.append(CriterionResult(number, name, bool(passed), details,
                                       time.perf_counter() - t0, budget))
    return results


def report_to_dict(results) -> dict:
    """Deterministic verdict document; timings stay in the manifest."""
    return {"format": "anomalykit-acceptance-1",
            "criteria": [{"number": r.number, "name": r.name,
                          "passed": r.passed, "details": r.details}
                         for r in results],
            "all_passed": all(r.passed for r in results)}


def format_table(results) -> str:
    lines = []
    for r in results:
        verdict = "PASS" if r.passed else "FAIL"
        lines.append(f"criterion {r.number:2d}  {r.name:<24s} {verdict}")
    overall = "PASS" if all(r.passed for r in results) else "FAIL"
    lines.append(f"overall      {'':<24s} {overall}")
    return "\n".join(lines) + "\n"
