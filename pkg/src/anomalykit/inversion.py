"""Identification from boundary data: shapes, coefficients, apex values.

Three computable faces of the uniqueness theory:

* distinguishability: different interior configurations produce
  measurably different boundary data (`discrepancy`);
* shape recovery: derivative-free minimization of the data misfit over a
  low-dimensional inclusion parametrization (`reconstruct_inclusion`);
* coefficient recovery: the second-order variation satisfies the
  exterior-branch equation outside the anomaly, so the quotient
  (d_t u2 - d Lap u2) / (product of first-order factors), sampled one
  cell outside the estimated interface, reads off the exterior Taylor
  coefficient there (`recover_boundary_coefficient`);

plus the corner probe classifier `apex_vanishing_test`, which decides
whether a residual function vanishes at a corner apex from the tau-decay
of its integral against the complex-exponential probe.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import minimize

from anomalykit.cascade import CascadeSolution, DataFamily, solve_cascade
from anomalykit.forward import (BoundaryCondition, MeasurementSet, ModelParams,
                                SolverError, State, extract_measurements,
                                field_on_grid, get_ops, solve_stationary,
                                solve_time_dependent)
from anomalykit.geometry import (GeometryError, Grid, Inclusion,
                                 TruncatedCorner, probe_direction)
from anomalykit.probes import weighted_corner_integral
from anomalykit.reactions import (PiecewiseReaction, TaylorReaction,
                                  parse_multi_index)


class InversionError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Measurement comparison
# ---------------------------------------------------------------------------

def _check_layout(a: MeasurementSet, b: MeasurementSet) -> None:
    if a.variant != b.variant:
        raise InversionError(f"variant mismatch: {a.variant} vs {b.variant}")
    if list(a.field_names) != list(b.field_names):
        raise InversionError("field name mismatch between measurement sets")
    for name in a.field_names:
        if a.traces[name].shape != b.traces[name].shape:
            raise InversionError(f"trace shape mismatch for {name}")
    if (a.times is None) != (b.times is None):
        raise InversionError("one measurement set has times, the other does not")
    if a.times is not None and not np.allclose(a.times, b.times):
        raise InversionError("measurement times differ")


def discrepancy(a: MeasurementSet, b: MeasurementSet) -> float:
    """Sup-norm distance over traces plus the final snapshot."""
    _check_layout(a, b)
    worst = 0.0
    for name in a.field_names:
        worst = max(worst, float(np.max(np.abs(a.traces[name] - b.traces[name]))))
        if a.final is not None and b.final is not None:
            worst = max(worst, float(np.max(np.abs(a.final[name] - b.final[name]))))
    return worst


def discrepancy_report(a: MeasurementSet, b: MeasurementSet) -> dict:
    """Both the sup norm and a volume/time-weighted L2 variant."""
    _check_layout(a, b)
    sup = discrepancy(a, b)
    sq = 0.0
    count = 0
    for name in a.field_names:
        d = a.traces[name] - b.traces[name]
        sq += float(np.sum(d * d))
        count += d.size
        if a.final is not None and b.final is not None:
            d = a.final[name] - b.final[name]
            sq += float(np.sum(d * d))
            count += d.size
    return {"sup": sup, "l2": math.sqrt(sq / max(count, 1))}


def apply_noise(ms: MeasurementSet, level: float, seed: int) -> MeasurementSet:
    """Multiplicative Gaussian noise, one draw per stored sample."""
    if level < 0:
        raise InversionError("noise level must be nonnegative")
    rng = np.random.default_rng(seed)
    traces = {name: arr * (1.0 + level * rng.standard_normal(arr.shape))
              for name, arr in ms.traces.items()}
    final = None
    if ms.final is not None:
        final = {name: arr * (1.0 + level * rng.standard_normal(arr.shape))
                 for name, arr in ms.final.items()}
    meta = dict(ms.meta)
    meta.update({"noise_level": level, "noise_seed": seed})
    return MeasurementSet(ms.variant, ms.grid, list(ms.field_names), traces,
                          times=None if ms.times is None else ms.times.copy(),
                          final=final, meta=meta)


# ---------------------------------------------------------------------------
# Problem container
# ---------------------------------------------------------------------------

@dataclass
class InverseProblem:
    """Observed data plus everything needed to resimulate a candidate.

    The reaction branches and run layout are treated as known; the
    inclusion geometry is the unknown. candidate selects the search
    parametrization: 'circle' (center and radius) or 'polygon' (fixed
    vertex count, at most 6 vertices).
    """

    observed: MeasurementSet
    params: ModelParams
    exterior: TaylorReaction
    interior: TaylorReaction
    grid: Grid
    u_init: Sequence = None
    v_init: Sequence = None
    variant: str = "parabolic"
    t_final: float = 0.1
    n_steps: int = 40
    store_every: int = 1
    candidate: str = "circle"
    vertex_count: int = 4
    noise: float = 0.0
    seed: int = 0
    true_inclusion: Optional[Inclusion] = None

    def __post_init__(self):
        if self.candidate not in ("circle", "polygon"):
            raise InversionError(f"unknown candidate parametrization {self.candidate!r}")
        dim = 3 if self.candidate == "circle" else 2 * self.vertex_count
        if dim > 12:
            raise InversionError("candidate parametrization exceeds 12 dimensions")

    def reaction_for(self, inclusion: Inclusion) -> PiecewiseReaction:
        return PiecewiseReaction(self.exterior, self.interior, inclusion, self.grid)

    def simulate(self, inclusion: Inclusion) -> MeasurementSet:
        reaction = self.reaction_for(inclusion)
        names = self.params.field_names
        N = self.params.n_chemicals
        if self.variant == "stationary":
            values = {names[i]: self.u_init[i] for i in range(N)}
            values.update({names[N + j]: self.v_init[j]
                           for j in range(self.params.n_prey)})
            sol = solve_stationary(self.params, reaction,
                                   BoundaryCondition.dirichlet(**values))
        else:
            init = State(
                np.stack([field_on_grid(f, self.grid) for f in self.u_init]),
                np.stack([field_on_grid(f, self.grid) for f in self.v_init])
                if self.params.n_prey else np.zeros((0, self.grid.nx, self.grid.ny)))
            sol = solve_time_dependent(self.params, reaction, init,
                                       self.t_final, self.n_steps,
                                       store_every=self.store_every)
        return extract_measurements(sol)

    def parameters_of(self, inclusion: Inclusion) -> np.ndarray:
        if self.candidate == "circle":
            return np.array([inclusion.center[0], inclusion.center[1],
                             inclusion.radius])
        return inclusion.vertices.ravel().copy()

    def inclusion_of(self, x: np.ndarray) -> Inclusion:
        if self.candidate == "circle":
            return Inclusion.circle((x[0], x[1]), float(x[2]))
        return Inclusion.polygon(np.asarray(x, dtype=float).reshape(-1, 2))


def synthesize_observation(ip: InverseProblem) -> MeasurementSet:
    """Observed data from the true inclusion, with the configured noise."""
    if ip.true_inclusion is None:
        raise InversionError("no true inclusion to synthesize from")
    ms = ip.simulate(ip.true_inclusion)
    if ip.noise > 0:
        ms = apply_noise(ms, ip.noise, ip.seed)
    return ms


# ---------------------------------------------------------------------------
# Shape reconstruction
# ---------------------------------------------------------------------------

@dataclass
class ReconstructionResult:
    inclusion: Optional[Inclusion]
    parameters: np.ndarray
    misfit: float
    history: list
    n_evaluations: int
    restarts: list
    converged: bool
    stagnated: bool
    noise_floor: float
    seed: int
    coefficient_samples: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "parameters": [float(p) for p in self.parameters],
            "misfit": self.misfit,
            "history": [float(h) for h in self.history],
            "n_evaluations": self.n_evaluations,
            "restarts": self.restarts,
            "converged": self.converged,
            "stagnated": self.stagnated,
            "noise_floor": self.noise_floor,
            "seed": self.seed,
        }

    def write_json(self, path, config_hash: str = "") -> None:
        doc = self.to_dict()
        doc["config_hash"] = config_hash
        doc["format"] = "anomalykit-reconstruction-1"
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")


def _initial_guesses(ip: InverseProblem, initial: Optional[np.ndarray],
                     n_restarts: int, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    x0, x1, y0, y1 = ip.grid.bounds
    span = min(x1 - x0, y1 - y0)
    if initial is not None:
        base = np.asarray(initial, dtype=float)
    elif ip.candidate == "circle":
        base = np.array([0.5 * (x0 + x1), 0.5 * (y0 + y1), 0.15 * span])
    else:
        cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        r = 0.15 * span
        ang = 2 * np.pi * np.arange(ip.vertex_count) / ip.vertex_count
        base = np.stack([cx + r * np.cos(ang), cy + r * np.sin(ang)], axis=1).ravel()
    guesses = [base]
    for _ in range(n_restarts - 1):
        guesses.append(base + 0.08 * span * rng.standard_normal(base.shape))
    return guesses


def reconstruct_inclusion(ip: InverseProblem, max_solves: int = 300,
                          n_restarts: int = 3,
                          initial: Optional[np.ndarray] = None,
                          tol: float = 1e-8,
                          seed: Optional[int] = None) -> ReconstructionResult:
    """Nelder-Mead misfit minimization over the inclusion parameters.

    Runs n_restarts seeded simplex searches under a shared forward-solve
    budget and keeps the best. Infeasible candidates (degenerate geometry,
    inclusion touching the walls, solver failure) cost a large penalty
    instead of aborting the search. The history records the best misfit
    seen after every objective evaluation, so it is nonincreasing by
    construction.
    """
    seed = ip.seed if seed is None else seed
    counter = {"n": 0}
    history: list[float] = []
    best = {"f": np.inf, "x": None}

    def objective(x: np.ndarray) -> float:
        counter["n"] += 1
        try:
            candidate = ip.inclusion_of(x)
            ms = ip.simulate(candidate)
            f = discrepancy(ip.observed, ms)
        except (GeometryError, SolverError, InversionError, ValueError):
            f = 1e6
        if f < best["f"]:
            best["f"], best["x"] = f, x.copy()
        history.append(best["f"])
        return f

    restarts = []
    per_restart = max(max_solves // n_restarts, 1)
    for k, guess in enumerate(_initial_guesses(ip, initial, n_restarts, seed)):
        budget = min(per_restart, max_solves - counter["n"])
        if budget <= 0:
            break
        res = minimize(objective, guess, method="Nelder-Mead",
                       options={"maxfev": budget, "xatol": tol, "fatol": tol,
                                "disp": False})
        restarts.append({"restart": k, "misfit": float(res.fun),
                         "evaluations": int(res.nfev),
                         "converged": bool(res.success)})
        if best["f"] <= max(tol, 10.0 * ip.noise * _data_scale(ip.observed)):
            break

    floor = ip.noise * _data_scale(ip.observed)
    stagnated = best["f"] > max(3.0 * floor, 1e-6)
    inclusion = None
    if best["x"] is not None:
        try:
            inclusion = ip.inclusion_of(best["x"])
        except GeometryError:
            inclusion = None
    converged = inclusion is not None and (
        any(r["converged"] for r in restarts) or not stagnated)
    return ReconstructionResult(inclusion, best["x"], float(best["f"]), history,
                                counter["n"], restarts, converged, stagnated,
                                floor, seed)


def _data_scale(ms: MeasurementSet) -> float:
    return max((float(np.max(np.abs(a))) for a in ms.traces.values()), default=1.0)


# ---------------------------------------------------------------------------
# Coefficient recovery on the interface
# ---------------------------------------------------------------------------

def _recovery_family(ip: InverseProblem, beta: tuple) -> DataFamily:
    N, M = ip.params.n_chemicals, ip.params.n_prey
    ones = np.ones((ip.grid.nx, ip.grid.ny))
    f1 = [ones if beta[i] > 0 else 0.0 for i in range(N)]
    g1 = [ones if beta[N + j] > 0 else 0.0 for j in range(M)]
    return DataFamily.build(ip.grid, ip.exterior.u0, np.zeros(M), f1=f1, g1=g1)


def recover_boundary_coefficient(ip: InverseProblem, omega_hat: Inclusion,
                                 component: int, multi_index,
                                 n_samples: int = 64,
                                 cascade: Optional[CascadeSolution] = None,
                                 guard: float = 1e-6) -> list:
    """Exterior second-order coefficient sampled along the estimated interface.

    The second-order variation satisfies the exterior-branch equation at
    every point outside the true anomaly, so with first-order data equal
    to one in the active components the quotient

        (d_t u2 - d Lap(u2 + cross terms)) / (product of active factors)

    equals the coefficient there (mixed indices divide by the extra factor
    2 their doubled cross terms carry). Sampling happens at grid nodes one
    cell outside omega_hat, with the time derivative centered over stored
    steps and the Laplacian taken with the solver's own stencil, so the
    recovered values converge at the discretization order.

    Returns [(point on the interface, recovered value), ...].
    """
    p = ip.params
    N, M = p.n_chemicals, p.n_prey
    beta = parse_multi_index(multi_index, N, M)
    if sum(beta) != 2:
        raise InversionError("interface recovery targets second-order coefficients")
    comp = component - 1
    if not 0 <= comp < N:
        raise InversionError(f"component {component} out of range")

    if cascade is None:
        if ip.true_inclusion is None:
            raise InversionError("need either a cascade solution or a true inclusion")
        reaction = ip.reaction_for(ip.true_inclusion)
        family = _recovery_family(ip, beta)
        cascade = solve_cascade(p, reaction, family, order=2,
                                variant=ip.variant, t_final=ip.t_final,
                                n_steps=ip.n_steps, store_every=1)

    ops = get_ops(ip.grid)
    uI = cascade.chemicals(1)
    vI = cascade.prey(1)
    uII = cascade.chemicals(2)
    vII = cascade.prey(2)

    if cascade.variant == "parabolic":
        if len(cascade.times) < 3:
            raise InversionError("need at least three stored steps for the time derivative")
        k = len(cascade.times) // 2
        dt = cascade.times[1] - cascade.times[0]
        dudt = (uII[k + 1, comp] - uII[k - 1, comp]) / (2.0 * dt)
    else:
        k = 0
        dudt = 0.0

    diffused = uII[k, comp].copy()
    for j in range(M):
        dd = p.cross_diffusion[comp, j]
        if dd != 0.0:
            diffused += dd * (2.0 * uI[k, comp] * vI[k, j]
                              + ip.exterior.u0[comp] * vII[k, j])
    residual = dudt - p.chem_diffusion[comp] * ops.pointwise_laplacian(diffused)

    denom = np.ones_like(residual)
    active = [pos for pos, e in enumerate(beta) if e > 0]
    for pos in active:
        z = uI[k, pos] if pos < N else vI[k, pos - N]
        denom = denom * z ** beta[pos]
    if len(active) == 2:
        denom = denom * 2.0

    X, Y = ip.grid.nodes()
    sd = omega_hat.signed_distance(X, Y)
    shift = 1.5 * max(ip.grid.hx, ip.grid.hy)
    samples = []
    for pt in omega_hat.boundary_samples(n_samples):
        nx_, ny_, _ = omega_hat.normal(pt[0], pt[1])
        q = pt + shift * np.array([float(nx_), float(ny_)])
        for _ in range(6):
            i = int(np.clip(round((q[0] - ip.grid.bounds[0]) / ip.grid.hx), 0,
                            ip.grid.nx - 1))
            j = int(np.clip(round((q[1] - ip.grid.bounds[2]) / ip.grid.hy), 0,
                            ip.grid.ny - 1))
            neighbors = [(i, j), (max(i - 1, 0), j), (min(i + 1, ip.grid.nx - 1), j),
                         (i, max(j - 1, 0)), (i, min(j + 1, ip.grid.ny - 1))]
            if all(sd[a, b] > 0 for a, b in neighbors):
                break
            q = q + 0.5 * shift * np.array([float(nx_), float(ny_)])
        if abs(denom[i, j]) < guard:
            raise InversionError(
                f"first-order factor below {guard} at sample {pt}; "
                "choose probe data with nonvanishing active components")
        samples.append(((float(pt[0]), float(pt[1])),
                        float(residual[i, j] / denom[i, j])))
    return samples


def write_coefficient_csv(samples: list, path, config_hash: str = "") -> None:
    with open(path, "w") as fh:
        fh.write("# format=anomalykit-coefficients-csv-1\n")
        fh.write(f"# config_hash={config_hash}\n")
        fh.write("x,y,value\n")
        for (x, y), v in samples:
            fh.write(f"{x!r},{y!r},{v!r}\n")


# ---------------------------------------------------------------------------
# Apex vanishing classifier
# ---------------------------------------------------------------------------

@dataclass
class ApexTestResult:
    """Decision on whether the residual vanishes at the corner apex.

    scaled values are |I(tau)| tau^n; a nonzero apex value makes them
    level off at a constant proportional to it, a vanishing one makes
    them keep decaying at the residual's Holder rate.
    """

    classification: str       # "nonzero" or "zero"
    taus: tuple
    values: np.ndarray        # complex I(tau)
    scaled: np.ndarray        # |I(tau)| tau^n
    spread: float
    extra_decay: float
    constant: float

    def to_dict(self) -> dict:
        return {"classification": self.classification,
                "taus": list(self.taus),
                "abs_values": [float(abs(v)) for v in self.values],
                "spread": self.spread,
                "extra_decay": self.extra_decay,
                "constant": self.constant}


def grid_residual(grid: Grid, arr: np.ndarray) -> Callable:
    """Pointwise interpolant of a node field, for probe quadrature."""
    interp = RegularGridInterpolator((grid.xs, grid.ys), arr, method="linear",
                                     bounds_error=False, fill_value=0.0)
    return lambda pts: interp(pts.reshape(-1, 2)).reshape(pts.shape[:-1])


def apex_vanishing_test(corner: TruncatedCorner, residual_field: Callable,
                        taus: Sequence[float] = (20.0, 40.0, 80.0, 160.0),
                        spread_tolerance: float = 0.2,
                        decay_threshold: float = 0.3) -> ApexTestResult:
    """Classify the apex value of a residual from probe-integral decay.

    I(tau) = integral_{K_h} residual w dx falls like tau^{-n} when the
    residual is nonzero at the apex and strictly faster (by the Holder
    exponent) when it vanishes there. The scale-invariant decision looks
    at |I| tau^n: relative spread below spread_tolerance over the top
    half of the ladder means a stabilized constant; otherwise the fitted
    extra decay must exceed decay_threshold to call the apex value zero.
    """
    taus = tuple(float(t) for t in taus)
    if len(taus) < 4:
        raise InversionError("tau ladder too short for a stable apex fit")
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise InversionError("tau ladder must be strictly increasing")
    n = corner.dim
    xi, xi_perp, _rho = probe_direction(corner)
    values = np.array([weighted_corner_integral(corner, residual_field, t,
                                                xi, xi_perp)
                       for t in taus])
    scaled = np.abs(values) * np.asarray(taus) ** n

    if np.all(np.abs(values) < 1e-200):
        return ApexTestResult("zero", taus, values, scaled, 0.0, math.inf, 0.0)

    half = len(taus) // 2
    top = scaled[half:]
    mean = float(np.mean(top))
    spread = float((np.max(top) - np.min(top)) / mean) if mean > 0 else math.inf
    if spread < spread_tolerance:
        return ApexTestResult("nonzero", taus, values, scaled, spread, 0.0, mean)
    good = scaled > 0
    slope = float(np.polyfit(np.log(np.asarray(taus)[good]),
                             np.log(scaled[good]), 1)[0])
    extra = -slope
    cls = "zero" if extra >= decay_threshold else "nonzero"
    return ApexTestResult(cls, taus, values, scaled, spread, extra,
                          mean if cls == "nonzero" else 0.0)
