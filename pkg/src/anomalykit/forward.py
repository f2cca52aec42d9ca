"""Forward solvers for the cross-diffusive chemical/prey system.

Parabolic model on a rectangle, for chemicals u_1..u_N and prey v_1..v_M:

    du_i/dt - d_i Lap(u_i + sum_j dd_ij u_i v_j) = G_i(x, t, u, v)
    dv_j/dt - e_j Lap(v_j) = sum_i chi_ij div(v_j grad u_i)

time-stepped IMEX: diffusion of the composite quantity implicitly (backward
Euler, with the composite factor 1 + sum_j dd_ij v_j frozen at the current
state), taxis in conservative flux form and the reaction explicitly. Walls
are no-flux by default; Dirichlet data can replace them per field. The
stationary counterpart replaces time derivatives by zero, takes Dirichlet
data for every field, and is solved by a damped Jacobian-free
Newton-Krylov iteration (GMRES with finite-difference directional
derivatives, block diffusion preconditioner).

Measurements mirror the two experiment types: parabolic runs export the
boundary traces of all fields over time plus the final snapshot;
stationary runs export Neumann traces extracted with one-sided
second-order stencils. Boundary samples are always ordered
counterclockwise from the lower-left corner.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import ceil
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres, splu

from anomalykit.expressions import compile_expression
from anomalykit.geometry import Grid
from anomalykit.operators import GridOperators
from anomalykit.reactions import PiecewiseReaction


class SolverError(RuntimeError):
    pass


class StabilityError(SolverError):
    """Explicit-term stability bound violated for the requested dt."""


class ConvergenceError(SolverError):
    """Newton iteration failed to reach the residual tolerance."""


_OPS_CACHE: dict[Grid, GridOperators] = {}


def get_ops(grid: Grid) -> GridOperators:
    ops = _OPS_CACHE.get(grid)
    if ops is None:
        ops = GridOperators(grid)
        _OPS_CACHE[grid] = ops
    return ops


# ---------------------------------------------------------------------------
# Parameters, state, boundary data
# ---------------------------------------------------------------------------

@dataclass
class ModelParams:
    """Diffusion, cross-diffusion, and taxis coefficients."""

    n_chemicals: int = 1
    n_prey: int = 1
    chem_diffusion: np.ndarray = None
    prey_diffusion: np.ndarray = None
    cross_diffusion: np.ndarray = None   # (N, M) coefficients dd_ij >= 0
    taxis: np.ndarray = None             # (N, M) coefficients chi_ij

    def __post_init__(self):
        N, M = self.n_chemicals, self.n_prey
        self.chem_diffusion = np.asarray(
            self.chem_diffusion if self.chem_diffusion is not None else np.ones(N), dtype=float)
        self.prey_diffusion = np.asarray(
            self.prey_diffusion if self.prey_diffusion is not None else np.ones(M), dtype=float)
        self.cross_diffusion = np.asarray(
            self.cross_diffusion if self.cross_diffusion is not None else np.zeros((N, M)),
            dtype=float)
        self.taxis = np.asarray(
            self.taxis if self.taxis is not None else np.zeros((N, M)), dtype=float)
        if self.chem_diffusion.shape != (N,) or np.any(self.chem_diffusion <= 0):
            raise ValueError("need one positive diffusion coefficient per chemical")
        if self.prey_diffusion.shape != (M,) or np.any(self.prey_diffusion <= 0):
            raise ValueError("need one positive diffusion coefficient per prey")
        if self.cross_diffusion.shape != (N, M) or np.any(self.cross_diffusion < 0):
            raise ValueError("cross-diffusion matrix must be (N, M) nonnegative")
        if self.taxis.shape != (N, M):
            raise ValueError("taxis matrix must be (N, M)")

    @property
    def field_names(self) -> list[str]:
        return [f"u{i+1}" for i in range(self.n_chemicals)] + \
               [f"v{j+1}" for j in range(self.n_prey)]


@dataclass
class State:
    u: np.ndarray   # (N, nx, ny)
    v: np.ndarray   # (M, nx, ny)
    t: float = 0.0

    def copy(self) -> "State":
        return State(self.u.copy(), self.v.copy(), self.t)


FieldLike = Union[float, str, Callable, np.ndarray]


def field_on_grid(value: FieldLike, grid: Grid) -> np.ndarray:
    X, Y = grid.nodes()
    if isinstance(value, str):
        return compile_expression(value)(X, Y)
    if callable(value):
        return np.asarray(value(X, Y), dtype=float) * np.ones_like(X)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full((grid.nx, grid.ny), float(arr))
    if arr.shape != (grid.nx, grid.ny):
        raise ValueError(f"field shape {arr.shape} does not match grid {(grid.nx, grid.ny)}")
    return arr


class BoundaryCondition:
    """No-flux walls by default; Dirichlet override with per-field data."""

    def __init__(self, kind: str = "neumann", values: Optional[dict] = None):
        if kind not in ("neumann", "dirichlet"):
            raise ValueError(f"unknown boundary kind {kind!r}")
        self.kind = kind
        self.values = values or {}

    @classmethod
    def neumann(cls) -> "BoundaryCondition":
        return cls("neumann")

    @classmethod
    def dirichlet(cls, **values) -> "BoundaryCondition":
        return cls("dirichlet", values)

    def field_values(self, name: str, grid: Grid) -> np.ndarray:
        return field_on_grid(self.values.get(name, 0.0), grid)


def initial_state(params: ModelParams, grid: Grid,
                  u_init: Sequence[FieldLike], v_init: Sequence[FieldLike]) -> State:
    u = np.stack([field_on_grid(f, grid) for f in u_init])
    v = np.stack([field_on_grid(f, grid) for f in v_init]) if params.n_prey else \
        np.zeros((0, grid.nx, grid.ny))
    if u.shape[0] != params.n_chemicals or v.shape[0] != params.n_prey:
        raise ValueError("initial data count does not match the field counts")
    return State(u, v, 0.0)


def total_mass(grid: Grid, field2d: np.ndarray) -> float:
    return float(np.sum(grid.node_volumes() * field2d))


# ---------------------------------------------------------------------------
# Parabolic stepping
# ---------------------------------------------------------------------------

def stable_dt(state: State, params: ModelParams, grid: Grid) -> float:
    """Explicit-taxis bound 0.2 h_min^2 / max |chi| |grad u|, +inf without taxis."""
    if not np.any(params.taxis != 0.0):
        return np.inf
    est = 0.0
    for i in range(params.n_chemicals):
        chi = float(np.max(np.abs(params.taxis[i])))
        if chi == 0.0:
            continue
        gx, gy = np.gradient(state.u[i], grid.hx, grid.hy)
        est = max(est, chi * float(np.max(np.hypot(gx, gy))))
    if est == 0.0:
        return np.inf
    return 0.2 * min(grid.hx, grid.hy) ** 2 / est


def _advance(state: State, params: ModelParams, reaction: PiecewiseReaction,
             dt: float, ops: GridOperators, bc: BoundaryCondition,
             bvals: Optional[dict]) -> State:
    u, v = state.u, state.v
    N, M = params.n_chemicals, params.n_prey
    dirichlet = bc.kind == "dirichlet"
    vol = ops.vol
    G = reaction.evaluate_fields(state.t, u, v)

    new_v = np.empty_like(v)
    for j in range(M):
        rhs = vol / dt * v[j]
        for i in range(N):
            chi = params.taxis[i, j]
            if chi != 0.0:
                rhs = rhs + chi * ops.taxis_flux(v[j], u[i])
        if dirichlet:
            rhs[ops.boundary_mask] = bvals[f"v{j+1}"][ops.boundary_mask]
        new_v[j] = ops.implicit_solve(params.prey_diffusion[j], dt, rhs, dirichlet)

    new_u = np.empty_like(u)
    for i in range(N):
        rhs = vol / dt * u[i] + vol * G[i]
        comp = None
        if np.any(params.cross_diffusion[i] != 0.0):
            comp = np.ones_like(u[i])
            for j in range(M):
                comp = comp + params.cross_diffusion[i, j] * v[j]
        if dirichlet:
            rhs[ops.boundary_mask] = bvals[f"u{i+1}"][ops.boundary_mask]
        new_u[i] = ops.implicit_solve(params.chem_diffusion[i], dt, rhs, dirichlet,
                                      composite=comp)
    return State(new_u, new_v, state.t + dt)


def step_parabolic(state: State, params: ModelParams, reaction: PiecewiseReaction,
                   dt: float, bc: Optional[BoundaryCondition] = None) -> State:
    """One IMEX step; raises StabilityError if dt exceeds the explicit bound."""
    grid = reaction.grid
    bc = bc or BoundaryCondition.neumann()
    bound = stable_dt(state, params, grid)
    if dt > bound * (1 + 1e-12):
        raise StabilityError(f"dt = {dt} exceeds the taxis stability bound {bound}")
    ops = get_ops(grid)
    bvals = None
    if bc.kind == "dirichlet":
        bvals = {name: bc.field_values(name, grid) for name in params.field_names}
    return _advance(state, params, reaction, dt, ops, bc, bvals)


@dataclass
class ForwardSolution:
    variant: str
    grid: Grid
    params: ModelParams
    times: list
    states: list            # stored states (parabolic) or [final] (stationary)
    store_every: int = 1
    newton_iterations: int = 0

    @property
    def final(self) -> State:
        return self.states[-1]


def solve_time_dependent(params: ModelParams, reaction: PiecewiseReaction,
                         init: State, t_final: float, n_steps: int,
                         bc: Optional[BoundaryCondition] = None,
                         store_every: int = 1) -> ForwardSolution:
    """March to t_final in n_steps IMEX steps, storing every k-th state.

    If the taxis stability bound dips below dt it is re-estimated each step
    and the step subdivides into the smallest safe number of substeps, so
    stored timestamps stay at exact multiples of dt.
    """
    grid = reaction.grid
    bc = bc or BoundaryCondition.neumann()
    ops = get_ops(grid)
    bvals = None
    state = init.copy()
    if bc.kind == "dirichlet":
        bvals = {name: bc.field_values(name, grid) for name in params.field_names}
        for i in range(params.n_chemicals):
            state.u[i][ops.boundary_mask] = bvals[f"u{i+1}"][ops.boundary_mask]
        for j in range(params.n_prey):
            state.v[j][ops.boundary_mask] = bvals[f"v{j+1}"][ops.boundary_mask]

    dt = t_final / n_steps
    times = [0.0]
    states = [state.copy()]
    for k in range(n_steps):
        bound = stable_dt(state, params, grid)
        m = 1 if bound >= dt else int(ceil(dt / bound * (1 + 1e-12)))
        sub = dt / m
        for _ in range(m):
            state = _advance(state, params, reaction, sub, ops, bc, bvals)
        state.t = (k + 1) * dt   # keep timestamps exact multiples of dt
        if (k + 1) % store_every == 0 or k + 1 == n_steps:
            times.append(state.t)
            states.append(state.copy())
    return ForwardSolution("parabolic", grid, params, times, states, store_every)


# ---------------------------------------------------------------------------
# Stationary Newton-Krylov
# ---------------------------------------------------------------------------

def solve_stationary(params: ModelParams, reaction: PiecewiseReaction,
                     bc: BoundaryCondition,
                     newton_tol: float = 1e-10, max_iter: int = 200,
                     gmres_restart: int = 30, fd_eps: float = 1e-7,
                     max_halvings: int = 8) -> ForwardSolution:
    """Damped Jacobian-free Newton-Krylov for the stationary system.

    The residual is per-volume scaled so the tolerance is grid independent;
    boundary rows read u - f. Directional derivatives are finite differences
    with step fd_eps * (1 + |U|); each Newton step is damped by halving
    until the residual norm decreases.
    """
    if bc.kind != "dirichlet":
        raise SolverError("stationary runs take Dirichlet data for every field")
    grid = reaction.grid
    ops = get_ops(grid)
    N, M = params.n_chemicals, params.n_prey
    nf = N + M
    n = ops.n
    vol = ops.vol
    bmask = ops.boundary_mask
    names = params.field_names
    bvals = {name: bc.field_values(name, grid) for name in names}
    diffs = list(params.chem_diffusion) + list(params.prey_diffusion)

    def unpack(Uflat):
        Z = Uflat.reshape(nf, *ops.shape)
        return Z[:N], Z[N:]

    def residual(Uflat: np.ndarray) -> np.ndarray:
        u, v = unpack(Uflat)
        F = reaction.evaluate_fields(0.0, u, v)
        out = np.empty((nf,) + ops.shape)
        for i in range(N):
            comp = None
            if np.any(params.cross_diffusion[i] != 0.0):
                comp = np.ones_like(u[i])
                for j in range(M):
                    comp = comp + params.cross_diffusion[i, j] * v[j]
            inner = u[i] if comp is None else comp * u[i]
            out[i] = (-params.chem_diffusion[i] * ops.laplacian(inner)) / vol - F[i]
            out[i][bmask] = u[i][bmask] - bvals[names[i]][bmask]
        for j in range(M):
            r = -params.prey_diffusion[j] * ops.laplacian(v[j])
            for i in range(N):
                chi = params.taxis[i, j]
                if chi != 0.0:
                    r = r - chi * ops.taxis_flux(v[j], u[i])
            out[N + j] = r / vol
            out[N + j][bmask] = v[j][bmask] - bvals[names[N + j]][bmask]
        return out.ravel()

    # block diffusion preconditioner (exact inverse of the linear decoupled part)
    plu = []
    import scipy.sparse as sp
    for kf in range(nf):
        A = ops.dirichlet_project(-diffs[kf] * sp.diags(1.0 / vol.ravel()) @ ops.L)
        plu.append(splu(A.tocsc()))

    def precondition(w: np.ndarray) -> np.ndarray:
        W = w.reshape(nf, n)
        return np.stack([plu[kf].solve(W[kf]) for kf in range(nf)]).ravel()

    Mop = LinearOperator((nf * n, nf * n), matvec=precondition)

    # harmonic lift of the Dirichlet data as the initial guess
    U = np.stack([ops.poisson_solve(diffs[kf], np.zeros(ops.shape), bvals[names[kf]])
                  for kf in range(nf)]).reshape(-1)

    R = residual(U)
    rnorm = float(np.max(np.abs(R)))
    iterations = 0
    while rnorm >= newton_tol:
        if iterations >= max_iter:
            raise ConvergenceError(f"Newton stalled at |R| = {rnorm:.3e} after {max_iter} iterations")
        eps = fd_eps * (1.0 + float(np.linalg.norm(U)))

        def jacvec(w: np.ndarray) -> np.ndarray:
            nw = float(np.linalg.norm(w))
            if nw == 0.0:
                return np.zeros_like(w)
            return (residual(U + (eps / nw) * w) - R) * (nw / eps)

        J = LinearOperator((nf * n, nf * n), matvec=jacvec)
        s, info = gmres(J, -R, M=Mop, restart=gmres_restart, maxiter=40,
                        rtol=1e-6, atol=0.0)
        if info != 0 and float(np.max(np.abs(J @ s + R))) > 0.5 * rnorm:
            raise ConvergenceError(f"inner GMRES did not reduce the linear residual (info={info})")
        lam = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            trial = U + lam * s
            Rt = residual(trial)
            tnorm = float(np.max(np.abs(Rt)))
            if tnorm < rnorm or tnorm < newton_tol:
                U, R, rnorm = trial, Rt, tnorm
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            raise ConvergenceError(f"damping failed to reduce |R| = {rnorm:.3e}")
        iterations += 1

    u, v = unpack(U)
    sol = ForwardSolution("stationary", grid, params, [0.0],
                          [State(u.copy(), v.copy(), 0.0)])
    sol.newton_iterations = iterations
    return sol


# ---------------------------------------------------------------------------
# Measurements
# ---------------------------------------------------------------------------

def neumann_traces(grid: Grid, field2d: np.ndarray) -> np.ndarray:
    """Outward normal derivative on boundary nodes, one-sided 3-point stencil."""
    hx, hy = grid.hx, grid.hy
    f = field2d

    def dx_out(i, j):   # derivative along outward x at a vertical wall
        if i == 0:
            return (3 * f[0, j] - 4 * f[1, j] + f[2, j]) / (2 * hx)
        return (3 * f[-1, j] - 4 * f[-2, j] + f[-3, j]) / (2 * hx)

    def dy_out(i, j):
        if j == 0:
            return (3 * f[i, 0] - 4 * f[i, 1] + f[i, 2]) / (2 * hy)
        return (3 * f[i, -1] - 4 * f[i, -2] + f[i, -3]) / (2 * hy)

    normals = grid.boundary_normals()
    out = np.empty(len(normals))
    for k, ((i, j), nvec) in enumerate(zip(grid.boundary_indices(), normals)):
        val = 0.0
        if nvec[0] != 0.0:
            val += abs(nvec[0]) * dx_out(i, j)
        if nvec[1] != 0.0:
            val += abs(nvec[1]) * dy_out(i, j)
        out[k] = val
    return out


@dataclass
class MeasurementSet:
    """Boundary observations plus the final interior snapshot.

    Parabolic variant: per-field Dirichlet traces over the stored times and
    the full fields at the final time. Stationary variant: per-field Neumann
    traces. Trace arrays follow the counterclockwise-from-lower-left node
    order.
    """

    variant: str
    grid: Grid
    field_names: list
    traces: dict
    times: Optional[np.ndarray] = None
    final: Optional[dict] = None
    meta: dict = field(default_factory=dict)


def extract_measurements(sol: ForwardSolution) -> MeasurementSet:
    grid = sol.grid
    bidx = grid.boundary_indices()
    I = np.array([i for i, _ in bidx])
    J = np.array([j for _, j in bidx])
    names = sol.params.field_names
    N = sol.params.n_chemicals

    def fields_of(state: State):
        return {name: (state.u[k] if k < N else state.v[k - N])
                for k, name in enumerate(names)}

    if sol.variant == "parabolic":
        traces = {name: np.stack([fields_of(s)[name][I, J] for s in sol.states])
                  for name in names}
        final = {name: arr.copy() for name, arr in fields_of(sol.final).items()}
        return MeasurementSet("parabolic", grid, names, traces,
                              times=np.asarray(sol.times), final=final,
                              meta={"store_every": sol.store_every})
    traces = {name: neumann_traces(grid, arr)
              for name, arr in fields_of(sol.final).items()}
    final = {name: arr.copy() for name, arr in fields_of(sol.final).items()}
    return MeasurementSet("stationary", grid, names, traces, final=final,
                          meta={"newton_iterations": sol.newton_iterations})


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def measurements_to_dict(ms: MeasurementSet, config_hash: str = "") -> dict:
    meta = {
        "variant": ms.variant,
        "grid": {"nx": ms.grid.nx, "ny": ms.grid.ny, "bounds": list(ms.grid.bounds)},
        "boundary_order": "counterclockwise from lower-left corner",
        "config_hash": config_hash,
        "format": "anomalykit-measurements-1",
    }
    meta.update(ms.meta)
    doc = {"meta": meta, "fields": list(ms.field_names),
           "traces": {k: np.asarray(v).tolist() for k, v in ms.traces.items()}}
    if ms.times is not None:
        doc["times"] = np.asarray(ms.times).tolist()
    if ms.final is not None:
        doc["final"] = {k: np.asarray(v).tolist() for k, v in ms.final.items()}
    return doc


def write_measurements_json(ms: MeasurementSet, path, config_hash: str = "") -> None:
    with open(path, "w") as fh:
        json.dump(measurements_to_dict(ms, config_hash), fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_measurements_json(path) -> MeasurementSet:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        meta = dict(doc["meta"])
        gspec = meta.pop("grid")
        grid = Grid(int(gspec["nx"]), int(gspec["ny"]), tuple(gspec["bounds"]))
        names = list(doc["fields"])
        traces = {k: np.asarray(v, dtype=float) for k, v in doc["traces"].items()}
    except (KeyError, TypeError) as exc:
        raise SolverError(f"malformed measurement file {path}: {exc}") from exc
    times = np.asarray(doc["times"], dtype=float) if "times" in doc else None
    final = None
    if "final" in doc:
        final = {k: np.asarray(v, dtype=float) for k, v in doc["final"].items()}
    return MeasurementSet(meta.pop("variant"), grid, names, traces,
                          times=times, final=final, meta=meta)


def write_snapshot_csv(ms: MeasurementSet, path, config_hash: str = "") -> None:
    """Final snapshot as x,y,field,value rows (deterministic order)."""
    if ms.final is None:
        raise ValueError("measurement set has no final snapshot")
    xs, ys = ms.grid.xs, ms.grid.ys
    with open(path, "w") as fh:
        fh.write("# format=anomalykit-snapshot-csv-1\n")
        fh.write(f"# config_hash={config_hash}\n")
        fh.write("x,y,field,value\n")
        for name in ms.field_names:
            arr = ms.final[name]
            for i in range(ms.grid.nx):
                for j in range(ms.grid.ny):
                    fh.write(f"{float(xs[i])!r},{float(ys[j])!r},{name},"
                             f"{float(arr[i, j])!r}\n")
