"""Variation cascade: linearized systems of increasing order in the data.

The solution map eps -> (u(eps), v(eps)) for the data family

    u data: u0 + eps f1 + eps^2 f2        v data: v0 + eps g1 + eps^2 g2

is differentiated at eps = 0 about a constant base (u0, v0 = 0). Because
the reaction and its first derivatives vanish at the base, the first
variation is a decoupled linear diffusion system; the second and third
variations are linear systems driven by sources assembled from the stored
reaction derivatives and lower-order fields.

The discrete cascade differentiates the forward scheme itself, not the
PDE: each linear step is the exact eps-derivative of the IMEX update
(same operators, same dt), so finite-difference checks against the
nonlinear solver measure only the Taylor remainder in eps, never a
discretization mismatch. Initial data carry the derivative factors of
the family: first order starts from f1, second order from 2 f2, third
order from zero.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from anomalykit.forward import (BoundaryCondition, FieldLike, ModelParams, State,
                                field_on_grid, get_ops, solve_stationary,
                                solve_time_dependent)
from anomalykit.geometry import Grid
from anomalykit.reactions import PiecewiseReaction

DEFAULT_LADDER = (1e-1, 5e-2, 2.5e-2, 1.25e-2)


class CascadeError(RuntimeError):
    pass


@dataclass
class DataFamily:
    """Perturbation data about a constant base, quadratic in eps.

    Remainder terms beyond eps^2 are identically zero. Sign conditions:
    where a base component vanishes, the corresponding first-order datum
    must be nonnegative so the perturbed data stay admissible states.
    """

    grid: Grid
    u0: np.ndarray          # (N,)
    v0: np.ndarray          # (M,)
    f1: np.ndarray          # (N, nx, ny)
    f2: np.ndarray
    g1: np.ndarray          # (M, nx, ny)
    g2: np.ndarray
    epsilons: np.ndarray

    @classmethod
    def build(cls, grid: Grid, u0: Sequence[float], v0: Sequence[float],
              f1: Sequence[FieldLike], f2: Optional[Sequence[FieldLike]] = None,
              g1: Optional[Sequence[FieldLike]] = None,
              g2: Optional[Sequence[FieldLike]] = None,
              epsilons: Sequence[float] = DEFAULT_LADDER) -> "DataFamily":
        u0 = np.atleast_1d(np.asarray(u0, dtype=float))
        v0 = np.atleast_1d(np.asarray(v0, dtype=float))
        N, M = len(u0), len(v0)

        def stack(items, count):
            if items is None:
                return np.zeros((count, grid.nx, grid.ny))
            if len(items) != count:
                raise CascadeError("data family entry count does not match the field count")
            return np.stack([field_on_grid(f, grid) for f in items])

        fam = cls(grid, u0, v0, stack(f1, N), stack(f2, N), stack(g1, M),
                  stack(g2, M), np.asarray(epsilons, dtype=float))
        fam._validate()
        return fam

    def _validate(self) -> None:
        eps = self.epsilons
        if eps.size < 4:
            raise CascadeError("epsilon ladder needs at least 4 entries")
        if np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
            raise CascadeError("epsilon ladder must be strictly decreasing and positive")
        for i in range(len(self.u0)):
            if self.u0[i] == 0.0 and np.any(self.f1[i] < 0):
                raise CascadeError(f"f1[{i}] must be nonnegative when the base u0[{i}] is zero")
        for j in range(len(self.v0)):
            if self.v0[j] == 0.0 and np.any(self.g1[j] < 0):
                raise CascadeError(f"g1[{j}] must be nonnegative when the base v0[{j}] is zero")

    def chemical_data(self, eps: float) -> np.ndarray:
        return self.u0[:, None, None] + eps * self.f1 + eps ** 2 * self.f2

    def prey_data(self, eps: float) -> np.ndarray:
        return self.v0[:, None, None] + eps * self.g1 + eps ** 2 * self.g2


@dataclass
class CascadeSolution:
    """Variation fields up to `order`; arrays indexed (time, field, x, y).

    Parabolic runs keep the stored time series; stationary runs hold a
    single entry. first/second/third stack the chemical block before the
    prey block, shape (T, N+M, nx, ny).
    """

    variant: str
    order: int
    grid: Grid
    params: ModelParams
    times: list
    first: np.ndarray
    second: Optional[np.ndarray] = None
    third: Optional[np.ndarray] = None
    n_steps: int = 0

    def fields(self, order: int) -> np.ndarray:
        arr = {1: self.first, 2: self.second, 3: self.third}.get(order)
        if arr is None:
            raise CascadeError(f"order-{order} fields were not computed")
        return arr

    def final(self, order: int) -> np.ndarray:
        return self.fields(order)[-1]

    def chemicals(self, order: int) -> np.ndarray:
        return self.fields(order)[:, :self.params.n_chemicals]

    def prey(self, order: int) -> np.ndarray:
        return self.fields(order)[:, self.params.n_chemicals:]


def _require_base(params: ModelParams, base) -> tuple[np.ndarray, np.ndarray]:
    u0 = np.atleast_1d(np.asarray(base[0], dtype=float))
    v0 = np.atleast_1d(np.asarray(base[1], dtype=float))
    if u0.shape != (params.n_chemicals,) or v0.shape != (params.n_prey,):
        raise CascadeError("base state shape does not match the field counts")
    if np.any(v0 != 0.0):
        raise CascadeError("the cascade is derived about a vanishing prey base v0 = 0")
    return u0, v0


class _CascadeStepper:
    """Shared machinery for the three variation orders.

    Dirichlet data for the variations are the traces of the family
    derivatives: f1/g1 at first order, 2 f2 / 2 g2 at second, zero at
    third. Neumann walls need no data.
    """

    def __init__(self, params: ModelParams, grid: Grid, u0: np.ndarray,
                 bc: Optional[BoundaryCondition],
                 reaction: Optional[PiecewiseReaction] = None):
        self.params = params
        self.grid = grid
        self.u0 = u0
        self.ops = get_ops(grid)
        self.bc = bc or BoundaryCondition.neumann()
        self.dirichlet = self.bc.kind == "dirichlet"
        self.reaction = reaction
        self.N = params.n_chemicals
        self.M = params.n_prey

    def split(self, z: np.ndarray):
        return z[:self.N], z[self.N:]

    def cross_factor(self, vfields: np.ndarray) -> np.ndarray:
        """(N, nx, ny) array sum_j dd_ij v_j for each chemical i."""
        out = np.zeros((self.N,) + self.ops.shape)
        for i in range(self.N):
            for j in range(self.M):
                dd = self.params.cross_diffusion[i, j]
                if dd != 0.0:
                    out[i] += dd * vfields[j]
        return out

    def taxis_source(self, vfields: np.ndarray, ufields: np.ndarray) -> np.ndarray:
        out = np.zeros((self.M,) + self.ops.shape)
        for j in range(self.M):
            for i in range(self.N):
                chi = self.params.taxis[i, j]
                if chi != 0.0:
                    out[j] += chi * self.ops.taxis_flux(vfields[j], ufields[i])
        return out

    # -- one parabolic step of the order-k variation -------------------------

    def step(self, order: int, dt: float, t_old: float, z_old: dict,
             bdata: dict) -> np.ndarray:
        """Advance the order-`order` fields one step.

        z_old maps available orders to their (N+M, nx, ny) fields at the
        old time; z_old["new1"]/["new2"] hold already-updated lower-order
        fields at the new time. Returns the updated (N+M, nx, ny) block.
        """
        ops, p = self.ops, self.params
        vol = ops.vol
        uo, vo = self.split(z_old[order])
        new = np.empty((self.N + self.M,) + ops.shape)

        # prey block: implicit diffusion with explicit variation taxis
        if order == 1:
            src = 0.0
        elif order == 2:
            u1, v1 = self.split(z_old[1])
            src = 2.0 * self.taxis_source(v1, u1)
        else:
            u1, v1 = self.split(z_old[1])
            u2, v2 = self.split(z_old[2])
            src = 3.0 * (self.taxis_source(v2, u1) + self.taxis_source(v1, u2))
        for j in range(self.M):
            rhs = vol / dt * vo[j]
            if order > 1:
                rhs = rhs + src[j]
            if self.dirichlet:
                rhs[ops.boundary_mask] = bdata[order][self.N + j][ops.boundary_mask]
            new[self.N + j] = ops.implicit_solve(p.prey_diffusion[j], dt, rhs,
                                                 self.dirichlet)

        # chemical block: differentiate the composite-diffusion update
        if order == 1:
            reac_src = np.zeros((self.N,) + ops.shape)
        elif order == 2:
            reac_src = self.reaction.variation_source(t_old, z_old[1], order=2)
        else:
            reac_src = self.reaction.variation_source(t_old, z_old[1], z_old[2],
                                                      order=3)
        c1 = self.cross_factor(self.split(z_old[1])[1]) if self.M else None
        for i in range(self.N):
            rhs = vol / dt * uo[i] + vol * reac_src[i]
            if self.M:
                if order == 1:
                    rhs = rhs + p.chem_diffusion[i] * ops.laplacian(c1[i] * self.u0[i])
                elif order == 2:
                    c2 = self.cross_factor(self.split(z_old[2])[1])
                    u1n = z_old["new1"][i]
                    rhs = rhs + p.chem_diffusion[i] * (
                        2.0 * ops.laplacian(c1[i] * u1n)
                        + ops.laplacian(c2[i] * self.u0[i]))
                else:
                    c2 = self.cross_factor(self.split(z_old[2])[1])
                    c3 = self.cross_factor(self.split(z_old[3])[1])
                    u1n, u2n = z_old["new1"][i], z_old["new2"][i]
                    rhs = rhs + p.chem_diffusion[i] * (
                        3.0 * ops.laplacian(c1[i] * u2n)
                        + 3.0 * ops.laplacian(c2[i] * u1n)
                        + ops.laplacian(c3[i] * self.u0[i]))
            if self.dirichlet:
                rhs[ops.boundary_mask] = bdata[order][i][ops.boundary_mask]
            new[i] = ops.implicit_solve(p.chem_diffusion[i], dt, rhs, self.dirichlet)
        return new

    # -- stationary variation solves -----------------------------------------

    def stationary(self, order: int, z: dict, bdata: dict) -> np.ndarray:
        ops, p = self.ops, self.params
        vol = ops.vol
        new = np.empty((self.N + self.M,) + ops.shape)
        if order == 1:
            src = np.zeros((self.M,) + ops.shape)
        elif order == 2:
            u1, v1 = self.split(z[1])
            src = 2.0 * self.taxis_source(v1, u1)
        else:
            u1, v1 = self.split(z[1])
            u2, v2 = self.split(z[2])
            src = 3.0 * (self.taxis_source(v2, u1) + self.taxis_source(v1, u2))
        for j in range(self.M):
            new[self.N + j] = ops.poisson_solve(p.prey_diffusion[j], src[j],
                                                bdata[order][self.N + j])
        if order == 1:
            reac_src = np.zeros((self.N,) + ops.shape)
        elif order == 2:
            reac_src = self.reaction.variation_source(0.0, z[1], order=2)
        else:
            reac_src = self.reaction.variation_source(0.0, z[1], z[2], order=3)
        vnew = new[self.N:]
        cnew = self.cross_factor(vnew) if self.M else None
        for i in range(self.N):
            rhs = vol * reac_src[i]
            if self.M:
                if order == 1:
                    rhs = rhs + p.chem_diffusion[i] * ops.laplacian(cnew[i] * self.u0[i])
                elif order == 2:
                    c1 = self.cross_factor(self.split(z[1])[1])
                    u1 = self.split(z[1])[0]
                    rhs = rhs + p.chem_diffusion[i] * (
                        2.0 * ops.laplacian(c1[i] * u1[i])
                        + ops.laplacian(cnew[i] * self.u0[i]))
                else:
                    c1 = self.cross_factor(self.split(z[1])[1])
                    c2 = self.cross_factor(self.split(z[2])[1])
                    u1, u2 = self.split(z[1])[0], self.split(z[2])[0]
                    rhs = rhs + p.chem_diffusion[i] * (
                        3.0 * ops.laplacian(c1[i] * u2[i])
                        + 3.0 * ops.laplacian(c2[i] * u1[i])
                        + ops.laplacian(cnew[i] * self.u0[i]))
            new[i] = ops.poisson_solve(p.chem_diffusion[i], rhs, bdata[order][i])
        return new


def _run_orders(stepper: _CascadeStepper, orders: list[int], init: dict,
                bdata: dict, variant: str, t_final, n_steps, store_every):
    if variant == "stationary":
        z: dict = {}
        stored = {k: None for k in orders}
        for k in orders:
            z[k] = stepper.stationary(k, z, bdata)
            stored[k] = z[k][None].copy()
        return [0.0], stored
    dt = t_final / n_steps
    z = {k: init[k].copy() for k in orders}
    times = [0.0]
    stored = {k: [z[k].copy()] for k in orders}
    for step in range(n_steps):
        t_old = step * dt
        z_new = {}
        carry = dict(z)
        for k in orders:
            block = stepper.step(k, dt, t_old, carry, bdata)
            z_new[k] = block
            carry[f"new{k}"] = block[:stepper.N]
        z = z_new
        if (step + 1) % store_every == 0 or step + 1 == n_steps:
            times.append((step + 1) * dt)
            for k in orders:
                stored[k].append(z[k].copy())
    return times, {k: np.stack(v) for k, v in stored.items()}


def _boundary_data(family: DataFamily) -> dict:
    zero_u = np.zeros_like(family.f1)
    zero_v = np.zeros_like(family.g1)
    return {
        1: np.concatenate([family.f1, family.g1]),
        2: np.concatenate([2.0 * family.f2, 2.0 * family.g2]),
        3: np.concatenate([zero_u, zero_v]),
    }


def solve_first_order(params: ModelParams, base, f1, g1=None, *,
                      grid: Optional[Grid] = None,
                      family: Optional[DataFamily] = None,
                      variant: str = "parabolic", t_final: float = 0.1,
                      n_steps: int = 50, bc: Optional[BoundaryCondition] = None,
                      store_every: int = 1) -> CascadeSolution:
    """First variation: decoupled diffusion of (f1, g1) about the base.

    Pass either a prepared `family` or raw f1/g1 fields plus a grid. The
    prey block sees no taxis at this order (the base prey density
    vanishes) and the chemical block couples to v only through the
    constant base, so zero g1 pins v to zero bit-exactly.
    """
    if family is None:
        if grid is None:
            raise CascadeError("need a grid when no data family is given")
        u0, v0 = _require_base(params, base)
        family = DataFamily.build(grid, u0, v0, f1, g1=g1)
    else:
        grid = family.grid
        u0, v0 = _require_base(params, (family.u0, family.v0))
    stepper = _CascadeStepper(params, grid, u0, bc)
    bdata = _boundary_data(family)
    init = {1: bdata[1].copy()}
    times, stored = _run_orders(stepper, [1], init, bdata, variant,
                                t_final, n_steps, store_every)
    return CascadeSolution(variant, 1, grid, params, times, stored[1],
                           n_steps=n_steps if variant == "parabolic" else 0)


def solve_second_order(params: ModelParams, reaction: PiecewiseReaction,
                       first: CascadeSolution, f2=None, g2=None, *,
                       family: Optional[DataFamily] = None, order: int = 2,
                       t_final: float = 0.1, n_steps: int = 50,
                       bc: Optional[BoundaryCondition] = None,
                       store_every: int = 1) -> CascadeSolution:
    """Second (order=2) or third (order=3) variation on top of `first`.

    The sources are assembled from the stored reaction derivatives and the
    lower-order fields; the linear operators are the first-order ones. For
    efficiency and exactness the lower orders are recomputed inside the
    same time loop instead of being interpolated from `first`, so `first`
    fixes the data and the run layout (variant, dt, storage), not the
    arrays themselves.
    """
    if order not in (2, 3):
        raise CascadeError("the cascade implements variation orders 1, 2 and 3")
    if reaction.order < order:
        raise CascadeError(
            f"reaction truncation order {reaction.order} cannot drive order-{order} sources")
    grid = reaction.grid
    u0 = reaction.u0
    if family is not None:
        bdata = _boundary_data(family)
    else:
        def stack(items, count):
            if items is None:
                return np.zeros((count, grid.nx, grid.ny))
            return np.stack([field_on_grid(f, grid) for f in items])

        f2a = stack(f2, params.n_chemicals)
        g2a = stack(g2, params.n_prey)
        bdata = {1: first.fields(1)[0].copy(),
                 2: np.concatenate([2.0 * f2a, 2.0 * g2a]),
                 3: np.concatenate([np.zeros_like(f2a), np.zeros_like(g2a)])}
    stepper = _CascadeStepper(params, grid, u0, bc, reaction)
    orders = list(range(1, order + 1))
    init = {k: bdata[k].copy() for k in orders}
    variant = first.variant
    if variant == "parabolic":
        t_final = first.times[-1]
        if first.n_steps:
            n_steps = first.n_steps
    times, stored = _run_orders(stepper, orders, init, bdata, variant,
                                t_final, n_steps, store_every)
    return CascadeSolution(variant, order, grid, params, times, stored[1],
                           stored.get(2), stored.get(3),
                           n_steps=n_steps if variant == "parabolic" else 0)


def solve_cascade(params: ModelParams, reaction: PiecewiseReaction,
                  family: DataFamily, order: int = 2,
                  variant: str = "parabolic", t_final: float = 0.1,
                  n_steps: int = 50, bc: Optional[BoundaryCondition] = None,
                  store_every: int = 1) -> CascadeSolution:
    """All variation orders up to `order` in one pass over the time loop."""
    if order not in (1, 2, 3):
        raise CascadeError("the cascade implements variation orders 1, 2 and 3")
    if order > 1 and reaction.order < order:
        raise CascadeError(
            f"reaction truncation order {reaction.order} cannot drive order-{order} sources")
    u0, _ = _require_base(params, (family.u0, family.v0))
    if not np.array_equal(u0, reaction.u0):
        raise CascadeError("data family and reaction disagree on the base state")
    stepper = _CascadeStepper(params, family.grid, u0, bc, reaction)
    bdata = _boundary_data(family)
    orders = list(range(1, order + 1))
    init = {k: bdata[k].copy() for k in orders}
    times, stored = _run_orders(stepper, orders, init, bdata, variant,
                                t_final, n_steps, store_every)
    return CascadeSolution(variant, order, family.grid, params, times,
                           stored[1], stored.get(2), stored.get(3),
                           n_steps=n_steps if variant == "parabolic" else 0)


# ---------------------------------------------------------------------------
# Consistency against the nonlinear solver
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceReport:
    """Finite-difference consistency of the cascade along the eps ladder."""

    epsilons: np.ndarray
    errors_first: np.ndarray
    errors_second: np.ndarray
    slope_first: float
    slope_second: float
    slope_tolerance_first: float = 0.25
    slope_tolerance_second: float = 0.3
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        ok1 = abs(self.slope_first - 1.0) <= self.slope_tolerance_first
        ok2 = abs(self.slope_second - 1.0) <= self.slope_tolerance_second
        # an exactly linear problem leaves both divided differences at
        # roundoff (E2 amplified by 1/eps^2); slopes are then meaningless
        if np.all(self.errors_first < 1e-11):
            ok1 = True
            ok2 = ok2 or np.all(self.errors_second < 1e-11 / self.epsilons ** 2)
        if np.all(self.errors_second < 1e-11):
            ok2 = True
        return ok1 and ok2

    def to_dict(self) -> dict:
        return {
            "epsilons": self.epsilons.tolist(),
            "errors_first": self.errors_first.tolist(),
            "errors_second": self.errors_second.tolist(),
            "slope_first": self.slope_first,
            "slope_second": self.slope_second,
            "tolerances": {"first": self.slope_tolerance_first,
                           "second": self.slope_tolerance_second},
            "passed": bool(self.passed),
            "meta": self.meta,
        }

    def write_json(self, path, config_hash: str = "") -> None:
        doc = self.to_dict()
        doc["config_hash"] = config_hash
        doc["format"] = "anomalykit-linearization-1"
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")


def _loglog_slope(eps: np.ndarray, err: np.ndarray) -> float:
    mask = err > 0
    if mask.sum() < 2:
        return 0.0
    return float(np.polyfit(np.log(eps[mask]), np.log(err[mask]), 1)[0])


def finite_difference_check(params: ModelParams, reaction: PiecewiseReaction,
                            family: DataFamily, variant: str = "parabolic",
                            t_final: float = 0.1, n_steps: int = 50,
                            bc: Optional[BoundaryCondition] = None) -> ConvergenceReport:
    """Compare divided differences of the nonlinear solver to the cascade.

    E1(eps) = max |(u(eps) - u(0))/eps - u_first|
    E2(eps) = max |2 (u(eps) - u(0) - eps u_first)/eps^2 - u_second|

    taken over the chemical fields at the final time. Both decay like eps
    for admissible reactions; reports the least-squares log-log slopes.
    """
    grid = family.grid
    casc = solve_cascade(params, reaction, family, order=2, variant=variant,
                         t_final=t_final, n_steps=n_steps, bc=bc,
                         store_every=max(1, n_steps))
    uI = casc.chemicals(1)[-1]
    uII = casc.chemicals(2)[-1]
    N = params.n_chemicals

    def nonlinear(eps: float) -> np.ndarray:
        udata = family.chemical_data(eps)
        vdata = family.prey_data(eps)
        if variant == "stationary":
            names = params.field_names
            values = {names[i]: udata[i] for i in range(N)}
            values.update({names[N + j]: vdata[j] for j in range(params.n_prey)})
            sol = solve_stationary(params, reaction, BoundaryCondition.dirichlet(**values))
            return sol.final.u
        run_bc = bc or BoundaryCondition.neumann()
        if run_bc.kind == "dirichlet":
            names = params.field_names
            values = {names[i]: udata[i] for i in range(N)}
            values.update({names[N + j]: vdata[j] for j in range(params.n_prey)})
            run_bc = BoundaryCondition.dirichlet(**values)
        init = State(udata.copy(), vdata.copy())
        sol = solve_time_dependent(params, reaction, init, t_final, n_steps,
                                   bc=run_bc, store_every=n_steps)
        return sol.final.u

    u_base = nonlinear(0.0)
    e1 = np.empty(len(family.epsilons))
    e2 = np.empty(len(family.epsilons))
    for k, eps in enumerate(family.epsilons):
        u_eps = nonlinear(float(eps))
        diff = u_eps - u_base
        e1[k] = float(np.max(np.abs(diff / eps - uI)))
        e2[k] = float(np.max(np.abs(2.0 * (diff - eps * uI) / eps ** 2 - uII)))
    return ConvergenceReport(family.epsilons.copy(), e1, e2,
                             _loglog_slope(family.epsilons, e1),
                             _loglog_slope(family.epsilons, e2),
                             meta={"variant": variant, "t_final": t_final,
                                   "n_steps": n_steps})
