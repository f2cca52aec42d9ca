"""Admissible reaction nonlinearities and their piecewise-anomalous form.

A reaction is a vector function G(x, t, u, v) that vanishes to second order
at a constant base state (u0, 0): no constant or linear Taylor terms. What
is stored is the collection of partial derivatives at the base point,
indexed by component i and a multi-index over the N chemical and M prey
variables, e.g. "u1u1" for d^2 G_i / d u1^2. Evaluation sums the centered
Taylor polynomial with the standard multinomial denominators

    G_i = sum_beta D_beta(x, t) (u - u0)^beta_u v^beta_v / beta!

which makes the stored coefficients exactly the derivatives the
linearization cascade differentiates against. Symmetric index requests
("u1u2" vs "u2u1") resolve to the same stored field because the exponent
tuple is the storage key.

The anomalous model is piecewise: an exterior reaction outside the
inclusion and an interior one inside, selected one-sidedly by the sign of
the signed distance, never averaged across the interface. Admissibility
checks follow the defining clauses: vanishing base value and first
derivatives, no low-order terms, symmetric coefficients, and a genuine
coefficient jump somewhere on the interface.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from math import factorial
from typing import Optional, Sequence, Union

import numpy as np

from anomalykit.expressions import compile_expression
from anomalykit.geometry import Grid, Inclusion


class ReactionError(ValueError):
    """Invalid reaction construction or evaluation request."""


_TOKEN = re.compile(r"([uv])(\d+)")


def parse_multi_index(token: Union[str, Sequence[int]], n_chem: int, n_prey: int) -> tuple[int, ...]:
    """Multi-index over (u_1..u_N, v_1..v_M) from a token like 'u1u2' or 'u1v1'.

    A tuple of exponents passes through after validation. String factors may
    appear in any order; the exponent tuple is the canonical form.
    """
    size = n_chem + n_prey
    if not isinstance(token, str):
        beta = tuple(int(b) for b in token)
        if len(beta) != size or any(b < 0 for b in beta):
            raise ReactionError(f"bad multi-index tuple {token!r} for N={n_chem}, M={n_prey}")
        return beta
    matched = _TOKEN.findall(token)
    if not matched or "".join(kind + num for kind, num in matched) != token:
        raise ReactionError(f"cannot parse multi-index {token!r}")
    beta = [0] * size
    for kind, num in matched:
        k = int(num)
        if kind == "u":
            if not 1 <= k <= n_chem:
                raise ReactionError(f"chemical index u{k} out of range in {token!r}")
            beta[k - 1] += 1
        else:
            if not 1 <= k <= n_prey:
                raise ReactionError(f"prey index v{k} out of range in {token!r}")
            beta[n_chem + k - 1] += 1
    return tuple(beta)


def format_multi_index(beta: Sequence[int], n_chem: int) -> str:
    parts = []
    for pos, exp in enumerate(beta):
        name = f"u{pos + 1}" if pos < n_chem else f"v{pos - n_chem + 1}"
        parts.append(name * exp)
    return "".join(parts)


def _beta_factorial(beta: Sequence[int]) -> float:
    out = 1.0
    for b in beta:
        out *= factorial(b)
    return out


@dataclass
class Coefficient:
    """Separable coefficient c(x) * phi(t); phi defaults to 1."""

    space: Union[float, str]
    profile: Optional[np.ndarray] = None  # knots [[t, value], ...] piecewise linear

    def __post_init__(self):
        if isinstance(self.space, str):
            self._fn = compile_expression(self.space)
        else:
            self.space = float(self.space)
            self._fn = None
        if self.profile is not None:
            self.profile = np.asarray(self.profile, dtype=float)
            if self.profile.ndim != 2 or self.profile.shape[1] != 2:
                raise ReactionError("time profile needs [[t, value], ...] knots")

    def spatial(self, x, y) -> np.ndarray:
        if self._fn is None:
            return np.full(np.shape(np.asarray(x, dtype=float)), self.space)
        return self._fn(x, y)

    def time_factor(self, t: float) -> float:
        if self.profile is None:
            return 1.0
        return float(np.interp(t, self.profile[:, 0], self.profile[:, 1]))

    def at(self, x, y, t: float = 0.0) -> np.ndarray:
        return self.spatial(x, y) * self.time_factor(t)


class TaylorReaction:
    """One reaction branch: derivative coefficients at the base state."""

    MAX_ORDER = 5

    def __init__(self, n_chemicals: int, n_prey: int, u0: Sequence[float], order: int = 3):
        if not (2 <= order <= self.MAX_ORDER):
            raise ReactionError(f"truncation order must lie in [2, {self.MAX_ORDER}]")
        self.n_chemicals = int(n_chemicals)
        self.n_prey = int(n_prey)
        self.u0 = np.asarray(u0, dtype=float)
        if self.u0.shape != (self.n_chemicals,):
            raise ReactionError("base state u0 must have one entry per chemical")
        self.order = int(order)
        self.coeffs: dict[tuple[int, tuple[int, ...]], Coefficient] = {}

    def set_coefficient(self, component: int, multi_index, value,
                        profile=None) -> None:
        if not 1 <= component <= self.n_chemicals:
            raise ReactionError(f"component {component} out of range")
        beta = parse_multi_index(multi_index, self.n_chemicals, self.n_prey)
        total = sum(beta)
        if not 2 <= total <= self.order:
            raise ReactionError(
                f"multi-index order {total} outside [2, {self.order}] for {multi_index!r}")
        coeff = value if isinstance(value, Coefficient) else Coefficient(value, profile)
        self.coeffs[(component - 1, beta)] = coeff

    def coefficient(self, component: int, multi_index) -> Coefficient:
        beta = parse_multi_index(multi_index, self.n_chemicals, self.n_prey)
        total = sum(beta)
        if total < 2:
            raise ReactionError(f"order-{total} coefficients do not exist in an admissible reaction")
        if total > self.order:
            raise ReactionError(f"order {total} beyond truncation order {self.order}")
        key = (component - 1, beta)
        if key not in self.coeffs:
            self.coeffs[key] = Coefficient(0.0)
        return self.coeffs[key]

    def evaluate(self, x, y, t, u, v) -> np.ndarray:
        """Vector G(x, t, u, v); u has shape (N, ...) and v (M, ...)."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        du = u - self.u0.reshape((-1,) + (1,) * (u.ndim - 1))
        out = np.zeros((self.n_chemicals,) + np.shape(x))
        for (comp, beta), coeff in self.coeffs.items():
            term = coeff.at(x, y, t) / _beta_factorial(beta)
            for pos, exp in enumerate(beta):
                if exp == 0:
                    continue
                var = du[pos] if pos < self.n_chemicals else v[pos - self.n_chemicals]
                term = term * var ** exp
            out[comp] += term
        return out


@dataclass
class AdmissibilityReport:
    """Clause-by-clause verdict of the admissibility definitions."""

    truncation_order: int
    vanishes_at_base: bool
    first_derivatives_vanish: bool
    low_order_free: bool
    coefficients_symmetric: bool
    base_nonnegative: bool
    interface_jump_present: bool
    max_jumps: dict[str, float] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def admissible(self) -> bool:
        return (self.vanishes_at_base and self.first_derivatives_vanish
                and self.low_order_free and self.coefficients_symmetric
                and self.base_nonnegative and self.interface_jump_present)


class PiecewiseReaction:
    """Exterior reaction with an interior anomaly on an inclusion.

    Branch selection is one-sided: a point belongs to the interior branch
    iff the signed distance is <= 0. Coefficient fields are cached on the
    grid the solver runs on.
    """

    def __init__(self, exterior: TaylorReaction, interior: TaylorReaction,
                 inclusion: Inclusion, grid: Grid):
        for attr in ("n_chemicals", "n_prey", "order"):
            if getattr(exterior, attr) != getattr(interior, attr):
                raise ReactionError(f"branches disagree on {attr}")
        if not np.array_equal(exterior.u0, interior.u0):
            raise ReactionError("branches must share the base state u0")
        self.exterior = exterior
        self.interior = interior
        self.inclusion = inclusion
        self.grid = grid
        self.n_chemicals = exterior.n_chemicals
        self.n_prey = exterior.n_prey
        self.u0 = exterior.u0
        self.order = exterior.order
        X, Y = grid.nodes()
        self.node_inside = inclusion.signed_distance(X, Y) <= 0.0
        self._field_cache: dict[tuple[int, tuple[int, ...]], np.ndarray] = {}

    # -- combined coefficient fields ----------------------------------------

    def _keys(self):
        return sorted(set(self.exterior.coeffs) | set(self.interior.coeffs))

    def coefficient_field(self, comp: int, beta: tuple[int, ...]) -> np.ndarray:
        """Branch-combined spatial field of one stored derivative."""
        key = (comp, beta)
        if key not in self._field_cache:
            X, Y = self.grid.nodes()
            zero = np.zeros_like(X)
            ext = self.exterior.coeffs.get(key)
            inn = self.interior.coeffs.get(key)
            ext_f = ext.spatial(X, Y) if ext is not None else zero
            inn_f = inn.spatial(X, Y) if inn is not None else zero
            self._field_cache[key] = np.where(self.node_inside, inn_f, ext_f)
        return self._field_cache[key]

    def _time_factor(self, comp: int, beta: tuple[int, ...], t: float) -> float:
        # a separable profile is shared between branches; take whichever defines it
        for branch in (self.interior, self.exterior):
            coeff = branch.coeffs.get((comp, beta))
            if coeff is not None and coeff.profile is not None:
                return coeff.time_factor(t)
        return 1.0

    # -- evaluation ----------------------------------------------------------

    def evaluate_fields(self, t: float, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """G on the whole grid; u shape (N, nx, ny), v shape (M, nx, ny)."""
        du = u - self.u0.reshape(-1, 1, 1)
        out = np.zeros_like(u)
        for comp, beta in self._keys():
            D = self.coefficient_field(comp, beta) * self._time_factor(comp, beta, t)
            term = D / _beta_factorial(beta)
            for pos, exp in enumerate(beta):
                if exp == 0:
                    continue
                var = du[pos] if pos < self.n_chemicals else v[pos - self.n_chemicals]
                term = term * var ** exp
            out[comp] += term
        return out

    def variation_source(self, t: float, z1: np.ndarray,
                         z2: Optional[np.ndarray] = None, order: int = 2) -> np.ndarray:
        """Exact eps-derivative of G along a perturbation path.

        order=2 returns the Hessian form sum_{a,b} G_ab z1_a z1_b (cross
        terms doubled); order=3 additionally needs z2 (the second-order
        fields) and returns the full third derivative with vanishing first
        derivatives: sum G_abc z1^3-form + 3 sum G_ab z1_a z2_b.
        """
        if order == 2:
            return self._hessian_bilinear(t, z1, z1)
        if order != 3:
            raise ReactionError("variation_source supports orders 2 and 3")
        if z2 is None:
            raise ReactionError("third-order variation needs the second-order fields")
        out = 3.0 * self._hessian_sym_bilinear(t, z1, z2)
        for comp, beta in self._keys():
            if sum(beta) != 3:
                continue
            D = self.coefficient_field(comp, beta) * self._time_factor(comp, beta, t)
            term = D * (6.0 / _beta_factorial(beta))
            for pos, exp in enumerate(beta):
                if exp:
                    term = term * z1[pos] ** exp
            out[comp] += term
        return out

    def _hessian_bilinear(self, t, za, zb):
        out = np.zeros((self.n_chemicals,) + za.shape[1:])
        for comp, beta in self._keys():
            if sum(beta) != 2:
                continue
            D = self.coefficient_field(comp, beta) * self._time_factor(comp, beta, t)
            nz = [pos for pos, exp in enumerate(beta) if exp]
            if len(nz) == 1:
                out[comp] += D * za[nz[0]] * zb[nz[0]]
            else:
                a, b = nz
                out[comp] += D * (za[a] * zb[b] + za[b] * zb[a])
        return out

    def _hessian_sym_bilinear(self, t, za, zb):
        # symmetric in the pair: used where d^3/deps^3 produces 3 G_ab (z1 z2)_sym
        out = np.zeros((self.n_chemicals,) + za.shape[1:])
        for comp, beta in self._keys():
            if sum(beta) != 2:
                continue
            D = self.coefficient_field(comp, beta) * self._time_factor(comp, beta, t)
            nz = [pos for pos, exp in enumerate(beta) if exp]
            if len(nz) == 1:
                out[comp] += D * za[nz[0]] * zb[nz[0]]
            else:
                a, b = nz
                out[comp] += 0.5 * D * (za[a] * zb[b] + za[b] * zb[a]
                                        + zb[a] * za[b] + zb[b] * za[a])
        return out


# ---------------------------------------------------------------------------
# Module operations
# ---------------------------------------------------------------------------

def eval_reaction(r, x, t, u, v) -> np.ndarray:
    """Pointwise reaction value; branch-selected for piecewise models.

    x is a point (2,) or arrays (x1, x2); u, v are state vectors (or arrays
    broadcast over x). Evaluation is one-sided: the interior branch applies
    exactly where the signed distance is <= 0.
    """
    if isinstance(r, TaylorReaction):
        xx, yy = np.asarray(x[0], dtype=float), np.asarray(x[1], dtype=float)
        return r.evaluate(xx, yy, t, np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    xx, yy = np.asarray(x[0], dtype=float), np.asarray(x[1], dtype=float)
    x0, x1, y0, y1 = r.grid.bounds
    tol = 1e-9 * max(x1 - x0, y1 - y0)
    if np.any(xx < x0 - tol) or np.any(xx > x1 + tol) or np.any(yy < y0 - tol) or np.any(yy > y1 + tol):
        raise ReactionError("evaluation point outside the domain")
    inside = r.inclusion.signed_distance(xx, yy) <= 0.0
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    inn = r.interior.evaluate(xx, yy, t, u, v)
    ext = r.exterior.evaluate(xx, yy, t, u, v)
    return np.where(inside, inn, ext)


def taylor_coefficient(r, component: int, multi_index, side: str = "exterior") -> Coefficient:
    """Stored derivative field; symmetric index spellings share storage."""
    if isinstance(r, TaylorReaction):
        return r.coefficient(component, multi_index)
    branch = {"exterior": r.exterior, "interior": r.interior}.get(side)
    if branch is None:
        raise ReactionError(f"side must be 'interior' or 'exterior', got {side!r}")
    return branch.coefficient(component, multi_index)


def jump_magnitude(r: PiecewiseReaction, point, component: int, multi_index) -> float:
    """|interior - exterior| coefficient value at the nearest interface point."""
    p = np.asarray(point, dtype=float)
    sd = float(r.inclusion.signed_distance(p[0], p[1]))
    cell = max(r.grid.hx, r.grid.hy)
    if abs(sd) > cell * (1 + 1e-9):
        raise ReactionError("point is farther than one cell from the interface")
    q = r.inclusion.project_to_interface(p)
    beta = parse_multi_index(multi_index, r.n_chemicals, r.n_prey)
    inn = r.interior.coeffs.get((component - 1, beta))
    ext = r.exterior.coeffs.get((component - 1, beta))
    iv = float(inn.spatial(q[0], q[1])) if inn is not None else 0.0
    ev = float(ext.spatial(q[0], q[1])) if ext is not None else 0.0
    return abs(iv - ev)


def check_admissibility(r: PiecewiseReaction, fd_step: float = 1e-6) -> AdmissibilityReport:
    """Verify the defining clauses of an admissible anomalous reaction."""
    N, M = r.n_chemicals, r.n_prey
    probe = np.array([0.5 * sum(r.grid.bounds[:2]), 0.5 * sum(r.grid.bounds[2:])])

    u0 = r.u0.copy()
    v0 = np.zeros(M)
    base_val = 0.0
    deriv_max = 0.0
    for branch in (r.exterior, r.interior):
        g0 = branch.evaluate(probe[0], probe[1], 0.0, u0, v0)
        base_val = max(base_val, float(np.max(np.abs(g0))))
        for pos in range(N + M):
            plus, minus = [], []
            for sign in (+1.0, -1.0):
                uu, vv = u0.copy(), v0.copy()
                if pos < N:
                    uu[pos] += sign * fd_step
                else:
                    vv[pos - N] += sign * fd_step
                g = branch.evaluate(probe[0], probe[1], 0.0, uu, vv)
                (plus if sign > 0 else minus).append(g)
            central = (plus[0] - minus[0]) / (2 * fd_step)
            deriv_max = max(deriv_max, float(np.max(np.abs(central))))
    # central differences cancel the quadratic terms; cubic leakage is O(step^2)
    first_ok = deriv_max <= 1e3 * fd_step ** 2 + 1e-12

    low_order_free = all(sum(beta) >= 2
                         for branch in (r.exterior, r.interior)
                         for (_, beta) in branch.coeffs)
    # exponent tuples are canonical storage, so symmetry cannot be violated
    symmetric = True
    base_nonneg = bool(np.all(u0 >= 0))

    keys = sorted({k for branch in (r.exterior, r.interior) for k in branch.coeffs})
    pts = r.inclusion.boundary_samples(256)
    max_jumps: dict[str, float] = {}
    for comp, beta in keys:
        inn = r.interior.coeffs.get((comp, beta))
        ext = r.exterior.coeffs.get((comp, beta))
        iv = inn.spatial(pts[:, 0], pts[:, 1]) if inn is not None else np.zeros(len(pts))
        ev = ext.spatial(pts[:, 0], pts[:, 1]) if ext is not None else np.zeros(len(pts))
        name = f"G{comp + 1}:" + format_multi_index(beta, N)
        max_jumps[name] = float(np.max(np.abs(iv - ev)))
    jump_present = any(vv > 0.0 for vv in max_jumps.values())

    return AdmissibilityReport(
        truncation_order=r.order,
        vanishes_at_base=base_val == 0.0,
        first_derivatives_vanish=first_ok,
        low_order_free=low_order_free,
        coefficients_symmetric=symmetric,
        base_nonnegative=base_nonneg,
        interface_jump_present=jump_present,
        max_jumps=max_jumps,
    )
