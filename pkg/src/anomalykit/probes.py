"""Complex-exponential corner probes and their decay estimates.

The probe w = exp(tau (xi + i xi_perp) . (x - x_c)) is harmonic for any
orthonormal pair (xi, xi_perp) and decays like e^{-tau rho r} on a
truncated convex corner K_h whose directions satisfy
xi . (x - x_c)^ <= -rho. Integrals of w against radial weights then decay
at known powers of tau, which is what the apex tests exploit:

    integral_{K_h} |x - x_c|^alpha w dx  ~  C tau^{-(alpha + n)}.

Everything here is quadrature: adaptive Gauss-Legendre panels in the
radial variable (graded toward the apex, where the integrand
concentrates) under a fixed Gauss-Legendre angular rule, in the polar
coordinates the decay is aligned with. All routines are deterministic
pure functions of their arguments.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import gamma as gamma_fn

from anomalykit.geometry import Grid, TruncatedCorner, probe_direction


class ProbeError(RuntimeError):
    pass


@dataclass
class ProbeSpec:
    """A corner, its probe direction pair, and the tau ladder.

    Construction revalidates the decay condition -1 < xi . d <= -rho on a
    10^4-point sample of the corner, so downstream code can rely on the
    exponential decay without rechecking.
    """

    corner: TruncatedCorner
    xi: np.ndarray
    xi_perp: np.ndarray
    rho: float
    taus: tuple

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        self.xi_perp = np.asarray(self.xi_perp, dtype=float)
        if abs(self.xi @ self.xi - 1.0) > 1e-12 or abs(self.xi_perp @ self.xi_perp - 1.0) > 1e-12:
            raise ProbeError("xi and xi_perp must be unit vectors")
        if abs(self.xi @ self.xi_perp) > 1e-12:
            raise ProbeError("xi and xi_perp must be orthogonal")
        if self.rho <= 0:
            raise ProbeError("decay margin rho must be positive")
        taus = tuple(float(t) for t in self.taus)
        if len(taus) < 1 or any(t <= 0 for t in taus) or any(
                b <= a for a, b in zip(taus, taus[1:])):
            raise ProbeError("tau ladder must be positive and strictly increasing")
        self.taus = taus
        pts = self.corner.sample_points()
        rel = pts - self.corner.apex[None, :]
        r = np.linalg.norm(rel, axis=1)
        keep = r > 1e-12
        proj = (rel[keep] / r[keep, None]) @ self.xi
        if np.any(proj > -self.rho + 1e-9) or np.any(proj <= -1.0 - 1e-12):
            raise ProbeError("decay condition fails on the corner sample")

    @classmethod
    def from_corner(cls, corner: TruncatedCorner,
                    taus: Sequence[float] = (20.0, 40.0, 80.0, 160.0)) -> "ProbeSpec":
        xi, xi_perp, rho = probe_direction(corner)
        return cls(corner, xi, xi_perp, rho, tuple(taus))

    @property
    def n(self) -> int:
        return self.corner.dim


# ---------------------------------------------------------------------------
# Pointwise field
# ---------------------------------------------------------------------------

_EXP_CAP = 700.0  # largest safe argument of exp in double precision


def cgo_field(spec: ProbeSpec, tau: float, grid: Grid, clamp: bool = True,
              return_flag: bool = False):
    """The probe evaluated on grid nodes.

    Inside K_h the field decays, but on the rest of the domain the exponent
    can grow without bound, so evaluation is clamped to the ball B_h around
    the apex (zero outside) unless clamp=False. The optional flag reports
    whether unclamped evaluation would overflow somewhere on the grid.
    """
    X, Y = grid.nodes()
    zx = X - spec.corner.apex[0]
    zy = Y - spec.corner.apex[1]
    expo = tau * ((spec.xi[0] + 1j * spec.xi_perp[0]) * zx
                  + (spec.xi[1] + 1j * spec.xi_perp[1]) * zy)
    would_overflow = bool(np.max(expo.real) > _EXP_CAP)
    if clamp:
        mask = zx ** 2 + zy ** 2 <= spec.corner.h ** 2
        out = np.zeros_like(expo)
        out[mask] = np.exp(expo[mask])
    else:
        if would_overflow:
            raise ProbeError("unclamped probe evaluation overflows; keep clamp=True")
        out = np.exp(expo)
    if return_flag:
        return out, would_overflow
    return out


# ---------------------------------------------------------------------------
# Adaptive radial quadrature
# ---------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _graded_panels(a: float, b: float, levels: int) -> np.ndarray:
    """Breakpoints of [a, b] graded dyadically toward a."""
    fracs = [0.0] + [2.0 ** (k - levels) for k in range(levels + 1)]
    return a + (b - a) * np.asarray(fracs)


def _panel_quadrature(breaks: np.ndarray):
    mid = 0.5 * (breaks[1:] + breaks[:-1])
    half = 0.5 * (breaks[1:] - breaks[:-1])
    r = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return r, w


def radial_integral(c: np.ndarray, p: float, a: float, b: float,
                    rel_tol: float = 1e-12, max_levels: int = 20) -> np.ndarray:
    """integral_a^b r^p e^{c r} dr for an array of complex rates c.

    Panels are refined (graded toward a, where both the power weight and
    the exponential peak sit) until the whole batch changes by less than
    rel_tol relative to its largest entry.
    """
    c = np.atleast_1d(np.asarray(c, dtype=complex))
    prev = None
    for levels in range(2, max_levels + 1):
        r, w = _panel_quadrature(_graded_panels(a, b, levels))
        vals = np.exp(np.multiply.outer(c, r)) @ (np.power(r, p) * w)
        if prev is not None:
            scale = max(float(np.max(np.abs(vals))), 1e-300)
            if float(np.max(np.abs(vals - prev))) <= rel_tol * scale:
                return vals
        prev = vals
    raise ProbeError(f"radial quadrature did not settle within {max_levels} levels")


def _angular_rule(corner: TruncatedCorner, n_angular: int):
    """Unit directions, outward cap weights (solid-angle measure)."""
    x, w = np.polynomial.legendre.leggauss(n_angular)
    if corner.dim == 2:
        lo, hi = corner.angle_lo, corner.angle_hi
        ang = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x
        wts = 0.5 * (hi - lo) * w
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return dirs, wts
    (t1l, t1h), (t2l, t2h) = corner.box
    t1 = 0.5 * (t1l + t1h) + 0.5 * (t1h - t1l) * x
    w1 = 0.5 * (t1h - t1l) * w
    t2 = 0.5 * (t2l + t2h) + 0.5 * (t2h - t2l) * x
    w2 = 0.5 * (t2h - t2l) * w
    T1, T2 = np.meshgrid(t1, t2, indexing="ij")
    dirs = np.stack([np.cos(T1), np.sin(T1) * np.cos(T2),
                     np.sin(T1) * np.sin(T2)], axis=-1).reshape(-1, 3)
    wts = (np.sin(T1) * np.outer(w1, w2)).ravel()
    return dirs, wts


def corner_integral(spec: ProbeSpec, tau: float, alpha: float = 0.0,
                    n_angular: int = 32) -> complex:
    """integral_{K_h} |x - x_c|^alpha w dx by polar-coordinate quadrature."""
    if alpha < 0:
        raise ProbeError("radial weight exponent alpha must be >= 0")
    corner = spec.corner
    dirs, wts = _angular_rule(corner, n_angular)
    psi = dirs @ spec.xi + 1j * (dirs @ spec.xi_perp)
    radial = radial_integral(tau * psi, alpha + corner.dim - 1, 0.0, corner.h)
    return complex(wts @ radial)


def weighted_corner_integral(corner: TruncatedCorner, func: Callable,
                             tau: float, xi: np.ndarray, xi_perp: np.ndarray,
                             n_angular: int = 32, n_radial_panels: int = 12) -> complex:
    """integral_{K_h} func(x) w dx for a pointwise residual function.

    func takes an (..., dim) array of points and returns values there. The
    radial rule is a fixed graded panel set (no adaptivity: func may be
    merely continuous, so the smooth-integrand stopping rule does not
    apply).
    """
    dirs, wts = _angular_rule(corner, n_angular)
    r, w = _panel_quadrature(_graded_panels(0.0, corner.h, n_radial_panels))
    pts = corner.apex[None, None, :] + r[None, :, None] * dirs[:, None, :]
    vals = np.asarray(func(pts), dtype=complex)
    psi = dirs @ xi + 1j * (dirs @ xi_perp)
    integrand = vals * np.exp(np.multiply.outer(tau * psi, r))
    radial = integrand @ (np.power(r, corner.dim - 1) * w)
    return complex(wts @ radial)


# ---------------------------------------------------------------------------
# Boundary norms
# ---------------------------------------------------------------------------

@dataclass
class BoundaryNorms:
    """Surface norms of the probe on the corner boundary.

    h1_norm and flux_norm cover the whole boundary (flat faces reach the
    apex, where |w| = 1, so they stay order one). The cap_* variants
    restrict to the spherical part, the piece the exponential bounds
    describe; the ratios divide the cap norms by those bound shapes:
    sqrt(2 tau^2 + 1) e^{-rho h tau} for h1 and tau e^{-rho h tau} for
    the flux.
    """

    tau: float
    h1_norm: float
    flux_norm: float
    cap_h1_norm: float
    cap_flux_norm: float
    h1_ratio: float
    flux_ratio: float


def _face_frames(corner: TruncatedCorner):
    """(direction-parametrization, outward normal, radial power) per flat face."""
    if corner.dim == 2:
        faces = []
        for ang, sgn in ((corner.angle_lo, -1.0), (corner.angle_hi, 1.0)):
            d = np.array([math.cos(ang), math.sin(ang)])
            nu = sgn * np.array([-d[1], d[0]])
            faces.append((d.reshape(1, 2), np.array([1.0]), nu, 0))
        return faces
    (t1l, t1h), (t2l, t2h) = corner.box
    x, w = np.polynomial.legendre.leggauss(32)
    faces = []
    for t1v, sgn in ((t1l, -1.0), (t1h, 1.0)):
        if math.sin(t1v) < 1e-14 and sgn < 0:
            continue  # degenerate polar-axis face has zero area
        t2 = 0.5 * (t2l + t2h) + 0.5 * (t2h - t2l) * x
        wts = 0.5 * (t2h - t2l) * w * math.sin(t1v)
        dirs = np.stack([np.full_like(t2, math.cos(t1v)),
                         math.sin(t1v) * np.cos(t2),
                         math.sin(t1v) * np.sin(t2)], axis=1)
        nus = sgn * np.stack([np.full_like(t2, -math.sin(t1v)),
                              math.cos(t1v) * np.cos(t2),
                              math.cos(t1v) * np.sin(t2)], axis=1)
        faces.append((dirs, wts, nus, 1))
    for t2v, sgn in ((t2l, -1.0), (t2h, 1.0)):
        t1 = 0.5 * (t1l + t1h) + 0.5 * (t1h - t1l) * x
        wts = 0.5 * (t1h - t1l) * w
        dirs = np.stack([np.cos(t1), np.sin(t1) * math.cos(t2v),
                         np.sin(t1) * math.sin(t2v)], axis=1)
        nu = sgn * np.array([0.0, -math.sin(t2v), math.cos(t2v)])
        nus = np.broadcast_to(nu, dirs.shape)
        faces.append((dirs, wts, nus, 1))
    return faces


def boundary_norm_estimates(spec: ProbeSpec, tau: float,
                            n_angular: int = 32) -> BoundaryNorms:
    """Quadrature of ||w||_{H1} and ||d_nu w||_{L2} over the corner boundary.

    |grad w| = sqrt(2) tau |w| exactly, so the H1 norm is
    sqrt(1 + 2 tau^2) times the L2 norm; the normal derivative carries the
    face-dependent factor |(xi + i xi_perp) . nu|.
    """
    corner = spec.corner
    h = corner.h
    flat_l2 = 0.0
    flat_flux = 0.0
    for dirs, wts, nus, rpow in _face_frames(corner):
        a = 2.0 * tau * (dirs @ spec.xi)
        rad = radial_integral(a, float(rpow), 0.0, h).real
        nfac = (np.atleast_2d(nus) @ spec.xi) ** 2 + (np.atleast_2d(nus) @ spec.xi_perp) ** 2
        flat_l2 += float(wts @ rad)
        flat_flux += float(wts @ (nfac.ravel() * rad))
    dirs, wts = _angular_rule(corner, n_angular)
    wcap = np.exp(2.0 * tau * h * (dirs @ spec.xi))
    nfac_cap = (dirs @ spec.xi) ** 2 + (dirs @ spec.xi_perp) ** 2
    cap_l2 = float(h ** (corner.dim - 1) * (wts @ wcap))
    cap_flux = float(h ** (corner.dim - 1) * (wts @ (nfac_cap * wcap)))

    sob = 1.0 + 2.0 * tau ** 2
    h1 = math.sqrt(sob * (flat_l2 + cap_l2))
    flux = tau * math.sqrt(flat_flux + cap_flux)
    cap_h1 = math.sqrt(sob * cap_l2)
    cap_fluxn = tau * math.sqrt(cap_flux)
    damp = math.exp(-spec.rho * h * tau)
    return BoundaryNorms(tau, h1, flux, cap_h1, cap_fluxn,
                         cap_h1 / (math.sqrt(sob) * damp),
                         cap_fluxn / (tau * damp))


# ---------------------------------------------------------------------------
# Laplace tail identity
# ---------------------------------------------------------------------------

@dataclass
class LaplaceTailResult:
    """Both sides of the truncated Laplace integral identity.

    lhs is the finite integral integral_0^delta r^alpha e^{-mu r} dr; rhs
    is Gamma(alpha+1)/mu^{alpha+1} minus the tail integral over
    (delta, inf). Iterating yields (lhs, rhs, residual).
    """

    lhs: complex
    rhs: complex
    residual: float
    tail: complex
    gamma_term: complex
    tail_bound: float
    bound_applies: bool
    bound_ok: bool

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.residual))


def laplace_tail_identity(alpha: float, mu: complex, delta: float) -> LaplaceTailResult:
    if alpha <= -1:
        raise ProbeError("the radial power must exceed -1 for integrability")
    mu = complex(mu)
    if mu.real <= 0:
        raise ProbeError("the rate mu must have positive real part")
    if delta <= 0:
        raise ProbeError("the split point delta must be positive")
    lhs = complex(radial_integral(np.array([-mu]), alpha, 0.0, delta)[0])
    cut = delta + 60.0 * (1.0 + alpha) / mu.real
    tail = complex(radial_integral(np.array([-mu]), alpha, delta, cut)[0])
    gamma_term = gamma_fn(alpha + 1.0) / np.power(mu, alpha + 1.0)
    rhs = gamma_term - tail
    residual = abs(lhs - rhs)
    applies = mu.real >= 2.0 * alpha / math.e
    bound = (2.0 / mu.real) * math.exp(-mu.real * delta / 2.0)
    return LaplaceTailResult(lhs, rhs, residual, tail, gamma_term, bound,
                             applies, (abs(tail) <= bound) if applies else True)


# ---------------------------------------------------------------------------
# Decay fits and the assembled probe run
# ---------------------------------------------------------------------------

@dataclass
class DecayFit:
    exponent: float
    constant: float
    r_squared: float

    def __iter__(self):
        return iter((self.exponent, self.constant, self.r_squared))


def asymptotic_fit(taus: Sequence[float], values: Sequence[complex]) -> DecayFit:
    """Least-squares power law |I| = C tau^s from log-log regression."""
    taus = np.asarray(taus, dtype=float)
    mags = np.abs(np.asarray(values, dtype=complex))
    if taus.size < 4:
        raise ProbeError("need at least 4 ladder points for a decay fit")
    if np.any(~np.isfinite(mags)) or np.any(mags == 0.0):
        raise ProbeError("decay fit needs finite nonzero integral values")
    lt, lm = np.log(taus), np.log(mags)
    slope, intercept = np.polyfit(lt, lm, 1)
    pred = slope * lt + intercept
    ss_res = float(np.sum((lm - pred) ** 2))
    ss_tot = float(np.sum((lm - lm.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(slope), float(math.exp(intercept)), r2)


def _decay_tolerance(alpha: float, n: int) -> float:
    if n == 2 and alpha == 0.0:
        return 0.05
    if n == 2 and alpha == 1.0:
        return 0.08
    return 0.1


@dataclass
class CornerProbeResult:
    """Everything one corner's tau ladder produced, with pass flags."""

    spec: ProbeSpec
    taus: tuple
    integrals: dict            # alpha -> complex ndarray over the ladder
    norms: list                # BoundaryNorms per tau
    fits: dict                 # alpha -> DecayFit
    flags: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        checked = [v for k, v in self.flags.items() if k != "sufficiently_large_tau"]
        return all(checked)

    def to_dict(self) -> dict:
        return {
            "dim": self.spec.n,
            "rho": self.spec.rho,
            "h": self.spec.corner.h,
            "taus": list(self.taus),
            "integrals": {str(a): [[v.real, v.imag] for v in vals]
                          for a, vals in self.integrals.items()},
            "fits": {str(a): {"exponent": f.exponent, "constant": f.constant,
                              "r_squared": f.r_squared}
                     for a, f in self.fits.items()},
            "boundary_norms": [{"tau": b.tau, "h1": b.h1_norm, "flux": b.flux_norm,
                                "cap_h1": b.cap_h1_norm, "cap_flux": b.cap_flux_norm,
                                "h1_ratio": b.h1_ratio, "flux_ratio": b.flux_ratio}
                               for b in self.norms],
            "flags": dict(self.flags),
            "passed": bool(self.passed),
        }


def run_probe(spec: ProbeSpec, alphas: Sequence[float] = (0.0,),
              n_angular: int = 32) -> CornerProbeResult:
    """Integrals, norms, fits, and estimate checks over the tau ladder."""
    n = spec.n
    integrals = {float(a): np.array([corner_integral(spec, t, a, n_angular)
                                     for t in spec.taus])
                 for a in alphas}
    norms = [boundary_norm_estimates(spec, t, n_angular) for t in spec.taus]
    fits = {a: asymptotic_fit(spec.taus, vals) for a, vals in integrals.items()}

    flags = {}
    for a, fit in fits.items():
        target = -(a + n)
        flags[f"decay_alpha_{a:g}"] = bool(abs(fit.exponent - target) <= _decay_tolerance(a, n))
    if 0.0 in fits:
        # the lower-bound constant comes from the top half of the ladder,
        # where the exponential remainder is negligible; a full-ladder fit
        # redistributes the smallest-tau remainder below the slack term
        half = len(spec.taus) // 2
        top_t = np.asarray(spec.taus[half:])
        top_v = np.abs(integrals[0.0][half:])
        C = math.exp(float(np.polyfit(np.log(top_t), np.log(top_v), 1)[1])) \
            if top_t.size >= 2 else fits[0.0].constant
        ok = True
        for t, val in zip(spec.taus, integrals[0.0]):
            # the exponential slack underflows quadrature accuracy at large
            # tau rho h, so a relative noise allowance keeps the check
            # decidable in floating point without masking a real decay gap
            floor = C * t ** (-n) * (1.0 - 1e-9) \
                - 10.0 * t ** (-1) * math.exp(-spec.rho * spec.corner.h * t / 2.0)
            ok = ok and (abs(val) >= floor)
        flags["lower_bound"] = bool(ok)
    h1r = [b.h1_ratio for b in norms]
    fxr = [b.flux_ratio for b in norms]
    flags["h1_ratio_monotone"] = bool(all(b <= a * (1 + 1e-12) for a, b in zip(h1r, h1r[1:])))
    flags["flux_ratio_monotone"] = bool(all(b <= a * (1 + 1e-12) for a, b in zip(fxr, fxr[1:])))
    flags["sufficiently_large_tau"] = bool(spec.taus[0] * spec.rho * spec.corner.h >= 8.0)
    return CornerProbeResult(spec, spec.taus, integrals, norms, fits, flags)


def write_probe_csv(result: CornerProbeResult, path, alpha: float = 0.0,
                    config_hash: str = "") -> None:
    """Ladder rows: tau, integral parts, magnitude, fit exponent so far."""
    vals = result.integrals[float(alpha)]
    with open(path, "w") as fh:
        fh.write("# format=anomalykit-probe-csv-1\n")
        fh.write(f"# config_hash={config_hash}\n")
        fh.write("tau,re,im,abs,exponent_so_far\n")
        for k, (t, v) in enumerate(zip(result.taus, vals)):
            if k >= 1:
                part = np.polyfit(np.log(result.taus[:k + 1]),
                                  np.log(np.abs(vals[:k + 1])), 1)[0]
                expo = repr(float(part))
            else:
                expo = ""
            fh.write(f"{float(t)!r},{float(v.real)!r},{float(v.imag)!r},"
                     f"{float(abs(v))!r},{expo}\n")


def write_probe_json(result: CornerProbeResult, path, config_hash: str = "") -> None:
    doc = result.to_dict()
    doc["config_hash"] = config_hash
    doc["format"] = "anomalykit-probe-1"
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
