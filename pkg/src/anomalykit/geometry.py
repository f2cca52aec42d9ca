"""Grids, interior inclusions, and truncated corners.

The computational domain is an axis-aligned rectangle discretized by a
node-centered tensor grid. An anomaly is an open inclusion strictly inside
the domain, described by a signed distance function (negative inside). Three
shape families are supported: circles, simple polygons with counterclockwise
vertices, and star-shaped domains r(theta) given by a truncated Fourier
series around a center.

Corners are the contact points of the corner-probe argument: a truncated
corner K_h is the intersection of a convex cone with apex x_c and the ball
B_h(x_c). In 2-D a corner is an angular sector spanned by the two edge
directions of a polygon vertex; the cone axis v_c is the interior bisector
and the half-opening theta_c is half the interior angle, required to be
strictly less than pi/2 (strict convexity). In 3-D the corner is stored as
raw edge vectors and the quadrature code derives a spherical angular box
(polar axis along the first coordinate) from them; the octant of a ball is
the canonical example.

Probe directions follow the corner geometry: xi = -v_c so that
xi . (x - x_c)/|x - x_c| <= -rho with rho = cos(theta_c) on the whole
corner, which is the decay condition every corner estimate relies on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class GeometryError(ValueError):
    """Invalid grid, inclusion, or corner construction."""


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    """Node-centered tensor grid on a rectangle.

    Arrays over the grid are indexed [i, j] with i the x-index and j the
    y-index (numpy meshgrid 'ij' convention). Boundary nodes are enumerated
    counterclockwise starting at the lower-left corner; that ordering is the
    wire format for every exported trace.
    """

    nx: int
    ny: int
    bounds: tuple[float, float, float, float]  # (x0, x1, y0, y1)

    def __post_init__(self):
        if self.nx < 16 or self.ny < 16:
            raise GeometryError(f"grid must be at least 16x16, got {self.nx}x{self.ny}")
        x0, x1, y0, y1 = self.bounds
        if not (x1 > x0 and y1 > y0):
            raise GeometryError(f"degenerate bounds {self.bounds}")

    @property
    def hx(self) -> float:
        x0, x1, _, _ = self.bounds
        return (x1 - x0) / (self.nx - 1)

    @property
    def hy(self) -> float:
        _, _, y0, y1 = self.bounds
        return (y1 - y0) / (self.ny - 1)

    @property
    def xs(self) -> np.ndarray:
        x0, x1, _, _ = self.bounds
        return x0 + self.hx * np.arange(self.nx)

    @property
    def ys(self) -> np.ndarray:
        _, _, y0, y1 = self.bounds
        return y0 + self.hy * np.arange(self.ny)

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xs, self.ys, indexing="ij")

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        cx = self.xs[:-1] + 0.5 * self.hx
        cy = self.ys[:-1] + 0.5 * self.hy
        return np.meshgrid(cx, cy, indexing="ij")

    def node_volumes(self) -> np.ndarray:
        """Finite-volume weights: half cells along edges, quarter at corners."""
        wx = np.full(self.nx, self.hx)
        wx[[0, -1]] = 0.5 * self.hx
        wy = np.full(self.ny, self.hy)
        wy[[0, -1]] = 0.5 * self.hy
        return np.outer(wx, wy)

    def boundary_indices(self) -> list[tuple[int, int]]:
        """(i, j) pairs counterclockwise from the lower-left corner."""
        nx, ny = self.nx, self.ny
        idx = [(i, 0) for i in range(nx)]
        idx += [(nx - 1, j) for j in range(1, ny)]
        idx += [(i, ny - 1) for i in range(nx - 2, -1, -1)]
        idx += [(0, j) for j in range(ny - 2, 0, -1)]
        return idx

    def boundary_normals(self) -> np.ndarray:
        """Outward unit normals in boundary order; diagonal at corners."""
        nx, ny = self.nx, self.ny
        out = []
        s = 1.0 / math.sqrt(2.0)
        for i, j in self.boundary_indices():
            n = np.zeros(2)
            if j == 0:
                n += (0.0, -1.0)
            if j == ny - 1:
                n += (0.0, 1.0)
            if i == 0:
                n += (-1.0, 0.0)
            if i == nx - 1:
                n += (1.0, 0.0)
            if abs(n[0]) > 0 and abs(n[1]) > 0:
                n = n * s
            out.append(n)
        return np.array(out)

    def boundary_points(self) -> np.ndarray:
        xs, ys = self.xs, self.ys
        return np.array([(xs[i], ys[j]) for i, j in self.boundary_indices()])


def build_grid(nx: int, ny: int, bounds: Sequence[float]) -> Grid:
    return Grid(int(nx), int(ny), tuple(float(b) for b in bounds))


# ---------------------------------------------------------------------------
# Inclusions
# ---------------------------------------------------------------------------

@dataclass
class Inclusion:
    """Interior anomaly shape with a signed distance (negative inside).

    kind is one of 'circle', 'polygon', 'star'. The star radius is
    r(theta) = c0 + sum_k (a_k cos k theta + b_k sin k theta) with
    coefficients packed [c0, a1, b1, a2, b2, ...].
    """

    kind: str
    center: Optional[np.ndarray] = None
    radius: float = 0.0
    vertices: Optional[np.ndarray] = None
    fourier: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "circle":
            self.center = np.asarray(self.center, dtype=float)
            if self.radius <= 0:
                raise GeometryError("circle radius must be positive")
        elif self.kind == "polygon":
            v = np.asarray(self.vertices, dtype=float)
            if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
                raise GeometryError("polygon needs at least 3 planar vertices")
            area2 = float(np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1]))
            if area2 <= 0:
                raise GeometryError("polygon vertices must be counterclockwise")
            self.vertices = v
        elif self.kind == "star":
            self.center = np.asarray(self.center, dtype=float)
            c = np.asarray(self.fourier, dtype=float)
            if c.size < 1 or c[0] <= 0:
                raise GeometryError("star needs a positive mean radius coefficient")
            if c[0] - np.sum(np.abs(c[1:])) <= 0:
                raise GeometryError("star radius function may vanish; shrink the Fourier terms")
            self.fourier = c
        else:
            raise GeometryError(f"unknown inclusion kind {self.kind!r}")

    @classmethod
    def circle(cls, center: Sequence[float], radius: float) -> "Inclusion":
        return cls("circle", center=np.asarray(center, float), radius=radius)

    @classmethod
    def polygon(cls, vertices: Sequence[Sequence[float]]) -> "Inclusion":
        return cls("polygon", vertices=np.asarray(vertices, float))

    @classmethod
    def star(cls, center: Sequence[float], fourier: Sequence[float]) -> "Inclusion":
        return cls("star", center=np.asarray(center, float),
                   fourier=np.asarray(fourier, float))

    # -- signed distance -----------------------------------------------------

    def signed_distance(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "circle":
            return np.hypot(x - self.center[0], y - self.center[1]) - self.radius
        if self.kind == "star":
            dx, dy = x - self.center[0], y - self.center[1]
            r = np.hypot(dx, dy)
            return r - self._star_radius(np.arctan2(dy, dx))
        return self._polygon_sdf(x, y)

    def _star_radius(self, theta: np.ndarray) -> np.ndarray:
        c = self.fourier
        out = np.full_like(np.asarray(theta, dtype=float), c[0])
        for k in range(1, (len(c) + 1) // 2):
            a = c[2 * k - 1]
            b = c[2 * k] if 2 * k < len(c) else 0.0
            out = out + a * np.cos(k * theta) + b * np.sin(k * theta)
        return out

    def _polygon_sdf(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        p = np.stack([x, y], axis=-1).reshape(-1, 2)
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        dist2 = np.full(p.shape[0], np.inf)
        inside = np.zeros(p.shape[0], dtype=bool)
        for a, b in zip(v, w):
            e = b - a
            t = np.clip(((p - a) @ e) / (e @ e), 0.0, 1.0)
            d = p - (a + t[:, None] * e)
            dist2 = np.minimum(dist2, np.einsum("ij,ij->i", d, d))
            # even-odd crossing test against the edge
            cond = (a[1] > p[:, 1]) != (b[1] > p[:, 1])
            slope = np.where(cond, (p[:, 1] - a[1]) * e[0] - (p[:, 0] - a[0]) * e[1], 0.0)
            inside ^= cond & ((slope > 0) == (e[1] < 0))
        sd = np.sqrt(dist2)
        sd[inside] *= -1.0
        return sd.reshape(np.shape(x))

    # -- derived quantities --------------------------------------------------

    def normal(self, x: np.ndarray, y: np.ndarray, step: float = 1e-6):
        """Unit outward normal and |grad sd| from central differences."""
        gx = (self.signed_distance(x + step, y) - self.signed_distance(x - step, y)) / (2 * step)
        gy = (self.signed_distance(x, y + step) - self.signed_distance(x, y - step)) / (2 * step)
        norm = np.hypot(gx, gy)
        safe = np.where(norm < 1e-12, 1.0, norm)
        return gx / safe, gy / safe, norm

    def boundary_samples(self, n: int = 256) -> np.ndarray:
        """Points on the interface, evenly spread in the natural parameter."""
        if self.kind == "circle":
            t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
            return np.stack([self.center[0] + self.radius * np.cos(t),
                             self.center[1] + self.radius * np.sin(t)], axis=1)
        if self.kind == "star":
            t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
            r = self._star_radius(t)
            return np.stack([self.center[0] + r * np.cos(t),
                             self.center[1] + r * np.sin(t)], axis=1)
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        lengths = np.hypot(*(w - v).T)
        total = lengths.sum()
        pts = []
        for a, b, L in zip(v, w, lengths):
            m = max(1, int(round(n * L / total)))
            s = np.arange(m) / m
            pts.append(a[None, :] + s[:, None] * (b - a)[None, :])
        return np.concatenate(pts, axis=0)

    def project_to_interface(self, point: np.ndarray, iterations: int = 3) -> np.ndarray:
        """First-order projection p <- p - sd(p) * n(p), iterated."""
        p = np.asarray(point, dtype=float).copy()
        for _ in range(iterations):
            sd = float(self.signed_distance(p[0], p[1]))
            nx_, ny_, mag = self.normal(np.asarray(p[0]), np.asarray(p[1]))
            if float(mag) < 1e-12:
                break
            p = p - (sd / float(mag)) * np.array([float(nx_), float(ny_)])
        return p


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------

@dataclass
class IndicatorField:
    """Per-cell volume fractions of an inclusion on a grid."""

    grid: Grid
    inclusion: Inclusion
    fractions: np.ndarray                       # (nx-1, ny-1) in [0, 1]
    boundary_cells: list[tuple[int, int]] = field(default_factory=list)
    boundary_normals: Optional[np.ndarray] = None

    @property
    def area(self) -> float:
        return float(self.fractions.sum() * self.grid.hx * self.grid.hy)


def _square_coverage(t: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Fraction of a square covered by a half-plane.

    t is the signed distance from the square center to the line (positive on
    the covered side), a >= b >= 0 are the half-spreads |n_x| s/2, |n_y| s/2
    of the linear form over the square. Exact for straight interfaces.
    """
    full = a + b
    out = np.where(t >= full, 1.0, 0.0)
    mid = np.abs(t) <= (a - b)
    safe_a = np.where(a > 0, a, 1.0)
    out = np.where(mid, 0.5 + t / (2 * safe_a), out)
    corner = (~mid) & (np.abs(t) < full) & (b > 0)
    safe_ab = np.where(b > 0, 8 * a * b, 1.0)
    tri = (full - np.abs(t)) ** 2 / safe_ab
    out = np.where(corner & (t > 0), 1.0 - tri, out)
    out = np.where(corner & (t <= 0), tri, out)
    return out


def rasterize_inclusion(grid: Grid, inclusion: Inclusion, samples: int = 4) -> IndicatorField:
    """Volume fractions by subcell sampling of the signed distance.

    Each cell is probed on a samples x samples lattice; every probe carries a
    half-plane coverage estimate built from the signed distance and its
    gradient, so smooth shapes rasterize with an O(h^2) area error. Cells
    strictly inside get fraction 1, strictly outside 0.
    """
    x0, x1, y0, y1 = grid.bounds
    margin = 2.0 * max(grid.hx, grid.hy)
    bpts = inclusion.boundary_samples(512)
    if (bpts[:, 0].min() < x0 + margin or bpts[:, 0].max() > x1 - margin
            or bpts[:, 1].min() < y0 + margin or bpts[:, 1].max() > y1 - margin):
        raise GeometryError("inclusion touches the domain boundary margin")

    ncx, ncy = grid.nx - 1, grid.ny - 1
    s = samples
    sub_x = grid.hx * (np.arange(s) + 0.5) / s
    sub_y = grid.hy * (np.arange(s) + 0.5) / s
    X = (grid.xs[:-1, None, None, None] + sub_x[None, None, :, None])
    Y = (grid.ys[None, :-1, None, None] + sub_y[None, None, None, :])
    X = np.broadcast_to(X, (ncx, ncy, s, s))
    Y = np.broadcast_to(Y, (ncx, ncy, s, s))

    sd = inclusion.signed_distance(X, Y)
    side = min(grid.hx, grid.hy) / s
    band = np.abs(sd) <= side  # only near-interface probes need the coverage model
    frac = np.where(sd <= 0, 1.0, 0.0)
    if np.any(band):
        gx, gy, mag = inclusion.normal(X[band], Y[band])
        ok = mag > 1e-9
        t = np.where(ok, -sd[band] / np.where(ok, mag, 1.0), -np.sign(sd[band]) * (2 * side))
        ax = np.abs(gx) * (grid.hx / s) / 2
        ay = np.abs(gy) * (grid.hy / s) / 2
        hi = np.maximum(ax, ay)
        lo = np.minimum(ax, ay)
        frac[band] = _square_coverage(t, np.where(ok, hi, 1.0), np.where(ok, lo, 0.0))
    fractions = frac.mean(axis=(2, 3))

    cells = np.argwhere((fractions > 0.0) & (fractions < 1.0))
    boundary_cells = [tuple(c) for c in cells]
    if boundary_cells:
        cx, cy = grid.cell_centers()
        px = np.array([cx[i, j] for i, j in boundary_cells])
        py = np.array([cy[i, j] for i, j in boundary_cells])
        gx, gy, _ = inclusion.normal(px, py)
        normals = np.stack([gx, gy], axis=1)
    else:
        normals = np.zeros((0, 2))
    return IndicatorField(grid, inclusion, fractions, boundary_cells, normals)


# ---------------------------------------------------------------------------
# Corners
# ---------------------------------------------------------------------------

@dataclass
class TruncatedCorner:
    """Convex cone with apex x_c truncated by the ball B_h(x_c).

    In 2-D the corner is the sector between angle_lo and angle_hi. In 3-D it
    is a spherical box in the paper-style coordinates (polar angle from the
    first axis, azimuth in the plane of the second and third); theta ranges
    are stored in `box`. The cone axis v_c is the normalized sum of the edge
    directions and theta_c the largest angle any corner direction makes with
    it; strict convexity demands theta_c < pi/2.
    """

    apex: np.ndarray
    edges: np.ndarray           # (k, dim) unit vectors
    h: float
    dim: int
    axis: np.ndarray
    theta_c: float
    angle_lo: float = 0.0       # 2-D sector limits
    angle_hi: float = 0.0
    box: Optional[np.ndarray] = None  # 3-D: [[t1lo, t1hi], [t2lo, t2hi]]

    @property
    def rho(self) -> float:
        return math.cos(self.theta_c)

    def directions(self, n_per_angle: int = 100) -> np.ndarray:
        """Deterministic sample of unit directions spanning the corner."""
        if self.dim == 2:
            ang = np.linspace(self.angle_lo, self.angle_hi, n_per_angle)
            return np.stack([np.cos(ang), np.sin(ang)], axis=1)
        t1 = np.linspace(self.box[0, 0], self.box[0, 1], n_per_angle)
        t2 = np.linspace(self.box[1, 0], self.box[1, 1], n_per_angle)
        T1, T2 = np.meshgrid(t1, t2, indexing="ij")
        d = np.stack([np.cos(T1), np.sin(T1) * np.cos(T2), np.sin(T1) * np.sin(T2)], axis=-1)
        return d.reshape(-1, self.dim)

    def sample_points(self, n_radial: int = 100, n_angular: int = 100) -> np.ndarray:
        """At least 10^4 interior points of K_h (deterministic lattice)."""
        if self.dim == 3:
            n_radial, n_angular = 22, 22
        radii = self.h * (np.arange(1, n_radial + 1)) / n_radial
        dirs = self.directions(n_angular)
        pts = self.apex[None, None, :] + radii[:, None, None] * dirs[None, :, :]
        return pts.reshape(-1, self.dim)


def _corner_from_unit_edges(apex: np.ndarray, edges: np.ndarray, h: float) -> TruncatedCorner:
    dim = edges.shape[1]
    axis = edges.sum(axis=0)
    nrm = np.linalg.norm(axis)
    if nrm < 1e-12:
        raise GeometryError("corner edges cancel; no interior axis")
    axis = axis / nrm

    if dim == 2:
        if edges.shape[0] != 2:
            raise GeometryError("2-D corners take exactly two edges")
        cosang = float(np.clip(edges[0] @ edges[1], -1.0, 1.0))
        interior = math.acos(cosang)
        theta_c = 0.5 * interior
        if theta_c >= 0.5 * math.pi - 1e-12:
            raise GeometryError("corner is not strictly convex (half-angle >= pi/2)")
        beta = math.atan2(axis[1], axis[0])
        corner = TruncatedCorner(apex, edges, h, 2, axis, theta_c,
                                 angle_lo=beta - theta_c, angle_hi=beta + theta_c)
    else:
        t1 = np.arccos(np.clip(edges[:, 0], -1.0, 1.0))
        t2 = np.arctan2(edges[:, 2], edges[:, 1])
        t2 = np.where(np.abs(np.sin(t1)) < 1e-12, 0.0, t2)
        box = np.array([[t1.min(), t1.max()], [t2.min(), t2.max()]])
        spans = box[:, 1] - box[:, 0]
        if spans.max() > math.pi + 1e-12 or spans.sum() > 2 * math.pi + 1e-12:
            raise GeometryError("angular box exceeds the admissible spans")
        corner = TruncatedCorner(apex, edges, h, 3, axis, 0.0, box=box)
        dirs = corner.directions(17)
        theta_c = float(np.max(np.arccos(np.clip(dirs @ axis, -1.0, 1.0))))
        theta_c = max(theta_c, float(np.max(np.arccos(np.clip(edges @ axis, -1.0, 1.0)))))
        if theta_c >= 0.5 * math.pi - 1e-9:
            raise GeometryError("corner cone is not strictly convex (half-angle >= pi/2)")
        corner.theta_c = theta_c
    return corner


def corner_from_edges(apex: Sequence[float], edges: Sequence[Sequence[float]],
                      h: float) -> TruncatedCorner:
    apex = np.asarray(apex, dtype=float)
    e = np.asarray(edges, dtype=float)
    if h <= 0:
        raise GeometryError("truncation radius must be positive")
    norms = np.linalg.norm(e, axis=1)
    if np.any(norms < 1e-14):
        raise GeometryError("zero-length corner edge")
    return _corner_from_unit_edges(apex, e / norms[:, None], h)


def corner_from_polygon(inclusion: Inclusion, vertex: int,
                        h: Optional[float] = None) -> TruncatedCorner:
    """Truncated corner at a polygon vertex.

    The edge directions point from the vertex toward its two neighbors, the
    axis is the interior bisector, and theta_c is half the interior angle.
    Reflex vertices are rejected. The default truncation radius is half the
    shorter adjacent edge, the largest value the construction admits.
    """
    if inclusion.kind != "polygon":
        raise GeometryError("corner extraction needs a polygon inclusion")
    v = inclusion.vertices
    k = v.shape[0]
    i = vertex % k
    p, a, b = v[i], v[(i - 1) % k], v[(i + 1) % k]
    e1, e2 = a - p, b - p
    l1, l2 = np.linalg.norm(e1), np.linalg.norm(e2)
    e1, e2 = e1 / l1, e2 / l2
    cross = e2[0] * e1[1] - e2[1] * e1[0]
    if cross <= 1e-14:
        raise GeometryError(f"vertex {i} is reflex or degenerate; no convex corner")
    h_max = 0.5 * float(min(l1, l2))
    if h is None:
        h = h_max
    elif h > h_max + 1e-12:
        raise GeometryError(f"truncation radius {h} exceeds half the shorter edge {h_max}")
    return _corner_from_unit_edges(p.astype(float), np.stack([e1, e2]), float(h))


def sector_corner(apex: Sequence[float], axis_angle: float, half_angle: float,
                  h: float) -> TruncatedCorner:
    """Symmetric 2-D sector: axis at axis_angle, edges at +/- half_angle."""
    edges = [[math.cos(axis_angle - half_angle), math.sin(axis_angle - half_angle)],
             [math.cos(axis_angle + half_angle), math.sin(axis_angle + half_angle)]]
    return corner_from_edges(apex, edges, h)


def octant_corner(apex: Sequence[float] = (0.0, 0.0, 0.0), h: float = 0.7) -> TruncatedCorner:
    """First-octant corner of a ball, the 3-D benchmark geometry."""
    return corner_from_edges(apex, np.eye(3), h)


def probe_direction(corner: TruncatedCorner) -> tuple[np.ndarray, np.ndarray, float]:
    """Probe direction pair (xi, xi_perp) and the decay margin rho.

    xi = -v_c makes xi . (x - x_c)^ <= -rho = -cos(theta_c) on all of K_h;
    the returned pair is orthonormal, which keeps exp(tau (xi + i xi_perp) . z)
    harmonic. The decay condition is revalidated on a 10^4-point sample.
    """
    if corner.theta_c >= 0.5 * math.pi:
        raise GeometryError("no admissible probe direction: half-angle >= pi/2")
    xi = -corner.axis
    if corner.dim == 2:
        xi_perp = np.array([-xi[1], xi[0]])
    else:
        seed = np.array([1.0, 0.0, 0.0]) if abs(xi[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        xi_perp = seed - (seed @ xi) * xi
        xi_perp = xi_perp / np.linalg.norm(xi_perp)
    rho = corner.rho

    pts = corner.sample_points()
    rel = pts - corner.apex[None, :]
    r = np.linalg.norm(rel, axis=1)
    proj = (rel @ xi) / r
    if proj.max() > -rho + 1e-12 or proj.min() <= -1.0:
        raise GeometryError("decay condition violated on the corner sample")
    return xi, xi_perp, rho
