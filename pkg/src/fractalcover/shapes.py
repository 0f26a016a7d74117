"""Shape templates and placed sets.

A template H has diameter 1 and is anchored at its center of mass, which sits
at the origin.  A placed set is G = rho * R_theta * H + x.  Templates carry the
geometric calculus the measure needs: volume, r-enlargement E(H, r), r-shrinkage
S(H, r) and the inner boundary layer [dH]^r = H minus S(H, r).

Balls and axis-aligned cubes have closed forms.  The Koch snowflake uses an
exact recursive point-in-polygon test and a KD-tree distance to the polygon
vertices.  The two pathological families (a union of boxes around rational
points, and the complement of a dyadic sieve) use pixel rasters of the signed
distance with explicit error brackets.

For the pathological families, `contains` is exact for the truncated set that
the sampler places, while volume and layer queries describe the limit set and
report a bracket that accounts for the truncation.
"""

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from . import rng

SQRT3 = math.sqrt(3.0)
SNOWFLAKE_LIMIT_AREA = 3.0 * SQRT3 / 10.0  # diameter 1


def unit_ball_volume(d):
    """v_d, the volume of the unit ball in R^d."""
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


def cube_dilation_volume(side, r, d):
    """Volume of an axis cube of the given side dilated by r (Steiner formula)."""
    r = np.asarray(r, dtype=float)
    return sum(math.comb(d, j) * side ** (d - j) * unit_ball_volume(j) * r ** j
               for j in range(d + 1))


def _check_points(q, dim):
    q = np.asarray(q, dtype=float)
    if q.ndim == 1:
        q = q[None, :]
    if q.shape[-1] != dim:
        raise ValueError(f"point dimension {q.shape[-1]} does not match shape dimension {dim}")
    return q


def _check_radius(r):
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("layer radius must be positive")
    return r


@dataclass(frozen=True)
class BoundaryLayerQuery:
    """A layer query: mode is 'enlarge', 'shrink' or 'layer'."""
    r: float
    mode: str = "layer"

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("layer radius must be positive")
        if self.mode not in ("enlarge", "shrink", "layer"):
            raise ValueError(f"unknown layer mode {self.mode!r}")


class ShapeTemplate:
    """Base class.  Subclasses fill in the geometry.

    Coordinates passed to `contains` and `signed_distance` are template
    coordinates: anchor at the origin, diameter 1.
    """

    family = "abstract"
    rotates = False
    analytic = True
    bounding_radius = 0.5  # every point of H lies within this distance of the anchor
    boundary_is_limit = True  # boundary_samples discretize the boundary of the limit set

    def __init__(self, dim):
        if dim < 1:
            raise ValueError("dimension must be >= 1")
        self.dim = int(dim)

    # identity ---------------------------------------------------------
    def describe(self):
        return {"family": self.family, "dim": self.dim}

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.describe().items() if k != "family")
        return f"{type(self).__name__}({args})"

    # volumes ----------------------------------------------------------
    def volume(self):
        raise NotImplementedError

    def volume_bracket(self):
        v = self.volume()
        return v, v

    @property
    def measure_volume(self):
        """Volume used by the measure (the limit set for truncated families)."""
        return self.volume()

    def enlarge_volume(self, r):
        raise NotImplementedError

    def shrink_volume(self, r):
        raise NotImplementedError

    def layer_volume(self, r):
        return self.measure_volume - self.shrink_volume(r)

    def layer_bracket(self, mode, r):
        """(lower, upper) for a layer query; equal for analytic families."""
        v = {"enlarge": self.enlarge_volume,
             "shrink": self.shrink_volume,
             "layer": self.layer_volume}[mode](r)
        return v, v

    # geometry ---------------------------------------------------------
    def contains(self, q):
        raise NotImplementedError

    def signed_distance(self, q):
        """(phi, err): phi > 0 inside, < 0 outside, |phi - true| <= err (scalar or per point)."""
        raise NotImplementedError

    def boundary_samples(self):
        """Deterministic discretization of the boundary, as an (m, d) array."""
        raise NotImplementedError

    def boundary_volume_bounds(self):
        """(lower, upper, reason) for the Lebesgue measure of the boundary."""
        return 0.0, 0.0, "piecewise smooth boundary"


# ----------------------------------------------------------------------
# balls and cubes


class Ball(ShapeTemplate):
    """Ball of diameter 1 centred at the origin, open or closed."""

    def __init__(self, dim=2, closed=True):
        super().__init__(dim)
        self.closed = bool(closed)
        self.family = "BallClosed" if self.closed else "BallOpen"
        self.radius = 0.5

    def describe(self):
        return {"family": self.family, "dim": self.dim}

    def volume(self):
        return unit_ball_volume(self.dim) * self.radius ** self.dim

    def enlarge_volume(self, r):
        r = _check_radius(r)
        return unit_ball_volume(self.dim) * (self.radius + r) ** self.dim

    def shrink_volume(self, r):
        r = _check_radius(r)
        return unit_ball_volume(self.dim) * np.maximum(self.radius - r, 0.0) ** self.dim

    def contains(self, q):
        q = _check_points(q, self.dim)
        r2 = np.einsum("ij,ij->i", q, q)
        return r2 <= 0.25 if self.closed else r2 < 0.25

    def signed_distance(self, q):
        q = _check_points(q, self.dim)
        return self.radius - np.sqrt(np.einsum("ij,ij->i", q, q)), 0.0

    def boundary_samples(self, count=10_000):
        d = self.dim
        if d == 1:
            return np.array([[-0.5], [0.5]])
        if d == 2:
            t = 2 * np.pi * np.arange(count) / count
            return 0.5 * np.column_stack([np.cos(t), np.sin(t)])
        g = np.random.default_rng(0).standard_normal((count * 2 ** (d - 2), d))
        return 0.5 * g / np.linalg.norm(g, axis=1, keepdims=True)


class Cube(ShapeTemplate):
    """Closed axis-aligned cube of diameter 1 (side 1/sqrt(d)) centred at the origin."""

    family = "Cube"

    def __init__(self, dim=2):
        super().__init__(dim)
        self.side = 1.0 / math.sqrt(dim)

    def volume(self):
        return self.side ** self.dim

    def enlarge_volume(self, r):
        return cube_dilation_volume(self.side, _check_radius(r), self.dim)

    def shrink_volume(self, r):
        r = _check_radius(r)
        return np.maximum(self.side - 2 * r, 0.0) ** self.dim

    def contains(self, q):
        q = _check_points(q, self.dim)
        return np.all(np.abs(q) <= self.side / 2, axis=1)

    def signed_distance(self, q):
        q = _check_points(q, self.dim)
        excess = np.abs(q) - self.side / 2
        outside = np.linalg.norm(np.maximum(excess, 0.0), axis=1)
        inside = -np.max(excess, axis=1)
        return np.where(outside > 0, -outside, inside), 0.0

    def boundary_samples(self, per_edge=400):
        d, h = self.dim, self.side / 2
        t = np.linspace(-h, h, per_edge)
        faces = []
        for axis in range(d):
            others = np.meshgrid(*([t] * (d - 1)), indexing="ij")
            pts = np.column_stack([o.ravel() for o in others]) if d > 1 else np.zeros((1, 0))
            for sign in (-h, h):
                faces.append(np.insert(pts, axis, sign, axis=1))
        return np.unique(np.vstack(faces), axis=0)


# ----------------------------------------------------------------------
# signed-distance rasters


class _Raster:
    """Signed distance sampled at pixel centres.

    `phi` has shape (n,)*d; pixel i covers origin + spacing*[i, i+1).  Every
    value is within `err` of the true signed distance at the pixel centre, so
    the true value anywhere in the pixel is within `slack` of it.
    """

    def __init__(self, phi, origin, spacing, err):
        self.phi = phi
        self.origin = np.asarray(origin, dtype=float)
        self.spacing = float(spacing)
        self.err = float(err)
        self.dim = phi.ndim
        self.slack = self.err + self.spacing * math.sqrt(self.dim) / 2
        self.sorted = np.sort(phi, axis=None)
        self.cell = self.spacing ** self.dim
        self.extent = self.origin + self.spacing * np.array(phi.shape)

    def volume_at_least(self, t):
        """Estimated volume of {phi >= t} inside the raster domain."""
        t = np.asarray(t, dtype=float)
        return (self.sorted.size - np.searchsorted(self.sorted, t, side="left")) * self.cell

    far_band = math.inf
    far_slack = 0.0

    def slack_at(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(np.abs(t) + self.slack < self.far_band, self.slack,
                        max(self.slack, self.far_slack))

    def bracket_at_least(self, t):
        t = np.asarray(t, dtype=float)
        e = self.slack_at(t)
        return self.volume_at_least(t + e), self.volume_at_least(t - e)

    def lookup(self, q):
        idx = np.floor((q - self.origin) / self.spacing).astype(np.int64)
        shape = np.array(self.phi.shape)
        ok = np.all((idx >= 0) & (idx < shape), axis=1)
        idx = np.clip(idx, 0, shape - 1)
        return self.phi[tuple(idx.T)], ok


def _by_radius(shape, r, fn):
    """Evaluate fn(raster, r) choosing the raster per radius (fine for small r)."""
    r = np.asarray(r, dtype=float)
    if r.ndim == 0:
        return fn(shape._raster_for(r), r)
    small = r <= 0.1
    parts = [(small, shape.raster()), (~small, shape._raster_for(r[~small]) if (~small).any() else None)]
    outs = []
    for mask, ras in parts:
        if mask.any():
            outs.append((mask, fn(ras, r[mask])))
    first = outs[0][1]
    if isinstance(first, tuple):
        res = tuple(np.empty(r.shape) for _ in first)
        for mask, val in outs:
            for k in range(len(res)):
                res[k][mask] = val[k]
        return res
    res = np.empty(r.shape)
    for mask, val in outs:
        res[mask] = val
    return res


# ----------------------------------------------------------------------
# Koch snowflake


def koch_vertices(iterations, radius=0.5):
    """Vertices (complex, counter-clockwise) of the iteration-K snowflake polygon.

    The base triangle has circumradius `radius` with a vertex at 90 degrees; the
    limit curve then has diameter 2*radius.
    """
    pts = radius * np.exp(1j * (np.pi / 2 + 2 * np.pi * np.arange(3) / 3))
    rot = np.exp(-1j * np.pi / 3)  # outward is to the right of travel
    for _ in range(iterations):
        a = pts
        v = (np.roll(pts, -1) - a) / 3
        pts = np.stack([a, a + v, a + v + v * rot, a + 2 * v], axis=1).ravel()
    return pts


def polygon_area_centroid(z):
    """Shoelace area and centroid of a simple polygon given as complex vertices."""
    x, y = z.real, z.imag
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = cross.sum() / 2
    cx = ((x + xn) * cross).sum() / (6 * area)
    cy = ((y + yn) * cross).sum() / (6 * area)
    return area, np.array([cx, cy])


# child segments of a Koch bump, in the frame where the parent segment is [0, 1]
_APEX = 0.5 + 1j * SQRT3 / 6
_CHILDREN = [(0.0, 1 / 3), (1 / 3, _APEX), (_APEX, 2 / 3), (2 / 3, 1.0)]


def _in_koch_triangle(z):
    """Closed bounding triangle of a Koch bump on [0, 1] (apex height sqrt(3)/6)."""
    x, y = z.real, z.imag
    return (y >= 0) & (SQRT3 * y <= x) & (SQRT3 * y <= 1 - x)


def _in_koch_bump(z, levels):
    """Membership in the region between [0, 1] and the level-K Koch curve."""
    inside = np.zeros(z.shape, dtype=bool)
    idx = np.flatnonzero(_in_koch_triangle(z))
    z = z[idx]
    for _ in range(levels):
        if idx.size == 0:
            break
        x, y = z.real, z.imag
        mid = (y >= 0) & (y <= SQRT3 * (x - 1 / 3)) & (y <= SQRT3 * (2 / 3 - x))
        inside[idx[mid]] = True
        keep_idx, keep_z = [], []
        rest = ~mid
        for s, e in _CHILDREN:
            w = (z - s) / (e - s)
            hit = rest & _in_koch_triangle(w)
            rest &= ~hit
            keep_idx.append(idx[hit])
            keep_z.append(w[hit])
        idx = np.concatenate(keep_idx)
        z = np.concatenate(keep_z)
    return inside


_NEAR_BAND = 0.06


class KochSnowflake(ShapeTemplate):
    """Iteration-K Koch snowflake polygon, diameter 1, centred at the origin.

    `volume()` is the polygon area; the measure uses the limit area 3*sqrt(3)/10,
    which differs by a factor 1 - (3/8)(4/9)^K.
    """

    family = "KochSnowflake"
    rotates = True
    analytic = False

    def __init__(self, iterations=8, raster_level=10):
        super().__init__(2)
        self.iterations = int(iterations)
        self.raster_level = int(raster_level)
        self.vertices = koch_vertices(self.iterations)
        tri = self.vertices[:: 4 ** self.iterations]
        self._edges = [(tri[i], tri[(i + 1) % 3]) for i in range(3)]
        self.edge_length = abs(self.vertices[1] - self.vertices[0])
        self._tree = None
        self._rasters = {}

    def describe(self):
        return {"family": self.family, "dim": 2, "iterations": self.iterations}

    def volume(self):
        return polygon_area_centroid(self.vertices)[0]

    def centroid(self):
        return polygon_area_centroid(self.vertices)[1]

    @staticmethod
    def area_at_iteration(k, diameter=1.0):
        """Closed-form area of the iteration-k polygon."""
        a0 = 3 * SQRT3 / 16 * diameter ** 2
        return a0 * (1 + 0.6 * (1 - (4 / 9) ** k))

    @property
    def measure_volume(self):
        return SNOWFLAKE_LIMIT_AREA

    def contains(self, q):
        q = _check_points(q, 2)
        z = q[:, 0] + 1j * q[:, 1]
        # local frames: edge a->b maps to [0, 1], outward side to +y
        frames = [np.conj((z - a) / (b - a)) for a, b in self._edges]
        in_tri = np.all([f.imag <= 0 for f in frames], axis=0)
        inside = in_tri.copy()
        for f in frames:
            cand = ~inside & (f.imag > 0)
            if cand.any():
                sel = np.flatnonzero(cand)
                inside[sel] = _in_koch_bump(f[sel], self.iterations)
        return inside

    def _kdtree(self):
        if self._tree is None:
            self._tree = cKDTree(np.column_stack([self.vertices.real, self.vertices.imag]))
        return self._tree

    def signed_distance(self, q):
        """Coarse raster values, refined by a bounded vertex search near the boundary.

        The error bound is returned per point."""
        q = _check_points(q, 2)
        ras = self.raster()
        phi, ok = ras.lookup(q)
        err = np.where(np.abs(phi) + ras.slack < ras.far_band, ras.slack, ras.far_slack)
        # outside the raster domain the snowflake lies between radii 1/4 and 1/2
        rad = np.hypot(q[:, 0], q[:, 1])
        phi = np.where(ok, phi, 0.375 - rad)
        err = np.where(ok, err, 0.125)
        near = np.flatnonzero(np.abs(phi) < 3 * err)
        if near.size:
            dist, _ = self._kdtree().query(q[near], distance_upper_bound=float(np.max(np.abs(phi[near]) + err[near])) + self.edge_length)
            # nearest vertex overestimates the distance to the boundary by at most half an edge
            inside = self.contains(q[near])
            phi[near] = np.where(inside, dist, -dist)
            err[near] = self.edge_length / 2
        return phi, err

    def boundary_samples(self):
        return np.column_stack([self.vertices.real, self.vertices.imag])

    def boundary_volume_bounds(self):
        return 0.0, 0.0, "limit curve has box dimension log 4 / log 3 < 2"

    def raster(self, level=None, pad=0.125):
        level = self.raster_level if level is None else int(level)
        key = (level, pad)
        if key not in self._rasters:
            h = 2.0 ** -level
            n = int(math.ceil((1 + 2 * pad) / h))
            origin = np.full(2, -0.5 - pad)
            c = origin[0] + h * (np.arange(n) + 0.5)
            xx, yy = np.meshgrid(c, c, indexing="ij")
            pts = np.column_stack([xx.ravel(), yy.ravel()])
            inside = self.contains(pts).reshape(n, n)
            # coarse distances from the pixel mask, refined near the boundary
            far = np.where(inside, ndimage.distance_transform_edt(inside),
                           -ndimage.distance_transform_edt(~inside)).ravel() * h
            near = np.flatnonzero(np.abs(far) < _NEAR_BAND + 2 * h)
            dist, _ = self._kdtree().query(pts[near], distance_upper_bound=_NEAR_BAND + 4 * h)
            phi = far.copy()
            ok = np.isfinite(dist)
            phi[near[ok]] = np.where(inside.ravel()[near[ok]], dist[ok], -dist[ok])
            ras = _Raster(phi.reshape(n, n), origin, h, self.edge_length / 2)
            # mask distances (used only beyond the near band) are good to a pixel diagonal
            ras.far_band = _NEAR_BAND
            ras.far_slack = h * math.sqrt(2) + ras.slack
            self._rasters[key] = ras
        return self._rasters[key]

    def _raster_for(self, r):
        r_max = float(np.max(r))
        if r_max <= 0.1:
            return self.raster()
        # coarse, wide raster for large enlargements
        return self.raster(level=7, pad=max(0.125, 2 ** math.ceil(math.log2(r_max + 0.05))))

    def enlarge_volume(self, r):
        r = _check_radius(r)
        return _by_radius(self, r, lambda ras, x: ras.volume_at_least(-x))

    def shrink_volume(self, r):
        r = _check_radius(r)
        return self.raster().volume_at_least(r)

    def layer_volume(self, r):
        r = _check_radius(r)
        ras = self.raster()
        return ras.volume_at_least(1e-300) - ras.volume_at_least(r)

    def layer_bracket(self, mode, r):
        r = _check_radius(r)
        if mode == "enlarge":
            return _by_radius(self, r, lambda ras, x: ras.bracket_at_least(-x))
        ras = self.raster()
        lo, hi = ras.bracket_at_least(r)
        if mode == "shrink":
            return lo, hi
        vlo, vhi = ras.bracket_at_least(1e-300)
        return np.maximum(vlo - hi, 0.0), vhi - lo


# ----------------------------------------------------------------------
# union of boxes around rational points


def rational_points(count, dim):
    """First `count` rational points of [0,1]^d, enumerated by common denominator.

    Points with denominator q are listed lexicographically; points already
    listed for a smaller denominator are skipped.
    """
    out, seen, q = [], set(), 1
    while len(out) < count:
        grid = np.array(np.meshgrid(*([np.arange(q + 1)] * dim), indexing="ij")).reshape(dim, -1).T
        for a in grid:
            p = tuple(Fraction(int(ai), q) for ai in a)
            if p not in seen:
                seen.add(p)
                out.append(p)
                if len(out) == count:
                    break
        q += 1
    return np.array([[float(c) for c in p] for p in out])


def _compressed_union(lo, hi):
    """Exact volume and centroid of a union of axis boxes via coordinate compression."""
    d = lo.shape[1]
    edges = [np.unique(np.concatenate([lo[:, a], hi[:, a]])) for a in range(d)]
    mids = [(e[:-1] + e[1:]) / 2 for e in edges]
    widths = [np.diff(e) for e in edges]
    grids = np.meshgrid(*mids, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    covered = np.zeros(pts.shape[0], dtype=bool)
    for l, h in zip(lo, hi):
        covered |= np.all((pts > l) & (pts < h), axis=1)
    w = np.ones(1)
    for wa in widths:
        w = np.multiply.outer(w, wa)
    w = w.ravel()
    vol = w[covered].sum()
    centroid = (pts[covered] * w[covered, None]).sum(axis=0) / vol
    return vol, centroid


def _box_distance(q, lo, hi):
    """Distance from points q (m, d) to each closed box (k, d) -> (m, k)."""
    gap = np.maximum(lo[None] - q[:, None], 0) + np.maximum(q[:, None] - hi[None], 0)
    return np.sqrt((gap ** 2).sum(axis=2))


class RationalBoxUnion(ShapeTemplate):
    """Union of open boxes Box(x_k, 2^{-k-1}), k = 1..k_max, around rational points.

    The infinite union is dense in [0,1]^d, so its closure contains the unit
    cube.  Enlargements are computed for that closure (cube plus boxes), while
    membership, shrinkage and inner layers use the truncated union.  The whole
    configuration is rescaled so that cube-plus-boxes has diameter 1 and the
    truncated union has its center of mass at the origin.
    """

    family = "RationalBoxUnion"
    analytic = False
    boundary_is_limit = False

    def __init__(self, dim=2, k_max=20, raster_level=10):
        if dim < 2:
            raise ValueError("the rational box union needs d >= 2")
        super().__init__(dim)
        self.k_max = int(k_max)
        self.raster_level = int(raster_level)
        centers = rational_points(self.k_max, dim)
        sides = 2.0 ** -(np.arange(1, self.k_max + 1) + 1)
        lo0 = centers - sides[:, None] / 2
        hi0 = centers + sides[:, None] / 2
        # diameter of the closure: truncated boxes plus the unit cube
        pts = np.vstack([_all_box_corners(lo0, hi0),
                         _all_box_corners(np.zeros((1, dim)), np.ones((1, dim)))])
        diam = np.max(np.linalg.norm(pts[:, None] - pts[None], axis=2))
        self.scale = 1.0 / diam
        vol0, com0 = _compressed_union(lo0, hi0)
        self.unscaled_volume = vol0
        self.offset = com0
        self.lo = (lo0 - com0) * self.scale
        self.hi = (hi0 - com0) * self.scale
        self.cube_lo = (np.zeros(dim) - com0) * self.scale
        self.cube_hi = (np.ones(dim) - com0) * self.scale
        allpts = np.vstack([_all_box_corners(self.lo, self.hi),
                            _all_box_corners(self.cube_lo[None], self.cube_hi[None])])
        self.bounding_radius = float(np.max(np.linalg.norm(allpts, axis=1)))
        self.tail_volume = sum(2.0 ** (-dim * (k + 1)) for k in range(self.k_max + 1, self.k_max + 60)) \
            * self.scale ** dim
        self._rasters = {}

    def describe(self):
        return {"family": self.family, "dim": self.dim, "k_max": self.k_max}

    def volume(self):
        return self.unscaled_volume * self.scale ** self.dim

    def boundary_volume_bounds(self):
        # the closure contains the cube while the open union has volume ~ 1/12 of it
        cube = self.scale ** self.dim
        vol = self.volume() + self.tail_volume
        return cube - vol, cube + vol - self.volume(), "closure contains the cube"

    def volume_bracket(self, level=12):
        """Fine-grid counting bracket: cells inside the union / cells meeting it."""
        n = 2 ** level
        h = 1.0 / n
        lo0 = self.lo / self.scale + self.offset
        hi0 = self.hi / self.scale + self.offset
        m = int(math.ceil((hi0.max() - lo0.min()) / h)) + 2
        base = math.floor(lo0.min() / h) - 1
        inner = np.zeros((m,) * self.dim, dtype=bool)
        outer = np.zeros((m,) * self.dim, dtype=bool)
        for l, u in zip(lo0, hi0):
            a_in = np.ceil(l / h - 1e-12).astype(int) - base
            b_in = np.floor(u / h + 1e-12).astype(int) - base
            a_out = np.floor(l / h).astype(int) - base
            b_out = np.ceil(u / h).astype(int) - base
            if np.all(b_in > a_in):
                inner[tuple(slice(a, b) for a, b in zip(a_in, b_in))] = True
            outer[tuple(slice(a, b) for a, b in zip(a_out, b_out))] = True
        c = h ** self.dim * self.scale ** self.dim
        return inner.sum() * c, outer.sum() * c

    def contains(self, q):
        q = _check_points(q, self.dim)
        out = np.zeros(q.shape[0], dtype=bool)
        for l, h in zip(self.lo, self.hi):
            out |= np.all((q > l) & (q < h), axis=1)
        return out

    def closure_distance(self, q):
        """Exact distance to the closure of the infinite union (cube plus boxes)."""
        q = _check_points(q, self.dim)
        lo = np.vstack([self.lo, self.cube_lo])
        hi = np.vstack([self.hi, self.cube_hi])
        return _box_distance(q, lo, hi).min(axis=1)

    def raster(self, level=None, pad=0.125):
        level = self.raster_level if level is None else int(level)
        key = (level, pad)
        if key not in self._rasters:
            if self.dim * level > 24:
                raise ValueError("raster too large for this dimension; lower raster_level")
            h = 2.0 ** -level
            lo = np.minimum(self.lo.min(axis=0), self.cube_lo) - pad
            hi = np.maximum(self.hi.max(axis=0), self.cube_hi) + pad
            n = np.ceil((hi - lo) / h).astype(int)
            axes = [lo[a] + h * (np.arange(n[a]) + 0.5) for a in range(self.dim)]
            pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
            inside = self.contains(pts)
            phi = np.empty(pts.shape[0])
            for s in range(0, pts.shape[0], 1 << 17):
                phi[s:s + (1 << 17)] = -self.closure_distance(pts[s:s + (1 << 17)])
            depth = ndimage.distance_transform_edt(inside.reshape(tuple(n))).ravel() * h
            phi[inside] = np.maximum(depth[inside] - h / 2, 0.0)
            # the inner distance is only resolved to the pixel diagonal
            self._rasters[key] = _Raster(phi.reshape(tuple(n)), lo, h, h * math.sqrt(self.dim))
        return self._rasters[key]

    def signed_distance(self, q):
        q = _check_points(q, self.dim)
        ras = self.raster()
        phi, ok = ras.lookup(q)
        inside = self.contains(q)
        outside = -self.closure_distance(q)
        phi = np.where(inside, np.maximum(phi, 0.0), outside)
        phi = np.where(ok | ~inside, phi, 0.0)
        return phi, ras.slack

    def _raster_for(self, r):
        r_max = float(np.max(r))
        if r_max <= 0.1:
            return self.raster()
        return self.raster(level=7, pad=max(0.125, 2 ** math.ceil(math.log2(r_max + 0.05))))

    def enlarge_volume(self, r):
        r = _check_radius(r)
        return _by_radius(self, r, lambda ras, x: ras.volume_at_least(-x))

    def shrink_volume(self, r):
        r = _check_radius(r)
        return self.raster().volume_at_least(r)

    def layer_volume(self, r):
        r = _check_radius(r)
        return self.volume() - self.shrink_volume(r)

    def layer_bracket(self, mode, r):
        r = _check_radius(r)
        if mode == "enlarge":
            return _by_radius(self, r, lambda ras, x: ras.bracket_at_least(-x))
        lo, hi = self.raster().bracket_at_least(r)
        if mode == "shrink":
            return lo, hi
        v = self.volume()
        return np.maximum(v - hi, 0.0), v - lo + self.tail_volume

    def boundary_samples(self, per_edge=64):
        """Points on the faces of the truncated boxes (a superset of the boundary)."""
        out = []
        for l, h in zip(self.lo, self.hi):
            side = h[0] - l[0]
            n = max(2, int(per_edge * side / (self.hi[0, 0] - self.lo[0, 0])) + 2)
            t = np.linspace(0, 1, n)
            for axis in range(self.dim):
                others = np.meshgrid(*([t] * (self.dim - 1)), indexing="ij")
                base = np.column_stack([o.ravel() for o in others])
                for s in (0.0, 1.0):
                    u = np.insert(base, axis, s, axis=1)
                    out.append(l + u * (h - l))
        return np.vstack(out)


def _all_box_corners(lo, hi):
    d = lo.shape[1]
    bits_ = np.array(np.meshgrid(*([[0, 1]] * d), indexing="ij")).reshape(d, -1).T
    return (lo[:, None, :] + bits_[None] * (hi - lo)[:, None, :]).reshape(-1, d)


# ----------------------------------------------------------------------
# complement of a dyadic sieve


def sieve_levels(dim, n_max, seed=0):
    """Boolean masks K_1 ... K_{n_max} of the nested dyadic sieve.

    K_n keeps ceil(2^{dn}/n) level-n boxes, at least one inside every box of
    K_{n-1}.  Children are ranked by index parity (even first) and then by a
    fixed hash, which gives the chequerboard at level 2.
    """
    masks = [np.ones((2,) * dim, dtype=bool)]
    key = rng.make_key(seed, 0x5EE7E)
    for n in range(2, n_max + 1):
        parent = masks[-1]
        cand = parent
        for a in range(dim):
            cand = np.repeat(cand, 2, axis=a)
        flat = np.flatnonzero(cand)
        idx = np.array(np.unravel_index(flat, cand.shape))
        parity = idx.sum(axis=0) % 2
        h = rng.bits(key, flat + (n << 40))
        par = np.ravel_multi_index(tuple(idx // 2), parent.shape)
        quota = -(-(2 ** (dim * n)) // n)
        order = np.lexsort((h, parity, par))
        first = np.ones(order.size, dtype=bool)
        first[1:] = par[order][1:] != par[order][:-1]
        must = order[first]
        rest = order[~first]
        rest = rest[np.lexsort((h[rest], parity[rest]))]
        chosen = np.concatenate([must, rest[: quota - must.size]])
        mask = np.zeros(cand.size, dtype=bool)
        mask[flat[chosen]] = True
        masks.append(mask.reshape(cand.shape))
    return masks


class SieveComplement(ShapeTemplate):
    """H = [0,1]^d minus the closed sieve K_n, rescaled by 1/sqrt(d).

    The sampler places the truncated set [0,1]^d minus K_{n_max}.  The limit
    set differs from it by K_{n_max} minus a null set, so its volume is that of
    the full cube and its enlargements are those of the cube.  Shrinkage uses a
    raster of the truncated set at the level-n_max pixel grid and is bracketed
    for the limit set.
    """

    family = "SieveComplement"
    analytic = False
    boundary_is_limit = False

    def __init__(self, dim=2, n_max=12, seed=0):
        if dim < 2:
            raise ValueError("the sieve complement needs d >= 2")
        if dim * n_max > 26:
            raise ValueError("sieve grid too large; lower n_max")
        super().__init__(dim)
        self.n_max = int(n_max)
        self.seed = int(seed)
        self.masks = sieve_levels(dim, self.n_max, seed)
        self.sieve = self.masks[-1]
        self.scale = 1.0 / math.sqrt(dim)
        g = 2 ** self.n_max
        h = 1.0 / g
        kept = self.sieve.sum()
        self.sieve_volume = kept * h ** dim
        # centre of mass of cube minus the sieve boxes, exact over dyadic cells
        ks = np.array(np.nonzero(self.sieve), dtype=float)
        ksum = ((ks + 0.5) * h).sum(axis=1) * h ** dim
        self.offset = (0.5 - ksum) / (1.0 - self.sieve_volume)
        self.cube_lo = -self.offset * self.scale
        self.cube_hi = (1.0 - self.offset) * self.scale
        corners = _all_box_corners(self.cube_lo[None], self.cube_hi[None])
        self.bounding_radius = float(np.max(np.linalg.norm(corners, axis=1)))
        self._raster = None

    def describe(self):
        return {"family": self.family, "dim": self.dim, "n_max": self.n_max}

    def sieve_fraction(self, n):
        """L(K_n) in unscaled units."""
        return self.masks[n - 1].mean()

    def volume(self):
        return self.scale ** self.dim

    def boundary_volume_bounds(self):
        # the boundary is the limit sieve K, contained in every K_n
        return 0.0, float(self.sieve_fraction(self.n_max)) * self.scale ** self.dim, \
            "boundary lies in K_n, whose volume decays like 1/n"

    def truncated_volume(self):
        return (1.0 - self.sieve_volume) * self.scale ** self.dim

    def volume_bracket(self):
        return self.truncated_volume(), self.volume()

    def _unscaled(self, q):
        return q / self.scale + self.offset

    def contains(self, q):
        q = _check_points(q, self.dim)
        u = self._unscaled(q)
        in_cube = np.all((u >= 0) & (u <= 1), axis=1)
        g = 2 ** self.n_max
        idx = np.clip(np.floor(u * g).astype(np.int64), 0, g - 1)
        # K boxes are closed: points on a K box face are outside H
        in_k = self.sieve[tuple(idx.T)]
        frac = u * g - np.floor(u * g)
        on_grid = np.any((frac == 0) & (u > 0), axis=1)
        if on_grid.any():
            sel = np.flatnonzero(on_grid & in_cube & ~in_k)
            for i in sel:
                in_k[i] = self._touches_sieve(u[i], g)
        return in_cube & ~in_k

    def _touches_sieve(self, u, g):
        base = np.floor(u * g).astype(int)
        lows = [sorted({b, b - 1}) if (uu * g == b and b > 0) else [b] for uu, b in zip(u, base)]
        for combo in np.array(np.meshgrid(*lows, indexing="ij")).reshape(self.dim, -1).T:
            c = np.clip(combo, 0, g - 1)
            if self.sieve[tuple(c)]:
                return True
        return False

    def raster(self):
        """Signed distance of the truncated set at the level-n_max pixel grid."""
        if self._raster is None:
            g = 2 ** self.n_max
            h = self.scale / g
            inside = np.pad(~self.sieve, 1, constant_values=False)
            din = ndimage.distance_transform_edt(inside).astype(np.float32)
            dout = ndimage.distance_transform_edt(~inside).astype(np.float32)
            # EDT measures centre to centre; the nearest point of the other
            # pixel's closed square is between half a side and half a diagonal closer
            phi = np.where(inside, din - 0.5, -(dout - 0.5)).astype(np.float32) * h
            err = h * (math.sqrt(self.dim) - 1) / 2
            origin = self.cube_lo - h
            self._raster = _Raster(phi, origin, h, err)
        return self._raster

    def signed_distance(self, q):
        q = _check_points(q, self.dim)
        ras = self.raster()
        phi, ok = ras.lookup(q)
        inside = self.contains(q)
        cube = Cube(self.dim).signed_distance(q - (self.cube_lo + self.cube_hi) / 2)[0]
        phi = np.where(ok, phi, cube)
        phi = np.where(inside, np.abs(phi), -np.abs(phi)).astype(float)
        return phi, ras.slack

    def enlarge_volume(self, r):
        # the limit set is dense in the cube, so its enlargement is the cube's
        return cube_dilation_volume(self.scale, _check_radius(r), self.dim)

    def shrink_volume(self, r):
        lo, hi = self.layer_bracket("shrink", r)
        return (lo + hi) / 2

    def layer_volume(self, r):
        lo, hi = self.layer_bracket("layer", r)
        return (lo + hi) / 2

    def layer_bracket(self, mode, r):
        r = _check_radius(r)
        if mode == "enlarge":
            v = self.enlarge_volume(r)
            return v, v
        ras = self.raster()
        # distance to the limit boundary exceeds the truncated one by at most
        # the diagonal of a level-n_max box
        reach = self.scale * math.sqrt(self.dim) * 2.0 ** -self.n_max
        lo = ras.bracket_at_least(r)[0]
        hi = ras.bracket_at_least(r - reach)[1]
        hi = np.minimum(hi, self.truncated_volume())
        if mode == "shrink":
            return lo, hi
        v = self.volume()
        return v - hi, v - lo

    def boundary_samples(self):
        ras = self.raster()
        phi = ras.phi
        edge = (phi > 0) & (phi < ras.spacing)
        idx = np.array(np.nonzero(edge), dtype=float).T
        return ras.origin + ras.spacing * (idx + 0.5)


# ----------------------------------------------------------------------
# placed sets


def rotation_matrix(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class PlacedSet:
    """G = scale * R_angle * H + position."""
    template: ShapeTemplate
    scale: float
    position: tuple
    angle: float = 0.0

    def __post_init__(self):
        if not 0 < self.scale < 1:
            raise ValueError("placed sets have diameter in (0, 1)")
        if len(self.position) != self.template.dim:
            raise ValueError("position dimension does not match template")

    def to_template(self, p):
        p = _check_points(p, self.template.dim)
        q = (p - np.asarray(self.position, dtype=float)) / self.scale
        if self.template.rotates and self.angle != 0.0:
            q = q @ rotation_matrix(self.angle)  # applies R(-angle) to row vectors
        return q


def contains(shape, p):
    """Membership of point(s) p in a placed set (or a template at unit scale)."""
    if isinstance(shape, PlacedSet):
        out = shape.template.contains(shape.to_template(p))
    else:
        out = shape.contains(_check_points(p, shape.dim))
    return bool(out[0]) if np.ndim(p) == 1 else out


def volume(shape):
    if isinstance(shape, PlacedSet):
        return shape.scale ** shape.template.dim * shape.template.volume()
    return shape.volume()


def layer_volume(shape, query):
    """Volume of E(G, r), S(G, r) or [dG]^r for a template or placed set."""
    if not isinstance(query, BoundaryLayerQuery):
        query = BoundaryLayerQuery(*query)
    if isinstance(shape, PlacedSet):
        s, t = shape.scale, shape.template
        f = {"enlarge": t.enlarge_volume, "shrink": t.shrink_volume,
             "layer": lambda r: t.volume() - t.shrink_volume(r)}[query.mode]
        return float(s ** t.dim * f(query.r / s))
    t = shape
    if query.mode == "layer":
        return float(t.volume() - t.shrink_volume(query.r)) if t.analytic else float(t.layer_volume(query.r))
    return float({"enlarge": t.enlarge_volume, "shrink": t.shrink_volume}[query.mode](query.r))


def _greedy_cover(points, tree, r):
    covered = np.zeros(points.shape[0], dtype=bool)
    count = 0
    i = 0
    n = points.shape[0]
    while i < n:
        if not covered[i]:
            count += 1
            covered[tree.query_ball_point(points[i], r)] = True
        i += 1
    return count


_LADDER_STEPS = 8  # ladder points per octave


def covering_number(shape, r):
    """Upper bound on the number of r-balls needed to cover the boundary.

    A greedy cover of a fixed boundary discretization is computed at r rounded
    down to a geometric ladder (8 steps per octave), and the result is made
    monotone by taking the maximum over all coarser ladder radii.
    """
    if not r > 0:
        raise ValueError("radius must be positive")
    if r >= 1:
        return 1
    cache = shape.__dict__.setdefault("_cover_cache", {})
    if "points" not in cache:
        pts = np.asarray(shape.boundary_samples(), dtype=float)
        cache["points"] = pts
        cache["tree"] = cKDTree(pts)
    j = math.floor(-math.log2(r) * _LADDER_STEPS)  # r >= 2^{-j/8}
    best = 1
    for k in range(1, j + 1):
        if k not in cache:
            cache[k] = _greedy_cover(cache["points"], cache["tree"], 2.0 ** (-k / _LADDER_STEPS))
        best = max(best, cache[k])
    return best


def box_dimension(shape, r_lo=2.0 ** -10, r_hi=2.0 ** -4):
    """Least-squares slope of log N(r) against log(1/r) over dyadic radii."""
    ks = np.arange(round(-math.log2(r_hi)), round(-math.log2(r_lo)) + 1)
    n = np.array([covering_number(shape, 2.0 ** -k) for k in ks], dtype=float)
    slope = np.polyfit(ks * math.log(2), np.log(n), 1)[0]
    return float(slope)


def make_template(family, dim=2, **kw):
    """Template from a family name (as used in configs and the CLI)."""
    key = family.replace("_", "").replace("-", "").lower()
    if key in ("ball", "ballclosed", "closedball"):
        return Ball(dim, closed=True)
    if key in ("ballopen", "openball"):
        return Ball(dim, closed=False)
    if key == "cube":
        return Cube(dim)
    if key in ("snowflake", "kochsnowflake", "koch"):
        if dim != 2:
            raise ValueError("the Koch snowflake is planar (d = 2)")
        return KochSnowflake(kw.get("iterations", 8))
    if key in ("rational", "rationalboxunion"):
        return RationalBoxUnion(dim, kw.get("k_max", 20))
    if key in ("sieve", "sievecomplement"):
        return SieveComplement(dim, kw.get("n_max", 12))
    raise ValueError(f"unknown shape family {family!r}")
