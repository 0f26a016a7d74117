"""Dyadic box classification: untouched boxes m_n, boxes not singly covered
M_n, band-restricted sub-box families and the minimal cover count L_n.

All geometry runs in a local frame: a level-k box with integer index i is
[i, i+1]^d, and the sets near it are converted exactly by the sampler.

Balls and axis-parallel cubes use exact distance arithmetic.  Other families
use the template signed distance with its error bound; their touch test can
only report too many touches and their containment test too few.
"""

from dataclasses import dataclass

import numpy as np

from .shapes import Ball, Cube

UNTOUCHED, TOUCHED, COVERED = 0, 1, 2
SUBGRID = 4  # sample points per axis for the conservative tests
_PAIR_CHUNK = 1 << 21


@dataclass(frozen=True)
class BoxGrid:
    """Level-n dyadic boxes of [0,1]^d, indexed by lower corner (lexicographic)."""
    level: int
    dim: int

    @property
    def side(self):
        return 2.0 ** -self.level

    @property
    def per_axis(self):
        return 1 << self.level

    @property
    def count(self):
        return self.per_axis ** self.dim

    def lower_corners(self):
        axes = [np.arange(self.per_axis)] * self.dim
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)


@dataclass
class BoxClassification:
    grid: BoxGrid
    status: np.ndarray  # shape (2^n,)*d with UNTOUCHED / TOUCHED / COVERED

    @property
    def untouched(self):
        return self.status == UNTOUCHED

    @property
    def not_covered(self):
        return self.status != COVERED

    @property
    def m_count(self):
        return int(self.untouched.sum())

    @property
    def M_count(self):
        return int(self.not_covered.sum())

    def m_boxes(self):
        return np.argwhere(self.untouched)

    def M_boxes(self):
        return np.argwhere(self.not_covered)


# ----------------------------------------------------------------------
# set/box relations in local units (box [L, L+1]^d)


def _ball_relations(closed, center, radius, lower):
    near = np.clip(center, lower, lower + 1.0) - center
    far = np.maximum(np.abs(center - lower), np.abs(center - lower - 1.0))
    dn = np.einsum("ij,ij->i", near, near)
    df = np.einsum("ij,ij->i", far, far)
    r2 = radius * radius
    if closed:
        return dn <= r2, df <= r2
    return dn < r2, df < r2


def _cube_relations(side, center, lower):
    gap = np.abs(center - (lower + 0.5))
    return np.all(gap <= (side + 1.0) / 2, axis=1), np.all(gap <= (side - 1.0) / 2, axis=1)


def _to_template(template, points, center, diam, angle):
    q = (points - center) / diam[:, None]
    if template.rotates:
        c, s = np.cos(angle), np.sin(angle)
        # R(-angle) applied to each row
        q = np.column_stack([c * q[:, 0] + s * q[:, 1], -s * q[:, 0] + c * q[:, 1]])
    return q


def _generic_relations(template, center, diam, angle, lower):
    d = template.dim
    half_diag = np.sqrt(d) / 2 / diam  # box half diagonal in template units
    q = _to_template(template, lower + 0.5, center, diam, angle)
    phi, err = template.signed_distance(q)
    touch = phi + err >= -half_diag
    contain = phi - err >= half_diag
    amb = np.flatnonzero(touch & ~contain)
    if amb.size:
        g = SUBGRID
        offs = (np.stack(np.meshgrid(*[np.arange(g)] * d, indexing="ij"), -1).reshape(-1, d) + 0.5) / g
        k = offs.shape[0]
        pts = (lower[amb][:, None, :] + offs[None]).reshape(-1, d)
        rep = np.repeat(amb, k)
        q = _to_template(template, pts, center[rep], diam[rep], angle[rep])
        phi, err = template.signed_distance(q)
        h = np.repeat(half_diag[amb], k) / g
        t_sub = (phi + err >= -h).reshape(-1, k).any(axis=1)
        c_sub = (phi - err >= h).reshape(-1, k).all(axis=1)
        touch[amb] = t_sub
        contain[amb] = c_sub
    return touch, contain & touch


def set_box_relations(template, center, diam, angle, lower):
    """(touch, contain) for paired rows: set i against the unit box at lower[i]."""
    if isinstance(template, Ball):
        return _ball_relations(template.closed, center, diam / 2, lower)
    if isinstance(template, Cube) and not template.rotates:
        return _cube_relations(diam * template.side, center, lower)
    return _generic_relations(template, center, diam, angle, lower)


def _point_inside(template, center, diam, angle, points):
    q = _to_template(template, points, center, diam, angle)
    return template.contains(q)


# ----------------------------------------------------------------------
# pair enumeration


def _index_ranges(center, reach, size, pad_hi=0):
    """Inclusive integer ranges of unit boxes [i, i+1] within `reach` of center."""
    reach = np.asarray(reach, dtype=float)[:, None]
    lo = np.maximum(np.ceil(center - reach) - 1, 0).astype(np.int64)
    hi = np.minimum(np.floor(center + reach), size - 1 + pad_hi).astype(np.int64)
    return lo, hi


def _ragged_pairs(lo, hi):
    """Expand per-row integer boxes [lo, hi] (inclusive, per axis) into pairs."""
    n_ax = np.maximum(hi - lo + 1, 0)
    total = np.prod(n_ax, axis=1)
    rows = np.repeat(np.arange(lo.shape[0]), total)
    t = np.arange(rows.size) - np.repeat(np.cumsum(total) - total, total)
    coords = np.empty((rows.size, lo.shape[1]), dtype=np.int64)
    for a in range(lo.shape[1] - 1, -1, -1):
        na = n_ax[rows, a]
        coords[:, a] = lo[rows, a] + t % na
        t = t // na
    return rows, coords


def _chunks(weights, limit=_PAIR_CHUNK):
    """Split row indices so that each chunk has at most ~limit total weight."""
    if weights.size == 0:
        return
    csum = np.cumsum(weights)
    start = 0
    while start < weights.size:
        base = csum[start - 1] if start else 0
        stop = int(np.searchsorted(csum, base + limit, side="right"))
        stop = max(stop, start + 1)
        yield start, stop
        start = stop


def _frame_sets(batches, level, origin):
    out = []
    for b in batches:
        if len(b):
            pos, diam = b.in_frame(level, origin)
            out.append((b.template, pos, diam, b.angle))
    return out


def classify_frame(batches, level, origin, span):
    """Status array (span,)*d of the boxes origin + [0, span)^d at `level`."""
    d = len(origin)
    status = np.zeros((span,) * d, dtype=np.int8)
    touched = status.reshape(-1)
    for template, pos, diam, angle in _frame_sets(batches, level, origin):
        lo, hi = _index_ranges(pos, diam * template.bounding_radius, span)
        weight = np.prod(np.maximum(hi - lo + 1, 0), axis=1)
        for s0, s1 in _chunks(weight):
            rows, coords = _ragged_pairs(lo[s0:s1], hi[s0:s1])
            if rows.size == 0:
                continue
            rows += s0
            touch, contain = set_box_relations(template, pos[rows], diam[rows], angle[rows],
                                               coords.astype(float))
            flat = np.ravel_multi_index(coords.T, status.shape)
            np.maximum.at(touched, flat[touch], TOUCHED)
            touched[flat[contain]] = COVERED
    return status


def classify_boxes(r, n):
    """Classify all 2^{dn} level-n boxes against the sets of bands 1..n."""
    if n < 1 or n > r.depth:
        raise ValueError(f"level {n} needs a realization of depth >= {n} (have {r.depth})")
    d = r.dim
    batches = r.batches_near(n, (0,) * d, 1 << n, range(1, n + 1))
    return BoxClassification(BoxGrid(n, d), classify_frame(batches, n, (0,) * d, 1 << n))


def subbox_untouched(r, parent, parent_level, N):
    """Children (level parent_level + N, global indices) of a parent box that
    are untouched by the sets of bands parent_level+1 .. parent_level+N."""
    parent = np.asarray(parent, dtype=np.int64)
    child_level = parent_level + N
    if child_level > r.depth:
        raise ValueError("child level exceeds the realization depth")
    origin = tuple(int(v) << N for v in parent)
    batches = r.batches_near(child_level, origin, 1 << N, range(parent_level + 1, child_level + 1))
    status = classify_frame(batches, child_level, origin, 1 << N)
    return np.argwhere(status == UNTOUCHED) + np.asarray(origin, dtype=np.int64)


# ----------------------------------------------------------------------
# sparse box lists (hierarchical refinement)


def _box_cells(boxes, level, band):
    """For each box, the band cells whose anchors can reach it: (box row, cell)."""
    sh = level - (band - 1)
    if sh >= 0:
        lo = (boxes >> sh) - 1
        hi = -((-(boxes + 1)) >> sh)
    else:
        f = 1 << (-sh)
        lo = boxes * f - 1
        hi = (boxes + 1) * f
    return _ragged_pairs(lo, hi)


def _unique_rows(a):
    a = np.ascontiguousarray(a)
    view = a.view(np.dtype((np.void, a.dtype.itemsize * a.shape[1]))).ravel()
    _, first, inv = np.unique(view, return_index=True, return_inverse=True)
    return a[first], inv.ravel()


def _sets_for_boxes(process, boxes, level, bands):
    """Yield (batch, set rows, box rows) pairs of candidate set/box incidences."""
    d = boxes.shape[1]
    if boxes.shape[0] == 0:
        return
    b_rows, b_cells, b_band = [], [], []
    for band in bands:
        rows, cells = _box_cells(boxes, level, band)
        b_rows.append(rows)
        b_cells.append(cells)
        b_band.append(np.full(rows.size, band, dtype=np.int64))
    rows = np.concatenate(b_rows)
    keys = np.column_stack([np.concatenate(b_band), np.concatenate(b_cells)])
    uniq, inv = _unique_rows(keys)
    for batch, cell_of_set in process.batches_for_cells(uniq[:, 0].copy(), uniq[:, 1:].copy()):
        if not len(batch):
            continue
        order = np.argsort(cell_of_set, kind="stable")
        counts = np.bincount(cell_of_set, minlength=uniq.shape[0])
        starts = np.cumsum(counts) - counts
        # incidences (box row, cell id) -> (box row, set)
        per = counts[inv]
        box_of_pair = np.repeat(rows, per)
        t = np.arange(box_of_pair.size) - np.repeat(np.cumsum(per) - per, per)
        set_of_pair = order[np.repeat(starts[inv], per) + t]
        yield batch, set_of_pair, box_of_pair


def classify_box_list(process, boxes, level, bands=None):
    """(touched, covered) for an explicit list of level-`level` boxes."""
    boxes = np.asarray(boxes, dtype=np.int64).reshape(-1, process.dim)
    if bands is None:
        bands = range(1, min(level, process.depth) + 1)
    touched = np.zeros(boxes.shape[0], dtype=bool)
    covered = np.zeros(boxes.shape[0], dtype=bool)
    for batch, srow, brow in _sets_for_boxes(process, boxes, level, bands):
        for s0, s1 in _chunks(np.ones(srow.size, dtype=np.int64)):
            sr, br = srow[s0:s1], brow[s0:s1]
            sub = batch.subset(sr)
            pos, diam = sub.in_frame(level, boxes[br])
            touch, contain = set_box_relations(batch.template, pos, diam, sub.angle,
                                               np.zeros_like(pos))
            touched[br[touch]] = True
            covered[br[contain]] = True
    return touched, covered


def _children(boxes, d):
    offs = np.stack(np.meshgrid(*[np.arange(2)] * d, indexing="ij"), -1).reshape(-1, d)
    return (2 * boxes[:, None, :] + offs[None]).reshape(-1, d)


def not_covered_counts(process, n_max):
    """|M_k| for k = 1..n_max, refining only children of boxes in M_{k-1}."""
    d = process.dim
    boxes = np.zeros((1, d), dtype=np.int64)
    out = []
    for k in range(1, n_max + 1):
        cand = _children(boxes, d)
        _, covered = classify_box_list(process, cand, k)
        boxes = cand[~covered]
        out.append(int(boxes.shape[0]))
    return out


def uncovered_points(process, boxes, level, bands, grid=SUBGRID):
    """For each box, whether one of grid^d cell-centred sample points lies
    outside every set of the given bands."""
    d = process.dim
    boxes = np.asarray(boxes, dtype=np.int64).reshape(-1, d)
    offs = (np.stack(np.meshgrid(*[np.arange(grid)] * d, indexing="ij"), -1).reshape(-1, d) + 0.5) / grid
    k = offs.shape[0]
    hit = np.zeros((boxes.shape[0], k), dtype=bool)
    for batch, srow, brow in _sets_for_boxes(process, boxes, level, bands):
        sub = batch.subset(srow)
        pos, diam = sub.in_frame(level, boxes[brow])
        rep = np.repeat(np.arange(srow.size), k)
        inside = _point_inside(batch.template, pos[rep], diam[rep], sub.angle[rep], np.tile(offs, (srow.size, 1)))
        inside = inside.reshape(-1, k)
        np.logical_or.at(hit, brow, inside)
    return ~hit.all(axis=1)


def uncovered_to_depth(process, n, batch_size=64):
    """Depth-first search for a level-n box in M_n holding a sample point that
    no set of bands 1..n covers (a witness that the truncated uncovered set is
    nonempty).  Returns the witness box index or None."""
    d = process.dim
    if n > process.depth:
        raise ValueError("search depth exceeds the process depth")
    stack = [(0, np.zeros((1, d), dtype=np.int64))]
    while stack:
        k, boxes = stack.pop()
        if k == n:
            ok = uncovered_points(process, boxes, n, range(1, n + 1))
            if ok.any():
                return boxes[np.argmax(ok)]
            continue
        cand = _children(boxes, d)
        _, covered = classify_box_list(process, cand, k + 1)
        keep = cand[~covered]
        for s in range(keep.shape[0] - batch_size, -batch_size, -batch_size):
            stack.append((k + 1, keep[max(s, 0):s + batch_size]))
    return None


# ----------------------------------------------------------------------
# minimal cover count


def _covered_lattice(batches, level, size):
    """Closed lattice {0..size}^d at `level`: True where some set contains the point."""
    d = None
    hit = None
    for b in batches:
        if not len(b):
            continue
        d = b.offset.shape[1]
        if hit is None:
            hit = np.zeros((size + 1,) * d, dtype=bool)
        flat_hit = hit.reshape(-1)
        pos, diam = b.in_frame(level, (0,) * d)
        reach = (diam * b.template.bounding_radius)[:, None]
        lo = np.maximum(np.ceil(pos - reach), 0).astype(np.int64)
        hi = np.minimum(np.floor(pos + reach), size).astype(np.int64)
        weight = np.prod(np.maximum(hi - lo + 1, 0), axis=1)
        for s0, s1 in _chunks(weight):
            rows, coords = _ragged_pairs(lo[s0:s1], hi[s0:s1])
            if rows.size == 0:
                continue
            rows += s0
            inside = _point_inside(b.template, pos[rows], diam[rows], b.angle[rows], coords.astype(float))
            flat_hit[np.ravel_multi_index(coords[inside].T, hit.shape)] = True
    return hit


def minimal_cover_count(r, n, grid=SUBGRID):
    """L_n with its sub-grid bracket: returns (value, lower, upper).

    Every point of a closed (grid+1)^d lattice per box is assigned to the
    lexicographically smallest box containing it; the value counts boxes that
    own an uncovered lattice point.  The upper end counts boxes with a sub-cell
    that no single set contains, which bounds every box meeting the uncovered
    set and never exceeds |M_n|.
    """
    if grid & (grid - 1):
        raise ValueError("grid must be a power of two")
    d = r.dim
    shift = int(np.log2(grid))
    fine = n + shift
    size = (1 << n) * grid
    batches = r.batches_near(fine, (0,) * d, size, range(1, n + 1))
    hit = _covered_lattice(batches, fine, size)
    if hit is None:
        hit = np.zeros((size + 1,) * d, dtype=bool)
    owner = [np.clip((np.arange(size + 1) - 1) // grid, 0, (1 << n) - 1)] * d
    free = np.argwhere(~hit)
    owners = np.column_stack([owner[a][free[:, a]] for a in range(d)]) if free.size else np.zeros((0, d), int)
    value = int(np.unique(np.ravel_multi_index(owners.T, ((1 << n),) * d)).size) if free.size else 0
    status = classify_frame(batches, fine, (0,) * d, size)
    sub_free = status != COVERED
    upper = int(sub_free.reshape(*[s for _ in range(d) for s in (1 << n, grid)])
                .any(axis=tuple(range(1, 2 * d, 2))).sum())
    return value, min(value, upper), upper


def counts_rows(replicate, n, cls, cover=None):
    """One row of the counts table."""
    lo, hi = (cover[1], cover[2]) if cover else ("", "")
    return {"replicate": replicate, "n": n, "m_n": cls.m_count, "M_n": cls.M_count,
            "L_lower": lo, "L_upper": hi}


def counts_csv(rows, path):
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["replicate", "n", "m_n", "M_n", "L_lower", "L_upper"],
                           lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(row)
