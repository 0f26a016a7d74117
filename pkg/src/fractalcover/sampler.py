"""Poisson sampling of the truncated set process, stratified by dyadic band.

Band l holds sets with diameter in [2^{-l}, 2^{-l+1}).  Anchors of band-l sets
are generated cell by cell on the grid of side 2^{-l+1}: every cell gets a
Poisson number of anchors with mean lambda * w * (2^d - 1) / d, the same for
every band.  A set can only meet a region if its anchor lies in a cell within
one cell of the region, so the process is exact on any window without a
global margin, and any part of it can be generated on demand.

Each set also carries a uniform mark; the process at lambda' < lambda keeps
the sets with mark < lambda'/lambda.  Thinning is therefore a deterministic
coupling across intensities.

Coordinates handed to the box analysis are expressed in a frame (level k,
integer origin o): a point x maps to x * 2^k - o.  The integer parts are
combined exactly, which keeps the geometry accurate on deep grids.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import rng
from .measure import ScaleInvariantMeasure
from .shapes import PlacedSet

_STRIDE_EXTRA = 3  # scale, angle, mark after the d position coordinates


@dataclass(frozen=True)
class SampleConfig:
    """Everything that determines a realization.

    anchor_margin is the margin of the anchor region around the window.
    The default 'band' uses one band cell on each side (2^{-l+1} for band l),
    which is at least the diameter of any set in that band.
    """
    measure: ScaleInvariantMeasure
    intensity: float
    depth: int
    seed: int = 0
    replicate: int = 0
    window: tuple = None
    anchor_margin: object = "band"

    def __post_init__(self):
        if not self.intensity >= 0 or not math.isfinite(self.intensity):
            raise ValueError("intensity must be finite and >= 0")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        for t, _ in self.measure.atoms:
            if not t.measure_volume > 0 or not t.volume() > 0:
                raise ValueError(f"atom {t!r} has zero volume and cannot be sampled")
        if self.window is not None:
            lo, hi = (np.asarray(w, dtype=float) for w in self.window)
            if lo.shape != (self.dim,) or np.any(hi <= lo):
                raise ValueError("window must be (lower corner, upper corner) in R^d")
        if self.anchor_margin != "band" and not float(self.anchor_margin) >= 1.0:
            raise ValueError("anchor_margin must be 'band' or a number >= 1")

    @property
    def dim(self):
        return self.measure.dim

    @property
    def window_bounds(self):
        if self.window is None:
            return np.zeros(self.dim), np.ones(self.dim)
        return tuple(np.asarray(w, dtype=float) for w in self.window)

    def echo(self):
        lo, hi = self.window_bounds
        return {"measure": self.measure.describe(), "intensity": self.intensity,
                "depth": self.depth, "seed": self.seed, "replicate": self.replicate,
                "window": [lo.tolist(), hi.tolist()], "anchor_margin": self.anchor_margin}


def cell_mean(measure, lam, weight):
    """Poisson mean of anchors per band cell for one atom (band independent)."""
    d = measure.dim
    return lam * weight * (2.0 ** d - 1.0) / d


def _count_table(mean):
    if mean <= 0:
        return np.array([1.0])
    kmax = int(mean + 12 * math.sqrt(mean) + 40)
    return stats.poisson.cdf(np.arange(kmax + 1), mean)


def _cell_range(a, span, level, band):
    """Inclusive range of band cells whose anchors can reach [a, a+span] * 2^{-level}."""
    sh = level - (band - 1)
    if sh >= 0:
        return (a >> sh) - 1, -((-(a + span)) >> sh)
    f = 1 << (-sh)
    return a * f - 1, (a + span) * f


@dataclass
class SetBatch:
    """Sets of one atom, stored relative to their band cells."""
    template: object
    atom: int
    band: np.ndarray      # (m,)
    cell: np.ndarray      # (m, d) int64
    slot: np.ndarray      # (m,) draw index inside the cell
    offset: np.ndarray    # (m, d) position inside the cell, in [0, 1)
    scale_rel: np.ndarray  # (m,) diameter / 2^{-band}, in [1, 2)
    angle: np.ndarray
    mark: np.ndarray

    def __len__(self):
        return self.band.size

    def subset(self, keep):
        return SetBatch(self.template, self.atom, self.band[keep], self.cell[keep], self.slot[keep],
                        self.offset[keep], self.scale_rel[keep], self.angle[keep], self.mark[keep])

    @property
    def diameter(self):
        return self.scale_rel * np.exp2(-self.band.astype(float))

    @property
    def position(self):
        return (self.cell + self.offset) * np.exp2(1.0 - self.band.astype(float))[:, None]

    def in_frame(self, level, origin):
        """Anchors and diameters in units of 2^{-level}, relative to an integer
        origin (one per set, or shared)."""
        origin = np.broadcast_to(np.asarray(origin, dtype=np.int64), self.cell.shape)
        sh = level - (self.band.astype(np.int64) - 1)
        pos = np.empty(self.offset.shape)
        up = sh >= 0
        if up.any():
            f = np.left_shift(np.int64(1), sh[up])
            pos[up] = (self.cell[up] * f[:, None] - origin[up]) + self.offset[up] * f[:, None]
        if (~up).any():
            f = np.exp2(sh[~up].astype(float))
            down = np.left_shift(np.int64(1), -sh[~up])
            pos[~up] = ((self.cell[~up] - origin[~up] * down[:, None]) + self.offset[~up]) * f[:, None]
        diam = self.scale_rel * np.exp2((level - self.band).astype(float))
        return pos, diam

    def ids(self):
        return np.column_stack([self.band, self.cell, self.slot])


def _empty_batch(template, atom, d):
    return SetBatch(template, atom, np.zeros(0, np.int64), np.zeros((0, d), np.int64),
                    np.zeros(0, np.int64), np.zeros((0, d)), np.zeros(0), np.zeros(0), np.zeros(0))


def _concat(batches, template, atom, d):
    batches = [b for b in batches if len(b)]
    if not batches:
        return _empty_batch(template, atom, d)
    cat = lambda name: np.concatenate([getattr(b, name) for b in batches])
    return SetBatch(template, atom, cat("band"), cat("cell"), cat("slot"), cat("offset"),
                    cat("scale_rel"), cat("angle"), cat("mark"))


class LazyProcess:
    """The band-stratified Poisson process, generated on demand by cell.

    `intensity` is the sampling intensity; `level` (<= intensity) is the
    intensity currently in view, realised by thinning on the marks.
    """

    def __init__(self, cfg, level=None):
        self.cfg = cfg
        self.dim = cfg.dim
        self.depth = cfg.depth
        self.intensity = cfg.intensity
        self.level = cfg.intensity if level is None else float(level)
        if self.level > self.intensity + 1e-15 or self.level < 0:
            raise ValueError("thinning needs 0 <= lambda' <= lambda")
        self._atoms = []
        for i, (t, w) in enumerate(cfg.measure.atoms):
            key = rng.make_key(cfg.seed, cfg.replicate, i)
            self._atoms.append((t, w, key, _count_table(cell_mean(cfg.measure, cfg.intensity, w))))
        self._cache = {}

    # -- thinning ---------------------------------------------------------
    @property
    def keep_fraction(self):
        return 1.0 if self.intensity == 0 else self.level / self.intensity

    def thinned(self, lam):
        """View of the same realization at intensity lam <= current intensity."""
        if lam > self.level + 1e-15:
            raise ValueError("thinning needs lambda' <= lambda")
        out = LazyProcess.__new__(LazyProcess)
        out.__dict__.update(self.__dict__)
        out.level = float(lam)
        return out

    # -- generation -------------------------------------------------------
    def _generate(self, atom, bands, cells, with_owner=False):
        """All sets of one atom in the given (band, cell) pairs."""
        t, w, key, table = self._atoms[atom]
        d = self.dim
        if bands.size == 0 or self.intensity == 0:
            e = _empty_batch(t, atom, d)
            return (e, np.zeros(0, np.int64)) if with_owner else e
        k = rng.fold(key, bands)
        for a in range(d):
            k = rng.fold(k, cells[:, a])
        u0 = rng.uniform(k, 0)
        counts = np.searchsorted(table, u0, side="right")
        total = int(counts.sum())
        if total == 0:
            e = _empty_batch(t, atom, d)
            return (e, np.zeros(0, np.int64)) if with_owner else e
        owner = np.repeat(np.arange(bands.size), counts)
        slot = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        kk = k[owner]
        stride = d + _STRIDE_EXTRA
        base = 1 + slot * stride
        offset = np.column_stack([rng.uniform(kk, base + a) for a in range(d)])
        u_scale = rng.uniform(kk, base + d)
        scale_rel = (1.0 - u_scale * (1.0 - 2.0 ** -d)) ** (-1.0 / d)
        angle = 2 * np.pi * rng.uniform(kk, base + d + 1) if t.rotates else np.zeros(total)
        mark = rng.uniform(kk, base + d + 2)
        batch = SetBatch(t, atom, bands[owner], cells[owner], slot, offset, scale_rel, angle, mark)
        return (batch, owner) if with_owner else batch

    def _cells_for_region(self, level, origin, span, bands):
        """(band, cell) pairs whose anchors can reach a level-`level` region."""
        d = self.dim
        out_b, out_c = [], []
        for b in bands:
            axes = []
            for a in range(d):
                lo, hi = _cell_range(int(origin[a]), int(span), level, int(b))
                axes.append(np.arange(lo, hi + 1, dtype=np.int64))
            grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
            out_c.append(grid)
            out_b.append(np.full(grid.shape[0], b, dtype=np.int64))
        if not out_b:
            return np.zeros(0, np.int64), np.zeros((0, d), np.int64)
        return np.concatenate(out_b), np.concatenate(out_c)

    def batches_near(self, level, origin, span, bands):
        """Per-atom SetBatches of all sets (bands given) that can meet the region
        origin*2^{-level} + [0, span*2^{-level}]^d, after thinning."""
        bands = [int(b) for b in bands if 1 <= b <= self.depth]
        bs, cs = self._cells_for_region(level, origin, span, bands)
        out = []
        for i in range(len(self._atoms)):
            b = self._generate(i, bs, cs)
            if self.level < self.intensity:
                b = b.subset(b.mark < self.keep_fraction)
            out.append(b)
        return out

    def batches_for_cells(self, bands, cells):
        """Per atom: (batch, row of the (band, cell) pair each set came from)."""
        out = []
        for i in range(len(self._atoms)):
            b, owner = self._generate(i, bands, cells, with_owner=True)
            if self.level < self.intensity:
                keep = b.mark < self.keep_fraction
                b, owner = b.subset(keep), owner[keep]
            out.append((b, owner))
        return out

    def materialize(self):
        """Every set of bands 1..depth that can meet the configured window."""
        return sample_process(self.cfg).thin(self.level) if self.level < self.intensity \
            else sample_process(self.cfg)


@dataclass
class ProcessRealization:
    """A materialized realization: per-atom batches of sets meeting the window."""
    config: SampleConfig
    batches: list
    intensity: float
    counts: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.config.dim

    @property
    def depth(self):
        return self.config.depth

    def __len__(self):
        return sum(len(b) for b in self.batches)

    @property
    def placed(self):
        out = []
        for b in self.batches:
            pos, diam = b.position, b.diameter
            for i in range(len(b)):
                out.append(PlacedSet(b.template, float(diam[i]), tuple(pos[i].tolist()), float(b.angle[i])))
        return out

    @property
    def bands(self):
        """{band: list of PlacedSet}."""
        out = {l: [] for l in range(1, self.depth + 1)}
        for b in self.batches:
            pos, diam = b.position, b.diameter
            for i in range(len(b)):
                out[int(b.band[i])].append(
                    PlacedSet(b.template, float(diam[i]), tuple(pos[i].tolist()), float(b.angle[i])))
        return out

    def band_counts(self):
        c = np.zeros(self.depth + 1, dtype=np.int64)
        for b in self.batches:
            c += np.bincount(b.band, minlength=self.depth + 1)
        return {l: int(c[l]) for l in range(1, self.depth + 1)}

    def thin(self, lam):
        return thin_process(self, lam)

    def batches_near(self, level, origin, span, bands):
        """Same interface as LazyProcess: sets of the given bands near a region."""
        bands = set(int(b) for b in bands)
        if bands and max(bands) > self.depth:
            raise ValueError("requested band exceeds the realization depth")
        lo = np.asarray(origin, dtype=float) * 2.0 ** -level
        hi = lo + span * 2.0 ** -level
        out = []
        for b in self.batches:
            keep = np.isin(b.band, list(bands))
            if keep.any():
                pos = b.position
                reach = np.exp2(1.0 - b.band.astype(float))
                keep &= np.all((pos > lo - reach[:, None]) & (pos < hi + reach[:, None]), axis=1)
            out.append(b.subset(keep))
        return out


def sample_process(cfg):
    """Realize every set of bands 1..depth whose anchor cell can reach the window.

    This includes every set that meets the window (and some that do not).
    """
    lazy = LazyProcess(cfg)
    lo, hi = cfg.window_bounds
    d = cfg.dim
    batches = []
    for i, (t, w) in enumerate(cfg.measure.atoms):
        parts = []
        for band in range(1, cfg.depth + 1):
            side = 2.0 ** (1 - band)
            margin = side if cfg.anchor_margin == "band" else float(cfg.anchor_margin)
            axes = [np.arange(math.floor((lo[a] - margin) / side), math.ceil((hi[a] + margin) / side),
                              dtype=np.int64) for a in range(d)]
            cells = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
            parts.append(lazy._generate(i, np.full(cells.shape[0], band, np.int64), cells))
        batches.append(_concat(parts, t, i, d))
    real = ProcessRealization(cfg, batches, cfg.intensity)
    real.counts = real.band_counts()
    return real


def thin_process(r, lam):
    """Keep each set independently with probability lam / lambda (via its mark)."""
    if lam > r.intensity + 1e-15:
        raise ValueError("thinning needs lambda' <= lambda")
    if lam < 0:
        raise ValueError("intensity must be >= 0")
    ref = r.config.intensity
    frac = 1.0 if ref == 0 else lam / ref
    batches = [b.subset(b.mark < frac) if lam < r.intensity else b for b in r.batches]
    out = ProcessRealization(r.config, batches, lam)
    out.counts = out.band_counts()
    return out


def expected_band_count(cfg, band):
    """Exact Poisson mean of the number of band-`band` sets in the realization."""
    if not 1 <= band <= cfg.depth:
        raise ValueError("band outside 1..depth")
    lo, hi = cfg.window_bounds
    side = 2.0 ** (1 - band)
    margin = side if cfg.anchor_margin == "band" else float(cfg.anchor_margin)
    ncell = 1
    for a in range(cfg.dim):
        ncell *= math.ceil((hi[a] + margin) / side) - math.floor((lo[a] - margin) / side)
    per_cell = sum(cell_mean(cfg.measure, cfg.intensity, w) for _, w in cfg.measure.atoms)
    return per_cell * ncell


def dump_realization(r, path):
    """JSON lines: a header echoing the config, then one set per line."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"config": r.config.echo(), "intensity": r.intensity,
                             "counts": r.counts}, sort_keys=True) + "\n")
        for b in r.batches:
            pos, diam = b.position, b.diameter
            for i in range(len(b)):
                fh.write(json.dumps({"family": b.template.family, "band": int(b.band[i]),
                                     "rho": float(diam[i]), "theta": float(b.angle[i]),
                                     "x": pos[i].tolist()}) + "\n")


def load_realization_lines(path):
    """Read a dump back as (header, list of set dicts)."""
    with open(path) as fh:
        header = json.loads(fh.readline())
        rows = [json.loads(line) for line in fh if line.strip()]
    return header, rows


def realization_from_sets(placed, depth, measure=None):
    """Wrap explicit placed sets (all with one template) as a realization.

    Useful for engineered fixtures.  Each set lands in the band of its diameter.
    """
    from .measure import template_measure
    if not placed:
        raise ValueError("need at least one placed set (use intensity 0 for an empty realization)")
    t = placed[0].template
    if any(p.template is not t for p in placed):
        raise ValueError("all placed sets must share one template")
    d = t.dim
    diam = np.array([p.scale for p in placed])
    band = np.floor(-np.log2(diam)).astype(np.int64) + 1
    if np.any(band > depth):
        raise ValueError("a placed set is finer than the realization depth")
    side = np.exp2(1.0 - band)
    pos = np.array([p.position for p in placed], dtype=float)
    cell = np.floor(pos / side[:, None]).astype(np.int64)
    batch = SetBatch(t, 0, band, cell, np.arange(len(placed)), pos / side[:, None] - cell,
                     diam / np.exp2(-band.astype(float)), np.array([p.angle for p in placed]),
                     np.zeros(len(placed)))
    cfg = SampleConfig(measure or template_measure(t), 0.0, depth)
    real = ProcessRealization(cfg, [batch], 0.0)
    real.counts = real.band_counts()
    return real
