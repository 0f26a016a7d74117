"""Branching embedding inside the untouched boxes.

Generation 1 is a maximal 2^{-N}-separated subfamily W_1 of the untouched
level-N boxes.  Generation l+1 packs, inside each box of W_l, the children at
level (l+1)N that no set with diameter in [2^{-(l+1)N}, 2^{-lN}) touches.
Coarser sets are already excluded by the parent, so the offspring of distinct
parents are independent.  Survival to generation L gives nested closed boxes
inside the uncovered set down to resolution 2^{-LN}.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .boxes import UNTOUCHED, classify_frame
from .measure import expected_untouched, lemma_exponent, mu_A1, LOG2


def maximal_separated_subset(boxes, separation=None):
    """Greedy maximal packing in lexicographic order.

    Two closed boxes of one grid are at distance >= their side exactly when
    their indices differ by at least 2 along some axis, so a box is rejected
    iff it is a neighbour (Chebyshev index distance <= 1) of a chosen one.
    `separation` must equal the box side and only documents the rule.
    """
    boxes = np.asarray(boxes, dtype=np.int64)
    if boxes.size == 0:
        return boxes.reshape(0, boxes.shape[1] if boxes.ndim == 2 else 0)
    d = boxes.shape[1]
    order = np.lexsort(boxes.T[::-1])
    boxes = boxes[order]
    lo = boxes.min(axis=0) - 1
    shape = boxes.max(axis=0) - lo + 2
    if np.prod(shape.astype(float)) <= 1 << 26:
        blocked = np.zeros(tuple(shape), dtype=bool)
        rel = boxes - lo
        keep = np.zeros(boxes.shape[0], dtype=bool)
        sl = [None] * d
        for i, b in enumerate(rel):
            t = tuple(b)
            if blocked[t]:
                continue
            keep[i] = True
            for a in range(d):
                sl[a] = slice(b[a] - 1, b[a] + 2)
            blocked[tuple(sl)] = True
        return boxes[keep]
    # sparse fallback
    offs = np.stack(np.meshgrid(*[np.arange(-1, 2)] * d, indexing="ij"), -1).reshape(-1, d)
    taken = set()
    out = []
    for b in boxes:
        t = tuple(int(x) for x in b)
        if t in taken:
            continue
        out.append(b)
        taken.update(tuple(int(x) for x in row) for row in b + offs)
    return np.array(out, dtype=np.int64).reshape(-1, d)


@dataclass
class GenerationRecord:
    level: int                 # generation index l
    boxes: np.ndarray          # W_l, indices on the level lN grid
    offspring: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    # offspring[i] = Z_{l,i}: number of W_l boxes inside the i-th processed parent of W_{l-1}
    untouched: int = 0         # |m| before packing (summed over processed parents)
    processed_parents: int = 0
    truncated: bool = False    # parents beyond the cap were not expanded

    @property
    def Z(self):
        return int(self.boxes.shape[0])


def _untouched_children(process, parent, parent_level, N):
    origin = tuple(int(v) << N for v in parent)
    child_level = parent_level + N
    batches = process.batches_near(child_level, origin, 1 << N,
                                   range(parent_level + 1, child_level + 1))
    status = classify_frame(batches, child_level, origin, 1 << N)
    return np.argwhere(status == UNTOUCHED) + np.asarray(origin, dtype=np.int64)


def _first_generation(process, N):
    d = process.dim
    batches = process.batches_near(N, (0,) * d, 1 << N, range(1, N + 1))
    m = np.argwhere(classify_frame(batches, N, (0,) * d, 1 << N) == UNTOUCHED)
    return m, maximal_separated_subset(m)


def _check_depth(process, N, L):
    if N < 1 or L < 1:
        raise ValueError("N and L must be >= 1")
    if N * L > process.depth:
        raise ValueError(f"embedding needs depth N*L = {N * L} but the process has depth {process.depth}")


def run_embedding(process, N, L=6, max_parents=None):
    """Generations 1..L of the embedded branching process (breadth first).

    With `max_parents`, at most that many parents (lexicographically first)
    are expanded per generation; the record is then marked truncated.
    """
    _check_depth(process, N, L)
    m, w = _first_generation(process, N)
    records = [GenerationRecord(1, w, np.array([w.shape[0]]), m.shape[0], 1)]
    for l in range(1, L):
        parents = records[-1].boxes
        truncated = max_parents is not None and parents.shape[0] > max_parents
        if truncated:
            parents = parents[:max_parents]
        kids, counts, untouched = [], [], 0
        for p in parents:
            c = _untouched_children(process, p, l * N, N)
            untouched += c.shape[0]
            packed = maximal_separated_subset(c)
            kids.append(packed)
            counts.append(packed.shape[0])
        boxes = np.concatenate(kids) if kids else np.zeros((0, process.dim), np.int64)
        records.append(GenerationRecord(l + 1, boxes, np.array(counts, dtype=np.int64),
                                        untouched, int(parents.shape[0]), truncated))
        if boxes.shape[0] == 0:
            break
    return records


def embedding_survives(process, N, L=6):
    """Z_L > 0, decided depth first with early exit."""
    _check_depth(process, N, L)
    _, w = _first_generation(process, N)
    stack = [(1, b) for b in w[::-1]]
    while stack:
        l, b = stack.pop()
        if l == L:
            return True
        kids = maximal_separated_subset(_untouched_children(process, b, l * N, N))
        stack.extend((l + 1, k) for k in kids[::-1])
    return False


def survived(records, L):
    return len(records) >= L and records[L - 1].Z > 0


@dataclass
class GrowthEstimate:
    mean_offspring: float
    log2_mean: float
    se: float
    parents: int
    defined: bool
    note: str = ""


def growth_rate_estimate(records):
    """Mean offspring per parent over all expanded generations (with SE)."""
    counts = [r.offspring for r in records[1:] if r.processed_parents > 0]
    if not records or records[0].Z == 0:
        return GrowthEstimate(math.nan, math.nan, math.nan, 0, False, "extinct at generation 1")
    if not counts:
        return GrowthEstimate(math.nan, math.nan, math.nan, 0, False, "fewer than two generations")
    z = np.concatenate(counts).astype(float)
    mean = float(z.mean())
    se = float(z.std(ddof=1) / math.sqrt(z.size)) if z.size > 1 else math.nan
    return GrowthEstimate(mean, math.log2(mean) if mean > 0 else -math.inf, se, int(z.size), True)


def growth_bound(m, lam, eps, N):
    """Per-generation growth lower bound 2^{alpha N}, alpha = d - lam (mu + eps) / log 2."""
    return 2.0 ** (lemma_exponent(m, lam, eps) * N)


def choose_N(m, lam, eps, n_max=12, override=None):
    """Smallest N <= n_max with E|m_N| >= 3^d 2^{alpha N}; else the override.

    Returns (N, how) with how in {'criterion', 'override'}.
    """
    alpha = lemma_exponent(m, lam, eps)
    if alpha > 0:
        for N in range(1, n_max + 1):
            if expected_untouched(m, lam, N) >= 3 ** m.dim * 2.0 ** (alpha * N):
                return N, "criterion"
    if override is None:
        raise ValueError(f"no N <= {n_max} meets the packing criterion (alpha = {alpha:.4g}); "
                         "supply an override")
    return int(override), "override"


def max_admissible_eps(m, lam):
    """Supremum of eps with alpha > 0 (finite only below the critical intensity)."""
    return m.dim * LOG2 / lam - mu_A1(m) if lam > 0 else math.inf


def generation_rows(replicate, records):
    rows = []
    for r in records:
        mean = float(r.offspring.mean()) if r.level > 1 and r.offspring.size else ""
        rows.append({"replicate": replicate, "l": r.level, "Z_l": r.Z, "mean_offspring": mean})
    return rows


def generations_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["replicate", "l", "Z_l", "mean_offspring"], lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(row)
