"""Experiment runners: measure validation, intensity sweeps, critical-point
bisection and the open/closed ball comparison.

Survival probes (both finite-depth proxies for a nonempty uncovered set):

* 'uncovered': some sample point of a level-n box (n = N*L) lies outside
  every set of diameter >= 2^{-n}.  Exactly monotone under thinning.
* 'embedding': the packed branching embedding reaches generation L.  Greedy
  packing of a larger untouched family can choose different boxes, so this
  probe is not guaranteed monotone along a coupled sweep.
"""

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import measure as ms
from .boxes import classify_boxes, uncovered_to_depth
from .branching import embedding_survives
from .sampler import LazyProcess, SampleConfig

PROBES = ("uncovered", "embedding")


class ConfigError(ValueError):
    """Inadmissible experiment configuration."""


class BracketError(RuntimeError):
    """The initial bracket does not straddle the survival threshold."""

    def __init__(self, msg, frequencies):
        super().__init__(msg)
        self.frequencies = frequencies


@dataclass
class ExperimentConfig:
    family: str = "ball"
    dim: int = 2
    params: dict = field(default_factory=dict)
    lam: float = None
    lam_grid: tuple = None
    n_max: int = 6
    N: int = 4
    L: int = 6
    replicates: int = 40
    seed: int = 0
    out: str = None
    tau: float = 0.05
    probe: str = "uncovered"
    bracket: tuple = (0.5, 2.0)  # multiples of the closed-form critical value
    steps: int = 8
    rel_tol: float = 0.02

    def __post_init__(self):
        for name in ("dim", "n_max", "N", "L", "replicates", "steps"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.probe not in PROBES:
            raise ConfigError(f"probe must be one of {PROBES}")
        if not 0 < self.tau < 1:
            raise ConfigError("tau must lie in (0, 1)")
        if self.lam is not None and not self.lam >= 0:
            raise ConfigError("lambda must be >= 0")
        if self.lam_grid is not None:
            g = list(self.lam_grid)
            if any(x < 0 for x in g) or g != sorted(g) or len(set(g)) != len(g):
                raise ConfigError("lambda grid must be strictly increasing and nonnegative")
        lo, hi = self.bracket
        if not 0 < lo < hi:
            raise ConfigError("bracket must satisfy 0 < lo < hi")

    @property
    def probe_depth(self):
        return self.N * self.L

    def build_measure(self):
        try:
            m = ms.make_measure(self.family, self.dim, **self.params)
        except (ValueError, TypeError, NotImplementedError) as exc:
            raise ConfigError(str(exc)) from exc
        if m.base.volume_mass <= 0:
            raise ConfigError("family has zero volume mass and cannot be sampled")
        return m

    def echo(self):
        out = asdict(self)
        out["lam_grid"] = list(self.lam_grid) if self.lam_grid is not None else None
        out["bracket"] = list(self.bracket)
        return out


def replicate_seed(cfg, r):
    """Per-replicate seeds are pre-assigned, so results do not depend on run order."""
    return cfg.seed * 1_000_003 + r


def _process(m, lam, depth, cfg, r):
    return LazyProcess(SampleConfig(m, lam, depth, seed=replicate_seed(cfg, r), replicate=r))


def survival_probe(process, cfg):
    if cfg.probe == "uncovered":
        return uncovered_to_depth(process, cfg.probe_depth) is not None
    return embedding_survives(process, cfg.N, cfg.L)


# ----------------------------------------------------------------------
# measure validation


def _check(name, passed, detail, method):
    return {"check": name, "passed": bool(passed), "detail": detail, "method": method}


def validate_measure(cfg, k_max=20, seq_max=None):
    """Measure-side report with a pass/fail line per invariant."""
    m = cfg.build_measure()
    analytic = all(t.analytic for t, _ in m.atoms)
    seq_max = seq_max or (20 if analytic else 12)
    mu = ms.mu_A1(m)
    lam_e = ms.lambda_e_closed(m)
    seq = ms.sequence_table(m, seq_max)
    a_rows = [r for r in seq if r[0] == "a"]
    b_rows = [r for r in seq if r[0] == "b"]
    ext = ms.extracond_trend(m, k_max)
    thin = ms.thinness_trend(m, k_max)
    checks = [_check("mass finite (locally finite measure)", math.isfinite(m.base.total_mass),
                     f"total mass {m.base.total_mass:.6g}", "analytic")]
    lo = hi = 0.0
    reasons = []
    for t, w in m.atoms:
        bl, bh, why = t.boundary_volume_bounds()
        lo, hi = lo + w * float(bl), hi + w * float(bh)
        reasons.append(why)
    if hi == 0.0:
        verdict = True
    elif lo > 0:
        verdict = False
    else:
        verdict = True  # vanishing upper bounds along the truncation sequence
    checks.append(_check("boundaries have zero volume", verdict,
                         f"boundary volume in [{lo:.4g}, {hi:.4g}]; " + "; ".join(reasons), "analytic"))
    checks.append(_check("positive volume mass", m.base.volume_mass > 0,
                         f"sum w L(H) = {m.base.volume_mass:.6g}", "analytic"))
    tol = 1e-9
    a_vals = np.array([r[2] for r in a_rows])
    b_vals = np.array([r[2] for r in b_rows])
    a_err = np.array([r[4] for r in a_rows]) + tol
    b_err = np.array([r[4] for r in b_rows]) + tol
    checks.append(_check("sandwich b <= mu <= a", bool(np.all(b_vals - b_err <= mu) and np.all(a_vals + a_err >= mu)),
                         f"n = 1..{seq_max}", a_rows[0][5]))
    checks.append(_check("a nonincreasing, b nondecreasing",
                         bool(np.all(np.diff(a_vals) <= a_err[1:] + a_err[:-1])
                              and np.all(np.diff(b_vals) >= -(b_err[1:] + b_err[:-1]))),
                         f"n = 1..{seq_max}", a_rows[0][5]))
    thin_dim, dims = ms.is_thin_by_dimension(m)
    return {
        "config": cfg.echo(),
        "measure": m.describe(),
        "mu_A1": {"value": mu, "method": "analytic" if analytic else "quadrature"},
        "lambda_e": {"value": lam_e, "method": "analytic"},
        "sequences": [{"sequence": r[0], "n": r[1], "value": r[2], "limit": r[3], "error": r[4],
                       "method": r[5]} for r in seq],
        "extracond": _trend_json(ext),
        "thinness": _trend_json(thin),
        "thin": {"value": bool(thin_dim) if thin_dim is not None else thin.verdict == "finite",
                 "by_dimension": thin_dim,
                 "boundary_dimensions": [float(x) for x in dims]},
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
    }


def _trend_json(t):
    return {"name": t.name, "k": list(t.k), "values": [float(v) for v in t.values],
            "lower": [float(v) for v in t.lower], "upper": [float(v) for v in t.upper],
            "method": t.method, "resolved_k": t.resolved_k, "verdict": t.verdict}


# ----------------------------------------------------------------------
# sweeps


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.nan
    return float(x.mean()), se


def scan_lambda(cfg):
    """Box counts and survival frequencies over a coupled intensity grid."""
    if cfg.lam_grid is None:
        raise ConfigError("scan needs a lambda grid")
    m = cfg.build_measure()
    grid = list(cfg.lam_grid)
    depth = max(cfg.n_max, cfg.probe_depth)
    counts = {(lam, n): ([], []) for lam in grid for n in range(1, cfg.n_max + 1)}
    alive = {lam: [] for lam in grid}
    for r in range(cfg.replicates):
        top = _process(m, grid[-1], depth, cfg, r)
        for lam in grid[::-1]:
            p = top.thinned(lam)
            for n in range(1, cfg.n_max + 1):
                c = classify_boxes(p, n)
                counts[(lam, n)][0].append(c.m_count)
                counts[(lam, n)][1].append(c.M_count)
            alive[lam].append(survival_probe(p, cfg))
    box_rows, surv_rows = [], []
    for lam in grid:
        for n in range(1, cfg.n_max + 1):
            mm, mse = _mean_se(counts[(lam, n)][0])
            MM, Mse = _mean_se(counts[(lam, n)][1])
            box_rows.append({"lambda": lam, "n": n, "mean_m": mm, "se_m": mse, "mean_M": MM, "se_M": Mse,
                             "exact_m": ms.expected_untouched(m, lam, n),
                             "exact_M": ms.expected_not_covered(m, lam, n) if _has_containment(m) else "",
                             "method": "monte-carlo"})
        f, se = _mean_se(alive[lam])
        surv_rows.append({"lambda": lam, "survival": f, "se": se, "replicates": cfg.replicates,
                          "probe": cfg.probe, "N": cfg.N, "L": cfg.L, "method": "monte-carlo"})
    return {"config": cfg.echo(), "boxes": box_rows, "survival": surv_rows}


def _has_containment(m):
    try:
        ms.containment_measure(m, 0.25, 0, 1)
        return True
    except NotImplementedError:
        return False


# ----------------------------------------------------------------------
# critical intensity


@dataclass
class CriticalEstimate:
    lam_hat: float
    lo: float
    hi: float
    frequencies: list          # [(lambda, survival frequency)] in probe order
    reference: float
    rel_error: float
    tau: float
    probe: str
    depth: int
    replicates: int
    evaluations: int = 0

    def as_json(self):
        return {"lambda_hat": self.lam_hat, "bracket": [self.lo, self.hi],
                "frequencies": [[float(a), float(b)] for a, b in self.frequencies],
                "reference": self.reference, "relative_error": self.rel_error,
                "tau": self.tau, "probe": self.probe, "depth": self.depth,
                "replicates": self.replicates, "evaluations": self.evaluations,
                "method": "monte-carlo bisection"}


class _SurvivalOracle:
    """Coupled replicates: survival at lambda uses the top process thinned.

    Under exact monotone coupling, a replicate known to survive at some
    lambda survives at every smaller one (and dies at every larger one once
    dead), so those evaluations are skipped.
    """

    def __init__(self, m, cfg, top):
        self.cfg = cfg
        self.procs = [_process(m, top, cfg.probe_depth, cfg, r) for r in range(cfg.replicates)]
        self.alive_at = [-math.inf] * cfg.replicates   # largest lambda known to survive
        self.dead_at = [math.inf] * cfg.replicates     # smallest lambda known to die
        self.monotone = cfg.probe == "uncovered"
        self.evaluations = 0

    def frequency(self, lam):
        hits = 0
        for i, p in enumerate(self.procs):
            if self.monotone and lam <= self.alive_at[i]:
                hits += 1
                continue
            if self.monotone and lam >= self.dead_at[i]:
                continue
            self.evaluations += 1
            ok = survival_probe(p.thinned(lam), self.cfg)
            if ok:
                hits += 1
                self.alive_at[i] = max(self.alive_at[i], lam)
            else:
                self.dead_at[i] = min(self.dead_at[i], lam)
        return hits / len(self.procs)


def estimate_critical(cfg, reference=None):
    """Bisection on the finite-depth survival frequency with threshold tau."""
    m = cfg.build_measure()
    ref = ms.lambda_e_closed(m) if reference is None else reference
    lo, hi = cfg.bracket[0] * ref, cfg.bracket[1] * ref
    oracle = _SurvivalOracle(m, cfg, hi)
    f_lo, f_hi = oracle.frequency(lo), oracle.frequency(hi)
    freqs = [(lo, f_lo), (hi, f_hi)]
    if not (f_lo > cfg.tau >= f_hi):
        raise BracketError(f"bracket [{lo:.6g}, {hi:.6g}] does not straddle tau = {cfg.tau}: "
                           f"frequencies {f_lo:.3f}, {f_hi:.3f}", freqs)
    for _ in range(cfg.steps):
        if (hi - lo) <= cfg.rel_tol * (hi + lo) / 2:
            break
        mid = (lo + hi) / 2
        f = oracle.frequency(mid)
        freqs.append((mid, f))
        if f > cfg.tau:
            lo = mid
        else:
            hi = mid
    lam_hat = (lo + hi) / 2
    return CriticalEstimate(lam_hat, lo, hi, freqs, ref, abs(lam_hat - ref) / ref, cfg.tau, cfg.probe,
                            cfg.probe_depth, cfg.replicates, oracle.evaluations)


def compare_open_closed(cfg, levels=None):
    """Open vs closed balls on shared seeds: box classifications and critical estimates."""
    key = cfg.family.replace("_", "").replace("-", "").lower()
    if not key.startswith("ball") and not key.endswith("ball"):
        raise ConfigError("compare-open-closed needs the ball family")
    from dataclasses import replace
    c_closed = replace(cfg, family="ballclosed")
    c_open = replace(cfg, family="ballopen")
    m_c, m_o = c_closed.build_measure(), c_open.build_measure()
    lam = cfg.lam if cfg.lam is not None else ms.lambda_e_closed(m_c)
    levels = levels or range(1, cfg.n_max + 1)
    differing = 0
    compared = 0
    for r in range(cfg.replicates):
        pc = _process(m_c, lam, max(levels), cfg, r)
        po = _process(m_o, lam, max(levels), cfg, r)
        for n in levels:
            a, b = classify_boxes(pc, n), classify_boxes(po, n)
            differing += int(np.count_nonzero(a.status != b.status))
            compared += a.status.size
    est_c = estimate_critical(c_closed)
    est_o = estimate_critical(c_open)
    overlap = not (est_c.hi < est_o.lo or est_o.hi < est_c.lo)
    return {"config": cfg.echo(), "lambda_classified": lam, "boxes_compared": compared,
            "boxes_differing": differing, "closed": est_c.as_json(), "open": est_o.as_json(),
            "identical_estimates": est_c.lam_hat == est_o.lam_hat, "bracket_overlap": overlap,
            "reference_closed": ms.lambda_e_closed(m_c), "reference_open": ms.lambda_e_closed(m_o)}
