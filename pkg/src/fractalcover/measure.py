"""Semi scale-invariant measures built from a finite base measure.

mu = nu_o x rho^{-(d+1)} d rho x Lebesgue, through G = rho * H + x with rho in
(0, 1).  Only the volumes and layer volumes of the templates enter, so every
quantity below reduces to one-dimensional integrals in log-scale.

Band conventions: band l holds diameters in [2^{-l}, 2^{-l+1}).  A band range
(l_lo, l_hi) means diameters in [2^{-l_hi}, 2^{-l_lo}), i.e. bands
l_lo+1 .. l_hi.
"""

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .shapes import Ball, Cube, make_template, unit_ball_volume

LOG2 = math.log(2.0)

# stored reference: outer boundaries of the Brownian loop soup in the plane
LOOP_SOUP_VOLUME_MASS = 0.2
LOOP_SOUP_DIM = 2


@dataclass(frozen=True)
class BaseMeasure:
    """Finite measure nu_o: weighted templates and an optional rotation kernel."""
    atoms: tuple
    rotation: str = "none"

    def __post_init__(self):
        atoms = tuple((t, float(w)) for t, w in self.atoms)
        if not atoms:
            raise ValueError("base measure needs at least one atom")
        dims = {t.dim for t, _ in atoms}
        if len(dims) != 1:
            raise ValueError("all atoms must share a dimension")
        if any(not w > 0 for _, w in atoms):
            raise ValueError("atom weights must be positive")
        if self.rotation not in ("none", "uniform"):
            raise ValueError("rotation kernel is 'none' or 'uniform'")
        if self.rotation == "uniform" and dims != {2}:
            raise ValueError("uniform rotation is only supported in d = 2")
        object.__setattr__(self, "atoms", atoms)

    @property
    def dim(self):
        return self.atoms[0][0].dim

    @property
    def total_mass(self):
        return sum(w for _, w in self.atoms)

    @property
    def volume_mass(self):
        """nu_o(L(H)), using the limit-set volume of each template."""
        return sum(w * t.measure_volume for t, w in self.atoms)


@dataclass(frozen=True)
class ScaleInvariantMeasure:
    base: BaseMeasure
    cutoff: float = 1.0
    label: str = ""

    @property
    def dim(self):
        return self.base.dim

    @property
    def atoms(self):
        return self.base.atoms

    def describe(self):
        return {"label": self.label, "dim": self.dim, "rotation": self.base.rotation,
                "atoms": [dict(t.describe(), weight=w) for t, w in self.atoms]}


@dataclass
class SequenceReport:
    n: int
    value: float
    limit: float
    error: float
    method: str


@dataclass
class TrendReport:
    """Truncated integral at r_min = 2^{-k}, k = 1..k_max, with a verdict."""
    name: str
    k: np.ndarray
    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    method: str
    resolved_k: int
    verdict: str = ""
    rule: dict = field(default_factory=dict)

    @property
    def increments(self):
        return np.diff(self.values)


# ----------------------------------------------------------------------
# constructors


def radius_to_diameter_weight(dim):
    """Weight on a diameter-1 ball that reproduces r^{-d-1} dr on radii in (0, 1/2]."""
    return 2.0 ** dim


def ball_measure(dim=2, closed=True, parametrization="radius"):
    """The fractal ball model.

    parametrization='radius' reproduces the radius density r^{-d-1} dr, which
    corresponds to weight 2^d on the unit-diameter ball; 'diameter' puts unit
    mass on it.
    """
    if parametrization not in ("radius", "diameter"):
        raise ValueError("parametrization is 'radius' or 'diameter'")
    w = radius_to_diameter_weight(dim) if parametrization == "radius" else 1.0
    kind = "closed" if closed else "open"
    return ScaleInvariantMeasure(BaseMeasure(((Ball(dim, closed), w),)),
                                 label=f"ball-{kind}-{parametrization}")


def template_measure(template, weight=1.0, label=None):
    rot = "uniform" if template.rotates else "none"
    return ScaleInvariantMeasure(BaseMeasure(((template, weight),), rotation=rot),
                                 label=label or template.family)


def make_measure(family, dim=2, **kw):
    """Measure from a family name; balls default to the radius parametrization."""
    key = family.replace("_", "").replace("-", "").lower()
    if key in ("ball", "ballclosed", "closedball"):
        return ball_measure(dim, True, kw.get("parametrization", "radius"))
    if key in ("ballopen", "openball"):
        return ball_measure(dim, False, kw.get("parametrization", "radius"))
    return template_measure(make_template(family, dim, **kw))


# ----------------------------------------------------------------------
# mu(A_1) and lambda_e


def mu_A1(m):
    """mu(A_1) = log 2 * sum_i w_i L(H_i)."""
    return LOG2 * m.base.volume_mass


def mu_A1_bracket(m):
    lo = hi = 0.0
    for t, w in m.atoms:
        if hasattr(t, "tail_volume"):
            a, b = t.volume(), t.volume() + t.tail_volume
        else:
            a = b = t.measure_volume
        lo, hi = lo + w * a, hi + w * b
    return LOG2 * lo, LOG2 * hi


def mu_A1_quadrature(m):
    """mu(A_1) by integrating over the scale: sets of diameter [1/2, 1) hitting o.

    For the ball model in radius form this is the integral of v_d r^d r^{-d-1}
    over [1/4, 1/2]; otherwise rho^d L(H) rho^{-(d+1)} over [1/2, 1).
    """
    d = m.dim
    total = 0.0
    for t, w in m.atoms:
        if isinstance(t, Ball):
            c = w / radius_to_diameter_weight(d)
            f = lambda r: c * unit_ball_volume(d) * r ** d * r ** (-d - 1)
            total += integrate.quad(f, 0.25, 0.5, epsabs=1e-13, epsrel=1e-12)[0]
        else:
            v = t.measure_volume
            f = lambda rho: w * rho ** d * v * rho ** (-d - 1)
            total += integrate.quad(f, 0.5, 1.0, epsabs=1e-13, epsrel=1e-12)[0]
    return total


def lambda_e_closed(m):
    """Critical intensity d / nu_o(L(H)).

    Returns +inf (and warns) when the base measure carries no volume: then
    the uncovered set is never empty.
    """
    mass = m.base.volume_mass if isinstance(m, ScaleInvariantMeasure) else float(m)
    d = m.dim if isinstance(m, ScaleInvariantMeasure) else LOOP_SOUP_DIM
    if mass <= 0:
        warnings.warn("zero volume mass: lambda_e is infinite", RuntimeWarning, stacklevel=2)
        return math.inf
    return d / mass


def lambda_e_from_mu(mu_value, dim):
    return math.inf if mu_value <= 0 else dim * LOG2 / mu_value


def loop_soup_reference():
    """Stored constants for the planar Brownian loop soup (not sampled)."""
    mu = LOOP_SOUP_VOLUME_MASS * LOG2
    return {"volume_mass": LOOP_SOUP_VOLUME_MASS, "mu_A1": mu,
            "lambda_e": lambda_e_from_mu(mu, LOOP_SOUP_DIM)}


# ----------------------------------------------------------------------
# scale integrals


def _scale_integral(m, g, r, mode, nodes=96):
    """sum_i w_i * int_{1/2}^1 g_i(r / rho) d rho / rho, with a bracket.

    g is the template layer function named by `mode`; analytic templates use
    adaptive quadrature, the others a monotone Riemann bracket in log rho.
    """
    value = lo = hi = 0.0
    for t, w in m.atoms:
        if t.analytic:
            f = lambda rho: float(getattr(t, g)(r / rho)) / rho
            v, err = integrate.quad(f, 0.5, 1.0, epsabs=1e-13, epsrel=1e-13, limit=200)
            value += w * v
            lo += w * (v - err)
            hi += w * (v + err)
            continue
        edges = np.linspace(-LOG2, 0.0, nodes + 1)
        mids = (edges[:-1] + edges[1:]) / 2
        width = LOG2 / nodes
        s_mid = r / np.exp(mids)
        value += w * width * float(np.sum(getattr(t, g)(s_mid)))
        # r / rho decreases in rho; layer-type functions are monotone in r
        s_left, s_right = r / np.exp(edges[:-1]), r / np.exp(edges[1:])
        a_lo, a_hi = t.layer_bracket(mode, s_right)
        b_lo, b_hi = t.layer_bracket(mode, s_left)
        if mode == "shrink":  # decreasing in its argument
            lo += w * width * float(np.sum(b_lo))
            hi += w * width * float(np.sum(a_hi))
        else:
            lo += w * width * float(np.sum(a_lo))
            hi += w * width * float(np.sum(b_hi))
    return value, lo, hi


def _ball_power_integral(t, j, a, b, d):
    """int_a^b t^{d-j} r^{j-d-1} dr."""
    if b <= a:
        return 0.0
    if j == d:
        return math.log(b / a)
    return t ** (d - j) * (b ** (j - d) - a ** (j - d)) / (j - d)


def ball_a1_closed(dim, n, weight=None):
    """a_{1,n} for balls in closed form (enlargement by d 2^{-n})."""
    w = radius_to_diameter_weight(dim) if weight is None else weight
    t = dim * 2.0 ** -n
    s = sum(math.comb(dim, j) * _ball_power_integral(t, j, 0.25, 0.5, dim) for j in range(dim + 1))
    return w / radius_to_diameter_weight(dim) * unit_ball_volume(dim) * s


def ball_b1_closed(dim, n, weight=None):
    """b_{1,n} for balls in closed form (shrinkage by 2^{-n-1})."""
    w = radius_to_diameter_weight(dim) if weight is None else weight
    t = 2.0 ** (-n - 1)
    a = max(0.25, t)
    s = sum(math.comb(dim, j) * (-1) ** (dim - j) * _ball_power_integral(t, j, a, 0.5, dim)
            for j in range(dim + 1))
    return w / radius_to_diameter_weight(dim) * unit_ball_volume(dim) * s


def _all_balls(m):
    return all(isinstance(t, Ball) for t, _ in m.atoms)


def enlargement_integral(m, r):
    """int_{A_1} L(E(G, r)) / L(G) d mu_p."""
    return _scale_integral(m, "enlarge_volume", r, "enlarge")


def shrinkage_integral(m, r):
    """int_{A_1} L(S(G, r)) / L(G) d mu_p."""
    return _scale_integral(m, "shrink_volume", r, "shrink")


def inner_layer_integral(m, r):
    """int_{A_1} L([dG]^r) / L(G) d mu_p."""
    return _scale_integral(m, "layer_volume", r, "layer")


def a1_sequence(m, n):
    """a_{1,n}: enlargement integral at radius d 2^{-n}; decreases to mu(A_1)."""
    if n < 1:
        raise ValueError("n >= 1")
    limit = mu_A1(m)
    if _all_balls(m):
        v = sum(ball_a1_closed(m.dim, n, w) for _, w in m.atoms)
        q = enlargement_integral(m, m.dim * 2.0 ** -n)[0]
        return SequenceReport(n, v, limit, abs(v - q), "analytic")
    v, lo, hi = enlargement_integral(m, m.dim * 2.0 ** -n)
    method = "quadrature" if all(t.analytic for t, _ in m.atoms) else "raster-quadrature"
    return SequenceReport(n, v, limit, max(v - lo, hi - v), method)


def b1_sequence(m, n):
    """b_{1,n}: shrinkage integral at radius 2^{-n-1}; increases to mu(A_1)."""
    if n < 1:
        raise ValueError("n >= 1")
    limit = mu_A1(m)
    if _all_balls(m):
        v = sum(ball_b1_closed(m.dim, n, w) for _, w in m.atoms)
        q = shrinkage_integral(m, 2.0 ** (-n - 1))[0]
        return SequenceReport(n, v, limit, abs(v - q), "analytic")
    v, lo, hi = shrinkage_integral(m, 2.0 ** (-n - 1))
    method = "quadrature" if all(t.analytic for t, _ in m.atoms) else "raster-quadrature"
    return SequenceReport(n, v, limit, max(v - lo, hi - v), method)


def sequence_table(m, n_max, which="both"):
    rows = []
    for n in range(1, n_max + 1):
        if which in ("a", "both"):
            rows.append(("a",) + _row(a1_sequence(m, n)))
        if which in ("b", "both"):
            rows.append(("b",) + _row(b1_sequence(m, n)))
    return rows


def _row(rep):
    return (rep.n, rep.value, rep.limit, rep.error, rep.method)


def reports_to_csv(reports, path=None):
    """Write SequenceReports as CSV (n, value, limit, error, method)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "value", "limit", "error", "method"])
    for r in reports:
        w.writerow([r.n, repr(float(r.value)), repr(float(r.limit)), repr(float(r.error)), r.method])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


# ----------------------------------------------------------------------
# the critical-point condition and thinness


def _window_weight(w, log_rmin):
    """Length of {u in [log r_min, 0] : u <= w <= u + log 2}."""
    return np.clip(np.minimum(0.0, w) - np.maximum(log_rmin, w - LOG2), 0.0, None)


def _layer_sum(m, s, mode="layer"):
    v = lo = hi = 0.0
    for t, w in m.atoms:
        if mode == "layer":
            est = t.layer_volume(s) if not t.analytic else t.volume() - t.shrink_volume(s)
        else:
            est = t.enlarge_volume(s) - t.shrink_volume(s)
        v = v + w * est
        if t.analytic:
            lo, hi = lo + w * est, hi + w * est
        elif mode == "layer":
            a, b = t.layer_bracket("layer", s)
            lo, hi = lo + w * a, hi + w * b
        else:
            ea, eb = t.layer_bracket("enlarge", s)
            sa, sb = t.layer_bracket("shrink", s)
            lo, hi = lo + w * (ea - sb), hi + w * (eb - sa)
    return v, lo, hi


def extracond_integral(m, r_min, per_octave=64):
    """Truncated condition integral.

    int_{r_min}^1 (1/r) int_{A_1} L([dG]^r)/L(G) d mu_p dr
      = int f(w) K(w) dw,   f(w) = sum_i w_i L([dH_i]^{e^w}),
    where K is the overlap length of the r and rho ranges in log scale.
    Returns (value, lower, upper).
    """
    if not 0 < r_min < 1:
        raise ValueError("0 < r_min < 1")
    lr = math.log(r_min)
    if all(t.analytic for t, _ in m.atoms):
        f = lambda w: float(_layer_sum(m, math.exp(w))[0]) * float(_window_weight(w, lr))
        pts = [p for p in (lr + LOG2, -LOG2, 0.0) if lr < p < LOG2]
        v, err = integrate.quad(f, lr, LOG2, points=pts, epsabs=1e-12, epsrel=1e-12, limit=400)
        return v, v - err, v + err
    # monotone bracket on a log grid: L([dH]^s) is nondecreasing in s
    n = max(8, int(math.ceil((LOG2 - lr) / LOG2 * per_octave)))
    edges = np.linspace(lr, LOG2, n + 1)
    mids = (edges[:-1] + edges[1:]) / 2
    kw = np.array([integrate.quad(lambda w: float(_window_weight(w, lr)), a, b)[0]
                   for a, b in zip(edges[:-1], edges[1:])])
    val = float(np.sum(kw * _layer_sum(m, np.exp(mids))[0]))
    lo = float(np.sum(kw * _layer_sum(m, np.exp(edges[:-1]))[1]))
    hi = float(np.sum(kw * _layer_sum(m, np.exp(edges[1:]))[2]))
    return val, lo, hi


def thinness_integral(m, r_min, per_octave=64):
    """Truncated thinness integral int_{r_min}^1 (1/r) sum_i w_i L(E(H_i,r) - S(H_i,r)) dr.

    Returns (value, lower, upper).
    """
    if not 0 < r_min < 1:
        raise ValueError("0 < r_min < 1")
    lr = math.log(r_min)
    if all(t.analytic for t, _ in m.atoms):
        f = lambda w: float(_layer_sum(m, math.exp(w), "outer")[0])
        pts = [p for p in (-LOG2,) if lr < p < 0]
        v, err = integrate.quad(f, lr, 0.0, points=pts or None, epsabs=1e-12, epsrel=1e-12, limit=400)
        return v, v - err, v + err
    n = max(8, int(math.ceil(-lr / LOG2 * per_octave)))
    edges = np.linspace(lr, 0.0, n + 1)
    mids = (edges[:-1] + edges[1:]) / 2
    width = -lr / n
    val = width * float(np.sum(_layer_sum(m, np.exp(mids), "outer")[0]))
    lo = width * float(np.sum(_layer_sum(m, np.exp(edges[:-1]), "outer")[1]))
    hi = width * float(np.sum(_layer_sum(m, np.exp(edges[1:]), "outer")[2]))
    return val, lo, hi


def resolved_scale(template):
    """Smallest layer radius at which a template's calculus is resolved."""
    if template.analytic:
        return 0.0
    if hasattr(template, "n_max"):
        return template.scale * math.sqrt(template.dim) * 2.0 ** -template.n_max
    return 2.0 ** -template.raster_level


# decision rules for truncated integrals
ABS_STEP = 0.2        # growth per dyadic step that counts as divergence
RATIO_FLOOR = 0.75    # increments decaying slower than this ratio count as divergence
RULE_STEPS = 4
FLAT_TOL = 1e-6


def diagnose_trend(values, resolved_k=None):
    """Classify the trend of truncated values v_k at r_min = 2^{-k}.

    Two rules over the last RULE_STEPS increments within the resolved range:
    'absolute' fires when every increment exceeds ABS_STEP; 'ratio' fires when
    increments are above FLAT_TOL and each is at least RATIO_FLOOR times the
    previous one (a convergent integral of a finite-perimeter layer has ratio
    about 1/2).
    """
    v = np.asarray(values, dtype=float)
    if resolved_k is not None:
        v = v[:resolved_k]
    inc = np.diff(v)
    last = inc[-RULE_STEPS:]
    absolute = last.size == RULE_STEPS and bool(np.all(last > ABS_STEP))
    prev = inc[-RULE_STEPS - 1:-1]
    ratio = (last.size == RULE_STEPS and prev.size == RULE_STEPS and bool(np.all(last > FLAT_TOL))
             and bool(np.all(last >= RATIO_FLOOR * prev)))
    verdict = "divergent trend" if (absolute or ratio) else "finite"
    ratios = (last / np.where(prev > 0, prev, np.nan)).tolist() if prev.size == last.size else []
    return verdict, {"absolute": absolute, "ratio": ratio, "last_increments": last.tolist(),
                     "last_ratios": ratios}


def _trend(name, fn, m, k_max):
    ks = np.arange(1, k_max + 1)
    res = np.array([fn(m, 2.0 ** -int(k)) for k in ks])
    lim = max(resolved_scale(t) for t, _ in m.atoms)
    resolved = k_max if lim == 0 else int(min(k_max, math.floor(-math.log2(lim))))
    verdict, rule = diagnose_trend(res[:, 0], resolved)
    method = "quadrature" if all(t.analytic for t, _ in m.atoms) else "raster-quadrature"
    return TrendReport(name, ks, res[:, 0], res[:, 1], res[:, 2], method, resolved, verdict, rule)


def extracond_trend(m, k_max=20):
    return _trend("extracond", extracond_integral, m, k_max)


def thinness_trend(m, k_max=20):
    return _trend("thinness", thinness_integral, m, k_max)


def is_thin_by_dimension(m, margin=0.1):
    """Fast path: every atom's fitted boundary box dimension is below d - margin.

    Returns (verdict, dims); verdict is None when some atom's boundary samples
    only describe a truncation, so the fit says nothing about the limit set.
    """
    from .shapes import box_dimension
    dims = []
    for t, _ in m.atoms:
        if isinstance(t, (Ball, Cube)):
            dims.append(t.dim - 1.0)
        else:
            dims.append(box_dimension(t))
    if not all(t.boundary_is_limit for t, _ in m.atoms):
        return None, dims
    return all(x < m.dim - margin for x in dims), dims


# ----------------------------------------------------------------------
# exclusion and containment measures of a box


def _band_diameters(l_lo, l_hi):
    if l_hi < l_lo:
        raise ValueError("band must satisfy l_lo <= l_hi")
    return 2.0 ** -l_hi, 2.0 ** -l_lo


def _power_integral(p, a, b):
    """int_a^b rho^p d rho."""
    if b <= a:
        return 0.0
    if p == -1:
        return math.log(b / a)
    return (b ** (p + 1) - a ** (p + 1)) / (p + 1)


def exclusion_bracket(m, s, l_lo, l_hi):
    """mu({G in the band : G meets a closed box of side s}), as (value, lo, hi)."""
    if not s > 0:
        raise ValueError("box side must be positive")
    a, b = _band_diameters(l_lo, l_hi)
    d = m.dim
    val = lo = hi = 0.0
    if b <= a:
        return 0.0, 0.0, 0.0
    for t, w in m.atoms:
        if isinstance(t, Ball):
            # box dilated by a ball of radius rho/2 (Steiner), against rho^{-(d+1)}
            v = sum(math.comb(d, j) * s ** (d - j) * unit_ball_volume(j) * 0.5 ** j
                    * _power_integral(j - d - 1, a, b) for j in range(d + 1))
            val, lo, hi = val + w * v, lo + w * v, hi + w * v
        elif isinstance(t, Cube):
            c = t.side
            v = sum(math.comb(d, j) * s ** (d - j) * c ** j * _power_integral(j - d - 1, a, b)
                    for j in range(d + 1))
            val, lo, hi = val + w * v, lo + w * v, hi + w * v
        else:
            # box ⊕ G lies between the s/2 and s*sqrt(d)/2 enlargements of G
            f = lambda rho, r: rho ** -1.0 * float(t.enlarge_volume(r / rho))
            inner = integrate.quad(lambda rho: f(rho, s / 2), a, b, limit=200)[0]
            outer = integrate.quad(lambda rho: f(rho, s * math.sqrt(d) / 2), a, b, limit=200)[0]
            val += w * (inner + outer) / 2
            lo += w * inner
            hi += w * outer
    return val, lo, hi


def exclusion_measure(m, s, l_lo, l_hi):
    return exclusion_bracket(m, s, l_lo, l_hi)[0]


def _quadrant_area(radius, a):
    """Area of {u, v >= 0 : (u + a)^2 + (v + a)^2 <= radius^2}."""
    if radius * radius <= 2 * a * a:
        return 0.0
    u = math.sqrt(radius * radius - a * a)
    F = lambda x: 0.5 * (x * math.sqrt(max(radius * radius - x * x, 0.0))
                         + radius * radius * math.asin(min(x / radius, 1.0)))
    return F(u) - F(a) - a * (u - a)


def _octant_volume(radius, a):
    """Volume of {u, v, w >= 0 : sum (x + a)^2 <= radius^2}."""
    if radius * radius <= 3 * a * a:
        return 0.0

    def height(v, u):
        h2 = radius * radius - (u + a) ** 2 - (v + a) ** 2
        return max(math.sqrt(h2) - a, 0.0) if h2 > 0 else 0.0

    umax = math.sqrt(radius * radius - 2 * a * a) - a
    vmax = lambda u: max(math.sqrt(max(radius * radius - (u + a) ** 2 - a * a, 0.0)) - a, 0.0)
    return integrate.dblquad(height, 0.0, umax, 0.0, vmax, epsabs=1e-13, epsrel=1e-11)[0]


def ball_box_containment_volume(dim, radius, s):
    """Volume of centres c such that a box of side s lies inside the ball B(c, radius)."""
    a = s / 2
    if dim == 1:
        return max(2 * (radius - a), 0.0)
    if dim == 2:
        return 4 * _quadrant_area(radius, a)
    if dim == 3:
        return 8 * _octant_volume(radius, a)
    raise NotImplementedError("ball containment implemented for d <= 3")


def containment_bracket(m, s, l_lo, l_hi):
    """mu({G in the band : G contains a closed box of side s}), as (value, lo, hi)."""
    if not s > 0:
        raise ValueError("box side must be positive")
    a, b = _band_diameters(l_lo, l_hi)
    d = m.dim
    val = lo = hi = 0.0
    if b <= a:
        return 0.0, 0.0, 0.0
    for t, w in m.atoms:
        if isinstance(t, Ball):
            lo_rho = max(a, s * math.sqrt(d))  # the ball must be wider than the box diagonal
            if lo_rho >= b:
                continue
            f = lambda rho: ball_box_containment_volume(d, rho / 2, s) * rho ** (-d - 1)
            v = integrate.quad(f, lo_rho, b, epsabs=1e-14, epsrel=1e-12, limit=400)[0]
            val, lo, hi = val + w * v, lo + w * v, hi + w * v
        elif isinstance(t, Cube):
            c = t.side
            lo_rho = max(a, s / c)
            v = 0.0
            if lo_rho < b:
                v = sum(math.comb(d, j) * c ** j * (-s) ** (d - j) * _power_integral(j - d - 1, lo_rho, b)
                        for j in range(d + 1))
            val, lo, hi = val + w * v, lo + w * v, hi + w * v
        else:
            # centre depth s*sqrt(d)/2 suffices, depth s/2 is necessary
            f = lambda rho, r: rho ** -1.0 * float(t.shrink_volume(r / rho))
            inner = integrate.quad(lambda rho: f(rho, s * math.sqrt(d) / 2), a, b, limit=200)[0]
            outer = integrate.quad(lambda rho: f(rho, s / 2), a, b, limit=200)[0]
            val += w * (inner + outer) / 2
            lo += w * inner
            hi += w * outer
    return val, lo, hi


def containment_measure(m, s, l_lo, l_hi):
    return containment_bracket(m, s, l_lo, l_hi)[0]


# ----------------------------------------------------------------------
# expected box counts and the exponents that bound them


def expected_untouched(m, lam, n):
    """E|m_n| = 2^{dn} exp(-lambda mu(G in bands 1..n meets a level-n box))."""
    d = m.dim
    return 2.0 ** (d * n) * math.exp(-lam * exclusion_measure(m, 2.0 ** -n, 0, n))


def expected_not_covered(m, lam, n):
    """E|M_n| = 2^{dn} exp(-lambda mu(G in bands 1..n contains a level-n box))."""
    d = m.dim
    return 2.0 ** (d * n) * math.exp(-lam * containment_measure(m, 2.0 ** -n, 0, n))


def lemma_exponent(m, lam, eps):
    """d - lambda (mu(A_1) + eps) / log 2: the growth exponent bound for E|m_n|."""
    return m.dim - lam * (mu_A1(m) + eps) / LOG2


def a_sequence_excess(m, n):
    """eps_n = mean_{k<=n} a_{1,k} - mu(A_1).

    Summing the band terms a_{l,n} = a_{1,n-l+1} gives
    mu(G in bands 1..n meets D(o, d 2^{-n})) = n (mu(A_1) + eps_n).
    """
    mu = mu_A1(m)
    return float(np.mean([a1_sequence(m, k).value for k in range(1, n + 1)])) - mu


def critical_bound_constant(m, radius_factor=1.0, l_max=80):
    """exp((d log 2 / mu(A_1)) * sum_l int L([dG]^{c 2^{-l-1}})/L(G) d mu_p).

    radius_factor c = 1 gives the constant of the critical-point argument
    (inner layers at the level-l box half side); c = sqrt(d) uses the
    half-diagonal, the radius of the ball that circumscribes a box.
    """
    mu = mu_A1(m)
    total = 0.0
    for l in range(1, l_max + 1):
        r = radius_factor * 2.0 ** (-l - 1)
        if _all_balls(m) and radius_factor == 1.0:
            term = mu - sum(ball_b1_closed(m.dim, l, w) for _, w in m.atoms)
        else:
            term = inner_layer_integral(m, r)[0]
        total += term
    return math.exp(m.dim * LOG2 / mu * total)
