import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fractalcover import shapes
from fractalcover.shapes import (Ball, BoundaryLayerQuery, Cube, KochSnowflake, PlacedSet,
                                 RationalBoxUnion, SieveComplement, SNOWFLAKE_LIMIT_AREA,
                                 box_dimension, contains, covering_number, layer_volume,
                                 make_template, volume)


@pytest.fixture(scope="module")
def koch():
    return KochSnowflake()


@pytest.fixture(scope="module")
def sieve_t():
    return SieveComplement(2, 12)


@pytest.fixture(scope="module")
def rational_t():
    return RationalBoxUnion(2, 20)


# ---------------------------------------------------------------- membership

def test_closed_and_open_ball_boundary_point():
    p = (0.5, 0.0)
    assert contains(Ball(2, closed=True), p) is True
    assert contains(Ball(2, closed=False), p) is False


def test_cube_contains_its_anchor():
    for d in (1, 2, 3):
        assert contains(Cube(d), (0.0,) * d)


def test_point_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        contains(Ball(2), (0.1, 0.2, 0.3))


def test_snowflake_area_monte_carlo():
    # 10^6 uniform points in the unit window around the K = 6 snowflake
    t = KochSnowflake(6)
    p = np.random.default_rng(0).uniform(-0.5, 0.5, (10 ** 6, 2))
    f = t.contains(p).mean()
    se = math.sqrt(f * (1 - f) / p.shape[0])
    assert abs(f - KochSnowflake.area_at_iteration(6)) <= 3 * se
    # the limit area differs from A_6 by the analytic truncation gap
    gap = SNOWFLAKE_LIMIT_AREA - KochSnowflake.area_at_iteration(6)
    assert 0 < gap < 2e-3
    assert abs(f - SNOWFLAKE_LIMIT_AREA) <= 3 * se + gap


def test_snowflake_is_normalized(koch):
    pts = koch.boundary_samples()
    tips = pts[np.argsort(-np.linalg.norm(pts, axis=1))[:6]]
    diam = np.max(np.linalg.norm(tips[:, None] - tips[None], axis=2))
    assert diam == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(koch.centroid(), 0.0, atol=1e-12)


def test_snowflake_signed_distance_against_brute_force(koch):
    a = koch.boundary_samples()
    b = np.roll(a, -1, axis=0)
    q = np.random.default_rng(1).uniform(-0.55, 0.55, (400, 2))
    ab = b - a
    t = np.clip(((q[:, None] - a[None]) * ab[None]).sum(-1) / (ab * ab).sum(-1)[None], 0, 1)
    dist = np.linalg.norm(q[:, None] - (a[None] + t[..., None] * ab[None]), axis=2).min(axis=1)
    true = np.where(koch.contains(q), dist, -dist)
    phi, err = koch.signed_distance(q)
    assert np.all(np.abs(phi - true) <= err + 1e-12)


# ---------------------------------------------------------------- volumes

def test_disc_volume():
    assert volume(Ball(2)) == pytest.approx(math.pi / 4, abs=1e-15)


def test_snowflake_area_closed_form_and_limit():
    # polygon area equals the iteration formula, which converges to 3 sqrt3 / 10
    for k in (0, 3, 6):
        z = shapes.koch_vertices(k)
        area, _ = shapes.polygon_area_centroid(z)
        assert abs(area) == pytest.approx(KochSnowflake.area_at_iteration(k), rel=1e-12)
    assert KochSnowflake.area_at_iteration(40) == pytest.approx(3 * math.sqrt(3) / 10, rel=1e-13)
    assert KochSnowflake.area_at_iteration(40, diameter=0.3) == pytest.approx(
        3 * math.sqrt(3) / 10 * 0.09, rel=1e-13)


def test_rational_volume_range_and_grid_oracle(rational_t):
    v = rational_t.volume()
    assert 0 < v <= 2.0 ** -2
    lo, hi = rational_t.volume_bracket(level=12)
    assert lo <= v <= hi
    # unscaled union volume stays below the sum of box volumes, 1/12 in d = 2
    assert rational_t.unscaled_volume <= 1 / 12 + 1e-15


def test_placed_volume_scales(koch):
    g = PlacedSet(koch, 0.25, (0.3, 0.4), 1.0)
    assert volume(g) == pytest.approx(0.0625 * koch.volume(), rel=1e-15)


# ---------------------------------------------------------------- layers

def test_ball_enlarge_and_shrink_at_half():
    b = Ball(2)
    assert layer_volume(b, (0.5, "enlarge")) == pytest.approx(math.pi, abs=1e-15)
    assert layer_volume(b, (0.5, "shrink")) == 0.0
    assert layer_volume(b, BoundaryLayerQuery(0.5, "layer")) == pytest.approx(math.pi / 4)


def test_layer_query_validation():
    with pytest.raises(ValueError):
        BoundaryLayerQuery(0.0)
    with pytest.raises(ValueError):
        BoundaryLayerQuery(0.1, "grow")


def test_sieve_layer_lower_bound(sieve_t):
    # L([dH]^r) >= 1/n for sqrt(d) 2^{-n} <= r <= sqrt(d) 2^{-n+1}, unscaled units
    s, d = sieve_t.scale, sieve_t.dim
    for n in range(2, 13):
        for r in (math.sqrt(d) * 2.0 ** -n, math.sqrt(d) * 2.0 ** (1 - n)):
            lo, hi = sieve_t.layer_bracket("layer", s * r)
            assert lo <= hi
            assert lo >= s ** d / n


def test_layer_identity_and_brackets(koch, rational_t):
    for t in (Ball(2), Cube(2), koch, rational_t):
        for r in (0.01, 0.05, 0.2):
            e_lo, e_hi = t.layer_bracket("enlarge", r)
            s_lo, s_hi = t.layer_bracket("shrink", r)
            l_lo, l_hi = t.layer_bracket("layer", r)
            assert e_lo <= e_hi and s_lo <= s_hi and l_lo <= l_hi
            assert s_hi <= t.volume() + 1e-12 <= e_hi + 2e-12
            assert t.measure_volume - s_hi <= l_hi + 1e-12
            assert l_lo <= t.measure_volume - s_lo + 1e-12


@settings(max_examples=60, deadline=None)
@given(r1=st.floats(1e-3, 0.6), r2=st.floats(1e-3, 0.6), d=st.integers(1, 4))
def test_ball_and_cube_layers_are_monotone(r1, r2, d):
    r1, r2 = sorted((r1, r2))
    for t in (Ball(d), Cube(d)):
        assert t.enlarge_volume(r1) <= t.enlarge_volume(r2) + 1e-15
        assert t.shrink_volume(r1) + 1e-15 >= t.shrink_volume(r2)
        assert t.shrink_volume(r2) <= t.volume() <= t.enlarge_volume(r1)


@settings(max_examples=40, deadline=None)
@given(scale=st.floats(0.01, 0.99), r=st.floats(1e-3, 0.3),
       mode=st.sampled_from(["enlarge", "shrink", "layer"]))
def test_placed_layer_scaling(scale, r, mode):
    b = Ball(2)
    g = PlacedSet(b, scale, (0.1, -0.2))
    assert layer_volume(g, (r, mode)) == pytest.approx(
        scale ** 2 * layer_volume(b, (r / scale, mode)), rel=1e-12, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(scale=st.floats(0.05, 0.99), angle=st.floats(-math.pi, math.pi),
       x=st.floats(-1, 1), y=st.floats(-1, 1))
def test_placed_membership_matches_template(scale, angle, x, y):
    koch = KochSnowflake(4)
    g = PlacedSet(koch, scale, (x, y), angle)
    q = np.random.default_rng(2).uniform(-0.5, 0.5, (50, 2))
    c, s = math.cos(angle), math.sin(angle)
    p = scale * q @ np.array([[c, s], [-s, c]]) + np.array([x, y])
    assert np.array_equal(contains(g, p), koch.contains(q))


# ---------------------------------------------------------------- covering numbers

def test_disc_covering_number_at_quarter():
    n = covering_number(Ball(2), 0.25)
    assert 8 <= n <= 16


def test_covering_number_is_one_for_large_radius(koch, rational_t):
    for t in (Ball(2), Cube(3), koch, rational_t):
        assert covering_number(t, 1.0) == 1
        assert covering_number(t, 3.7) == 1


def test_covering_number_monotone(koch):
    rs = 2.0 ** -np.linspace(1, 8, 30)
    ns = [covering_number(koch, r) for r in rs]
    assert all(a <= b for a, b in zip(ns, ns[1:]))


def test_snowflake_box_dimension(koch):
    assert box_dimension(koch) == pytest.approx(math.log(4) / math.log(3), abs=0.05)


def test_disc_box_dimension_is_one():
    # 10^4 boundary samples resolve radii down to about 2^-7
    assert box_dimension(Ball(2), r_lo=2.0 ** -7) == pytest.approx(1.0, abs=0.05)


def test_covering_bounds_the_layer(koch):
    # N(r) balls of radius 2r cover the r-layer of the boundary
    for t in (Ball(2), koch):
        for r in (0.02, 0.05, 0.1):
            n = covering_number(t, r)
            assert n * shapes.unit_ball_volume(2) * (2 * r) ** 2 >= t.layer_bracket("layer", r)[0]


# ---------------------------------------------------------------- registry

def test_make_template_families():
    assert isinstance(make_template("ball"), Ball) and make_template("ball").closed
    assert not make_template("ballopen").closed
    assert isinstance(make_template("koch", iterations=5), KochSnowflake)
    with pytest.raises(ValueError):
        make_template("snowflake", 3)
    with pytest.raises(ValueError):
        make_template("torus")


def test_boundary_volume_bounds(sieve_t, rational_t):
    assert Ball(2).boundary_volume_bounds()[:2] == (0.0, 0.0)
    lo, hi, _ = sieve_t.boundary_volume_bounds()
    assert lo == 0 and 0 < hi < 0.1
    lo, hi, _ = rational_t.boundary_volume_bounds()
    assert float(lo) > 0.3
