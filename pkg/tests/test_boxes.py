import math

import numpy as np
import pytest

from fractalcover import boxes as bx
from fractalcover.measure import ball_measure, expected_untouched, make_measure
from fractalcover.sampler import LazyProcess, SampleConfig, realization_from_sets, sample_process
from fractalcover.shapes import Ball, PlacedSet

BALLS = ball_measure(2)


def lazy(lam, depth, seed=0, m=BALLS):
    return LazyProcess(SampleConfig(m, lam, depth, seed=seed))


def brute_force_status(r, n):
    """Pure-Python box-by-box oracle for closed balls."""
    s = 2.0 ** -n
    sets = [(p.position, p.scale / 2) for p in r.placed]
    out = np.zeros((2 ** n, 2 ** n), dtype=int)
    for i in range(2 ** n):
        for j in range(2 ** n):
            lo = (i * s, j * s)
            st = bx.UNTOUCHED
            for (cx, cy), rad in sets:
                dx = max(lo[0] - cx, 0.0, cx - lo[0] - s)
                dy = max(lo[1] - cy, 0.0, cy - lo[1] - s)
                if math.hypot(dx, dy) > rad:
                    continue
                far = math.hypot(max(abs(cx - lo[0]), abs(cx - lo[0] - s)),
                                 max(abs(cy - lo[1]), abs(cy - lo[1] - s)))
                if far <= rad:
                    st = bx.COVERED
                    break
                st = bx.TOUCHED
            out[i, j] = st
    return out


def test_empty_realization_counts():
    p = lazy(0.0, 5)
    for n in range(1, 6):
        c = bx.classify_boxes(p, n)
        assert c.m_count == c.M_count == 4 ** n
    assert bx.minimal_cover_count(sample_process(SampleConfig(BALLS, 0.0, 3)), 3) == (64, 64, 64)


def test_single_ball_fixture():
    r = realization_from_sets([PlacedSet(Ball(2), 0.9, (0.5, 0.5))], 1)
    c = bx.classify_boxes(r, 1)
    assert c.m_count == 0 and c.M_count == 4
    assert np.all(c.status == bx.TOUCHED)


def test_open_ball_boundary_contact():
    # the leftmost point (0.5, 0.625) lies on the right face of box (1, 2) at level 2
    for closed, expect in ((True, bx.TOUCHED), (False, bx.UNTOUCHED)):
        r = realization_from_sets([PlacedSet(Ball(2, closed), 0.5, (0.75, 0.625))], 2)
        assert bx.classify_boxes(r, 2).status[1, 2] == expect


def test_against_brute_force_oracle():
    for seed in range(3):
        r = sample_process(SampleConfig(BALLS, 0.6, 4, seed=seed))
        for n in (2, 4):
            assert np.array_equal(bx.classify_boxes(r, n).status, brute_force_status(r, n))


def test_generic_family_is_conservative():
    m = make_measure("snowflake")
    r = sample_process(SampleConfig(m, 4.0, 3, seed=1))
    n = 3
    c = bx.classify_boxes(r, n)
    g = 24
    u = (np.stack(np.meshgrid(np.arange(g + 1), np.arange(g + 1), indexing="ij"), -1).reshape(-1, 2)) / g
    hit_any = np.zeros((2 ** n, 2 ** n), bool)
    all_in_one = np.zeros((2 ** n, 2 ** n), bool)
    for p in r.placed:
        for i in range(2 ** n):
            for j in range(2 ** n):
                inside = p.template.contains(p.to_template((np.array([i, j]) + u) * 2.0 ** -n))
                hit_any[i, j] |= inside.any()
                all_in_one[i, j] |= inside.all()
    assert not np.any(hit_any & (c.status == bx.UNTOUCHED))
    assert np.all(all_in_one[c.status == bx.COVERED])


def test_untouched_boxes_are_not_covered_boxes():
    for seed in range(5):
        c = bx.classify_boxes(lazy(0.9, 6, seed), 6)
        assert np.all(c.not_covered[c.untouched])
        assert c.m_count <= c.M_count
        assert set(map(tuple, c.m_boxes())) <= set(map(tuple, c.M_boxes()))


def test_depth_errors():
    p = lazy(0.3, 3)
    with pytest.raises(ValueError):
        bx.classify_boxes(p, 4)
    with pytest.raises(ValueError):
        bx.subbox_untouched(p, (0, 0), 2, 2)
    with pytest.raises(ValueError):
        bx.uncovered_to_depth(p, 5)


def test_box_list_and_hierarchy_agree_with_full_grid():
    for seed in range(3):
        p = lazy(0.6, 7, seed)
        full = [bx.classify_boxes(p, n).M_count for n in range(1, 8)]
        assert bx.not_covered_counts(p, 7) == full
        grid = np.argwhere(np.ones((16, 16), bool))
        touched, covered = bx.classify_box_list(p, grid, 4)
        st = bx.classify_boxes(p, 4).status.reshape(-1)
        assert np.array_equal(covered, st == bx.COVERED)
        assert np.array_equal(touched, st != bx.UNTOUCHED)


def test_minimal_cover_bracket():
    for seed in range(4):
        r = sample_process(SampleConfig(BALLS, 0.8, 5, seed=seed))
        for n in (3, 5):
            value, lo, hi = bx.minimal_cover_count(r, n)
            assert lo <= value <= hi <= bx.classify_boxes(r, n).M_count


def test_minimal_cover_engineered_full_coverage():
    # four balls of diameter 0.75 around the quadrant centres cover the unit square
    b = Ball(2)
    r = realization_from_sets([PlacedSet(b, 0.75, (x, y)) for x in (0.25, 0.75) for y in (0.25, 0.75)], 2)
    assert bx.minimal_cover_count(r, 2) == (0, 0, 0)


def test_minimal_cover_dense_random_realization():
    r = sample_process(SampleConfig(BALLS, 25.0, 3, seed=0))
    value, lo, hi = bx.minimal_cover_count(r, 3)
    g = np.linspace(0, 1, 513)
    pts = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    hit = np.zeros(pts.shape[0], bool)
    for p in r.placed:
        hit |= np.linalg.norm(pts - np.asarray(p.position), axis=1) <= p.scale / 2
    assert hit.all()
    assert lo <= 0 <= hi and value == 0


def test_subbox_empty_band():
    children = bx.subbox_untouched(lazy(0.0, 5), (1, 2), 2, 3)
    assert children.shape == (64, 2)
    assert children.min(0).tolist() == [8, 16]


def test_subbox_counts_independent_and_rescaled():
    lam, N = 0.5, 3
    a, b = [], []
    for seed in range(300):
        p = lazy(lam, 5, seed)
        a.append(bx.subbox_untouched(p, (0, 0), 2, N).shape[0])
        b.append(bx.subbox_untouched(p, (3, 2), 2, N).shape[0])
    a, b = np.array(a, float), np.array(b, float)
    r = np.corrcoef(a, b)[0, 1]
    assert abs(r) <= 3 / math.sqrt(a.size)
    exact = expected_untouched(BALLS, lam, N)
    for x in (a, b):
        assert abs(x.mean() - exact) <= 3 * x.std(ddof=1) / math.sqrt(x.size)


def test_uncovered_probe_is_monotone():
    for seed in range(6):
        p = lazy(1.2, 10, seed)
        alive = [bx.uncovered_to_depth(p.thinned(lam), 10) is not None for lam in (1.2, 0.9, 0.6, 0.3, 0.0)]
        assert all(x <= y for x, y in zip(alive, alive[1:]))
        assert alive[-1]


def test_counts_csv(tmp_path):
    r = sample_process(SampleConfig(BALLS, 0.5, 3))
    rows = [bx.counts_rows(0, n, bx.classify_boxes(r, n), bx.minimal_cover_count(r, n)) for n in (1, 2, 3)]
    path = tmp_path / "c.csv"
    bx.counts_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "replicate,n,m_n,M_n,L_lower,L_upper"
    assert len(lines) == 4
