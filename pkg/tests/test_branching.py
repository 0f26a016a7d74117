import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fractalcover import branching as br
from fractalcover.boxes import classify_boxes
from fractalcover.measure import ball_measure, lambda_e_closed
from fractalcover.sampler import LazyProcess, SampleConfig

BALLS = ball_measure(2)
LAM_E = lambda_e_closed(BALLS)


def lazy(lam, depth, seed=0):
    return LazyProcess(SampleConfig(BALLS, lam, depth, seed=seed))


def pair_gaps(boxes):
    """Chebyshev index distance of every pair (>= 2 means distance >= one side)."""
    if len(boxes) < 2:
        return np.array([np.inf])
    diff = np.abs(boxes[:, None] - boxes[None]).max(axis=2)
    return diff[np.triu_indices(len(boxes), 1)]


# ---------------------------------------------------------------- packing

def test_empty_packing():
    assert br.maximal_separated_subset(np.zeros((0, 2), np.int64)).shape == (0, 2)


def test_four_level_one_boxes():
    w = br.maximal_separated_subset([[1, 1], [0, 1], [1, 0], [0, 0]])
    assert w.tolist() == [[0, 0]]
    assert len(w) >= 4 / 9


@pytest.mark.parametrize("N,d", [(1, 2), (3, 2), (5, 2), (3, 3)])
def test_full_grid_gives_every_other_box(N, d):
    grid = np.argwhere(np.ones((2 ** N,) * d, bool))
    w = br.maximal_separated_subset(grid)
    assert len(w) == 2 ** ((N - 1) * d)
    assert np.all(w % 2 == 0)
    assert pair_gaps(w).min() >= 2


def test_sparse_fallback_matches_dense():
    rng = np.random.default_rng(0)
    pts = rng.integers(0, 40, (300, 2))
    pts = np.unique(pts, axis=0)
    dense = br.maximal_separated_subset(pts)
    # one far away box makes the bounding grid too large for the dense path
    sparse = br.maximal_separated_subset(np.vstack([pts, [[10 ** 9, 10 ** 9]]]))
    assert len(sparse) == len(dense) + 1
    assert np.array_equal(sparse[:-1], dense)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 15), st.integers(0, 15)), min_size=1, max_size=120, unique=True))
def test_packing_properties(cells):
    m = np.array(cells, dtype=np.int64)
    w = br.maximal_separated_subset(m)
    assert len(w) >= len(m) / 9
    assert pair_gaps(w).min() >= 2
    # maximal: every rejected box neighbours a chosen one
    chosen = {tuple(x) for x in w}
    assert chosen <= {tuple(x) for x in m}
    for x in m:
        if tuple(x) not in chosen:
            assert np.abs(w - x).max(axis=1).min() <= 1


# ---------------------------------------------------------------- embedding

def test_zero_intensity_growth_is_maximal():
    N, L = 3, 4
    rec = br.run_embedding(lazy(0.0, N * L), N, L)
    assert [r.Z for r in rec] == [2 ** (2 * (N - 1) * l) for l in range(1, L + 1)]
    for r in rec[1:]:
        assert np.all(r.offspring == 2 ** (2 * (N - 1)))
    g = br.growth_rate_estimate(rec)
    assert g.defined and g.mean_offspring == 2 ** (2 * (N - 1)) and g.se == 0


def test_generations_are_nested():
    N, L = 3, 3
    rec = br.run_embedding(lazy(0.3, N * L, seed=2), N, L)
    for parent, child in zip(rec, rec[1:]):
        up = child.boxes >> N
        assert {tuple(x) for x in up} <= {tuple(x) for x in parent.boxes}
        assert child.Z == child.offspring.sum()
        assert pair_gaps(child.boxes).min() >= 2


def test_first_generation_packs_the_untouched_boxes():
    for seed in range(5):
        p = lazy(0.3, 6, seed)
        rec = br.run_embedding(p, 3, 2)
        m = classify_boxes(p, 3)
        assert rec[0].untouched == m.m_count
        assert {tuple(x) for x in rec[0].boxes} <= {tuple(x) for x in m.m_boxes()}
        assert rec[0].Z >= m.m_count / 9


def test_dfs_survival_matches_breadth_first():
    for seed in range(8):
        p = lazy(0.55 * LAM_E, 12, seed)
        rec = br.run_embedding(p, 4, 3)
        assert br.embedding_survives(p, 4, 3) == br.survived(rec, 3)


def test_depth_checks():
    with pytest.raises(ValueError):
        br.run_embedding(lazy(0.3, 5), 3, 2)
    with pytest.raises(ValueError):
        br.run_embedding(lazy(0.3, 5), 0, 2)


def test_max_parents_truncates():
    rec = br.run_embedding(lazy(0.0, 6), 2, 3, max_parents=2)
    assert rec[1].truncated and rec[1].processed_parents == 2


def test_choose_N():
    lam = 0.5 * LAM_E
    eps = 0.99 * br.max_admissible_eps(BALLS, lam)
    assert br.choose_N(BALLS, lam, eps) == (8, "criterion")
    with pytest.raises(ValueError):
        br.choose_N(BALLS, 1.5 * LAM_E, 0.1)
    assert br.choose_N(BALLS, 1.5 * LAM_E, 0.1, override=5) == (5, "override")


def test_growth_estimate_above_bound_and_decreasing():
    # N from the packing criterion at lambda_e / 2, swept by coupled thinning
    lam = 0.5 * LAM_E
    eps = 0.99 * br.max_admissible_eps(BALLS, lam)
    N, _ = br.choose_N(BALLS, lam, eps)
    est = []
    for factor in (0.3, 0.4, 0.5):
        recs = []
        for seed in range(8):
            top = lazy(lam, 2 * N, seed)
            recs.append(br.run_embedding(top.thinned(factor * LAM_E), N, 2, max_parents=4))
        pooled = [br.GenerationRecord(2, np.zeros((0, 2), np.int64),
                                      np.concatenate([r[1].offspring for r in recs if len(r) > 1]), 0, 1)]
        est.append(br.growth_rate_estimate([recs[0][0]] + pooled))
    bound = br.growth_bound(BALLS, lam, eps, N)
    assert est[-1].mean_offspring >= bound - 3 * est[-1].se
    for a, b in zip(est, est[1:]):
        assert a.mean_offspring - b.mean_offspring > -3 * math.hypot(a.se, b.se)
    assert est[0].mean_offspring > est[-1].mean_offspring


def test_growth_estimate_undefined_when_extinct():
    g = br.growth_rate_estimate([br.GenerationRecord(1, np.zeros((0, 2), np.int64))])
    assert not g.defined


def test_generation_rows(tmp_path):
    rec = br.run_embedding(lazy(0.0, 4), 2, 2)
    rows = br.generation_rows(0, rec)
    assert rows[0]["mean_offspring"] == "" and rows[1]["mean_offspring"] == 4.0
    path = tmp_path / "g.csv"
    br.generations_csv(rows, path)
    assert path.read_text().splitlines()[0] == "replicate,l,Z_l,mean_offspring"
