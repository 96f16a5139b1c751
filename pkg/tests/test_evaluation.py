import json
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import wilcoxon as scipy_wilcoxon

from w5h.evaluation import (MethodRun, TooFewPairs, compare_runs, mrr_at, rank_of, ranks_from_scores,
                            reciprocal_ranks, render_importance, render_table, success_at, wilcoxon_signed_rank)

# Hollander & Wolfe depression-scale pairs; published V = 40, two-sided p = 0.0390625
HW_X = [1.83, 0.50, 1.62, 2.48, 1.68, 1.88, 1.55, 3.06, 1.30]
HW_Y = [0.878, 0.647, 0.598, 2.05, 1.06, 1.29, 1.06, 3.14, 1.29]

# ten pairs with one zero difference and a tie; published W = 9 over Nr = 9
WIKI_A = [125, 115, 130, 140, 140, 115, 140, 125, 140, 135]
WIKI_B = [110, 122, 125, 120, 140, 124, 123, 137, 135, 145]


def run(ranks, groups=None):
    return MethodRun("m", list(range(len(ranks))), np.array(ranks), groups or [])


def test_mrr_and_success_fixture():
    r = run([1, 2, 4])
    assert mrr_at(r) == pytest.approx((1 + 0.5 + 0.25) / 3, abs=1e-15)
    assert success_at(r, 1) == pytest.approx(1 / 3, abs=1e-15)
    assert success_at(r, 3) == pytest.approx(2 / 3, abs=1e-15)
    assert success_at(r, 10) == 1.0


def test_cutoff_and_missing():
    r = run([1, 51, 0, 50])
    assert mrr_at(r, 50) == pytest.approx((1 + 1 / 50) / 4, abs=1e-15)
    assert reciprocal_ranks([0, 3], 50).tolist() == [0.0, 1 / 3]
    assert mrr_at(run([])) == 0.0


def test_rank_of_and_stacked_ranks():
    s = np.array([0.5, 0.9, 0.5, 0.1])
    assert rank_of(s, 0) == 2 and rank_of(s, 2) == 3
    assert rank_of(s, 2, tiekey=np.array([3, 0, 1, 2])) == 2
    scores = np.array([0.1, 0.3, 0.3, 0.2, 0.9])
    labels = np.array([0, 0, 1, 1, 0])
    bounds = np.array([0, 3, 5])
    assert ranks_from_scores(scores, labels, bounds, np.array([0, 1, 2, 0, 1])).tolist() == [2, 2]


def test_mrr_recomputed_from_raw_scores(rng):
    lists = [rng.random(int(rng.integers(2, 80))) for _ in range(50)]
    targets = [int(rng.integers(len(s))) for s in lists]
    ranks = [rank_of(s, t) for s, t in zip(lists, targets)]
    brute = []
    for s, t in zip(lists, targets):
        order = sorted(range(len(s)), key=lambda i: (-s[i], i))
        r = order.index(t) + 1
        brute.append(1 / r if r <= 50 else 0.0)
    assert mrr_at(run(ranks)) == pytest.approx(float(np.mean(brute)), abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 120), min_size=1, max_size=60))
def test_metric_bounds_and_monotone_success(ranks):
    r = run(ranks)
    s = [success_at(r, k) for k in range(1, 60)]
    assert all(a <= b for a, b in zip(s, s[1:]))
    assert success_at(r, 1) <= mrr_at(r) <= success_at(r, 50) <= 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-40, 40), min_size=2, max_size=40), st.integers(0, 39))
def test_rank_invariant_to_increasing_transform(scores, t):
    s = np.array(scores) / 8.0
    t = t % len(s)
    assert rank_of(s, t) == rank_of(np.exp(s) * 3 + 1, t)


def test_wilcoxon_published_exact():
    r = wilcoxon_signed_rank(HW_X, HW_Y, min_pairs=9)
    assert r.t_plus == 40 and r.method == "exact"
    assert r.p == pytest.approx(0.0390625, abs=1e-3)


def test_wilcoxon_critical_table_n10():
    # ranks 1 and 7 negative gives T = 8, the n = 10 two-sided 0.05 critical value
    d = np.arange(1, 11.0) * np.array([-1 if i in (1, 7) else 1 for i in range(1, 11)])
    r = wilcoxon_signed_rank(d, np.zeros(10))
    assert r.T == 8
    assert r.p == pytest.approx(2 * 0.0244, abs=1e-3)


def test_wilcoxon_ties_and_zeros():
    r = wilcoxon_signed_rank(WIKI_A, WIKI_B, min_pairs=9)
    assert r.n == 9 and r.W == 9 and r.method == "normal"
    ref = scipy_wilcoxon(WIKI_A, WIKI_B, correction=True, method="approx", zero_method="wilcox")
    assert r.p == pytest.approx(ref.pvalue, abs=1e-9)


def test_wilcoxon_normal_matches_scipy(rng):
    a = rng.normal(size=300)
    b = a + rng.normal(0.1, 1, size=300)
    b[:20] = a[:20]
    r = wilcoxon_signed_rank(a, b, mode="normal")
    ref = scipy_wilcoxon(a, b, correction=True, method="approx", zero_method="wilcox")
    assert r.p == pytest.approx(ref.pvalue, abs=1e-9)


def test_wilcoxon_exact_enumeration():
    # brute force over all 2^n sign patterns for small n
    n = 8
    tp = [sum(r for r, s in zip(range(1, n + 1), signs) if s) for signs in product([0, 1], repeat=n)]
    d = np.array([1, -2, 3, 4, -5, 6, 7, 8.0])
    obs = sum(i + 1 for i in range(n) if d[i] > 0)
    le = sum(t <= obs for t in tp)
    ge = sum(t >= obs for t in tp)
    r = wilcoxon_signed_rank(d, np.zeros(n), mode="exact", min_pairs=1)
    assert r.p == pytest.approx(min(1.0, 2 * min(le, ge) / 2 ** n), abs=1e-15)


def test_wilcoxon_errors_and_symmetry(rng):
    a = rng.random(30)
    with pytest.raises(TooFewPairs):
        wilcoxon_signed_rank(a, a)
    with pytest.raises(ValueError):
        wilcoxon_signed_rank(a, a[:-1])
    b = rng.random(30)
    r1, r2 = wilcoxon_signed_rank(a, b), wilcoxon_signed_rank(b, a)
    assert r1.W == -r2.W and r1.p == r2.p


def test_compare_runs_report():
    groups = [1, 1, 2, 2, 2] * 4
    a = MethodRun("bm25", list(range(20)), np.array([1, 3, 2, 0, 5] * 4), groups)
    b = MethodRun("bm25f", list(range(20)), np.array([1, 1, 2, 1, 2] * 4), groups)
    c = MethodRun("w5h-l2r", list(range(20)), np.array([1, 3, 2, 0, 5] * 4), groups)
    rows = compare_runs({"bm25": a, "bm25f": b, "w5h-l2r": c})
    by = {(r.group, r.method): r for r in rows}
    assert set(g for g, _ in by) == {"group1", "group2", "all"}
    assert by[("all", "bm25")].mrr == by[("all", "w5h-l2r")].mrr
    for m in ("bm25", "bm25f"):
        g1, g2, tot = by[("group1", m)], by[("group2", m)], by[("all", m)]
        assert g1.n_queries + g2.n_queries == tot.n_queries
        assert (g1.mrr * g1.n_queries + g2.mrr * g2.n_queries) / tot.n_queries == pytest.approx(tot.mrr, abs=1e-12)
    assert by[("all", "bm25")].p_values["w5h-l2r"] is None
    text = render_table(rows)
    assert "All queries (20 queries)" in text and "s@10" in text
    json.loads(rows[0].to_json())
    assert "x10" in render_importance({10: 5, 1: 2})
