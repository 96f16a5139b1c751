import itertools

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from w5h.core import QueryObject
from w5h.features import (N_FEATURES, SUBSETS, FeatureExtractor, InvalidSubset, extract_features,
                          feature_name, format_feature_line, frequency, parse_feature_line, subset_index, subset_of)
from w5h.index import Bm25Params, bm25f_score, build_index
from w5h.synthetic import Pin, SyntheticProfile, generate_synthetic_dataset
from w5h.topics import fit_lda

from conftest import make_dataset
from oracles import brute_features

WORKED_INDEX = {1: ("what",), 2: ("who",), 3: ("when",), 6: ("what", "who"), 7: ("what", "when"),
                9: ("what", "how"), 10: ("who", "when"), 12: ("who", "how"), 16: ("what", "who", "when"),
                18: ("what", "who", "how"), 20: ("what", "when", "how"), 23: ("who", "when", "how"),
                27: ("what", "who", "when", "how")}


def test_subset_index_examples():
    for i, s in WORKED_INDEX.items():
        assert subset_index(s) == i
        assert set(subset_of(i)) == set(s)
    assert subset_index({"how", "who", "when", "what"}) == 27


def test_subset_index_bijection():
    seen = set()
    for r in range(1, 5):
        for s in itertools.combinations(("what", "who", "when", "where", "how"), r):
            seen.add(subset_index(s))
    assert seen == set(range(1, 31))
    assert len(SUBSETS) == 30


def test_invalid_subsets():
    for bad in ((), ("what", "who", "when", "where", "how"), ("why",), ("what", "why")):
        with pytest.raises(InvalidSubset):
            subset_index(bad)
    with pytest.raises(InvalidSubset):
        subset_of(31)


def test_feature_names():
    assert feature_name(27) == "what, who, when, how"
    assert feature_name(34) == "who-group, when, where"


def john_corpus():
    recs = [(f"j{i:02d}", {"what": ["lunch"], "who": ["john"], "how": ["facebook" if i < 4 else "gmail"]})
            for i in range(10)]
    recs += [(f"z{i:02d}", {"what": ["budget"], "who": ["mary"], "how": ["gmail"]}) for i in range(5)]
    d = make_dataset(recs)
    return d, build_index(d), fit_lda(d, K=1, iters=2)


def test_john_in_gmail():
    d, idx, m = john_corpus()
    o = d["j07"]
    assert o["how"] == ("gmail",)
    q = QueryObject({"who": ["john"], "how": ["gmail"]})
    assert frequency({"who"}, q, o, d, m, idx) == 10
    assert frequency({"who", "how"}, q, o, d, m, idx) == 6
    # candidate lacking the query's who item
    assert frequency({"who"}, q, d["z00"], d, m, idx) == 0


def fig1_corpus():
    fig1 = {"what": ["lunch", "restaurant"], "who": ["john"], "when": ["2018", "2018-06", "2018-06-12", "month:06"],
            "how": ["gmail"]}
    recs = [("fig1", fig1),
            ("o2", {"what": ["lunch"], "who": ["john"], "when": ["2017"], "how": ["facebook"]}),
            ("o3", {"what": ["project"], "who": ["mary"], "when": ["2018"], "how": ["gmail"]})]
    d = make_dataset(recs)
    return d, build_index(d), fit_lda(d, K=1, iters=2)


def test_fig1_query_without_how():
    d, idx, m = fig1_corpus()
    q = QueryObject({"when": ["2018"], "who": ["john"], "what": ["lunch"]})
    x = extract_features(q, d["fig1"], d, idx, m)
    assert set(np.flatnonzero(x) + 1) == {1, 2, 3, 6, 7, 10, 16}


def test_fig1_query_with_how():
    # adding the how item activates the remaining listed slots, plus x5 (how) and x14 (when, how)
    d, idx, m = fig1_corpus()
    q = QueryObject({"when": ["2018"], "who": ["john"], "what": ["lunch"], "how": ["gmail"]})
    x = extract_features(q, d["fig1"], d, idx, m)
    assert set(np.flatnonzero(x) + 1) == set(WORKED_INDEX) | {5, 14}
    assert x[26] == 1          # x27: only the Fig. 1 object has all four items
    assert x[1] == 2           # x2: john appears twice


def test_x1_is_what_field_bm25f(small_corpus):
    d, idx, m, ex = small_corpus
    o = d[3]
    q = QueryObject({"what": list(o["what"][:2]), "who": list(o["who"][:1])})
    x = ex.extract(q, o)
    assert x[0] == pytest.approx(bm25f_score(q, o.id, idx, Bm25Params(), dims=("what",)), abs=1e-12)


def test_empty_who_zeroes_who_features(small_corpus):
    d, _, _, ex = small_corpus
    o = d[0]
    x = ex.extract(QueryObject({"what": list(o["what"][:1]), "when": list(o["when"][:1])}), o)
    assert x[1] == 0 and not x[30:].any()


def test_matches_brute_force(small_corpus):
    d, _, m, ex = small_corpus
    r = np.random.default_rng(5)
    for _ in range(40):
        src = d[int(r.integers(len(d)))]
        o = d[int(r.integers(len(d)))] if r.random() < 0.3 else src
        dims = {}
        for dim in ("what", "who", "when", "where", "how"):
            if src[dim] and r.random() < 0.7:
                k = int(r.integers(1, 3))
                dims[dim] = list(r.choice(src[dim], size=min(k, len(src[dim])), replace=False))
        q = QueryObject(dims)
        x = ex.extract(q, o)
        assert x[1:].tolist() == brute_features(q, o, d, m)[1:]


def test_group_features_need_two_people(small_corpus):
    d, _, m, ex = small_corpus
    o = next(o for o in d if len(o["who"]) >= 2)
    q1 = QueryObject({"who": [o["who"][0]], "when": list(o["when"][:1]), "how": list(o["how"])})
    assert not ex.extract(q1, o)[30:].any()
    q2 = QueryObject({"who": list(o["who"][:2]), "when": list(o["when"][:1]), "how": list(o["how"])})
    x = ex.extract(q2, o)
    assert x[30] >= x[31] >= 1 and x[30] >= x[32] >= 1
    assert x[33] == 0           # q2 carries no where item


def test_interaction_weights():
    d, idx, m = john_corpus()
    ex = FeatureExtractor(d, idx, m, interaction_weights={"gmail": 2.0})
    q = QueryObject({"who": ["john"]})
    assert ex.extract(q, d["j00"])[1] == 4 * 1.0 + 6 * 2.0


def test_feature_line_roundtrip():
    x = np.arange(N_FEATURES, dtype=float)
    x[0] = 0.1234567891234
    line = format_feature_line(1, 7, x, "obj-1")
    assert line.startswith("1 qid:7 1:0.1234567891234 2:1 3:2 ")
    assert line.endswith(" # obj-1")
    lab, qid, y, oid = parse_feature_line(line)
    assert (lab, qid, oid) == (1, 7, "obj-1") and np.array_equal(x, y)


# ------------------------------------------------------------------ properties

_PROFILE = SyntheticProfile(n_entities=8, n_topics=2, words_per_topic=8, common_words=4, doc_len=(2, 6),
                            years=(2018, 2018), circle_size=3, where_rate=0.3, n_locations=3)


def _world(seed):
    d = generate_synthetic_dataset(seed, 40, _PROFILE)
    idx = build_index(d)
    m = fit_lda(d, K=2, iters=5, seed=seed)
    return d, idx, m, FeatureExtractor(d, idx, m)


_WORLDS = {}


def world(seed):
    if seed not in _WORLDS:
        _WORLDS[seed] = _world(seed)
    return _WORLDS[seed]


def query_from(o, dims):
    return QueryObject({dim: list(o[dim][:1]) for dim in dims if o[dim]})


@settings(max_examples=80, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 4), st.integers(0, 39), st.integers(1, 30), st.integers(1, 30))
def test_anti_monotone_and_self_count(seed, pos, i, j):
    d, idx, m, ex = world(seed)
    o = d[pos]
    s, t = set(SUBSETS[i - 1]), set(SUBSETS[j - 1])
    q = query_from(o, ("what", "who", "when", "where", "how"))
    x = ex.extract(q, o)
    # slot 1 holds a BM25F score rather than a count
    if i > 1 and s < t and x[j - 1] > 0:
        assert x[j - 1] <= x[i - 1]
    if "what" not in s and all(q[dim] for dim in s):
        # o supplied every item, so it satisfies the combination and counts itself
        assert x[i - 1] >= 1
    assert (x >= 0).all() and (x[1:] <= len(d)).all()


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 4), st.integers(0, 39), st.sampled_from(["who", "when", "how", "where"]),
       st.integers(0, 39))
def test_multi_value_summation(seed, pos, dim, other):
    d, idx, m, ex = world(seed)
    o = d[pos]
    b_items = [it for it in d[other][dim] if it not in o[dim]]
    if not o[dim] or not b_items:
        return
    a, b = o[dim][0], b_items[0]
    base = {k: list(o[k][:1]) for k in ("what", "who", "when", "where", "how") if o[k] and k != dim}
    qa = QueryObject({**base, dim: [a]})
    qb = QueryObject({**base, dim: [b]})
    qab = QueryObject({**base, dim: [a, b]})
    xa, xb, xab = ex.extract(qa, o), ex.extract(qb, o), ex.extract(qab, o)
    for i in range(2, 31):
        if dim in SUBSETS[i - 1]:
            assert xab[i - 1] == xa[i - 1] + xb[i - 1]
