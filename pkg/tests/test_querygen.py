import numpy as np
import pytest

from w5h.core import QueryObject, matches
from w5h.features import FeatureExtractor
from w5h.index import build_index
from w5h.querygen import (DEFAULT_TEMPLATES, LabeledRankingSet, NoEligibleTarget, QueryTemplate, build_labeled_set,
                          generate_query, query_rng, split_by_group, target_overlap)

from conftest import make_dataset


def test_template_v1(small_corpus):
    d = small_corpus[0]
    q, target = generate_query(d, QueryTemplate(("what", "who")), seed=3)
    assert len(q["what"]) == 1 and len(q["who"]) == 1
    o = d[target]
    assert q["what"][0] in o["what"] and len(q["what"][0]) >= 3
    assert q["who"][0] in o["who"]
    assert matches(q, o)


def test_when_uses_finest_token(small_corpus):
    d = small_corpus[0]
    for s in range(20):
        q, target = generate_query(d, QueryTemplate(("when",)), seed=s)
        assert len(q["when"][0]) == 10 and q["when"][0] in d[target]["when"]


def test_generate_query_deterministic(small_corpus):
    d = small_corpus[0]
    for s in range(10):
        tpl = DEFAULT_TEMPLATES[s % 4]
        assert generate_query(d, tpl, seed=s) == generate_query(d, tpl, seed=s)


def test_resamples_ineligible_targets():
    d = make_dataset([(f"a{i}", {"what": ["lunch"]}) for i in range(20)] + [("b", {"what": ["budget"], "who": ["x"]})])
    q, target = generate_query(d, QueryTemplate(("what", "who")), seed=0)
    assert target == "b"
    with pytest.raises(NoEligibleTarget):
        generate_query(d, QueryTemplate(("how",)), seed=0, max_retries=50)
    with pytest.raises(NoEligibleTarget):
        generate_query(make_dataset([]), QueryTemplate(("what",)), seed=0)


def test_tf_weighted_what():
    d = make_dataset([("o", {"what": ["common"] * 9 + ["rare"]})])
    picks = [generate_query(d, QueryTemplate(("what",)), seed=s)[0]["what"][0] for s in range(400)]
    assert 0.8 < picks.count("common") / len(picks) < 0.97
    uni = [generate_query(d, QueryTemplate(("what",)), seed=s, uniform_what=True)[0]["what"][0] for s in range(400)]
    assert 0.4 < uni.count("common") / len(uni) < 0.6


def test_template_validation():
    with pytest.raises(ValueError):
        QueryTemplate(("what",), v=0)
    with pytest.raises(ValueError):
        QueryTemplate(("why",))


@pytest.fixture(scope="module")
def labeled(small_corpus):
    d, idx, m, ex = small_corpus
    return build_labeled_set(d, idx, ex, 24, DEFAULT_TEMPLATES, seed=5, list_size=20, check_matches=True)


def test_labeled_set_invariants(small_corpus, labeled):
    d = small_corpus[0]
    labeled.check()
    for r in labeled:
        assert r.labels.sum() == 1 and r.ids[r.target_index] == r.target
        assert all(matches(r.query, d[oid]) for oid in r.ids)
        assert len(r.ids) <= 21 and r.X.shape == (len(r.ids), 34)
        assert r.group == DEFAULT_TEMPLATES[r.qid % 4].group
        if r.target_appended:
            assert r.target_index == len(r.ids) - 1


def test_target_appended_when_outside_list():
    recs = [(f"o{i:02d}", {"what": ["lunch", "lunch", "lunch"], "who": ["ann"]}) for i in range(10)]
    recs.append(("zz", {"what": ["lunch"] + ["xx"] * 30, "who": ["ann"]}))
    d = make_dataset(recs)
    idx = build_index(d)
    ex = FeatureExtractor(d, idx, None)
    appended = 0
    for s in range(30):
        one = build_labeled_set(d, idx, ex, 1, [QueryTemplate(("what", "who"), group=1)], seed=s, list_size=3)
        r = one.queries[0]
        assert r.labels.sum() == 1
        if r.target == "zz":
            assert r.target_appended and r.ids[-1] == "zz" and len(r.ids) == 4
            appended += 1
    assert appended > 0


def test_prefix_reproducible(small_corpus, labeled):
    d, idx, m, ex = small_corpus
    head = build_labeled_set(d, idx, ex, 6, DEFAULT_TEMPLATES, seed=5, list_size=20)
    for a, b in zip(head, labeled.head(6)):
        assert a.query == b.query and a.ids == b.ids and np.array_equal(a.X, b.X)
    g1 = query_rng(5, 3).random(4)
    g2 = query_rng(5, 3).random(4)
    assert np.array_equal(g1, g2) and not np.array_equal(g1, query_rng(6, 3).random(4))


def test_split_by_group(labeled):
    parts = split_by_group(labeled)
    assert sorted(parts) == [1, 2, 3, 4]
    assert sum(len(p) for p in parts.values()) == len(labeled)
    assert all(len(p) == 6 for p in parts.values())
    single = LabeledRankingSet([r for r in labeled if r.group == 2])
    assert list(split_by_group(single)) == [2]


def test_write_read_roundtrip(tmp_path, labeled):
    f, mf = tmp_path / "t.features", tmp_path / "t.manifest.jsonl"
    labeled.write(f, mf, header="config_hash=abc")
    back = LabeledRankingSet.read(f, mf)
    assert f.read_text().startswith("# config_hash=abc\n")
    for a, b in zip(labeled, back):
        assert (a.qid, a.group, a.target, a.ids, a.target_appended) == (b.qid, b.group, b.target, b.ids,
                                                                         b.target_appended)
        assert a.query == b.query
        assert np.array_equal(a.X, b.X) and np.array_equal(a.labels, b.labels)
    f2, mf2 = tmp_path / "u.features", tmp_path / "u.manifest.jsonl"
    back.write(f2, mf2, header="config_hash=abc")
    assert f.read_bytes() == f2.read_bytes() and mf.read_bytes() == mf2.read_bytes()


def test_target_overlap(small_corpus, labeled):
    d, idx, m, ex = small_corpus
    other = build_labeled_set(d, idx, ex, 24, DEFAULT_TEMPLATES, seed=6, list_size=20)
    rep = target_overlap(labeled, other)
    assert rep["targets_a"] <= 24 and rep["shared_pairs"] <= rep["shared_targets"]
    assert target_overlap(labeled, labeled)["shared_pairs"] == len({(r.query.to_string(), r.target)
                                                                    for r in labeled})
