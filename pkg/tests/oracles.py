"""Independent reference implementations used as test oracles.

Everything here is a direct nested loop over the dataset, sharing no code
with the vectorised implementations under test beyond the data model.
"""

import itertools

from w5h.core import FEATURE_DIMS

SUBSET_ORDER = [c for r in range(1, 5) for c in itertools.combinations(FEATURE_DIMS, r)]
GROUP_EXTRA = {31: (), 32: ("when",), 33: ("how",), 34: ("when", "where")}


def _dominant(m, o, rows):
    if m is None or o.id not in rows:
        return None
    row = m.n_kd[rows[o.id]]
    best = 0
    for k in range(len(row)):
        if row[k] + m.alpha > row[best] + m.alpha:
            best = k
    return best


def _query_topic(m, terms):
    if m is None:
        return None
    known = [t for t in terms if t in m.vocab]
    if not known:
        return None
    sums = [0] * m.K
    for t in known:
        row = m.n_wk[m.vocab.index(t)]
        for k in range(m.K):
            sums[k] += int(row[k])
    best = 0
    for k in range(m.K):
        if sums[k] > sums[best]:
            best = k
    return best


def _items(q, dim, m):
    if dim == "what":
        t = _query_topic(m, q["what"]) if q["what"] else None
        return [] if t is None else [t]
    out = []
    for it in q[dim]:
        if it not in out:
            out.append(it)
    return out


def _holds(o, dim, item, dom):
    if dim == "what":
        return dom[o.id] == item
    return item in o[dim]


def brute_features(q, o, d, m):
    """Counts x2..x34 (index 0 and x1 left at 0) by looping over all objects."""
    rows = {oid: i for i, oid in enumerate(m.doc_ids)} if m is not None else {}
    dom = {x.id: _dominant(m, x, rows) for x in d}
    x = [0] * 34
    for i, s in enumerate(SUBSET_ORDER, start=1):
        if i == 1:
            continue
        lists = [_items(q, dim, m) for dim in s]
        total = 0
        for combo in itertools.product(*lists):
            if not all(_holds(o, dim, it, dom) for dim, it in zip(s, combo)):
                continue
            for other in d:
                if all(_holds(other, dim, it, dom) for dim, it in zip(s, combo)):
                    total += 1
        x[i - 1] = total
    group = _items(q, "who", m)
    if len(group) >= 2:
        for fi, extra in GROUP_EXTRA.items():
            lists = [_items(q, dim, m) for dim in extra]
            total = 0
            for combo in itertools.product(*lists):
                def has(obj):
                    return all(g in obj["who"] for g in group) and all(
                        _holds(obj, dim, it, dom) for dim, it in zip(extra, combo))
                if has(o):
                    for other in d:
                        if has(other):
                            total += 1
            x[fi - 1] = total
    return x
