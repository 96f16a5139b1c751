"""LDA topic model fitted by collapsed Gibbs sampling over *what* terms."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .core import Dataset, W5HError

TOPIC_FORMAT = "w5h-lda 1"


class EmptyCorpus(W5HError):
    pass


class ObjectNotInCorpus(W5HError, KeyError):
    pass


@numba.njit(cache=True)
def _seed(seed):
    np.random.seed(seed)


@numba.njit(cache=True)
def _init(words, docs, z, n_wk, n_kd, n_k, K):
    for i in range(words.shape[0]):
        k = np.random.randint(0, K)
        z[i] = k
        n_wk[words[i], k] += 1
        n_kd[docs[i], k] += 1
        n_k[k] += 1


@numba.njit(cache=True)
def _sweep(words, docs, z, n_wk, n_kd, n_k, alpha, beta, vbeta, n_sweeps):
    K = n_k.shape[0]
    p = np.empty(K)
    for _ in range(n_sweeps):
        for i in range(words.shape[0]):
            w = words[i]
            d = docs[i]
            k = z[i]
            n_wk[w, k] -= 1
            n_kd[d, k] -= 1
            n_k[k] -= 1
            total = 0.0
            for t in range(K):
                total += (n_wk[w, t] + beta) / (n_k[t] + vbeta) * (n_kd[d, t] + alpha)
                p[t] = total
            u = np.random.random() * total
            k = 0
            while k < K - 1 and p[k] <= u:
                k += 1
            z[i] = k
            n_wk[w, k] += 1
            n_kd[d, k] += 1
            n_k[k] += 1


@dataclass
class TopicModel:
    K: int
    alpha: float
    beta: float
    seed: int
    iterations: int
    vocab: list[str]
    n_wk: np.ndarray          # (V, K) word-topic counts
    n_kd: np.ndarray          # (D, K) document-topic counts, rows follow ``doc_ids``
    doc_ids: list[str]

    def __post_init__(self):
        self._word = {w: i for i, w in enumerate(self.vocab)}
        self._doc = {d: i for i, d in enumerate(self.doc_ids)}

    @property
    def n_k(self) -> np.ndarray:
        return self.n_wk.sum(axis=0)

    def check_invariants(self, doc_lengths: np.ndarray | None = None) -> None:
        """Assert the count-table identities; cheap enough to run after every sweep."""
        assert (self.n_wk >= 0).all() and (self.n_kd >= 0).all()
        assert np.array_equal(self.n_wk.sum(axis=0), self.n_kd.sum(axis=0))
        totals = getattr(self, "_totals", None)
        if totals is not None:
            assert np.array_equal(self.n_wk.sum(axis=0), totals)
        if doc_lengths is not None:
            assert np.array_equal(self.n_kd.sum(axis=1), doc_lengths)

    def proportions(self, oid: str) -> np.ndarray:
        row = self.n_kd[self._row(oid)] + self.alpha
        return row / row.sum()

    def _row(self, oid: str) -> int:
        try:
            return self._doc[oid]
        except KeyError:
            raise ObjectNotInCorpus(oid) from None

    def dominant_topic(self, oid: str) -> int:
        return int(np.argmax(self.n_kd[self._row(oid)] + self.alpha))

    def dominant_topics(self, ids: list[str]) -> np.ndarray:
        """Dominant topic per id, -1 for ids outside the corpus (empty *what*)."""
        out = np.full(len(ids), -1, dtype=np.int64)
        dom = np.argmax(self.n_kd + self.alpha, axis=1)
        for i, oid in enumerate(ids):
            r = self._doc.get(oid)
            if r is not None:
                out[i] = dom[r]
        return out

    def query_topic(self, what_terms) -> int | None:
        rows = [self._word[t] for t in what_terms if t in self._word]
        if not rows:
            return None
        return int(np.argmax(self.n_wk[rows].sum(axis=0)))

    def top_words(self, k: int, n: int = 10) -> list[str]:
        order = np.lexsort((np.arange(len(self.vocab)), -self.n_wk[:, k]))
        return [self.vocab[i] for i in order[:n]]

    # ----------------------------------------------------------- persistence
    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"{TOPIC_FORMAT}\n")
            fh.write(f"K {self.K}\nalpha {self.alpha!r}\nbeta {self.beta!r}\n")
            fh.write(f"seed {self.seed}\niterations {self.iterations}\n")
            fh.write(f"vocab {len(self.vocab)}\n")
            for w, row in zip(self.vocab, self.n_wk):
                fh.write(w + "\t" + _sparse(row) + "\n")
            fh.write(f"docs {len(self.doc_ids)}\n")
            for d, row in zip(self.doc_ids, self.n_kd):
                fh.write(d + "\t" + _sparse(row) + "\n")

    @classmethod
    def load(cls, path) -> "TopicModel":
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        if lines[0] != TOPIC_FORMAT:
            raise W5HError(f"not a topic model file: {path}")
        head = dict(line.split(" ", 1) for line in lines[1:6])
        K = int(head["K"])
        at = 6
        V = int(lines[at].split(" ")[1])
        vocab, n_wk = _read_block(lines[at + 1:at + 1 + V], K)
        at += 1 + V
        D = int(lines[at].split(" ")[1])
        doc_ids, n_kd = _read_block(lines[at + 1:at + 1 + D], K)
        return cls(K, float(head["alpha"]), float(head["beta"]), int(head["seed"]),
                   int(head["iterations"]), vocab, n_wk, n_kd, doc_ids)


def _sparse(row: np.ndarray) -> str:
    return " ".join(f"{k}:{int(c)}" for k, c in enumerate(row) if c)


def _read_block(lines, K):
    keys = []
    mat = np.zeros((len(lines), K), dtype=np.int64)
    for i, line in enumerate(lines):
        key, _, rest = line.partition("\t")
        keys.append(key)
        for pair in rest.split():
            k, c = pair.split(":")
            mat[i, int(k)] = int(c)
    return keys, mat


def lda_corpus(d: Dataset, max_doc_tokens: int | None = None) -> tuple[list[str], list[list[str]]]:
    ids, docs = [], []
    for o in d:
        terms = list(o["what"])
        if max_doc_tokens:
            terms = terms[:max_doc_tokens]
        if terms:
            ids.append(o.id)
            docs.append(terms)
    return ids, docs


def fit_lda(d: Dataset, K: int = 50, alpha: float | None = None, beta: float = 0.01,
            iters: int = 1000, seed: int = 0, *, max_doc_tokens: int | None = None,
            on_sweep=None) -> TopicModel:
    """Collapsed Gibbs LDA.

    Parameters
    ----------
    alpha : float, optional
        Symmetric document-topic prior, default ``50 / K``.
    max_doc_tokens : int, optional
        Only the first this-many *what* terms of a document enter the sampler.
    on_sweep : callable, optional
        Called as ``on_sweep(sweep_number, model)`` after every sweep. The
        sampler's random stream does not depend on whether this is given.
    """
    if K < 1 or iters < 1:
        raise ValueError("K and iters must be >= 1")
    alpha = 50.0 / K if alpha is None else float(alpha)
    doc_ids, docs = lda_corpus(d, max_doc_tokens)
    if not docs:
        raise EmptyCorpus("no object has a non-empty what dimension")
    vocab = sorted({t for doc in docs for t in doc})
    wid = {w: i for i, w in enumerate(vocab)}
    words = np.fromiter((wid[t] for doc in docs for t in doc), np.int64)
    doc_of = np.repeat(np.arange(len(docs), dtype=np.int64), [len(doc) for doc in docs])
    n_wk = np.zeros((len(vocab), K), np.int64)
    n_kd = np.zeros((len(docs), K), np.int64)
    n_k = np.zeros(K, np.int64)
    z = np.zeros(len(words), np.int64)
    _seed(seed)
    _init(words, doc_of, z, n_wk, n_kd, n_k, K)
    model = TopicModel(K, alpha, float(beta), seed, iters, vocab, n_wk, n_kd, doc_ids)
    model._totals = n_k
    vbeta = len(vocab) * beta
    if on_sweep is None:
        _sweep(words, doc_of, z, n_wk, n_kd, n_k, alpha, beta, vbeta, iters)
    else:
        for it in range(iters):
            _sweep(words, doc_of, z, n_wk, n_kd, n_k, alpha, beta, vbeta, 1)
            on_sweep(it + 1, model)
    return model


def dominant_topic(m: TopicModel, oid: str) -> int:
    return m.dominant_topic(oid)


def query_topic(m: TopicModel, what_terms) -> int | None:
    return m.query_topic(what_terms)
