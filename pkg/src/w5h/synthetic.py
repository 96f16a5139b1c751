"""Seeded synthetic personal-trace corpora with controllable co-occurrence."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, TraceObject, W5HError
from .ingest import normalize_when
from .textproc import STOPWORDS


class InvalidProfile(W5HError):
    pass


_FIRST = ["alice", "bruno", "carla", "diego", "elena", "felix", "greta", "hugo", "irene", "jonas",
          "karen", "lucas", "marta", "nadia", "oscar", "paula", "quinn", "rosa", "samir", "tania",
          "ulric", "vera", "walter", "xenia", "yusuf", "zoe"]
_LAST = ["adams", "baker", "costa", "dubois", "evans", "fischer", "garcia", "hansen", "ito", "jensen",
         "kowalski", "lopez", "moreau", "novak", "olsen", "petrov", "quist", "rossi", "silva", "tanaka"]
_CONS = "bcdfghklmnprstvz"
_VOW = "aeiou"


@dataclass
class Pin:
    """Inject ``count`` objects mentioning ``who``; ``how`` fixes per-source counts among them."""

    who: str
    count: int
    how: dict[str, int] = field(default_factory=dict)
    when: str | None = None


@dataclass
class SyntheticProfile:
    n_entities: int = 40
    n_topics: int = 6
    words_per_topic: int = 30
    common_words: int = 40
    doc_len: tuple[int, int] = (6, 25)
    topic_purity: float = 0.8
    sources: dict[str, float] = field(default_factory=lambda: {"gmail": 0.5, "facebook": 0.3, "calendar": 0.2})
    years: tuple[int, int] = (2014, 2019)
    who_per_object: tuple[int, int] = (1, 3)
    circle_size: int = 6
    circle_loyalty: float = 0.8
    where_rate: float = 0.05
    n_locations: int = 10
    pins: list[Pin] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticProfile":
        d = dict(d)
        if "pins" in d:
            d["pins"] = [p if isinstance(p, Pin) else Pin(**p) for p in d["pins"]]
        for k in ("doc_len", "years", "who_per_object"):
            if k in d:
                d[k] = tuple(d[k])
        try:
            return cls(**d)
        except TypeError as e:
            raise InvalidProfile(str(e)) from None


def _pseudo_words(n: int, rng: np.random.Generator) -> list[str]:
    words: list[str] = []
    seen = set()
    while len(words) < n:
        k = int(rng.integers(2, 4))
        w = "".join(_CONS[rng.integers(len(_CONS))] + _VOW[rng.integers(len(_VOW))] for _ in range(k))
        if w not in seen and w not in STOPWORDS:
            seen.add(w)
            words.append(w)
    return words


def _check(profile: SyntheticProfile, n_objects: int) -> np.ndarray:
    if n_objects < 1:
        raise InvalidProfile("n_objects must be >= 1")
    names = list(profile.sources)
    p = np.array([profile.sources[s] for s in names], dtype=float)
    if not names or np.any(p < 0) or not np.isfinite(p).all() or p.sum() <= 0:
        raise InvalidProfile("source proportions must be non-negative with a positive sum")
    if profile.n_topics < 1 or profile.n_entities < 1 or profile.words_per_topic < 1:
        raise InvalidProfile("topic, entity and vocabulary sizes must be positive")
    if not 0 <= profile.topic_purity <= 1 or not 0 <= profile.where_rate <= 1:
        raise InvalidProfile("rates must lie in [0, 1]")
    lo, hi = profile.doc_len
    if lo < 1 or hi < lo:
        raise InvalidProfile("doc_len must satisfy 1 <= lo <= hi")
    if sum(pin.count for pin in profile.pins) > n_objects:
        raise InvalidProfile("pins need more objects than n_objects")
    for pin in profile.pins:
        if sum(pin.how.values()) > pin.count:
            raise InvalidProfile(f"pin {pin.who!r}: per-source counts exceed count")
    return p / p.sum()


def generate_synthetic_dataset(seed: int, n_objects: int, profile: SyntheticProfile | None = None) -> Dataset:
    """Deterministic corpus for tests and experiments.

    Each object draws a latent topic; its words come mostly from that topic's
    block, its people mostly from the topic's social circle. Pinned entities
    appear in exactly the pinned objects and nowhere else.
    """
    profile = profile or SyntheticProfile()
    src_p = _check(profile, n_objects)
    sources = list(profile.sources)
    rng = np.random.default_rng(seed)

    pinned = {pin.who for pin in profile.pins}
    people = [f"{f} {l}" for f, l in itertools.product(_FIRST, _LAST) if f"{f} {l}" not in pinned]
    people = [people[i] for i in rng.permutation(len(people))[:profile.n_entities]]
    vocab = _pseudo_words(profile.n_topics * profile.words_per_topic + profile.common_words, rng)
    blocks = [vocab[t * profile.words_per_topic:(t + 1) * profile.words_per_topic] for t in range(profile.n_topics)]
    common = vocab[profile.n_topics * profile.words_per_topic:]
    circles = [rng.choice(len(people), size=min(profile.circle_size, len(people)), replace=False)
               for _ in range(profile.n_topics)]
    places = [f"place {w}" for w in _pseudo_words(profile.n_locations, rng)] if profile.n_locations else []
    y0, y1 = profile.years
    span = (np.datetime64(f"{y1 + 1}-01-01") - np.datetime64(f"{y0}-01-01")).astype(int)

    # Pinned objects first, so their placement is independent of the random tail.
    forced: list[tuple[str | None, str | None, str | None]] = []
    for pin in profile.pins:
        hows = [h for h, c in sorted(pin.how.items()) for _ in range(c)]
        hows += [None] * (pin.count - len(hows))
        forced.extend((pin.who, h, pin.when) for h in hows)
    other_sources = [s for s in sources]

    ds = Dataset()
    width = len(str(n_objects))
    for i in range(n_objects):
        topic = int(rng.integers(profile.n_topics))
        n_words = int(rng.integers(profile.doc_len[0], profile.doc_len[1] + 1))
        from_topic = rng.random(n_words) < profile.topic_purity
        block = blocks[topic]
        what = [block[rng.integers(len(block))] if ft or not common else common[rng.integers(len(common))]
                for ft in from_topic]
        n_who = int(rng.integers(profile.who_per_object[0], profile.who_per_object[1] + 1))
        who = []
        for _ in range(n_who):
            if rng.random() < profile.circle_loyalty:
                who.append(people[circles[topic][rng.integers(len(circles[topic]))]])
            else:
                who.append(people[rng.integers(len(people))])
        how = sources[int(rng.choice(len(sources), p=src_p))]
        day = np.datetime64(f"{y0}-01-01") + int(rng.integers(span))
        when_text = str(day)
        where = [places[rng.integers(len(places))]] if places and rng.random() < profile.where_rate else []
        if i < len(forced):
            pw, ph, pwhen = forced[i]
            who = [pw] + who
            if ph is not None:
                how = ph
            else:
                # unconstrained pinned objects avoid the explicitly counted sources
                pinned_srcs = {h for pin in profile.pins if pin.who == pw for h in pin.how}
                free = [s for s in other_sources if s not in pinned_srcs] or ["other"]
                how = free[int(rng.integers(len(free)))]
            if pwhen is not None:
                when_text = pwhen
        ds.add(TraceObject(f"syn{seed}-{i:0{width}d}", {
            "what": what, "who": tuple(dict.fromkeys(who)), "when": normalize_when(when_text),
            "where": where, "how": (how,)}))
    return ds.freeze()
