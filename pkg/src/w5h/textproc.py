"""Tokenization and the built-in English stopword list."""

from __future__ import annotations

import re

# NLTK's English list plus a few mail artifacts; kept inline so indexing never
# depends on a download.
STOPWORDS = frozenset("""
i me my myself we our ours ourselves you your yours yourself yourselves he him
his himself she her hers herself it its itself they them their theirs
themselves what which who whom this that these those am is are was were be
been being have has had having do does did doing a an the and but if or
because as until while of at by for with about against between into through
during before after above below to from up down in out on off over under
again further then once here there when where why how all any both each few
more most other some such no nor not only own same so than too very s t can
will just don should now d ll m o re ve y ain aren couldn didn doesn hadn
hasn haven isn ma mightn mustn needn shan shouldn wasn weren won wouldn
also would could may might must shall cc re fw fwd
""".split())

_TOKEN = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")
_TAG = re.compile(r"<[^>]*>")


def strip_html(text: str) -> str:
    return _TAG.sub(" ", text)


def tokenize(text: str, *, stopwords=STOPWORDS) -> list[str]:
    """Lowercase, split on anything that is not a letter or digit, drop stopwords.

    Apostrophe suffixes are cut (``john's`` -> ``john``). Order and duplicates
    are preserved because term frequencies matter downstream.
    """
    out = []
    for tok in _TOKEN.findall(text.lower()):
        tok = tok.split("'", 1)[0]
        if tok and tok not in stopwords:
            out.append(tok)
    return out


def normalize_term(term: str) -> str | None:
    toks = tokenize(term)
    return toks[0] if len(toks) == 1 else None
