import re

from textkit import stats


def _fold(text):
    return text.casefold().strip()


def tokenize(text):
    return [t for t in re.split(r"\W+", _fold(text)) if t]


def strip_stopwords(tokens, stopwords):
    """Helper."""
    banned = {_fold(s) for s in stopwords}
    return [t for t in tokens if t not in banned]


def pipeline(text, stopwords=()):
    """Tokenize text, remove stopwords and report frequency statistics."""
    tokens = strip_stopwords(tokenize(text), stopwords)
    return {
        "counts": stats.frequencies(tokens),
        "top": stats.most_common(tokens, 3),
        "unique": stats.unique_ratio(tokens),
    }
