import math


def dot(a, b):
    """Dot product of two coordinate sequences of equal length."""
    return sum(x * y for x, y in zip(a, b))


def norm(v):
    """Euclidean length of a coordinate sequence, never negative."""
    return math.sqrt(dot(v, v))


def scale(v, k):
    """Multiply every coordinate of the vector by the factor k."""
    return [k * x for x in v]


def normalize(v):
    """Rescale a nonzero vector so that its length becomes one."""
    n = norm(v)
    if n == 0:
        raise ValueError("zero vector")
    return scale(v, 1 / n)
