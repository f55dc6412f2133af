from geometry import *


def report(w, h):
    return "area=%d" % area(w, h)


def twice(w, h):
    return 2 * report(w, h)
