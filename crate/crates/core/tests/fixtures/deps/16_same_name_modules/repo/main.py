from fmt import json as j
from fmt.xml import parse


def both(s):
    return j.parse(s), parse(s)
