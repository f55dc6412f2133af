from lib import fetch
import lib


def get_all(urls):
    return [fetch(u) for u in urls]


def get_one(url):
    return lib.fetch(url)
