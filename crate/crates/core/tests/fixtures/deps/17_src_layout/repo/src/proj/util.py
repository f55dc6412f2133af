def norm(s):
    return s.strip()
