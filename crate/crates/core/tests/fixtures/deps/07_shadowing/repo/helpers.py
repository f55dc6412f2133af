def render(x):
    return str(x)
