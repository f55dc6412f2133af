def step0(x):
    """Stage 0 of a long chain of nested transformations."""
    return step1(x) + 1


def step1(x):
    """Stage 1 of a long chain of nested transformations."""
    return step2(x) + 1


def step2(x):
    """Stage 2 of a long chain of nested transformations."""
    return step3(x) + 1


def step3(x):
    """Stage 3 of a long chain of nested transformations."""
    return step4(x) + 1


def step4(x):
    """Stage 4 of a long chain of nested transformations."""
    return step5(x) + 1


def step5(x):
    """Stage 5 of a long chain of nested transformations."""
    return step6(x) + 1


def step6(x):
    """Stage 6 of a long chain of nested transformations."""
    return step7(x) + 1


def step7(x):
    """Stage 7 of a long chain of nested transformations."""
    return x
