"""Benchmark programs shipped with the package."""

from importlib import resources

NAMES = ("running", "ex1", "ex2", "ex3", "ex3_corrected", "ex4")


def path(name: str):
    if name not in NAMES:
        raise KeyError(f"unknown benchmark {name!r}; choose from {', '.join(NAMES)}")
    return resources.files(__name__) / f"{name}.pps"


def load(name: str):
    from ..frontend import lower, parse

    return lower(parse(path(name).read_text(encoding="utf-8")), name=name)
