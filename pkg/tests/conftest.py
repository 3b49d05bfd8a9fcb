"""Shared fixtures: benchmark systems and (cached) full analyses."""

from __future__ import annotations

import pytest

from sospi import analysis, benchmarks
from sospi.poly import Polynomial
from sospi.semialg import Partition, PpsSystem, SemiAlgSet


@pytest.fixture(scope="session")
def running():
    return benchmarks.load("running")


def _analyze(name: str, m: int):
    S = benchmarks.load(name)
    opts = analysis.AnalysisOptions(m=m)
    synth = analysis.synth_template(S, m, opts)
    ctx = analysis.Context(S, synth.basis, opts)
    trace = analysis.policy_iterate(ctx, synth.w0)
    return S, synth, ctx, trace


@pytest.fixture(scope="session")
def running6():
    return _analyze("running", 3)


@pytest.fixture(scope="session")
def ex2_4():
    return _analyze("ex2", 2)


@pytest.fixture(scope="session")
def ex1_6():
    return _analyze("ex1", 3)


def halving_system() -> PpsSystem:
    """x' = 0.5 x on R, initial set [-1, 1], a single cell."""
    x = Polynomial.variable(0, 1)
    return PpsSystem(
        x_in=SemiAlgSet.box([(-1.0, 1.0)]),
        x0=SemiAlgSet.whole_space(1),
        partition=Partition((SemiAlgSet.whole_space(1),)),
        updates=((0.5 * x,),),
        variables=("x",),
        name="halving",
    )


def zero_map_system(dim: int = 2) -> PpsSystem:
    zero = Polynomial.zero(dim)
    return PpsSystem(
        x_in=SemiAlgSet.box([(-1.0, 1.0)] * dim),
        x0=SemiAlgSet.whole_space(dim),
        partition=Partition((SemiAlgSet.whole_space(dim),)),
        updates=((zero,) * dim,),
        name="zero",
    )


@pytest.fixture
def halving():
    return halving_system()


# -- acceptance summary ----------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str) -> None:
    """Log one acceptance criterion; the lines are printed at the end of the run."""
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
