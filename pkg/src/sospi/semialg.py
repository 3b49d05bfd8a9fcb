"""Basic semi-algebraic sets, partitions and the piecewise polynomial system model."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .poly import Polynomial

log = logging.getLogger(__name__)

LT = "<"
LE = "<="
COMPARATORS = (LT, LE)


@dataclass(frozen=True)
class Constraint:
    """``poly(x) < 0`` or ``poly(x) <= 0``."""

    poly: Polynomial
    op: str = LE

    def __post_init__(self):
        if self.op not in COMPARATORS:
            raise ValueError(f"comparator must be one of {COMPARATORS}, got {self.op!r}")

    def holds(self, x: Sequence[float]) -> bool:
        v = self.poly.eval(x)
        return v < 0 if self.op == LT else v <= 0

    def holds_many(self, points: np.ndarray) -> np.ndarray:
        v = self.poly.eval_many(points)
        return v < 0 if self.op == LT else v <= 0

    def to_json(self) -> dict:
        return {"poly": self.poly.to_json(), "op": self.op}


@dataclass(frozen=True)
class SemiAlgSet:
    """Conjunction of polynomial sign constraints; no constraints means all of R^d."""

    dim: int
    constraints: tuple[Constraint, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        for c in self.constraints:
            if c.poly.dim != self.dim:
                raise ValueError(f"constraint {c.poly} has dimension {c.poly.dim}, set has {self.dim}")

    @classmethod
    def whole_space(cls, dim: int) -> SemiAlgSet:
        return cls(dim, ())

    @classmethod
    def box(cls, bounds: Sequence[tuple[float, float]]) -> SemiAlgSet:
        """Box encoded as ``(x_i - a_i)(x_i - b_i) <= 0`` per coordinate."""
        dim = len(bounds)
        cons = []
        for i, (a, b) in enumerate(bounds):
            if a > b:
                raise ValueError(f"empty interval [{a}, {b}]")
            xi = Polynomial.variable(i, dim)
            cons.append(Constraint((xi - a) * (xi - b), LE))
        return cls(dim, tuple(cons))

    @property
    def polys(self) -> list[Polynomial]:
        return [c.poly for c in self.constraints]

    def is_whole_space(self) -> bool:
        return not self.constraints

    def contains(self, x: Sequence[float]) -> bool:
        return all(c.holds(x) for c in self.constraints)

    def contains_many(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        mask = np.ones(points.shape[0], dtype=bool)
        for c in self.constraints:
            mask &= c.holds_many(points)
        return mask

    def intersect(self, other: SemiAlgSet) -> SemiAlgSet:
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        return SemiAlgSet(self.dim, self.constraints + other.constraints)

    def to_json(self) -> list:
        return [c.to_json() for c in self.constraints]

    @classmethod
    def from_json(cls, data: list, dim: int) -> SemiAlgSet:
        return cls(dim, tuple(Constraint(Polynomial.from_json(c["poly"], dim), c["op"]) for c in data))


def membership(s: SemiAlgSet, x: Sequence[float]) -> bool:
    return s.contains(x)


@dataclass(frozen=True)
class Partition:
    cells: tuple[SemiAlgSet, ...]

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        if not self.cells:
            raise ValueError("a partition needs at least one cell")
        dims = {c.dim for c in self.cells}
        if len(dims) != 1:
            raise ValueError(f"cells disagree on dimension: {sorted(dims)}")

    @property
    def dim(self) -> int:
        return self.cells[0].dim

    def __len__(self) -> int:
        return len(self.cells)

    def locate(self, x: Sequence[float]) -> list[int]:
        return [i for i, c in enumerate(self.cells) if c.contains(x)]


class PartitionError(RuntimeError):
    """No cell (or several cells) contain a visited state."""

    def __init__(self, x, matches: list[int]):
        self.x = tuple(float(v) for v in x)
        self.matches = matches
        what = "no cell" if not matches else f"cells {matches}"
        super().__init__(f"{what} of the partition contain state {self.x}")


HALT = None


@dataclass(frozen=True)
class PpsSystem:
    """Piecewise polynomial system: initial set, loop condition, partition, updates."""

    x_in: SemiAlgSet
    x0: SemiAlgSet
    partition: Partition
    updates: tuple[tuple[Polynomial, ...], ...]
    variables: tuple[str, ...] = field(default=())
    name: str = ""

    def __post_init__(self):
        d = self.x_in.dim
        object.__setattr__(self, "updates", tuple(tuple(u) for u in self.updates))
        if not self.variables:
            object.__setattr__(self, "variables", tuple(f"x{i + 1}" for i in range(d)))
        else:
            object.__setattr__(self, "variables", tuple(self.variables))
        if self.x0.dim != d or self.partition.dim != d or len(self.variables) != d:
            raise ValueError("PPS components disagree on dimension")
        if len(self.updates) != len(self.partition):
            raise ValueError(f"{len(self.partition)} cells but {len(self.updates)} update maps")
        for i, upd in enumerate(self.updates):
            if len(upd) != d or any(t.dim != d for t in upd):
                raise ValueError(f"update map {i + 1} is not a map R^{d} -> R^{d}")

    @property
    def dim(self) -> int:
        return self.x_in.dim

    @property
    def n_cells(self) -> int:
        return len(self.partition)

    def update_degree(self, i: int) -> int:
        return max((t.degree() for t in self.updates[i]), default=0) or 1

    def apply(self, i: int, x: Sequence[float]) -> np.ndarray:
        return np.array([t.eval(x) for t in self.updates[i]])

    def apply_many(self, i: int, points: np.ndarray) -> np.ndarray:
        return np.column_stack([t.eval_many(points) for t in self.updates[i]])

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "variables": list(self.variables),
            "x_in": self.x_in.to_json(),
            "x0": self.x0.to_json(),
            "cells": [c.to_json() for c in self.partition.cells],
            "updates": [[t.to_json() for t in upd] for upd in self.updates],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, data: dict) -> PpsSystem:
        d = len(data["variables"])
        return cls(
            x_in=SemiAlgSet.from_json(data["x_in"], d),
            x0=SemiAlgSet.from_json(data["x0"], d),
            partition=Partition(tuple(SemiAlgSet.from_json(c, d) for c in data["cells"])),
            updates=tuple(tuple(Polynomial.from_json(t, d) for t in upd) for upd in data["updates"]),
            variables=tuple(data["variables"]),
            name=data.get("name", ""),
        )


def step(sys: PpsSystem, x: Sequence[float]):
    """One transition: ``HALT`` (None) outside the loop condition, else the image of x."""
    if not sys.x0.contains(x):
        return HALT
    matches = sys.partition.locate(x)
    if len(matches) != 1:
        raise PartitionError(x, matches)
    return sys.apply(matches[0], x)


def validate_partition(
    partition: Partition,
    box: Sequence[tuple[float, float]],
    n_samples: int = 10_000,
    seed: int = 0,
    warn: bool = True,
) -> dict:
    """Sample the box and count points covered by zero or several cells.

    Violations are reported as a warning, never an error.
    """
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    pts = lo + (hi - lo) * rng.random((n_samples, len(box)))
    counts = np.zeros(n_samples, dtype=int)
    for cell in partition.cells:
        counts += cell.contains_many(pts)
    uncovered = int(np.sum(counts == 0))
    overlapping = int(np.sum(counts > 1))
    report = {"samples": n_samples, "uncovered": uncovered, "overlapping": overlapping}
    if warn and (uncovered or overlapping):
        msg = f"partition check failed on {uncovered} uncovered and {overlapping} overlapping samples"
        log.warning(msg)
        warnings.warn(msg, stacklevel=2)
    return report


def sample_box(x_in: SemiAlgSet) -> list[tuple[float, float]] | None:
    """Recover the box when ``x_in`` is a conjunction of ``(x_i - a)(x_i - b) <= 0`` constraints."""
    d = x_in.dim
    found: dict[int, tuple[float, float]] = {}
    for c in x_in.constraints:
        p = c.poly
        if p.degree() != 2:
            return None
        vars_used = {i for m in p.monomials() for i, e in enumerate(m) if e}
        if len(vars_used) != 1:
            return None
        (v,) = vars_used
        sq = tuple(2 if j == v else 0 for j in range(d))
        lin = tuple(1 if j == v else 0 for j in range(d))
        a2 = p.coeff(sq)
        if a2 <= 0:
            return None
        b1, c0 = p.coeff(lin) / a2, p.constant_term() / a2
        disc = b1 * b1 - 4 * c0
        if disc < 0:
            return None
        r = np.sqrt(disc)
        lo, hi = (-b1 - r) / 2, (-b1 + r) / 2
        if v in found:
            lo, hi = max(lo, found[v][0]), min(hi, found[v][1])
        found[v] = (float(lo), float(hi))
    if len(found) != d:
        return None
    return [found[i] for i in range(d)]
