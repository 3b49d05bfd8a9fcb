"""Concrete semantics by sampling: trajectories and sampled suprema.

Everything here produces *under*-approximations (points that really are reachable,
values that really are attained), to be compared one-sidedly against certified bounds.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .poly import Polynomial
from .semialg import Constraint, PartitionError, PpsSystem, SemiAlgSet, sample_box

_MIN_ACCEPTANCE = 1e-4


@dataclass
class Trajectory:
    points: np.ndarray  # (n_points, dim); the first row lies in the initial set
    halted: bool = False  # left the loop condition before the step budget ran out

    def __len__(self) -> int:
        return self.points.shape[0]


def _as_sets(region) -> list[SemiAlgSet]:
    if isinstance(region, SemiAlgSet):
        return [region]
    return list(region)


def _inside(sets: Sequence[SemiAlgSet], pts: np.ndarray) -> np.ndarray:
    ok = np.ones(pts.shape[0], dtype=bool)
    for s in sets:
        ok &= s.contains_many(pts)
    return ok


def _box_arrays(box) -> tuple[np.ndarray, np.ndarray]:
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    if np.any(hi < lo):
        raise ValueError("box bounds are reversed")
    return lo, hi


def _draw_one(rng: np.random.Generator, sets, lo, hi, max_tries: int) -> np.ndarray:
    for _ in range(max_tries):
        x = lo + (hi - lo) * rng.random(lo.size)
        if _inside(sets, x[None, :])[0]:
            return x
    raise ValueError(f"rejection sampling accepted nothing in {max_tries} draws")


def initial_points(
    sys: PpsSystem,
    n: int,
    seed: int = 0,
    box: Sequence[tuple[float, float]] | None = None,
) -> np.ndarray:
    """``n`` uniform samples of the initial set, one RNG stream per sample index."""
    box = box or sample_box(sys.x_in)
    if box is None:
        raise ValueError("the initial set is not a box; pass an enclosing box")
    lo, hi = _box_arrays(box)
    streams = np.random.SeedSequence(seed).spawn(n)
    max_tries = int(10 / _MIN_ACCEPTANCE)
    pts = np.empty((n, sys.dim))
    for k, ss in enumerate(streams):
        pts[k] = _draw_one(np.random.default_rng(ss), [sys.x_in], lo, hi, max_tries)
    return pts


def simulate_array(
    sys: PpsSystem,
    n_traj: int,
    n_steps: int,
    seed: int = 0,
    box: Sequence[tuple[float, float]] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized simulation.

    Returns ``states`` of shape ``(n_traj, n_steps + 1, dim)``, NaN after a trajectory
    halts, and the boolean ``halted`` flags.
    """
    x = initial_points(sys, n_traj, seed, box)
    states = np.full((n_traj, n_steps + 1, sys.dim), np.nan)
    states[:, 0] = x
    active = np.ones(n_traj, dtype=bool)
    for t in range(n_steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        cur = states[idx, t]
        running = sys.x0.contains_many(cur)
        active[idx[~running]] = False
        idx, cur = idx[running], cur[running]
        member = np.column_stack([c.contains_many(cur) for c in sys.partition.cells])
        counts = member.sum(axis=1)
        if np.any(counts != 1):
            bad = int(np.flatnonzero(counts != 1)[0])
            raise PartitionError(cur[bad], list(np.flatnonzero(member[bad])))
        cell = member.argmax(axis=1)
        nxt = np.empty_like(cur)
        for i in range(sys.n_cells):
            sel = cell == i
            if sel.any():
                nxt[sel] = sys.apply_many(i, cur[sel])
        states[idx, t + 1] = nxt
    # a trajectory that survived all steps but whose last state is outside X0 also halts
    last = states[:, -1]
    done = ~np.isnan(last).any(axis=1)
    active &= done
    if done.any():
        active[done] &= sys.x0.contains_many(last[done])
    halted = ~active
    if n_steps == 0:
        halted[:] = False
    return states, halted


def simulate(
    sys: PpsSystem,
    n_traj: int,
    n_steps: int,
    rng_seed: int = 0,
    box: Sequence[tuple[float, float]] | None = None,
) -> list[Trajectory]:
    states, halted = simulate_array(sys, n_traj, n_steps, rng_seed, box)
    out = []
    for k in range(n_traj):
        pts = states[k]
        pts = pts[~np.isnan(pts).any(axis=1)]
        out.append(Trajectory(pts, bool(halted[k])))
    return out


def reachable_points(states: np.ndarray) -> np.ndarray:
    """Flatten a ``simulate_array`` result to the visited states."""
    pts = states.reshape(-1, states.shape[-1])
    return pts[~np.isnan(pts).any(axis=1)]


def sampled_sup(
    p: Polynomial,
    region,
    box: Sequence[tuple[float, float]],
    n: int,
    seed: int = 0,
    transform: Sequence[Polynomial] | None = None,
) -> float | None:
    """Max of ``p`` (or of ``p o transform``) over accepted uniform samples of ``box``.

    ``region`` is a set or a sequence of sets to intersect. The draws for ``n`` are a
    prefix of the draws for any larger ``n`` so the result is monotone in ``n``.
    Returns ``None`` when no sample is accepted.
    """
    lo, hi = _box_arrays(box)
    sets = _as_sets(region)
    rng = np.random.default_rng(seed)
    best = -math.inf
    chunk = 1 << 16
    left = n
    while left > 0:
        k = min(chunk, left)
        pts = lo + (hi - lo) * rng.random((k, lo.size))
        left -= k
        pts = pts[_inside(sets, pts)]
        if pts.shape[0] == 0:
            continue
        if transform is not None:
            pts = np.column_stack([t.eval_many(pts) for t in transform])
        best = max(best, float(np.max(p.eval_many(pts))))
    return None if best == -math.inf else best


def sublevel_region(templates: Sequence[Polynomial], bounds: Sequence[float]) -> SemiAlgSet:
    """``{x | q(x) <= w_q}`` for the finite bounds."""
    dim = templates[0].dim
    cons = [Constraint(q - w) for q, w in zip(templates, bounds) if math.isfinite(w)]
    return SemiAlgSet(dim, tuple(cons)) if cons else SemiAlgSet.whole_space(dim)


def sampled_post_sup(
    sys: PpsSystem,
    i: int,
    p: Polynomial,
    templates: Sequence[Polynomial],
    bounds: Sequence[float],
    box: Sequence[tuple[float, float]],
    n: int,
    seed: int = 0,
) -> float | None:
    """Sampled ``sup { p(T_i x) | x in X^i, x in X^0, q(x) <= w_q }`` (``i`` zero-based)."""
    region = [sys.partition.cells[i], sys.x0, sublevel_region(templates, bounds)]
    return sampled_sup(p, region, box, n, seed, transform=sys.updates[i])


# -- output ----------------------------------------------------------------------


def to_csv(trajectories: Sequence[Trajectory], variables: Sequence[str] | None = None) -> str:
    """One row per ``(traj_id, step, x1..xd)``."""
    buf = io.StringIO()
    if not trajectories:
        return ""
    d = trajectories[0].points.shape[1]
    variables = list(variables or [f"x{i + 1}" for i in range(d)])
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["traj_id", "step", *variables])
    for k, tr in enumerate(trajectories):
        for t, x in enumerate(tr.points):
            writer.writerow([k, t, *(repr(float(v)) for v in x)])
    return buf.getvalue()


def plot_svg(
    points: np.ndarray,
    path,
    templates: Sequence[Polynomial] = (),
    bounds: Sequence[float] = (),
    names: Sequence[str] = (),
    variables: Sequence[str] = ("x1", "x2"),
    resolution: int = 200,
) -> None:
    """Scatter of 2-D states with the template level curves ``q = w_q`` overlaid."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if points.shape[1] != 2:
        raise ValueError("plotting needs a 2-D system")
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.scatter(points[:, 0], points[:, 1], s=1, c="0.4", alpha=0.5, linewidths=0)
    lo, hi = points.min(axis=0), points.max(axis=0)
    pad = 0.25 * np.maximum(hi - lo, 1e-3)
    gx = np.linspace(lo[0] - pad[0], hi[0] + pad[0], resolution)
    gy = np.linspace(lo[1] - pad[1], hi[1] + pad[1], resolution)
    X, Y = np.meshgrid(gx, gy)
    grid = np.column_stack([X.ravel(), Y.ravel()])
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for k, (q, w) in enumerate(zip(templates, bounds)):
        if not math.isfinite(w):
            continue
        Z = q.eval_many(grid).reshape(X.shape)
        if Z.min() <= w <= Z.max():
            color = colors[k % len(colors)]
            ax.contour(X, Y, Z, levels=[w], colors=color, linewidths=1.2)
            label = names[k] if k < len(names) else f"q{k + 1}"
            ax.plot([], [], color=color, label=f"{label} <= {w:.4f}")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(loc="upper right", fontsize=8)
    ax.set_xlabel(variables[0])
    ax.set_ylabel(variables[1])
    ax.set_aspect("equal", adjustable="datalim")
    fig.savefig(path, format="svg")
    plt.close(fig)
