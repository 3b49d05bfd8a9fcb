"""``sospi`` command line.

Exit codes: 0 success (fixpoint or iteration budget), 1 usage or input error,
2 early stop without an accepted SOS solution (bounds still sound), 3 no invariant.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import analysis, benchmarks, frontend, sdp, sim, sos
from .semialg import PartitionError, sample_box

EXIT_SOL_EMPTY = 2
EXIT_NO_INVARIANT = 3

log = logging.getLogger("sospi")


def _setup_logging() -> None:
    level = os.environ.get("PPS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _load(source: str):
    """A ``.pps`` path, or the name of a shipped benchmark."""
    p = Path(source)
    if p.exists():
        return frontend.load(p)
    if source in benchmarks.NAMES:
        return benchmarks.load(source)
    raise click.BadParameter(f"{source}: no such file or benchmark", param_hint="PROGRAM")


def _half(degree: int) -> int:
    if degree < 2 or degree % 2:
        raise click.BadParameter("the degree must be even and at least 2", param_hint="--degree")
    return degree // 2


def _options(sdp_tol: float, sdp_maxiter: int, m: int, jobs: int = 1, max_iter: int = 10, tol: float = 1e-6):
    sdp_opts = sdp.SdpOptions(gap_tol=sdp_tol, feas_tol=sdp_tol, max_iter=sdp_maxiter)
    return analysis.AnalysisOptions(sos=sos.SosOptions(sdp=sdp_opts), m=m, jobs=jobs, max_iter=max_iter, fix_tol=tol)


def _fmt_bounds(values) -> str:
    return "[" + ", ".join(f"{v:.4f}" for v in values) + "]"


def _write(text: str, out: str | None) -> None:
    if out in (None, "-"):
        click.echo(text, nl=not text.endswith("\n"))
    else:
        Path(out).write_text(text, encoding="utf-8")


sdp_tol_opt = click.option("--sdp-tol", type=float, default=1e-8, show_default=True, help="SDP gap/feasibility tolerance.")
sdp_iter_opt = click.option("--sdp-maxiter", type=int, default=200, show_default=True, help="SDP iteration limit.")
degree_opt = click.option("--degree", "degree", type=int, required=True, help="Template degree 2m.")


class _Group(click.Group):
    """Usage errors exit with 1; code 2 is reserved for early stops."""

    def main(self, args=None, prog_name=None, **extra):
        extra.pop("standalone_mode", None)
        try:
            return super().main(args, prog_name, standalone_mode=False, **extra)
        except click.ClickException as exc:
            exc.show()
            sys.exit(1)
        except click.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(1)


@click.group(cls=_Group)
def main() -> None:
    """Template-based invariants of piecewise polynomial programs by SOS policy iteration."""
    _setup_logging()


@main.command("parse")
@click.argument("program")
@click.option("--emit-json", is_flag=True, help="Print the lowered system as JSON instead of source.")
def parse_cmd(program: str, emit_json: bool) -> None:
    """Parse and pretty-print a program."""
    p = Path(program)
    if p.exists():
        text = p.read_text(encoding="utf-8")
    elif program in benchmarks.NAMES:
        text = benchmarks.path(program).read_text(encoding="utf-8")
    else:
        raise click.BadParameter(f"{program}: no such file or benchmark", param_hint="PROGRAM")
    try:
        ast = frontend.parse(text)
    except ValueError as exc:
        click.echo(f"{program}: {exc}", err=True)
        sys.exit(1)
    if emit_json:
        click.echo(frontend.lower(ast, name=p.stem).dumps())
    else:
        click.echo(frontend.pretty(ast), nl=False)


@main.command("synth")
@click.argument("program")
@degree_opt
@sdp_tol_opt
@sdp_iter_opt
@click.option("--dump-sos", is_flag=True, help="Print the SOS program on standard error.")
def synth_cmd(program, degree, sdp_tol, sdp_maxiter, dump_sos) -> None:
    """Synthesize the degree-2m template p and the bound w."""
    S = _load(program)
    m = _half(degree)
    if dump_sos:
        click.echo(sos.compile_template_synthesis(S, m).describe(list(S.variables)), err=True)
    try:
        r = analysis.synth_template(S, m, _options(sdp_tol, sdp_maxiter, m))
    except analysis.NoGoodInvariant as exc:
        click.echo("No good invariant")
        click.echo(str(exc), err=True)
        sys.exit(EXIT_NO_INVARIANT)
    click.echo(f"w = {r.w:.6f}")
    click.echo(f"p = {r.p.to_string(list(S.variables))}")


@main.command("analyze")
@click.argument("program")
@degree_opt
@click.option("--max-iter", type=int, default=10, show_default=True)
@click.option("--tol", type=float, default=1e-6, show_default=True, help="Fixpoint tolerance (sup norm).")
@click.option("--jobs", type=int, default=1, show_default=True, help="Concurrent SDP solves.")
@click.option("-o", "--output", default=None, help="Trace JSON path (default: standard output).")
@click.option("--timings", is_flag=True, help="Include wall times in the trace (breaks byte-identical output).")
@click.option("--dump-sos", is_flag=True, help="Print the synthesis SOS program on standard error.")
@click.option("--dump-lp", is_flag=True, help="Print every policy LP on standard error.")
@sdp_tol_opt
@sdp_iter_opt
def analyze_cmd(program, degree, max_iter, tol, jobs, output, timings, dump_sos, dump_lp, sdp_tol, sdp_maxiter) -> None:
    """Synthesis followed by policy iteration; writes the iteration trace as JSON."""
    S = _load(program)
    m = _half(degree)
    opts = _options(sdp_tol, sdp_maxiter, m, jobs, max_iter, tol)
    header = {"system": S.name, "degree": degree}
    if dump_sos:
        click.echo(sos.compile_template_synthesis(S, m).describe(list(S.variables)), err=True)
    try:
        r = analysis.synth_template(S, m, opts)
        trace = analysis.policy_iterate(analysis.Context(S, r.basis, opts), r.w0)
    except (analysis.NoGoodInvariant, analysis.NotPostFixpoint) as exc:
        click.echo(f"No good invariant: {exc}", err=True)
        _write(json.dumps({**header, "termination": "no_good_invariant", "message": str(exc)}, indent=2, sort_keys=True) + "\n", output)
        sys.exit(EXIT_NO_INVARIANT)
    if dump_lp:
        for step in trace.steps:
            if step.lp_text:
                click.echo(f"# LP at iteration {step.k}\n{step.lp_text}", err=True)
    doc = {**header, "synthesis_w": r.w, **trace.to_json(timings, list(S.variables))}
    _write(json.dumps(doc, indent=2, sort_keys=True) + "\n", output)
    click.echo(f"{trace.reason}: bounds {_fmt_bounds(trace.final[: S.dim])}, {trace.improvements} it.", err=True)
    if trace.message:
        click.echo(trace.message, err=True)
    if trace.reason == analysis.SOL_EMPTY:
        sys.exit(EXIT_SOL_EMPTY)


def _bounds_from_file(path: str, dim: int) -> tuple[analysis.TemplateBasis, analysis.BoundVector]:
    """Read ``{"templates": [...], "final"|"bounds": {...}}``; analysis traces qualify."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if "templates" not in doc:
        raise click.BadParameter(f"{path}: no templates recorded", param_hint="--bounds")
    basis = analysis.TemplateBasis.from_json(doc["templates"], dim)
    values = doc.get("bounds") or doc.get("final")
    if values is None:
        raise click.BadParameter(f"{path}: no bounds recorded", param_hint="--bounds")
    return basis, analysis.BoundVector.from_json(basis, values)


@main.command("check")
@click.argument("program")
@click.option("--bounds", "bounds_path", required=True, help="JSON with templates and bounds (an analysis trace works).")
@click.option("--degree", type=int, default=None, help="Relaxation degree 2m (default: template degree).")
@click.option("--tol", type=float, default=1e-6, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@sdp_tol_opt
@sdp_iter_opt
def check_cmd(program, bounds_path, degree, tol, jobs, sdp_tol, sdp_maxiter) -> None:
    """Check that the bounds describe an inductive invariant containing the initial set."""
    S = _load(program)
    basis, w = _bounds_from_file(bounds_path, S.dim)
    m = _half(degree) if degree else basis.half_degree
    ctx = analysis.Context(S, basis, _options(sdp_tol, sdp_maxiter, m, jobs))
    rep = analysis.check_inductive(ctx, w, tol)
    for name, fv, wv in zip(basis.names, rep.Fw, w.values):
        click.echo(f"{name}: F(w) = {fv:.6g}  w = {wv:.6g}")
    if rep.verdict is True:
        click.echo("inductive")
        return
    if rep.verdict is None:
        click.echo(f"inconclusive: {rep.message}")
        sys.exit(EXIT_SOL_EMPTY)
    for name, fv, wv in rep.violations:
        click.echo(f"violated: {name}: {fv:.6g} > {wv:.6g}", err=True)
    click.echo("not inductive")
    sys.exit(1)


@main.command("simulate")
@click.argument("program")
@click.option("--traj", type=int, default=100, show_default=True)
@click.option("--steps", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--output", default=None, help="CSV path (default: standard output).")
@click.option("--svg", default=None, help="Also write a scatter plot (2-D systems).")
@click.option("--bounds", "bounds_path", default=None, help="Overlay template level sets from this JSON.")
@click.option("--resolution", type=int, default=200, show_default=True, help="Contour grid resolution.")
def simulate_cmd(program, traj, steps, seed, output, svg, bounds_path, resolution) -> None:
    """Sample trajectories from the initial set."""
    S = _load(program)
    if sample_box(S.x_in) is None:
        raise click.BadParameter("the initial set is not a box", param_hint="PROGRAM")
    try:
        trajs = sim.simulate(S, traj, steps, seed)
    except PartitionError as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)
    _write(sim.to_csv(trajs, S.variables), output)
    if svg:
        pts = np.vstack([t.points for t in trajs])
        templates, values, names = (), (), ()
        if bounds_path:
            basis, w = _bounds_from_file(bounds_path, S.dim)
            templates, values, names = basis.templates, w.values, basis.names
        sim.plot_svg(pts, svg, templates, values, names, S.variables, resolution)


@main.command("export-sdpa")
@click.argument("program")
@degree_opt
@click.option("--program-kind", "kind", type=click.Choice(["synth", "xin", "cell"]), default="synth", show_default=True)
@click.option("--cell", type=int, default=1, show_default=True, help="Cell index (1-based) for --program-kind cell.")
@click.option("--template", "template", default="q1", show_default=True, help="Template name for xin/cell programs.")
@click.option("-o", "--output", default=None)
def export_cmd(program, degree, kind, cell, template, output) -> None:
    """Write one compiled SDP in SDPA sparse format.

    ``xin`` and ``cell`` programs use the synthesized basis and, for ``cell``, its
    initial bounds.
    """
    S = _load(program)
    m = _half(degree)
    if kind == "synth":
        prob = sos.compile_template_synthesis(S, m)
    else:
        try:
            r = analysis.synth_template(S, m, validate=False)
        except analysis.NoGoodInvariant as exc:
            click.echo(f"No good invariant: {exc}", err=True)
            sys.exit(EXIT_NO_INVARIANT)
        if template not in r.basis.names:
            raise click.BadParameter(f"choose one of {', '.join(r.basis.names)}", param_hint="--template")
        p = r.basis.templates[r.basis.names.index(template)]
        if kind == "xin":
            prob = sos.compile_xin_dagger(S, p, m)
        else:
            if not 1 <= cell <= S.n_cells:
                raise click.BadParameter(f"cells are numbered 1..{S.n_cells}", param_hint="--cell")
            prob = sos.compile_relaxed_Fi(S, cell - 1, p, r.basis.templates, list(r.w0.values), m)
    sdp_prob, _ = sos.to_sdp(prob)
    _write(sdp.export_sdpa(sdp_prob), output)


def report_row(doc: dict) -> str:
    """One table row: system, degree, bounds on the squared coordinates, iterations."""
    name, degree = doc.get("system", "?"), doc.get("degree", "?")
    if doc.get("termination") == "no_good_invariant":
        return f"{name} | degree {degree} | No good invariant | -"
    final = doc["final"]
    squares = [t["name"] for t in doc["templates"] if t["name"].startswith("q")]
    bounds = [float(final[n]) for n in squares]
    its = doc["improvements"]
    it_text = f"max ({its})" if doc["termination"] == analysis.MAX_ITER else f"{its} it."
    note = " (stopped early: no accepted SOS solution)" if doc["termination"] == analysis.SOL_EMPTY else ""
    return f"{name} | degree {degree} | bounds {_fmt_bounds(bounds)} | {it_text}{note}"


@main.command("report")
@click.argument("traces", nargs=-1, required=True)
def report_cmd(traces) -> None:
    """Render analysis traces as table rows."""
    for path in traces:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        click.echo(report_row(doc))


if __name__ == "__main__":  # pragma: no cover
    main()
