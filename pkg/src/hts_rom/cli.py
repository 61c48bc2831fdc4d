"""Command line: ``hts-rom [--config FILE] [--output-dir DIR] <command>``.

Every command reads the run configuration and upstream artifacts, writes its
own artifacts with a manifest and exits 0. Failures print a JSON error report
on stderr and exit nonzero (2 configuration/usage, 3 missing upstream
artifact, 1 anything else).
"""
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import click

from . import pipeline as pl
from .config import parse_config
from .errors import ConfigError, DependencyError, HtsRomError, StepFailure, UsageError

EXIT_CODES = {ConfigError: 2, UsageError: 2, DependencyError: 3}


def default_config_path():
    return Path(str(resources.files("hts_rom") / "configs" / "paper_desk.yaml"))


def error_report(exc):
    doc = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        doc["errors"] = [{"path": p, "message": m} for p, m in exc.errors]
    if isinstance(exc, DependencyError):
        doc["missing"] = exc.path
        doc["producer"] = exc.producer
    if isinstance(exc, StepFailure):
        doc["step"] = exc.step
        doc["residual"] = exc.residual
    return doc


class _Group(click.Group):
    """Turns package errors into a JSON report and a nonzero exit code."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except HtsRomError as exc:
            click.echo(json.dumps(error_report(exc), default=str), err=True)
            code = next((c for cls, c in EXIT_CODES.items() if isinstance(exc, cls)), 1)
            ctx.exit(code)


def _workspace(ctx) -> pl.Workspace:
    obj = ctx.find_root().obj
    if "ws" not in obj:
        cfg = parse_config(obj["config"])
        obj["ws"] = pl.Workspace(cfg, obj["output_dir"])
    return obj["ws"]


@click.group(cls=_Group)
@click.option("--config", "config", type=click.Path(dir_okay=False), default=None,
              help="Run configuration (YAML). Defaults to the shipped desk configuration.")
@click.option("--output-dir", type=click.Path(file_okay=False), default=None,
              help="Artifact directory (overrides the config and HTS_ROM_OUTPUT_DIR).")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
@click.pass_context
def main(ctx, config, output_dir, verbose):
    """Full-order solver, POD/DEIM and structured neural-ODE reduced models for HTS tapes."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj["config"] = config or default_config_path()
    ctx.obj["output_dir"] = output_dir


@main.group()
def mesh():
    """Mesh generation."""


@mesh.command("gen")
@click.pass_context
def mesh_gen(ctx):
    """Generate the tape mesh described by the config."""
    m = pl.mesh_gen(_workspace(ctx))
    click.echo(f"mesh: {m.n_f} triangles, {m.n_e} interior edges")


@main.group()
def fom():
    """Full-order model."""


@fom.command("run")
@click.option("--run", "labels", multiple=True, help="Run label (e.g. B20mT_f50Hz); default all.")
@click.pass_context
def fom_run(ctx, labels):
    """Assemble operators and integrate the configured transients."""
    done = pl.fom_run(_workspace(ctx), labels=list(labels) or None)
    for label, tr in done.items():
        click.echo(f"{label}: {tr.n_steps} steps, mean Newton iterations {tr.iterations.mean():.2f}")


@main.group()
def rom():
    """Reduced-order models."""


@rom.command("build-pod")
@click.pass_context
def build_pod(ctx):
    """POD bases from the training transients."""
    b = pl.build_pod_stage(_workspace(ctx))
    click.echo(f"pod: r_i={b.r_i} (energy {b.energy_i:.6f}), r_phi={b.r_phi} (energy {b.energy_phi:.6f})")


@rom.command("build-deim")
@click.pass_context
def build_deim(ctx):
    """DEIM basis and interpolation points from the training nonlinearity snapshots."""
    op = pl.build_deim_stage(_workspace(ctx))
    click.echo(f"deim: {op.n_p} points, cond(P^T V_f) = {op.cond:.3e}")


@rom.command("run")
@click.option("--backend", type=click.Choice(pl.BACKENDS), required=True)
@click.option("--run", "labels", multiple=True, help="Run label; default validation, OOD and frequency runs.")
@click.pass_context
def rom_run(ctx, backend, labels):
    """Run a reduced backend."""
    out = pl.rom_run(_workspace(ctx), backend, labels=list(labels) or None)
    for label, tr in out.items():
        click.echo(f"{backend} {label}: mean iterations {tr.iterations.mean():.2f}")


@main.group()
def node():
    """Structured neural ODE."""


@node.command("train")
@click.pass_context
def node_train(ctx):
    """Train the reduced resistance network on the training transients."""
    res = pl.node_train(_workspace(ctx))
    click.echo(f"node: best epoch {res.best_epoch}, validation loss {res.best_val:.4e}")


@main.group()
def analyze():
    """Post-processing: errors, AC losses and operation counts."""


def _analyze(ctx, backend, labels, what):
    ws = _workspace(ctx)
    backends = pl.BACKENDS if backend is None else (backend,)
    targets = list(labels) or [lab for _, lab, _ in ws.runs(pl.EVAL_SPLITS)]
    for b in backends:
        for lab in targets:
            s = pl.analyze_run(ws, b, lab, what=what)
            if "error" in s:
                e = s["error"]
                click.echo(f"{b} {lab}: mean {e['mean']:.4g} p95 {e['p95']:.4g} max {e['max']:.4g} A/m")
            if "losses" in s:
                click.echo(f"{b} {lab}: time-averaged loss relative error {s['losses']['relative_error']:.3%}")


@analyze.command("errors")
@click.option("--backend", type=click.Choice(pl.BACKENDS), default=None)
@click.option("--run", "labels", multiple=True)
@click.pass_context
def analyze_errors(ctx, backend, labels):
    """errors.csv (t, mean, p95, max) per backend and run."""
    _analyze(ctx, backend, labels, ("errors",))


@analyze.command("losses")
@click.option("--backend", type=click.Choice(pl.BACKENDS), default=None)
@click.option("--run", "labels", multiple=True)
@click.pass_context
def analyze_losses(ctx, backend, labels):
    """losses.csv (t, p_fom, p_rom, abs_err) per backend and run."""
    _analyze(ctx, backend, labels, ("losses",))


@analyze.command("flops")
@click.pass_context
def analyze_flops(ctx):
    """flops.json: per-step operation counts at desk and full-scale dimensions."""
    doc = pl.analyze_flops(_workspace(ctx))
    d = doc["desk"]
    click.echo(f"desk: node {d['backends']['node']['total']:.0f}, deim-newton "
               f"{d['backends']['deim-newton']['total']:.0f} flops/step "
               f"(deim-newton/node = {d['deim_newton_over_node']:.3f})")


@main.group()
def repro():
    """End-to-end reproductions."""


@repro.command("paper-desk")
@click.pass_context
def paper_desk(ctx):
    """Run the full desk-scale pipeline and emit the comparison tables."""
    pl.repro_paper_desk(_workspace(ctx), echo=click.echo)


if __name__ == "__main__":
    sys.exit(main())
