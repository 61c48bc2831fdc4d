"""Artifact-producing pipeline stages shared by the command line and the desk reproduction.

Layout under the output directory::

    mesh/                        mesh.json
    operators/                   L.mat
    fom/<run>/                   currents, potentials, nonlinearity, times, iterations
    pod/                         V_i, V_phi, sigma_i, sigma_phi
    deim/                        V_f, points, sigma_f
    node/                        W<k>, b<k>, in_mean, in_scale, train_log.csv
    rom/<backend>/<run>/         reduced currents, potentials, iterations
    analysis/<backend>/<run>/    errors.csv, losses.csv, summary.json
    analysis/                    flops.json, report.json, tables.md

Every directory carries ``meta.json`` and ``manifest.json`` (producer, config
hash, hashes of inputs and outputs). Wall-clock timings go to ``timing.json``,
which is not part of any manifest.
"""
import csv
import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis as an
from .assembly import FomOperators, assemble_inductance, build_fom_operators
from .config import RunConfig, serialize
from .deim import DeimOperator, build_deim, row_support, run_deim_lagged, run_deim_newton
from .errors import UsageError
from .fom_solver import Trajectory, check_continuity, run_transient
from .geometry import Mesh, generate_tape_mesh, read_mesh, write_mesh
from .io import ArtifactDir, csv_hash, manifest_hash, output_dir_override, write_json
from .node import MlpParams, ReducedReference, TrainResult, train, unroll
from .pod import PodBasis, RomOperators, RomTrajectory, build_pod, project_operators, reduced_continuity

log = logging.getLogger(__name__)

PRODUCERS = {
    "mesh": "mesh gen",
    "operators": "fom run",
    "fom": "fom run",
    "pod": "rom build-pod",
    "deim": "rom build-deim",
    "node": "node train",
    "rom": "rom run",
    "analysis": "analyze",
}
BACKENDS = ("deim-newton", "deim-lagged", "node")
EVAL_SPLITS = ("validation", "ood", "frequency")


def _fmt(x):
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


class Workspace:
    """Configuration plus the output directory; hands out artifact directories."""

    def __init__(self, cfg: RunConfig, root=None):
        self.cfg = cfg
        self.root = Path(root) if root is not None else output_dir_override(cfg.output_dir)
        self.config = serialize(cfg)
        self._ops = None

    def art(self, kind, *parts) -> ArtifactDir:
        return ArtifactDir(self.root.joinpath(kind, *parts), PRODUCERS[kind])

    def runs(self, splits=None):
        """(split, label, excitation) for the configured transients, optionally filtered."""
        return [r for r in self.cfg.datasets.all_runs() if splits is None or r[0] in splits]

    def excitation(self, label):
        for _, lab, exc in self.runs():
            if lab == label:
                return exc
        raise UsageError(f"unknown run label {label!r}; known: {[r[1] for r in self.runs()]}")

    def inputs(self, *arts):
        return {str(a.path.relative_to(self.root)): manifest_hash(a.path) for a in arts}

    def _write_timing(self, art, seconds):
        write_json(art.path / "timing.json", {"wall_time_s": round(seconds, 3)})


# ---------------------------------------------------------------- mesh and FOM


def mesh_gen(ws: Workspace) -> Mesh:
    mesh = generate_tape_mesh(ws.cfg.mesh)
    art = ws.art("mesh")
    art.path.mkdir(parents=True, exist_ok=True)
    write_mesh(mesh, art.path / "mesh.json")
    art.write({}, {"n_e": mesh.n_e, "n_f": mesh.n_f, "mesh_hash": mesh.hash()}, ws.config, {},
              extra={"mesh.json": None})
    return mesh


def load_mesh(ws: Workspace) -> Mesh:
    art = ws.art("mesh").require("mesh.json", "manifest.json")
    return read_mesh(art.path / "mesh.json")


def operators(ws: Workspace, build=False) -> FomOperators:
    """FOM operators from the stored mesh and inductance matrix (assembled when ``build``)."""
    if ws._ops is not None:
        return ws._ops
    mesh = load_mesh(ws)
    art = ws.art("operators")
    if build and not art.exists():
        t0 = time.perf_counter()
        L = assemble_inductance(mesh, ws.cfg.quadrature)
        art.write({"L": L}, {"n_e": mesh.n_e, "mesh_hash": mesh.hash()}, ws.config,
                  ws.inputs(ws.art("mesh")))
        ws._write_timing(art, time.perf_counter() - t0)
    L = art.matrix("L")
    ws._ops = build_fom_operators(mesh, ws.cfg.material, None, ws.cfg.quadrature, L=L)
    return ws._ops


def fom_run(ws: Workspace, labels=None):
    """Integrate the configured transients (all of them unless ``labels`` is given)."""
    ops = operators(ws, build=True)
    done = {}
    for split, label, exc in ws.runs():
        if labels is not None and label not in labels:
            continue
        t0 = time.perf_counter()
        tr = run_transient(ops, exc, ws.cfg.solver)
        art = ws.art("fom", label)
        meta = {"split": split, "B0": exc.B0, "freq": exc.freq, "direction": list(exc.direction),
                "dt": ws.cfg.solver.dt, "n_steps": ws.cfg.solver.n_steps, "mesh_hash": ops.mesh.hash(),
                "continuity": check_continuity(tr, ops.G),
                "mean_newton_iterations": float(tr.iterations.mean())}
        art.write({"currents": tr.currents, "potentials": tr.potentials, "nonlinearity": tr.nonlinearity,
                   "times": tr.times, "iterations": tr.iterations.astype(float)},
                  meta, ws.config, ws.inputs(ws.art("mesh"), ws.art("operators")))
        ws._write_timing(art, time.perf_counter() - t0)
        log.info("fom %s: %.1f s", label, time.perf_counter() - t0)
        done[label] = tr
    if labels is not None and set(labels) - set(done):
        raise UsageError(f"unknown run labels {sorted(set(labels) - set(done))}")
    return done


def load_fom(ws: Workspace, label) -> Trajectory:
    art = ws.art("fom", label).require("manifest.json")
    return Trajectory(times=art.matrix("times")[:, 0], currents=art.matrix("currents"),
                      potentials=art.matrix("potentials"), nonlinearity=art.matrix("nonlinearity"),
                      iterations=art.matrix("iterations")[:, 0].astype(np.int64))


def _training(ws):
    return [(label, exc, load_fom(ws, label)) for _, label, exc in ws.runs(("training",))]


# ---------------------------------------------------------------- reduced models


def build_pod_stage(ws: Workspace) -> PodBasis:
    runs = _training(ws)
    I = np.hstack([tr.currents for _, _, tr in runs])
    P = np.hstack([tr.potentials for _, _, tr in runs])
    pc = ws.cfg.pod
    basis = build_pod(I, P, pc.energy_i, pc.energy_phi, pc.rank_i, pc.rank_phi, pc.criterion)
    rom = project_operators(operators(ws), basis)
    meta = {"r_i": basis.r_i, "r_phi": basis.r_phi, "energy_i": basis.energy_i,
            "energy_phi": basis.energy_phi, "criterion": pc.criterion,
            "constraint_rank": int(rom.Q.shape[1]),
            "max_abs_G_V_i": float(np.abs(rom.fom.G @ basis.V_i).max())}
    ws.art("pod").write({"V_i": basis.V_i, "V_phi": basis.V_phi, "sigma_i": basis.sigma_i,
                         "sigma_phi": basis.sigma_phi}, meta, ws.config,
                        ws.inputs(*(ws.art("fom", lab) for lab, _, _ in runs)))
    return basis


def load_rom(ws: Workspace) -> RomOperators:
    art = ws.art("pod").require("manifest.json")
    basis = PodBasis(art.matrix("V_i"), art.matrix("V_phi"), art.matrix("sigma_i")[:, 0],
                     art.matrix("sigma_phi")[:, 0], ws.cfg.pod.criterion)
    return project_operators(operators(ws), basis)


def build_deim_stage(ws: Workspace) -> DeimOperator:
    rom = load_rom(ws)
    runs = _training(ws)
    F = np.hstack([tr.nonlinearity for _, _, tr in runs])
    dc = ws.cfg.deim
    op = build_deim(F, dc.rank, rom.basis.V_i, rom.fom.tables, energy=dc.energy, criterion=dc.criterion)
    meta = {"r_deim": op.r_deim, "n_points": op.n_p, "cond": op.cond,
            "support_dofs": int(len(op.support.dofs)), "support_triangles": int(len(op.support.used)),
            "max_row_support": int(op.support.max_row_support(rom.fom.tables))}
    ws.art("deim").write({"V_f": op.V_f, "points": op.points.astype(float), "sigma_f": op.sigma_f},
                         meta, ws.config,
                         ws.inputs(ws.art("pod"), *(ws.art("fom", lab) for lab, _, _ in runs)))
    return op


def load_deim(ws: Workspace, rom: RomOperators) -> DeimOperator:
    art = ws.art("deim").require("manifest.json")
    V_f = art.matrix("V_f")
    points = art.matrix("points")[:, 0].astype(np.int64)
    PV = V_f[points]
    Pi = np.linalg.solve(PV.T, (rom.basis.V_i.T @ V_f).T).T
    return DeimOperator(V_f, points, Pi, row_support(rom.fom.tables, points), float(np.linalg.cond(PV)),
                        art.matrix("sigma_f")[:, 0])


def reduced_reference(rom: RomOperators, tr: Trajectory, exc, label="") -> ReducedReference:
    V = rom.basis
    return ReducedReference(V.restrict_currents(tr.currents), V.restrict_potentials(tr.potentials),
                            rom.source_sequence(exc, tr.times[1:]), label)


def node_train(ws: Workspace) -> TrainResult:
    rom = load_rom(ws)
    dt = ws.cfg.solver.dt
    data = [reduced_reference(rom, tr, exc, lab) for lab, exc, tr in _training(ws)]
    val = [reduced_reference(rom, load_fom(ws, lab), exc, lab) for _, lab, exc in ws.runs(("validation",))]
    tcfg = replace(ws.cfg.node, seed=ws.cfg.seed)
    t0 = time.perf_counter()
    res = train(rom, data, tcfg, dt, val_data=val or None)
    art = ws.art("node")
    art.path.mkdir(parents=True, exist_ok=True)
    res.write_log(art.path / "train_log.csv")
    p = res.params
    mats = {"in_mean": p.in_mean, "in_scale": p.in_scale}
    for k, (W, b) in enumerate(zip(p.weights, p.biases)):
        mats[f"W{k}"], mats[f"b{k}"] = W, b
    meta = {"r_i": p.r_i, "layers": p.layer_sizes, "output": p.output, "activation": p.activation,
            "out_scale": p.out_scale, "seed": tcfg.seed, "best_epoch": res.best_epoch,
            "best_val_loss": res.best_val, "train_config": tcfg.to_dict()}
    inputs = ws.inputs(ws.art("pod"), *(ws.art("fom", lab) for lab, _, _ in ws.runs(("training", "validation"))))
    art.write(mats, meta, ws.config, inputs,
              extra={"train_log.csv": lambda path: csv_hash(path, drop=("wall_time_s",))})
    ws._write_timing(art, time.perf_counter() - t0)
    return res


def load_node(ws: Workspace) -> MlpParams:
    art = ws.art("node").require("manifest.json")
    meta = art.meta()
    n_layers = len(meta["layers"]) - 1
    p = MlpParams([art.matrix(f"W{k}") for k in range(n_layers)],
                  [art.matrix(f"b{k}")[:, 0] for k in range(n_layers)],
                  art.matrix("in_mean")[:, 0], art.matrix("in_scale")[:, 0], float(meta["out_scale"]),
                  meta["output"], meta["activation"], {"seed": meta["seed"]})
    p.validate()
    return p


def rom_run(ws: Workspace, backend, labels=None):
    """Run a reduced backend on the given runs (default: validation, OOD and frequency runs)."""
    if backend not in BACKENDS:
        raise UsageError(f"unknown backend {backend!r}; choose from {BACKENDS}")
    rom = load_rom(ws)
    cfg = ws.cfg.solver
    if backend == "node":
        params = load_node(ws)
        upstream = [ws.art("pod"), ws.art("node")]
    else:
        op = load_deim(ws, rom)
        upstream = [ws.art("pod"), ws.art("deim")]
    targets = [r for r in ws.runs() if (labels is None and r[0] in EVAL_SPLITS)
               or (labels is not None and r[1] in labels)]
    if labels is not None and len(targets) != len(set(labels)):
        raise UsageError(f"unknown run labels in {sorted(labels)}")
    out = {}
    for split, label, exc in targets:
        t0 = time.perf_counter()
        if backend == "node":
            times = np.arange(cfg.n_steps + 1) * cfg.dt
            I, P = unroll(rom, params, np.zeros(rom.r_i), rom.source_sequence(exc, times[1:]), cfg.dt)
            traj = RomTrajectory(times, I, P, np.ones(cfg.n_steps, dtype=np.int64))
        elif backend == "deim-newton":
            traj = run_deim_newton(rom, op, exc, cfg)
        else:
            traj = run_deim_lagged(rom, op, exc, cfg)
        elapsed = time.perf_counter() - t0
        art = ws.art("rom", backend, label)
        finite = bool(np.all(np.isfinite(traj.currents)))
        meta = {"backend": backend, "split": split, "B0": exc.B0, "freq": exc.freq,
                "mean_iterations": float(traj.iterations.mean()),
                "reduced_continuity": reduced_continuity(rom, traj.currents) if finite else None}
        art.write({"currents": traj.currents, "potentials": traj.potentials, "times": traj.times,
                   "iterations": traj.iterations.astype(float)}, meta, ws.config,
                  ws.inputs(*upstream, ws.art("fom", label)))
        ws._write_timing(art, elapsed)
        out[label] = traj
    return out


def load_rom_run(ws: Workspace, backend, label) -> RomTrajectory:
    art = ws.art("rom", backend, label).require("manifest.json")
    return RomTrajectory(art.matrix("times")[:, 0], art.matrix("currents"), art.matrix("potentials"),
                         art.matrix("iterations")[:, 0].astype(np.int64))


# ---------------------------------------------------------------- analysis


def analyze_run(ws: Workspace, backend, label, what=("errors", "losses")):
    """errors.csv / losses.csv and a summary for one lifted ROM run against its FOM run."""
    rom = load_rom(ws)
    fom = load_fom(ws, label)
    red = load_rom_run(ws, backend, label)
    I_rom = rom.basis.lift_currents(red.currents)
    tables = rom.fom.tables
    art = ws.art("analysis", backend, label)
    art.path.mkdir(parents=True, exist_ok=True)
    summary = {"backend": backend, "label": label}
    extra = {}
    if "errors" in what:
        rep = an.error_stats(I_rom, fom.currents, tables, fom.times)
        floor = an.pod_floor(rom.basis.V_i, fom.currents, tables)
        _write_csv(art.path / "errors.csv", ["t", "mean", "p95", "max"], rep.rows())
        summary.update({"error": rep.summary, "pod_floor": floor.summary,
                        "mean_abs_K_fom": float(an.element_magnitudes(tables, fom.currents).mean())})
        extra["errors.csv"] = None
    if "losses" in what:
        p_fom = an.ac_losses(tables, rom.fom.material, fom.currents)
        p_rom = an.ac_losses(tables, rom.fom.material, I_rom)
        _write_csv(art.path / "losses.csv", ["t", "p_fom", "p_rom", "abs_err"],
                   zip(fom.times, p_fom, p_rom, np.abs(p_rom - p_fom)))
        mean_fom = float(np.mean(p_fom))
        summary["losses"] = {"mean_p_fom": mean_fom, "mean_p_rom": float(np.mean(p_rom)),
                             "relative_error": abs(float(np.mean(p_rom)) - mean_fom) / mean_fom,
                             "min_p_rom": float(np.min(p_rom)), "min_p_fom": float(np.min(p_fom))}
        extra["losses.csv"] = None
    art.write({}, summary, ws.config, ws.inputs(ws.art("rom", backend, label), ws.art("fom", label)),
              extra=extra)
    return summary


def analyze_flops(ws: Workspace):
    """flops.json: counts at desk dimensions (measured Newton iterations) and at full scale."""
    rom = load_rom(ws)
    op = load_deim(ws, rom)
    val = [lab for _, lab, _ in ws.runs(("validation",))]
    if not val:
        raise UsageError("flop analysis needs a validation run for the measured Newton count")
    its = float(np.mean([load_rom_run(ws, "deim-newton", lab).iterations.mean() for lab in val]))
    hidden = tuple(ws.cfg.node.hidden)
    desk = an.deim_dims(rom, op, its, hidden=hidden, lift="support")
    desk = replace(desk, output=ws.cfg.node.output)
    full = an.paper_dims(its, hidden=an.PAPER_DIMS["hidden"], lift="full")
    doc = {
        "measured_newton_iterations": its,
        "desk": an.flop_summary(desk),
        "desk_full_lift": an.flop_summary(replace(desk, lift="full")),
        "full_scale": an.flop_summary(full, reference=an.PAPER_FLOPS),
    }
    art = ws.art("analysis")
    art.path.mkdir(parents=True, exist_ok=True)
    write_json(art.path / "flops.json", doc)
    return doc


def _table(rows, header):
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for r in rows:
        lines.append("| " + " | ".join(f"{v:.4g}" if isinstance(v, float) else str(v) for v in r) + " |")
    return "\n".join(lines)


def desk_report(ws: Workspace, summaries, flops):
    """Comparison tables (markdown) and a machine-readable report of the headline numbers."""
    by = {(s["backend"], s["label"]): s for s in summaries}
    runs = ws.runs(EVAL_SPLITS)
    tables = []
    for split in EVAL_SPLITS:
        rows = []
        for sp, label, _ in runs:
            if sp != split:
                continue
            for b in BACKENDS:
                s = by.get((b, label))
                if s is None:
                    continue
                e = s["error"]
                rows.append((label, b, e["mean"], e["p95"], e["max"], s["pod_floor"]["mean"],
                             s["losses"]["relative_error"]))
        tables.append(f"### {split}\n\n" + _table(
            rows, ["run", "backend", "mean [A/m]", "p95 [A/m]", "max [A/m]", "POD floor mean",
                   "loss rel. err"]))
    fl = flops["desk"]["backends"]
    full = flops["full_scale"]
    tables.append("### flops per step\n\n" + _table(
        [("desk", fl["node"]["total"], fl["deim-newton"]["total"], fl["deim-lagged"]["total"]),
         ("full scale (ours)", full["backends"]["node"]["total"], full["backends"]["deim-newton"]["total"],
          full["backends"]["deim-lagged"]["total"]),
         ("full scale (reference)", float(an.PAPER_FLOPS["node"]), float(an.PAPER_FLOPS["deim_newton"]),
          float(an.PAPER_FLOPS["deim_lagged"]))],
        ["dims", "node", "deim-newton", "deim-lagged"]) + f"\n\n{full['note']}\n")
    text = "\n\n".join(tables) + "\n"
    report = {"runs": {f"{b}/{lab}": s for (b, lab), s in sorted(by.items())},
              "flops_ratio_deim_newton_over_node": flops["desk"]["deim_newton_over_node"],
              "measured_newton_iterations": flops["measured_newton_iterations"]}
    art = ws.art("analysis")
    (art.path / "tables.md").write_text(text)
    write_json(art.path / "report.json", report)
    return report, text


def repro_paper_desk(ws: Workspace, echo=print):
    """Full desk pipeline: mesh, FOM runs, POD, DEIM, NODE training, all backends, analysis."""
    t0 = time.perf_counter()
    steps = [("mesh gen", lambda: mesh_gen(ws)), ("fom run", lambda: fom_run(ws)),
             ("rom build-pod", lambda: build_pod_stage(ws)), ("rom build-deim", lambda: build_deim_stage(ws)),
             ("node train", lambda: node_train(ws))]
    steps += [(f"rom run --backend {b}", (lambda b=b: rom_run(ws, b))) for b in BACKENDS]
    for name, fn in steps:
        ts = time.perf_counter()
        fn()
        echo(f"[{time.perf_counter() - t0:7.1f} s] {name} done ({time.perf_counter() - ts:.1f} s)")
    summaries = [analyze_run(ws, b, lab) for b in BACKENDS for _, lab, _ in ws.runs(EVAL_SPLITS)]
    flops = analyze_flops(ws)
    report, text = desk_report(ws, summaries, flops)
    echo(text)
    echo(f"[{time.perf_counter() - t0:7.1f} s] repro paper-desk finished")
    return report


def manifests(root):
    """All manifest files under an output directory, keyed by relative path."""
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("manifest.json"))}


def csv_files(root):
    root = Path(root)
    return {str(p.relative_to(root)): p for p in sorted(root.rglob("*.csv"))}
