"""Run configuration: one YAML file with a section per pipeline stage."""
from dataclasses import dataclass, field, fields, asdict, is_dataclass
from pathlib import Path

import yaml

from .assembly import ExcitationSpec, QuadratureConfig
from .errors import ConfigError, DimensionError
from .fom_solver import SolverConfig
from .geometry import HelixSpec, TapeSpec
from .material import MaterialParams
from .node import TrainConfig


@dataclass(frozen=True)
class PodConfig:
    energy_i: float = 0.9999
    energy_phi: float = 0.9999
    rank_i: int = None
    rank_phi: int = None
    criterion: str = "sum"


@dataclass(frozen=True)
class DeimConfig:
    energy: float = 0.9999
    rank: int = None
    criterion: str = "sum"


@dataclass(frozen=True)
class Datasets:
    training: tuple = ((0.013, 50.0), (0.015, 50.0), (0.018, 50.0), (0.022, 50.0), (0.024, 50.0))
    validation: tuple = ((0.020, 50.0),)
    ood: tuple = ((0.010, 50.0), (0.030, 50.0))
    frequency: tuple = ((0.020, 40.0), (0.020, 60.0), (0.020, 100.0))
    direction: tuple = (0.0, 1.0, 0.0)

    def excitations(self, split):
        return [ExcitationSpec(B0=b, freq=f, direction=tuple(self.direction))
                for b, f in getattr(self, split)]

    def all_runs(self):
        """(split, label, excitation) for every transient, in a fixed order."""
        out = []
        for split in ("training", "validation", "ood", "frequency"):
            for exc in self.excitations(split):
                out.append((split, run_label(exc), exc))
        return out


def run_label(exc: ExcitationSpec):
    return f"B{exc.B0 * 1e3:g}mT_f{exc.freq:g}Hz"


@dataclass(frozen=True)
class RunConfig:
    mesh: TapeSpec = TapeSpec(length=0.018, width=0.004, nx=4, nz=20)
    material: MaterialParams = MaterialParams()
    quadrature: QuadratureConfig = QuadratureConfig()
    solver: SolverConfig = SolverConfig(newton_tol=1e-13)
    datasets: Datasets = Datasets()
    pod: PodConfig = PodConfig()
    deim: DeimConfig = DeimConfig()
    node: TrainConfig = TrainConfig()
    output_dir: str = "out"
    seed: int = 0

    def to_dict(self):
        return serialize(self)


# ---------------------------------------------------------------- parsing


def _section(cls, data, path, errs, convert=None, default=None):
    try:
        base = default if default is not None else cls()
    except TypeError:  # no defaults for required fields
        base = None
    if data is None:
        return base
    if not isinstance(data, dict):
        errs.append((path, "must be a mapping"))
        return base
    names = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            errs.append((f"{path}.{key}", "unknown field"))
            continue
        try:
            kwargs[key] = convert(key, value) if convert else value
        except (TypeError, ValueError) as exc:
            errs.append((f"{path}.{key}", str(exc)))
    try:
        inherited = {} if base is None else {f.name: getattr(base, f.name) for f in fields(cls)}
        return cls(**{**inherited, **kwargs})
    except TypeError as exc:
        errs.append((path, str(exc)))
        return base


def _number(value, integer=False, optional=False):
    if value is None and optional:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeError(f"expected a number, got {value!r}")
    if integer:
        if int(value) != value:
            raise ValueError(f"expected an integer, got {value!r}")
        return int(value)
    return float(value)


_INT_FIELDS = {"nx", "nz", "n_steps", "newton_max_iter", "ls_max_halvings", "far_level", "near_level",
               "self_level", "duffy_order", "rank_i", "rank_phi", "rank", "seq_len", "stride",
               "batch_size", "epochs", "seed", "val_every"}


def _convert(key, value):
    if key in ("criterion", "output"):
        if not isinstance(value, str):
            raise TypeError("expected a string")
        return value
    if key == "hidden":
        return tuple(_number(v, integer=True) for v in value)
    if key == "curriculum":
        return tuple((_number(a, integer=True), _number(b, integer=True)) for a, b in value)
    return _number(value, integer=key in _INT_FIELDS, optional=key.startswith("rank"))


def _pairs(value, path, errs):
    out = []
    if not isinstance(value, list):
        errs.append((path, "must be a list of {B0, freq} entries"))
        return ()
    for k, item in enumerate(value):
        p = f"{path}[{k}]"
        if not isinstance(item, dict) or set(item) - {"B0", "freq"}:
            errs.append((p, "expected keys B0 and freq"))
            continue
        try:
            b0 = _number(item.get("B0"))
            f = _number(item.get("freq", 50.0))
        except (TypeError, ValueError) as exc:
            errs.append((p, str(exc)))
            continue
        if not b0 > 0:
            errs.append((f"{p}.B0", f"amplitude must be > 0, got {b0}"))
        if not f > 0:
            errs.append((f"{p}.freq", f"frequency must be > 0, got {f}"))
        out.append((b0, f))
    return tuple(out)


def config_from_dict(raw) -> RunConfig:
    """Validated RunConfig; raises ConfigError listing every problem found."""
    errs = []
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError([("", "top level must be a mapping")])
    known = {f.name for f in fields(RunConfig)}
    for key in raw:
        if key not in known:
            errs.append((key, "unknown section"))

    mesh_raw = raw.get("mesh") or {}
    helix = None
    if isinstance(mesh_raw, dict) and mesh_raw.get("helix") is not None:
        helix = _section(HelixSpec, mesh_raw["helix"], "mesh.helix", errs, _convert)
        mesh_raw = {k: v for k, v in mesh_raw.items() if k != "helix"}
    mesh = _section(TapeSpec, mesh_raw, "mesh", errs, _convert, default=RunConfig.mesh)
    if isinstance(helix, HelixSpec):
        mesh = TapeSpec(mesh.length, mesh.width, mesh.nx, mesh.nz, helix)
    material = _section(MaterialParams, raw.get("material"), "material", errs, _convert)
    quad = _section(QuadratureConfig, raw.get("quadrature"), "quadrature", errs, _convert)
    solver_raw = raw.get("solver")
    solver = _section(SolverConfig, solver_raw, "solver", errs, _convert)
    if solver_raw is None or "newton_tol" not in (solver_raw or {}):
        solver = SolverConfig(**{**asdict(solver), "newton_tol": RunConfig.solver.newton_tol})
    pod = _section(PodConfig, raw.get("pod"), "pod", errs, _convert)
    deim = _section(DeimConfig, raw.get("deim"), "deim", errs, _convert)
    node = _section(TrainConfig, raw.get("node"), "node", errs, _convert)

    ds_raw = raw.get("datasets") or {}
    ds_kwargs = {}
    if not isinstance(ds_raw, dict):
        errs.append(("datasets", "must be a mapping"))
        ds_raw = {}
    for key, value in ds_raw.items():
        if key in ("training", "validation", "ood", "frequency"):
            ds_kwargs[key] = _pairs(value, f"datasets.{key}", errs)
        elif key == "direction":
            try:
                ds_kwargs[key] = tuple(_number(v) for v in value)
                if len(ds_kwargs[key]) != 3:
                    raise ValueError("expected three components")
            except (TypeError, ValueError) as exc:
                errs.append(("datasets.direction", str(exc)))
        else:
            errs.append((f"datasets.{key}", "unknown field"))
    datasets = Datasets(**ds_kwargs)
    if not datasets.training:
        errs.append(("datasets.training", "training set must not be empty"))

    output_dir = raw.get("output_dir", "out")
    if not isinstance(output_dir, str):
        errs.append(("output_dir", "must be a string"))
        output_dir = "out"
    try:
        seed = _number(raw.get("seed", 0), integer=True)
    except (TypeError, ValueError) as exc:
        errs.append(("seed", str(exc)))
        seed = 0

    # semantic checks of every section, collected rather than raised one by one
    for obj in (mesh, material, quad, solver, node):
        try:
            obj.validate()
        except ConfigError as exc:
            errs.extend(exc.errors)
        except DimensionError as exc:
            errs.append((f"mesh.{exc.field}" if getattr(exc, "field", None) else "mesh", str(exc)))
        except Exception as exc:  # material raises DomainError
            errs.append((type(obj).__name__.lower(), str(exc)))
    for name, sec in (("pod", pod), ("deim", deim)):
        if sec.criterion not in ("sum", "squared"):
            errs.append((f"{name}.criterion", "must be 'sum' or 'squared'"))
    for key in ("energy_i", "energy_phi"):
        if not 0 < getattr(pod, key) <= 1:
            errs.append((f"pod.{key}", "must lie in (0, 1]"))
    if not 0 < deim.energy <= 1:
        errs.append(("deim.energy", "must lie in (0, 1]"))
    if errs:
        raise ConfigError(errs)
    return RunConfig(mesh, material, quad, solver, datasets, pod, deim, node, output_dir, seed)


def parse_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError([("", f"config file {p} does not exist")])
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([("", f"invalid YAML: {exc}")]) from exc
    return config_from_dict(raw)


def _plain(obj):
    if is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    return obj


def serialize(cfg: RunConfig) -> dict:
    d = _plain(cfg)
    if d["mesh"]["helix"] is None:
        del d["mesh"]["helix"]
    for split in ("training", "validation", "ood", "frequency"):
        d["datasets"][split] = [{"B0": b, "freq": f} for b, f in d["datasets"][split]]
    return d


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(serialize(cfg), sort_keys=False)
