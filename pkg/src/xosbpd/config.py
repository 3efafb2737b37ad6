"""Run configuration: TOML sections, defaults, validation and serialization.

Grammar (every section optional except ``geometry`` and ``material``)::

    [scenario]   name, preset, scale
    [geometry.<kind>]   exactly one of grid | file | plate_with_hole | block_with_hole
    [material]   youngs_modulus, poisson_ratio, mass_density, fracture_energy,
                 regime, critical_stretch
    [model]      name (xosbpd | osbpd | lbbpd), m_factor, weight
    [kernel]     recompute_on_break, include_precracks, cache_dir
    [solver]     kind (adr | dynamic)
    [adr]        tol, max_iter, dt, safety_factor, stability_check
    [dynamic]    dt, t_end | n_steps, stability_safety
    [loading]    kind (none | edge_displacement | impact) and its parameters
    [[cracks]]   points
    [failure]    enabled, critical_stretch
    [output]     directory, snapshots, cadence, quantities
    [[output.probes]]   name, kind (arc | point | line) and its parameters

A config naming ``scenario.preset`` starts from that preset; its own tables
override the preset key by key, except ``geometry`` which is replaced whole.
Unknown sections or keys are errors, and every violation is reported.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import tomlkit

from .errors import UnknownPreset, ValidationError

MODELS = ("xosbpd", "osbpd", "lbbpd")
SOLVERS = ("adr", "dynamic")
REGIMES = ("3d", "plane_strain", "plane_stress")
SCALES = ("desk", "paper")
WEIGHTS = ("constant", "inverse")
QUANTITIES = ("u", "v", "theta", "sed", "phi")
PROBE_KINDS = ("arc", "point", "line")
LOADING_KINDS = ("none", "edge_displacement", "impact")

GEOMETRY_KEYS = {
    "grid": {"box": list, "spacing": float, "thickness": float},
    "file": {"path": str, "thickness": float},
    "plate_with_hole": {"length": float, "radius": float, "n_theta": int, "n_radial": int,
                        "thickness": float},
    "block_with_hole": {"length": float, "radius": float, "depth": float, "n_theta": int,
                        "n_radial": int, "n_depth": int},
}
GEOMETRY_REQUIRED = {"grid": ("box", "spacing"), "file": ("path",)}


@dataclass
class ScenarioSection:
    name: str = "custom"
    preset: str | None = None
    scale: str = "desk"


@dataclass
class GeometrySection:
    kind: str = "grid"
    params: dict = field(default_factory=dict)

    @property
    def dimension(self):
        if self.kind == "block_with_hole":
            return 3
        if self.kind == "grid":
            return len(self.params.get("box", [])) or None
        if self.kind == "plate_with_hole":
            return 2
        return None


@dataclass
class MaterialSection:
    youngs_modulus: float = 0.0
    poisson_ratio: float = 0.0
    mass_density: float = 1.0
    fracture_energy: float | None = None
    regime: str = "plane_strain"
    critical_stretch: float | None = None


@dataclass
class ModelSection:
    name: str = "xosbpd"
    m_factor: float = 3.01
    weight: str = "constant"


@dataclass
class KernelSection:
    recompute_on_break: bool = False
    include_precracks: bool = False
    cache_dir: str | None = None


@dataclass
class SolverSection:
    kind: str = "adr"


@dataclass
class AdrSection:
    tol: float = 1e-5
    max_iter: int = 20000
    dt: float = 1.0
    safety_factor: float = 1.05
    stability_check: bool = True


@dataclass
class DynamicSection:
    dt: float | None = None
    t_end: float | None = None
    n_steps: int | None = None
    stability_safety: float = 0.5


@dataclass
class LoadingSection:
    kind: str = "none"
    # edge_displacement: faces normal to ``axis`` move by +-u0
    u0: float = 0.0
    axis: int = 0
    profile: str = "linear"
    # impact: prescribed velocity on nodes within one char length of a segment
    segment: list | None = None
    velocity: list | None = None
    duration: float | None = None


@dataclass
class CrackSection:
    points: list = field(default_factory=list)


@dataclass
class FailureSection:
    enabled: bool = False
    critical_stretch: float | None = None


@dataclass
class ProbeSection:
    name: str = "probe"
    kind: str = "arc"
    quantities: list = field(default_factory=lambda: ["u", "theta", "sed", "phi"])
    center: list | None = None
    radius: float | None = None
    samples: int = 360
    z: float | None = None
    position: list | None = None
    start: list | None = None
    end: list | None = None


@dataclass
class OutputSection:
    directory: str = "out"
    snapshots: bool = True
    cadence: int = 0
    quantities: list = field(default_factory=lambda: ["u", "theta", "sed", "phi"])
    probes: list = field(default_factory=list)


@dataclass
class RunConfig:
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    geometry: GeometrySection = field(default_factory=GeometrySection)
    material: MaterialSection = field(default_factory=MaterialSection)
    model: ModelSection = field(default_factory=ModelSection)
    kernel: KernelSection = field(default_factory=KernelSection)
    solver: SolverSection = field(default_factory=SolverSection)
    adr: AdrSection = field(default_factory=AdrSection)
    dynamic: DynamicSection = field(default_factory=DynamicSection)
    loading: LoadingSection = field(default_factory=LoadingSection)
    cracks: list = field(default_factory=list)
    failure: FailureSection = field(default_factory=FailureSection)
    output: OutputSection = field(default_factory=OutputSection)

    @property
    def dimension(self):
        dim = self.geometry.dimension
        if dim is None:
            dim = 3 if self.material.regime == "3d" else 2
        return dim

    def to_dict(self) -> dict:
        """Plain nested dict in the TOML layout (None values dropped)."""
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "geometry":
                out["geometry"] = {value.kind: copy.deepcopy(value.params)}
            elif f.name == "cracks":
                out["cracks"] = [_drop_none(asdict(c)) for c in value]
            elif f.name == "output":
                sec = _drop_none(asdict(value))
                sec["probes"] = [_drop_none(p) for p in sec["probes"]]
                out["output"] = sec
            else:
                out[f.name] = _drop_none(asdict(value))
        if not out["cracks"]:
            del out["cracks"]
        if not out["output"]["probes"]:
            del out["output"]["probes"]
        return out


def _drop_none(d):
    return {k: v for k, v in d.items() if v is not None}


SECTION_TYPES = {
    "scenario": ScenarioSection, "material": MaterialSection, "model": ModelSection,
    "kernel": KernelSection, "solver": SolverSection, "adr": AdrSection,
    "dynamic": DynamicSection, "loading": LoadingSection, "failure": FailureSection,
}
SECTION_ORDER = [f.name for f in fields(RunConfig)]


# ---------------------------------------------------------------------------
# type coercion

def _coerce(value, ftype, where, errors):
    """Check ``value`` against a simple annotation; returns the coerced value."""
    t = ftype if isinstance(ftype, str) else getattr(ftype, "__name__", str(ftype))
    base = t.replace(" | None", "").strip()
    if value is None:
        if "None" in t:
            return None
        errors.append(f"{where}: value required")
        return None
    if base == "bool":
        if isinstance(value, bool):
            return value
    elif base == "int":
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif base == "float":
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif base == "str":
        if isinstance(value, str):
            return value
    elif base in ("list", "dict"):
        if isinstance(value, list if base == "list" else dict):
            return value
    errors.append(f"{where}: expected {base}, got {type(value).__name__}")
    return None


def _build_section(cls, table, name, errors):
    known = {f.name: f for f in fields(cls)}
    if not isinstance(table, dict):
        errors.append(f"[{name}] must be a table")
        return cls()
    kwargs = {}
    for key, value in table.items():
        if key not in known:
            errors.append(f"[{name}] unknown key {key!r}")
            continue
        kwargs[key] = _coerce(value, known[key].type, f"{name}.{key}", errors)
    return cls(**{k: v for k, v in kwargs.items() if v is not None or "None" in str(known[k].type)})


def _build_geometry(table, errors):
    if not isinstance(table, dict) or not table:
        errors.append("[geometry] requires exactly one source: " + ", ".join(GEOMETRY_KEYS))
        return GeometrySection()
    kinds = [k for k in table if k in GEOMETRY_KEYS]
    for k in table:
        if k not in GEOMETRY_KEYS:
            errors.append(f"[geometry] unknown source {k!r}")
    if len(kinds) != 1:
        if len(kinds) > 1:
            errors.append(f"[geometry] exactly one source allowed, got {kinds}")
        return GeometrySection(kinds[0] if kinds else "grid", {})
    kind = kinds[0]
    spec = GEOMETRY_KEYS[kind]
    params = {}
    sub = table[kind]
    if not isinstance(sub, dict):
        errors.append(f"[geometry.{kind}] must be a table")
        return GeometrySection(kind, {})
    for key, value in sub.items():
        if key not in spec:
            errors.append(f"[geometry.{kind}] unknown key {key!r}")
            continue
        v = _coerce(value, spec[key].__name__, f"geometry.{kind}.{key}", errors)
        if v is not None:
            params[key] = v
    for key in GEOMETRY_REQUIRED.get(kind, ()):
        if key not in params:
            errors.append(f"[geometry.{kind}] missing required key {key!r}")
    return GeometrySection(kind, params)


def from_dict(data: dict) -> RunConfig:
    """Build and validate a RunConfig from a nested dict (TOML layout)."""
    errors = []
    data = _plain(data)
    preset_name = (data.get("scenario") or {}).get("preset")
    if preset_name is not None:
        from .presets import preset_dict

        scale = (data.get("scenario") or {}).get("scale", "desk")
        try:
            base = preset_dict(preset_name, scale)
        except UnknownPreset as exc:
            errors.append(str(exc))
            base = {}
        except ValueError as exc:
            errors.append(str(exc))
            base = {}
        data = merge(base, data)
    for key in data:
        if key not in SECTION_ORDER:
            errors.append(f"unknown section [{key}]")
    cfg = RunConfig()
    for name, cls in SECTION_TYPES.items():
        if name in data:
            setattr(cfg, name, _build_section(cls, data[name], name, errors))
    if "geometry" in data:
        cfg.geometry = _build_geometry(data["geometry"], errors)
    else:
        errors.append("[geometry] section is required")
    if "material" not in data:
        errors.append("[material] section is required")
    cracks = data.get("cracks", [])
    if not isinstance(cracks, list):
        errors.append("[[cracks]] must be an array of tables")
        cracks = []
    cfg.cracks = [_build_section(CrackSection, c, f"cracks[{i}]", errors)
                  for i, c in enumerate(cracks)]
    if "output" in data:
        out = dict(data["output"]) if isinstance(data["output"], dict) else {}
        probes = out.pop("probes", [])
        cfg.output = _build_section(OutputSection, out, "output", errors)
        if not isinstance(probes, list):
            errors.append("[[output.probes]] must be an array of tables")
            probes = []
        cfg.output.probes = [_build_section(ProbeSection, p, f"output.probes[{i}]", errors)
                             for i, p in enumerate(probes)]
    validate(cfg, errors)
    if errors:
        raise ValidationError(errors)
    return cfg


def _plain(obj):
    """Strip tomlkit wrappers into builtin containers and scalars."""
    if hasattr(obj, "unwrap"):
        obj = obj.unwrap()
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_plain(v) for v in obj]
    return obj


def merge(base: dict, override: dict) -> dict:
    """Section-wise merge; ``geometry`` and array tables replace whole."""
    out = copy.deepcopy(base)
    for sec, value in override.items():
        if sec in ("geometry", "cracks") or not isinstance(value, dict) or sec not in out:
            out[sec] = copy.deepcopy(value)
        elif sec == "output":
            merged = dict(out[sec])
            merged.update(copy.deepcopy(value))
            out[sec] = merged
        else:
            merged = dict(out[sec]) if isinstance(out[sec], dict) else {}
            merged.update(copy.deepcopy(value))
            out[sec] = merged
    return out


# ---------------------------------------------------------------------------
# semantic validation

def domain_box(g: GeometrySection):
    """Axis-aligned bounds of a generated geometry, or None for node files."""
    p = g.params
    try:
        if g.kind == "grid":
            return np.asarray(p["box"], dtype=float)
        if g.kind in ("plate_with_hole", "block_with_hole"):
            h = 0.5 * p["length"]
            box = [[-h, h], [-h, h]]
            if g.kind == "block_with_hole":
                box.append([0.0, p["depth"]])
            return np.asarray(box, dtype=float)
    except (KeyError, TypeError, ValueError):
        pass
    return None


def _vec(v, n, where, errors):
    if not (isinstance(v, list) and len(v) == n
            and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)):
        errors.append(f"{where}: expected a list of {n} numbers")
        return False
    return True


def validate(cfg: RunConfig, errors: list):
    sc, g, mat, mod = cfg.scenario, cfg.geometry, cfg.material, cfg.model
    if sc.scale not in SCALES:
        errors.append(f"scenario.scale must be one of {SCALES}")
    p = g.params
    if g.kind == "grid" and "box" in p:
        box = p["box"]
        if not (isinstance(box, list) and len(box) in (2, 3)
                and all(isinstance(b, list) and len(b) == 2 for b in box)):
            errors.append("geometry.grid.box: expected [[lo, hi], ...] for 2 or 3 axes")
        elif any(not (hi > lo) for lo, hi in box):
            errors.append("geometry.grid.box: every axis needs hi > lo")
    for key in ("spacing", "length", "radius", "depth", "thickness"):
        if key in p and not p[key] > 0:
            errors.append(f"geometry.{g.kind}.{key} must be positive")
    for key in ("n_theta", "n_radial", "n_depth"):
        if key in p and p[key] < 1:
            errors.append(f"geometry.{g.kind}.{key} must be at least 1")
    if "n_theta" in p and p["n_theta"] % 8:
        errors.append(f"geometry.{g.kind}.n_theta must be a multiple of 8")
    if g.kind in ("plate_with_hole", "block_with_hole"):
        if p.get("radius", 0.1) >= 0.5 * p.get("length", 1.0):
            errors.append(f"geometry.{g.kind}: radius must be below half the length")

    if not mat.youngs_modulus > 0:
        errors.append("material.youngs_modulus must be positive")
    if not -1.0 < mat.poisson_ratio < 0.5:
        errors.append("material.poisson_ratio must lie in (-1, 0.5)")
    if not mat.mass_density > 0:
        errors.append("material.mass_density must be positive")
    if mat.regime not in REGIMES:
        errors.append(f"material.regime must be one of {REGIMES}")
    elif g.dimension is not None and (mat.regime == "3d") != (g.dimension == 3):
        errors.append(f"material.regime {mat.regime!r} does not match a "
                      f"{g.dimension}-D geometry")
    if mat.fracture_energy is not None and not mat.fracture_energy > 0:
        errors.append("material.fracture_energy must be positive")

    if mod.name not in MODELS:
        errors.append(f"model.name must be one of {MODELS}")
    if not mod.m_factor > 0:
        errors.append("model.m_factor must be positive")
    if mod.weight not in WEIGHTS:
        errors.append(f"model.weight must be one of {WEIGHTS}")

    if cfg.solver.kind not in SOLVERS:
        errors.append(f"solver.kind must be one of {SOLVERS}")
    a = cfg.adr
    if not a.tol > 0:
        errors.append("adr.tol must be positive")
    if a.max_iter < 0:
        errors.append("adr.max_iter must be non-negative")
    if not a.dt > 0:
        errors.append("adr.dt must be positive")
    if not a.safety_factor >= 1.0:
        errors.append("adr.safety_factor must be at least 1")
    d = cfg.dynamic
    if cfg.solver.kind == "dynamic":
        if d.dt is None or not d.dt > 0:
            errors.append("dynamic.dt must be given and positive")
        if (d.t_end is None) == (d.n_steps is None):
            errors.append("dynamic: give exactly one of t_end and n_steps")
        elif d.t_end is not None and not d.t_end > 0:
            errors.append("dynamic.t_end must be positive")
        elif d.n_steps is not None and d.n_steps < 0:
            errors.append("dynamic.n_steps must be non-negative")
    if not d.stability_safety > 0:
        errors.append("dynamic.stability_safety must be positive")

    dim = cfg.dimension
    ld = cfg.loading
    if ld.kind not in LOADING_KINDS:
        errors.append(f"loading.kind must be one of {LOADING_KINDS}")
    elif ld.kind == "edge_displacement":
        if not 0 <= ld.axis < dim:
            errors.append(f"loading.axis must be in [0, {dim})")
        if ld.profile not in ("linear", "uniform"):
            errors.append("loading.profile must be 'linear' or 'uniform'")
        if cfg.solver.kind == "dynamic":
            errors.append("loading.kind 'edge_displacement' needs solver.kind = 'adr'")
    elif ld.kind == "impact":
        if ld.segment is None or not (isinstance(ld.segment, list) and len(ld.segment) == 2):
            errors.append("loading.segment: expected two end points")
        else:
            for k, pt in enumerate(ld.segment):
                _vec(pt, dim, f"loading.segment[{k}]", errors)
        if ld.velocity is not None:
            _vec(ld.velocity, dim, "loading.velocity", errors)
        else:
            errors.append("loading.velocity is required for an impact")
        if ld.duration is not None and not ld.duration > 0:
            errors.append("loading.duration must be positive")
        if cfg.solver.kind != "dynamic":
            errors.append("loading.kind 'impact' needs solver.kind = 'dynamic'")

    for i, c in enumerate(cfg.cracks):
        pts = c.points
        if dim == 2 and (not isinstance(pts, list) or len(pts) != 2):
            errors.append(f"cracks[{i}].points: a 2-D crack needs two end points")
            continue
        if dim == 3 and (not isinstance(pts, list) or len(pts) < 3):
            errors.append(f"cracks[{i}].points: a 3-D crack needs a polygon of >= 3 points")
            continue
        for k, pt in enumerate(pts):
            _vec(pt, dim, f"cracks[{i}].points[{k}]", errors)

    f = cfg.failure
    if f.critical_stretch is not None and not f.critical_stretch > 0:
        errors.append("failure.critical_stretch must be positive")
    if f.enabled:
        if cfg.solver.kind == "adr":
            warnings.warn("failure is ignored by the quasi-static solver", stacklevel=3)
        elif (f.critical_stretch is None and mat.critical_stretch is None
              and not (mat.regime == "plane_strain" and mat.fracture_energy is not None)):
            errors.append("failure needs a critical stretch: set failure.critical_stretch, "
                          "or use plane strain with material.fracture_energy")

    o = cfg.output
    for q in o.quantities:
        if q not in QUANTITIES:
            errors.append(f"output.quantities: unknown quantity {q!r}")
    if o.cadence < 0:
        errors.append("output.cadence must be non-negative")
    names = set()
    for i, pr in enumerate(o.probes):
        where = f"output.probes[{i}]"
        if pr.name in names:
            errors.append(f"{where}: duplicate probe name {pr.name!r}")
        names.add(pr.name)
        for q in pr.quantities:
            if q not in QUANTITIES:
                errors.append(f"{where}.quantities: unknown quantity {q!r}")
        if pr.kind not in PROBE_KINDS:
            errors.append(f"{where}.kind must be one of {PROBE_KINDS}")
            continue
        if pr.samples < 1:
            errors.append(f"{where}.samples must be at least 1")
        if pr.kind == "arc":
            if pr.center is None or pr.radius is None:
                errors.append(f"{where}: an arc needs center and radius")
            else:
                _vec(pr.center, 2, f"{where}.center", errors)
                if not pr.radius > 0:
                    errors.append(f"{where}.radius must be positive")
            if dim == 3 and pr.z is None:
                errors.append(f"{where}: a 3-D arc needs z")
        elif pr.kind == "point":
            if pr.position is None:
                errors.append(f"{where}: a point probe needs position")
            else:
                _vec(pr.position, dim, f"{where}.position", errors)
        else:
            if pr.start is None or pr.end is None:
                errors.append(f"{where}: a line probe needs start and end")
            else:
                _vec(pr.start, dim, f"{where}.start", errors)
                _vec(pr.end, dim, f"{where}.end", errors)
        box = domain_box(g)
        if box is not None and box.shape[0] == dim and not any(where in e for e in errors):
            from .output import probe_points

            _, pts = probe_points(pr, dim)
            span = float(np.max(box[:, 1] - box[:, 0]))
            tol = 1e-9 * span
            outside = np.any((pts < box[:, 0] - tol) | (pts > box[:, 1] + tol), axis=1)
            if outside.any():
                errors.append(f"{where}: {int(outside.sum())} of {len(pts)} sample(s) lie "
                              "outside the domain")


# ---------------------------------------------------------------------------
# file I/O

def parse_toml(text: str) -> dict:
    try:
        return _plain(tomlkit.parse(text))
    except tomlkit.exceptions.ParseError as exc:
        raise ValidationError([f"TOML syntax: {exc}"]) from exc


def read_toml(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError([f"{path}: {exc.strerror or exc}"]) from exc
    return parse_toml(text)


def loads(text: str) -> RunConfig:
    return from_dict(parse_toml(text))


def load_config(path) -> RunConfig:
    return from_dict(read_toml(path))


def serialize(cfg: RunConfig) -> str:
    """Complete TOML text for ``cfg``; loading it gives an equal config."""
    data = cfg.to_dict()
    # the serialized form is self-contained, so the preset is not re-applied
    data["scenario"].pop("preset", None)
    return tomlkit.dumps(data)


def save_config(path, cfg: RunConfig):
    Path(path).write_text(serialize(cfg), encoding="utf-8")
