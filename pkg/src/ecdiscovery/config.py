"""Experiment configuration files.

Plain ``key = value`` lines in INI sections::

    [experiment]
    name = burgers3
    grid.points = 256
    grid.extent = -1 1
    grid.time_steps = 100
    grid.time_extent = 0 1
    n_per_model = 100
    noise_levels = 0 0.1 0.2 0.3 0.4 0.5

    [model 1]
    family = burgers_visc
    lam1 = -1.5 -0.5
    lam2 = 0.1 0.3
    bc = periodic dirichlet0
    ic.n_modes = 1 1

The number in each ``[model N]`` header is the class label.  Every value is
validated up front and the whole configuration is rendered back to a
canonical text whose hash tags every output file.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field as dc_field, fields, replace
from pathlib import Path

import numpy as np

from .cubical_ec import DEFAULT_N_THRESHOLDS, DEFAULT_RANGE, parse_smoothing, standard_thresholds
from .errors import ConfigurationError, FormatError, ValidationError
from .field_core import GridSpec, make_grid
from .pde_sim import BC_KINDS, FAMILIES, ICSettings, ModelSpec
from .svm_classifier import DEFAULT_C_GRID, DEFAULT_GAMMA_FACTORS, KERNELS

DEFAULT_NOISE_LEVELS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    library: tuple
    grid: GridSpec
    n_per_model: int = 100
    noise_levels: tuple = DEFAULT_NOISE_LEVELS
    test_fraction: float = 0.2
    repeats: int = 5
    C_grid: tuple = DEFAULT_C_GRID
    gamma_factors: tuple = DEFAULT_GAMMA_FACTORS
    k_folds: int = 5
    kernel: str = "rbf"
    master_seed: int = 0
    n_thresholds: int = DEFAULT_N_THRESHOLDS
    threshold_range: tuple = DEFAULT_RANGE
    smoothing: str = "0"
    pca_components: int = 2
    extra: dict = dc_field(default_factory=dict, compare=False)

    @property
    def thresholds(self) -> np.ndarray:
        return standard_thresholds(self.n_thresholds, *self.threshold_range)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, master_seed=int(seed))

    def with_noise(self, levels) -> "ExperimentConfig":
        return replace(self, noise_levels=tuple(float(p) for p in levels))

    def canonical(self) -> str:
        """Fully expanded configuration text (defaults included)."""
        return render_config(self)

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def header_lines(self, version: str) -> list[str]:
        return [
            f"ecdiscovery={version} config={self.name} config_sha256={self.sha256()[:16]} seed={self.master_seed}",
        ]


# -- parsing ------------------------------------------------------------------


def _floats(text: str, key: str, n: int | None = None) -> tuple:
    try:
        vals = tuple(float(t) for t in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigurationError(f"{key}: expected numbers, got {text!r}") from exc
    if n is not None and len(vals) != n:
        raise ConfigurationError(f"{key}: expected {n} numbers, got {len(vals)}")
    if not all(np.isfinite(vals)):
        raise ConfigurationError(f"{key}: values must be finite")
    return vals


def _ints(text: str, key: str, n: int | None = None) -> tuple:
    vals = _floats(text, key, n)
    if any(v != int(v) for v in vals):
        raise ConfigurationError(f"{key}: expected integers, got {text!r}")
    return tuple(int(v) for v in vals)


_IC_KEYS = {f.name: f.type for f in fields(ICSettings)}


def _ic_settings(section, prefix: str, base: ICSettings | None = None) -> ICSettings | None:
    found = {}
    for key, value in section.items():
        if not key.startswith(prefix + "."):
            continue
        name = key[len(prefix) + 1 :]
        if name not in _IC_KEYS:
            raise ConfigurationError(f"unknown setting {key!r}")
        if name == "k_max":
            found[name] = _ints(value, key, 1)[0]
        elif name in ("n_bumps", "n_modes"):
            found[name] = _ints(value, key, 2)
        else:
            found[name] = _floats(value, key, 2)
    if not found:
        return None
    ic = replace(base or ICSettings(), **found)
    for name in ("n_bumps", "n_modes"):
        lo, hi = getattr(ic, name)
        if lo < 0 or hi < lo:
            raise ConfigurationError(f"{prefix}.{name}: need 0 <= min <= max")
    if ic.k_max < 1:
        raise ConfigurationError(f"{prefix}.k_max must be at least 1")
    return ic


_MODEL_KEYS = {"family", "name", "variant", "bc"}


def _model(section_name: str, section) -> ModelSpec:
    parts = section_name.split()
    try:
        model_id = int(parts[1])
    except (IndexError, ValueError) as exc:
        raise ConfigurationError(f"section [{section_name}] must be named 'model <integer id>'") from exc
    family = section.get("family")
    if family is None:
        raise ConfigurationError(f"[{section_name}] needs a family")
    if family not in FAMILIES:
        raise ConfigurationError(f"[{section_name}] unknown family {family!r}")
    params = FAMILIES[family].params
    ranges = {}
    for key, value in section.items():
        if key in _MODEL_KEYS or key.startswith("ic.") or key.startswith("ic_v."):
            continue
        if key not in params:
            raise ConfigurationError(f"[{section_name}] unknown key {key!r} for {family}")
        ranges[key] = _floats(value, f"{section_name}.{key}", 2)
    bcs = tuple(section.get("bc", " ".join(BC_KINDS)).split())
    ic = _ic_settings(section, "ic") or ICSettings()
    ic_v = _ic_settings(section, "ic_v", ic)
    try:
        return ModelSpec(
            model_id,
            family,
            ranges,
            name=section.get("name", f"model{model_id}"),
            variant=section.get("variant", "text"),
            bc_choices=bcs,
            ic=ic,
            ic_secondary=ic_v,
        )
    except ValidationError as exc:
        raise ConfigurationError(f"[{section_name}] {exc}") from exc


_EXPERIMENT_KEYS = {
    "name", "grid.points", "grid.extent", "grid.time_steps", "grid.time_extent", "n_per_model",
    "noise_levels", "test_fraction", "repeats", "C_grid", "gamma_factors", "k_folds", "kernel",
    "master_seed", "n_thresholds", "threshold_range", "smoothing", "pca_components",
}


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # parameter names such as D and R are case sensitive
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"{source}: {exc}") from exc
    if not cp.has_section("experiment"):
        raise ConfigurationError(f"{source}: missing [experiment] section")
    ex = cp["experiment"]
    unknown = set(ex.keys()) - _EXPERIMENT_KEYS
    if unknown:
        raise ConfigurationError(f"{source}: unknown experiment keys {sorted(unknown)}")

    points = _ints(ex.get("grid.points", "256"), "grid.points")
    extent = _floats(ex.get("grid.extent", "-1 1"), "grid.extent", 2)
    steps = _ints(ex.get("grid.time_steps", "100"), "grid.time_steps", 1)[0]
    t_ext = _floats(ex.get("grid.time_extent", "0 1"), "grid.time_extent", 2)
    try:
        grid = make_grid(list(points), [extent] * len(points), steps, t_ext)
    except ValidationError as exc:
        raise ConfigurationError(f"{source}: {exc}") from exc

    library = []
    for name in cp.sections():
        if name == "experiment":
            continue
        if not name.startswith("model"):
            raise ConfigurationError(f"{source}: unexpected section [{name}]")
        library.append(_model(name, cp[name]))
    if not library:
        raise ConfigurationError(f"{source}: no [model N] sections")
    ids = [m.id for m in library]
    if len(set(ids)) != len(ids):
        raise ConfigurationError(f"{source}: duplicate model ids")
    for m in library:
        if m.n_spatial != grid.n_spatial:
            raise ConfigurationError(f"{source}: {m.name} ({m.family}) needs a {m.n_spatial}-D spatial grid")

    def one_int(key, default, lo=None):
        v = _ints(ex.get(key, str(default)), key, 1)[0]
        if lo is not None and v < lo:
            raise ConfigurationError(f"{key} must be at least {lo}")
        return v

    noise = _floats(ex.get("noise_levels", " ".join(map(str, DEFAULT_NOISE_LEVELS))), "noise_levels")
    if not noise or any(not 0 <= p <= 0.5 for p in noise):
        raise ConfigurationError("noise_levels must be non-empty and lie in [0, 0.5]")
    test_fraction = _floats(ex.get("test_fraction", "0.2"), "test_fraction", 1)[0]
    if not 0 < test_fraction < 1:
        raise ConfigurationError("test_fraction must lie in (0, 1)")
    C_grid = _floats(ex.get("C_grid", " ".join(map(str, DEFAULT_C_GRID))), "C_grid")
    gamma = _floats(ex.get("gamma_factors", " ".join(map(str, DEFAULT_GAMMA_FACTORS))), "gamma_factors")
    if not C_grid or not gamma or min(C_grid) <= 0 or min(gamma) <= 0:
        raise ConfigurationError("C_grid and gamma_factors must be non-empty and positive")
    kernel = ex.get("kernel", "rbf")
    if kernel not in KERNELS:
        raise ConfigurationError(f"unknown kernel {kernel!r}")
    t_range = _floats(ex.get("threshold_range", f"{DEFAULT_RANGE[0]} {DEFAULT_RANGE[1]}"), "threshold_range", 2)
    if not t_range[0] > t_range[1]:
        raise ConfigurationError("threshold_range runs from high to low")
    try:
        smoothing = parse_smoothing(ex.get("smoothing", "0"))
    except (ValidationError, ValueError) as exc:
        raise ConfigurationError(f"smoothing: {exc}") from exc

    return ExperimentConfig(
        name=ex.get("name", Path(source).stem),
        library=tuple(library),
        grid=grid,
        n_per_model=one_int("n_per_model", 100, 1),
        noise_levels=tuple(noise),
        test_fraction=test_fraction,
        repeats=one_int("repeats", 5, 1),
        C_grid=tuple(C_grid),
        gamma_factors=tuple(gamma),
        k_folds=one_int("k_folds", 5, 2),
        kernel=kernel,
        master_seed=one_int("master_seed", 0, 0),
        n_thresholds=one_int("n_thresholds", DEFAULT_N_THRESHOLDS, 2),
        threshold_range=t_range,
        smoothing=str(smoothing),
        pca_components=one_int("pca_components", 2, 1),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        packaged = Path(__file__).parent / "configs" / path.name
        if packaged.exists():
            path = packaged
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


# -- rendering ----------------------------------------------------------------


def _num(x) -> str:
    return repr(float(x)) if not float(x).is_integer() else str(int(x)) if abs(x) < 1e15 else repr(float(x))


def _nums(xs) -> str:
    return " ".join(_num(x) for x in xs)


def render_config(cfg: ExperimentConfig) -> str:
    g = cfg.grid
    lines = [
        "[experiment]",
        f"name = {cfg.name}",
        f"grid.points = {' '.join(str(n) for n in g.spatial_dims)}",
        f"grid.extent = {_nums(g.spatial_extents[0])}",
        f"grid.time_steps = {g.time_steps}",
        f"grid.time_extent = {_nums(g.time_extent)}",
        f"n_per_model = {cfg.n_per_model}",
        f"noise_levels = {_nums(cfg.noise_levels)}",
        f"test_fraction = {_num(cfg.test_fraction)}",
        f"repeats = {cfg.repeats}",
        f"C_grid = {_nums(cfg.C_grid)}",
        f"gamma_factors = {_nums(cfg.gamma_factors)}",
        f"k_folds = {cfg.k_folds}",
        f"kernel = {cfg.kernel}",
        f"master_seed = {cfg.master_seed}",
        f"n_thresholds = {cfg.n_thresholds}",
        f"threshold_range = {_nums(cfg.threshold_range)}",
        f"smoothing = {cfg.smoothing}",
        f"pca_components = {cfg.pca_components}",
    ]
    for m in cfg.library:
        lines += ["", f"[model {m.id}]", f"family = {m.family}", f"name = {m.name}", f"variant = {m.variant}"]
        for p, (lo, hi) in m.param_ranges.items():
            lines.append(f"{p} = {_nums((lo, hi))}")
        lines.append(f"bc = {' '.join(m.bc_choices)}")
        for prefix, ic in (("ic", m.ic), ("ic_v", m.ic_secondary)):
            if ic is None:
                continue
            for f in fields(ICSettings):
                v = getattr(ic, f.name)
                lines.append(f"{prefix}.{f.name} = {_nums(v) if isinstance(v, tuple) else v}")
    return "\n".join(lines) + "\n"
