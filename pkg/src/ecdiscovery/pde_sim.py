"""Randomized simulation of the candidate PDE families and measurement noise.

Every example is replayable from one integer seed: the seed determines the
parameters, the initial condition and the boundary condition.  Dataset
seeds come from ``numpy.random.SeedSequence`` keyed by
``(master_seed, model_id, example_index, attempt)``, so generation order and
worker count never change the result.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Mapping, Sequence

import numpy as np

from . import _kernels as K
from .cubical_ec import ec_features, standard_thresholds
from .errors import ConfigurationError, SimulationDiverged, ValidationError
from .field_core import Field, GridSpec, LabeledDataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Family:
    n_spatial: int
    params: tuple[str, ...]
    default_ranges: Mapping[str, tuple[float, float]]
    n_components: int = 1


_BURGERS = {"lam1": (-1.5, -0.5), "lam2": (0.1, 0.3)}
_TABLE1 = {"c": (0.1, 1.0), "d": (0.5, 3.0), "bx": (-1.0, 1.0), "by": (-1.0, 1.0)}

FAMILIES: dict[str, Family] = {
    "burgers_visc": Family(1, ("lam1", "lam2"), _BURGERS),
    "burgers_u2visc": Family(1, ("lam1", "lam2"), _BURGERS),
    "burgers_adv": Family(1, ("lam1",), _BURGERS),
    "rd_full": Family(2, ("D", "R"), {"D": (0.02, 0.2), "R": (0.5, 5.0)}, 2),
    "rd_reaction": Family(2, ("R",), {"R": (0.5, 5.0)}, 2),
    "rd_diffusion": Family(2, ("D",), {"D": (0.02, 0.2)}, 2),
    "diffusion2d": Family(2, ("c",), _TABLE1),
    "convdiff2d": Family(2, ("c", "bx", "by"), _TABLE1),
    "wave2d": Family(2, ("c",), _TABLE1),
    "wave_conv2d": Family(2, ("c", "bx", "by"), _TABLE1),
    "damped_wave2d": Family(2, ("c", "d"), _TABLE1),
    "damped_wave_conv2d": Family(2, ("c", "d", "bx", "by"), _TABLE1),
}

# parameters that multiply a diffusion, reaction, damping or wave-speed term
POSITIVE_PARAMS = {"lam2", "D", "R", "c", "d"}

BC_KINDS = ("periodic", "dirichlet0", "dirichlet")
MAX_SUBSTEPS = 1_000_000  # per output frame; beyond this the draw counts as diverged


@dataclass(frozen=True)
class ICSettings:
    """Distribution of random initial conditions.

    ``n_bumps`` / ``n_modes`` are inclusive count ranges; bump widths are
    fractions of the domain length; Fourier modes use integer wavenumbers
    ``1..k_max`` per axis so that periodic domains stay smooth.
    """

    n_bumps: tuple[int, int] = (2, 5)
    n_modes: tuple[int, int] = (1, 3)
    k_max: int = 3
    width: tuple[float, float] = (0.05, 0.3)
    dirichlet_range: tuple[float, float] = (-0.5, 0.5)
    offset: tuple[float, float] = (0.0, 0.0)  # |mean shift| range, random sign


@dataclass(frozen=True)
class ModelSpec:
    id: int
    family: str
    param_ranges: Mapping[str, tuple[float, float]] = dc_field(default_factory=dict)
    name: str = ""
    variant: str = "text"
    bc_choices: tuple[str, ...] = BC_KINDS
    ic: ICSettings = ICSettings()
    ic_secondary: ICSettings | None = None  # for v; defaults to ``ic``

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown model family {self.family!r}")
        fam = FAMILIES[self.family]
        if self.variant not in ("text", "caption"):
            raise ValidationError(f"unknown variant {self.variant!r}")
        if self.variant == "caption" and self.family != "burgers_adv":
            raise ValidationError("the caption variant only exists for burgers_adv")
        ranges = {}
        for p in fam.params:
            lo, hi = self.param_ranges.get(p, fam.default_ranges[p])
            if self.variant == "caption" and p == "lam1" and p not in self.param_ranges:
                lo, hi = fam.default_ranges["lam2"]
            lo, hi = float(lo), float(hi)
            if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
                raise ValidationError(f"{self.family}: range for {p} must satisfy min < max, got ({lo}, {hi})")
            positive = p in POSITIVE_PARAMS or (self.variant == "caption" and p == "lam1")
            if positive and lo <= 0:
                raise ValidationError(f"{self.family}: {p} range must be strictly positive")
            ranges[p] = (lo, hi)
        extra = set(self.param_ranges) - set(fam.params)
        if extra:
            raise ValidationError(f"{self.family}: unknown parameters {sorted(extra)}")
        for bc in self.bc_choices:
            if bc not in BC_KINDS:
                raise ValidationError(f"unknown boundary condition {bc!r}")
        if not self.bc_choices:
            raise ValidationError("bc_choices must not be empty")
        object.__setattr__(self, "param_ranges", ranges)
        if not self.name:
            object.__setattr__(self, "name", f"model{self.id + 1}")

    @property
    def n_spatial(self) -> int:
        return FAMILIES[self.family].n_spatial


@dataclass(frozen=True)
class ModelInstance:
    """A concrete draw: parameters, IC and BC descriptors and the seed.

    ``ic`` maps component names to either a descriptor dict with ``bumps``
    and ``modes`` lists or an explicit array on the spatial grid.  ``bc``
    holds ``type`` and, for Dirichlet, ``values``.
    """

    spec: ModelSpec
    params: Mapping[str, float]
    ic: Mapping[str, object]
    bc: Mapping[str, object]
    seed: int = 0


@dataclass(frozen=True)
class NoiseSpec:
    level: float
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.level <= 0.5):
            raise ValidationError(f"noise level must lie in [0, 0.5], got {self.level}")


# -- sampling -----------------------------------------------------------------


def _draw_ic(rng: np.random.Generator, s: ICSettings, n_spatial: int) -> dict:
    bumps = []
    for _ in range(int(rng.integers(s.n_bumps[0], s.n_bumps[1] + 1))):
        amp = float(rng.uniform(-1.0, 1.0))
        centre = [float(c) for c in rng.uniform(0.0, 1.0, n_spatial)]
        width = float(rng.uniform(*s.width))
        bumps.append((amp, centre, width))
    modes = []
    for _ in range(int(rng.integers(s.n_modes[0], s.n_modes[1] + 1))):
        amp = float(rng.uniform(-1.0, 1.0))
        ks = [int(k) for k in rng.integers(0 if n_spatial > 1 else 1, s.k_max + 1, n_spatial)]
        if not any(ks):
            ks[0] = 1
        phase = float(rng.uniform(0.0, 2.0 * np.pi))
        modes.append((amp, ks, phase))
    out = {"bumps": bumps, "modes": modes}
    if s.offset[1] > 0:
        sign = 1.0 if rng.random() < 0.5 else -1.0
        out["offset"] = sign * float(rng.uniform(*s.offset))
    return out


def sample_model_instance(spec: ModelSpec, seed: int) -> ModelInstance:
    """Draw parameters, IC and BC; the same seed always gives the same instance."""
    rng = np.random.default_rng(int(seed))
    params = {p: float(rng.uniform(lo, hi)) for p, (lo, hi) in spec.param_ranges.items()}
    fam = FAMILIES[spec.family]
    names = ("u", "v") if fam.n_components == 2 else ("u",)
    settings = {"u": spec.ic, "v": spec.ic_secondary or spec.ic}
    ic = {name: _draw_ic(rng, settings[name], fam.n_spatial) for name in names}
    kind = spec.bc_choices[int(rng.integers(len(spec.bc_choices)))]
    if kind == "periodic":
        bc = {"type": "periodic"}
    else:
        n_values = 2 if fam.n_spatial == 1 else 1
        if kind == "dirichlet0":
            values = (0.0,) * n_values
        else:
            values = tuple(float(x) for x in rng.uniform(*spec.ic.dirichlet_range, n_values))
        bc = {"type": "dirichlet", "values": values}
    return ModelInstance(spec, params, ic, bc, int(seed))


# -- initial conditions -------------------------------------------------------


def _mesh(grid: GridSpec):
    axes = [grid.coords("x")]
    if grid.n_spatial == 2:
        axes.append(grid.coords("y"))
        x, y = np.meshgrid(axes[0], axes[1], indexing="xy")
        return [x, y]
    return axes


def evaluate_ic(descriptor, grid: GridSpec, normalize: bool = True) -> np.ndarray:
    """Evaluate an IC descriptor on the spatial grid, shape ``([ny,] nx)``.

    Bumps are wrapped over one period on each side, so the result is
    smooth across periodic boundaries.
    """
    shape = grid.shape[1:]
    if isinstance(descriptor, np.ndarray) or not isinstance(descriptor, Mapping):
        arr = np.asarray(descriptor, dtype=np.float64)
        if arr.shape != shape:
            raise ValidationError(f"explicit IC has shape {arr.shape}, grid needs {shape}")
        return arr.copy()

    coords = _mesh(grid)
    lows = [lo for lo, _ in grid.spatial_extents]
    lengths = [hi - lo for lo, hi in grid.spatial_extents]
    u = np.zeros(shape)
    for amp, centre, width in descriptor.get("bumps", []):
        r2 = np.zeros(shape)
        total = np.zeros(shape)
        images = [-1, 0, 1]
        if grid.n_spatial == 1:
            for s in images:
                d = coords[0] - (lows[0] + centre[0] * lengths[0] + s * lengths[0])
                total += np.exp(-0.5 * (d / (width * lengths[0])) ** 2)
        else:
            for sx in images:
                for sy in images:
                    dx = coords[0] - (lows[0] + centre[0] * lengths[0] + sx * lengths[0])
                    dy = coords[1] - (lows[1] + centre[1] * lengths[1] + sy * lengths[1])
                    r2 = (dx / lengths[0]) ** 2 + (dy / lengths[1]) ** 2
                    total += np.exp(-0.5 * r2 / width**2)
        u += amp * total
    for amp, ks, phase in descriptor.get("modes", []):
        arg = np.full(shape, phase)
        for axis, k in enumerate(ks):
            arg = arg + 2.0 * np.pi * k * (coords[axis] - lows[axis]) / lengths[axis]
        u += amp * np.sin(arg)
    if normalize:
        peak = np.abs(u).max()
        if peak > 0:
            u = u / peak
    return u + float(descriptor.get("offset", 0.0))


def _apply_bc(u: np.ndarray, bc) -> np.ndarray:
    u = u.copy()
    if bc["type"] == "periodic":
        # the last sample duplicates the first; wrapped bumps only match to round-off
        u[..., -1] = u[..., 0]
        if u.ndim == 2:
            u[-1, :] = u[0, :]
        return u
    values = bc["values"]
    if u.ndim == 1:
        u[0], u[-1] = values[0], values[-1]
    else:
        g = values[0]
        u[0, :] = u[-1, :] = u[:, 0] = u[:, -1] = g
    return u


# -- integration --------------------------------------------------------------

_KIND_1D = {
    "burgers_visc": K.BURGERS_VISC,
    "burgers_u2visc": K.BURGERS_U2VISC,
    "burgers_adv": K.BURGERS_ADV,
}


def substeps(instance: ModelInstance, grid: GridSpec, u_bound: float = 1.0) -> int:
    """Internal RK4 substeps per output interval.

    The step honours ``dt <= 0.2 h**2 / diffusivity`` and
    ``dt <= 0.5 h / speed`` for advection and wave propagation, plus
    ``dt <= 0.5 / rate`` for reaction and damping.
    """
    p = instance.params
    fam = instance.spec.family
    h = min(grid.spacings)
    limits = [np.inf]
    if fam in _KIND_1D:
        if instance.spec.variant == "caption":
            limits.append(0.2 * h * h / p["lam1"])
        else:
            limits.append(0.5 * h / (abs(p["lam1"]) * u_bound))
            if fam == "burgers_visc":
                limits.append(0.2 * h * h / p["lam2"])
            elif fam == "burgers_u2visc":
                limits.append(0.2 * h * h / (p["lam2"] * u_bound**2))
    elif fam.startswith("rd_"):
        if p.get("D", 0.0) > 0:
            limits.append(0.2 * h * h / p["D"])
        if p.get("R", 0.0) > 0:
            limits.append(0.5 / p["R"])
    else:
        speed = max(abs(p.get("bx", 0.0)), abs(p.get("by", 0.0)))
        if speed > 0:
            limits.append(0.5 * h / speed)
        if fam in ("diffusion2d", "convdiff2d"):
            limits.append(0.2 * h * h / p["c"])
        else:
            limits.append(0.5 * h / math.sqrt(p["c"]))
            if p.get("d", 0.0) > 0:
                limits.append(0.5 / p["d"])
    dt_max = min(limits)
    if not np.isfinite(dt_max):
        return 1
    n = grid.dt / dt_max * (1.0 - 1e-12)
    if not n <= MAX_SUBSTEPS:
        raise SimulationDiverged(
            f"{fam} instance with seed {instance.seed} needs {n:.3g} substeps per frame", seed=instance.seed
        )
    return max(1, int(math.ceil(n)))


def simulate(instance: ModelInstance, grid: GridSpec, refine: int = 1):
    """Integrate one instance on ``grid``.

    Returns a :class:`Field` for scalar families and a ``(u, v)`` pair for
    the reaction-diffusion families.  ``refine`` multiplies the number of
    internal substeps (for convergence checks).
    """
    spec = instance.spec
    fam = FAMILIES[spec.family]
    if grid.n_spatial != fam.n_spatial:
        raise ValidationError(f"{spec.family} needs {fam.n_spatial} spatial axes, grid has {grid.n_spatial}")
    p = instance.params
    bc = instance.bc
    periodic = bc["type"] == "periodic"
    names = ("u", "v") if fam.n_components == 2 else ("u",)
    ics = {name: _apply_bc(evaluate_ic(instance.ic[name], grid), bc) for name in names}
    bound = max(float(np.abs(a).max()) for a in ics.values())
    if bc["type"] == "dirichlet":
        bound = max(bound, max(abs(v) for v in bc["values"]))
    bound = max(bound, 1e-12)
    nsub = substeps(instance, grid, bound) * int(refine)

    if fam.n_spatial == 1:
        if spec.variant == "caption":
            kind, lam1, lam2 = K.DIFFUSION_1D, p["lam1"], 0.0
        else:
            kind, lam1, lam2 = _KIND_1D[spec.family], p["lam1"], p.get("lam2", 0.0)
        frames, ok = K.integrate_1d(ics["u"], kind, lam1, lam2, grid.spacings[0], periodic, grid.dt, grid.time_steps, nsub)
        outputs = {"u": frames}
    else:
        hx, hy = grid.spacings
        u0 = ics["u"]
        if spec.family.startswith("rd_"):
            kind = K.SYS_RD
            v0 = ics["v"]
        elif spec.family in ("diffusion2d", "convdiff2d"):
            kind = K.SYS_SCALAR
            v0 = np.zeros_like(u0)
        else:
            kind = K.SYS_WAVE
            v0 = np.zeros_like(u0)
        uf, vf, ok = K.integrate_2d(
            u0, v0, kind,
            p.get("D", 0.0), p.get("R", 0.0), p.get("c", 0.0),
            p.get("bx", 0.0), p.get("by", 0.0), p.get("d", 0.0),
            hx, hy, periodic, grid.dt, grid.time_steps, nsub,
        )
        outputs = {"u": uf, "v": vf}

    if not ok or not all(np.isfinite(outputs[n]).all() for n in names):
        raise SimulationDiverged(f"{spec.family} instance with seed {instance.seed} diverged", seed=instance.seed)
    fields = tuple(Field(grid, outputs[n], n) for n in names)
    return fields if len(fields) > 1 else fields[0]


def add_noise(field: Field, noise: NoiseSpec | float, seed: int | None = None) -> Field:
    """``u + p * std(u) * N(0, 1)`` with the sample standard deviation of the whole field."""
    if not isinstance(noise, NoiseSpec):
        noise = NoiseSpec(float(noise), 0 if seed is None else int(seed))
    if noise.level == 0.0:
        return field
    u = field.values
    rng = np.random.default_rng(noise.seed)
    eps = rng.standard_normal(u.shape)
    return field.with_values(u + noise.level * u.std(ddof=1) * eps)


# -- datasets -----------------------------------------------------------------


def example_seed(master_seed: int, model_id: int, index: int, attempt: int = 0) -> int:
    ss = np.random.SeedSequence([int(master_seed), int(model_id), int(index), int(attempt)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def noise_seed(instance_seed: int, level: float) -> int:
    ss = np.random.SeedSequence([int(instance_seed), int(round(level * 1_000_000)), 0x4E01])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def primary_component(result) -> Field:
    return result[0] if isinstance(result, tuple) else result


@dataclass
class _Example:
    model_index: int
    index: int
    seed: int
    params: dict
    features: dict  # noise level -> feature vector
    diverged: int


def _one_example(spec, model_index, index, master_seed, grid, levels, thresholds, smoothing, max_attempts):
    diverged = 0
    for attempt in range(max_attempts):
        seed = example_seed(master_seed, spec.id, index, attempt)
        inst = sample_model_instance(spec, seed)
        try:
            u = primary_component(simulate(inst, grid))
        except SimulationDiverged:
            diverged += 1
            continue
        feats = {}
        for p in levels:
            noisy = add_noise(u, NoiseSpec(p, noise_seed(seed, p)))
            feats[p] = ec_features(noisy, thresholds, smoothing)
        return _Example(model_index, index, seed, dict(inst.params), feats, diverged)
    return _Example(model_index, index, -1, {}, {}, diverged)


def generate_datasets(
    library: Sequence[ModelSpec],
    n_per_model: int,
    noise_levels: Sequence[float],
    grid: GridSpec,
    master_seed: int,
    thresholds=None,
    smoothing="0",
    threads: int = 1,
    progress=None,
) -> dict[float, LabeledDataset]:
    """Simulate every example once and featurize it at each noise level.

    Noise for level ``p`` is drawn from a stream keyed by the example seed
    and ``p``, so the dataset for one level does not depend on which other
    levels are requested.
    """
    if not library:
        raise ValidationError("model library is empty")
    if n_per_model < 1:
        raise ValidationError("n_per_model must be at least 1")
    ids = [m.id for m in library]
    if len(set(ids)) != len(ids):
        raise ValidationError("model ids must be unique")
    levels = [float(p) for p in noise_levels]
    for p in levels:
        NoiseSpec(p)
    th = standard_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    max_attempts = 2 * n_per_model + 10

    jobs = [(spec, mi, i) for mi, spec in enumerate(library) for i in range(n_per_model)]

    def run(job):
        spec, mi, i = job
        ex = _one_example(spec, mi, i, master_seed, grid, levels, th, smoothing, max_attempts)
        if progress is not None:
            progress(ex)
        return ex

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            examples = list(pool.map(run, jobs))
    else:
        examples = [run(j) for j in jobs]

    for mi, spec in enumerate(library):
        exs = [e for e in examples if e.model_index == mi]
        n_div = sum(e.diverged for e in exs)
        if n_div:
            log.info("%s: %d diverged draws redrawn", spec.name, n_div)
        failed = any(e.seed < 0 for e in exs)
        if failed or n_div > 0.5 * (n_div + len(exs)):
            raise ConfigurationError(
                f"{spec.name} ({spec.family}): {n_div} of {n_div + len(exs)} draws diverged; "
                "parameter ranges are unstable for this grid"
            )

    out = {}
    for p in levels:
        out[p] = LabeledDataset(
            features=np.array([e.features[p] for e in examples]),
            labels=np.array([library[e.model_index].id for e in examples]),
            thresholds=th,
            seeds=np.array([e.seed for e in examples], dtype=np.uint64),
            provenance=[{"model": library[e.model_index].name, "index": e.index, **e.params} for e in examples],
        )
    return out


def generate_dataset(library, n_per_model, noise, grid, master_seed, thresholds=None, smoothing="0", threads=1):
    level = noise.level if isinstance(noise, NoiseSpec) else float(noise)
    return generate_datasets(library, n_per_model, [level], grid, master_seed, thresholds, smoothing, threads)[level]
