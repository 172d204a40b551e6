"""Regular space-time grids, scalar fields, standardization and persistence.

Array layout is row-major over ``(t, [y,] x)``: a 1D system on ``nx``
points with ``nt`` time samples is stored as an ``(nt, nx)`` array, a 2D
system as ``(nt, ny, nx)``.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BadMagicError,
    DegenerateFieldError,
    FormatError,
    ShapeMismatchError,
    TruncatedPayloadError,
    ValidationError,
)

FIELD_MAGIC = b"ECF1"
FIELD_VERSION = 1


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor grid over space and time.

    ``spatial_dims`` and ``spatial_extents`` are listed in axis order
    ``(x,)`` or ``(x, y)``; both endpoints of every extent are grid points.
    """

    spatial_dims: tuple[int, ...]
    spatial_extents: tuple[tuple[float, float], ...]
    time_steps: int
    time_extent: tuple[float, float]

    @property
    def n_spatial(self) -> int:
        return len(self.spatial_dims)

    @property
    def shape(self) -> tuple[int, ...]:
        """Array shape in storage order ``(t, [y,] x)``."""
        return (self.time_steps,) + tuple(reversed(self.spatial_dims))

    @property
    def axis_extents(self) -> tuple[tuple[float, float], ...]:
        return (self.time_extent,) + tuple(reversed(self.spatial_extents))

    @property
    def spacings(self) -> tuple[float, ...]:
        """Spacing per spatial axis in ``(x, [y])`` order."""
        return tuple((hi - lo) / (n - 1) for n, (lo, hi) in zip(self.spatial_dims, self.spatial_extents))

    @property
    def dt(self) -> float:
        lo, hi = self.time_extent
        return (hi - lo) / (self.time_steps - 1)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def coords(self, axis: str) -> np.ndarray:
        if axis == "t":
            return np.linspace(*self.time_extent, self.time_steps)
        i = "xy".index(axis)
        return np.linspace(*self.spatial_extents[i], self.spatial_dims[i])

    def times(self) -> np.ndarray:
        return self.coords("t")


def make_grid(
    spatial_dims: Sequence[int],
    spatial_extents: Sequence[Sequence[float]],
    time_steps: int,
    time_extent: Sequence[float] = (0.0, 1.0),
) -> GridSpec:
    """Build and validate a :class:`GridSpec`.

    >>> g = make_grid([256], [(-1, 1)], 100, (0, 1))
    >>> g.shape
    (100, 256)
    """
    dims = tuple(int(n) for n in spatial_dims)
    if len(dims) not in (1, 2):
        raise ValidationError(f"expected 1 or 2 spatial axes, got {len(dims)}")
    if len(spatial_extents) != len(dims):
        raise ValidationError("one (min, max) extent is required per spatial axis")
    extents = tuple((float(lo), float(hi)) for lo, hi in spatial_extents)
    for n in dims + (int(time_steps),):
        if n < 2:
            raise ValidationError(f"every axis needs at least 2 points, got {n}")
    t_ext = (float(time_extent[0]), float(time_extent[1]))
    for lo, hi in extents + (t_ext,):
        if not (np.isfinite(lo) and np.isfinite(hi)) or not hi > lo:
            raise ValidationError(f"degenerate extent ({lo}, {hi}); need min < max")
    return GridSpec(dims, extents, int(time_steps), t_ext)


def burgers_grid() -> GridSpec:
    """The 100 x 256 grid over t in [0, 1], x in [-1, 1]."""
    return make_grid([256], [(-1.0, 1.0)], 100, (0.0, 1.0))


def square_grid(n: int = 64, time_steps: int = 50) -> GridSpec:
    return make_grid([n, n], [(0.0, 1.0), (0.0, 1.0)], time_steps, (0.0, 1.0))


@dataclass(frozen=True, eq=False)
class Field:
    """Scalar samples of one solution component on a :class:`GridSpec`."""

    grid: GridSpec
    values: np.ndarray = dc_field(repr=False)
    name: str = "u"

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.shape != self.grid.shape:
            if values.size != self.grid.size:
                raise ValidationError(f"{values.size} values do not fit grid shape {self.grid.shape}")
            values = values.reshape(self.grid.shape)
        if values.flags.writeable:
            values = values.copy()
            values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __eq__(self, other):
        if not isinstance(other, Field):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.name == other.name
            and self.values.tobytes() == other.values.tobytes()
        )

    __hash__ = None

    def with_values(self, values: np.ndarray, name: str | None = None) -> "Field":
        return Field(self.grid, values, self.name if name is None else name)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())


def standardize(field: Field) -> Field:
    """Return the z-scored field (population mean 0, standard deviation 1)."""
    v = field.values
    mean = v.mean()
    std = v.std()
    if not std > 0.0 or np.ptp(v) == 0.0:
        raise DegenerateFieldError("cannot standardize a constant field")
    return field.with_values((v - mean) / std)


# -- binary persistence -------------------------------------------------------


def encode_field(field: Field) -> bytes:
    if not field.is_finite():
        raise ValidationError("refusing to write a field containing NaN or Inf")
    name = field.name.encode("utf-8")
    if len(name) > 255:
        raise ValidationError("component name longer than 255 bytes")
    buf = io.BytesIO()
    buf.write(FIELD_MAGIC)
    buf.write(struct.pack("<BB", FIELD_VERSION, len(field.grid.shape)))
    for count, (lo, hi) in zip(field.grid.shape, field.grid.axis_extents):
        buf.write(struct.pack("<Idd", count, lo, hi))
    buf.write(struct.pack("<B", len(name)))
    buf.write(name)
    buf.write(field.values.astype("<f8").tobytes(order="C"))
    return buf.getvalue()


def decode_field(data: bytes) -> Field:
    if len(data) < 6:
        raise TruncatedPayloadError("file shorter than the fixed header")
    if data[:4] != FIELD_MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {FIELD_MAGIC!r}")
    version, n_axes = struct.unpack_from("<BB", data, 4)
    if version != FIELD_VERSION:
        raise FormatError(f"unsupported field format version {version}")
    if n_axes not in (2, 3):
        raise ShapeMismatchError(f"field files hold 2 or 3 axes, header says {n_axes}")
    pos = 6
    axes = []
    for _ in range(n_axes):
        if len(data) < pos + 20:
            raise TruncatedPayloadError("axis table truncated")
        axes.append(struct.unpack_from("<Idd", data, pos))
        pos += 20
    if len(data) < pos + 1:
        raise TruncatedPayloadError("name length missing")
    (name_len,) = struct.unpack_from("<B", data, pos)
    pos += 1
    if len(data) < pos + name_len:
        raise TruncatedPayloadError("name truncated")
    name = data[pos : pos + name_len].decode("utf-8")
    pos += name_len

    shape = tuple(a[0] for a in axes)
    expected = int(np.prod(shape)) * 8
    payload = data[pos:]
    if len(payload) < expected:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, header implies {expected}")
    if len(payload) > expected:
        raise ShapeMismatchError(f"payload has {len(payload)} bytes, header implies {expected}")

    t_count, t_lo, t_hi = axes[0]
    spatial = list(reversed(axes[1:]))
    try:
        grid = make_grid([a[0] for a in spatial], [(a[1], a[2]) for a in spatial], t_count, (t_lo, t_hi))
    except ValidationError as exc:
        raise ShapeMismatchError(f"invalid axis metadata: {exc}") from exc
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
    return Field(grid, values, name)


def write_field(field: Field, path) -> int:
    """Write ``field`` in the ECF1 binary format; return the byte count."""
    data = encode_field(field)
    Path(path).write_bytes(data)
    return len(data)


def read_field(path) -> Field:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read field file {path}: {exc}") from exc
    return decode_field(data)


def field_header_size(field: Field) -> int:
    return 6 + 20 * len(field.grid.shape) + 1 + len(field.name.encode("utf-8"))


# -- labeled datasets ---------------------------------------------------------


@dataclass
class LabeledDataset:
    """EC feature rows with model-ID labels on one shared threshold grid."""

    features: np.ndarray
    labels: np.ndarray
    thresholds: np.ndarray
    seeds: np.ndarray
    provenance: list = dc_field(default_factory=list)
    meta: dict = dc_field(default_factory=dict)  # ``key=value`` header entries

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        self.seeds = np.asarray(self.seeds, dtype=np.uint64)
        if self.features.ndim != 2 or self.features.shape[1] != len(self.thresholds):
            raise ValidationError("feature rows must match the threshold grid length")
        if not (len(self.labels) == len(self.seeds) == len(self.features)):
            raise ValidationError("features, labels and seeds must have equal length")

    def __len__(self):
        return len(self.labels)

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index)
        prov = [self.provenance[i] for i in index] if self.provenance else []
        return LabeledDataset(self.features[index], self.labels[index], self.thresholds, self.seeds[index], prov, dict(self.meta))


def _fmt_float(x: float) -> str:
    return repr(float(x))


def _fmt_feature(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def dataset_to_csv(ds: LabeledDataset, header_lines: Sequence[str] = ()) -> str:
    out = io.StringIO()
    for line in header_lines:
        out.write(f"# {line}\n")
    out.write(",".join(["label", "seed"] + [_fmt_float(t) for t in ds.thresholds]) + "\n")
    for label, seed, row in zip(ds.labels, ds.seeds, ds.features):
        out.write(",".join([str(int(label)), str(int(seed))] + [_fmt_feature(v) for v in row]) + "\n")
    return out.getvalue()


def write_dataset(ds: LabeledDataset, path, header_lines: Sequence[str] = ()) -> None:
    Path(path).write_text(dataset_to_csv(ds, header_lines), encoding="utf-8", newline="\n")


def read_dataset(path) -> LabeledDataset:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read dataset {path}: {exc}") from exc
    meta = {}
    for ln in text.splitlines():
        if ln.startswith("#"):
            for tok in ln[1:].split():
                key, sep, value = tok.partition("=")
                if sep:
                    meta[key] = value
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    if not lines:
        raise FormatError(f"{path}: empty dataset file")
    head = lines[0].split(",")
    if head[:2] != ["label", "seed"]:
        raise FormatError(f"{path}: header must start with 'label,seed'")
    try:
        thresholds = np.array([float(h) for h in head[2:]])
        rows = [ln.split(",") for ln in lines[1:]]
        labels = np.array([int(r[0]) for r in rows], dtype=np.int64)
        seeds = np.array([int(r[1]) for r in rows], dtype=np.uint64)
        feats = np.array([[float(v) for v in r[2:]] for r in rows]).reshape(len(rows), len(thresholds))
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed dataset row ({exc})") from exc
    return LabeledDataset(feats, labels, thresholds, seeds, meta=meta)
