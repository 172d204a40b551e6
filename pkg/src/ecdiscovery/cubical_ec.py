"""Euler characteristic curves of superlevel-set filtrations on cubical grids.

Grid points are the 0-cells of a vertex-based cubical complex; a d-cell
(edge, square, cube) belongs to the superlevel set ``{f >= l}`` exactly when
all of its 2**d vertices do, i.e. when ``l <= min`` over its vertices.  The
Euler characteristic is then the alternating cell count
``sum_d (-1)**d * #{d-cells with value >= l}``.

:func:`ec_curve_streaming` bins every cell value once and sweeps the
threshold grid with a cumulative sum.  :func:`ec_brute_force` and
:func:`betti_2d` recount from the thresholded mask and serve as oracles.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import UnsupportedDimensionError, ValidationError
from .field_core import Field, standardize

ArrayOrField = Union[np.ndarray, Field]

DEFAULT_N_THRESHOLDS = 64
DEFAULT_RANGE = (3.0, -3.0)


def _values(f: ArrayOrField) -> np.ndarray:
    v = f.values if isinstance(f, Field) else np.asarray(f, dtype=np.float64)
    if v.ndim < 1 or v.ndim > 3:
        raise UnsupportedDimensionError(f"cubical EC supports 1 to 3 axes, got {v.ndim}")
    return v


def standard_thresholds(m: int = DEFAULT_N_THRESHOLDS, high: float = DEFAULT_RANGE[0], low: float = DEFAULT_RANGE[1]) -> np.ndarray:
    """``m`` uniformly spaced thresholds from ``high`` down to ``low``."""
    if m < 1 or not high > low:
        raise ValidationError("need m >= 1 and high > low")
    return np.linspace(high, low, m)


def _check_thresholds(thresholds) -> np.ndarray:
    th = np.asarray(thresholds, dtype=np.float64).ravel()
    if th.size == 0:
        raise ValidationError("threshold list is empty")
    if not np.all(np.isfinite(th)):
        raise ValidationError("thresholds must be finite")
    if th.size > 1 and not np.all(np.diff(th) < 0):
        raise ValidationError("thresholds must be strictly decreasing")
    return th


@dataclass(frozen=True, eq=False)
class ECCurve:
    thresholds: np.ndarray
    chis: np.ndarray
    meta: str = ""

    def __post_init__(self):
        if len(self.thresholds) != len(self.chis):
            raise ValidationError("thresholds and chis differ in length")

    def __len__(self):
        return len(self.thresholds)

    def to_csv(self) -> str:
        lines = ["threshold,chi"]
        lines += [f"{float(t)!r},{int(c)}" for t, c in zip(self.thresholds, self.chis)]
        return "\n".join(lines) + "\n"


class CellHistogram:
    """Filtration values of the cells of a cubical grid, grouped by dimension.

    ``values[d]`` is the sorted array of values of all d-cells.
    """

    def __init__(self, values: dict[int, np.ndarray]):
        self.values = values

    @property
    def dims(self) -> list[int]:
        return sorted(self.values)

    def counts(self) -> tuple[int, ...]:
        return tuple(len(self.values[d]) for d in self.dims)

    def euler_characteristic(self, level: float) -> int:
        """Alternating count of cells with value >= level."""
        chi = 0
        for d in self.dims:
            v = self.values[d]
            chi += (-1) ** d * (len(v) - int(np.searchsorted(v, level, side="left")))
        return chi


def _cell_arrays(v: np.ndarray):
    """Yield ``(dimension, array of cell values)`` for every cell orientation.

    An orientation is a subset of axes; its cells span one grid step along
    each axis in the subset, so the cell value is a running minimum of
    neighbouring vertices along those axes.
    """
    axes = range(v.ndim)
    for d in range(v.ndim + 1):
        for subset in itertools.combinations(axes, d):
            a = v
            for ax in subset:
                lo = [slice(None)] * v.ndim
                hi = [slice(None)] * v.ndim
                lo[ax] = slice(None, -1)
                hi[ax] = slice(1, None)
                a = np.minimum(a[tuple(lo)], a[tuple(hi)])
            yield d, a


def cell_filtration_values(field: ArrayOrField) -> CellHistogram:
    v = _values(field)
    grouped: dict[int, list[np.ndarray]] = {}
    for d, a in _cell_arrays(v):
        grouped.setdefault(d, []).append(a.ravel())
    return CellHistogram({d: np.sort(np.concatenate(parts)) for d, parts in grouped.items()})


def ec_curve_streaming(field: ArrayOrField, thresholds, meta: str = "") -> ECCurve:
    """EC of ``{f >= l}`` for every ``l`` in a strictly decreasing grid.

    Each cell value ``c`` is assigned the first threshold index ``k`` with
    ``thresholds[k] <= c``; the signed per-index counts are then summed
    cumulatively, so cost is linear in cells plus thresholds.
    """
    th = _check_thresholds(thresholds)
    v = _values(field)
    m = th.size
    ascending = th[::-1]
    signed = np.zeros(m + 1, dtype=np.int64)
    for d, a in _cell_arrays(v):
        # number of thresholds strictly greater than the cell value
        k = m - np.searchsorted(ascending, a.ravel(), side="right")
        counts = np.bincount(k, minlength=m + 1)
        signed += counts if d % 2 == 0 else -counts
    chis = np.cumsum(signed)[:m]
    if not meta and isinstance(field, Field):
        meta = field.name
    return ECCurve(th, chis, meta)


def ec_brute_force(field: ArrayOrField, level: float) -> int:
    """EC of the superlevel set at one threshold by direct cell enumeration."""
    v = _values(field)
    mask = v >= level
    n = v.ndim
    chi = 0
    for d in range(n + 1):
        for subset in itertools.combinations(range(n), d):
            # a cell is anchored at its lowest corner; all 2**d corners must be in the mask
            anchor_shape = tuple(s - 1 if ax in subset else s for ax, s in enumerate(v.shape))
            if min(anchor_shape) <= 0:
                continue
            present = np.ones(anchor_shape, dtype=bool)
            for offset in itertools.product((0, 1), repeat=d):
                sl = [slice(0, s) for s in anchor_shape]
                for ax, o in zip(subset, offset):
                    sl[ax] = slice(o, o + anchor_shape[ax])
                present &= mask[tuple(sl)]
            chi += (-1) ** d * int(present.sum())
    return chi


class _DisjointSet:
    def __init__(self, n):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, i):
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, a, b):
        a, b = self.find(a), self.find(b)
        if a == b:
            return
        if self.rank[a] < self.rank[b]:
            a, b = b, a
        self.parent[b] = a
        if self.rank[a] == self.rank[b]:
            self.rank[a] += 1


def betti_2d(mask) -> tuple[int, int]:
    """Betti numbers ``(b0, b1)`` of a binary vertex mask on a 2-axis grid.

    Components use 4-connectivity (the edge relation of the complex) and are
    found with union-find; ``b1 = b0 - chi``.
    """
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise UnsupportedDimensionError("betti_2d expects a 2-axis mask")
    rows, cols = m.shape
    ds = _DisjointSet(rows * cols)
    for i in range(rows):
        for j in range(cols):
            if not m[i, j]:
                continue
            if i + 1 < rows and m[i + 1, j]:
                ds.union(i * cols + j, (i + 1) * cols + j)
            if j + 1 < cols and m[i, j + 1]:
                ds.union(i * cols + j, i * cols + j + 1)
    b0 = len({ds.find(i * cols + j) for i in range(rows) for j in range(cols) if m[i, j]})
    chi = ec_brute_force(m.astype(np.float64), 0.5)
    b1 = b0 - chi
    if b1 < 0:
        raise AssertionError("negative first Betti number; cell count is inconsistent")
    return b0, b1


def vectorize(curve: ECCurve, standard_thresholds) -> np.ndarray:
    """Resample an EC step function onto another decreasing threshold grid.

    Between knots the value of the last knot passed while sweeping downward
    is held; queries above the first knot take the first value.
    """
    grid = _check_thresholds(standard_thresholds)
    src = np.asarray(curve.thresholds, dtype=np.float64)
    ascending = src[::-1]
    # count of source knots >= q, i.e. knots already passed at level q
    passed = len(src) - np.searchsorted(ascending, grid, side="left")
    idx = np.clip(passed - 1, 0, len(src) - 1)
    return np.asarray(curve.chis)[idx].astype(np.float64)


AUTO_TAU = 0.02
AUTO_MIN_SIGMA = 2.0
AUTO_TIME_RATIO = 0.4  # below 1 smooths time harder than space, keeping fronts sharp


def estimate_noise_sd(values) -> float:
    """Robust i.i.d. noise level from second differences along the last axis.

    For white noise of standard deviation s the second difference has
    standard deviation ``sqrt(6) s``; smooth signal contributes little, and
    the median absolute deviation ignores fronts and shocks.
    """
    v = np.asarray(values, dtype=np.float64)
    d = v[..., 2:] - 2.0 * v[..., 1:-1] + v[..., :-2]
    mad = np.median(np.abs(d - np.median(d)))
    return float(1.4826 * mad / np.sqrt(6.0))


def auto_sigmas(values, tau=AUTO_TAU, sigma_min=AUTO_MIN_SIGMA, time_ratio=AUTO_TIME_RATIO):
    """Per-axis Gaussian widths (time first) for noise-adaptive smoothing.

    A Gaussian of width ``s`` cells divides white-noise variance by
    ``2 sqrt(pi) s`` per axis.  The geometric-mean width is chosen so the
    estimated residual noise is at most ``tau * std(values)``.  Time gets
    ``sigma / time_ratio`` and each spatial axis
    ``sigma * time_ratio ** (1 / (d - 1))``, keeping the product fixed.
    """
    v = np.asarray(values, dtype=np.float64)
    d = v.ndim
    sd = v.std()
    noise = estimate_noise_sd(v)
    sigma = sigma_min
    if sd > 0 and noise > 0:
        sigma = max(sigma_min, (noise / (tau * sd)) ** (2.0 / d) / (2.0 * np.sqrt(np.pi)))
    space = sigma * time_ratio ** (1.0 / (d - 1))
    return (sigma / time_ratio,) + (space,) * (d - 1)


def parse_smoothing(value):
    """``"auto"`` or a non-negative width in cells."""
    if isinstance(value, str):
        if value.strip().lower() == "auto":
            return "auto"
        value = float(value)
    value = float(value)
    if not (np.isfinite(value) and value >= 0):
        raise ValidationError(f"smoothing must be 'auto' or a width >= 0, got {value}")
    return value


def smooth_values(v: np.ndarray, smoothing) -> np.ndarray:
    smoothing = parse_smoothing(smoothing)
    if smoothing == "auto":
        sigma = auto_sigmas(v)
    elif smoothing > 0:
        sigma = smoothing
    else:
        return v
    from scipy.ndimage import gaussian_filter

    return gaussian_filter(v, sigma, mode="nearest")


def ec_features(field: ArrayOrField, thresholds=None, smoothing=0.0, meta: str = "") -> np.ndarray:
    """Field -> optional Gaussian pre-smoothing -> z-score -> EC -> vector.

    ``smoothing`` is a width in grid cells or ``"auto"``
    (see :func:`auto_sigmas`).  This is the feature map used for training
    and for identification; it must be applied identically to every field
    that is compared.
    """
    th = standard_thresholds() if thresholds is None else _check_thresholds(thresholds)
    v = smooth_values(_values(field).astype(np.float64), smoothing)
    fld = field.with_values(v) if isinstance(field, Field) else None
    if fld is not None:
        z = standardize(fld).values
    else:
        std = v.std()
        if not std > 0:
            from .errors import DegenerateFieldError

            raise DegenerateFieldError("cannot standardize a constant field")
        z = (v - v.mean()) / std
    curve = ec_curve_streaming(z, th, meta=meta)
    return vectorize(curve, th)
