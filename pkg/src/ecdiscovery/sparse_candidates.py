"""Candidate-model generation by sparse regression on a derivative library.

Pipeline: finite-difference derivatives -> term library on interior points
-> least squares in the temporal-frequency domain with a low-pass cutoff ->
sequential thresholded least squares over a path of thresholds, giving a
short ranked list of candidate supports.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, ValidationError
from .field_core import Field

log = logging.getLogger(__name__)

DEFAULT_TERMS = ("1", "u", "u^2", "u_x", "u_xx", "u*u_x", "u^2*u_x", "u*u_xx", "u^2*u_xx")
RANK_PENALTY = 0.01
DEFAULT_THRESHOLDS = tuple(np.logspace(-4, 0, 33))


# -- derivatives --------------------------------------------------------------


def _axis_index(field: Field, axis) -> int:
    if isinstance(axis, str):
        names = ["t"] + (["y", "x"] if field.grid.n_spatial == 2 else ["x"])
        if axis not in names:
            raise ValidationError(f"unknown axis {axis!r}; expected one of {names}")
        return names.index(axis)
    axis = int(axis)
    if not 0 <= axis < field.values.ndim:
        raise ValidationError(f"axis {axis} out of range")
    return axis


def fd_array(a: np.ndarray, h: float, axis: int, order: int) -> np.ndarray:
    """Second-order accurate derivative of ``a`` along ``axis`` (spacing ``h``)."""
    if order not in (1, 2):
        raise ValidationError("derivative order must be 1 or 2")
    a = np.moveaxis(np.asarray(a, dtype=np.float64), axis, 0)
    n = a.shape[0]
    if n < 5:
        raise ValidationError(f"need at least 5 points along the axis, got {n}")
    out = np.empty_like(a)
    if order == 1:
        out[1:-1] = (a[2:] - a[:-2]) / (2 * h)
        out[0] = (-3 * a[0] + 4 * a[1] - a[2]) / (2 * h)
        out[-1] = (3 * a[-1] - 4 * a[-2] + a[-3]) / (2 * h)
    else:
        out[1:-1] = (a[2:] - 2 * a[1:-1] + a[:-2]) / (h * h)
        out[0] = (2 * a[0] - 5 * a[1] + 4 * a[2] - a[3]) / (h * h)
        out[-1] = (2 * a[-1] - 5 * a[-2] + 4 * a[-3] - a[-4]) / (h * h)
    return np.moveaxis(out, 0, axis)


def finite_diff(field: Field, axis="x", order: int = 1) -> Field:
    """Central differences inside, one-sided second-order stencils at the ends."""
    ax = _axis_index(field, axis)
    h = field.grid.axis_extents[ax]
    spacing = (h[1] - h[0]) / (field.values.shape[ax] - 1)
    suffix = "_" + ("t" if ax == 0 else ("yx"[ax - 1] if field.grid.n_spatial == 2 else "x")) * order
    return field.with_values(fd_array(field.values, spacing, ax, order), name=field.name + suffix)


# -- library ------------------------------------------------------------------


@dataclass
class TermLibrary:
    terms: tuple[str, ...]
    matrix: np.ndarray  # (points, terms)
    target: np.ndarray  # u_t on the same points
    shape: tuple[int, int]  # interior (time, space) block the rows come from

    def __post_init__(self):
        if self.matrix.shape[1] != len(self.terms):
            raise ValidationError("library matrix column count must equal the number of terms")


def _term_column(tag: str, u, ux, uxx):
    factors = {"1": np.ones_like(u), "u": u, "u^2": u * u, "u_x": ux, "u_xx": uxx}
    out = np.ones_like(u)
    for part in tag.split("*"):
        if part not in factors:
            raise ValidationError(f"unknown library term {tag!r}")
        out = out * factors[part]
    return out


def build_library(field: Field, term_set=DEFAULT_TERMS, skip_initial: int = 0) -> TermLibrary:
    """Evaluate each term on interior points; the target is ``u_t``.

    Tags are products of ``1, u, u^2, u_x, u_xx`` joined by ``*``.
    ``skip_initial`` drops further rows after the first time step, for
    data whose initial state does not match its boundary values.
    """
    if field.grid.n_spatial != 1:
        raise ValidationError("term libraries are only built for one spatial axis")
    terms = tuple(term_set)
    if not terms:
        raise ValidationError("term set is empty")
    if len(set(terms)) != len(terms):
        raise ValidationError("duplicate term tags")
    skip_initial = int(skip_initial)
    if not 0 <= skip_initial <= field.grid.time_steps - 7:
        raise ValidationError(f"skip_initial must lie in [0, {field.grid.time_steps - 7}]")
    u = field.values
    ut = finite_diff(field, "t", 1).values
    ux = finite_diff(field, "x", 1).values
    uxx = finite_diff(field, "x", 2).values
    inner = (slice(1 + skip_initial, -1), slice(1, -1))
    cols = [_term_column(t, u, ux, uxx)[inner].ravel() for t in terms]
    shape = u[inner].shape
    return TermLibrary(terms, np.column_stack(cols), ut[inner].ravel(), shape)


# -- regression ---------------------------------------------------------------


@dataclass
class RegressionResult:
    coefficients: np.ndarray
    residual: float  # ||b - A x|| / ||b|| on the retained frequencies
    condition: float
    rank: int


def _lowpass(library: TermLibrary, cutoff_fraction: float):
    if not (0.0 < cutoff_fraction <= 1.0):
        raise ValidationError("cutoff_fraction must lie in (0, 1]")
    nt, nx = library.shape
    k = max(1, int(np.ceil(cutoff_fraction * nt - 1e-9)))
    freq = np.abs(np.fft.fftfreq(nt))
    keep = np.sort(np.argsort(freq, kind="stable")[:k])

    def transform(col):
        spec = np.fft.fft(col.reshape(nt, nx), axis=0, norm="ortho")[keep]
        return np.concatenate([spec.real.ravel(), spec.imag.ravel()])

    A = np.column_stack([transform(library.matrix[:, j]) for j in range(library.matrix.shape[1])])
    return A, transform(library.target)


def _solve(A, b) -> RegressionResult:
    if A.shape[1] == 0:
        return RegressionResult(np.zeros(0), 1.0, 1.0, 0)
    x, _, rank, sv = np.linalg.lstsq(A, b, rcond=None)
    cond = float(sv[0] / sv[-1]) if len(sv) and sv[-1] > 0 else float("inf")
    if rank < A.shape[1]:
        log.warning("rank-deficient library (rank %d of %d, condition %.3g); using minimum-norm solution", rank, A.shape[1], cond)
    nb = np.linalg.norm(b)
    res = float(np.linalg.norm(b - A @ x) / nb) if nb > 0 else 0.0
    return RegressionResult(x, min(res, 1.0), cond, int(rank))


def fft_cutoff_regression(library: TermLibrary, cutoff_fraction: float = 1.0) -> RegressionResult:
    """Least squares on the lowest ``cutoff_fraction`` of temporal frequencies.

    Columns and target are transformed by the same unitary FFT along time
    at every spatial point, so ``cutoff_fraction=1`` reproduces the
    time-domain solution.
    """
    A, b = _lowpass(library, cutoff_fraction)
    return _solve(A, b)


# -- thresholding path --------------------------------------------------------


@dataclass
class CandidateModel:
    support: tuple[str, ...]
    coefficients: dict
    residual: float
    rank: int = 0
    score: float = 0.0

    def equation(self) -> str:
        if not self.support:
            return "u_t = 0"
        parts = [f"{self.coefficients[t]:+.6g}*{t}" if t != "1" else f"{self.coefficients[t]:+.6g}" for t in self.support]
        return "u_t = " + " ".join(parts)


def stlsq(A, b, threshold: float, max_iter: int = 100):
    """Sequential thresholded least squares; returns ``(mask, result)``."""
    mask = np.ones(A.shape[1], dtype=bool)
    for _ in range(max_iter):
        fit = _solve(A[:, mask], b)
        coef = np.zeros(A.shape[1])
        coef[mask] = fit.coefficients
        new = mask & (np.abs(coef) >= threshold)
        if np.array_equal(new, mask):
            return mask, coef, fit
        mask = new
    raise ConvergenceError("thresholded least squares did not reach a fixed point")


def threshold_path(library: TermLibrary, threshold_grid=DEFAULT_THRESHOLDS, k: int = 4, cutoff_fraction: float = 1.0, penalty: float = RANK_PENALTY):
    """Candidate models along a path of relative thresholds.

    Each threshold ``tau`` zeroes coefficients below ``tau`` times the
    largest magnitude of the unthresholded fit.  Distinct supports are
    ranked by ``residual + penalty * support size``.
    """
    grid = np.asarray(threshold_grid, dtype=np.float64)
    if grid.ndim != 1 or len(grid) == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValidationError("threshold grid must be positive and strictly increasing")
    if k < 1:
        raise ValidationError("k must be at least 1")
    A, b = _lowpass(library, cutoff_fraction)
    full = _solve(A, b)
    scale = float(np.max(np.abs(full.coefficients))) if len(full.coefficients) else 0.0
    seen = {}
    for tau in grid:
        mask, coef, fit = stlsq(A, b, tau * scale)
        if not mask.any():
            continue
        key = tuple(np.flatnonzero(mask))
        if key in seen:
            continue
        support = tuple(library.terms[i] for i in key)
        seen[key] = CandidateModel(
            support,
            {library.terms[i]: float(coef[i]) for i in key},
            float(fit.residual),
            score=float(fit.residual + penalty * len(key)),
        )
    if not seen:
        raise ValidationError("every threshold removed all terms; use a smaller threshold grid")
    ranked = sorted(seen.values(), key=lambda c: (c.score, len(c.support), c.support))[:k]
    for i, c in enumerate(ranked):
        c.rank = i + 1
    return ranked


def candidates_to_csv(candidates) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "support", "coefficients", "residual", "score"])
    for c in candidates:
        w.writerow([
            c.rank,
            " + ".join(c.support),
            " ".join(f"{t}={c.coefficients[t]!r}" for t in c.support),
            repr(c.residual),
            repr(c.score),
        ])
    return buf.getvalue()


def candidates_table(candidates) -> str:
    lines = [f"{'rank':>4}  {'residual':>10}  {'score':>8}  model"]
    for c in candidates:
        lines.append(f"{c.rank:>4}  {c.residual:>10.3e}  {c.score:>8.4f}  {c.equation()}")
    return "\n".join(lines)
