"""One-vs-one kernel SVM trained with SMO, grid-search CV and evaluation metrics.

Each binary machine solves the C-SVC dual

    min  0.5 a'Qa - e'a   s.t.  0 <= a <= C,  y'a = 0,   Q_ij = y_i y_j K(x_i, x_j)

by sequential minimal optimization, always updating the maximal
KKT-violating pair.  Training stops once that violation drops below ``tol``.
"""

from __future__ import annotations

import io
import itertools
import logging
import struct
import warnings
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numba
import numpy as np

from .errors import (
    BadMagicError,
    CompatibilityError,
    ConvergenceError,
    FormatError,
    TruncatedPayloadError,
    ValidationError,
)

log = logging.getLogger(__name__)

MODEL_MAGIC = b"ECSV"
MODEL_VERSION = 1
KERNELS = {"rbf": 0, "linear": 1}


# -- binary solver ------------------------------------------------------------


@numba.njit(cache=True)
def _smo(K, y, C, tol, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    gap = np.inf
    while it < max_iter:
        gmax = -np.inf
        gmin = np.inf
        i = -1
        j = -1
        for t in range(n):
            v = -y[t] * G[t]
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                if v > gmax:
                    gmax = v
                    i = t
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                if v < gmin:
                    gmin = v
                    j = t
        if i < 0 or j < 0:
            gap = 0.0
            break
        gap = gmax - gmin
        if gap < tol:
            break
        it += 1

        ai_old = alpha[i]
        aj_old = alpha[j]
        Kii = K[i, i]
        Kjj = K[j, j]
        Kij = K[i, j]
        if y[i] != y[j]:
            quad = Kii + Kjj + 2.0 * Kij * (y[i] * y[j])
            if quad <= 0:
                quad = 1e-12
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = Kii + Kjj - 2.0 * Kij
            if quad <= 0:
                quad = 1e-12
            delta = (G[i] - G[j]) / quad
            s = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if s > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = s - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = s
            if s > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = s - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = s

        dai = alpha[i] - ai_old
        daj = alpha[j] - aj_old
        for t in range(n):
            G[t] += y[t] * (y[i] * K[i, t] * dai + y[j] * K[j, t] * daj)

    # offset from free vectors, or the middle of the feasible interval
    ub = np.inf
    lb = -np.inf
    s_free = 0.0
    n_free = 0
    for t in range(n):
        yg = y[t] * G[t]
        if alpha[t] >= C:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            n_free += 1
            s_free += yg
    rho = s_free / n_free if n_free > 0 else 0.5 * (ub + lb)
    return alpha, -rho, gap, it


def kernel_matrix(A, B, kernel, gamma):
    if kernel == "linear":
        return A @ B.T
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass
class BinaryMachine:
    """Classifier for ``pos`` (decision > 0) against ``neg``."""

    pos: int
    neg: int
    support_vectors: np.ndarray
    coef: np.ndarray  # alpha_i * y_i
    bias: float
    kkt_gap: float = 0.0
    iterations: int = 0
    dual_sum: float = 0.0  # sum alpha_i y_i over the training set

    def decision(self, X, kernel, gamma):
        if len(self.coef) == 0:
            return np.full(len(X), self.bias)
        return kernel_matrix(X, self.support_vectors, kernel, gamma) @ self.coef + self.bias


def train_binary(X, y, C, kernel="rbf", gamma=1.0, tol=1e-3, max_passes=10_000, pos=1, neg=-1):
    """Train a single machine on ``y in {+1, -1}``; raises if SMO stalls."""
    y = np.asarray(y, dtype=np.float64)
    K = kernel_matrix(X, X, kernel, gamma)
    max_iter = max_passes * max(len(y), 1)
    alpha, bias, gap, it = _smo(K, y, float(C), float(tol), max_iter)
    if gap >= tol:
        raise ConvergenceError(
            f"SMO stopped after {it} updates with KKT violation {gap:.3g} > {tol} "
            f"(n={len(y)}, C={C}, gamma={gamma})"
        )
    sv = alpha > 0
    return BinaryMachine(
        pos, neg, X[sv].copy(), (alpha * y)[sv], float(bias), float(gap), int(it), float(np.dot(alpha, y))
    )


# -- multi-class model --------------------------------------------------------


@dataclass
class SvmModel:
    classes: np.ndarray
    kernel: str
    gamma: float
    C: float
    mean: np.ndarray
    scale: np.ndarray
    machines: list
    thresholds: np.ndarray = dc_field(default_factory=lambda: np.zeros(0))
    smoothing: str = "0"  # feature-map smoothing, a width in cells or "auto"

    @property
    def n_features(self) -> int:
        return len(self.mean)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale

    def decision_matrix(self, X) -> np.ndarray:
        """Pairwise decision values, one column per machine."""
        Z = self.transform(X)
        return np.column_stack([m.decision(Z, self.kernel, self.gamma) for m in self.machines])


def _check_xy(features, labels):
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2 or len(X) != len(y):
        raise ValidationError("features must be 2-D with one label per row")
    if not np.all(np.isfinite(X)):
        raise ValidationError("features must be finite")
    return X, y.astype(np.int64)


def train_svm(features, labels, kernel="rbf", C=1.0, gamma=None, tol=1e-3, max_passes=10_000, thresholds=None, smoothing="0"):
    """Fit one binary machine per class pair on z-scored features.

    ``gamma=None`` uses ``1 / (n_features * var(scaled features))``.
    """
    X, y = _check_xy(features, labels)
    if kernel not in KERNELS:
        raise ValidationError(f"unknown kernel {kernel!r}")
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise ValidationError("training needs at least two classes")
    if counts.min() < 2:
        raise ValidationError("every class needs at least two training examples")
    if not C > 0:
        raise ValidationError("C must be positive")
    mean = X.mean(0)
    scale = X.std(0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    if gamma is None:
        var = Z.var()
        gamma = 1.0 / (Z.shape[1] * var) if var > 0 else 1.0
    machines = []
    for a, b in itertools.combinations(classes, 2):
        sel = (y == a) | (y == b)
        yy = np.where(y[sel] == a, 1.0, -1.0)
        machines.append(train_binary(Z[sel], yy, C, kernel, gamma, tol, max_passes, int(a), int(b)))
    th = np.zeros(0) if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    return SvmModel(classes, kernel, float(gamma), float(C), mean, scale, machines, th, str(smoothing))


def _votes(model, D):
    idx = {int(c): k for k, c in enumerate(model.classes)}
    n = D.shape[0]
    votes = np.zeros((n, len(model.classes)), dtype=np.int64)
    margins = np.zeros((n, len(model.classes)))
    for col, m in enumerate(model.machines):
        d = D[:, col]
        win_pos = d >= 0
        votes[win_pos, idx[m.pos]] += 1
        votes[~win_pos, idx[m.neg]] += 1
        margins[:, idx[m.pos]] += d
        margins[:, idx[m.neg]] -= d
    return votes, margins


def _pick(votes_row, margins_row):
    top = votes_row.max()
    tied = np.flatnonzero(votes_row == top)
    if len(tied) == 1:
        return tied[0]
    best = margins_row[tied].max()
    # np.flatnonzero is ascending, so the first maximal entry is the lowest class id
    return tied[np.flatnonzero(margins_row[tied] == best)[0]]


def predict_batch(model: SvmModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise ValidationError(f"feature length {X.shape[1]} does not match model ({model.n_features})")
    votes, margins = _votes(model, model.decision_matrix(X))
    return np.array([model.classes[_pick(v, m)] for v, m in zip(votes, margins)])


def predict(model: SvmModel, feature):
    """Predict one feature vector.

    Returns ``(label, scores)`` where ``scores`` maps each class to
    ``(votes, summed signed decision values)``.  Vote ties go to the larger
    margin sum, then to the lowest class id.
    """
    x = np.asarray(feature, dtype=np.float64).ravel()
    if x.shape[0] != model.n_features:
        raise ValidationError(f"feature length {x.shape[0]} does not match model ({model.n_features})")
    votes, margins = _votes(model, model.decision_matrix(x[None, :]))
    k = _pick(votes[0], margins[0])
    scores = {int(c): (int(votes[0, i]), float(margins[0, i])) for i, c in enumerate(model.classes)}
    return int(model.classes[k]), scores


def kkt_residuals(model: SvmModel, features, labels):
    """Maximal KKT violation of every machine, recomputed from scratch."""
    X, y = _check_xy(features, labels)
    Z = model.transform(X)
    out = []
    for m in model.machines:
        sel = (y == m.pos) | (y == m.neg)
        Zs = Z[sel]
        ys = np.where(y[sel] == m.pos, 1.0, -1.0)
        alpha = np.zeros(len(ys))
        if len(m.coef):
            # match stored support vectors back to training rows
            for sv, c in zip(m.support_vectors, m.coef):
                hit = np.flatnonzero(np.all(Zs == sv, axis=1) & (ys == np.sign(c)) & (alpha == 0))
                alpha[hit[0]] = abs(c)
        K = kernel_matrix(Zs, Zs, model.kernel, model.gamma)
        G = ys * (K @ (alpha * ys)) - 1.0
        up = ((ys > 0) & (alpha < model.C)) | ((ys < 0) & (alpha > 0))
        low = ((ys > 0) & (alpha > 0)) | ((ys < 0) & (alpha < model.C))
        v = -ys * G
        out.append(float(v[up].max() - v[low].min()) if up.any() and low.any() else 0.0)
    return out


# -- evaluation ---------------------------------------------------------------


@dataclass
class EvalReport:
    classes: np.ndarray
    confusion: np.ndarray  # rows: true class, columns: predicted class
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    warnings: list = dc_field(default_factory=list)

    def rows(self):
        for k, c in enumerate(self.classes):
            yield int(c), float(self.precision[k]), float(self.recall[k]), float(self.f1[k]), int(self.support[k])


def report_from_predictions(y_true, y_pred, classes=None) -> EvalReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if len(y_true) == 0:
        raise ValidationError("empty test set")
    if classes is None:
        classes = np.unique(np.concatenate([y_true, y_pred]))
    classes = np.asarray(classes, dtype=np.int64)
    idx = {int(c): k for k, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[idx[int(t)], idx[int(p)]] += 1
    tp = np.diag(cm).astype(np.float64)
    pred_tot = cm.sum(0)
    true_tot = cm.sum(1)
    notes = []
    precision = np.zeros(len(classes))
    recall = np.zeros(len(classes))
    for k, c in enumerate(classes):
        if pred_tot[k] == 0:
            notes.append(f"class {c} never predicted; precision set to 0")
        else:
            precision[k] = tp[k] / pred_tot[k]
        if true_tot[k] == 0:
            notes.append(f"class {c} absent from the test set; recall set to 0")
        else:
            recall[k] = tp[k] / true_tot[k]
    denom = precision + recall
    f1 = np.where(denom > 0, 2 * precision * recall / np.where(denom > 0, denom, 1), 0.0)
    for note in notes:
        warnings.warn(note, RuntimeWarning, stacklevel=3)
    return EvalReport(classes, cm, float(tp.sum() / cm.sum()), precision, recall, f1, true_tot, notes)


def evaluate(model: SvmModel, features, labels) -> EvalReport:
    X, y = _check_xy(features, labels)
    if len(y) == 0:
        raise ValidationError("empty test set")
    classes = np.union1d(model.classes, y)
    return report_from_predictions(y, predict_batch(model, X), classes)


# -- splitting and grid search ------------------------------------------------


def stratified_folds(labels, k, seed=0):
    """Assign each example to one of ``k`` folds, class by class."""
    y = np.asarray(labels)
    classes, counts = np.unique(y, return_counts=True)
    if k < 2:
        raise ValidationError("k_folds must be at least 2")
    if counts.min() < k:
        raise ValidationError(f"class with {counts.min()} examples cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    fold = np.empty(len(y), dtype=np.int64)
    offset = 0
    for c in classes:
        members = rng.permutation(np.flatnonzero(y == c))
        fold[members] = (np.arange(len(members)) + offset) % k
        offset += len(members)
    return fold


def stratified_split(labels, test_fraction=0.2, seed=0):
    """Return ``(train_idx, test_idx)`` with the class mix preserved."""
    y = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(y):
        members = rng.permutation(np.flatnonzero(y == c))
        n_test = int(round(test_fraction * len(members)))
        if len(members) > 1:
            n_test = min(max(n_test, 1), len(members) - 1)
        test.extend(members[:n_test])
        train.extend(members[n_test:])
    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(test, dtype=np.int64))


DEFAULT_C_GRID = (0.1, 1.0, 10.0, 100.0)
DEFAULT_GAMMA_FACTORS = (0.25, 0.5, 1.0, 2.0)


@dataclass
class CVResult:
    best_C: float
    best_gamma: float
    model: SvmModel
    table: list  # (C, gamma, mean accuracy, per-fold accuracies)


def default_gamma_grid(features, factors=DEFAULT_GAMMA_FACTORS):
    X = np.asarray(features, dtype=np.float64)
    scale = X.std(0)
    scale[scale == 0] = 1.0
    var = ((X - X.mean(0)) / scale).var()
    base = 1.0 / (X.shape[1] * var) if var > 0 else 1.0
    return [f * base for f in factors]


def grid_search_cv(features, labels, C_grid=DEFAULT_C_GRID, gamma_grid=None, k_folds=5, seed=0, kernel="rbf", thresholds=None, smoothing="0"):
    """Mean stratified k-fold accuracy per ``(C, gamma)``; refit the best pair.

    Ties in mean accuracy keep the earliest grid cell (smaller C, then
    smaller gamma).
    """
    X, y = _check_xy(features, labels)
    if gamma_grid is None:
        gamma_grid = default_gamma_grid(X)
    folds = stratified_folds(y, k_folds, seed)
    table = []
    for C in C_grid:
        for gamma in gamma_grid:
            accs = []
            for f in range(k_folds):
                tr, te = folds != f, folds == f
                m = train_svm(X[tr], y[tr], kernel, C, gamma)
                accs.append(float(np.mean(predict_batch(m, X[te]) == y[te])))
            table.append((float(C), float(gamma), float(np.mean(accs)), accs))
    best = max(range(len(table)), key=lambda i: (table[i][2], -i))
    C, gamma = table[best][0], table[best][1]
    model = train_svm(X, y, kernel, C, gamma, thresholds=thresholds, smoothing=smoothing)
    return CVResult(C, gamma, model, table)


# -- persistence --------------------------------------------------------------


def encode_model(model: SvmModel) -> bytes:
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<BB", MODEL_VERSION, KERNELS[model.kernel]))
    buf.write(struct.pack("<dd", model.gamma, model.C))
    tag = str(model.smoothing).encode("utf-8")
    buf.write(struct.pack("<B", len(tag)) + tag)
    nf = model.n_features
    buf.write(struct.pack("<II", nf, len(model.classes)))
    buf.write(np.asarray(model.classes, dtype="<i8").tobytes())
    buf.write(np.asarray(model.mean, dtype="<f8").tobytes())
    buf.write(np.asarray(model.scale, dtype="<f8").tobytes())
    buf.write(struct.pack("<I", len(model.thresholds)))
    buf.write(np.asarray(model.thresholds, dtype="<f8").tobytes())
    buf.write(struct.pack("<I", len(model.machines)))
    for m in model.machines:
        buf.write(struct.pack("<qqIdd", m.pos, m.neg, len(m.coef), m.bias, m.kkt_gap))
        buf.write(np.asarray(m.coef, dtype="<f8").tobytes())
        buf.write(np.asarray(m.support_vectors, dtype="<f8").reshape(len(m.coef), nf).tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedPayloadError("model file truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, count):
        return np.frombuffer(self.take(8 * count), dtype=dtype).astype(np.float64 if dtype == "<f8" else np.int64)


def decode_model(data: bytes) -> SvmModel:
    r = _Reader(data)
    if r.take(4) != MODEL_MAGIC:
        raise BadMagicError("not an ECSV model file")
    version, kcode = r.unpack("<BB")
    if version != MODEL_VERSION:
        raise CompatibilityError(f"model format version {version} is not supported")
    kernel = {v: k for k, v in KERNELS.items()}.get(kcode)
    if kernel is None:
        raise FormatError(f"unknown kernel code {kcode}")
    gamma, C = r.unpack("<dd")
    (n_tag,) = r.unpack("<B")
    try:
        smoothing = r.take(n_tag).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("smoothing tag is not UTF-8") from exc
    nf, nc = r.unpack("<II")
    classes = r.array("<i8", nc)
    mean = r.array("<f8", nf)
    scale = r.array("<f8", nf)
    (nt,) = r.unpack("<I")
    thresholds = r.array("<f8", nt)
    (nm,) = r.unpack("<I")
    machines = []
    for _ in range(nm):
        pos, neg, nsv, bias, gap = r.unpack("<qqIdd")
        coef = r.array("<f8", nsv)
        sv = r.array("<f8", nsv * nf).reshape(nsv, nf)
        machines.append(BinaryMachine(int(pos), int(neg), sv, coef, bias, gap))
    if r.pos != len(data):
        raise FormatError("trailing bytes after model payload")
    return SvmModel(classes, kernel, gamma, C, mean, scale, machines, thresholds, smoothing)


def save_model(model: SvmModel, path) -> None:
    Path(path).write_bytes(encode_model(model))


def load_model(path) -> SvmModel:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read model {path}: {exc}") from exc
    return decode_model(data)
