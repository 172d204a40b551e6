"""Principal-component projection of EC feature matrices for plotting."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

log = logging.getLogger(__name__)

POWER_TOL = 1e-10
POWER_MAX_ITER = 1000


@dataclass
class Embedding:
    coordinates: np.ndarray  # (examples, k)
    explained_variance_ratio: np.ndarray
    labels: np.ndarray | None
    components: np.ndarray  # (k, features), unit rows
    mean: np.ndarray

    def transform(self, features) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) @ self.components.T


def _project_out(v: np.ndarray, basis) -> np.ndarray:
    for _ in range(2):  # twice is enough for orthogonality to round-off
        for u in basis:
            v = v - np.dot(v, u) * u
    return v


def _leading_eigvec(C: np.ndarray, start: np.ndarray, basis=()):
    """Power iteration restricted to the complement of ``basis``."""
    v = _project_out(start, basis)
    v = v / np.linalg.norm(v)
    lam = 0.0
    delta = 0.0
    # below this the projected product is round-off and its direction is noise
    floor = 1e-13 * np.linalg.norm(C)
    for it in range(POWER_MAX_ITER):
        w = _project_out(C @ v, basis)
        norm = np.linalg.norm(w)
        if norm <= floor:
            return v, 0.0
        w /= norm
        # eigenvectors are defined up to sign; compare against the aligned iterate
        if np.dot(w, v) < 0:
            w = -w
        delta = np.linalg.norm(w - v)
        v = w
        lam = float(v @ C @ v)
        if delta < POWER_TOL:
            break
    else:
        log.warning("power iteration stopped after %d iterations (change %.2e)", POWER_MAX_ITER, delta)
    return v, lam


def pca_project(features, k: int = 2, labels=None) -> Embedding:
    """Project centered features onto their ``k`` leading principal axes.

    Axes come from power iteration with deflation on the feature covariance.
    Each axis is signed so that its largest-magnitude loading is positive.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError("features must be a 2-D matrix")
    n, m = X.shape
    if n < 2:
        raise ValidationError("need at least two examples")
    if not 1 <= k <= min(n, m):
        raise ValidationError(f"k must lie in [1, {min(n, m)}], got {k}")
    mean = X.mean(0)
    Xc = X - mean
    C = Xc.T @ Xc / (n - 1)
    total = float(np.trace(C))
    rng = np.random.default_rng(0)
    comps = []
    lams = []
    R = C.copy()
    for _ in range(k):
        v, lam = _leading_eigvec(R, rng.standard_normal(m), comps)
        lam = max(float(v @ C @ v), 0.0)
        j = int(np.argmax(np.abs(v)))
        if v[j] < 0:
            v = -v
        comps.append(v)
        lams.append(lam)
        R = R - lam * np.outer(v, v)
    W = np.array(comps)
    ratio = np.array(lams) / total if total > 0 else np.zeros(k)
    lab = None if labels is None else np.asarray(labels)
    return Embedding(Xc @ W.T, ratio, lab, W, mean)


def embedding_to_csv(emb: Embedding) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    k = emb.coordinates.shape[1]
    buf.write("# explained_variance_ratio " + " ".join(repr(float(r)) for r in emb.explained_variance_ratio) + "\n")
    w.writerow(["label"] + [f"pc{i + 1}" for i in range(k)])
    for i, row in enumerate(emb.coordinates):
        label = "" if emb.labels is None else int(emb.labels[i])
        w.writerow([label] + [repr(float(x)) for x in row])
    return buf.getvalue()
