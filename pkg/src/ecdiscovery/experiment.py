"""End-to-end experiment: simulate, featurize, train, evaluate, report.

Every text output starts with ``#`` provenance lines (package version,
configuration hash, master seed).  Nothing in the outputs depends on the
worker count, wall-clock time or absolute paths, so reruns with the same
configuration and seed are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import warnings
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .cubical_ec import ec_features, estimate_noise_sd
from .embed_viz import embedding_to_csv, pca_project
from .errors import ECDiscoveryError, CompatibilityError, ValidationError
from .field_core import Field, LabeledDataset, dataset_to_csv, read_field
from .pde_sim import add_noise, example_seed, generate_datasets, primary_component, sample_model_instance, simulate
from .svm_classifier import (
    EvalReport,
    SvmModel,
    default_gamma_grid,
    encode_model,
    evaluate,
    grid_search_cv,
    load_model,
    predict,
    stratified_split,
)

log = logging.getLogger(__name__)

SPLIT_STREAM = 0x5B11
PROBE_INDEX = 1_000_000  # example index used for the held-out probe, far from training indices


def level_tag(p: float) -> str:
    return f"noise{int(round(p * 100)):02d}"


def split_seed(master_seed: int, repeat: int) -> int:
    return int(np.random.SeedSequence([int(master_seed), SPLIT_STREAM, int(repeat)]).generate_state(1)[0])


@dataclass
class LevelResult:
    noise: float
    accuracies: list
    reports: list
    best_params: list  # (C, gamma) per repeat
    cv_table: list  # grid-search table of the first repeat
    model: SvmModel | None = None

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))


@dataclass
class Identification:
    model_id: int
    scores: dict
    source: str  # "external file ..." or "in-library resimulation ..."
    noise_level: float


@dataclass
class DiscoveryReport:
    config: ExperimentConfig
    levels: dict = dc_field(default_factory=dict)
    identification: Identification | None = None
    candidates: list | None = None
    manifest: list = dc_field(default_factory=list)  # (relative path, bytes, sha256, status)
    warnings: list = dc_field(default_factory=list)
    complete: bool = False

    def accuracy_table(self) -> str:
        return accuracy_csv(self)


class _Writer:
    """Writes output files and records them in the manifest."""

    def __init__(self, root: Path, header: list[str]):
        self.root = root
        self.header = header
        self.entries = []

    def text(self, rel: str, body: str, header: bool = True) -> Path:
        content = "".join(f"# {h}\n" for h in self.header) + body if header else body
        return self.raw(rel, content.encode("utf-8"))

    def raw(self, rel: str, data: bytes) -> Path:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self.entries.append((rel, len(data), hashlib.sha256(data).hexdigest(), "complete"))
        return path

    def manifest(self, status: str, stage: str = "") -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path", "bytes", "sha256", "status"])
        for row in self.entries:
            w.writerow(row)
        if status != "complete":
            w.writerow([f"<{stage}>", 0, "", status])
        body = buf.getvalue()
        content = "".join(f"# {h}\n" for h in self.header) + body
        path = self.root / "manifest.csv"
        path.write_text(content, encoding="utf-8", newline="\n")
        return path


def _mean_metric(reports: list[EvalReport], attr: str, classes) -> np.ndarray:
    out = np.zeros(len(classes))
    for r in reports:
        idx = {int(c): k for k, c in enumerate(r.classes)}
        vals = getattr(r, attr)
        out += np.array([vals[idx[int(c)]] if int(c) in idx else 0.0 for c in classes])
    return out / max(len(reports), 1)


def table1_csv(report: DiscoveryReport) -> str:
    """Per-class precision, recall and f1 (mean over repeats) for every noise level."""
    cfg = report.config
    classes = [m.id for m in cfg.library]
    names = {m.id: m.name for m in cfg.library}
    levels = sorted(report.levels)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["class", "name"]
    for metric in ("precision", "recall", "f1"):
        head += [f"{metric}_{level_tag(p)}" for p in levels]
    w.writerow(head)
    cols = {}
    for p in levels:
        for metric in ("precision", "recall", "f1"):
            cols[(metric, p)] = _mean_metric(report.levels[p].reports, metric, classes)
    for k, c in enumerate(classes):
        row = [c, names[c]]
        for metric in ("precision", "recall", "f1"):
            row += [f"{cols[(metric, p)][k]:.4f}" for p in levels]
        w.writerow(row)
    row = ["avg", "accuracy"] + [f"{report.levels[p].mean:.4f}" for p in levels] + [""] * (2 * len(levels))
    w.writerow(row)
    return buf.getvalue()


def accuracy_csv(report: DiscoveryReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    reps = report.config.repeats
    w.writerow(["noise", "mean_accuracy", "std_accuracy"] + [f"repeat{r + 1}" for r in range(reps)] + ["best_C", "best_gamma"])
    for p in sorted(report.levels):
        lv = report.levels[p]
        C, g = lv.best_params[0] if lv.best_params else ("", "")
        w.writerow(
            [repr(p), f"{lv.mean:.6f}", f"{lv.std:.6f}"] + [f"{a:.6f}" for a in lv.accuracies] + [repr(C), repr(g)]
        )
    return buf.getvalue()


def cv_table_csv(table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    k = len(table[0][3]) if table else 0
    w.writerow(["C", "gamma", "mean_accuracy"] + [f"fold{i + 1}" for i in range(k)])
    for C, g, mean, folds in table:
        w.writerow([repr(C), repr(g), f"{mean:.6f}"] + [f"{a:.6f}" for a in folds])
    return buf.getvalue()


def evaluate_level(cfg: ExperimentConfig, ds: LabeledDataset, noise: float) -> LevelResult:
    """Repeated stratified splits; grid search on the training part, score on the test part."""
    X, y = ds.features, ds.labels
    if len(np.unique(y)) < 2:
        msg = "single-model library: classification is degenerate, accuracy is 1 by construction"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        rep = EvalReport(np.unique(y), np.array([[len(y)]]), 1.0, np.ones(1), np.ones(1), np.ones(1), np.array([len(y)]), [msg])
        return LevelResult(noise, [1.0] * cfg.repeats, [rep] * cfg.repeats, [], [], None)
    accs, reports, params = [], [], []
    cv_table, first_model = [], None
    for r in range(cfg.repeats):
        seed = split_seed(cfg.master_seed, r)
        tr, te = stratified_split(y, cfg.test_fraction, seed)
        gammas = default_gamma_grid(X[tr], cfg.gamma_factors)
        cv = grid_search_cv(
            X[tr], y[tr], cfg.C_grid, gammas, cfg.k_folds, seed, cfg.kernel,
            thresholds=ds.thresholds, smoothing=cfg.smoothing,
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rep = evaluate(cv.model, X[te], y[te])
        accs.append(rep.accuracy)
        reports.append(rep)
        params.append((cv.best_C, cv.best_gamma))
        if r == 0:
            cv_table, first_model = cv.table, cv.model
        log.info("noise %.2f repeat %d: accuracy %.4f (C=%g, gamma=%.4g)", noise, r + 1, rep.accuracy, cv.best_C, cv.best_gamma)
    return LevelResult(noise, accs, reports, params, cv_table, first_model)


def held_out_probe(cfg: ExperimentConfig, model_index: int = 0, noise: float = 0.0) -> tuple[Field, int]:
    """A fresh draw of one library model that is not part of any dataset."""
    spec = cfg.library[model_index]
    seed = example_seed(cfg.master_seed, spec.id, PROBE_INDEX)
    u = primary_component(simulate(sample_model_instance(spec, seed), cfg.grid))
    if noise > 0:
        u = add_noise(u, noise, seed ^ 0x9E37)
    return u, spec.id


def identify_field(field: Field, model: SvmModel, n_thresholds: int | None = None):
    """Standardize, filter and classify one field with a trained model."""
    th = model.thresholds
    if len(th) == 0:
        raise CompatibilityError("model file carries no threshold grid")
    if len(th) != model.n_features:
        raise CompatibilityError(f"model threshold grid ({len(th)}) does not match its feature length ({model.n_features})")
    if n_thresholds is not None and n_thresholds != len(th):
        raise CompatibilityError(f"requested {n_thresholds} thresholds but the model was trained on {len(th)}")
    feats = ec_features(field, th, model.smoothing)
    return predict(model, feats)


def identify(field_path, model_path, n_thresholds: int | None = None):
    """``(model id, scores)`` for a field file and a model file."""
    return identify_field(read_field(field_path), load_model(model_path), n_thresholds)


def ranked_scores(scores: dict) -> list:
    return sorted(scores.items(), key=lambda kv: (-kv[1][0], -kv[1][1], kv[0]))


def _nearest_level(levels, field: Field) -> float:
    v = field.values
    sd = v.std()
    est = estimate_noise_sd(v) / sd if sd > 0 else 0.0
    return min(levels, key=lambda p: (abs(p - est), p))


def run_experiment(
    cfg: ExperimentConfig,
    out_dir,
    threads: int = 1,
    probe: Field | None = None,
    probe_source: str | None = None,
    sparse: bool = False,
    progress=None,
) -> DiscoveryReport:
    """Run every stage and write datasets, models, tables and the manifest."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    header = cfg.header_lines(__version__)
    out = _Writer(root, header)
    report = DiscoveryReport(cfg)
    stage = "config"
    try:
        out.text("config.cfg", cfg.canonical())

        stage = "dataset"
        datasets = generate_datasets(
            cfg.library, cfg.n_per_model, cfg.noise_levels, cfg.grid, cfg.master_seed,
            cfg.thresholds, cfg.smoothing, threads, progress,
        )
        for p, ds in datasets.items():
            meta = [f"noise={p!r} smoothing={cfg.smoothing} n_per_model={cfg.n_per_model}"]
            out.raw(f"datasets/{level_tag(p)}.csv", dataset_to_csv(ds, header + meta).encode("utf-8"))

        stage = "train"
        for p, ds in datasets.items():
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                lv = evaluate_level(cfg, ds, p)
            report.warnings += [str(w.message) for w in caught if "degenerate" in str(w.message)]
            report.levels[p] = lv
            if lv.model is not None:
                out.raw(f"models/{level_tag(p)}.ecsv", encode_model(lv.model))
                out.text(f"cv/{level_tag(p)}.csv", cv_table_csv(lv.cv_table))

        stage = "report"
        out.text("accuracy.csv", accuracy_csv(report))
        out.text("table1.csv", table1_csv(report))

        stage = "project"
        for p, ds in datasets.items():
            k = min(cfg.pca_components, len(ds), ds.features.shape[1])
            if len(ds) >= 2:
                emb = pca_project(ds.features, k, ds.labels)
                out.text(f"pca/{level_tag(p)}.csv", embedding_to_csv(emb))

        stage = "identify"
        if report.levels and any(lv.model is not None for lv in report.levels.values()):
            if probe is None:
                probe, truth = held_out_probe(cfg)
                probe_source = f"in-library resimulation of model {truth} (held-out seed)"
            level = _nearest_level([p for p, lv in report.levels.items() if lv.model is not None], probe)
            model = report.levels[level].model
            label, scores = identify_field(probe, model)
            report.identification = Identification(label, scores, probe_source or "external file", level)
            if sparse and probe.grid.n_spatial == 1:
                from .sparse_candidates import build_library, candidates_to_csv, threshold_path

                stage = "sparse"
                report.candidates = threshold_path(build_library(probe))
                out.text("candidates.csv", candidates_to_csv(report.candidates))

        stage = "summary"
        out.text("summary.txt", summary_text(report))
        report.complete = True
        out.manifest("complete")
    except ECDiscoveryError as exc:
        out.manifest("incomplete", stage)
        report.manifest = list(out.entries)
        exc.args = (f"[{stage}] {exc}",) + exc.args[1:]
        raise
    except Exception:
        out.manifest("incomplete", stage)
        raise
    report.manifest = list(out.entries)
    return report


def summary_text(report: DiscoveryReport) -> str:
    cfg = report.config
    lines = [
        f"experiment {cfg.name}: {len(cfg.library)} models, {cfg.n_per_model} examples each, "
        f"{cfg.repeats} split repeats, test fraction {cfg.test_fraction}",
        "",
        "noise  mean_acc  std_acc",
    ]
    for p in sorted(report.levels):
        lv = report.levels[p]
        lines.append(f"{p:5.2f}  {lv.mean:8.4f}  {lv.std:7.4f}")
    if report.identification is not None:
        ident = report.identification
        lines += ["", f"probe: {ident.source}", f"classifier for noise level {ident.noise_level:g}"]
        lines.append(f"identified model: {ident.model_id}")
        for mid, (votes, margin) in ranked_scores(ident.scores):
            lines.append(f"  model {mid}: votes {votes}, margin sum {margin:+.4f}")
    if report.candidates:
        from .sparse_candidates import candidates_table

        lines += ["", "sparse-regression candidates:", candidates_table(report.candidates)]
    for w in report.warnings:
        lines.append(f"warning: {w}")
    return "\n".join(lines) + "\n"
