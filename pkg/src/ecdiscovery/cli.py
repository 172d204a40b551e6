"""Command-line interface, one subcommand per pipeline stage.

Exit codes: 0 success, 2 validation error, 3 numerical divergence or
non-convergence, 4 file or format error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .cubical_ec import ec_curve_streaming, parse_smoothing, smooth_values, standard_thresholds, vectorize
from .errors import ECDiscoveryError, FormatError, ValidationError
from .field_core import read_dataset, read_field, standardize, write_dataset, write_field

log = logging.getLogger("ecdiscovery")


def _header(args, extra: str = "") -> list[str]:
    line = f"ecdiscovery={__version__}"
    if getattr(args, "seed", None) is not None:
        line += f" seed={args.seed}"
    return [line + (" " + extra if extra else "")]


def _write_text(path, lines: list[str], body: str) -> None:
    if path is None:
        sys.stdout.write(body)
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(f"# {h}\n" for h in lines) + body, encoding="utf-8", newline="\n")


def _config(args):
    if not args.config:
        raise ValidationError("--config is required")
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "noise", None):
        cfg = cfg.with_noise(args.noise)
    return cfg


def _pick_model(cfg, which):
    if which is None:
        return cfg.library[0]
    for m in cfg.library:
        if m.id == which or m.name == str(which):
            return m
    raise ValidationError(f"no model {which!r} in the configuration")


# -- subcommands --------------------------------------------------------------


def cmd_simulate(args):
    from .pde_sim import example_seed, sample_model_instance, simulate

    cfg = _config(args)
    spec = _pick_model(cfg, args.which)
    seed = example_seed(cfg.master_seed, spec.id, args.index)
    inst = sample_model_instance(spec, seed)
    result = simulate(inst, cfg.grid)
    fields = result if isinstance(result, tuple) else (result,)
    out = Path(args.out or f"{spec.name}_{args.index}.ecf")
    write_field(fields[0], out)
    for extra in fields[1:]:
        write_field(extra, out.with_name(f"{out.stem}_{extra.name}{out.suffix}"))
    params = " ".join(f"{k}={v:.6g}" for k, v in inst.params.items())
    print(f"{spec.name} ({spec.family}) seed={seed} bc={inst.bc['type']} {params} -> {out}")


def cmd_noise(args):
    from .pde_sim import NoiseSpec, add_noise

    field = read_field(args.field)
    levels = args.noise or [0.1]
    if len(levels) != 1:
        raise ValidationError("noise takes a single --noise level")
    seed = 0 if args.seed is None else args.seed
    noisy = add_noise(field, NoiseSpec(levels[0], seed))
    out = args.out or str(Path(args.field).with_suffix("")) + f"_noise{int(round(levels[0] * 100)):02d}.ecf"
    write_field(noisy, out)
    print(f"added {levels[0]:.0%} noise (seed {seed}) -> {out}")


def cmd_ec(args):
    field = read_field(args.field)
    th = standard_thresholds(args.thresholds)
    v = smooth_values(field.values, parse_smoothing(args.smoothing))
    z = standardize(field.with_values(v))
    curve = ec_curve_streaming(z, th, meta=Path(args.field).name)
    _write_text(args.out, _header(args, f"field={Path(args.field).name} smoothing={args.smoothing}"), curve.to_csv())


def cmd_dataset(args):
    from .pde_sim import generate_datasets
    from .experiment import level_tag

    cfg = _config(args)
    out = Path(args.out or "datasets")
    out.mkdir(parents=True, exist_ok=True)
    data = generate_datasets(
        cfg.library, cfg.n_per_model, cfg.noise_levels, cfg.grid, cfg.master_seed,
        cfg.thresholds, cfg.smoothing, args.threads,
    )
    for p, ds in data.items():
        path = out / f"{level_tag(p)}.csv"
        write_dataset(ds, path, cfg.header_lines(__version__) + [f"noise={p!r} smoothing={cfg.smoothing} n_per_model={cfg.n_per_model}"])
        print(f"{len(ds)} examples at {p:.0%} noise -> {path}")


def _load_dataset(args):
    if not args.dataset:
        raise ValidationError("--dataset is required")
    return read_dataset(args.dataset)


def cmd_train(args):
    from .experiment import cv_table_csv
    from .svm_classifier import DEFAULT_C_GRID, DEFAULT_GAMMA_FACTORS, default_gamma_grid, grid_search_cv, save_model

    ds = _load_dataset(args)
    if args.config:
        cfg = _config(args)
        C_grid, factors, k, kernel = cfg.C_grid, cfg.gamma_factors, cfg.k_folds, cfg.kernel
    else:
        C_grid, factors, k, kernel = DEFAULT_C_GRID, DEFAULT_GAMMA_FACTORS, 5, "rbf"
    seed = 0 if args.seed is None else args.seed
    cv = grid_search_cv(
        ds.features, ds.labels, C_grid, default_gamma_grid(ds.features, factors), k, seed, kernel,
        thresholds=ds.thresholds, smoothing=ds.meta.get("smoothing", "0"),
    )
    out = args.model or args.out or "model.ecsv"
    save_model(cv.model, out)
    sys.stdout.write(cv_table_csv(cv.table))
    print(f"best C={cv.best_C:g} gamma={cv.best_gamma:.6g} -> {out}")


def cmd_evaluate(args):
    from .svm_classifier import evaluate, load_model

    ds = _load_dataset(args)
    if not args.model:
        raise ValidationError("--model is required")
    model = load_model(args.model)
    if model.n_features != ds.features.shape[1]:
        raise ValidationError("dataset threshold grid does not match the model")
    rep = evaluate(model, ds.features, ds.labels)
    lines = ["class,precision,recall,f1,support"]
    for c, p, r, f, s in rep.rows():
        lines.append(f"{c},{p:.4f},{r:.4f},{f:.4f},{s}")
    lines.append(f"accuracy,{rep.accuracy:.4f},,,{int(rep.support.sum())}")
    _write_text(args.out, _header(args, f"model={Path(args.model).name} dataset={Path(args.dataset).name}"), "\n".join(lines) + "\n")
    for w in rep.warnings:
        log.warning(w)


def cmd_identify(args):
    from .experiment import identify, ranked_scores

    if not args.field or not args.model:
        raise ValidationError("identify needs --field and --model")
    label, scores = identify(args.field, args.model, args.thresholds)
    print(f"probe: external file {Path(args.field).name}")
    print(f"identified model: {label}")
    for mid, (votes, margin) in ranked_scores(scores):
        print(f"  model {mid}: votes {votes}, margin sum {margin:+.4f}")


def cmd_project(args):
    from .embed_viz import embedding_to_csv, pca_project

    ds = _load_dataset(args)
    emb = pca_project(ds.features, args.k, ds.labels)
    _write_text(args.out, _header(args, f"dataset={Path(args.dataset).name}"), embedding_to_csv(emb))


def cmd_sparse(args):
    from .sparse_candidates import DEFAULT_THRESHOLDS, build_library, candidates_table, candidates_to_csv, threshold_path

    if not args.field:
        raise ValidationError("--field is required")
    field = read_field(args.field)
    sigma = parse_smoothing(args.smoothing)
    if sigma == "auto":
        raise ValidationError("sparse regression takes a numeric --smoothing width")
    if sigma > 0:
        field = field.with_values(smooth_values(field.values, sigma))
    lib = build_library(field, skip_initial=args.skip_initial)
    cands = threshold_path(lib, DEFAULT_THRESHOLDS, k=args.k, cutoff_fraction=args.cutoff)
    print(candidates_table(cands))
    if args.out:
        _write_text(args.out, _header(args, f"field={Path(args.field).name} cutoff={args.cutoff}"), candidates_to_csv(cands))


def cmd_experiment(args):
    from .experiment import run_experiment, summary_text

    cfg = _config(args)
    probe = read_field(args.field) if args.field else None
    source = f"external file {Path(args.field).name}" if args.field else None
    out = args.out or f"runs/{cfg.name}_seed{cfg.master_seed}"
    report = run_experiment(cfg, out, threads=args.threads, probe=probe, probe_source=source, sparse=args.sparse)
    sys.stdout.write(summary_text(report))
    print(f"outputs -> {out} ({len(report.manifest)} files, manifest.csv)")


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecdiscovery", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *flags):
        if "config" in flags:
            p.add_argument("--config", help="experiment configuration file")
        if "seed" in flags:
            p.add_argument("--seed", type=int, help="master seed (overrides the configuration)")
        if "out" in flags:
            p.add_argument("--out", help="output file or directory")
        if "noise" in flags:
            p.add_argument("--noise", type=float, action="append", help="noise level in [0, 0.5]; repeatable")
        if "threads" in flags:
            p.add_argument("--threads", type=int, default=1, help="simulation worker threads")
        if "model" in flags:
            p.add_argument("--model", help="trained model file (.ecsv)")
        if "field" in flags:
            p.add_argument("--field", help="field file (.ecf)")
        if "dataset" in flags:
            p.add_argument("--dataset", help="dataset CSV")

    p = sub.add_parser("simulate", help="simulate one instance of a library model")
    common(p, "config", "seed", "out")
    p.add_argument("--which", type=int, help="model id from the configuration (default: first)")
    p.add_argument("--index", type=int, default=0, help="example index within the model")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("noise", help="add measurement noise to a field")
    common(p, "field", "noise", "seed", "out")
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("ec", help="EC curve of a field as threshold,chi CSV")
    common(p, "field", "out")
    p.add_argument("--thresholds", type=int, default=64)
    p.add_argument("--smoothing", default="0", help="Gaussian width in cells, or 'auto'")
    p.set_defaults(func=cmd_ec)

    p = sub.add_parser("dataset", help="simulate and featurize a labeled dataset")
    common(p, "config", "seed", "out", "noise", "threads")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="grid-search and train an SVM on a dataset")
    common(p, "dataset", "config", "seed", "model", "out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a model on a dataset")
    common(p, "dataset", "model", "out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("identify", help="classify a measured field")
    common(p, "field", "model")
    p.add_argument("--thresholds", type=int, help="expected threshold count (checked against the model)")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("project", help="principal-component coordinates of a dataset")
    common(p, "dataset", "out")
    p.add_argument("--k", type=int, default=2)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("sparse", help="candidate models by sparse regression")
    common(p, "field", "out")
    p.add_argument("--cutoff", type=float, default=1.0, help="fraction of temporal frequencies kept")
    p.add_argument("--k", type=int, default=4, help="number of candidates")
    p.add_argument("--smoothing", default="0", help="Gaussian width in cells applied first")
    p.add_argument("--skip-initial", type=int, default=0, help="extra time rows dropped after t0")
    p.set_defaults(func=cmd_sparse)

    p = sub.add_parser("experiment", help="run the full pipeline from a configuration")
    common(p, "config", "seed", "out", "noise", "threads", "field")
    p.add_argument("--sparse", action="store_true", help="also run sparse regression on the probe field")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ECDiscoveryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FormatError.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FormatError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
