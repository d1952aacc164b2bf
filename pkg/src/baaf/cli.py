"""Command-line front end: synthetic data generation, filtering, and
corruption-sweep evaluation.

Every command first writes a run manifest (command, flags, input hashes,
seed, version, output paths) to the output directory, then its artifacts;
reruns with the same flags produce bit-identical outputs. Exit codes:
0 success, 2 usage, 3 data/validation, 4 numerical degeneracy.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, backends, engine, metrics
from .backends import BackendConfig, GaussianParams, KnnParams, PcaParams
from .data import load_dataset, write_dataset
from .engine import BaafConfig
from .errors import DataError, DegenerateError, ParameterError
from .synth import CorruptionSpec, SynthConfig, synth_generate

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DEGENERATE = 4

DEFAULT_RATES = (0.0, 0.1, 0.2, 0.3, 0.4)


def _backend_config(args: argparse.Namespace) -> BackendConfig:
    kind = {
        "knn": "knn_memory_bank",
        "gaussian": "gaussian_mahalanobis",
        "pca": "pca_reconstruction",
    }[args.backend]
    return BackendConfig(
        kind=kind,
        knn=KnnParams(k_neighbors=args.k_neighbors, coreset_fraction=args.coreset_fraction),
        gaussian=GaussianParams(shrinkage=args.shrinkage),
        pca=PcaParams(variance_kept=args.variance_kept),
    )


def _baaf_config(args: argparse.Namespace) -> BaafConfig:
    votes, bags = args.votes, args.bags
    if args.baaf:
        try:
            votes, bags = (int(part) for part in args.baaf.split("/"))
        except ValueError:
            raise ParameterError(f"--baaf expects votes/bags, got {args.baaf!r}") from None
    return BaafConfig(
        n_bags=bags,
        k_votes=votes,
        backend=_backend_config(args),
        normalization=args.norm.replace("-", "_"),
        master_seed=args.seed,
    )


def _hash_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_run_manifest(out_dir: Path, command: str, args: argparse.Namespace,
                        inputs: list[Path], outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "flags": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "input_hashes": {str(p): _hash_file(p) for p in inputs},
        "master_seed": args.seed,
        "tool_version": __version__,
        "output_paths": outputs,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n"
    )


def cmd_synth(args: argparse.Namespace) -> int:
    if args.dim < 1:
        raise ParameterError("--dim must be >= 1")
    config = SynthConfig(
        dim=args.dim,
        n_nominal=args.nominal,
        n_test_nominal=max(args.test_nominal, 1),
        n_anomaly=args.anomaly,
        seed=args.seed,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    train, test = synth_generate(config)
    # one labeled corpus: nominal training rows followed by the anomaly pool
    pool_rows = [i for i, s in enumerate(test.sample_ids) if s.startswith("anom-")]
    pool = test.take(pool_rows)
    from .data import FeatureDataset

    labels = {s: 0 for s in train.sample_ids} | {s: 1 for s in pool.sample_ids}
    corpus = FeatureDataset(
        list(train.sample_ids) + list(pool.sample_ids),
        np.vstack([train.features, pool.features]),
        eval_labels=labels,
    )
    # the dataset manifest doubles as the run manifest: exactly three files
    # (manifest, features, labels) come out of this command
    run_fields = {
        "command": "synth",
        "flags": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "input_hashes": {},
        "master_seed": args.seed,
        "tool_version": __version__,
        "output_paths": ["dataset.features." + ("csv" if args.format == "csv" else "f32le"),
                         "dataset.labels.csv"],
    }
    write_dataset(corpus, out_dir / "dataset.json", feature_format=args.format,
                  extra_manifest_fields=run_fields)
    print(f"wrote {corpus.n_samples} samples ({len(pool_rows)} anomalous) to {out_dir}")
    return EXIT_OK


def cmd_filter(args: argparse.Namespace) -> int:
    config = _baaf_config(args)
    manifest_path = Path(args.input)
    out_dir = Path(args.out)
    _write_run_manifest(
        out_dir, "filter", args, [manifest_path],
        ["report.json", "filtered.json", "detector.bin"],
    )
    dataset = load_dataset(manifest_path)
    detector, report = engine.baaf_train(dataset, config, threads=args.threads)

    if dataset.has_labels:
        truth = {s: bool(v) for s, v in metrics.true_labels(dataset).items()}
        report = metrics.attach_filter_metrics(report, truth)

    (out_dir / "report.json").write_text(engine.report_to_json(report) + "\n")
    kept_idx = [dataset.index_of(s) for s in report.kept_ids]
    write_dataset(dataset.take(kept_idx), out_dir / "filtered.json",
                  feature_format=args.format)
    backends.save_detector(detector, out_dir / "detector.bin")
    print(
        f"{config.name}+{args.backend}: kept {len(report.kept_ids)}/{dataset.n_samples} "
        f"samples, {report.total_fit_calls} fit calls"
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = _baaf_config(args)
    synth = SynthConfig(
        dim=args.dim,
        n_nominal=args.nominal,
        n_test_nominal=args.test_nominal,
        n_anomaly=args.anomaly,
        seed=args.seed,
    )
    rates = tuple(float(r) for r in args.rates.split(",")) if args.rates else DEFAULT_RATES
    seeds = tuple(range(args.seed, args.seed + args.n_seeds))
    out_dir = Path(args.out)
    outputs = ["metrics.csv"] + (["gmm_curves.csv"] if args.gmm_dump else [])
    _write_run_manifest(out_dir, "eval", args, [], outputs)

    rows = metrics.run_corruption_sweep(
        synth, rates, seeds, config, mode=args.mode, threads=args.threads
    )
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "config", "seed", "p", "i_auroc_filtered", "i_auroc_unfiltered",
            "i_auroc_clean", "filter_precision", "filter_recall", "fit_calls",
        ])
        for row in rows:
            writer.writerow([
                row.config_name, row.seed, row.rate,
                repr(row.i_auroc_filtered), repr(row.i_auroc_unfiltered),
                repr(row.i_auroc_clean),
                "" if row.filter_precision is None else repr(row.filter_precision),
                "" if row.filter_recall is None else repr(row.filter_recall),
                row.fit_calls,
            ])

    if args.gmm_dump:
        _dump_gmm_curves(out_dir / "gmm_curves.csv", synth, rates, seeds[0], config,
                         args.mode, args.threads)
    print(f"wrote {len(rows)} metric rows to {out_dir / 'metrics.csv'}")
    return EXIT_OK


def _dump_gmm_curves(path: Path, synth: SynthConfig, rates, seed: int,
                     config: BaafConfig, mode: str, threads: int) -> None:
    """Per-bag mixture parameters plus density curves on a fixed score grid,
    enough to redraw the fitted-threshold picture for every vote and bag."""
    from .seeding import stable_seed
    from .synth import inject_corruption

    grid = np.linspace(0.0, 1.0, 101)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "p", "vote", "bag", "weight_lo", "mean_lo", "var_lo",
            "weight_hi", "mean_hi", "var_hi", "threshold", "clamped",
            "grid", "pdf_lo", "pdf_hi",
        ])
        for rate in rates:
            data = replace(synth, seed=stable_seed(seed, "data"))
            train, test = synth_generate(data)
            spec = CorruptionSpec(rate=rate, mode=mode, seed=stable_seed(seed, "corrupt"))
            corrupted = inject_corruption(train, test, spec).dataset
            run_config = replace(config, master_seed=stable_seed(seed, "engine"))
            _, report = engine.baaf_train(corrupted, run_config, threads=threads)
            for vote in report.votes:
                for bag, fit in enumerate(vote.gmm_fits):
                    if fit is None:
                        continue
                    for g in grid:
                        pdf = [
                            fit.mixing[c]
                            * np.exp(-((g - fit.means[c]) ** 2) / (2 * fit.variances[c]))
                            / np.sqrt(2 * np.pi * fit.variances[c])
                            for c in (0, 1)
                        ]
                        writer.writerow([
                            rate, vote.vote_index, bag,
                            repr(fit.mixing[0]), repr(fit.means[0]), repr(fit.variances[0]),
                            repr(fit.mixing[1]), repr(fit.means[1]), repr(fit.variances[1]),
                            repr(fit.threshold), int(fit.threshold_clamped),
                            repr(float(g)), repr(float(pdf[0])), repr(float(pdf[1])),
                        ])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="baaf",
        description="Bagged anomaly filtering for one-class detectors",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_backend_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--backend", choices=("knn", "gaussian", "pca"), default="knn")
        p.add_argument("--k-neighbors", type=int, default=1)
        p.add_argument("--coreset-fraction", type=float, default=1.0)
        p.add_argument("--shrinkage", type=float, default=0.01)
        p.add_argument("--variance-kept", type=float, default=0.95)

    def add_engine_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--bags", type=int, default=4)
        p.add_argument("--votes", type=int, default=1)
        p.add_argument("--baaf", metavar="K/N", default=None,
                       help="shorthand for --votes K --bags N")
        p.add_argument("--norm", choices=("global", "per-model"), default="global")
        p.add_argument("--threads", type=int,
                       default=int(os.environ.get("BAAF_THREADS", "1")))

    p_synth = sub.add_parser("synth", help="generate a labeled synthetic corpus")
    p_synth.add_argument("--dim", type=int, required=True)
    p_synth.add_argument("--nominal", type=int, required=True)
    p_synth.add_argument("--anomaly", type=int, required=True)
    p_synth.add_argument("--test-nominal", type=int, default=0,
                         help="extra held-out nominals (not written; see eval)")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--format", choices=("csv", "f32le"), default="csv")
    p_synth.add_argument("--out", default="synth-out")
    p_synth.set_defaults(func=cmd_synth)

    p_filter = sub.add_parser("filter", help="filter a dataset and train the final detector")
    p_filter.add_argument("--input", required=True, help="dataset manifest path")
    p_filter.add_argument("--seed", type=int, default=0)
    p_filter.add_argument("--format", choices=("csv", "f32le"), default="csv")
    p_filter.add_argument("--out", default="filter-out")
    add_engine_flags(p_filter)
    add_backend_flags(p_filter)
    p_filter.set_defaults(func=cmd_filter)

    p_eval = sub.add_parser("eval", help="run a corruption sweep on synthetic data")
    p_eval.add_argument("--dim", type=int, default=16)
    p_eval.add_argument("--nominal", type=int, default=240)
    p_eval.add_argument("--test-nominal", type=int, default=100)
    p_eval.add_argument("--anomaly", type=int, default=200)
    p_eval.add_argument("--rates", default=None,
                        help="comma-separated corruption rates (default 0,0.1,0.2,0.3,0.4)")
    p_eval.add_argument("--n-seeds", type=int, default=1)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--mode", choices=("overlapping", "non_overlapping", "near_duplicate"),
                        default="overlapping")
    p_eval.add_argument("--gmm-dump", action="store_true",
                        help="also dump per-bag mixture curves as CSV")
    p_eval.add_argument("--out", default="eval-out")
    add_engine_flags(p_eval)
    add_backend_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DegenerateError as exc:
        print(f"degenerate result: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
