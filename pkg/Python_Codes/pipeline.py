"""
pipeline.py
Command-line entry for the TBMA workbench.

    python pipeline.py train --config configs/mixed_gaussian.json --seed 7
    python pipeline.py eval results/models/mixed_gaussian_IB_TBMA_seed7.tbma --n 100000
    python pipeline.py sweep --config configs/binary_uniform.json
    python pipeline.py cluster-report results/models/mixed_gaussian_CIB_TBMA_seed7_phase1.tbma --gamma 0.3
    python pipeline.py plot results/mixed_gaussian_results.csv --x K --series protocol
"""

import argparse
import os
import sys

import pandas as pd
from dotenv import load_dotenv

from clustering import cluster_codewords, cluster_report, distance_matrix, gamma_candidates
from Experiments.config import (
    FROM_CIB,
    ConfigError,
    build_protocol_spec,
    build_scenario,
    build_train_config,
    load_config,
    protocol_label,
)
from Experiments.evaluation import evaluate_mse
from Experiments.model_store import ArtifactError, load_system, save_system
from Experiments.plots import plot_results
from Experiments.sweep import sweep
from ib_training import TrainingDivergedError
from mathkit import NumericError, UnsupportedModelError, UsageError, stream_rng
from protocols import run_protocol

EXPECTED_ERRORS = (
    ConfigError,
    ArtifactError,
    FileNotFoundError,
    UsageError,
    NumericError,
    UnsupportedModelError,
    TrainingDivergedError,
    ValueError,
)


def _pick_protocol(config, which):
    """Protocol entry by position or by kind/label; the first entry by default."""
    if which is None:
        return 0
    if which.isdigit():
        index = int(which)
        if index >= len(config.protocols):
            raise ConfigError("protocols", f"has no entry {index}")
        return index
    for i, entry in enumerate(config.protocols):
        if which in (entry["kind"], protocol_label(entry)):
            return i
    raise ConfigError("protocols", f"has no entry named {which!r}")


def _grid_index(values, value):
    return list(values).index(value) if value in values else 0


def cmd_train(args):
    config = load_config(args.config)
    axes = config.sweep
    channel = args.channel or axes.channels[0].value
    K = args.K if args.K is not None else axes.K[0]
    snr = args.snr if args.snr is not None else axes.snr_db[0]
    pi = _pick_protocol(config, args.protocol)
    entry = config.protocols[pi]
    if entry.get("m_prime") == FROM_CIB and args.m_prime is None:
        raise ConfigError(f"protocols[{pi}].m_prime", "is 'cib'; pass --m-prime for a single training run")

    scenario = build_scenario(config, channel, K, snr)
    spec = build_protocol_spec(entry, build_train_config(config, scenario), config.validation_n, args.m_prime)
    grid = (_grid_index([c.value for c in axes.channels], channel), _grid_index(axes.K, K), _grid_index(axes.snr_db, snr))
    system = run_protocol(spec, stream_rng(args.seed, "train", *grid, pi), verbose=True)

    label = protocol_label(entry)
    out = args.out or os.path.join(config.output_dir, "models", f"{config.name}_{label}_seed{args.seed}")
    save_system(system, out, entry)
    print(f"   {label}: K={K}, {channel}, SNR={snr:g} dB, M'={system.M_prime}, power check {'ok' if system.passes_power_check() else 'FAILED'}")
    return 0


def cmd_eval(args):
    system = load_system(args.artifact)
    mse, se = evaluate_mse(system, n=args.n, rng=stream_rng(args.seed, "eval"))
    print(f"✅ {system.kind}: MSE = {mse:.6g} ± {se:.2g} (n = {args.n})")
    return 0


def cmd_sweep(args):
    config = load_config(args.config)
    results = sweep(config, workers=args.workers, save_models=args.save_models)
    return 1 if results["mse"].isna().all() else 0


def cmd_cluster_report(args):
    system = load_system(args.artifact)
    if args.gamma is None and system.partition is not None:
        text, table = cluster_report(system.partition, system.gamma)
    else:
        codebook = system.phase1.codebook if system.phase1 is not None else system.codebook
        if args.gamma is not None:
            text, table = cluster_report(cluster_codewords(codebook, args.gamma), args.gamma)
        else:
            texts, tables = [], []
            for g in gamma_candidates(distance_matrix(codebook)):
                t, tab = cluster_report(cluster_codewords(codebook, g), g)
                texts.append(t)
                tables.append(tab)
            text, table = "\n\n".join(texts), pd.concat(tables, ignore_index=True)
    print(text)
    if args.csv:
        table.to_csv(args.csv, index=False)
        print(f"✅ Saved cluster report to: {args.csv}")
    return 0


def cmd_plot(args):
    plot_results(args.csv, x=args.x, series=args.series, out_dir=args.out_dir)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(description="Train, evaluate and sweep TBMA protocols")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="Train one protocol and persist it")
    p.add_argument("--config", "-c", required=True, help="Experiment JSON config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--protocol", "-p", default=None, help="Entry index, kind or label (default: first entry)")
    p.add_argument("--channel", default=None, help="unit_gain or rician (default: first sweep channel)")
    p.add_argument("--K", type=int, default=None, help="Number of sensors (default: first sweep K)")
    p.add_argument("--snr", type=float, default=None, help="SNR in dB (default: first sweep SNR)")
    p.add_argument("--m-prime", type=int, default=None, help="Codeword count for a binned entry set to 'cib'")
    p.add_argument("--out", default=None, help="Artifact path without extension")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Evaluate a persisted system")
    p.add_argument("artifact", help="Path to a .tbma container")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="Run the configured grid")
    p.add_argument("--config", "-c", required=True)
    p.add_argument("--workers", "-w", type=int, default=None)
    p.add_argument("--save-models", action="store_true", help="Persist every trained system")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("cluster-report", help="Codeword clusters of a persisted codebook")
    p.add_argument("artifact")
    p.add_argument("--gamma", type=float, default=None, help="Threshold (default: stored partition, else every candidate)")
    p.add_argument("--csv", default=None, help="Also write the report as CSV")
    p.set_defaults(func=cmd_cluster_report)

    p = sub.add_parser("plot", help="Render a results CSV to SVG")
    p.add_argument("csv")
    p.add_argument("--x", default="K", choices=["K", "snr_db"])
    p.add_argument("--series", default="protocol")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    load_dotenv()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EXPECTED_ERRORS as e:
        print(f"❌ {type(e).__name__}: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
