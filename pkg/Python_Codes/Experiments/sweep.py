"""
sweep.py
Grid runs: every (channel, K, SNR, seed) point trains each configured protocol,
evaluates its MSE and writes one row per protocol.

Jobs run in a process pool; each job writes its rows to its own staging CSV and
the merge sorts them by grid key, so the final CSV does not depend on the
order in which jobs finish.
"""

import os
import shutil
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from mathkit import stream_rng
from protocols import ProtocolKind, run_protocol
from .config import FROM_CIB, build_protocol_spec, build_scenario, build_train_config, protocol_label
from .evaluation import evaluate_mse
from .model_store import save_system

RESULT_COLUMNS = ["protocol", "channel", "K", "snr_db", "seed", "mse", "stderr", "m_prime"]
SUMMARY_COLUMNS = ["protocol", "channel", "K", "snr_db", "seeds", "mse", "stderr", "m_prime"]


@dataclass(frozen=True)
class SweepJob:
    channel: str
    K: int
    snr_db: float
    seed: int
    grid: tuple  # (channel index, K index, SNR index), part of every random stream key

    @property
    def name(self):
        return f"{self.channel}_K{self.K}_snr{self.snr_db:g}_seed{self.seed}"


def sweep_jobs(config):
    axes = config.sweep
    jobs = []
    for ci, channel in enumerate(axes.channels):
        for ki, K in enumerate(axes.K):
            for si, snr in enumerate(axes.snr_db):
                for seed in axes.seeds:
                    jobs.append(SweepJob(channel.value, K, snr, seed, (ci, ki, si)))
    return jobs


def protocol_order(entries):
    """Indices of the protocol entries, compressed runs first so binned runs can reuse their M'."""
    return sorted(range(len(entries)), key=lambda i: entries[i]["kind"] != ProtocolKind.CIB_TBMA.value)


def run_job(config, job, staging_dir=None, save_models=False, verbose=False):
    """
    Train and evaluate every protocol at one grid point.

    A protocol that fails gets a row with NaN MSE; the others still run.
    """
    scenario = build_scenario(config, job.channel, job.K, job.snr_db)
    train_cfg = build_train_config(config, scenario)
    rows = [None] * len(config.protocols)
    cib_m_prime = None
    for pi in protocol_order(config.protocols):
        entry = config.protocols[pi]
        label = protocol_label(entry)
        row = {"protocol": label, "channel": job.channel, "K": job.K, "snr_db": job.snr_db, "seed": job.seed,
               "mse": np.nan, "stderr": np.nan, "m_prime": np.nan}
        try:
            if entry.get("m_prime") == FROM_CIB and cib_m_prime is None:
                raise RuntimeError("no M' available from a compressed run at this grid point")
            spec = build_protocol_spec(entry, train_cfg, config.validation_n, cib_m_prime)
            system = run_protocol(spec, stream_rng(job.seed, "train", *job.grid, pi), verbose=verbose)
            # all protocols at a grid point share the evaluation draws
            mse, se = evaluate_mse(system, n=config.eval_n, rng=stream_rng(job.seed, "eval", *job.grid))
            row.update(mse=mse, stderr=se, m_prime=system.M_prime)
            if spec.kind is ProtocolKind.CIB_TBMA and cib_m_prime is None:
                cib_m_prime = system.M_prime
            if save_models:
                save_system(system, os.path.join(config.output_dir, "models", f"{job.name}_{label}"), entry, verbose=False)
        except Exception as e:
            print(f"❌ {label} failed at {job.name}: {e}")
        row["order"] = pi
        rows[pi] = row
    frame = pd.DataFrame(rows)
    if staging_dir is not None:
        frame.to_csv(os.path.join(staging_dir, f"{job.name}.csv"), index=False)
    return frame


def _failed_frame(config, job):
    rows = [
        {"protocol": protocol_label(e), "channel": job.channel, "K": job.K, "snr_db": job.snr_db, "seed": job.seed,
         "mse": np.nan, "stderr": np.nan, "m_prime": np.nan, "order": i}
        for i, e in enumerate(config.protocols)
    ]
    return pd.DataFrame(rows)


def _init_worker():
    torch.set_num_threads(1)


def _worker(args):
    config, job, staging = args[0], args[1], args[2]
    try:
        return run_job(*args)
    except Exception as e:
        print(f"❌ job {job.name} crashed: {e}")
        frame = _failed_frame(config, job)
        frame.to_csv(os.path.join(staging, f"{job.name}.csv"), index=False)
        return frame


def merge_rows(frames, config):
    """Concatenate job outputs and order them by (channel, K, SNR, seed, protocol position)."""
    merged = pd.concat(frames, ignore_index=True)
    channel_rank = {c.value: i for i, c in enumerate(config.sweep.channels)}
    merged["channel_rank"] = merged["channel"].map(channel_rank)
    merged = merged.sort_values(["channel_rank", "K", "snr_db", "seed", "order"], kind="mergesort")
    merged["m_prime"] = merged["m_prime"].round().astype("Int64")
    return merged[RESULT_COLUMNS].reset_index(drop=True)


def summarize_results(results):
    """
    Mean MSE per (protocol, channel, K, SNR) across seeds, with the pooled
    standard error sqrt(sum se_i^2) / n. Failed rows are left out.
    """
    ok = results.dropna(subset=["mse"])
    keys = ["protocol", "channel", "K", "snr_db"]
    grouped = ok.groupby(keys, sort=False)
    summary = grouped.agg(
        seeds=("seed", "count"),
        mse=("mse", "mean"),
        stderr=("stderr", lambda s: float(np.sqrt(np.sum(np.square(s))) / len(s))),
        m_prime=("m_prime", "mean"),
    ).reset_index()
    return summary[SUMMARY_COLUMNS]


def sweep(config, workers=None, save_models=False, verbose=True):
    """
    Run the whole grid.

    Returns:
        DataFrame with RESULT_COLUMNS; also writes <output_dir>/<name>_results.csv
        and <name>_summary.csv
    """
    workers = config.workers if workers is None else workers
    jobs = sweep_jobs(config)
    os.makedirs(config.output_dir, exist_ok=True)
    staging = os.path.join(config.output_dir, f"staging_{config.name}")
    shutil.rmtree(staging, ignore_errors=True)
    os.makedirs(staging, exist_ok=True)
    if verbose:
        print(f"🚀 Sweep '{config.name}': {len(jobs)} grid jobs x {len(config.protocols)} protocols on {workers} worker(s)")

    args = [(config, job, staging, save_models, False) for job in jobs]
    if workers == 1:
        for a in tqdm(args, desc="grid jobs", disable=not verbose):
            _worker(a)
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker) as ex:
            futures = [ex.submit(_worker, a) for a in args]
            for fut in tqdm(as_completed(futures), total=len(futures), desc="grid jobs", disable=not verbose):
                fut.result()

    frames = [pd.read_csv(os.path.join(staging, f"{job.name}.csv"), float_precision="round_trip") for job in jobs]
    results = merge_rows(frames, config)
    out_csv = os.path.join(config.output_dir, f"{config.name}_results.csv")
    results.to_csv(out_csv, index=False)
    summarize_results(results).to_csv(os.path.join(config.output_dir, f"{config.name}_summary.csv"), index=False)
    shutil.rmtree(staging, ignore_errors=True)
    failed = int(results["mse"].isna().sum())
    if verbose:
        marker = "⚠ " if failed else "✅"
        print(f"{marker} Saved {len(results)} rows ({failed} failed) to: {out_csv}")
    return results
