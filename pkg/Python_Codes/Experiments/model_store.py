"""
model_store.py
Persistence of trained systems.

<stem>.tbma          binary container (layout below)
<stem>.json          sidecar: protocol kind, scenario, partition, gamma, beta, config entry
<stem>_trace.csv     loss trace (and <stem>_phase1_trace.csv for the compressed protocol)
<stem>_phase1.tbma   phase-I system of the compressed protocol, same format

Binary layout, little-endian:
    header  <4sHIIIII  magic b"TBMA", format version (uint16), N, M, M', |S|, H
    float64 energy (1), support (|S|),
            codebook real plane (N x M', row-major), codebook imaginary plane (N x M'),
            assignment table (M), w1 (H x 2N), b1 (H), w2 (|S| x H), b2 (|S|)
A system without a neural decoder stores H = 0.
"""

import json
import os
import struct

import numpy as np
import pandas as pd

from codebook import Codebook, CodewordAssignment
from decoder import DecoderParams
from ib_training import LossRecord, TrainedSystem, trace_frame
from protocols import MLSystem
from clustering import ClusterPartition
from system_model import ChannelModel, ObservationModel, Scenario, TargetPrior

MAGIC = b"TBMA"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHIIIII")
F8 = np.dtype("<f8")


class ArtifactError(FileNotFoundError):
    """A persisted artifact is missing or unreadable."""


def _paths(path):
    stem = path[:-5] if path.endswith(".tbma") else path
    return stem + ".tbma", stem + ".json", stem


# ---------- binary container ----------
def pack_system(system):
    sc = system.scenario
    C = system.codebook.matrix
    N, M_prime = C.shape
    dec = system.decoder
    H = 0 if dec is None else dec.hidden
    parts = [
        HEADER.pack(MAGIC, FORMAT_VERSION, N, system.assignment.M, M_prime, sc.prior.size, H),
        np.asarray([system.codebook.energy], dtype=F8).tobytes(),
        np.asarray(sc.support, dtype=F8).tobytes(),
        np.ascontiguousarray(C.real, dtype=F8).tobytes(),
        np.ascontiguousarray(C.imag, dtype=F8).tobytes(),
        np.asarray(system.assignment.mapping, dtype=F8).tobytes(),
    ]
    if dec is not None:
        parts += [np.ascontiguousarray(a, dtype=F8).tobytes() for a in (dec.w1, dec.b1, dec.w2, dec.b2)]
    return b"".join(parts)


def unpack_system(blob):
    """
    Returns:
        dict with energy, support, codebook (N x M' complex), mapping, decoder (or None)
    """
    if len(blob) < HEADER.size:
        raise ArtifactError("container is shorter than its header")
    magic, version, N, M, M_prime, S, H = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ArtifactError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise ArtifactError(f"unsupported container version {version}")
    # an ML system has H = 0 and no decoder block at all
    sizes = [1, S, N * M_prime, N * M_prime, M, H * 2 * N, H, S * H, S if H else 0]
    expected = HEADER.size + 8 * sum(sizes)
    if len(blob) != expected:
        raise ArtifactError(f"container has {len(blob)} bytes, header implies {expected}")
    arrays, offset = [], HEADER.size
    for n in sizes:
        arrays.append(np.frombuffer(blob, dtype=F8, count=n, offset=offset).astype(np.float64))
        offset += 8 * n
    energy, support, re, im, mapping, w1, b1, w2, b2 = arrays
    decoder = None
    if H:
        decoder = DecoderParams(w1.reshape(H, 2 * N), b1, w2.reshape(S, H), b2)
    return {
        "energy": float(energy[0]),
        "support": tuple(support.tolist()),
        "codebook": re.reshape(N, M_prime) + 1j * im.reshape(N, M_prime),
        "mapping": mapping.astype(np.int64),
        "decoder": decoder,
    }


# ---------- sidecar ----------
def scenario_to_dict(sc):
    mean = np.asarray(sc.channel.mean, dtype=complex).reshape(-1)
    return {
        "support": list(sc.support),
        "probs": list(sc.prior.probs),
        "observation_kind": sc.obs_model.kind,
        "observation_table": sc.obs_model.table.tolist(),
        "channel": {
            "kind": sc.channel.kind.value,
            "noise_var": sc.channel.noise_var,
            "scatter_var": sc.channel.scatter_var,
            "mean": [[float(m.real), float(m.imag)] for m in mean],
        },
        "K": sc.K,
        "N": sc.N,
        "energy": sc.energy,
    }


def scenario_from_dict(d):
    ch = d["channel"]
    mean = [complex(re, im) for re, im in ch["mean"]]
    channel = ChannelModel(ch["kind"], ch["noise_var"], ch["scatter_var"], mean[0] if len(mean) == 1 else tuple(mean))
    obs = ObservationModel(tuple(d["support"]), np.asarray(d["observation_table"]), d["observation_kind"])
    return Scenario(TargetPrior(tuple(d["support"]), tuple(d["probs"])), obs, channel, d["K"], d["N"], d["energy"])


def save_system(system, path, entry=None, verbose=True):
    """
    Write the container, the sidecar and the loss traces; the phase-I system of a
    compressed run is written next to it as <stem>_phase1.

    Returns:
        path of the .tbma container
    """
    bin_path, json_path, stem = _paths(path)
    os.makedirs(os.path.dirname(os.path.abspath(bin_path)), exist_ok=True)
    with open(bin_path, "wb") as f:
        f.write(pack_system(system))
    sidecar = {
        "format_version": FORMAT_VERSION,
        "kind": system.kind,
        "scenario": scenario_to_dict(system.scenario),
        "beta": getattr(system, "beta", 0.0),
        "gamma": system.gamma,
        "partition": None if system.partition is None else system.partition.as_lists(),
        "use_prior": getattr(system, "use_prior", False),
        "trainable_codebook": system.assignment.params is not None,
        "protocol": entry,
    }
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2)
    if system.trace:
        trace_frame(system.trace).to_csv(stem + "_trace.csv", index=False)
    if system.phase1 is not None:
        save_system(system.phase1, stem + "_phase1", entry, verbose=False)
    if verbose:
        print(f"✅ Saved {system.kind} system to: {bin_path}")
    return bin_path


def load_trace(csv_path):
    frame = pd.read_csv(csv_path, float_precision="round_trip")
    return [
        LossRecord(int(r.epoch), float(r.distortion), float(r.rate), float(r.total), float(r.lr), int(r.floor_hits))
        for r in frame.itertuples(index=False)
    ]


def load_system(path):
    """Inverse of save_system; the codebook comes back as a fixed matrix."""
    bin_path, json_path, stem = _paths(path)
    for p in (bin_path, json_path):
        if not os.path.exists(p):
            raise ArtifactError(f"missing artifact: {p}")
    with open(bin_path, "rb") as f:
        content = unpack_system(f.read())
    with open(json_path, "r", encoding="utf-8") as f:
        try:
            sidecar = json.load(f)
        except json.JSONDecodeError as e:
            raise ArtifactError(f"corrupt sidecar {json_path}: {e}") from e

    scenario = scenario_from_dict(sidecar["scenario"])
    if content["support"] != tuple(scenario.support):
        raise ArtifactError(f"support in {bin_path} does not match its sidecar")
    assignment = CodewordAssignment(content["mapping"], Codebook(content["codebook"], content["energy"]))
    partition = None if sidecar.get("partition") is None else ClusterPartition(tuple(tuple(c) for c in sidecar["partition"]))
    if content["decoder"] is None:
        system = MLSystem(scenario, assignment, sidecar.get("use_prior", False), kind=sidecar["kind"])
    else:
        trace_path = stem + "_trace.csv"
        trace = load_trace(trace_path) if os.path.exists(trace_path) else []
        system = TrainedSystem(scenario, assignment, content["decoder"], trace, kind=sidecar["kind"], beta=sidecar.get("beta", 0.0))
    system.partition = partition
    system.gamma = sidecar.get("gamma")
    if os.path.exists(stem + "_phase1.tbma"):
        system.phase1 = load_system(stem + "_phase1")
    return system
