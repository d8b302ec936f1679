"""
config.py
JSON experiment configuration (schema_version 1) and the objects built from it.

Every validation failure raises ConfigError whose message starts with the
offending field path, e.g. "protocols[1].gamma: must be >= 0".
"""

import json
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv

from ib_training import TrainConfig
from mathkit import UsageError
from protocols import PHASE1_BETA, ProtocolKind, ProtocolSpec
from clustering import DEFAULT_QUANTILES
from system_model import ChannelKind, ChannelModel, ObservationModel, Scenario, TargetPrior

SCHEMA_VERSION = 1
OBSERVATION_KINDS = ("bernoulli", "even_uniform_odd_binomial", "tabular")
TRAIN_FIELDS = ("beta", "epochs", "batches_per_epoch", "batch_size", "lr", "lr_decay", "decay_every", "log_floor")
FROM_CIB = "cib"


class ConfigError(ValueError):
    """Malformed experiment configuration; the message starts with the field path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


# ---------- field helpers ----------
def _require(section, key, path):
    if not isinstance(section, dict):
        raise ConfigError(path, "must be an object")
    if key not in section:
        raise ConfigError(f"{path}.{key}" if path else key, "is required")
    return section[key]


def _number(value, path, minimum=None, integer=False, strict=False):
    ok_type = isinstance(value, int) if integer else isinstance(value, (int, float))
    if isinstance(value, bool) or not ok_type:
        raise ConfigError(path, f"must be {'an integer' if integer else 'a number'}, got {value!r}")
    if minimum is not None and (value <= minimum if strict else value < minimum):
        raise ConfigError(path, f"must be {'>' if strict else '>='} {minimum}, got {value}")
    return value


def _list(value, path, non_empty=True):
    if not isinstance(value, list):
        raise ConfigError(path, "must be a list")
    if non_empty and not value:
        raise ConfigError(path, "must not be empty")
    return value


# ---------- sections ----------
@dataclass(frozen=True)
class ScenarioSettings:
    support: Tuple[float, ...]
    probs: Optional[Tuple[float, ...]]
    observation: str
    M: int
    table: Optional[Tuple[Tuple[float, ...], ...]]
    N: int
    energy: float = 1.0
    scatter_var: float = 1.0
    rician_mean: float = 1.0

    def prior(self):
        if self.probs is None:
            return TargetPrior.uniform(self.support)
        return TargetPrior(self.support, self.probs)

    def obs_model(self):
        if self.observation == "bernoulli":
            return ObservationModel.bernoulli(self.support)
        if self.observation == "even_uniform_odd_binomial":
            return ObservationModel.even_uniform_odd_binomial(self.support, self.M)
        return ObservationModel.tabular(self.support, self.table)


@dataclass(frozen=True)
class SweepAxes:
    K: Tuple[int, ...]
    snr_db: Tuple[float, ...]
    channels: Tuple[ChannelKind, ...]
    seeds: Tuple[int, ...]


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    scenario: ScenarioSettings
    train: Dict[str, Any]
    protocols: List[Dict[str, Any]]
    sweep: SweepAxes
    eval_n: int = 100_000
    validation_n: int = 2000
    workers: int = 1
    output_dir: str = "results"
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)


def _parse_scenario(sec):
    path = "scenario"
    support = _list(_require(sec, "support", path), f"{path}.support")
    for i, s in enumerate(support):
        _number(s, f"{path}.support[{i}]")
    prior = sec.get("prior", "uniform")
    probs = None
    if prior != "uniform":
        probs = _list(prior, f"{path}.prior")
        if len(probs) != len(support):
            raise ConfigError(f"{path}.prior", f"has {len(probs)} entries for a support of size {len(support)}")
        for i, p in enumerate(probs):
            _number(p, f"{path}.prior[{i}]", minimum=0)
        probs = tuple(float(p) for p in probs)

    obs = _require(sec, "observation", path)
    kind = _require(obs, "kind", f"{path}.observation")
    if kind not in OBSERVATION_KINDS:
        raise ConfigError(f"{path}.observation.kind", f"must be one of {OBSERVATION_KINDS}, got {kind!r}")
    table = None
    if kind == "bernoulli":
        M = 2
    elif kind == "even_uniform_odd_binomial":
        M = _number(obs.get("M", 20), f"{path}.observation.M", minimum=2, integer=True)
        if M % 2:
            raise ConfigError(f"{path}.observation.M", f"must be even, got {M}")
    else:
        rows = _list(_require(obs, "table", f"{path}.observation"), f"{path}.observation.table")
        if len(rows) != len(support):
            raise ConfigError(f"{path}.observation.table", "needs one row per support value")
        table = []
        for i, r in enumerate(rows):
            row_path = f"{path}.observation.table[{i}]"
            r = _list(r, row_path)
            if table and len(r) != len(table[0]):
                raise ConfigError(row_path, f"has {len(r)} entries, row 0 has {len(table[0])}")
            table.append(tuple(float(_number(x, f"{row_path}[{j}]")) for j, x in enumerate(r)))
        table = tuple(table)
        M = len(table[0])

    settings = ScenarioSettings(
        support=tuple(float(s) for s in support),
        probs=probs,
        observation=kind,
        M=M,
        table=table,
        N=_number(_require(sec, "N", path), f"{path}.N", minimum=1, integer=True),
        energy=float(_number(sec.get("energy", 1.0), f"{path}.energy", minimum=0, strict=True)),
        scatter_var=float(_number(sec.get("scatter_var", 1.0), f"{path}.scatter_var", minimum=0)),
        rician_mean=float(_number(sec.get("rician_mean", 1.0), f"{path}.rician_mean")),
    )
    # the model classes own the probability checks; report them under the field that caused them
    try:
        settings.prior()
    except UsageError as e:
        raise ConfigError(f"{path}.prior" if probs is not None else f"{path}.support", str(e)) from None
    try:
        settings.obs_model()
    except UsageError as e:
        field_path = f"{path}.observation.table" if kind == "tabular" else f"{path}.support"
        raise ConfigError(field_path, str(e)) from None
    return settings


def _parse_train(sec):
    if not isinstance(sec, dict):
        raise ConfigError("train", "must be an object")
    unknown = set(sec) - set(TRAIN_FIELDS)
    if unknown:
        raise ConfigError(f"train.{sorted(unknown)[0]}", "unknown field")
    out = {}
    for key, value in sec.items():
        integer = key in ("epochs", "batches_per_epoch", "batch_size", "decay_every")
        minimum = 1 if key in ("batches_per_epoch", "batch_size") else 0
        strict = key in ("lr", "log_floor")
        out[key] = _number(value, f"train.{key}", minimum=minimum, integer=integer, strict=strict)
    return out


def _parse_protocols(items, M):
    items = _list(items, "protocols")
    kinds = [p.get("kind") if isinstance(p, dict) else None for p in items]
    out = []
    for i, entry in enumerate(items):
        path = f"protocols[{i}]"
        kind = _require(entry, "kind", path)
        try:
            kind = ProtocolKind(kind).value
        except ValueError:
            raise ConfigError(f"{path}.kind", f"unknown protocol {kind!r}") from None
        p = dict(entry, kind=kind)
        if "gamma" in p and p["gamma"] is not None:
            _number(p["gamma"], f"{path}.gamma", minimum=0)
        if "phase1_beta" in p:
            _number(p["phase1_beta"], f"{path}.phase1_beta", minimum=0, strict=True)
        for j, b in enumerate(p.get("beta_candidates", [])):
            _number(b, f"{path}.beta_candidates[{j}]", minimum=0, strict=True)
        if kind == ProtocolKind.FC_IB_TBMA.value:
            m_prime = _require(p, "m_prime", path)
            if m_prime == FROM_CIB:
                if ProtocolKind.CIB_TBMA.value not in kinds:
                    raise ConfigError(f"{path}.m_prime", "'cib' needs a CIB_TBMA entry in the same config")
            else:
                _number(m_prime, f"{path}.m_prime", minimum=1, integer=True)
                if m_prime > M:
                    raise ConfigError(f"{path}.m_prime", f"must be <= M = {M}, got {m_prime}")
        if kind == ProtocolKind.ML.value and M != 2:
            raise ConfigError(f"{path}.kind", f"ML needs binary observations, scenario has M = {M}")
        out.append(p)
    return out


def _parse_sweep(sec):
    path = "sweep"
    K = _list(_require(sec, "K", path), f"{path}.K")
    for i, k in enumerate(K):
        _number(k, f"{path}.K[{i}]", minimum=1, integer=True)
    snr = _list(_require(sec, "snr_db", path), f"{path}.snr_db")
    for i, s in enumerate(snr):
        _number(s, f"{path}.snr_db[{i}]")
    channels = []
    for i, c in enumerate(_list(sec.get("channels", ["unit_gain"]), f"{path}.channels")):
        try:
            channels.append(ChannelKind(c))
        except ValueError:
            raise ConfigError(f"{path}.channels[{i}]", f"unknown channel kind {c!r}") from None
    seeds = _list(sec.get("seeds", [0, 1, 2, 3, 4]), f"{path}.seeds")
    for i, s in enumerate(seeds):
        _number(s, f"{path}.seeds[{i}]", minimum=0, integer=True)
    return SweepAxes(tuple(K), tuple(float(s) for s in snr), tuple(channels), tuple(seeds))


def parse_config(raw, name="experiment"):
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "must be a JSON object")
    version = _require(raw, "schema_version", "")
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version!r} (expected {SCHEMA_VERSION})")
    scenario = _parse_scenario(_require(raw, "scenario", ""))
    evaluation = raw.get("evaluation", {})
    return ExperimentConfig(
        name=raw.get("name", name),
        scenario=scenario,
        train=_parse_train(raw.get("train", {})),
        protocols=_parse_protocols(_require(raw, "protocols", ""), scenario.M),
        sweep=_parse_sweep(_require(raw, "sweep", "")),
        eval_n=_number(evaluation.get("n", 100_000), "evaluation.n", minimum=1000, integer=True),
        validation_n=_number(evaluation.get("validation_n", 2000), "evaluation.validation_n", minimum=1000, integer=True),
        workers=_number(raw.get("workers", 1), "workers", minimum=1, integer=True),
        output_dir=str(raw.get("output_dir", "results")),
        raw=raw,
    )


def load_config(path):
    """Read and validate a JSON config; .env overrides (TBMA_OUTPUT_DIR, TBMA_WORKERS) win."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"config not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError("<root>", f"invalid JSON ({e})") from e
    name = os.path.splitext(os.path.basename(path))[0]
    return apply_env_overrides(parse_config(raw, name))


def apply_env_overrides(config):
    load_dotenv()
    out_dir = os.getenv("TBMA_OUTPUT_DIR")
    workers = os.getenv("TBMA_WORKERS")
    changes = {}
    if out_dir:
        changes["output_dir"] = out_dir
    if workers:
        if not workers.isdigit() or int(workers) < 1:
            raise ConfigError("TBMA_WORKERS", f"must be a positive integer, got {workers!r}")
        changes["workers"] = int(workers)
    if not changes:
        return config
    return replace(config, **changes)


# ---------- builders ----------
def build_scenario(config, channel, K, snr_db):
    s = config.scenario
    ch = ChannelModel.from_snr_db(channel, snr_db, energy=s.energy, scatter_var=s.scatter_var, mean=s.rician_mean)
    return Scenario(s.prior(), s.obs_model(), ch, K=K, N=s.N, energy=s.energy)


def build_train_config(config, scenario):
    return TrainConfig(scenario=scenario, **config.train)


def build_protocol_spec(entry, train_config, validation_n, m_prime=None):
    """ProtocolSpec for one config entry; `m_prime` resolves an FC entry set to 'cib'."""
    m = entry.get("m_prime")
    if m == FROM_CIB:
        m = m_prime
    return ProtocolSpec(
        kind=ProtocolKind(entry["kind"]),
        train=train_config,
        phase1_beta=entry.get("phase1_beta", PHASE1_BETA),
        gamma=entry.get("gamma"),
        gamma_quantiles=tuple(entry.get("gamma_quantiles", DEFAULT_QUANTILES)),
        m_prime=m,
        warm_start=entry.get("warm_start", True),
        use_prior=entry.get("use_prior", False),
        validation_n=validation_n,
        beta_candidates=tuple(entry.get("beta_candidates", [entry.get("phase1_beta", PHASE1_BETA)])),
    )


def protocol_label(entry):
    """Row label for results: the kind, with a MAP suffix for prior-aware ML."""
    if entry["kind"] == ProtocolKind.ML.value and entry.get("use_prior"):
        return "MAP"
    return entry.get("label", entry["kind"])
