"""
protocols.py
End-to-end pipelines. Every runner takes a ProtocolSpec and a numpy Generator
and returns a system that can estimate s from received vectors:

  IB_TBMA     learned codebook + decoder, beta = 0
  CIB_TBMA    phase I with beta > 0, codeword clustering, phase II with M' codewords
  FC_IB_TBMA  adjacent binning into M' codewords, then as IB_TBMA
  GAUSS_ANN   frozen random Gaussian codebook, trained decoder
  ORTHO_ANN   frozen orthogonal codebook, trained decoder
  ML          orthogonal codebook with the exact binary ML/MAP decoder
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from clustering import DEFAULT_QUANTILES, assignment_from_clusters, cluster_codewords, distance_matrix, gamma_candidates
from codebook import binned_assignment, expand_codebook, gaussian_codebook, orthogonal_codebook, power_check
from decoder import DecoderParams, ml_decode_binary_batch
from Experiments.evaluation import evaluate_mse
from ib_training import TrainConfig, fixed_assignment, freeze_codebook, learned_assignment, train
from mathkit import UnsupportedModelError, UsageError

PHASE1_BETA = 0.0009


class ProtocolKind(str, Enum):
    IB_TBMA = "IB_TBMA"
    CIB_TBMA = "CIB_TBMA"
    FC_IB_TBMA = "FC_IB_TBMA"
    GAUSS_ANN = "GAUSS_ANN"
    ORTHO_ANN = "ORTHO_ANN"
    ML = "ML"


@dataclass(frozen=True)
class ProtocolSpec:
    kind: ProtocolKind
    train: TrainConfig
    phase1_beta: float = PHASE1_BETA
    gamma: Optional[float] = None  # None: pick among gamma_quantiles by validation MSE
    gamma_quantiles: Tuple[float, ...] = DEFAULT_QUANTILES
    m_prime: Optional[int] = None
    warm_start: bool = True
    use_prior: bool = False
    validation_n: int = 2000
    beta_candidates: Tuple[float, ...] = (PHASE1_BETA,)

    def __post_init__(self):
        object.__setattr__(self, "kind", ProtocolKind(self.kind))
        M = self.train.scenario.M
        if self.kind is ProtocolKind.CIB_TBMA and not self.phase1_beta > 0:
            raise UsageError(f"phase I needs beta > 0, got {self.phase1_beta}")
        if self.gamma is not None and self.gamma < 0:
            raise UsageError(f"gamma must be >= 0, got {self.gamma}")
        if self.m_prime is not None and not 1 <= self.m_prime <= M:
            raise UsageError(f"M' must lie in [1, {M}], got {self.m_prime}")
        if any(not 0 <= q <= 1 for q in self.gamma_quantiles):
            raise UsageError("gamma quantiles must lie in [0, 1]")

    @property
    def scenario(self):
        return self.train.scenario


@dataclass
class MLSystem:
    """Fixed orthogonal codebook read out by the exact binary mixture decoder."""

    scenario: object
    assignment: object
    use_prior: bool = False
    kind: str = "ML"
    trace: List = field(default_factory=list)
    decoder: Optional[DecoderParams] = None
    partition: Optional[object] = None
    gamma: Optional[float] = None
    phase1: Optional[object] = None

    @property
    def codebook(self):
        return self.assignment.codebook

    @property
    def M_prime(self):
        return self.assignment.M_prime

    def passes_power_check(self):
        return power_check(self.codebook, self.scenario.energy)

    def estimate(self, Y):
        sc = self.scenario
        return ml_decode_binary_batch(
            Y, expand_codebook(self.assignment), sc.K, sc.prior, sc.obs_model, sc.channel, self.use_prior
        )


def _beta_zero(spec):
    return replace(spec.train, beta=0.0)


# ---------------- runners ----------------
def run_ib_tbma(spec, rng, verbose=True):
    return train(_beta_zero(spec), rng, kind=ProtocolKind.IB_TBMA.value, verbose=verbose)


def _phase2(spec, phase1, partition, gamma, rng, verbose):
    sc = spec.scenario
    assignment = assignment_from_clusters(partition, phase1.codebook)
    decoder = phase1.decoder if spec.warm_start else DecoderParams.init_he(sc.N, sc.prior.size, rng)
    system = train(_beta_zero(spec), rng, init=(assignment, decoder), kind=ProtocolKind.CIB_TBMA.value, verbose=verbose)
    system.partition = partition
    system.gamma = gamma
    system.phase1 = phase1
    return system


def run_cib_tbma(spec, rng, verbose=True):
    """
    Phase I: joint training with beta = phase1_beta on all M codewords.
    Clustering of the phase-I codewords at gamma (fixed, or chosen among the
    quantile candidates by validation MSE; candidates giving the same
    partition are trained once). Phase II: beta = 0 training of the M'
    compressed codewords, decoder warm-started unless `warm_start` is off.
    """
    phase1_cfg = replace(spec.train, beta=spec.phase1_beta)
    phase1 = train(phase1_cfg, rng, kind="CIB_TBMA phase I", verbose=verbose)

    if spec.gamma is not None:
        partition = cluster_codewords(phase1.codebook, spec.gamma)
        if verbose:
            print(f"🔗 gamma={spec.gamma:.4g} -> M'={partition.M_prime}")
        return _phase2(spec, phase1, partition, spec.gamma, rng, verbose)

    candidates = gamma_candidates(distance_matrix(phase1.codebook), spec.gamma_quantiles)
    partitions = {}
    for g in candidates:
        p = cluster_codewords(phase1.codebook, g)
        partitions.setdefault(p.clusters, (g, p))
    if verbose:
        print(f"🔎 Selecting gamma among {len(candidates)} candidates ({len(partitions)} distinct partitions)")

    # every candidate is scored on the same validation draws
    validation_seed = int(rng.integers(2 ** 63))
    best = None
    for g, p in partitions.values():
        system = _phase2(spec, phase1, p, g, rng, verbose=False)
        mse, _ = evaluate_mse(system, n=spec.validation_n, rng=np.random.default_rng(validation_seed))
        if verbose:
            print(f"   gamma={g:.4g}  M'={p.M_prime:2d}  validation MSE={mse:.5f}")
        if best is None or mse < best[0]:
            best = (mse, system)
    if verbose:
        print(f"✅ Selected gamma={best[1].gamma:.4g} with M'={best[1].M_prime}")
    return best[1]


def run_fc_ib_tbma(spec, rng, verbose=True):
    """Static adjacent binning a(m) = floor(m M'/M) followed by beta = 0 training."""
    if spec.m_prime is None:
        raise UsageError("FC_IB_TBMA needs m_prime")
    sc = spec.scenario
    mapping = binned_assignment(sc.M, spec.m_prime)
    assignment = learned_assignment(sc.N, sc.M, sc.energy, rng, mapping)
    decoder = DecoderParams.init_he(sc.N, sc.prior.size, rng)
    return train(_beta_zero(spec), rng, init=(assignment, decoder), kind=ProtocolKind.FC_IB_TBMA.value, verbose=verbose)


def _fixed_codebook_ann(spec, codebook, kind, rng, verbose):
    sc = spec.scenario
    init = (fixed_assignment(codebook), DecoderParams.init_he(sc.N, sc.prior.size, rng))
    return train(freeze_codebook(_beta_zero(spec)), rng, init=init, kind=kind, verbose=verbose)


def run_gauss_ann(spec, rng, verbose=True):
    """Random Gaussian codebook drawn first from rng, kept frozen; only the decoder trains."""
    sc = spec.scenario
    codebook = gaussian_codebook(sc.M, sc.N, sc.energy, rng)
    return _fixed_codebook_ann(spec, codebook, ProtocolKind.GAUSS_ANN.value, rng, verbose)


def run_ortho_ann(spec, rng, verbose=True):
    sc = spec.scenario
    codebook = orthogonal_codebook(sc.M, sc.N, sc.energy)
    return _fixed_codebook_ann(spec, codebook, ProtocolKind.ORTHO_ANN.value, rng, verbose)


def run_ml(spec, rng=None, verbose=True):
    sc = spec.scenario
    if sc.M != 2:
        raise UnsupportedModelError(f"the ML baseline needs binary observations, got M = {sc.M}")
    assignment = fixed_assignment(orthogonal_codebook(sc.M, sc.N, sc.energy))
    return MLSystem(sc, assignment, spec.use_prior, kind="MAP" if spec.use_prior else "ML")


def select_beta(spec, rng, verbose=True):
    """
    Cross-validate the phase-I beta of CIB_TBMA over `beta_candidates`.

    Returns:
        (chosen beta, its system, [(beta, validation MSE), ...])
    """
    if len(spec.beta_candidates) == 0:
        raise UsageError("beta_candidates is empty")
    if len(spec.beta_candidates) == 1:
        beta = spec.beta_candidates[0]
        return beta, run_cib_tbma(replace(spec, phase1_beta=beta), rng, verbose), []
    validation_seed = int(rng.integers(2 ** 63))
    scores = []
    best = None
    for beta in spec.beta_candidates:
        system = run_cib_tbma(replace(spec, phase1_beta=beta), rng, verbose=False)
        mse, _ = evaluate_mse(system, n=spec.validation_n, rng=np.random.default_rng(validation_seed))
        scores.append((beta, mse))
        if verbose:
            print(f"   beta={beta:g}  M'={system.M_prime}  validation MSE={mse:.5f}")
        if best is None or mse < best[2]:
            best = (beta, system, mse)
    return best[0], best[1], scores


RUNNERS = {
    ProtocolKind.IB_TBMA: run_ib_tbma,
    ProtocolKind.FC_IB_TBMA: run_fc_ib_tbma,
    ProtocolKind.GAUSS_ANN: run_gauss_ann,
    ProtocolKind.ORTHO_ANN: run_ortho_ann,
    ProtocolKind.ML: run_ml,
}


def run_protocol(spec, rng, verbose=True):
    """Dispatch on spec.kind; CIB_TBMA goes through beta selection."""
    if spec.kind is ProtocolKind.CIB_TBMA:
        beta, system, _ = select_beta(spec, rng, verbose)
        system.beta = beta
        return system
    return RUNNERS[spec.kind](spec, rng, verbose=verbose)
