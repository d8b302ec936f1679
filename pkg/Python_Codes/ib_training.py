"""
ib_training.py
Variational information-bottleneck objective and the joint training loop.

    L_V(C, theta) = D(C, theta) + beta R(C)
    D = E[-log q(s | y, theta)]                    (cross-entropy of the decoder)
    R = E_w[ KL( p(y | w, C) || r(y) ) ],  r = CN(0, I_N)

Samples (s, w, h, z) are drawn fresh for every batch; y is rebuilt on the tape
from the codebook and parameter-free channel/noise draws, so gradients reach
both the codebook pre-parameters and the decoder weights.
"""

from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from codebook import CodebookParams, CodewordAssignment, materialize_codebook, materialize_torch, power_check
from decoder import DecoderParams, decoder_forward, decoder_logits, hard_estimate
from mathkit import (
    DTYPE,
    AdamState,
    ComplexPair,
    NumericError,
    UsageError,
    adam_step,
    backward_grad,
    forward_eval,
    sample_standard_complex_gaussian,
    step_decay_lr,
)
from system_model import Scenario, effective_channel, rx_conditional_moments, sample_batch, sample_channel

CODEBOOK_LEAF = "codebook.pre"


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss; `trace` holds the epochs completed so far."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = list(trace)


@dataclass(frozen=True)
class TrainConfig:
    scenario: Scenario
    beta: float = 0.0
    epochs: int = 100
    batches_per_epoch: int = 100
    batch_size: int = 256
    lr: float = 1e-3
    lr_decay: float = 0.1
    decay_every: int = 10
    freeze_codebook: bool = False
    log_floor: float = 1e-30

    def __post_init__(self):
        if self.beta < 0:
            raise UsageError(f"beta must be >= 0, got {self.beta}")
        if self.batch_size < 1 or self.batches_per_epoch < 1:
            raise UsageError("batch size and batches per epoch must be >= 1")
        if self.epochs < 0:
            raise UsageError(f"epochs must be >= 0, got {self.epochs}")
        if not self.lr > 0:
            raise UsageError(f"learning rate must be > 0, got {self.lr}")
        if not 0 < self.log_floor < 1:
            raise UsageError(f"log floor must lie in (0, 1), got {self.log_floor}")


def freeze_codebook(config, frozen=True):
    """Same configuration with codebook updates switched off (decoder still trains)."""
    return replace(config, freeze_codebook=frozen)


@dataclass(frozen=True)
class LossRecord:
    epoch: int
    distortion: float
    rate: float
    total: float
    lr: float
    floor_hits: int = 0


@dataclass
class TrainedSystem:
    scenario: Scenario
    assignment: CodewordAssignment
    decoder: DecoderParams
    trace: List[LossRecord] = field(default_factory=list)
    kind: str = "IB_TBMA"
    partition: Optional[object] = None
    gamma: Optional[float] = None
    beta: float = 0.0
    phase1: Optional["TrainedSystem"] = None

    @property
    def codebook(self):
        return self.assignment.codebook

    @property
    def M_prime(self):
        return self.assignment.M_prime

    def passes_power_check(self):
        return power_check(self.codebook, self.scenario.energy)

    def estimate(self, Y):
        """Hard estimates for a batch of received vectors (B, N)."""
        return hard_estimate(decoder_forward(self.decoder, Y), self.scenario.support)


# ---------------- encoders ----------------
def learned_assignment(N, M, energy, rng, mapping=None):
    """Trainable codebook with M' = max(mapping) + 1 columns, pre-parameters uniform in [-1, 1]."""
    mapping = np.arange(M) if mapping is None else np.asarray(mapping)
    params = CodebookParams.init_uniform(N, int(mapping.max()) + 1, energy, rng)
    return CodewordAssignment(mapping, materialize_codebook(params), params)


def fixed_assignment(codebook, mapping=None):
    mapping = np.arange(codebook.M) if mapping is None else mapping
    return CodewordAssignment(mapping, codebook, None)


def with_pre_params(assignment, pre):
    params = CodebookParams(pre, assignment.codebook.energy)
    return CodewordAssignment(assignment.mapping, materialize_codebook(params), params)


# ---------------- sampling ----------------
@dataclass(frozen=True)
class ChannelDraw:
    h_w: np.ndarray  # (B, M) effective channels
    z: np.ndarray  # (B, N) noise, already scaled by sigma_z


def draw_channel(scenario, batch, rng):
    """Fresh fading and noise for every sample of a batch."""
    B = batch.size
    h = sample_channel(scenario.channel, (B, scenario.K), rng)
    h_w = effective_channel(batch.w, h, scenario.M)
    z = scenario.channel.noise_std * sample_standard_complex_gaussian(rng, (B, scenario.N))
    return ChannelDraw(h_w, z)


# ---------------- graph ----------------
def _codebook_pair(tape, leaves, assignment):
    if CODEBOOK_LEAF in leaves:
        compressed = materialize_torch(leaves[CODEBOOK_LEAF], assignment.codebook.energy)
    else:
        compressed = ComplexPair.from_numpy(assignment.codebook.matrix)
    full = compressed.columns(assignment.mapping)
    tape.record("codebook.re", full.re)
    tape.record("codebook.im", full.im)
    return full


def distortion_node(tape, C, dec, s_index, draw, log_floor=1e-30):
    """
    Mean of -log q(s_b | y_b) with y_b = C h_w,b + z_b, plus the count of
    samples whose probability fell below the log floor.
    """
    h_w = ComplexPair.from_numpy(draw.h_w)
    y = h_w.matmul(C.transpose()).add(ComplexPair.from_numpy(draw.z))
    x = tape.record("rx", torch.cat([y.re, y.im], dim=1))
    logits = tape.record("decoder.logits", decoder_logits(dec, x))
    log_q = torch.log_softmax(logits, dim=1)
    picked = log_q[torch.arange(len(s_index)), torch.as_tensor(np.asarray(s_index), dtype=torch.long)]
    floor = float(np.log(log_floor))
    hits = int((picked < floor).sum())
    picked = torch.clamp(picked, min=floor)
    return tape.record("distortion", -picked.mean()), hits


def rate_node(tape, C, t, channel):
    """
    Mean over the batch of KL( CN(mu_b, Sigma_b) || CN(0, I) )
        = tr(Sigma_b) - N - ln det(Sigma_b) + ||mu_b||^2,
    with mu_b = mu C t_b and Sigma_b = sigma_h^2 C diag(t_b) C^H + sigma_z^2 I.

    Sigma_b = A + jB is handled through its real 2N x 2N form [[A, -B], [B, A]],
    whose Cholesky factor L gives ln det(Sigma_b) = sum(log diag L).
    """
    t = torch.as_tensor(np.asarray(t, dtype=np.float64), dtype=DTYPE)
    N = C.re.shape[0]
    mean = ComplexPair(t @ C.re.T, t @ C.im.T).scale(channel.common_mean())
    cr = C.re.unsqueeze(0) * t.unsqueeze(1)  # (B, N, M): C diag(t_b)
    ci = C.im.unsqueeze(0) * t.unsqueeze(1)
    eye = torch.eye(N, dtype=DTYPE)
    A = channel.scatter_var * (cr @ C.re.T + ci @ C.im.T) + channel.noise_var * eye
    Bm = channel.scatter_var * (ci @ C.re.T - cr @ C.im.T)
    real_form = torch.cat([torch.cat([A, -Bm], dim=2), torch.cat([Bm, A], dim=2)], dim=1)
    L, info = torch.linalg.cholesky_ex(real_form)
    bad = torch.nonzero(info).flatten()
    if len(bad):
        b = int(bad[0])
        raise NumericError(f"received-signal covariance of batch sample {b} is not positive definite", node="rate", batch_index=b)
    logdet = torch.log(torch.diagonal(L, dim1=-2, dim2=-1)).sum(-1)
    trace = torch.diagonal(A, dim1=-2, dim2=-1).sum(-1)
    kl = trace - N - logdet + mean.abs2().sum(-1)
    return tape.record("rate", kl.mean())


def ib_graph(assignment, decoder, scenario, batch, draw, beta, log_floor, stats):
    """
    Build the graph callable for forward_eval.

    Parameters present among the tape leaves are trained; everything else is
    taken from `assignment` / `decoder` as constants. Per-term values land in
    `stats` (distortion, rate, floor_hits).
    """

    def graph(tape, leaves):
        C = _codebook_pair(tape, leaves, assignment)
        dec = {
            name: leaves[name] if name in leaves else torch.as_tensor(value, dtype=DTYPE)
            for name, value in decoder.as_dict().items()
        }
        d, hits = distortion_node(tape, C, dec, batch.s_index, draw, log_floor)
        stats["distortion"] = float(d.detach())
        stats["floor_hits"] = hits
        if beta == 0:
            stats["rate"] = 0.0
            return d
        r = rate_node(tape, C, batch.t, scenario.channel)
        stats["rate"] = float(r.detach())
        return tape.record("objective", d + beta * r)

    return graph


# ---------------- estimates ----------------
def distortion_estimate(batch, assignment, decoder, scenario, rng, log_floor=1e-30):
    """Monte-Carlo distortion (nats) on one batch with fresh fading and noise."""
    draw = draw_channel(scenario, batch, rng)
    stats = {}
    loss, _ = forward_eval(ib_graph(assignment, decoder, scenario, batch, draw, 0.0, log_floor, stats), {})
    return loss


def rate_estimate(batch, C, channel):
    """Closed-form rate term (nats) for the type vectors of a batch and a full N x M codebook."""

    def graph(tape, leaves):
        return rate_node(tape, ComplexPair.from_numpy(C), batch.t, channel)

    loss, _ = forward_eval(graph, {})
    return loss


def rate_sampling_estimate(C, t, channel, n, rng):
    """
    Pure sampling estimate of KL(p(y|w) || r) for one type vector:
    average of log p(y|w) - log r(y) over y ~ p(y|w). Returns (mean, standard error).
    """
    mean, cov = rx_conditional_moments(C, t, channel)
    L = np.linalg.cholesky(cov)
    u = sample_standard_complex_gaussian(rng, (n, len(mean)))
    y = mean[None, :] + u @ L.T
    logdet = 2.0 * np.sum(np.log(np.real(np.diag(L))))
    # log p(y|w) - log r(y) with the pi terms cancelling
    samples = -logdet - np.sum(np.abs(u) ** 2, axis=1) + np.sum(np.abs(y) ** 2, axis=1)
    return float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(n))


@dataclass(frozen=True)
class ObjectiveValue:
    total: float
    distortion: float
    rate: float
    floor_hits: int


def ib_objective(batch, assignment, decoder, config, rng):
    """L_V = distortion + beta * rate on one batch; beta = 0 skips the rate term."""
    draw = draw_channel(config.scenario, batch, rng)
    stats = {}
    graph = ib_graph(assignment, decoder, config.scenario, batch, draw, config.beta, config.log_floor, stats)
    total, _ = forward_eval(graph, {})
    return ObjectiveValue(total, stats["distortion"], stats["rate"], stats["floor_hits"])


def trainable_inputs(assignment, decoder, freeze=False):
    inputs = {}
    if assignment.params is not None and not freeze:
        inputs[CODEBOOK_LEAF] = assignment.params.pre
    inputs.update(decoder.as_dict())
    return inputs


# ---------------- training loop ----------------
def train(config, rng, init=None, kind="IB_TBMA", verbose=True):
    """
    Adam on fresh batches: epochs x batches_per_epoch steps, learning rate
    decayed by `lr_decay` every `decay_every` epochs.

    Args:
        config: TrainConfig
        rng: numpy Generator; initialization then all batches draw from it in order
        init: optional (CodewordAssignment, DecoderParams) warm start; by default a
              learned full codebook and a He-initialized decoder
        kind: protocol label stored on the result

    Returns:
        TrainedSystem with the per-epoch averaged loss trace
    """
    sc = config.scenario
    if init is None:
        assignment = learned_assignment(sc.N, sc.M, sc.energy, rng)
        decoder = DecoderParams.init_he(sc.N, sc.prior.size, rng)
    else:
        assignment, decoder = init
    if assignment.M != sc.M or decoder.N != sc.N or decoder.num_classes != sc.prior.size:
        raise UsageError("initial encoder/decoder do not match the scenario dimensions")

    params = trainable_inputs(assignment, decoder, config.freeze_codebook)
    adam = AdamState.init(params, lr=config.lr)
    trace = []
    if verbose and config.epochs:
        print(f"🚀 Training {kind}: K={sc.K}, N={sc.N}, M'={assignment.M_prime}, beta={config.beta}, "
              f"{config.epochs} epochs x {config.batches_per_epoch} batches of {config.batch_size}")

    for epoch in tqdm(range(config.epochs), desc=f"{kind} epochs", disable=not verbose):
        lr = step_decay_lr(config.lr, config.lr_decay, config.decay_every, epoch)
        adam = adam.with_lr(lr)
        sums = np.zeros(3)
        hits = 0
        for _ in range(config.batches_per_epoch):
            batch = sample_batch(sc.prior, sc.obs_model, sc.K, config.batch_size, rng)
            draw = draw_channel(sc, batch, rng)
            stats = {}
            graph = ib_graph(assignment, decoder, sc, batch, draw, config.beta, config.log_floor, stats)
            try:
                loss, tape = forward_eval(graph, params)
            except NumericError as e:
                raise TrainingDivergedError(f"{kind} diverged in epoch {epoch}: {e}", trace) from e
            grads = backward_grad(tape)
            params, adam = adam_step(params, grads, adam)
            sums += (stats["distortion"], stats["rate"], loss)
            hits += stats["floor_hits"]
        d, r, total = sums / config.batches_per_epoch
        record = LossRecord(epoch, float(d), float(r), float(total), lr, hits)
        if not np.isfinite(total):
            raise TrainingDivergedError(f"{kind} produced a non-finite loss in epoch {epoch}", trace)
        trace.append(record)
        if hits and verbose:
            tqdm.write(f"⚠  epoch {epoch}: {hits} samples hit the log floor {config.log_floor:g}")

    if CODEBOOK_LEAF in params:
        assignment = with_pre_params(assignment, params[CODEBOOK_LEAF])
    decoder = DecoderParams.from_dict(params)
    if verbose and trace:
        last = trace[-1]
        print(f"✅ {kind} done: distortion={last.distortion:.4f}, rate={last.rate:.4f}, total={last.total:.4f}")
    return TrainedSystem(sc, assignment, decoder, trace, kind=kind, beta=config.beta)


def trace_frame(trace):
    """Loss trace as a table: epoch, distortion, rate, total, lr, floor_hits."""
    columns = ["epoch", "distortion", "rate", "total", "lr", "floor_hits"]
    return pd.DataFrame([[getattr(r, c) for c in columns] for r in trace], columns=columns)
