"""
decoder.py
Estimators at the fusion center.

  - DecoderParams / decoder_forward: two-layer perceptron q(s|y, theta)
    (16 ReLU hidden units, softmax over the support), input [Re(y); Im(y)]
  - hard_estimate: argmax of q, ties toward the smallest support value
  - ml_decode_binary: exact finite-mixture ML/MAP estimator for M = 2 on a
    unit-gain channel
  - exact_map_oracle: posterior by enumeration of every observation vector
"""

import itertools
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from scipy.special import logsumexp
from scipy.stats import binom

from mathkit import DTYPE, NumericError, UnsupportedModelError, UsageError, complex_gaussian_logpdf
from system_model import ChannelKind, rx_conditional_moments, type_vector

HIDDEN = 16
ORACLE_LIMIT = 10 ** 6
PARAM_NAMES = ("decoder.w1", "decoder.b1", "decoder.w2", "decoder.b2")


@dataclass(frozen=True)
class DecoderParams:
    w1: np.ndarray = field(repr=False)  # (H, 2N)
    b1: np.ndarray = field(repr=False)  # (H,)
    w2: np.ndarray = field(repr=False)  # (|S|, H)
    b2: np.ndarray = field(repr=False)  # (|S|,)

    def __post_init__(self):
        arrays = [np.array(a, dtype=np.float64) for a in (self.w1, self.b1, self.w2, self.b2)]
        w1, b1, w2, b2 = arrays
        if w1.ndim != 2 or b1.shape != (w1.shape[0],) or w2.shape[1:] != (w1.shape[0],) or b2.shape != (w2.shape[0],):
            raise UsageError(
                f"inconsistent decoder shapes: w1 {w1.shape}, b1 {b1.shape}, w2 {w2.shape}, b2 {b2.shape}"
            )
        if w1.shape[1] % 2:
            raise UsageError(f"decoder input width must be 2N, got {w1.shape[1]}")
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise UsageError("decoder parameters must be finite")
        for name, a in zip(("w1", "b1", "w2", "b2"), arrays):
            object.__setattr__(self, name, a)

    @property
    def N(self):
        return self.w1.shape[1] // 2

    @property
    def hidden(self):
        return self.w1.shape[0]

    @property
    def num_classes(self):
        return self.w2.shape[0]

    @classmethod
    def init_he(cls, N, num_classes, rng, hidden=HIDDEN):
        """Weights N(0, 2 / fan_in), biases zero."""
        w1 = rng.normal(0.0, np.sqrt(2.0 / (2 * N)), size=(hidden, 2 * N))
        w2 = rng.normal(0.0, np.sqrt(2.0 / hidden), size=(num_classes, hidden))
        return cls(w1, np.zeros(hidden), w2, np.zeros(num_classes))

    @classmethod
    def zeros(cls, N, num_classes, hidden=HIDDEN):
        return cls(np.zeros((hidden, 2 * N)), np.zeros(hidden), np.zeros((num_classes, hidden)), np.zeros(num_classes))

    def as_dict(self):
        return dict(zip(PARAM_NAMES, (self.w1, self.b1, self.w2, self.b2)))

    @classmethod
    def from_dict(cls, d):
        return cls(*(d[name] for name in PARAM_NAMES))


def flatten_rx(y):
    """[Re(y); Im(y)] along the last axis."""
    y = np.asarray(y, dtype=complex)
    return np.concatenate([y.real, y.imag], axis=-1)


def decoder_logits(params, x):
    """
    Logits of the perceptron on real inputs x (B, 2N).

    `params` maps PARAM_NAMES to tensors, so the same code runs on tape leaves
    and on constants.
    """
    hidden = F.relu(F.linear(x, params["decoder.w1"], params["decoder.b1"]))
    return F.linear(hidden, params["decoder.w2"], params["decoder.b2"])


def decoder_forward(theta, y):
    """q(.|y, theta) for one received vector (N,) or a batch (B, N)."""
    x = flatten_rx(y)
    if not np.all(np.isfinite(x)):
        raise NumericError("decoder input contains non-finite values", node="decoder.input")
    if x.shape[-1] != 2 * theta.N:
        raise UsageError(f"decoder expects {theta.N} complex inputs, got {x.shape[-1] // 2}")
    single = x.ndim == 1
    with torch.no_grad():
        params = {k: torch.as_tensor(v, dtype=DTYPE) for k, v in theta.as_dict().items()}
        logits = decoder_logits(params, torch.as_tensor(np.atleast_2d(x), dtype=DTYPE))
        q = torch.softmax(logits, dim=-1).numpy()
    return q[0] if single else q


def hard_estimate(q, support):
    """Support value with the largest probability; exact ties go to the smallest value."""
    q = np.asarray(q, dtype=np.float64)
    values = np.asarray(support, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    # argmax returns the first maximum, so scan in ascending support order
    pick = np.argmax(q[..., order], axis=-1)
    return values[order][pick] if q.ndim > 1 else float(values[order][pick])


# ---------------- model-based baselines ----------------
def _check_binary(C, obs_model, channel):
    if obs_model.M != 2 or np.asarray(C).shape[1] != 2:
        raise UnsupportedModelError(f"the binary ML decoder needs M = 2, got M = {obs_model.M}")
    if channel.kind is not ChannelKind.UNIT_GAIN:
        raise UnsupportedModelError("the binary ML decoder is defined for the unit-gain channel")


def binary_mixture_log_posterior(Y, C, K, prior, obs_model, channel, use_prior=False):
    """
    Normalized log posterior over the support for a batch Y (B, N).

    p(y|s) = sum_{n=0}^{K} Binom(n; K, p(w=1|s)) CN(y; C [K-n, n]^T, sigma_z^2 I).
    With use_prior the prior p(s) multiplies the likelihood (MAP), otherwise
    the support is weighted uniformly (ML).
    """
    C = np.asarray(C, dtype=complex)
    _check_binary(C, obs_model, channel)
    Y = np.atleast_2d(np.asarray(Y, dtype=complex))
    N = C.shape[0]
    n = np.arange(K + 1)
    means = np.stack([K - n, n], axis=1) @ C.T  # (K+1, N)
    sq = np.sum(np.abs(Y[:, None, :] - means[None, :, :]) ** 2, axis=-1)  # (B, K+1)
    log_lik_n = -N * np.log(np.pi * channel.noise_var) - sq / channel.noise_var
    p1 = obs_model.table[:, 1]
    log_binom = binom.logpmf(n[None, :], K, p1[:, None])  # (|S|, K+1)
    log_post = logsumexp(log_lik_n[:, None, :] + log_binom[None, :, :], axis=-1)  # (B, |S|)
    if use_prior:
        with np.errstate(divide="ignore"):
            log_post = log_post + np.log(prior.probabilities())[None, :]
    return log_post - logsumexp(log_post, axis=-1, keepdims=True)


def ml_decode_binary_batch(Y, C, K, prior, obs_model, channel, use_prior=False):
    log_post = binary_mixture_log_posterior(Y, C, K, prior, obs_model, channel, use_prior)
    return hard_estimate(log_post, prior.support)


def ml_decode_binary(y, C, K, prior, obs_model, channel, use_prior=False):
    """Exact ML (or MAP) estimate of s for one received vector."""
    return float(ml_decode_binary_batch(np.atleast_2d(y), C, K, prior, obs_model, channel, use_prior)[0])


def exact_map_oracle(y, C, K, prior, obs_model, channel):
    """
    Posterior p(s|y) by brute force over all M^K observation vectors.

    Only for tiny instances (M^K <= 1e6); used to check the other decoders.
    """
    C = np.asarray(C, dtype=complex)
    M = obs_model.M
    if M ** K > ORACLE_LIMIT:
        raise UsageError(f"oracle would enumerate {M}^{K} observation vectors (limit {ORACLE_LIMIT})")
    y = np.asarray(y, dtype=complex)
    # the likelihood only depends on w through its type, so cache it per type
    cache = {}
    with np.errstate(divide="ignore"):
        log_table = np.log(obs_model.table)
        log_prior = np.log(prior.probabilities())
    terms = [[] for _ in range(prior.size)]
    for w in itertools.product(range(M), repeat=K):
        t = type_vector(np.asarray(w, dtype=np.int64), M)
        key = tuple(t)
        if key not in cache:
            mean, cov = rx_conditional_moments(C, t, channel)
            cache[key] = complex_gaussian_logpdf(y, mean, cov)
        for i in range(prior.size):
            terms[i].append(log_prior[i] + log_table[i, list(w)].sum() + cache[key])
    log_joint = np.array([logsumexp(row) for row in terms])
    return np.exp(log_joint - logsumexp(log_joint))


def binary_mixture_posterior(Y, C, K, prior, obs_model, channel, use_prior=False):
    """Posterior probabilities over the support, one row per received vector."""
    return np.exp(binary_mixture_log_posterior(Y, C, K, prior, obs_model, channel, use_prior))
