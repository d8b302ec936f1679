"""
system_model.py
Source, sensors and channel of the TBMA uplink.

A target value s is drawn from a discrete prior, K sensors observe it through
p(w|s) independently, sensors observing value m all transmit codeword c_m, and
the fusion center receives y = C h_w + z with h_w = U h.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Tuple

import numpy as np
from scipy.stats import binom

from mathkit import UnsupportedModelError, UsageError, sample_standard_complex_gaussian

BINARY_SUPPORT = tuple(round(0.1 * i, 10) for i in range(1, 10))
BINARY_PEAKED_PROBS = (0.05, 0.07, 0.12, 0.16, 0.2, 0.16, 0.12, 0.07, 0.05)
MIXED_SUPPORT = (0.2, 0.4, 0.6, 0.8)

_SUPPORT_TOL = 1e-12


def _lookup(support, s):
    hits = [i for i, v in enumerate(support) if abs(v - float(s)) <= _SUPPORT_TOL]
    if not hits:
        raise UsageError(f"value {s} is not in the support {list(support)}")
    return hits[0]


# ---------------- source ----------------
@dataclass(frozen=True)
class TargetPrior:
    support: Tuple[float, ...]
    probs: Tuple[float, ...]

    def __post_init__(self):
        support = tuple(float(v) for v in self.support)
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)
        if len(support) == 0:
            raise UsageError("prior support is empty")
        if len(support) != len(probs):
            raise UsageError(f"support has {len(support)} values but {len(probs)} probabilities")
        if len(set(support)) != len(support):
            raise UsageError(f"support values must be distinct: {list(support)}")
        if any(p < 0 for p in probs):
            raise UsageError(f"probabilities must be non-negative: {list(probs)}")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise UsageError(f"probabilities sum to {sum(probs)!r}, expected 1")

    @classmethod
    def uniform(cls, support):
        n = len(support)
        return cls(tuple(support), tuple([1.0 / n] * n))

    @property
    def size(self):
        return len(self.support)

    def index_of(self, s):
        return _lookup(self.support, s)

    def values(self):
        return np.asarray(self.support, dtype=np.float64)

    def probabilities(self):
        return np.asarray(self.probs, dtype=np.float64)


def sample_target(prior, rng):
    """Draw one target value from the prior."""
    return prior.support[int(rng.choice(prior.size, p=prior.probabilities()))]


def sample_target_indices(prior, n, rng):
    return rng.choice(prior.size, size=n, p=prior.probabilities())


# ---------------- observations ----------------
@dataclass(frozen=True)
class ObservationModel:
    """Tabular p(w|s): one row per support value of s, one column per observation value."""

    support: Tuple[float, ...]
    table: np.ndarray = field(repr=False)
    kind: str = "tabular"

    def __post_init__(self):
        table = np.array(self.table, dtype=np.float64)
        object.__setattr__(self, "support", tuple(float(v) for v in self.support))
        if table.ndim != 2 or table.shape[0] != len(self.support):
            raise UsageError(f"table must be |S| x M = {len(self.support)} x M, got shape {table.shape}")
        if np.any(table < 0) or np.any(table > 1):
            raise UsageError("table entries must lie in [0, 1]")
        sums = table.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-12):
            raise UsageError(f"every row of p(w|s) must sum to 1, got {sums.tolist()}")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @property
    def M(self):
        return self.table.shape[1]

    @classmethod
    def tabular(cls, support, table):
        return cls(tuple(support), np.asarray(table, dtype=np.float64), "tabular")

    @classmethod
    def bernoulli(cls, support):
        """M = 2, p(w=1|s) = s."""
        s = np.asarray(support, dtype=np.float64)
        if np.any(s < 0) or np.any(s > 1):
            raise UsageError("bernoulli observation model needs support values in [0, 1]")
        return cls(tuple(support), np.stack([1.0 - s, s], axis=1), "bernoulli")

    @classmethod
    def even_uniform_odd_binomial(cls, support, M=20):
        """
        Mixed model: even w carry 1/M each, odd w = 2i+1 carry Binom(i; M/2 - 1, s) / 2.

        The even values hold (M/2)(1/M) = 1/2 of the mass, which fixes the 1/2
        rescale of the binomial part.
        """
        if M % 2:
            raise UsageError(f"even_uniform_odd_binomial needs an even M, got {M}")
        half = M // 2
        rows = []
        for s in support:
            row = np.empty(M)
            row[0::2] = 1.0 / M
            row[1::2] = 0.5 * binom.pmf(np.arange(half), half - 1, s)
            rows.append(row)
        return cls(tuple(support), np.array(rows), "even_uniform_odd_binomial")


def obs_pmf(model, s):
    """The p(w|s) row for a support value s."""
    return model.table[_lookup(model.support, s)].copy()


def _inverse_cdf(rows, u):
    # rows: (..., M) pmfs, u: (..., K) uniforms -> (..., K) observation indices
    cdf = np.cumsum(rows, axis=-1)
    w = (u[..., :, None] >= cdf[..., None, :]).sum(axis=-1)
    return np.minimum(w, rows.shape[-1] - 1)


def sample_observations(model, s, K, rng):
    """K conditionally independent observations given s."""
    if K < 1:
        raise UsageError(f"number of sensors K must be >= 1, got {K}")
    row = obs_pmf(model, s)
    return _inverse_cdf(row, rng.random(K))


def type_vector(w, M):
    """t[m] = number of sensors that observed m; works row-wise on a (B, K) batch."""
    w = np.asarray(w)
    if w.size and (w.min() < 0 or w.max() >= M or not np.issubdtype(w.dtype, np.integer)):
        raise UsageError(f"observations must be integers in [0, {M - 1}]")
    if w.ndim <= 1:
        return np.bincount(w.astype(np.int64).reshape(-1), minlength=M)
    B = w.shape[0]
    flat = (w.astype(np.int64) + M * np.arange(B)[:, None]).reshape(-1)
    return np.bincount(flat, minlength=B * M).reshape(B, M)


@dataclass(frozen=True)
class ObservationBatch:
    s_index: np.ndarray
    s: np.ndarray
    w: np.ndarray
    t: np.ndarray

    @property
    def size(self):
        return len(self.s)


def sample_batch(prior, model, K, B, rng):
    """B independent (s, w, t) draws."""
    if tuple(prior.support) != tuple(model.support):
        raise UsageError("prior and observation model are defined on different supports")
    idx = sample_target_indices(prior, B, rng)
    w = _inverse_cdf(model.table[idx], rng.random((B, K)))
    return ObservationBatch(s_index=idx, s=prior.values()[idx], w=w, t=type_vector(w, model.M))


# ---------------- channel ----------------
class ChannelKind(str, Enum):
    UNIT_GAIN = "unit_gain"
    RICIAN = "rician"


@dataclass(frozen=True)
class ChannelModel:
    kind: ChannelKind
    noise_var: float
    scatter_var: float = 0.0
    mean: object = 1.0  # complex scalar, or one entry per sensor

    def __post_init__(self):
        object.__setattr__(self, "kind", ChannelKind(self.kind))
        if not self.noise_var > 0:
            raise UsageError(f"noise variance must be > 0, got {self.noise_var}")
        if self.scatter_var < 0:
            raise UsageError(f"scattering variance must be >= 0, got {self.scatter_var}")

    @classmethod
    def unit_gain(cls, noise_var):
        return cls(ChannelKind.UNIT_GAIN, noise_var)

    @classmethod
    def rician(cls, noise_var, scatter_var=1.0, mean=1.0):
        return cls(ChannelKind.RICIAN, noise_var, scatter_var, mean)

    @classmethod
    def from_snr_db(cls, kind, snr_db, energy=1.0, scatter_var=1.0, mean=1.0):
        """SNR = E / sigma_z^2."""
        noise_var = energy / 10.0 ** (snr_db / 10.0)
        if ChannelKind(kind) is ChannelKind.UNIT_GAIN:
            return cls.unit_gain(noise_var)
        return cls.rician(noise_var, scatter_var, mean)

    @property
    def noise_std(self):
        return float(np.sqrt(self.noise_var))

    def common_mean(self):
        """The single mean gain shared by all sensors; per-sensor means that differ are rejected."""
        if self.kind is ChannelKind.UNIT_GAIN:
            return 1.0 + 0.0j
        mean = np.asarray(self.mean, dtype=complex).reshape(-1)
        if not np.all(mean == mean[0]):
            raise UnsupportedModelError("closed-form moments need a Rician mean that is equal across sensors")
        return complex(mean[0])


def sample_channel(channel, K, rng):
    """Fading gains of K sensors (shape may also be a (B, K) tuple)."""
    shape = (K,) if np.isscalar(K) else tuple(K)
    if channel.kind is ChannelKind.UNIT_GAIN:
        return np.ones(shape, dtype=complex)
    mean = np.broadcast_to(np.asarray(channel.mean, dtype=complex), shape)
    return mean + np.sqrt(channel.scatter_var) * sample_standard_complex_gaussian(rng, shape)


def effective_channel(w, h, M):
    """h_w = U h: h_w[m] sums the gains of the sensors that observed m (row-wise on batches)."""
    w = np.asarray(w, dtype=np.int64)
    h = np.asarray(h, dtype=complex)
    if w.shape != h.shape:
        raise UsageError(f"observation shape {w.shape} does not match channel shape {h.shape}")
    if w.ndim <= 1:
        w, h = w.reshape(-1), h.reshape(-1)
        re = np.bincount(w, weights=h.real, minlength=M)
        im = np.bincount(w, weights=h.imag, minlength=M)
        return re + 1j * im
    B = w.shape[0]
    flat = (w + M * np.arange(B)[:, None]).reshape(-1)
    re = np.bincount(flat, weights=h.real.reshape(-1), minlength=B * M)
    im = np.bincount(flat, weights=h.imag.reshape(-1), minlength=B * M)
    return (re + 1j * im).reshape(B, M)


def synthesize_rx(C, h_w, noise_std, rng):
    """y = C h_w + z with z ~ CN(0, noise_std^2 I); h_w may be a (B, M) batch."""
    C = np.asarray(C, dtype=complex)
    h_w = np.asarray(h_w, dtype=complex)
    if C.ndim != 2 or h_w.shape[-1] != C.shape[1]:
        raise UsageError(f"codebook with shape {C.shape} cannot combine an effective channel of length {h_w.shape[-1]}")
    clean = h_w @ C.T
    return clean + noise_std * sample_standard_complex_gaussian(rng, clean.shape)


def rx_conditional_moments(C, t, channel):
    """
    Mean and covariance of y given the type vector t.

    Unit gain: (C t, sigma_z^2 I). Rician with common mean mu:
    (mu C t, sigma_h^2 C diag(t) C^H + sigma_z^2 I).
    """
    C = np.asarray(C, dtype=complex)
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (C.shape[1],):
        raise UsageError(f"type vector of shape {t.shape} does not match {C.shape[1]} codewords")
    N = C.shape[0]
    if channel.kind is ChannelKind.UNIT_GAIN:
        return C @ t, channel.noise_var * np.eye(N, dtype=complex)
    if channel.kind is ChannelKind.RICIAN:
        mu = channel.common_mean()
        cov = channel.scatter_var * (C * t) @ C.conj().T + channel.noise_var * np.eye(N)
        return mu * (C @ t), cov
    raise UnsupportedModelError(f"no closed-form moments for channel kind {channel.kind}")


# ---------------- scenario ----------------
@dataclass(frozen=True)
class Scenario:
    """Everything that defines one simulated system: source, sensors, block length, channel."""

    prior: TargetPrior
    obs_model: ObservationModel
    channel: ChannelModel
    K: int
    N: int
    energy: float = 1.0

    def __post_init__(self):
        if tuple(self.prior.support) != tuple(self.obs_model.support):
            raise UsageError("prior and observation model are defined on different supports")
        if self.K < 1 or self.N < 1:
            raise UsageError(f"K and N must be >= 1, got K={self.K}, N={self.N}")
        if not self.energy > 0:
            raise UsageError(f"energy budget must be > 0, got {self.energy}")

    @property
    def M(self):
        return self.obs_model.M

    @property
    def support(self):
        return self.prior.support
