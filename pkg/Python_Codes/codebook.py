"""
codebook.py
Shared transmit codebooks: the learned tanh parameterization, the fixed
orthogonal and Gaussian baselines, and observation -> codeword assignments.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from mathkit import ComplexPair, UsageError, sample_standard_complex_gaussian

POWER_TOL = 1e-9
ATANH_CLIP = 1.0 - 1e-6


def codebook_scale(energy, N):
    """Per-component amplitude sqrt(E / 2N): |c_nm|^2 <= E/N, hence ||c_m||^2 <= E."""
    return float(np.sqrt(energy / (2.0 * N)))


@dataclass(frozen=True)
class Codebook:
    matrix: np.ndarray = field(repr=False)
    energy: float = 1.0

    def __post_init__(self):
        C = np.array(self.matrix, dtype=complex)
        if C.ndim != 2:
            raise UsageError(f"codebook must be an N x M matrix, got shape {C.shape}")
        if not np.all(np.isfinite(C)):
            raise UsageError("codebook entries must be finite")
        C.setflags(write=False)
        object.__setattr__(self, "matrix", C)

    @property
    def N(self):
        return self.matrix.shape[0]

    @property
    def M(self):
        return self.matrix.shape[1]

    def column_powers(self):
        return np.sum(np.abs(self.matrix) ** 2, axis=0)


@dataclass(frozen=True)
class CodebookParams:
    """Unconstrained pre-parameters V, shape (2, N, M): real plane then imaginary plane."""

    pre: np.ndarray = field(repr=False)
    energy: float = 1.0

    def __post_init__(self):
        V = np.array(self.pre, dtype=np.float64)
        if V.ndim != 3 or V.shape[0] != 2:
            raise UsageError(f"pre-parameters must have shape (2, N, M), got {V.shape}")
        if not np.all(np.isfinite(V)):
            raise UsageError("codebook pre-parameters must be finite")
        object.__setattr__(self, "pre", V)

    @property
    def N(self):
        return self.pre.shape[1]

    @property
    def M(self):
        return self.pre.shape[2]

    @classmethod
    def init_uniform(cls, N, M, energy, rng):
        return cls(rng.uniform(-1.0, 1.0, size=(2, N, M)), energy)


def materialize_codebook(params):
    """C = sqrt(E/2N) (tanh V_re + j tanh V_im)."""
    a = codebook_scale(params.energy, params.N)
    return Codebook(a * (np.tanh(params.pre[0]) + 1j * np.tanh(params.pre[1])), params.energy)


def materialize_torch(pre, energy):
    """Differentiable counterpart of materialize_codebook on a (2, N, M) tensor."""
    a = codebook_scale(energy, pre.shape[1])
    return ComplexPair(a * torch.tanh(pre[0]), a * torch.tanh(pre[1]))


def pre_params_from_codebook(C, energy):
    """Invert the tanh map component-wise, clipping to |x| <= 1 - 1e-6 before atanh."""
    C = np.asarray(C, dtype=complex)
    a = codebook_scale(energy, C.shape[0])
    re = np.arctanh(np.clip(C.real / a, -ATANH_CLIP, ATANH_CLIP))
    im = np.arctanh(np.clip(C.imag / a, -ATANH_CLIP, ATANH_CLIP))
    return CodebookParams(np.stack([re, im]), energy)


def orthogonal_codebook(M, N, E):
    """Columns sqrt(E) e_m: mutually orthogonal, each with power E."""
    if N < M:
        raise UsageError(f"orthogonal codewords need N >= M, got N={N}, M={M}")
    return Codebook(np.sqrt(E) * np.eye(N, M, dtype=complex), E)


def gaussian_codebook(M, N, E, rng):
    """Entries i.i.d. CN(0, E/N); columns above the power budget are rescaled onto it."""
    C = np.sqrt(E / N) * sample_standard_complex_gaussian(rng, (N, M))
    power = np.sum(np.abs(C) ** 2, axis=0)
    over = power > E
    C[:, over] *= np.sqrt(E / power[over])
    return Codebook(C, E)


def power_check(C, E):
    """True iff every column satisfies ||c_m||^2 <= E (+1e-9)."""
    C = C.matrix if isinstance(C, Codebook) else np.asarray(C, dtype=complex)
    return bool(np.all(np.sum(np.abs(C) ** 2, axis=0) <= E + POWER_TOL))


# ---------------- assignments ----------------
@dataclass(frozen=True)
class CodewordAssignment:
    """
    Observation m is sent with column mapping[m] of a compressed codebook of M' columns.

    `params` holds the compressed pre-parameters when the codebook is trainable.
    """

    mapping: np.ndarray
    codebook: Codebook
    params: Optional[CodebookParams] = None

    def __post_init__(self):
        a = np.array(self.mapping, dtype=np.int64).reshape(-1)
        if a.size == 0:
            raise UsageError("assignment must cover at least one observation value")
        if a.min() < 0 or a.max() >= self.codebook.M:
            raise UsageError(f"assignment refers to codeword {a.max()} but the codebook has {self.codebook.M} columns")
        if self.codebook.M > a.size:
            raise UsageError(f"compressed codebook has {self.codebook.M} columns for only {a.size} observation values")
        a.setflags(write=False)
        object.__setattr__(self, "mapping", a)

    @property
    def M(self):
        return self.mapping.size

    @property
    def M_prime(self):
        return self.codebook.M

    @classmethod
    def identity(cls, codebook, params=None):
        return cls(np.arange(codebook.M), codebook, params)


def binned_assignment(M, M_prime):
    """Adjacent binning a(m) = floor(m M' / M)."""
    if not 1 <= M_prime <= M:
        raise UsageError(f"need 1 <= M' <= M, got M'={M_prime}, M={M}")
    return (np.arange(M) * M_prime) // M


def apply_assignment(assignment, m):
    """Codeword index and vector used for observation m."""
    if not 0 <= int(m) < assignment.M:
        raise UsageError(f"observation {m} outside [0, {assignment.M - 1}]")
    j = int(assignment.mapping[int(m)])
    return j, assignment.codebook.matrix[:, j].copy()


def expand_codebook(assignment):
    """The N x M codebook seen by the channel: column m is c'_{a(m)}."""
    return assignment.codebook.matrix[:, assignment.mapping]

