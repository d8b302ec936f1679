"""
mathkit.py
Numeric kernel for the TBMA workbench.

  - error vocabulary shared by every module
  - seeded random streams (numpy SeedSequence, one named stream per purpose)
  - complex values as (real, imaginary) pairs of float64 torch tensors
  - a recording tape over torch autograd: forward_eval / backward_grad
  - the Adam update rule and the step-decay learning-rate schedule
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, NamedTuple

import numpy as np
import torch
from scipy.linalg import cho_factor, cho_solve

DTYPE = torch.float64


# ---------------- errors ----------------
class UsageError(ValueError):
    """A precondition of an operation was violated by the caller."""


class NumericError(ArithmeticError):
    """A non-finite or otherwise invalid numeric value was produced."""

    def __init__(self, message, node=None, batch_index=None):
        super().__init__(message)
        self.node = node
        self.batch_index = batch_index


class UnsupportedModelError(NotImplementedError):
    """The requested channel/observation model is outside an operation's scope."""


# ---------------- random streams ----------------
# Every consumer of randomness draws from its own named stream so that
# training and evaluation draws never overlap for a given seed.
STREAMS = {
    "train": 0,
    "eval": 1,
}


def stream_rng(seed, stream, *index):
    """
    Build the generator for one named stream.

    Args:
        seed: experiment seed (non-negative int)
        stream: one of STREAMS
        index: extra integers (grid point, worker, phase...) appended to the spawn key

    Returns:
        numpy Generator (PCG64) seeded from SeedSequence(seed, spawn_key=(stream, *index))
    """
    if stream not in STREAMS:
        raise UsageError(f"unknown random stream '{stream}' (known: {sorted(STREAMS)})")
    if seed < 0:
        raise UsageError(f"seed must be non-negative, got {seed}")
    seq = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[stream], *[int(i) for i in index]))
    return np.random.default_rng(seq)


def sample_standard_complex_gaussian(rng, n):
    """
    i.i.d. CN(0, 1) draws: real and imaginary parts each N(0, 1/2).

    n may be an int or a shape tuple.
    """
    shape = (n,) if np.isscalar(n) else tuple(n)
    if any(int(d) < 1 for d in shape):
        raise UsageError(f"sample size must be >= 1, got {n}")
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) / np.sqrt(2.0)


# ---------------- complex linear algebra ----------------
def complex_gaussian_logpdf(y, mean, cov):
    """log CN(y; mean, cov) = -N log(pi) - log det(cov) - (y-mean)^H cov^-1 (y-mean)."""
    y = np.asarray(y, dtype=complex)
    diff = y - np.asarray(mean, dtype=complex)
    n = diff.shape[0]
    try:
        factor = cho_factor(np.asarray(cov, dtype=complex), lower=True)
    except np.linalg.LinAlgError as e:
        raise NumericError("covariance is not positive definite") from e
    logdet = 2.0 * np.sum(np.log(np.real(np.diag(factor[0]))))
    quad = np.real(np.vdot(diff, cho_solve(factor, diff)))
    return float(-n * np.log(np.pi) - logdet - quad)


class ComplexPair(NamedTuple):
    """Complex tensor stored as two real planes so autograd stays real-valued."""

    re: torch.Tensor
    im: torch.Tensor

    @classmethod
    def from_numpy(cls, arr):
        arr = np.asarray(arr, dtype=complex)
        return cls(torch.as_tensor(arr.real.copy(), dtype=DTYPE), torch.as_tensor(arr.imag.copy(), dtype=DTYPE))

    def to_numpy(self):
        return self.re.detach().cpu().numpy() + 1j * self.im.detach().cpu().numpy()

    @property
    def shape(self):
        return tuple(self.re.shape)

    def matmul(self, other):
        return ComplexPair(
            self.re @ other.re - self.im @ other.im,
            self.re @ other.im + self.im @ other.re,
        )

    def scale(self, z):
        z = complex(z)
        return ComplexPair(z.real * self.re - z.imag * self.im, z.real * self.im + z.imag * self.re)

    def add(self, other):
        return ComplexPair(self.re + other.re, self.im + other.im)

    def transpose(self):
        return ComplexPair(self.re.transpose(-1, -2), self.im.transpose(-1, -2))

    def conj_transpose(self):
        return ComplexPair(self.re.transpose(-1, -2), -self.im.transpose(-1, -2))

    def columns(self, index):
        index = torch.as_tensor(np.array(index, dtype=np.int64))
        return ComplexPair(self.re[..., index], self.im[..., index])

    def abs2(self):
        return self.re ** 2 + self.im ** 2


# ---------------- tape ----------------
class Tape:
    """
    Records one forward pass of a training graph.

    Leaves are the trainable parameters (float64, requires_grad). Every value
    passed through `record` is checked for finiteness and kept under its node
    name, in evaluation order. A tape supports exactly one backward pass.
    """

    def __init__(self):
        self.leaves: Dict[str, torch.Tensor] = {}
        self.nodes: list = []
        self.root = None
        self._consumed = False

    def leaf(self, name, value):
        if name in self.leaves:
            raise UsageError(f"duplicate leaf '{name}' on tape")
        arr = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite input at leaf '{name}'", node=name)
        t = torch.tensor(arr, dtype=DTYPE, requires_grad=True)
        self.leaves[name] = t
        self.nodes.append((name, t))
        return t

    def record(self, name, value):
        if not torch.is_tensor(value):
            value = torch.as_tensor(value, dtype=DTYPE)
        if not bool(torch.isfinite(value).all()):
            raise NumericError(f"numeric overflow: non-finite value at node '{name}'", node=name)
        self.nodes.append((name, value))
        return value

    def value(self, name):
        for node_name, t in reversed(self.nodes):
            if node_name == name:
                return t.detach().cpu().numpy()
        raise KeyError(name)


def forward_eval(graph, inputs):
    """
    Evaluate a scalar graph on a fresh tape.

    Args:
        graph: callable(tape, leaves) -> scalar tensor; it should `tape.record`
               the intermediate nodes it wants checked and named
        inputs: {leaf name: array-like parameter}

    Returns:
        (loss as float, tape ready for backward_grad)
    """
    tape = Tape()
    leaves = {name: tape.leaf(name, value) for name, value in inputs.items()}
    out = graph(tape, leaves)
    if not torch.is_tensor(out):
        out = torch.as_tensor(out, dtype=DTYPE)
    if out.numel() != 1:
        raise UsageError(f"graph must return a scalar, got shape {tuple(out.shape)}")
    tape.root = tape.record("loss", out.reshape(()))
    return float(tape.root.detach()), tape


def backward_grad(tape):
    """Reverse pass over a forward-evaluated tape; returns {leaf name: gradient ndarray}."""
    if tape.root is None:
        raise UsageError("backward on an empty tape (forward_eval has not run)")
    if tape._consumed:
        raise UsageError("backward on a stale tape (gradients were already taken)")
    tape._consumed = True
    names = list(tape.leaves)
    if not names:
        return {}
    if not tape.root.requires_grad:
        return {name: np.zeros(tuple(tape.leaves[name].shape)) for name in names}
    grads = torch.autograd.grad(tape.root, [tape.leaves[n] for n in names], allow_unused=True)
    out = {}
    for name, g in zip(names, grads):
        if g is None:
            out[name] = np.zeros(tuple(tape.leaves[name].shape))
        else:
            out[name] = g.detach().cpu().numpy().copy()
    return out


# ---------------- Adam ----------------
@dataclass(frozen=True)
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        zeros = {name: np.zeros_like(np.asarray(p, dtype=np.float64)) for name, p in params.items()}
        return cls(m=zeros, v={k: z.copy() for k, z in zeros.items()}, step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def with_lr(self, lr):
        return replace(self, lr=lr)


def adam_step(params, grads, state):
    """
    One Adam update with bias correction.

        t <- t + 1
        m <- b1 m + (1 - b1) g
        v <- b2 v + (1 - b2) g^2
        theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)

    Returns new (params, state); inputs are left untouched.
    """
    if set(params) != set(grads) or set(params) != set(state.m):
        raise UsageError(
            f"parameter/gradient/state keys differ: {sorted(params)} vs {sorted(grads)} vs {sorted(state.m)}"
        )
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(grads[name], dtype=np.float64)
        if p.shape != g.shape or p.shape != state.m[name].shape:
            raise UsageError(f"shape mismatch for '{name}': param {p.shape}, grad {g.shape}, state {state.m[name].shape}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, replace(state, m=new_m, v=new_v, step=t)


def step_decay_lr(initial, factor, interval, epoch):
    """Learning rate for `epoch` (0-based) when it is multiplied by `factor` every `interval` epochs."""
    if interval <= 0:
        return initial
    return initial * factor ** (epoch // interval)


def numeric_gradient(fn: Callable[[Dict[str, np.ndarray]], float], params, step=1e-4) -> Dict[str, np.ndarray]:
    """Central finite differences of a scalar function of a parameter dict."""
    out = {}
    for name, p in params.items():
        p = np.asarray(p, dtype=np.float64)
        g = np.zeros_like(p)
        flat = g.reshape(-1)
        for i in range(p.size):
            bumped = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
            bumped[name].reshape(-1)[i] += step
            up = fn(bumped)
            bumped[name].reshape(-1)[i] -= 2 * step
            down = fn(bumped)
            flat[i] = (up - down) / (2 * step)
        out[name] = g
    return out

