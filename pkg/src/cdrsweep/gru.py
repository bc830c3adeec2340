"""Gated recurrent cell with an affine readout head.

Weight naming convention used throughout: the square W matrices act on the
previous hidden state and the rectangular R matrices act on the current
input. The update gate u blends old state into new candidate state,

    h[t] = (1 - u[t]) * h[t-1] + u[t] * z[t]

so a closed update gate (u == 0) freezes the state. The reset gate enters
the candidate through the gated state h_tilde = h[t-1] * r[t]:

    r = sigmoid(W_r h[t-1] + R_r x + b_r)
    z = tanh(W_z h_tilde + R_z x + b_z)
    u = sigmoid(W_u h[t-1] + R_u x + b_u)

All operations here are pure functions of their arguments; training-time
mutation lives in the trainer module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, EmptySequenceError

# Canonical parameter order, shared by gradients, optimizers and the model
# file layout.
PARAM_FIELDS = (
    "W_r", "R_r", "b_r",
    "W_z", "R_z", "b_z",
    "W_u", "R_u", "b_u",
    "W_out", "b_out",
)


def sigmoid(x):
    """Elementwise logistic function 1 / (1 + exp(-x)).

    Evaluated branch-wise so neither exp() overflows; safe for entries with
    magnitude well beyond 1e3.
    """
    arr = np.asarray(x, dtype=np.float64)
    out = np.empty(arr.shape)
    flat_in = arr.reshape(-1)
    flat_out = out.reshape(-1)
    pos = flat_in >= 0
    flat_out[pos] = 1.0 / (1.0 + np.exp(-flat_in[pos]))
    e = np.exp(flat_in[~pos])
    flat_out[~pos] = e / (1.0 + e)
    return out


@dataclass
class GruParams:
    """All cell weights plus the affine readout head.

    Shapes (H = hidden_dim, D = input_dim, O = output_dim):
    W_* (H, H), R_* (H, D), b_* (H,), W_out (O, H), b_out (O,).
    """

    W_r: np.ndarray
    R_r: np.ndarray
    b_r: np.ndarray
    W_z: np.ndarray
    R_z: np.ndarray
    b_z: np.ndarray
    W_u: np.ndarray
    R_u: np.ndarray
    b_u: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return self.W_r.shape[0]

    @property
    def input_dim(self) -> int:
        return self.R_r.shape[1]

    @property
    def output_dim(self) -> int:
        return self.W_out.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def validate(self) -> None:
        h, d, o = self.hidden_dim, self.input_dim, self.output_dim
        expected = {
            "W_r": (h, h), "W_z": (h, h), "W_u": (h, h),
            "R_r": (h, d), "R_z": (h, d), "R_u": (h, d),
            "b_r": (h,), "b_z": (h,), "b_u": (h,),
            "W_out": (o, h), "b_out": (o,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise DimensionMismatchError(
                    f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise DimensionMismatchError(f"{name} contains non-finite entries")

    def copy(self) -> "GruParams":
        return GruParams(**{k: v.copy() for k, v in self.arrays().items()})


def init_params(input_dim: int, hidden_dim: int, output_dim: int,
                rng: np.random.Generator) -> GruParams:
    """Seeded init: weights uniform in [-1/sqrt(H), 1/sqrt(H)], biases zero."""
    bound = 1.0 / math.sqrt(hidden_dim)

    def w(rows, cols):
        return rng.uniform(-bound, bound, size=(rows, cols))

    h, d, o = hidden_dim, input_dim, output_dim
    return GruParams(
        W_r=w(h, h), R_r=w(h, d), b_r=np.zeros(h),
        W_z=w(h, h), R_z=w(h, d), b_z=np.zeros(h),
        W_u=w(h, h), R_u=w(h, d), b_u=np.zeros(h),
        W_out=w(o, h), b_out=np.zeros(o),
    )


@dataclass
class StepTrace:
    """Every intermediate value of one recurrence step, retained for BPTT."""

    x: np.ndarray
    h_prev: np.ndarray
    r: np.ndarray
    h_tilde: np.ndarray
    z: np.ndarray
    u: np.ndarray
    h: np.ndarray


@dataclass
class ForwardTrace:
    steps: list[StepTrace] = field(default_factory=list)
    y_hat: np.ndarray = None

    @property
    def h_last(self) -> np.ndarray:
        return self.steps[-1].h


def _check_step_dims(p: GruParams, h_prev: np.ndarray, x: np.ndarray) -> None:
    if h_prev.shape != (p.hidden_dim,):
        raise DimensionMismatchError(
            f"hidden state has shape {h_prev.shape}, expected ({p.hidden_dim},)")
    if x.shape != (p.input_dim,):
        raise DimensionMismatchError(
            f"input has shape {x.shape}, expected ({p.input_dim},)")


def gru_step(p: GruParams, h_prev: np.ndarray, x: np.ndarray) -> StepTrace:
    """One recurrence step; returns the full trace for later backprop."""
    h_prev = np.asarray(h_prev, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_step_dims(p, h_prev, x)

    r = sigmoid(p.W_r @ h_prev + p.R_r @ x + p.b_r)
    h_tilde = h_prev * r
    z = np.tanh(p.W_z @ h_tilde + p.R_z @ x + p.b_z)
    u = sigmoid(p.W_u @ h_prev + p.R_u @ x + p.b_u)
    h = (1.0 - u) * h_prev + u * z
    return StepTrace(x=x, h_prev=h_prev, r=r, h_tilde=h_tilde, z=z, u=u, h=h)


def readout(p: GruParams, h: np.ndarray) -> np.ndarray:
    """Affine map from hidden state to the output vector (no activation)."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (p.hidden_dim,):
        raise DimensionMismatchError(
            f"hidden state has shape {h.shape}, expected ({p.hidden_dim},)")
    return p.W_out @ h + p.b_out


def forward(p: GruParams, h0: np.ndarray, xs) -> ForwardTrace:
    """Fold gru_step over an input sequence and read out the final state.

    xs is a sequence of input vectors (or a (T, input_dim) array). h0 is the
    initial hidden state. Deterministic: identical arguments produce
    bit-identical traces.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 1:
        xs = xs.reshape(1, -1)
    if xs.shape[0] == 0:
        raise EmptySequenceError("input sequence is empty")

    trace = ForwardTrace()
    h = np.asarray(h0, dtype=np.float64)
    for t in range(xs.shape[0]):
        step = gru_step(p, h, xs[t])
        trace.steps.append(step)
        h = step.h
    trace.y_hat = readout(p, h)
    return trace
