"""Classical references: a small LSTM and the repeat-last predictor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qrnn import sigmoid

GATES = ("f", "i", "o", "c")


def lstm_param_count(hidden: int, input_dim: int = 1, output_dim: int = 1) -> int:
    return 4 * hidden * (hidden + input_dim + 1) + output_dim * (hidden + 1)


def match_hidden_size(quantum_param_count: int, input_dim: int = 1, output_dim: int = 1) -> int:
    """Smallest hidden size whose LSTM has at least as many parameters."""
    if quantum_param_count < 1:
        raise ValueError("parameter count must be at least 1")
    d = 1
    while lstm_param_count(d, input_dim, output_dim) < quantum_param_count:
        d += 1
    return d


@dataclass
class LSTMParams:
    """Gate weights act on the concatenation [h; x]; gates ordered f, i, o, c."""

    weights: np.ndarray  # (4, d, d + input_dim)
    biases: np.ndarray  # (4, d)
    w_out: np.ndarray  # (output_dim, d)
    b_out: np.ndarray  # (output_dim,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.biases = np.asarray(self.biases, dtype=float)
        self.w_out = np.asarray(self.w_out, dtype=float)
        self.b_out = np.asarray(self.b_out, dtype=float)
        d = self.hidden
        if self.weights.ndim != 3 or self.weights.shape[:2] != (4, d) or self.weights.shape[2] <= d:
            raise ValueError("gate weights must have shape (4, d, d + input_dim)")
        if self.biases.shape != (4, d):
            raise ValueError("gate biases must have shape (4, d)")
        if self.w_out.ndim != 2 or self.w_out.shape[1] != d or self.b_out.shape != (self.w_out.shape[0],):
            raise ValueError("output layer shapes are inconsistent")

    @property
    def hidden(self) -> int:
        return self.biases.shape[1]

    @property
    def input_dim(self) -> int:
        return self.weights.shape[2] - self.hidden

    @property
    def output_dim(self) -> int:
        return self.w_out.shape[0]

    @property
    def n_params(self) -> int:
        return lstm_param_count(self.hidden, self.input_dim, self.output_dim)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.biases.ravel(), self.w_out.ravel(), self.b_out])

    @classmethod
    def from_vector(cls, vec, hidden: int, input_dim: int = 1, output_dim: int = 1):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (lstm_param_count(hidden, input_dim, output_dim),):
            raise ValueError("LSTM parameter vector has the wrong length")
        d, k = hidden, hidden + input_dim
        sizes = [4 * d * k, 4 * d, output_dim * d, output_dim]
        w, b, wy, by = np.split(vec, np.cumsum(sizes)[:-1])
        return cls(w.reshape(4, d, k), b.reshape(4, d), wy.reshape(output_dim, d), by)

    @classmethod
    def zeros(cls, hidden, input_dim=1, output_dim=1):
        return cls.from_vector(np.zeros(lstm_param_count(hidden, input_dim, output_dim)), hidden, input_dim, output_dim)


@dataclass
class LSTMState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden):
        return cls(np.zeros(hidden), np.zeros(hidden))


def lstm_step(state: LSTMState, x, params: LSTMParams) -> LSTMState:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (params.input_dim,) or state.h.shape != (params.hidden,) or state.c.shape != (params.hidden,):
        raise ValueError("state or input shape does not match the LSTM parameters")
    z = params.weights @ np.concatenate([state.h, x]) + params.biases
    f, i, o = sigmoid(z[0]), sigmoid(z[1]), sigmoid(z[2])
    c = f * state.c + i * np.tanh(z[3])
    return LSTMState(o * np.tanh(c), c)


def lstm_forward(inputs, params: LSTMParams, horizon: int = 0, head: str = "linear") -> np.ndarray:
    """Outputs (1 + horizon, output_dim): the prediction after the last input, then feedback steps."""
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise ValueError("inputs must be nonempty")
    if horizon and params.output_dim != params.input_dim:
        raise ValueError("feedback forecasting needs output_dim == input_dim")
    state = LSTMState.zeros(params.hidden)
    for row in x:
        state = lstm_step(state, row, params)
    outs = []
    for t in range(horizon + 1):
        y = params.w_out @ state.h + params.b_out
        if head == "sigmoid":
            y = sigmoid(y)
        outs.append(y)
        if t < horizon:
            state = lstm_step(state, y, params)
    return np.array(outs)


class LSTMModel:
    """Training-loop adapter evaluating many parameter vectors at once."""

    uses_trace_penalty = False
    kind = "lstm"

    def __init__(self, hidden: int, input_dim: int = 1, output_dim: int = 1, head: str = "linear"):
        if head not in ("linear", "sigmoid"):
            raise ValueError(f"unknown head {head!r}")
        self.hidden, self.input_dim, self.output_dim, self.head = hidden, input_dim, output_dim, head
        self.n_params = lstm_param_count(hidden, input_dim, output_dim)

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        scale = 1.0 / np.sqrt(self.hidden + self.input_dim)
        return rng.uniform(-0.5, 0.5, self.n_params) * scale

    def clamp_params(self, vec):
        return np.asarray(vec, dtype=float)

    def _unpack(self, param_matrix):
        pm = np.atleast_2d(np.asarray(param_matrix, dtype=float))
        d, k, o = self.hidden, self.hidden + self.input_dim, self.output_dim
        sizes = np.cumsum([4 * d * k, 4 * d, o * d])
        w, b, wy, by = np.split(pm, sizes, axis=1)
        P = pm.shape[0]
        return w.reshape(P, 4, d, k), b.reshape(P, 4, d), wy.reshape(P, o, d), by

    def _run(self, param_matrix, inputs, horizon):
        w, b, wy, by = self._unpack(param_matrix)
        x = np.asarray(inputs, dtype=float)
        if x.ndim == 2:
            x = x[:, :, None]
        P, B = w.shape[0], x.shape[0]
        h = np.zeros((P, B, self.hidden))
        c = np.zeros((P, B, self.hidden))

        def step(h, c, xt):
            hx = np.concatenate([h, xt], axis=-1)
            z = np.einsum("pgij,pbj->pbgi", w, hx) + b[:, None]
            c = sigmoid(z[:, :, 0]) * c + sigmoid(z[:, :, 1]) * np.tanh(z[:, :, 3])
            return sigmoid(z[:, :, 2]) * np.tanh(c), c

        for t in range(x.shape[1]):
            h, c = step(h, c, np.broadcast_to(x[:, t], (P, B, self.input_dim)))
        outs = []
        for t in range(horizon + 1):
            y = np.einsum("poi,pbi->pbo", wy, h) + by[:, None]
            if self.head == "sigmoid":
                y = sigmoid(y)
            outs.append(y)
            if t < horizon:
                h, c = step(h, c, y)
        return np.stack(outs, axis=2)  # (P, B, 1 + horizon, output_dim)

    def evaluate(self, param_matrix, inputs):
        return self._run(param_matrix, inputs, 0)[:, :, 0, 0], None

    def forecast(self, params, inputs, horizon):
        return self._run(np.asarray(params)[None], inputs, horizon)[0, :, 1:, 0]


class RepeatLastModel:
    """Predicts the last value of each window; nothing to train."""

    uses_trace_penalty = False
    kind = "repeat-last"
    n_params = 0

    def init_params(self, rng):
        return np.zeros(0)

    def clamp_params(self, vec):
        return np.asarray(vec, dtype=float)

    def evaluate(self, param_matrix, inputs):
        x = np.asarray(inputs, dtype=float)
        last = x[:, -1] if x.ndim == 2 else x[:, -1, 0]
        P = np.atleast_2d(param_matrix).shape[0]
        return np.tile(last, (P, 1)), None

    def forecast(self, params, inputs, horizon):
        x = np.asarray(inputs, dtype=float)
        last = x[:, -1] if x.ndim == 2 else x[:, -1, 0]
        return np.repeat(last[:, None], horizon, axis=1)
