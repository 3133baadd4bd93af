"""The CV-QRNN cell and its recurrence.

Modes ``0 .. n1-1`` are the register, ``n1 .. n1+n2-1`` the input modes.
One step encodes the input as real displacements on the (vacuum) input
modes, applies the trainable layer, reads ``<x>`` on the input modes,
traces them out and re-attaches fresh vacuum.

Gates are built at ``cutoff + headroom`` levels and the state is projected
back to ``cutoff`` after each step, so the trace of the state drops by the
population pushed past the cutoff. With ``headroom=0`` every step is
exactly unitary on the truncated space.

Two evaluation paths exist: :func:`step` works on :class:`DensityState`
with embedded full-space operators, and :class:`QRNNEngine` contracts only
the blocks that matter and evaluates many parameter vectors and sequences
at once. They agree to rounding error.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import fock, gates
from .channels import LossSpec, heisenberg_loss, loss_channel, loss_kraus
from .gates import LayerParams, param_count


@dataclass(frozen=True)
class QRNNConfig:
    n1: int = 2
    n2: int = 1
    cutoff: int = 6
    window: int = 4
    forecast_len: int = 0
    encoding_scale: float = 1.0
    headroom: int = 2
    loss: Optional[LossSpec] = None
    clamp: float = gates.SQUEEZE_CLAMP

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1:
            raise ValueError("need at least one register mode and one input mode")
        if self.cutoff < 3:
            raise ValueError("cutoff must be at least 3")
        if self.window < 2:
            raise ValueError("window must be at least 2")
        if self.headroom < 0:
            raise ValueError("headroom must be non-negative")

    @property
    def n_modes(self) -> int:
        return self.n1 + self.n2

    @property
    def input_modes(self) -> tuple[int, ...]:
        return tuple(range(self.n1, self.n_modes))

    @property
    def build_cutoff(self) -> int:
        return self.cutoff + self.headroom

    @property
    def n_params(self) -> int:
        return param_count(self.n_modes)


@dataclass
class StepOutput:
    measured: np.ndarray
    rescaled: np.ndarray
    post_state: fock.DensityState
    trace_after: float


def initial_state(config: QRNNConfig) -> fock.DensityState:
    return fock.vacuum_state(config.n_modes, config.cutoff)


def encode(state: fock.DensityState, x, config: QRNNConfig) -> fock.DensityState:
    """Displace input mode ``k`` by the real amplitude ``encoding_scale * x[k]``."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (config.n2,):
        raise ValueError(f"input vector must have length {config.n2}, got {x.shape}")
    u = np.eye(state.dim, dtype=complex)
    for k, mode in enumerate(config.input_modes):
        d = gates.displacement_gate(config.encoding_scale * x[k], state.cutoff)
        u = fock.embed(d, (mode,), state.n_modes, state.cutoff) @ u
    return fock.apply_unitary(state, u)


def _measure_and_reset(state: fock.DensityState, params: LayerParams, config: QRNNConfig) -> StepOutput:
    if config.loss is not None:
        state = loss_channel(state, config.loss)
    xq = fock.quadrature_x(config.cutoff)
    measured = np.array(
        [fock.expectation(state, fock.embed(xq, (m,), state.n_modes, config.cutoff)) for m in config.input_modes]
    )
    trace = state.trace
    register = fock.partial_trace(state, config.input_modes)
    post = fock.tensor_with_vacuum(register, config.n2, config.input_modes)
    return StepOutput(measured, params.gamma * measured, post, trace)


def step(state: fock.DensityState, x, params: LayerParams, config: QRNNConfig) -> StepOutput:
    """One layer application: encode, evolve, measure the means, reset the input modes."""
    if state.n_modes != config.n_modes or state.cutoff != config.cutoff:
        raise ValueError("state does not match the configuration")
    big = fock.change_cutoff(state, config.build_cutoff)
    big = encode(big, x, config)
    big = fock.apply_unitary(big, gates.layer_trainable_unitary(params, config.build_cutoff))
    return _measure_and_reset(fock.change_cutoff(big, config.cutoff), params, config)


def _as_inputs(inputs, n2):
    arr = np.asarray(inputs, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if n2 == 1 else arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != n2 or arr.shape[0] == 0:
        raise ValueError(f"inputs must be a nonempty sequence of length-{n2} vectors")
    return arr


class QRNNEngine:
    """Batched forward passes over many parameter vectors and sequences.

    The layer is stored as the block ``K[p, r, q, s]`` of the projected
    layer unitary mapping (register level ``s`` < D, input level ``p`` <
    D + headroom) to (register ``r``, input ``q``), both < D. Layer blocks
    are built gate by gate and the intermediate products are cached per
    parameter prefix, so perturbing one parameter only recomputes the gates
    after it. Parameter rows that differ only in gamma share one
    simulation when there is no output feedback.
    """

    def __init__(self, config: QRNNConfig, cache_size: int = 8):
        self.config = config
        c = config
        d, dc = c.cutoff, c.build_cutoff
        self.reg_dim = d**c.n1
        self.in_dim = d**c.n2
        self.in_build_dim = dc**c.n2
        self.n_params = c.n_params
        self._cache_size = cache_size
        self._stages = [OrderedDict() for _ in range(4)]

        # columns: register digits < d, input digits < dc, in the dc^n space
        shape = (d,) * c.n1 + (dc,) * c.n2
        digits = np.indices(shape).reshape(c.n_modes, -1)
        rows = np.ravel_multi_index(tuple(digits), (dc,) * c.n_modes)
        self._start = np.zeros((dc**c.n_modes, rows.size), dtype=complex)
        self._start[rows, np.arange(rows.size)] = 1.0
        self._row_sel = (slice(0, d),) * c.n_modes

        k = gates.InterferometerSpec.n_params(c.n_modes)
        n = c.n_modes
        # prefix lengths of the parameter vector covered by each stage
        self._bounds = (k, k + n, 2 * k + n, 2 * k + 3 * n)

        xq = fock.quadrature_x(d)
        if c.loss is not None and c.loss.beta > 0:
            lossy = set(c.loss.modes(n))
            xq_in = [heisenberg_loss(xq, c.loss.beta) if m in lossy else xq for m in c.input_modes]
            self._reg_kraus = [
                (m, loss_kraus(float(c.loss.beta), d)) for m in range(c.n1) if m in lossy
            ]
        else:
            xq_in = [xq] * c.n2
            self._reg_kraus = []
        # readout relies on x being real, symmetric and nonzero only next to the diagonal
        for o in xq_in:
            if np.abs(o - np.diag(np.diag(o, 1), 1) - np.diag(np.diag(o, -1), -1)).max() > 1e-14:
                raise ValueError("input-mode observable is not tridiagonal with zero diagonal")
        self._offdiag = [np.diag(o, 1).real.copy() for o in xq_in]

    # -- layer construction -------------------------------------------------

    def _stage(self, idx, vec, compute):
        key = vec[: self._bounds[idx]].tobytes()
        cache = self._stages[idx]
        if key in cache:
            cache.move_to_end(key)
            return cache[key]
        value = compute()
        cache[key] = value
        if len(cache) > self._cache_size:
            cache.popitem(last=False)
        return value

    def layer_block(self, vec) -> np.ndarray:
        """Block with axes (input_build p, register r, input q, register s) for one parameter vector."""
        c = self.config
        vec = np.ascontiguousarray(vec, dtype=float)
        p = LayerParams.from_vector(c.n_modes, vec, c.clamp)
        dc = c.build_cutoff
        s1 = self._stage(0, vec, lambda: gates.apply_interferometer(p.interferometer_1, self._start, dc))
        s2 = self._stage(1, vec, lambda: gates.apply_squeezing(p.squeeze, s1, dc, p.clamp))
        s3 = self._stage(2, vec, lambda: gates.apply_interferometer(p.interferometer_2, s2, dc))

        def final():
            full = gates.apply_displacement(p.displace, s3, dc)
            full = full.reshape((dc,) * c.n_modes + (-1,))[self._row_sel]
            full = full.reshape(self.reg_dim, self.in_dim, self.reg_dim, self.in_build_dim)
            return np.ascontiguousarray(full.transpose(3, 0, 1, 2))

        return self._stage(3, vec, final)

    def encode_vectors(self, x) -> np.ndarray:
        """Displaced-vacuum input states, shape (batch, in_build) for inputs (batch, n2)."""
        c = self.config
        dc = c.build_cutoff
        x = np.asarray(x, dtype=float)
        out = np.empty((x.shape[0], self.in_build_dim), dtype=complex)
        for b, row in enumerate(x):
            psi = np.ones(1, dtype=complex)
            for val in row:
                psi = np.kron(psi, gates.displacement_gate(c.encoding_scale * float(val), dc)[:, 0])
            out[b] = psi
        return out

    # -- recurrence ---------------------------------------------------------

    def _apply_register_loss(self, rho):
        c = self.config
        d = c.cutoff
        lead = rho.shape[:-2]
        for m, kraus in self._reg_kraus:
            pre, post = d**m, d ** (c.n1 - m - 1)
            t = rho.reshape((-1, pre, d, post, pre, d, post))
            out = np.zeros_like(t)
            for e in kraus:
                out += np.einsum("ij,xajbckd,lk->xaibcld", e, t, e.conj(), optimize=True)
            rho = out.reshape(lead + (self.reg_dim, self.reg_dim))
        return rho

    def _readout(self, w, vc):
        """<x> on each input mode from w = V rho and conj(V), both (P, B, R, Q, R)."""
        c = self.config
        d = c.cutoff
        P, B, R = w.shape[:3]
        out = np.empty((P, B, c.n2))
        for j in range(c.n2):
            shape = (P, B, R, d**j, d, d ** (c.n2 - j - 1), R)
            wj, vj = w.reshape(shape), vc.reshape(shape)
            # M[m+1, m] summed over every other index
            sub = np.einsum("kbradec,kbradec->kbd", wj[:, :, :, :, 1:], vj[:, :, :, :, :-1])
            out[:, :, j] = 2.0 * (sub * self._offdiag[j]).real.sum(axis=-1)
        return out

    def _step(self, blocks, rho, x):
        """Advance register states ``rho`` (P, B, R, R) by one input ``x`` (B, n2)."""
        R, Q = self.reg_dim, self.in_dim
        P, B = rho.shape[:2]
        psi = self.encode_vectors(x)
        v = np.matmul(psi, blocks.reshape(P, self.in_build_dim, -1)).reshape(P, B, R * Q, R)
        w = v @ rho
        vc = v.conj()
        reg = w.reshape(P, B, R, Q * R) @ vc.reshape(P, B, R, Q * R).swapaxes(-1, -2)
        measured = self._readout(w.reshape(P, B, R, Q, R), vc.reshape(P, B, R, Q, R))
        trace = np.einsum("kbrr->kb", reg).real
        if self._reg_kraus:
            reg = self._apply_register_loss(reg)
        return reg, measured, trace

    def run(self, param_matrix, inputs, horizon: int = 0):
        """Process sequences and optionally forecast with output feedback.

        ``param_matrix`` is (P, n_params) and ``inputs`` is (B, T, n2).
        Returns rescaled outputs (P, B, T + horizon, n2) and traces
        (P, B, T + horizon), one entry per step.
        """
        c = self.config
        params = np.atleast_2d(np.asarray(param_matrix, dtype=float))
        inputs = np.asarray(inputs, dtype=float)
        if inputs.ndim != 3 or inputs.shape[2] != c.n2 or inputs.shape[1] == 0:
            raise ValueError(f"inputs must have shape (batch, steps, {c.n2})")
        P, (B, T, _) = params.shape[0], inputs.shape
        gamma = params[:, -1][:, None, None]
        if horizon == 0:
            keys = [row[:-1].tobytes() for row in params]
            uniq = {k: i for i, k in reversed(list(enumerate(keys)))}
            order = sorted(set(uniq.values()))
            if len(order) < P:
                slot = {i: j for j, i in enumerate(order)}
                sub = params[order].copy()
                sub[:, -1] = 1.0
                outs, traces = self.run(sub, inputs)
                idx = [slot[uniq[k]] for k in keys]
                return outs[idx] * gamma[:, :, :, None], traces[idx]
        blocks = np.stack([self.layer_block(vec) for vec in params])
        rho = np.zeros((P, B, self.reg_dim, self.reg_dim), dtype=complex)
        rho[..., 0, 0] = 1.0
        outs = np.empty((P, B, T + horizon, c.n2))
        traces = np.empty((P, B, T + horizon))
        for t in range(T):
            x = np.broadcast_to(inputs[:, t], (P, B, c.n2))
            rho, measured, traces[:, :, t] = self._step_many(blocks, rho, x)
            outs[:, :, t] = gamma * measured
        for t in range(T, T + horizon):
            rho, measured, traces[:, :, t] = self._step_many(blocks, rho, outs[:, :, t - 1])
            outs[:, :, t] = gamma * measured
        return outs, traces

    def _step_many(self, blocks, rho, x):
        # inputs shared across parameter vectors use one encoding batch
        if np.all(x == x[:1]):
            return self._step(blocks, rho, x[0])
        regs, ms, trs = [], [], []
        for k in range(blocks.shape[0]):
            r, m, tr = self._step(blocks[k : k + 1], rho[k : k + 1], x[k])
            regs.append(r)
            ms.append(m)
            trs.append(tr)
        return np.concatenate(regs), np.concatenate(ms), np.concatenate(trs)


_ENGINES: dict = {}


def engine_for(config: QRNNConfig) -> QRNNEngine:
    if config not in _ENGINES:
        _ENGINES[config] = QRNNEngine(config)
    return _ENGINES[config]


def run_sequence(inputs, params: LayerParams, config: QRNNConfig):
    """Iterate the layer over ``inputs`` from the all-vacuum state.

    Returns the per-step rescaled outputs (T, n2) and traces (T,); the last
    output is the first prediction.
    """
    x = _as_inputs(inputs, config.n2)
    outs, traces = engine_for(config).run(params.to_vector()[None], x[None])
    return outs[0, 0], traces[0, 0]


def forecast(inputs, params: LayerParams, config: QRNNConfig, horizon: int):
    """Outputs of ``horizon`` steps that each take the previous output as input.

    The register state carries over from the input phase. Returns
    (horizon, n2); row 0 follows the first prediction.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    x = _as_inputs(inputs, config.n2)
    outs, _ = engine_for(config).run(params.to_vector()[None], x[None], horizon=horizon)
    return outs[0, 0, x.shape[0]:]


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z)))


def classify(pixel_sequence, params: LayerParams, config: QRNNConfig) -> float:
    """sigmoid of the first input mode's output after the whole sequence."""
    seq = np.asarray(pixel_sequence, dtype=float).ravel()
    if seq.size != 49:
        raise ValueError(f"expected 49 pixels, got {seq.size}")
    outs, _ = run_sequence(np.repeat(seq[:, None], config.n2, axis=1), params, config)
    return float(sigmoid(outs[-1, 0]))


def quadrature_bound(cutoff: int) -> float:
    """Largest |<x>| any state can reach at this cutoff."""
    return float(np.abs(np.linalg.eigvalsh(fock.quadrature_x(cutoff))).max())


class QRNNModel:
    """Adapter exposing the network to the training loop.

    ``head`` is ``"linear"`` (regression on the first input mode's output)
    or ``"sigmoid"`` (classification).
    """

    uses_trace_penalty = True
    kind = "qrnn"

    def __init__(self, config: QRNNConfig, head: str = "linear"):
        if head not in ("linear", "sigmoid"):
            raise ValueError(f"unknown head {head!r}")
        self.config = config
        self.head = head
        self.engine = QRNNEngine(config)
        self.n_params = config.n_params
        self._sq = LayerParams.squeeze_slice(config.n_modes)

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return LayerParams.random(self.config.n_modes, rng).to_vector()

    def clamp_params(self, vec):
        vec = np.array(vec, dtype=float)
        vec[self._sq] = np.clip(vec[self._sq], -self.config.clamp, self.config.clamp)
        return vec

    def _inputs(self, inputs):
        x = np.asarray(inputs, dtype=float)
        if x.ndim == 2:
            x = x[:, :, None]
        if x.shape[2] == 1 and self.config.n2 > 1:
            x = np.repeat(x, self.config.n2, axis=2)
        return x

    def evaluate(self, param_matrix, inputs):
        """Predictions (P, B) and final-step traces (P, B)."""
        outs, traces = self.engine.run(param_matrix, self._inputs(inputs))
        y = outs[:, :, -1, 0]
        if self.head == "sigmoid":
            y = sigmoid(y)
        return y, traces[:, :, -1]

    def forecast(self, params, inputs, horizon):
        """Feedback continuation (B, horizon) after each input window."""
        outs, _ = self.engine.run(params[None], self._inputs(inputs), horizon=horizon)
        return outs[0, :, -horizon:, 0] if horizon else np.empty((outs.shape[1], 0))
