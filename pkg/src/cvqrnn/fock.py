"""Truncated Fock-space linear algebra.

Every mode is truncated to ``cutoff`` levels |0>, ..., |D-1>. Multi-mode
operators use the Kronecker ordering in which mode 0 is the leftmost
factor (the top wire of the circuit). Matrices are plain ``complex128``
numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NumericalInconsistency

HERMITIAN_TOL = 1e-10


def _check_cutoff(cutoff, minimum):
    if int(cutoff) != cutoff or cutoff < minimum:
        raise ValueError(f"cutoff must be an integer >= {minimum}, got {cutoff}")


def check_modes(indices: Sequence[int], n_modes: int) -> tuple[int, ...]:
    """Validate a mode selection: strictly increasing, all in ``[0, n_modes)``."""
    idx = tuple(int(i) for i in indices)
    if any(i < 0 or i >= n_modes for i in idx):
        raise ValueError(f"mode indices {idx} out of range for {n_modes} modes")
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise ValueError(f"mode indices {idx} must be strictly increasing")
    return idx


def annihilation(cutoff: int) -> np.ndarray:
    _check_cutoff(cutoff, 2)
    return np.diag(np.sqrt(np.arange(1, cutoff, dtype=float)), k=1).astype(complex)


def creation(cutoff: int) -> np.ndarray:
    return annihilation(cutoff).conj().T


def number_operator(cutoff: int) -> np.ndarray:
    _check_cutoff(cutoff, 1)
    return np.diag(np.arange(cutoff, dtype=float)).astype(complex)


def quadrature_x(cutoff: int) -> np.ndarray:
    """Position quadrature ``(a + a^dagger) / sqrt(2)``."""
    a = annihilation(cutoff)
    return (a + a.conj().T) / math.sqrt(2)


def _norm1(m):
    return np.abs(m).sum(axis=0).max()


def matrix_exponential(m, tolerance: float = 1e-16) -> np.ndarray:
    """exp(m) by scaling and squaring around a truncated Taylor series.

    The matrix is scaled by 2**-s until its 1-norm is at most 1/2, the
    series is summed until the next term is below ``tolerance`` relative to
    the partial sum, and the result is squared ``s`` times.
    """
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"matrix_exponential needs a square matrix, got shape {m.shape}")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix_exponential got non-finite entries")
    m = m.astype(complex)
    n = m.shape[0]
    norm = _norm1(m)
    s = 0 if norm <= 0.5 else int(math.ceil(math.log2(norm / 0.5)))
    a = m / (2.0**s)

    result = np.eye(n, dtype=complex)
    term = np.eye(n, dtype=complex)
    for k in range(1, 60):
        term = term @ a / k
        result += term
        if _norm1(term) <= tolerance * _norm1(result):
            break
    for _ in range(s):
        result = result @ result
    return result


def embed(op, target_modes: Sequence[int], n_modes: int, cutoff: int) -> np.ndarray:
    """Operator acting as ``op`` on ``target_modes`` and as identity elsewhere."""
    targets = check_modes(target_modes, n_modes)
    k = len(targets)
    op = np.asarray(op, dtype=complex)
    dim_k = cutoff**k
    if op.shape != (dim_k, dim_k):
        raise ValueError(f"operator shape {op.shape} does not match {k} modes at cutoff {cutoff}")
    rest = [m for m in range(n_modes) if m not in targets]
    full = np.kron(op, np.eye(cutoff ** len(rest), dtype=complex))
    order = list(targets) + rest
    inv = np.argsort(order)
    perm = list(inv) + [n_modes + i for i in inv]
    full = full.reshape((cutoff,) * (2 * n_modes)).transpose(perm)
    return full.reshape(cutoff**n_modes, cutoff**n_modes)


def apply_to_rows(op, mat, target_modes: Sequence[int], n_modes: int, cutoff: int) -> np.ndarray:
    """Compute ``embed(op, targets) @ mat`` by contracting on the mode axes.

    ``mat`` has ``cutoff**n_modes`` rows and any number of columns.
    """
    targets = tuple(target_modes)
    k = len(targets)
    mat = np.asarray(mat)
    cols = mat.shape[1]
    t = mat.reshape((cutoff,) * n_modes + (cols,))
    op_t = np.asarray(op).reshape((cutoff,) * (2 * k))
    out = np.tensordot(op_t, t, axes=(list(range(k, 2 * k)), list(targets)))
    out = np.moveaxis(out, list(range(k)), list(targets))
    return out.reshape(cutoff**n_modes, cols)


@dataclass(frozen=True)
class DensityState:
    """Density matrix of ``n_modes`` qumodes truncated at ``cutoff`` levels each."""

    n_modes: int
    cutoff: int
    rho: np.ndarray

    def __post_init__(self):
        dim = self.cutoff**self.n_modes
        if self.rho.shape != (dim, dim):
            raise ValueError(
                f"rho shape {self.rho.shape} does not match {self.n_modes} modes at cutoff {self.cutoff}"
            )
        if np.abs(self.rho - self.rho.conj().T).max() > HERMITIAN_TOL:
            raise NumericalInconsistency("density matrix is not Hermitian")

    @property
    def dim(self) -> int:
        return self.cutoff**self.n_modes

    @property
    def trace(self) -> float:
        return float(np.trace(self.rho).real)


def vacuum_state(n_modes: int, cutoff: int) -> DensityState:
    rho = np.zeros((cutoff**n_modes,) * 2, dtype=complex)
    rho[0, 0] = 1.0
    return DensityState(n_modes, cutoff, rho)


def fock_state(levels: Sequence[int], cutoff: int) -> DensityState:
    """Pure product Fock state |n_0, n_1, ...>."""
    idx = int(np.ravel_multi_index(tuple(levels), (cutoff,) * len(levels)))
    rho = np.zeros((cutoff ** len(levels),) * 2, dtype=complex)
    rho[idx, idx] = 1.0
    return DensityState(len(levels), cutoff, rho)


def pure_state(psi, n_modes: int, cutoff: int) -> DensityState:
    psi = np.asarray(psi, dtype=complex).ravel()
    return DensityState(n_modes, cutoff, np.outer(psi, psi.conj()))


def product_state(*states: DensityState) -> DensityState:
    cutoff = states[0].cutoff
    if any(s.cutoff != cutoff for s in states):
        raise ValueError("product_state needs a common cutoff")
    rho = states[0].rho
    for s in states[1:]:
        rho = np.kron(rho, s.rho)
    return DensityState(sum(s.n_modes for s in states), cutoff, rho)


def apply_unitary(state: DensityState, u) -> DensityState:
    """rho -> U rho U^dagger."""
    u = np.asarray(u)
    if u.shape != state.rho.shape:
        raise ValueError(f"operator shape {u.shape} does not match state dimension {state.dim}")
    return DensityState(state.n_modes, state.cutoff, u @ state.rho @ u.conj().T)


def _mode_letters(n):
    return [chr(ord("a") + i) for i in range(n)], [chr(ord("A") + i) for i in range(n)]


def partial_trace(state: DensityState, traced: Sequence[int]) -> DensityState:
    """Trace out ``traced`` modes; the remaining modes keep their order."""
    n, d = state.n_modes, state.cutoff
    traced = check_modes(traced, n)
    if len(traced) >= n:
        raise ValueError("cannot trace out every mode; use DensityState.trace")
    if not traced:
        return state
    row, col = _mode_letters(n)
    col = [row[i] if i in traced else col[i] for i in range(n)]
    keep = [i for i in range(n) if i not in traced]
    out = "".join(row[i] for i in keep) + "".join(col[i] for i in keep)
    t = state.rho.reshape((d,) * (2 * n))
    reduced = np.einsum("".join(row) + "".join(col) + "->" + out, t)
    m = len(keep)
    return DensityState(m, d, reduced.reshape(d**m, d**m))


def tensor_with_vacuum(state: DensityState, new_modes: int, positions: Sequence[int]) -> DensityState:
    """Append ``new_modes`` vacuum modes placed at ``positions`` of the output ordering."""
    n, d = state.n_modes, state.cutoff
    n_out = n + new_modes
    positions = check_modes(positions, n_out)
    if len(positions) != new_modes:
        raise ValueError(f"need {new_modes} positions, got {len(positions)}")
    vac = np.zeros((d**new_modes,) * 2, dtype=complex)
    vac[0, 0] = 1.0
    big = np.kron(state.rho, vac).reshape((d,) * (2 * n_out))
    old_slots = [p for p in range(n_out) if p not in positions]
    # axis i of ``big`` belongs to output slot order[i]
    order = old_slots + list(positions)
    inv = list(np.argsort(order))
    big = big.transpose(inv + [n_out + i for i in inv])
    return DensityState(n_out, d, big.reshape(d**n_out, d**n_out))


def change_cutoff(state: DensityState, cutoff: int) -> DensityState:
    """Zero-pad (larger cutoff) or project (smaller cutoff) every mode.

    Projection discards population above the new cutoff, so the trace can
    drop; that loss is the truncation leakage.
    """
    n, d = state.n_modes, state.cutoff
    t = state.rho.reshape((d,) * (2 * n))
    if cutoff >= d:
        out = np.zeros((cutoff,) * (2 * n), dtype=complex)
        out[(slice(0, d),) * (2 * n)] = t
    else:
        out = t[(slice(0, cutoff),) * (2 * n)]
    return DensityState(n, cutoff, np.ascontiguousarray(out).reshape(cutoff**n, cutoff**n))


def expectation(state: DensityState, observable) -> float:
    """Re Tr(rho O) for a Hermitian observable on the full space."""
    o = np.asarray(observable)
    if o.shape != state.rho.shape:
        raise ValueError(f"observable shape {o.shape} does not match state dimension {state.dim}")
    if np.abs(o - o.conj().T).max() > HERMITIAN_TOL:
        raise ValueError("observable is not Hermitian")
    value = np.einsum("ij,ji->", state.rho, o)
    if abs(value.imag) > 1e-9:
        raise NumericalInconsistency(f"expectation has imaginary residue {value.imag:.3e}")
    return float(value.real)
