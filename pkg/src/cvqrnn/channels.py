"""Photon-loss channel on qumodes and additive uniform noise on data."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from . import fock


@dataclass(frozen=True)
class LossSpec:
    """Pure loss with transmissivity ``1 - beta``.

    ``applied_modes=None`` means every mode. The channel always acts after
    the layer unitary and before the measurement.
    """

    beta: float
    applied_modes: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"loss parameter beta must lie in [0, 1], got {self.beta}")
        if self.applied_modes is not None:
            object.__setattr__(self, "applied_modes", tuple(int(m) for m in self.applied_modes))

    def modes(self, n_modes: int) -> tuple[int, ...]:
        if self.applied_modes is None:
            return tuple(range(n_modes))
        return fock.check_modes(self.applied_modes, n_modes)


@dataclass(frozen=True)
class DataNoiseSpec:
    epsilon: float
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")


@lru_cache(maxsize=256)
def loss_kraus(beta: float, cutoff: int) -> tuple[np.ndarray, ...]:
    """Kraus operators sqrt(beta^k / k!) (1-beta)^(n/2) a^k for k = 0..D-1."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"loss parameter beta must lie in [0, 1], got {beta}")
    a = fock.annihilation(cutoff)
    atten = np.diag((1.0 - beta) ** (np.arange(cutoff) / 2.0)).astype(complex)
    ops = []
    ak = np.eye(cutoff, dtype=complex)
    for k in range(cutoff):
        ops.append(math.sqrt(beta**k / math.factorial(k)) * atten @ ak)
        ak = ak @ a
    for op in ops:
        op.flags.writeable = False
    return tuple(ops)


def apply_single_mode_channel(rho, kraus: Sequence[np.ndarray], mode: int, n_modes: int, cutoff: int):
    """sum_k E_k rho E_k^dagger with each E_k acting on ``mode``."""
    out = np.zeros_like(rho)
    for e in kraus:
        if not np.any(e):
            continue
        left = fock.apply_to_rows(e, rho, (mode,), n_modes, cutoff)
        # E rho E^dagger = (E (E rho)^dagger)^dagger
        out +=fock.apply_to_rows(e, left.conj().T, (mode,), n_modes, cutoff).conj().T
    return out


def loss_channel(state: fock.DensityState, spec: LossSpec) -> fock.DensityState:
    """Apply the loss channel independently to each selected mode."""
    if spec.beta == 0.0:
        return state
    kraus = loss_kraus(float(spec.beta), state.cutoff)
    rho = state.rho
    for m in spec.modes(state.n_modes):
        rho = apply_single_mode_channel(rho, kraus, m, state.n_modes, state.cutoff)
    rho = 0.5 * (rho + rho.conj().T)
    return fock.DensityState(state.n_modes, state.cutoff, rho)


def heisenberg_loss(observable, beta: float) -> np.ndarray:
    """Adjoint channel sum_k E_k^dagger O E_k on a single-mode observable."""
    observable = np.asarray(observable)
    if beta == 0.0:
        return observable
    return sum(e.conj().T @ observable @ e for e in loss_kraus(float(beta), observable.shape[0]))


def add_data_noise(values, spec: DataNoiseSpec) -> np.ndarray:
    """Add independent Uniform(-eps, eps) draws from a generator seeded by ``spec.seed``."""
    values = np.asarray(values, dtype=float)
    if spec.epsilon == 0:
        return values.copy()
    rng = np.random.default_rng(spec.seed)
    return values + rng.uniform(-spec.epsilon, spec.epsilon, size=values.shape)
