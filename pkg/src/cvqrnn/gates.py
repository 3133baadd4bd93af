"""CV gate set, Clements interferometers and the trainable layer unitary.

Gates are exponentials of truncated generators, so each one is exactly
unitary at the cutoff it is built for. Matrices are memoized per
(parameter value, cutoff) and returned read-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import fock

SQUEEZE_CLAMP = 1.4


def _frozen(m):
    m.flags.writeable = False
    return m


@lru_cache(maxsize=4096)
def _displacement(alpha: complex, cutoff: int):
    a = fock.annihilation(cutoff)
    gen = alpha * a.conj().T - np.conj(alpha) * a
    return _frozen(fock.matrix_exponential(gen))


def displacement_gate(alpha, cutoff: int) -> np.ndarray:
    """D(alpha) = exp(alpha a^dagger - alpha^* a)."""
    alpha = complex(alpha)
    if not (math.isfinite(alpha.real) and math.isfinite(alpha.imag)):
        raise ValueError(f"displacement must be finite, got {alpha}")
    if alpha == 0:
        return _identity(cutoff)
    return _displacement(alpha, int(cutoff))


@lru_cache(maxsize=4096)
def _squeezing(r: float, cutoff: int):
    a = fock.annihilation(cutoff)
    ad = a.conj().T
    return _frozen(fock.matrix_exponential(0.5 * r * (a @ a - ad @ ad)))


def squeezing_gate(r: float, cutoff: int, clamp: float = SQUEEZE_CLAMP) -> np.ndarray:
    """S(r) = exp((r/2)(a^2 - a^dagger^2)) for real r with |r| <= clamp."""
    r = float(r)
    if not math.isfinite(r) or abs(r) > clamp:
        raise ValueError(f"squeezing |r|={abs(r)} exceeds clamp {clamp}")
    if r == 0:
        return _identity(cutoff)
    return _squeezing(r, int(cutoff))


@lru_cache(maxsize=4096)
def _phase(phi: float, cutoff: int):
    return _frozen(np.diag(np.exp(-1j * phi * np.arange(cutoff))))


def phase_gate(phi: float, cutoff: int) -> np.ndarray:
    """R(phi) = exp(-i phi n), built directly as a diagonal."""
    phi = float(phi)
    if not math.isfinite(phi):
        raise ValueError("phase must be finite")
    return _phase(phi, int(cutoff))


@lru_cache(maxsize=4096)
def _beamsplitter(theta: float, cutoff: int):
    a = fock.annihilation(cutoff)
    ad = a.conj().T
    gen = theta * (np.kron(ad, a) - np.kron(a, ad))
    return _frozen(fock.matrix_exponential(gen))


def beamsplitter_gate(theta: float, cutoff: int) -> np.ndarray:
    """B(theta) = exp(theta (a^dagger b - a b^dagger)); ``a`` is the first mode."""
    theta = float(theta)
    if not math.isfinite(theta):
        raise ValueError("beam-splitter angle must be finite")
    if theta == 0:
        return _identity(cutoff**2)
    return _beamsplitter(theta, int(cutoff))


@lru_cache(maxsize=64)
def _identity(dim):
    return _frozen(np.eye(dim, dtype=complex))


def clements_pairs(n_modes: int) -> list[int]:
    """Upper mode index ``i`` of each mesh element acting on ``(i, i+1)``.

    Rectangular sweep: column ``l`` holds the elements with ``(l + i)`` even.
    """
    return [i for l in range(n_modes) for i in range(n_modes - 1) if (l + i) % 2 == 0]


def n_rotations(n_modes: int) -> int:
    return max(1, n_modes - 1)


@dataclass
class InterferometerSpec:
    n_modes: int
    theta: np.ndarray
    phi: np.ndarray
    final_rot: np.ndarray

    def __post_init__(self):
        n = self.n_modes
        self.theta = np.asarray(self.theta, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        self.final_rot = np.asarray(self.final_rot, dtype=float)
        n_bs = n * (n - 1) // 2
        if self.theta.shape != (n_bs,) or self.phi.shape != (n_bs,):
            raise ValueError(f"interferometer on {n} modes needs {n_bs} angles and {n_bs} phases")
        if self.final_rot.shape != (n_rotations(n),):
            raise ValueError(f"interferometer on {n} modes needs {n_rotations(n)} final rotations")

    @staticmethod
    def n_params(n_modes: int) -> int:
        return n_modes * (n_modes - 1) + n_rotations(n_modes)

    @classmethod
    def zeros(cls, n_modes):
        n_bs = n_modes * (n_modes - 1) // 2
        return cls(n_modes, np.zeros(n_bs), np.zeros(n_bs), np.zeros(n_rotations(n_modes)))

    def to_vector(self):
        return np.concatenate([self.theta, self.phi, self.final_rot])

    @classmethod
    def from_vector(cls, n_modes, vec):
        n_bs = n_modes * (n_modes - 1) // 2
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (cls.n_params(n_modes),):
            raise ValueError("interferometer parameter vector has the wrong length")
        return cls(n_modes, vec[:n_bs], vec[n_bs : 2 * n_bs], vec[2 * n_bs :])


def apply_interferometer(spec: InterferometerSpec, mat, cutoff: int) -> np.ndarray:
    """Left-multiply ``mat`` (rows over all modes) by the interferometer."""
    n = spec.n_modes
    for k, i in enumerate(clements_pairs(n)):
        if spec.phi[k] != 0:
            mat = fock.apply_to_rows(phase_gate(spec.phi[k], cutoff), mat, (i,), n, cutoff)
        if spec.theta[k] != 0:
            mat = fock.apply_to_rows(beamsplitter_gate(spec.theta[k], cutoff), mat, (i, i + 1), n, cutoff)
    for m, rot in enumerate(spec.final_rot):
        if rot != 0:
            mat = fock.apply_to_rows(phase_gate(rot, cutoff), mat, (m,), n, cutoff)
    return mat


def interferometer_unitary(spec: InterferometerSpec, cutoff: int) -> np.ndarray:
    """Full Fock-space unitary of the mesh, assembled from embedded gates."""
    n = spec.n_modes
    u = np.eye(cutoff**n, dtype=complex)
    for k, i in enumerate(clements_pairs(n)):
        u = fock.embed(phase_gate(spec.phi[k], cutoff), (i,), n, cutoff) @ u
        u = fock.embed(beamsplitter_gate(spec.theta[k], cutoff), (i, i + 1), n, cutoff) @ u
    for m, rot in enumerate(spec.final_rot):
        u = fock.embed(phase_gate(rot, cutoff), (m,), n, cutoff) @ u
    return u


def param_count(n_modes: int) -> int:
    """Real parameters of one layer: 2(n^2 + max(1, n-1)) + n + 1."""
    return 2 * (n_modes**2 + n_rotations(n_modes)) + n_modes + 1


@dataclass
class LayerParams:
    """Trainable parameters of one layer.

    ``squeeze`` and ``displace`` run over all ``n`` modes, register modes
    first and input modes last.
    """

    interferometer_1: InterferometerSpec
    interferometer_2: InterferometerSpec
    squeeze: np.ndarray
    displace: np.ndarray
    gamma: float = 1.0
    clamp: float = field(default=SQUEEZE_CLAMP, repr=False)

    def __post_init__(self):
        n = self.n_modes
        self.squeeze = np.asarray(self.squeeze, dtype=float)
        self.displace = np.asarray(self.displace, dtype=complex)
        if self.interferometer_2.n_modes != n:
            raise ValueError("interferometers act on different mode counts")
        if self.squeeze.shape != (n,) or self.displace.shape != (n,):
            raise ValueError(f"squeeze and displace need length {n}")
        if not np.all(np.isfinite(self.squeeze)) or np.any(np.abs(self.squeeze) > self.clamp):
            raise ValueError(f"squeezing amplitudes must be finite and within +-{self.clamp}")

    @property
    def n_modes(self) -> int:
        return self.interferometer_1.n_modes

    @classmethod
    def zeros(cls, n_modes, gamma=0.0):
        return cls(
            InterferometerSpec.zeros(n_modes),
            InterferometerSpec.zeros(n_modes),
            np.zeros(n_modes),
            np.zeros(n_modes, dtype=complex),
            gamma,
        )

    @classmethod
    def random(cls, n_modes, rng: np.random.Generator):
        """Angles ~ U(0, 2pi); squeezing and displacement components ~ U(-0.1, 0.1); gamma = 1."""
        k = InterferometerSpec.n_params(n_modes)
        i1 = InterferometerSpec.from_vector(n_modes, rng.uniform(0, 2 * np.pi, k))
        i2 = InterferometerSpec.from_vector(n_modes, rng.uniform(0, 2 * np.pi, k))
        r = rng.uniform(-0.1, 0.1, n_modes)
        alpha = rng.uniform(-0.1, 0.1, n_modes) + 1j * rng.uniform(-0.1, 0.1, n_modes)
        return cls(i1, i2, r, alpha, 1.0)

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [
                self.interferometer_1.to_vector(),
                self.squeeze,
                self.interferometer_2.to_vector(),
                self.displace.real,
                self.displace.imag,
                [self.gamma],
            ]
        )

    @classmethod
    def from_vector(cls, n_modes, vec, clamp=SQUEEZE_CLAMP):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (param_count(n_modes),):
            raise ValueError(f"expected {param_count(n_modes)} parameters, got {vec.shape}")
        k = InterferometerSpec.n_params(n_modes)
        n = n_modes
        i1 = InterferometerSpec.from_vector(n, vec[:k])
        r = vec[k : k + n]
        i2 = InterferometerSpec.from_vector(n, vec[k + n : 2 * k + n])
        re = vec[2 * k + n : 2 * k + 2 * n]
        im = vec[2 * k + 2 * n : 2 * k + 3 * n]
        return cls(i1, i2, r, re + 1j * im, float(vec[-1]), clamp)

    @staticmethod
    def squeeze_slice(n_modes) -> slice:
        k = InterferometerSpec.n_params(n_modes)
        return slice(k, k + n_modes)


def apply_squeezing(r, mat, cutoff, clamp=SQUEEZE_CLAMP):
    n = len(r)
    for m, rm in enumerate(r):
        if rm != 0:
            mat = fock.apply_to_rows(squeezing_gate(rm, cutoff, clamp), mat, (m,), n, cutoff)
    return mat


def apply_displacement(alpha, mat, cutoff):
    n = len(alpha)
    for m, am in enumerate(alpha):
        if am != 0:
            mat = fock.apply_to_rows(displacement_gate(am, cutoff), mat, (m,), n, cutoff)
    return mat


def apply_layer(params: LayerParams, mat, cutoff: int) -> np.ndarray:
    """Left-multiply ``mat`` by D(alpha) I_2 S(r) I_1 via tensor contractions."""
    mat = apply_interferometer(params.interferometer_1, mat, cutoff)
    mat = apply_squeezing(params.squeeze, mat, cutoff, params.clamp)
    mat = apply_interferometer(params.interferometer_2, mat, cutoff)
    return apply_displacement(params.displace, mat, cutoff)


def layer_trainable_unitary(params: LayerParams, cutoff: int) -> np.ndarray:
    """U = D(alpha) . I_2 . S(r) . I_1 on all modes, built from embedded gates."""
    n = params.n_modes
    u = interferometer_unitary(params.interferometer_1, cutoff)
    for m, r in enumerate(params.squeeze):
        u = fock.embed(squeezing_gate(r, cutoff, params.clamp), (m,), n, cutoff) @ u
    u = interferometer_unitary(params.interferometer_2, cutoff) @ u
    for m, a in enumerate(params.displace):
        u = fock.embed(displacement_gate(a, cutoff), (m,), n, cutoff) @ u
    return u
