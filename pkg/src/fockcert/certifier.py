"""Interference patterns and the moment-ratio coherence certifier.

A pattern is the probability of a measurement outcome ``A`` after the state
has freely evolved by a phase ``phi`` and then passed through a mapping::

    p(phi) = Tr[A U_m U_f(phi) rho U_f(phi)^dagger U_m^dagger]

The certifier is ``C = M3 / M1**2`` with ``M_n`` the phase average of
``p**n``.  Values above 1, 5/4 and 179/96 certify at least 2-, 3- and
4-coherence respectively.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .core import (
    JointDensity,
    JointState,
    PulseSequence,
    dimension,
    phonon_numbers,
    sequence_unitary,
)

THRESHOLDS: dict[int, Fraction] = {1: Fraction(1), 2: Fraction(5, 4), 3: Fraction(179, 96)}
DEFAULT_POINTS = 31


class UndefinedCertifier(ValueError):
    """The first moment vanished, so C is undefined."""


@dataclass(frozen=True, eq=False)
class PovmElement:
    matrix: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.matrix, complex)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("POVM element must be a square matrix")
        if np.max(np.abs(A - A.conj().T), initial=0) > 1e-12:
            raise ValueError("POVM element is not Hermitian")
        ev = np.linalg.eigvalsh(A)
        if ev.min() < -1e-10 or ev.max() > 1 + 1e-10:
            raise ValueError("POVM element spectrum outside [0, 1]")
        A.flags.writeable = False
        object.__setattr__(self, "matrix", A)

    @classmethod
    def qubit(cls, truncation: int, qubit: int = 1) -> "PovmElement":
        """Projector ``|q><q| x I_mot``; ``qubit=1`` measures ``e``."""
        diag = np.zeros(dimension(truncation))
        half = truncation + 1
        diag[qubit * half:(qubit + 1) * half] = 1
        return cls(np.diag(diag).astype(complex))


@dataclass(frozen=True, eq=False)
class InterferencePattern:
    phases: np.ndarray
    probabilities: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(x, float) for x in (self.phases, self.probabilities, self.weights)]
        if not len(arrays[0]) == len(arrays[1]) == len(arrays[2]):
            raise ValueError("phases, probabilities and weights differ in length")
        if abs(arrays[2].sum() - 1) > 1e-12:
            raise ValueError("quadrature weights must sum to one")
        for name, arr in zip(("phases", "probabilities", "weights"), arrays):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.phases)

    @property
    def visibility(self) -> float:
        """Peak-to-peak amplitude ``max p - min p``."""
        return float(self.probabilities.max() - self.probabilities.min())

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["phase_rad", "probability", "weight"])
            for row in zip(self.phases, self.probabilities, self.weights):
                w.writerow([repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path: str | Path) -> "InterferencePattern":
        data = np.genfromtxt(path, delimiter=",", names=True)
        return cls(data["phase_rad"], data["probability"], data["weight"])


def trapezium_weights(n_points: int) -> np.ndarray:
    """Closed trapezium weights on ``2*pi*j/(J-1)``, normalised to one."""
    if n_points < 2:
        raise ValueError("need at least two points")
    w = np.full(n_points, 1.0 / (n_points - 1))
    w[[0, -1]] = 0.5 / (n_points - 1)
    return w


def pattern_phases(n_points: int) -> np.ndarray:
    return 2 * np.pi * np.arange(n_points) / (n_points - 1)


def _as_density(rho) -> tuple[np.ndarray, int]:
    if isinstance(rho, JointDensity):
        return rho.matrix, rho.truncation
    if isinstance(rho, JointState):
        return np.outer(rho.amplitudes, rho.amplitudes.conj()), rho.truncation
    raise TypeError("expected a JointState or JointDensity")


def _mapping_unitary(mapping, truncation: int) -> np.ndarray:
    if mapping is None:
        return np.eye(dimension(truncation), dtype=complex)
    if isinstance(mapping, PulseSequence):
        return sequence_unitary(mapping, truncation)
    U = np.asarray(mapping, complex)
    if U.shape != (dimension(truncation),) * 2:
        raise ValueError("mapping unitary has the wrong dimension")
    return U


def pattern_values(rho, mapping, A: PovmElement | None, phases,
                   measure_excited: bool = True) -> np.ndarray:
    """``p(phi)`` at each phase; ``A`` defaults to a qubit projector."""
    matrix, N = _as_density(rho)
    if A is None:
        A = PovmElement.qubit(N, 1 if measure_excited else 0)
    if A.matrix.shape != matrix.shape:
        raise ValueError("POVM element and state dimensions differ")
    U = _mapping_unitary(mapping, N)
    # Tr[A U rho_phi U^dag] = sum_ij B_ji rho_ij exp(-i (n_i - n_j) phi)
    B = U.conj().T @ A.matrix @ U
    n = phonon_numbers(N)
    kernel = matrix * B.T
    diff = n[:, None] - n[None, :]
    phases = np.atleast_1d(np.asarray(phases, float))
    # collect by phonon difference: p(phi) = sum_k c_k exp(-i k phi)
    ks = np.arange(-N, N + 1)
    coeff = np.array([kernel[diff == k].sum() for k in ks])
    p = np.real(np.exp(-1j * np.outer(phases, ks)) @ coeff)
    return np.clip(p, 0.0, 1.0)


def pattern_probability(rho, mapping, A: PovmElement | None = None, phi: float = 0.0,
                        measure_excited: bool = True) -> float:
    return float(pattern_values(rho, mapping, A, [phi], measure_excited)[0])


def sample_pattern(rho, mapping, A: PovmElement | None = None,
                   n_points: int = DEFAULT_POINTS,
                   measure_excited: bool = True) -> InterferencePattern:
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    phases = pattern_phases(n_points)
    p = pattern_values(rho, mapping, A, phases, measure_excited)
    return InterferencePattern(phases, p, trapezium_weights(n_points))


def exact_points(truncation: int) -> int:
    """Points for which the trapezium rule integrates ``p**3`` exactly."""
    return 3 * truncation + 2


def moment(pattern: InterferencePattern, order: int) -> float:
    if order < 1:
        raise ValueError("moment order must be >= 1")
    return float(pattern.weights @ pattern.probabilities ** order)


def certifier_from_values(probabilities, weights) -> float:
    p = np.asarray(probabilities, float)
    m1 = float(weights @ p)
    if m1 <= 0:
        raise UndefinedCertifier("first moment is zero")
    return float(weights @ p ** 3) / m1 ** 2


def certifier_value(pattern: InterferencePattern) -> float:
    return certifier_from_values(pattern.probabilities, pattern.weights)


def threshold(level: int) -> Fraction:
    return THRESHOLDS[level]


def certify(c_hat: float, sigma: float = 0.0, z: float = 0.0) -> int:
    """Highest coherence level certified by ``c_hat - z * sigma``.

    Exceeding the supremum for ``k``-coherent states certifies ``k + 1``.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    lower = c_hat - z * sigma
    level = 1
    for k, bound in sorted(THRESHOLDS.items()):
        if lower > float(bound) + 1e-12:
            level = k + 1
    return level


def naive_mapping_benchmark(target, truncation: int | None = None,
                            creation: PulseSequence | None = None) -> tuple[float, float]:
    """C and visibility when the mapping is the adjoint of the creation.

    The adjoint returns the target to ``|g,0>``, so the ``g`` population is
    the measured signal.
    """
    from .synthesis import default_truncation, synthesize_creation

    N = default_truncation(target) if truncation is None else truncation
    seq = synthesize_creation(target, truncation=N) if creation is None else creation
    pat = sample_pattern(target.joint(N), seq.adjoint(), n_points=exact_points(N),
                         measure_excited=False)
    return certifier_value(pat), peak_to_peak(target.joint(N), seq.adjoint(),
                                              measure_excited=False)


def peak_to_peak(rho, mapping, A: PovmElement | None = None,
                 measure_excited: bool = True, grid: int = 720) -> float:
    """``max p - min p`` over all phases, refined from a dense grid."""
    from scipy.optimize import minimize_scalar

    phases = 2 * np.pi * np.arange(grid) / grid
    p = pattern_values(rho, mapping, A, phases, measure_excited)
    step = 2 * np.pi / grid
    extremes = []
    for sign, j in ((1, np.argmin(p)), (-1, np.argmax(p))):
        res = minimize_scalar(
            lambda x: sign * pattern_values(rho, mapping, A, [x], measure_excited)[0],
            bounds=(phases[j] - step, phases[j] + step), method="bounded",
            options={"xatol": 1e-10})
        extremes.append(min(sign * res.fun, p[j]) if sign > 0 else max(sign * res.fun, p[j]))
    return float(extremes[1] - extremes[0])


def report(pattern: InterferencePattern | None = None, c: float | None = None,
           sigma: float = 0.0, z: float = 1.0, m1: float | None = None,
           m3: float | None = None) -> dict:
    """Certifier report as a JSON-ready dict."""
    if pattern is not None:
        m1, m3 = moment(pattern, 1), moment(pattern, 3)
        c = m3 / m1 ** 2
    return {
        "m1": m1,
        "m3": m3,
        "c": c,
        "sigma": sigma,
        "certified_level": certify(c, sigma, z),
        "thresholds": {str(k): str(v) for k, v in THRESHOLDS.items()},
    }


def write_report(path: str | Path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
