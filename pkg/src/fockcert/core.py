"""Joint qubit--oscillator states and pulse propagators.

The joint space is ``{g, e} x {|0>, ..., |N>}``, stored qubit-major so that
``index(q, n) = q * (N + 1) + n`` with ``q = 0`` for ``g`` and ``q = 1`` for
``e``.

Every ideal pulse is block diagonal in 2x2 rotations.  For the pair
``(lower, upper)`` the block is::

    [[cos(t/2),                 -1j * exp(1j*phase) * sin(t/2)],
     [-1j * exp(-1j*phase) * sin(t/2),          cos(t/2)      ]]

with ``t = pi * duration * sqrt(k)`` and ``k`` the pair's coupling factor.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

LEAKAGE_TOL = 1e-9
NORM_TOL = 1e-12


class TruncationError(RuntimeError):
    """Population reached the top of the truncated Fock space."""


class Transition(enum.Enum):
    CARRIER = "carrier"
    RED = "red"
    BLUE = "blue"


def index(q: int, n: int, truncation: int) -> int:
    return q * (truncation + 1) + n


def dimension(truncation: int) -> int:
    return 2 * (truncation + 1)


def phonon_numbers(truncation: int) -> np.ndarray:
    """Phonon number of every joint basis state."""
    n = np.arange(truncation + 1)
    return np.concatenate([n, n])


# --------------------------------------------------------------------------
# physical parameters


@dataclass(frozen=True)
class PhysicalParams:
    """Trap and laser parameters, frequencies in Hz.

    ``carrier_detuning`` is a miscalibration of the qubit frequency and so
    shifts every transition; ``sideband_detuning`` is a miscalibration of the
    trap frequency, detuning the red sideband by ``+delta`` and the blue by
    ``-delta``.
    """

    carrier_rabi: float = 90e3
    lamb_dicke: float = 0.09
    trap_freq: float = 1.1e6
    qubit_freq: float = 411e12
    carrier_detuning: float = 0.0
    sideband_detuning: float = 0.0
    thermal_nbar: float = 0.0
    motional_dephasing_rate: float = 0.0

    def __post_init__(self):
        if not self.carrier_rabi > 0:
            raise ValueError("carrier_rabi must be positive")
        if not 0 < self.lamb_dicke < 0.3:
            raise ValueError("lamb_dicke must lie in (0, 0.3)")
        if not self.trap_freq > 0:
            raise ValueError("trap_freq must be positive")
        if self.thermal_nbar < 0 or self.motional_dephasing_rate < 0:
            raise ValueError("thermal_nbar and dephasing rate must be >= 0")

    @property
    def sideband_rabi(self) -> float:
        """Rabi frequency of the red sideband pair containing |0>."""
        return self.lamb_dicke * self.carrier_rabi

    def detuning(self, transition: Transition) -> float:
        if transition is Transition.CARRIER:
            return self.carrier_detuning
        if transition is Transition.RED:
            return self.carrier_detuning + self.sideband_detuning
        return self.carrier_detuning - self.sideband_detuning

    def modified_rabi(self, transition: Transition = Transition.RED) -> float:
        """Generalised Rabi frequency sqrt(Omega^2 + delta^2) of the |0> pair."""
        base = self.carrier_rabi if transition is Transition.CARRIER else self.sideband_rabi
        return float(np.hypot(base, self.detuning(transition)))

    def pulse_time(self, pulse: "Pulse") -> float:
        """Physical duration in seconds of a scaled pulse length."""
        base = self.carrier_rabi if pulse.transition is Transition.CARRIER else self.sideband_rabi
        return pulse.duration / (2.0 * base)


# --------------------------------------------------------------------------
# states


@dataclass(frozen=True, eq=False)
class JointState:
    amplitudes: np.ndarray
    truncation: int

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (dimension(self.truncation),):
            raise ValueError(
                f"expected {dimension(self.truncation)} amplitudes, got {amps.shape}"
            )
        if abs(np.vdot(amps, amps).real - 1) > NORM_TOL * 10:
            raise ValueError("state is not normalised")
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def basis(cls, q: int, n: int, truncation: int) -> "JointState":
        amps = np.zeros(dimension(truncation), complex)
        amps[index(q, n, truncation)] = 1
        return cls(amps, truncation)

    @classmethod
    def from_motional(cls, amplitudes: Sequence[complex], truncation: int,
                      qubit: int = 0) -> "JointState":
        """Embed motional amplitudes ``c_n`` as ``sum_n c_n |q, n>``."""
        amps = np.zeros(dimension(truncation), complex)
        c = np.asarray(amplitudes, complex)
        if len(c) > truncation + 1:
            raise ValueError("truncation too small for the motional amplitudes")
        amps[index(qubit, 0, truncation):index(qubit, 0, truncation) + len(c)] = c
        return cls(amps, truncation)

    def qubit_populations(self) -> tuple[float, float]:
        pops = np.abs(self.amplitudes) ** 2
        half = self.truncation + 1
        return float(pops[:half].sum()), float(pops[half:].sum())

    def density(self) -> "JointDensity":
        return JointDensity(np.outer(self.amplitudes, self.amplitudes.conj()), self.truncation)

    def fidelity(self, other: "JointState") -> float:
        return float(abs(np.vdot(other.amplitudes, self.amplitudes)) ** 2)


@dataclass(frozen=True, eq=False)
class JointDensity:
    matrix: np.ndarray
    truncation: int
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        rho = np.asarray(self.matrix, dtype=complex)
        d = dimension(self.truncation)
        if rho.shape != (d, d):
            raise ValueError(f"expected a {d}x{d} matrix, got {rho.shape}")
        if self.check:
            if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
                raise ValueError("density matrix is not Hermitian")
            if abs(np.trace(rho).real - 1) > 1e-10:
                raise ValueError("density matrix does not have unit trace")
            if np.linalg.eigvalsh(rho).min() < -1e-10:
                raise ValueError("density matrix is not positive semidefinite")
        rho.flags.writeable = False
        object.__setattr__(self, "matrix", rho)

    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.matrix))

    def qubit_populations(self) -> tuple[float, float]:
        pops = self.populations()
        half = self.truncation + 1
        return float(pops[:half].sum()), float(pops[half:].sum())

    def phonon_populations(self) -> np.ndarray:
        """Population of |g,n> and |e,n>, shape (2, N+1)."""
        return self.populations().reshape(2, self.truncation + 1)


def thermal_density(nbar: float, truncation: int) -> JointDensity:
    """Thermal motional state with the qubit in ``g``, renormalised."""
    if nbar < 0:
        raise ValueError("nbar must be non-negative")
    n = np.arange(truncation + 1)
    if nbar == 0:
        p = (n == 0).astype(float)
    else:
        p = (nbar / (1 + nbar)) ** n / (1 + nbar)
        p = p / p.sum()
    diag = np.zeros(dimension(truncation))
    diag[: truncation + 1] = p
    return JointDensity(np.diag(diag).astype(complex), truncation)


def check_leakage(amplitudes_or_pops: np.ndarray, truncation: int) -> None:
    """Raise if levels N-1 or N carry population above LEAKAGE_TOL."""
    a = np.asarray(amplitudes_or_pops)
    pops = np.abs(a) ** 2 if a.ndim == 1 else np.real(np.diag(a))
    top = pops.reshape(2, truncation + 1)[:, max(truncation - 1, 0):].sum()
    if top > LEAKAGE_TOL:
        raise TruncationError(
            f"population {top:.3g} in the top two phonon levels of N={truncation}"
        )


# --------------------------------------------------------------------------
# pulses


@dataclass(frozen=True)
class Pulse:
    transition: Transition
    duration: float
    phase: float = 0.0

    def __post_init__(self):
        if isinstance(self.transition, str):
            object.__setattr__(self, "transition", Transition(self.transition))
        if self.duration < 0:
            raise ValueError("pulse duration must be non-negative")

    def adjoint(self) -> "Pulse":
        """Inverse rotation: same length, phase advanced by pi."""
        return replace(self, phase=_wrap(self.phase + np.pi))


@dataclass(frozen=True)
class PulseSequence:
    pulses: tuple[Pulse, ...] = ()
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(self.pulses))

    def __len__(self):
        return len(self.pulses)

    def __iter__(self):
        return iter(self.pulses)

    def __add__(self, other: "PulseSequence") -> "PulseSequence":
        return PulseSequence(self.pulses + other.pulses, self.label or other.label)

    @property
    def total_duration(self) -> float:
        return float(sum(p.duration for p in self.pulses))

    def adjoint(self) -> "PulseSequence":
        return PulseSequence(tuple(p.adjoint() for p in reversed(self.pulses)),
                             self.label)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "pulses": [
                {
                    "transition": p.transition.value,
                    "duration": float(p.duration),
                    "phase_over_pi": float(p.phase / np.pi),
                }
                for p in self.pulses
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PulseSequence":
        pulses = tuple(
            Pulse(Transition(p["transition"]), float(p["duration"]),
                  float(p["phase_over_pi"]) * np.pi)
            for p in doc["pulses"]
        )
        return cls(pulses, doc.get("label", ""))

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, text_or_path: str | Path) -> "PulseSequence":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            text = Path(text_or_path).read_text()
        return cls.from_dict(json.loads(text))


def _wrap(phase: float) -> float:
    """Wrap a phase into (-pi, pi]."""
    w = float(np.mod(phase + np.pi, 2 * np.pi) - np.pi)
    return np.pi if w == -np.pi else w


def coupled_pairs(transition: Transition, truncation: int):
    """Index arrays ``(lower, upper, coupling)`` of the 2x2 blocks.

    ``coupling`` is the square of the relative Rabi frequency of each pair.
    """
    N = truncation
    if transition is Transition.CARRIER:
        n = np.arange(N + 1)
        return n, (N + 1) + n, np.ones(N + 1)
    if transition is Transition.RED:
        n = np.arange(1, N + 1)
        return n, (N + 1) + n - 1, n.astype(float)
    n = np.arange(0, N)
    return n, (N + 1) + n + 1, (n + 1).astype(float)


def pulse_unitary(pulse: Pulse, truncation: int) -> np.ndarray:
    """Dense unitary of an ideal pulse on the truncated joint space."""
    lo, up, k = coupled_pairs(pulse.transition, truncation)
    half = 0.5 * np.pi * pulse.duration * np.sqrt(k)
    c, s = np.cos(half), np.sin(half)
    U = np.eye(dimension(truncation), dtype=complex)
    U[lo, lo] = c
    U[up, up] = c
    U[lo, up] = -1j * np.exp(1j * pulse.phase) * s
    U[up, lo] = -1j * np.exp(-1j * pulse.phase) * s
    return U


def pulse_unitary_derivatives(transition: Transition, duration: float, phase: float,
                              truncation: int):
    """Unitary and its derivatives with respect to duration and phase.

    ``duration`` may be negative here, which optimisers find convenient.
    """
    lo, up, k = coupled_pairs(transition, truncation)
    rate = 0.5 * np.pi * np.sqrt(k)
    half = rate * duration
    c, s = np.cos(half), np.sin(half)
    ep, em = np.exp(1j * phase), np.exp(-1j * phase)
    dim = dimension(truncation)
    U = np.eye(dim, dtype=complex)
    U[lo, lo] = c
    U[up, up] = c
    U[lo, up] = -1j * ep * s
    U[up, lo] = -1j * em * s
    dU = np.zeros((dim, dim), complex)
    dU[lo, lo] = -s * rate
    dU[up, up] = -s * rate
    dU[lo, up] = -1j * ep * c * rate
    dU[up, lo] = -1j * em * c * rate
    dP = np.zeros((dim, dim), complex)
    dP[lo, up] = ep * s
    dP[up, lo] = -em * s
    return U, dU, dP


def sequence_unitary(seq: PulseSequence, truncation: int) -> np.ndarray:
    U = np.eye(dimension(truncation), dtype=complex)
    for pulse in seq:
        U = pulse_unitary(pulse, truncation) @ U
    return U


def _rotate_amplitudes(amps: np.ndarray, pulse: Pulse, truncation: int) -> np.ndarray:
    lo, up, k = coupled_pairs(pulse.transition, truncation)
    half = 0.5 * np.pi * pulse.duration * np.sqrt(k)
    c, s = np.cos(half), np.sin(half)
    if amps.ndim == 2:
        c, s = c[:, None], s[:, None]
    out = amps.copy()
    a, b = amps[lo], amps[up]
    out[lo] = c * a - 1j * np.exp(1j * pulse.phase) * s * b
    out[up] = -1j * np.exp(-1j * pulse.phase) * s * a + c * b
    return out


def apply_sequence_columns(columns: np.ndarray, seq: PulseSequence,
                           truncation: int) -> np.ndarray:
    """Apply an ideal sequence to each column of a joint-space array.

    No leakage check; intended for inner loops of optimisers.
    """
    out = np.asarray(columns, complex)
    for pulse in seq:
        out = _rotate_amplitudes(out, pulse, truncation)
    return out


def apply_pulse_ideal(state: JointState, pulse: Pulse) -> JointState:
    check_leakage(state.amplitudes, state.truncation)
    out = _rotate_amplitudes(state.amplitudes, pulse, state.truncation)
    check_leakage(out, state.truncation)
    return JointState(out, state.truncation)


def apply_sequence(state: JointState, seq: PulseSequence) -> JointState:
    for pulse in seq:
        state = apply_pulse_ideal(state, pulse)
    return state


def free_evolution_phases(phi: float, truncation: int) -> np.ndarray:
    return np.exp(-1j * phi * phonon_numbers(truncation))


def free_evolution(state: JointState, phi: float) -> JointState:
    """Multiply each |q, n> amplitude by exp(-i n phi)."""
    return JointState(state.amplitudes * free_evolution_phases(phi, state.truncation),
                      state.truncation)


def free_evolution_density(rho: JointDensity, phi: float) -> JointDensity:
    z = free_evolution_phases(phi, rho.truncation)
    return JointDensity(z[:, None] * rho.matrix * z.conj()[None, :], rho.truncation,
                        check=False)


def shift_sequence_phases(seq: PulseSequence, phi: float) -> PulseSequence:
    """Fold a free-evolution phase into the following sideband pulses.

    Red-sideband phases are decremented by ``phi``, blue-sideband phases
    incremented, and carrier pulses are left alone.
    """
    def shifted(p: Pulse) -> Pulse:
        if p.transition is Transition.RED:
            return replace(p, phase=p.phase - phi)
        if p.transition is Transition.BLUE:
            return replace(p, phase=p.phase + phi)
        return p

    return PulseSequence(tuple(shifted(p) for p in seq), seq.label)


# --------------------------------------------------------------------------
# non-ideal propagation


@dataclass(frozen=True)
class NoiseModel:
    """Switches for the non-ideal propagator.

    ``off_resonant`` keeps the non-addressed Lamb--Dicke terms (the carrier
    when a sideband is driven, and the sidebands when the carrier is driven).
    ``stark_compensation`` adds a static qubit level shift that cancels the
    light shift of the off-resonant carrier during sideband pulses, standing
    in for a far-detuned compensation beam.
    """

    off_resonant: bool = True
    stark_compensation: bool = True
    steps_per_trap_period: int = 50


def _ladder(truncation: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, truncation + 1)), 1).astype(complex)


def _light_shift(coupling: float, detuning: float) -> float:
    """Shift of a two-level resonance by a drive at ``detuning`` (Hz)."""
    return float(-np.sign(detuning) * (np.hypot(coupling, detuning) - abs(detuning)))


class _Hamiltonian:
    """Interaction-picture Hamiltonian (rad/s) of one pulse, laser phase 0.

    Terms are ``pi * Omega * exp(-2j*pi*f*t) * (sigma_+ X) + h.c.`` with
    ``X`` in ``{1, i*eta*a, i*eta*a^dagger}``, written for time ``t``
    measured from the start of the experiment.
    """

    def __init__(self, transition: Transition, params: PhysicalParams,
                 truncation: int, noise: NoiseModel):
        N = truncation
        a = _ladder(N)
        eye = np.eye(N + 1)
        sp = np.zeros((2, 2))
        sp[1, 0] = 1.0  # |e><g|
        eta, Om, nu = params.lamb_dicke, params.carrier_rabi, params.trap_freq
        ops = {
            Transition.CARRIER: np.kron(sp, eye).astype(complex),
            Transition.RED: 1j * eta * np.kron(sp, a),
            Transition.BLUE: 1j * eta * np.kron(sp, a.conj().T),
        }
        # laser detuning from the bare carrier
        offset = {Transition.CARRIER: 0.0, Transition.RED: -nu, Transition.BLUE: nu}
        laser = offset[transition] - params.detuning(transition)
        # static diagonal part: a compensating shift of the qubit levels that
        # cancels the light shift of the off-resonant carrier
        self.static = np.zeros(2 * (N + 1))
        if noise.off_resonant and noise.stark_compensation and transition is not Transition.CARRIER:
            shift = _light_shift(Om, laser - offset[Transition.CARRIER])
            self.static = -np.pi * shift * np.r_[-np.ones(N + 1), np.ones(N + 1)]
        # a sideband term X detunes as (laser - offset[X])
        self.terms = []
        for kind, op in ops.items():
            if kind is not transition and not noise.off_resonant:
                continue
            self.terms.append((np.pi * Om * op, laser - offset[kind]))
        # intended term carries phase -pi/2 relative to the laser so the
        # sideband rotation axis matches the ideal convention
        self.phase_ref = 0.0 if transition is Transition.CARRIER else np.pi / 2

    def __call__(self, t: float) -> np.ndarray:
        H = 0
        for op, f in self.terms:
            H = H + op * np.exp(-2j * np.pi * f * t)
        return H + H.conj().T + np.diag(self.static)


def _laser_phase_frame(phase: float, truncation: int) -> np.ndarray:
    """Diagonal ``R`` with ``R sigma_+ R^dagger = exp(-i phase) sigma_+``."""
    half = truncation + 1
    return np.concatenate([np.full(half, np.exp(0.5j * phase)),
                           np.full(half, np.exp(-0.5j * phase))])


def _rk4_steps(t0: float, duration: float, nu: float, per_period: int) -> tuple[int, float]:
    steps = max(1, int(np.ceil(duration * nu * per_period)))
    return steps, duration / steps


def pulse_propagator(pulse: Pulse, params: PhysicalParams, truncation: int,
                     start_time: float = 0.0, noise: NoiseModel = NoiseModel(),
                     physical_duration: float | None = None) -> np.ndarray:
    """Unitary of a non-ideal pulse (no dephasing) by fixed-step RK4."""
    T = params.pulse_time(pulse) if physical_duration is None else physical_duration
    H = _Hamiltonian(pulse.transition, params, truncation, noise)
    steps, dt = _rk4_steps(start_time, T, params.trap_freq, noise.steps_per_trap_period)
    U = np.eye(dimension(truncation), dtype=complex)
    t = start_time
    for _ in range(steps):
        k1 = -1j * H(t) @ U
        Hm = H(t + dt / 2)
        k2 = -1j * Hm @ (U + dt / 2 * k1)
        k3 = -1j * Hm @ (U + dt / 2 * k2)
        k4 = -1j * H(t + dt) @ (U + dt * k3)
        U = U + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
    r = _laser_phase_frame(pulse.phase + H.phase_ref, truncation)
    return r[:, None] * U * r.conj()[None, :]


def apply_pulse_nonideal(rho: JointDensity, pulse: Pulse, params: PhysicalParams,
                         physical_duration: float | None = None,
                         start_time: float = 0.0,
                         noise: NoiseModel = NoiseModel()) -> JointDensity:
    """Integrate one pulse on a density matrix.

    Motional dephasing damps ``rho[(q,n),(q',m)]`` by
    ``exp(-gamma * dt * (n - m)**2)`` after every RK4 step.
    """
    N = rho.truncation
    T = params.pulse_time(pulse) if physical_duration is None else physical_duration
    gamma = params.motional_dephasing_rate
    H = _Hamiltonian(pulse.transition, params, N, noise)
    r = _laser_phase_frame(pulse.phase + H.phase_ref, N)
    steps, dt = _rk4_steps(start_time, T, params.trap_freq, noise.steps_per_trap_period)
    n = phonon_numbers(N)
    damp = np.exp(-gamma * dt * (n[:, None] - n[None, :]) ** 2)
    # evolve in the laser-phase-zero frame; dephasing commutes with the frame
    x = r.conj()[:, None] * rho.matrix * r[None, :]

    def f(t, x):
        Ht = H(t)
        return -1j * (Ht @ x - x @ Ht)

    t = start_time
    for _ in range(steps):
        k1 = f(t, x)
        k2 = f(t + dt / 2, x + dt / 2 * k1)
        k3 = f(t + dt / 2, x + dt / 2 * k2)
        k4 = f(t + dt, x + dt * k3)
        x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if gamma:
            x = x * damp
        t += dt
    out = r[:, None] * x * r.conj()[None, :]
    out = 0.5 * (out + out.conj().T)
    check_leakage(out, N)
    return JointDensity(out, N, check=False)


def sequence_propagators(seq: PulseSequence, params: PhysicalParams, truncation: int,
                         start_time: float = 0.0,
                         noise: NoiseModel = NoiseModel()) -> tuple[list[np.ndarray], float]:
    """Back-to-back non-ideal pulse unitaries and the end time."""
    out = []
    t = start_time
    for pulse in seq:
        out.append(pulse_propagator(pulse, params, truncation, t, noise))
        t += params.pulse_time(pulse)
    return out, t


def rephase_propagator(U: np.ndarray, pulse: Pulse, new_phase: float,
                       truncation: int) -> np.ndarray:
    """Propagator of the same pulse with its laser phase changed."""
    r = _laser_phase_frame(new_phase - pulse.phase, truncation)
    return r[:, None] * U * r.conj()[None, :]


def load_sequences(path: str | Path) -> dict[str, PulseSequence]:
    doc = json.loads(Path(path).read_text())
    return {k: PulseSequence.from_dict(v) for k, v in doc["sequences"].items()}


def random_sequence(rng: np.random.Generator, length: int,
                    transitions: Iterable[Transition] = tuple(Transition)) -> PulseSequence:
    kinds = list(transitions)
    return PulseSequence(tuple(
        Pulse(kinds[rng.integers(len(kinds))], float(rng.uniform(0, 2)),
              float(rng.uniform(-np.pi, np.pi)))
        for _ in range(length)
    ))
