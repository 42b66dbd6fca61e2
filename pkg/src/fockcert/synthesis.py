"""Creation and measurement-mapping sequences for motional superpositions.

Creation works backwards from the target: the highest occupied phonon level
is emptied one step at a time, first gathering its population into a single
qubit state with the carrier, then moving it down with the red (from ``g``)
or blue (from ``e``) sideband.  The forward sequence is the adjoint of the
reverse one.  Every combination of qubit choice and pulse length up to
``max_duration`` is explored depth first, pruning branches longer than the
best complete sequence.

Measurement mappings are found by multi-start least squares over the pulse
lengths and phases of a fixed list of transitions.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .core import (
    JointState,
    Pulse,
    PulseSequence,
    Transition,
    apply_sequence,
    apply_sequence_columns,
    dimension,
    index,
    pulse_unitary_derivatives,
)

log = logging.getLogger(__name__)

ZERO_TOL = 1e-12
MAPPING_TOL = 1e-10


class SynthesisError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TargetState:
    """Motional superposition with the qubit in ``g``."""

    amplitudes: np.ndarray

    def __post_init__(self):
        c = np.trim_zeros(np.asarray(self.amplitudes, complex), "b")
        if c.size == 0:
            raise ValueError("target has no nonzero amplitude")
        if abs(np.vdot(c, c).real - 1) > 1e-12:
            raise ValueError("target amplitudes are not normalised")
        c.flags.writeable = False
        object.__setattr__(self, "amplitudes", c)

    @classmethod
    def equal(cls, levels) -> "TargetState":
        """Equal, in-phase superposition of the given Fock levels."""
        levels = list(levels)
        c = np.zeros(max(levels) + 1, complex)
        c[levels] = 1 / np.sqrt(len(levels))
        return cls(c)

    @classmethod
    def normalised(cls, amplitudes) -> "TargetState":
        c = np.asarray(amplitudes, complex)
        return cls(c / np.linalg.norm(c))

    @property
    def n_max(self) -> int:
        return len(self.amplitudes) - 1

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(np.abs(self.amplitudes) > ZERO_TOL)

    def joint(self, truncation: int) -> JointState:
        return JointState.from_motional(self.amplitudes, truncation)

    def label(self) -> str:
        return "".join(str(n) for n in self.support)


@dataclass(frozen=True, eq=False)
class MappingSpec:
    target: TargetState
    orthogonal_basis: tuple[np.ndarray, ...] = field(default=())

    def vectors(self) -> np.ndarray:
        """Target and orthogonal vectors as rows, padded to n_max + 1."""
        rows = [self.target.amplitudes] + list(self.orthogonal_basis)
        return np.array(rows, complex)


def default_truncation(target: TargetState) -> int:
    return max(8, target.n_max + 6) if target.n_max < 3 else max(10, target.n_max + 6)


# --------------------------------------------------------------------------
# creation


def _zeroing_rotations(keep: complex, kill: complex, kill_is_lower: bool,
                       coupling: float, max_duration: float):
    """All (duration, phase) that empty ``kill`` into its partner.

    ``coupling`` is the squared relative Rabi frequency of the pair.
    """
    if abs(kill) < ZERO_TOL:
        halves, phases = [0.0], [0.0]
        halves += [k * np.pi for k in range(1, 64)]
        phases += [0.0] * 63
    else:
        if abs(keep) < ZERO_TOL:
            base, psi = np.pi / 2, 0.0
        else:
            w = kill / (1j * keep) if kill_is_lower else np.conj(kill / (1j * keep))
            base, psi = np.arctan(abs(w)), float(np.angle(w))
        halves, phases = [], []
        for k in range(64):
            halves += [base + k * np.pi, (k + 1) * np.pi - base]
            phases += [psi, psi + np.pi]
    scale = np.pi * np.sqrt(coupling)
    out = []
    for h, ph in sorted(zip(halves, phases)):
        d = 2 * h / scale
        if d > max_duration + 1e-12:
            break
        out.append((d, float(np.mod(ph + np.pi, 2 * np.pi) - np.pi)))
    # collapse duplicates produced by base == pi/2
    uniq = []
    for d, ph in out:
        if not uniq or abs(d - uniq[-1][0]) > 1e-12:
            uniq.append((d, ph))
    return uniq


def _step(amps, pulse, truncation):
    return apply_sequence_columns(amps, PulseSequence((pulse,)), truncation)


@dataclass
class _Best:
    key: tuple = (np.inf,)
    pulses: tuple = ()


def synthesize_creation(target: TargetState, max_duration: float = 2.0,
                        truncation: int | None = None,
                        explore_blue: bool = False) -> PulseSequence:
    """Shortest creation sequence from |g,0> to the target.

    ``max_duration`` bounds every individual scaled pulse length; longer
    solutions are not explored.
    """
    N = default_truncation(target) if truncation is None else truncation
    if abs(np.vdot(target.amplitudes, target.amplitudes).real - 1) > 1e-12:
        raise SynthesisError("target not normalised")
    start = target.joint(N).amplitudes.copy()
    best = _Best()

    def key(pulses):
        d = [p.duration for p in pulses]
        return (round(sum(d), 12), len(d), max(d, default=0.0))

    def finish(amps, pulses):
        k = key(pulses)
        if k < best.key:
            best.key, best.pulses = k, tuple(pulses)

    def recurse(amps, level, pulses, total):
        if total > best.key[0] + 1e-12:
            return
        g, e = amps[index(0, level, N)], amps[index(1, level, N)]
        if level == 0:
            for d, ph in _zeroing_rotations(g, e, False, 1.0, max_duration):
                if total + d > best.key[0] + 1e-12:
                    break
                pulse = Pulse(Transition.CARRIER, d, ph)
                finish(None, pulses + ([pulse] if d > 0 else []))
                break  # later solutions are strictly longer
            return
        choices = [(0, Transition.RED)]
        if explore_blue:
            choices.append((1, Transition.BLUE))
        for qubit, side in choices:
            # carrier gathers level population into `qubit`
            if qubit == 0:
                carrier = _zeroing_rotations(g, e, False, 1.0, max_duration)
            else:
                carrier = _zeroing_rotations(e, g, True, 1.0, max_duration)
            for dc, phc in carrier:
                if total + dc > best.key[0] + 1e-12:
                    break
                after_c = amps
                head = list(pulses)
                if dc > 0:
                    pc = Pulse(Transition.CARRIER, dc, phc)
                    after_c = _step(amps, pc, N)
                    head.append(pc)
                if side is Transition.RED:
                    kill = after_c[index(0, level, N)]
                    keep = after_c[index(1, level - 1, N)]
                    sb = _zeroing_rotations(keep, kill, True, level, max_duration)
                else:
                    kill = after_c[index(1, level, N)]
                    keep = after_c[index(0, level - 1, N)]
                    sb = _zeroing_rotations(keep, kill, False, level, max_duration)
                for ds, phs in sb:
                    if total + dc + ds > best.key[0] + 1e-12:
                        break
                    if ds == 0:
                        recurse(after_c, level - 1, head, total + dc)
                        continue
                    ps = Pulse(side, ds, phs)
                    recurse(_step(after_c, ps, N), level - 1, head + [ps], total + dc + ds)

    if target.n_max == 0:
        return PulseSequence((), f"create {target.label()}")
    recurse(start, target.n_max, [], 0.0)
    if not best.pulses and best.key[0] == np.inf:
        raise SynthesisError("no creation sequence found within the duration bound")
    seq = PulseSequence(best.pulses, f"create {target.label()}").adjoint()
    fid = apply_sequence(JointState.basis(0, 0, N), seq).fidelity(target.joint(N))
    if fid < 1 - 1e-9:
        raise SynthesisError(f"creation fidelity {fid:.3e} below bound")
    return PulseSequence(seq.pulses, f"create {target.label()}")


# --------------------------------------------------------------------------
# measurement mapping


def build_mapping_spec(target: TargetState) -> MappingSpec:
    """Orthonormal complement of the target inside its free-evolution span.

    Free evolution only rephases the occupied levels, so the span is the set
    of Fock states in the target's support.
    """
    c = target.amplitudes
    basis = [c / np.linalg.norm(c)]
    for n in target.support:
        v = np.zeros_like(c)
        v[n] = 1
        for _ in range(2):
            for u in basis:
                v = v - np.vdot(u, v) * u
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            basis.append(v / norm)
    return MappingSpec(target, tuple(basis[1:]))


def _qubit_split(columns: np.ndarray, truncation: int):
    half = truncation + 1
    return columns[:half], columns[half:]


def _embed_rows(rows: np.ndarray, truncation: int) -> np.ndarray:
    cols = np.zeros((dimension(truncation), len(rows)), complex)
    cols[: rows.shape[1]] = rows.T
    return cols


def mapping_error(seq: PulseSequence, spec: MappingSpec,
                  truncation: int | None = None) -> float:
    """Probability that the map sends the target to ``g`` or a complement state to ``e``."""
    N = default_truncation(spec.target) if truncation is None else truncation
    cols = apply_sequence_columns(_embed_rows(spec.vectors(), N), seq, N)
    g, e = _qubit_split(cols, N)
    p_e = np.sum(np.abs(e) ** 2, axis=0)
    return max(0.0, float((1 - p_e[0]) + p_e[1:].sum()))


@dataclass
class MappingResult:
    sequence: PulseSequence
    error: float
    success: bool
    n_success: int = 0
    restarts: int = 0

    @property
    def sort_key(self):
        d = [p.duration for p in self.sequence]
        return (len(d), round(sum(d), 6), max(d, default=0.0))


class _Converged(Exception):
    def __init__(self, x):
        self.x = np.array(x, float)


class MappingError(RuntimeError):
    def __init__(self, message, best: MappingResult | None = None):
        super().__init__(message)
        self.best = best


def optimize_mapping(spec: MappingSpec, template, restarts: int = 64,
                     seed: int = 0,
                     truncation: int | None = None,
                     tol: float = MAPPING_TOL, raise_on_failure: bool = False,
                     init_max: float = 2.0, stop_after: int | None = None,
                     initial: PulseSequence | None = None) -> MappingResult:
    """Fit pulse lengths and phases of ``template`` to the mapping conditions.

    Starting lengths are drawn from ``(0.05, init_max)``; when ``initial`` is
    given (it must follow the template) it is used as the first start.  Every restart that
    reaches ``tol`` counts as a success and the shortest successful sequence
    is returned; ``stop_after`` ends the search once that many succeeded.
    """
    template = [Transition(t) if isinstance(t, str) else t for t in template]
    if not template:
        raise ValueError("template must not be empty")
    N = (default_truncation(spec.target) if truncation is None else truncation)
    rows = spec.vectors()
    cols0 = _embed_rows(rows, N)
    k = len(template)

    def build(x):
        return PulseSequence(tuple(
            Pulse(t, float(x[i]), float(x[k + i])) for i, t in enumerate(template)))

    dim = dimension(N)
    keep_g = np.zeros((dim, len(rows)), bool)
    keep_g[: N + 1, 0] = True  # target must leave g
    keep_g[N + 1:, 1:] = True  # complement must leave e
    cache = {}

    def forward(x):
        key = x.tobytes()
        if key not in cache:
            cache.clear()
            parts = [pulse_unitary_derivatives(t, x[i], x[k + i], N)
                     for i, t in enumerate(template)]
            cache[key] = parts
        return cache[key]

    def residuals(x):
        U = np.eye(dim, dtype=complex)
        for P, _, _ in forward(x):
            U = P @ U
        r = (U @ cols0)[keep_g]
        r = np.concatenate([r.real, r.imag])
        if r @ r < 1e-24:
            raise _Converged(x)
        return r

    def jacobian(x):
        parts = forward(x)
        before = [cols0]
        for P, _, _ in parts:
            before.append(P @ before[-1])
        after = np.eye(dim, dtype=complex)
        J = np.empty((2 * keep_g.sum(), 2 * k))
        for i in range(k - 1, -1, -1):
            P, dD, dP = parts[i]
            for col, dX in ((i, dD), (k + i, dP)):
                d = (after @ (dX @ before[i]))[keep_g]
                J[:, col] = np.concatenate([d.real, d.imag])
            after = after @ P
        return J

    rng = np.random.default_rng(seed)
    starts = []
    if initial is not None:
        if [p.transition for p in initial] != template:
            raise ValueError("initial sequence does not follow the template")
        starts.append(np.r_[[p.duration for p in initial], [p.phase for p in initial]])
    results = []
    for i in range(restarts):
        if i < len(starts):
            x0 = starts[i]
        else:
            x0 = np.r_[rng.uniform(0.05, init_max, k), rng.uniform(-np.pi, np.pi, k)]
        try:
            sol = least_squares(residuals, x0, jac=jacobian, method="lm", xtol=1e-15,
                                ftol=1e-15, gtol=1e-15, max_nfev=200 * k)
            x = sol.x.copy()
        except _Converged as done:
            x = np.array(done.x, float)
        # a negative length is the same rotation with the phase flipped
        neg = x[:k] < 0
        x[:k] = np.abs(x[:k])
        x[k:][neg] += np.pi
        x[k:] = np.mod(x[k:] + np.pi, 2 * np.pi) - np.pi
        seq = build(x)
        err = mapping_error(seq, spec, N)
        results.append(MappingResult(seq, err, err <= tol))
        if stop_after and sum(r.success for r in results) >= stop_after:
            break
    good = [r for r in results if r.success]
    if good:
        best = min(good, key=lambda r: r.sort_key)
    else:
        best = min(results, key=lambda r: r.error)
    best.n_success, best.restarts = len(good), len(results)
    best.sequence = PulseSequence(best.sequence.pulses, f"map {spec.target.label()}")
    if not good and raise_on_failure:
        raise MappingError(f"best mapping error {best.error:.3e} above {tol:g}", best)
    return best


def template_library(target: TargetState) -> list[list[Transition]]:
    """Alternating sideband/carrier templates, shortest first.

    Lengths run from ``2*d - 1`` to ``2*d + 3`` for a ``d``-element target
    (odd lengths, starting and ending on a sideband), red only and with one
    blue sideband substituted at each position.
    """
    d = max(len(target.support), 1)
    out = []
    for length in range(2 * d - 1, 2 * d + 4, 2):
        base = [Transition.RED if i % 2 == 0 else Transition.CARRIER for i in range(length)]
        out.append(base)
        for i in range(0, length, 2):
            variant = list(base)
            variant[i] = Transition.BLUE
            out.append(variant)
    return out


def find_mapping(target: TargetState, restarts: int = 64, seed: int = 0,
                 templates=None, stop_at_first: bool = True) -> MappingResult:
    """Search the template library for the simplest mapping reaching tolerance."""
    spec = build_mapping_spec(target)
    if len(target.support) == 1:
        # single basis state: a carrier pi pulse sends it to e
        seq = PulseSequence((Pulse(Transition.CARRIER, 1.0, 0.0),), f"map {target.label()}")
        return MappingResult(seq, mapping_error(seq, spec), mapping_error(seq, spec) <= MAPPING_TOL)
    templates = template_library(target) if templates is None else templates
    found = []
    best_failure = None
    for i, template in enumerate(templates):
        res = optimize_mapping(spec, template, restarts=restarts, seed=seed + i)
        log.info("template %s: error %.2e (%d/%d)", [t.value for t in template],
                 res.error, res.n_success, restarts)
        if res.success:
            found.append(res)
            if stop_at_first and len(template) > len(found[0].sequence):
                break
        elif best_failure is None or res.error < best_failure.error:
            best_failure = res
    if not found:
        raise MappingError("no template reached the mapping tolerance", best_failure)
    return min(found, key=lambda r: r.sort_key)


def cached_mapping(target: TargetState) -> PulseSequence | None:
    """Shipped mapping for an equal superposition, or None.

    The cache holds optimizer output for a few equal superpositions; see
    ``demos/build_mapping_cache.py`` for how it was produced.
    """
    from importlib import resources

    levels = "".join(str(n) for n in target.support)
    if len(levels) != len(target.support) or not np.allclose(
            target.amplitudes, TargetState.equal(target.support).amplitudes, atol=1e-12):
        return None
    doc = json.loads(resources.files("fockcert").joinpath("data", "mappings.json").read_text())
    if levels not in doc:
        return None
    return PulseSequence.from_dict(doc[levels]["sequence"])


def sequence_key(seq: PulseSequence) -> tuple:
    d = [p.duration for p in seq]
    return (len(d), sum(d), max(d, default=0.0))


__all__ = [
    "TargetState", "MappingSpec", "MappingResult", "SynthesisError", "MappingError",
    "synthesize_creation", "build_mapping_spec", "mapping_error", "optimize_mapping",
    "template_library", "find_mapping", "default_truncation", "cached_mapping",
]
