"""End-to-end simulated experiments.

A run prepares the motional superposition with a creation sequence, then for
every free-evolution phase applies the measurement mapping with its sideband
phases offset by that phase and records binary qubit shots.  Shots are
collected in rasters, each visiting the phase points in a freshly shuffled
order.  The module also holds the blue-sideband population probe with its
maximum-likelihood fit and the likelihood comparison against the best
``k``-coherent explanation of a data set.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.stats import chi2

from .certifier import (
    InterferencePattern,
    PovmElement,
    pattern_phases,
    trapezium_weights,
    certifier_from_values,
)
from .core import (
    JointDensity,
    NoiseModel,
    PhysicalParams,
    PulseSequence,
    Transition,
    apply_pulse_nonideal,
    dimension,
    rephase_propagator,
    sequence_propagators,
    sequence_unitary,
    shift_sequence_phases,
    thermal_density,
)
from .stats import CertifierResult, ShotRecord, unbiased_c
from .synthesis import (
    TargetState,
    cached_mapping,
    default_truncation,
    find_mapping,
    synthesize_creation,
)
from .thresholds import KCoherentParametrization

log = logging.getLogger(__name__)


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *key])))


# --------------------------------------------------------------------------
# fixtures


def table_fixture(name: str) -> dict:
    """Creation and mapping sequences shipped with the package.

    ``name`` is one of ``"012"``, ``"12"``, ``"0123"``.  The returned dict has
    ``target`` (a TargetState), ``creation``, ``mapping`` and
    ``mapping_phase_origin`` (radians).
    """
    text = resources.files("fockcert").joinpath("data", f"table_{name}.json").read_text()
    doc = json.loads(text)
    return {
        "target": TargetState.equal(doc["target_levels"]),
        "creation": PulseSequence.from_dict(doc["sequences"]["creation"]),
        "mapping": PulseSequence.from_dict(doc["sequences"]["mapping"]),
        "mapping_phase_origin": np.pi * doc["mapping_phase_origin_over_pi"],
    }


# --------------------------------------------------------------------------
# interference experiments


@dataclass
class ExperimentConfig:
    """Everything that defines a simulated certification run.

    ``off_resonant`` switches on the non-addressed Lamb--Dicke terms; thermal
    occupation, detunings and dephasing are read from ``params``.  When
    ``creation`` or ``mapping`` is None they are synthesized for ``target``.
    """

    target: TargetState
    params: PhysicalParams = field(default_factory=PhysicalParams)
    off_resonant: bool = False
    n_points: int = 31
    shots_per_point: int = 400
    rasters: int = 4
    seed: int = 0
    truncation: int | None = None
    creation: PulseSequence | None = None
    mapping: PulseSequence | None = None
    measure_excited: bool = True
    mapping_restarts: int = 64

    def __post_init__(self):
        if self.n_points < 2:
            raise ValueError("need at least two phase points")
        if not 1 <= self.rasters <= self.shots_per_point:
            raise ValueError("rasters must lie in [1, shots_per_point]")
        if self.shots_per_point < 3:
            raise ValueError("need at least three shots per point")

    @property
    def N(self) -> int:
        return default_truncation(self.target) if self.truncation is None else self.truncation

    @property
    def ideal(self) -> bool:
        p = self.params
        return (not self.off_resonant and p.carrier_detuning == 0
                and p.sideband_detuning == 0 and p.motional_dephasing_rate == 0)

    def shots_per_raster(self) -> list[int]:
        base, extra = divmod(self.shots_per_point, self.rasters)
        return [base + (r < extra) for r in range(self.rasters)]


def resolve_sequences(cfg: ExperimentConfig) -> tuple[PulseSequence, PulseSequence]:
    creation = cfg.creation or synthesize_creation(cfg.target, truncation=cfg.N)
    mapping = cfg.mapping or cached_mapping(cfg.target)
    if mapping is None:
        mapping = find_mapping(cfg.target, restarts=cfg.mapping_restarts, seed=cfg.seed).sequence
    return creation, mapping


def _excited(rho: np.ndarray, N: int, excited: bool) -> float:
    d = np.real(np.diag(rho))
    half = N + 1
    return float(d[half:].sum() if excited else d[:half].sum())


def expected_pattern(cfg: ExperimentConfig, creation: PulseSequence | None = None,
                     mapping: PulseSequence | None = None) -> InterferencePattern:
    """Noise-free-sampling pattern at ``cfg.n_points`` phases.

    Phase ``phi`` offsets the mapping's sideband phases, which is equivalent
    to free evolution by ``-phi``.
    """
    if creation is None or mapping is None:
        c, m = resolve_sequences(cfg)
        creation, mapping = creation or c, mapping or m
    N, params = cfg.N, cfg.params
    phases = pattern_phases(cfg.n_points)
    rho0 = thermal_density(params.thermal_nbar, N).matrix
    noise = NoiseModel(off_resonant=cfg.off_resonant)
    p = np.empty(len(phases))

    if cfg.ideal:
        U = sequence_unitary(creation, N)
        rho = U @ rho0 @ U.conj().T
        for j, phi in enumerate(phases):
            V = sequence_unitary(shift_sequence_phases(mapping, phi), N)
            p[j] = _excited(V @ rho @ V.conj().T, N, cfg.measure_excited)
    elif params.motional_dephasing_rate == 0:
        Us, t_end = sequence_propagators(creation, params, N, 0.0, noise)
        rho = rho0
        for U in Us:
            rho = U @ rho @ U.conj().T
        Ms, _ = sequence_propagators(mapping, params, N, t_end, noise)
        for j, phi in enumerate(phases):
            V = np.eye(dimension(N), dtype=complex)
            for U, old, new in zip(Ms, mapping, shift_sequence_phases(mapping, phi)):
                V = rephase_propagator(U, old, new.phase, N) @ V
            p[j] = _excited(V @ rho @ V.conj().T, N, cfg.measure_excited)
    else:
        state = JointDensity(rho0, N)
        t = 0.0
        for pulse in creation:
            state = apply_pulse_nonideal(state, pulse, params, start_time=t, noise=noise)
            t += params.pulse_time(pulse)
        for j, phi in enumerate(phases):
            s, tj = state, t
            for pulse in shift_sequence_phases(mapping, phi):
                s = apply_pulse_nonideal(s, pulse, params, start_time=tj, noise=noise)
                tj += params.pulse_time(pulse)
            p[j] = _excited(s.matrix, N, cfg.measure_excited)
    return InterferencePattern(phases, np.clip(p, 0.0, 1.0), trapezium_weights(cfg.n_points))


def sample_shots(pattern: InterferencePattern, cfg: ExperimentConfig) -> ShotRecord:
    """Binomial shots collected raster by raster in shuffled phase order."""
    J = len(pattern)
    counts = np.zeros(J, dtype=np.int64)
    for r, shots in enumerate(cfg.shots_per_raster()):
        rng = _stream(cfg.seed, 1, r)
        order = rng.permutation(J)
        counts[order] += rng.binomial(shots, pattern.probabilities[order])
    return ShotRecord(pattern.phases, counts, cfg.shots_per_point)


def run_experiment(cfg: ExperimentConfig, z: float = 1.0) -> tuple[ShotRecord, CertifierResult]:
    creation, mapping = resolve_sequences(cfg)
    pattern = expected_pattern(cfg, creation, mapping)
    record = sample_shots(pattern, cfg)
    return record, unbiased_c(record, pattern.weights, z)


def detuning_sweep(cfg: ExperimentConfig, deltas, kind: str = "sideband") -> list[dict]:
    """``C`` of the exact pattern as one frequency is miscalibrated.

    ``kind="sideband"`` shifts the trap frequency seen by the sidebands and
    ``kind="carrier"`` shifts the qubit frequency.
    """
    if kind not in ("sideband", "carrier"):
        raise ValueError("kind must be 'sideband' or 'carrier'")
    creation, mapping = resolve_sequences(cfg)
    rows = []
    for delta in deltas:
        params = replace(cfg.params, **{f"{kind}_detuning": float(delta)})
        pat = expected_pattern(replace(cfg, params=params), creation, mapping)
        rows.append({"delta_hz": float(delta),
                     "c": certifier_from_values(pat.probabilities, pat.weights),
                     "visibility": pat.visibility})
    return rows


def write_rows(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


# --------------------------------------------------------------------------
# blue-sideband population probe


def probe_curve(populations, sideband_rabi: float, detuning: float, dephasing: float,
                times, excited_populations=None) -> np.ndarray:
    """Excitation probability after a blue-sideband pulse of each length.

    Each ``|g,n>`` flops to ``|e,n+1>`` at ``sideband_rabi * sqrt(n+1)``,
    slowed and shrunk by the detuning and damped by
    ``exp(-(dephasing * (n+1) * t)**2)``.  ``|e,n>`` with ``n >= 1`` flops
    down to ``|g,n-1>``; ``|e,0>`` is dark.
    """
    t = np.asarray(times, float)[:, None]

    def flop(k):
        k = np.asarray(k, float)
        bare = sideband_rabi * np.sqrt(k)
        gen = np.hypot(bare, detuning)
        amp = np.divide(bare ** 2, gen ** 2, out=np.zeros_like(gen), where=gen > 0)
        decay = np.exp(-(dephasing * k * t) ** 2)
        return 0.5 * amp * (1 - np.cos(2 * np.pi * gen * t) * decay)

    P = np.asarray(populations, float)
    out = flop(np.arange(1, len(P) + 1)) @ P
    if excited_populations is not None:
        Q = np.asarray(excited_populations, float)
        out = out + (1 - flop(np.arange(len(Q)))) @ Q
    return out


def blue_sideband_probe(rho: JointDensity, params: PhysicalParams, times) -> np.ndarray:
    pops = rho.populations().reshape(2, rho.truncation + 1)
    return probe_curve(pops[0], params.sideband_rabi, params.detuning(Transition.BLUE),
                       params.motional_dephasing_rate, times, pops[1])


@dataclass
class ProbeFit:
    populations: np.ndarray
    sideband_rabi: float
    detuning: float
    dephasing: float
    log_likelihood: float
    converged: bool
    bounds: dict = field(default_factory=dict)
    message: str = ""

    def __post_init__(self):
        p = np.asarray(self.populations, float)
        if np.any(p < 0) or p.sum() > 1 + 1e-9:
            raise ValueError("populations must be non-negative and sum to at most one")


def _binomial_loglike(k, n, p):
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return float(np.sum(k * np.log(p) + (n - k) * np.log1p(-p)))


def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def _probe_jacobian(pops, rabi, det, deph, times):
    """Ground-state probe curve and its derivatives.

    Returns ``p`` of shape ``(T,)`` and ``(F, dp/drabi, dp/ddet, dp/ddeph)``
    where ``F[:, m]`` is the flop of level ``m`` (so ``dp/dP_m``).
    """
    t = np.asarray(times, float)[:, None]
    k = np.arange(1, len(pops) + 1, dtype=float)
    b = rabi * np.sqrt(k)
    g = np.maximum(np.hypot(b, det), 1e-300)
    a = b ** 2 / g ** 2
    arg = 2 * np.pi * g * t
    C, S = np.cos(arg), np.sin(arg)
    D = np.exp(-(deph * k * t) ** 2)
    F = 0.5 * a * (1 - C * D)
    df_dg = 0.5 * a * S * D * 2 * np.pi * t
    df_da = 0.5 * (1 - C * D)
    df_db = df_da * (2 * b * det ** 2 / g ** 4) + df_dg * (b / g)
    df_ddet = df_da * (-2 * b ** 2 * det / g ** 4) + df_dg * (det / g)
    df_ddeph = a * C * D * deph * (k * t) ** 2
    P = np.asarray(pops, float)
    return F @ P, (F, (df_db * np.sqrt(k)) @ P, df_ddet @ P, df_ddeph @ P)


def _probe_mle(times, k, n, levels, starts, polish_only=False, margin=0.0):
    """Maximise the binomial likelihood of the probe model from each start.

    A later start replaces the current best only if it raises the
    log-likelihood by more than ``margin``, so ties go to earlier starts.
    """
    times = np.asarray(times, float)
    tscale = times.max()

    def unpack(x):
        pops = _softmax(np.r_[0.0, x[:levels - 1]])
        # frequencies in units of 1/tscale keep the problem well scaled
        return pops, abs(x[levels - 1]) / tscale, abs(x[levels]) / tscale, abs(x[levels + 1]) / tscale

    def nll_and_grad(x):
        pops, rabi, det, deph = unpack(x)
        p, (F, dr, dd, dg) = _probe_jacobian(pops, rabi, det, deph, times)
        pc = np.clip(p, 1e-12, 1 - 1e-12)
        value = -float(np.sum(k * np.log(pc) + (n - k) * np.log1p(-pc)))
        r = -(k / pc - (n - k) / (1 - pc))
        r[pc != p] = 0.0
        gP = F.T @ r
        gz = pops * (gP - pops @ gP)
        signs = np.sign(x[levels - 1:]) / tscale
        signs[signs == 0] = 1 / tscale
        grad = np.r_[gz[1:], np.array([r @ dr, r @ dd, r @ dg]) * signs]
        return value, grad

    best = None
    for x0 in starts:
        res = minimize(nll_and_grad, x0, jac=True, method="BFGS",
                       options={"maxiter": 100 if polish_only else 1000})
        if best is None or res.fun < best.fun - margin:
            best = res
    return best, unpack


def fit_probe(times, successes, shots: int, levels: int = 3, rabi_guess: float | None = None,
              bootstrap: int = 1000, seed: int = 0) -> ProbeFit:
    """Maximum-likelihood populations, sideband Rabi frequency, detuning and dephasing.

    One-sigma bounds are the 16th and 84th percentiles of fits to
    ``bootstrap`` resampled data sets (shots redrawn at every time point).
    The fit is reported as not converged when the data show no significant
    oscillation, since the frequency is then unidentifiable.
    """
    times = np.asarray(times, float)
    k = np.asarray(successes)
    if len(times) < 4 * levels:
        raise ValueError("need at least four time points per population")
    if rabi_guess is None:
        rabi_guess = _dominant_frequency(times, k / shots)

    # The periodogram peak may belong to any level, so try each harmonic.  A
    # lone sinusoid is explained equally well by any single level with a
    # rescaled Rabi frequency; the lowest level is kept unless a higher one
    # is better by a likelihood-ratio test at 95% with one degree of freedom.
    tscale = times.max()
    starts = [np.r_[np.zeros(levels - 1), rabi_guess / np.sqrt(m) * tscale, 0.0, 0.1]
              for m in range(1, levels + 1)]
    best, unpack = _probe_mle(times, k, shots, levels, starts, margin=0.5 * chi2.ppf(0.95, 1))
    pops, rabi, det, deph = unpack(best.x)

    # flat data carry no frequency information
    flat = _binomial_loglike(k, shots, np.full(len(k), k.sum() / (shots * len(k))))
    gain = -best.fun - flat
    converged = bool(np.isfinite(best.fun) and gain > 10.0)
    message = "" if converged else f"no significant oscillation (log-likelihood gain {gain:.2f})"

    bounds = {}
    if converged and bootstrap:
        rng = _stream(seed, 3)
        draws = []
        for _ in range(bootstrap):
            kb = rng.binomial(shots, k / shots)
            res, _ = _probe_mle(times, kb, shots, levels, [best.x], polish_only=True)
            pb, rb, db, gb = unpack(res.x)
            draws.append(np.r_[pb, rb, db, gb])
        draws = np.array(draws)
        lo, hi = np.percentile(draws, [15.865, 84.135], axis=0)
        names = [f"P{n}" for n in range(levels)] + ["sideband_rabi", "detuning", "dephasing"]
        bounds = {name: (float(a), float(b)) for name, a, b in zip(names, lo, hi)}
    return ProbeFit(pops, rabi, det, deph, -float(best.fun), converged, bounds, message)


def _dominant_frequency(times, y):
    """Peak of a dense periodogram, used only to seed the fit."""
    span = times.max() - times.min()
    step = np.min(np.diff(np.sort(times)))
    freqs = np.linspace(0.5 / span, 0.5 / step, 2000)
    yc = y - y.mean()
    power = np.abs(np.exp(-2j * np.pi * np.outer(freqs, times)) @ yc)
    return float(freqs[np.argmax(power)])


# --------------------------------------------------------------------------
# likelihood of k-coherent explanations


@dataclass
class LikelihoodFit:
    probabilities: np.ndarray
    log_likelihood: float
    density: np.ndarray
    k: int


def _motional_pattern(rho_mot, B_gg, n, phases):
    """``Tr[B rho_phi]`` for a motional state in the ground manifold."""
    kernel = rho_mot * B_gg.T
    diff = n[:, None] - n[None, :]
    ks = np.arange(-n.max(), n.max() + 1)
    coeff = np.array([kernel[diff == d].sum() for d in ks])
    return np.real(np.exp(-1j * np.outer(phases, ks)) @ coeff)


def likelihood_floor_fit(record: ShotRecord, k: int, known_populations,
                         mapping: PulseSequence, truncation: int,
                         A: PovmElement | None = None, restarts: int = 5,
                         seed: int = 0) -> LikelihoodFit:
    """Best ``k``-coherent motional state with the given Fock populations.

    A ``k``-coherent state ``sigma`` with positive diagonal is rescaled as
    ``D sigma D`` with ``D = diag(sqrt(P / diag(sigma)))``.  The congruence
    keeps every pure component on its support, so the result is still
    ``k``-coherent, and its diagonal is exactly ``P``.  The record's phases
    are taken as offsets of the mapping's sideband phases.
    """
    P = np.asarray(known_populations, float)
    if np.any(P < 0) or abs(P.sum() - 1) > 1e-9:
        raise ValueError("known populations must be a probability vector")
    levels = np.flatnonzero(P > 0)
    dim = len(levels)
    k = min(k, dim)
    N = truncation
    U = sequence_unitary(mapping, N)
    A = PovmElement.qubit(N, 1) if A is None else A
    B = U.conj().T @ A.matrix @ U
    # the mapping is fixed; free evolution by -phi stands in for the phase offsets
    B_gg = B[np.ix_(levels, levels)]
    n = levels.astype(float)
    phases = -record.phases
    kk, shots = record.successes, record.shots_per_point
    par = KCoherentParametrization(dim, k)

    def state(x):
        sigma = par.decode(x)
        d = np.sqrt(P[levels] / np.maximum(np.real(np.diag(sigma)), 1e-300))
        return d[:, None] * sigma * d[None, :]

    def nll(x):
        p = _motional_pattern(state(x), B_gg, levels, phases)
        return -_binomial_loglike(kk, shots, p)

    rng = _stream(seed, 4)
    best = None
    for _ in range(restarts if k > 1 else 1):
        res = minimize(nll, par.random_params(rng), method="BFGS")
        if best is None or res.fun < best.fun:
            best = res
    rho = state(best.x)
    p = np.clip(_motional_pattern(rho, B_gg, levels, phases), 0, 1)
    full = np.zeros((N + 1, N + 1), complex)
    full[np.ix_(levels, levels)] = rho
    return LikelihoodFit(p, -float(best.fun), full, k)
