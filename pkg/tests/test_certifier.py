import json
from fractions import Fraction

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import unitary_group

from fockcert.certifier import (
    THRESHOLDS,
    InterferencePattern,
    PovmElement,
    UndefinedCertifier,
    certifier_value,
    certify,
    exact_points,
    moment,
    naive_mapping_benchmark,
    pattern_phases,
    pattern_values,
    report,
    sample_pattern,
    threshold,
    trapezium_weights,
    write_report,
)
from fockcert.core import JointDensity, JointState, dimension, thermal_density
from fockcert.synthesis import TargetState, cached_mapping, default_truncation
from fockcert.thresholds import (
    KCoherentParametrization,
    PovmParametrization,
    exact_certifier,
)


def pattern_from(values):
    J = len(values)
    return InterferencePattern(pattern_phases(J), values, trapezium_weights(J))


def exact_moments(q):
    """M1 and M3 of |sum_n q_n exp(-i n phi)|**2 from its Fourier coefficients."""
    a = np.convolve(q, q[::-1])  # coefficients of p, lags -(d-1)..d-1
    p3 = np.convolve(np.convolve(a, a), a)
    return a[len(q) - 1], p3[len(p3) // 2]


# ---------------------------------------------------------------- quadrature


def test_trapezium_weights():
    w = trapezium_weights(31)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    assert w[0] == pytest.approx(w[1] / 2)
    assert w[-1] == pytest.approx(w[1] / 2)
    assert_allclose(pattern_phases(5), [0, np.pi / 2, np.pi, 3 * np.pi / 2, 2 * np.pi])


def test_moments_of_constant_pattern():
    pat = pattern_from(np.full(9, 0.3))
    for n in (1, 2, 3):
        assert moment(pat, n) == pytest.approx(0.3 ** n, rel=1e-14)


def test_moments_of_cosine_pattern():
    for J in (5, 7, 11):
        phi = pattern_phases(J)
        assert moment(pattern_from((1 + np.cos(phi)) / 2), 1) == pytest.approx(0.5, abs=1e-15)
    for J in (9, 12, 31):
        phi = pattern_phases(J)
        assert moment(pattern_from((1 + np.cos(phi)) / 2), 3) == pytest.approx(5 / 16, abs=1e-15)


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_quadrature_is_exact_above_three_times_degree(d):
    rng = np.random.default_rng(d)
    q = rng.dirichlet(np.ones(d))
    m1, m3 = exact_moments(q)
    for J in (3 * (d - 1) + 2, 3 * (d - 1) + 5, 31):
        phi = pattern_phases(J)
        p = np.abs(np.exp(-1j * np.outer(phi, np.arange(d))) @ q) ** 2
        pat = pattern_from(p)
        assert moment(pat, 1) == pytest.approx(m1, abs=1e-12)
        assert moment(pat, 3) == pytest.approx(m3, abs=1e-12)


def test_exact_points_rule():
    assert exact_points(8) - 1 > 3 * 8


# ---------------------------------------------------------------- patterns


def test_diagonal_state_gives_flat_pattern():
    N = 8
    rho = thermal_density(0.4, N)
    rng = np.random.default_rng(0)
    U = unitary_group.rvs(dimension(N), random_state=rng)
    p = pattern_values(rho, U, None, np.linspace(0, 2 * np.pi, 17))
    assert np.ptp(p) < 1e-12
    pat = sample_pattern(rho, U)
    assert certifier_value(pat) == pytest.approx(moment(pat, 1), rel=1e-12)
    assert certifier_value(pat) <= 1


def test_three_level_pattern_shape():
    target = TargetState.equal([0, 1, 2])
    N = default_truncation(target)
    phi = np.linspace(0, 2 * np.pi, 40)
    p = pattern_values(target.joint(N), cached_mapping(target), None, phi)
    assert_allclose(p, (3 + 4 * np.cos(phi) + 2 * np.cos(2 * phi)) / 9, atol=1e-10)


@pytest.mark.parametrize("levels,value", [([0, 1], Fraction(5, 4)), ([1, 2], Fraction(5, 4)),
                                          ([0, 1, 2], Fraction(47, 27))])
def test_ideal_certifier_values(levels, value):
    target = TargetState.equal(levels)
    N = default_truncation(target)
    pat = sample_pattern(target.joint(N), cached_mapping(target), n_points=exact_points(N))
    assert certifier_value(pat) == pytest.approx(float(value), abs=1e-9)


def test_measuring_ground_flips_the_pattern():
    target = TargetState.equal([0, 1])
    N = default_truncation(target)
    phi = np.linspace(0, 2 * np.pi, 9)
    e = pattern_values(target.joint(N), cached_mapping(target), None, phi)
    g = pattern_values(target.joint(N), cached_mapping(target), None, phi, measure_excited=False)
    assert_allclose(e + g, 1, atol=1e-12)


def test_zero_signal_is_undefined():
    with pytest.raises(UndefinedCertifier):
        certifier_value(pattern_from(np.zeros(5)))


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        pattern_values(JointState.basis(0, 0, 4), None, PovmElement.qubit(5), [0.0])


def test_povm_validation():
    with pytest.raises(ValueError):
        PovmElement(np.diag([1.2, 0.0]))
    with pytest.raises(ValueError):
        PovmElement(np.array([[0.5, 0.1], [0.2, 0.5]]))
    A = PovmElement.qubit(3)
    assert np.trace(A.matrix).real == 4


def test_scaling_the_measurement_scales_c():
    rng = np.random.default_rng(3)
    sp = KCoherentParametrization(3, 3)
    pp = PovmParametrization(3, 2)
    for _ in range(20):
        rho = sp.decode(sp.random_params(rng))
        A = pp.decode(pp.random_params(rng))
        c = exact_certifier(rho, A)[0]
        alpha = rng.uniform(0.05, 1)
        assert exact_certifier(rho, alpha * A)[0] == pytest.approx(alpha * c, rel=1e-10)
        assert exact_certifier(rho * np.exp(0.7j) * np.exp(-0.7j), A)[0] == pytest.approx(c)


# ---------------------------------------------------------------- soundness


def test_random_two_coherent_states_never_exceed_five_quarters():
    rng = np.random.default_rng(2024)
    worst, worst_flat = 0.0, 0.0
    for i in range(10_000):
        dim = int(rng.integers(2, 6))
        sp = KCoherentParametrization(dim, 2)
        pp = PovmParametrization(dim, int(rng.integers(1, dim + 1)))
        rho = sp.decode(sp.random_params(rng))
        A = pp.decode(pp.random_params(rng))
        U = unitary_group.rvs(dim, random_state=rng) if dim > 1 else np.eye(1)
        worst = max(worst, exact_certifier(rho, U.conj().T @ A @ U)[0])
        flat = np.diag(np.diag(rho))
        worst_flat = max(worst_flat, exact_certifier(flat, A)[0])
    assert worst <= 1.25 + 1e-9
    assert worst_flat <= 1 + 1e-9


def test_random_joint_mappings_keep_two_level_states_below_threshold():
    target = TargetState.equal([0, 1])
    N = 4
    rng = np.random.default_rng(7)
    for _ in range(200):
        U = unitary_group.rvs(dimension(N), random_state=rng)
        pat = sample_pattern(target.joint(N), U, n_points=exact_points(N))
        assert certifier_value(pat) <= 1.25 + 1e-9


# ---------------------------------------------------------------- decisions


def test_threshold_table():
    assert [threshold(k) for k in (1, 2, 3)] == [1, Fraction(5, 4), Fraction(179, 96)]
    values = [THRESHOLDS[k] for k in sorted(THRESHOLDS)]
    assert values == sorted(values)


@pytest.mark.parametrize("c,sigma,z,level", [
    (1.54, 0.02, 1.0, 3),
    (1.35, 0.03, 1.0, 3),
    (0.9, 0.5, 1.0, 1),
    (1.9, 0.0, 0.0, 4),
    (1.26, 0.02, 1.0, 2),
    (1.26, 0.02, 0.0, 3),
])
def test_certify(c, sigma, z, level):
    assert certify(c, sigma, z) == level


def test_naive_mapping_benchmarks():
    c, vis = naive_mapping_benchmark(TargetState.equal([1, 2]))
    assert vis == pytest.approx(0.88, abs=0.02)
    c, vis = naive_mapping_benchmark(TargetState.equal([0, 1, 2]))
    assert c == pytest.approx(0.92, abs=0.02)
    assert vis == pytest.approx(0.68, abs=0.02)
    c, vis = naive_mapping_benchmark(TargetState.equal([0, 1]))
    assert vis == pytest.approx(1.0, abs=1e-9)
    assert c == pytest.approx(1.25, abs=1e-9)


# ---------------------------------------------------------------- export


def test_pattern_csv_round_trip(tmp_path):
    target = TargetState.equal([0, 1, 2])
    N = default_truncation(target)
    pat = sample_pattern(target.joint(N), cached_mapping(target))
    path = tmp_path / "pattern.csv"
    pat.to_csv(path)
    assert path.read_text().splitlines()[0] == "phase_rad,probability,weight"
    back = InterferencePattern.from_csv(path)
    assert_allclose(back.probabilities, pat.probabilities, rtol=0, atol=0)
    assert_allclose(back.weights, pat.weights, rtol=0, atol=0)


def test_report(tmp_path):
    pat = pattern_from((1 + np.cos(pattern_phases(31))) / 2)
    doc = report(pat, sigma=0.01)
    assert set(doc) == {"m1", "m3", "c", "sigma", "certified_level", "thresholds"}
    assert doc["c"] == pytest.approx(1.25)
    assert doc["thresholds"]["3"] == "179/96"
    write_report(tmp_path / "r.json", doc)
    assert json.loads((tmp_path / "r.json").read_text())["certified_level"] == 2


def test_density_and_state_inputs_agree():
    target = TargetState.equal([0, 1, 2])
    N = default_truncation(target)
    psi = target.joint(N)
    a = pattern_values(psi, cached_mapping(target), None, [0.3, 1.1])
    b = pattern_values(JointDensity(psi.density().matrix, N), cached_mapping(target), None,
                       [0.3, 1.1])
    assert_allclose(a, b, atol=1e-14)
