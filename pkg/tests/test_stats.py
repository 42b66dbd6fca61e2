import json
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import skew

from fockcert.certifier import pattern_phases, trapezium_weights
from fockcert.stats import (
    CertifierResult,
    ShotRecord,
    bias_terms,
    c_gradient,
    central_moment_estimators,
    monte_carlo_pdf,
    naive_c,
    simulate_estimates,
    unbiased_c,
    variance_c,
)

ORACLE = json.loads((Path(__file__).parent / "fixtures" / "bias_oracle.json").read_text())
PHI = pattern_phases(31)
W = trapezium_weights(31)
THREE_LEVEL = (3 + 4 * np.cos(PHI) + 2 * np.cos(2 * PHI)) / 9
PATTERNS = {
    "three_level": (THREE_LEVEL, 47 / 27),
    "two_level": ((1 + np.cos(PHI)) / 2, 5 / 4),
    "damped": (0.05 + 0.8 * THREE_LEVEL, None),
}


def true_c(mu):
    return float(W @ mu ** 3 / (W @ mu) ** 2)


def record(successes, shots, phases=None):
    successes = np.asarray(successes)
    phases = np.zeros(len(successes)) if phases is None else phases
    return ShotRecord(phases, successes, shots)


# ---------------------------------------------------------------- records


def test_record_validation():
    with pytest.raises(ValueError):
        record([1, 2], 2)
    with pytest.raises(ValueError):
        record([1, 5], 4)
    with pytest.raises(ValueError):
        ShotRecord(np.zeros(3), np.array([1, 2]), 10)
    with pytest.raises(ValueError):
        CertifierResult(1.0, 1.0, -0.1, 1)


def test_record_csv_round_trip(tmp_path):
    rec = record([3, 40, 99], 100, phases=np.array([0.0, 0.1, 2.0]))
    rec.to_csv(tmp_path / "r.csv")
    back = ShotRecord.from_csv(tmp_path / "r.csv")
    assert_allclose(back.phases, rec.phases, rtol=0, atol=0)
    assert list(back.successes) == [3, 40, 99]
    assert back.shots_per_point == 100


# ---------------------------------------------------------------- moment estimators


def test_central_moment_examples():
    var, sk = central_moment_estimators(np.array([0.0, 1.0]), 10)
    assert_allclose(var, 0)
    assert_allclose(sk, 0)
    var, sk = central_moment_estimators(0.5, 101)
    assert var == pytest.approx(1 / 400)
    assert sk == 0
    with pytest.raises(ValueError):
        central_moment_estimators(0.5, 2)


@pytest.mark.parametrize("p", [0.1, 0.35, 0.8])
def test_central_moment_estimators_are_unbiased(p):
    n, runs = 100, 200_000
    rng = np.random.default_rng(11)
    phat = rng.binomial(n, p, size=runs) / n
    var, sk = central_moment_estimators(phat, n)
    true_var = p * (1 - p) / n
    true_skew = p * (1 - p) * (1 - 2 * p) / n ** 2
    assert abs(var.mean() - true_var) < 3 * var.std() / np.sqrt(runs)
    assert abs(sk.mean() - true_skew) < 3 * sk.std() / np.sqrt(runs)


# ---------------------------------------------------------------- estimators


def test_naive_c_examples():
    assert naive_c(record([30] * 5, 100), trapezium_weights(5)) == pytest.approx(0.3)
    big = 10 ** 9
    rec = record(np.round(THREE_LEVEL * big).astype(np.int64), big)
    assert naive_c(rec, W) == pytest.approx(47 / 27, abs=1e-8)
    with pytest.raises(ValueError):
        naive_c(record([0, 0, 0], 10), trapezium_weights(3))


@pytest.mark.parametrize("name", sorted(ORACLE))
def test_bias_terms_match_symbolic_expansion(name):
    ref = ORACLE[name]
    rec = record(ref["successes"], ref["shots"])
    w = trapezium_weights(len(ref["successes"]))
    z2, z3 = bias_terms(rec, w)
    assert_allclose(z2, ref["z2"], rtol=1e-12, atol=1e-18)
    assert_allclose(z3, ref["z3"], rtol=1e-12, atol=1e-20)
    res = unbiased_c(rec, w)
    assert res.c_naive == pytest.approx(ref["c_naive"], rel=1e-13)
    assert res.c_unbiased == pytest.approx(ref["c_unbiased"], rel=1e-13)
    assert_allclose(c_gradient(rec, w), ref["gradient"], rtol=1e-12, atol=1e-15)
    assert res.sigma == pytest.approx(ref["sigma"], rel=1e-12)


def test_bias_terms_against_live_symbolic_oracle():
    sympy = pytest.importorskip("sympy")  # noqa: F841
    import importlib.util

    spec = importlib.util.spec_from_file_location(
        "bias_expansion", Path(__file__).parent / "oracles" / "bias_expansion.py")
    oracle = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(oracle)
    ref = oracle.expand([7, 12, 3, 19], 20)
    rec = record(ref["successes"], ref["shots"])
    z2, z3 = bias_terms(rec, trapezium_weights(4))
    assert_allclose(z2, ref["z2"], rtol=1e-12)
    assert_allclose(z3, ref["z3"], rtol=1e-12)


def test_symmetric_points_have_no_third_order_term():
    _, z3 = bias_terms(record([50, 50, 50], 100), trapezium_weights(3))
    assert_allclose(z3, 0, atol=0)


def test_bias_vanishes_for_many_shots():
    big = 10 ** 12
    rec = record(np.round(THREE_LEVEL * big).astype(np.int64), big)
    z2, z3 = bias_terms(rec, W)
    assert np.abs(z2).max() < 1e-11 and np.abs(z3).max() < 1e-20
    assert variance_c(rec, W) < 1e-12


def test_deterministic_record_needs_no_correction():
    rec = record([0, 10, 10, 0, 10], 10)
    res = unbiased_c(rec, trapezium_weights(5))
    assert res.c_unbiased == res.c_naive
    assert res.sigma == 0


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    p = rng.uniform(0.05, 0.95, 7)
    w = trapezium_weights(7)
    n = 50
    fake = SimpleNamespace(proportions=p, shots_per_point=n)

    def c_hat(q):
        r = SimpleNamespace(proportions=q, shots_per_point=n)
        z2, z3 = bias_terms(r, w)
        return naive_c(r, w) - z2.sum() - z3.sum()

    h = 1e-6
    fd = [(c_hat(p + h * e) - c_hat(p - h * e)) / (2 * h) for e in np.eye(7)]
    assert_allclose(c_gradient(fake, w), fd, rtol=1e-6, atol=1e-9)


def test_variance_scales_inversely_with_shots():
    r100 = record(np.round(THREE_LEVEL * 100).astype(int), 100)
    r400 = record(np.round(THREE_LEVEL * 400).astype(int), 400)
    ratio = variance_c(r100, W) / variance_c(r400, W)
    assert ratio == pytest.approx(4.0, rel=0.15)


def test_estimators_are_permutation_equivariant():
    rng = np.random.default_rng(4)
    k = rng.integers(0, 101, 31)
    perm = rng.permutation(31)
    a = unbiased_c(record(k, 100), W)
    b = unbiased_c(record(k[perm], 100), W[perm])
    assert b.c_naive == pytest.approx(a.c_naive, rel=1e-13)
    assert b.c_unbiased == pytest.approx(a.c_unbiased, rel=1e-13)
    assert b.sigma == pytest.approx(a.sigma, rel=1e-12)
    z2a, _ = bias_terms(record(k, 100), W)
    z2b, _ = bias_terms(record(k[perm], 100), W[perm])
    assert_allclose(z2b, z2a[perm], rtol=1e-13)


# ---------------------------------------------------------------- Monte Carlo


@pytest.mark.parametrize("name", sorted(PATTERNS))
@pytest.mark.parametrize("n", [50, 100, 400])
def test_correction_is_consistent(name, n):
    mu, c = PATTERNS[name]
    c = true_c(mu) if c is None else c
    naive, fair = simulate_estimates(mu, W, n, runs=20_000, seed=n)
    se = fair.std() / np.sqrt(len(fair))
    assert abs(fair.mean() - c) < 3 * se


def test_simulation_is_chunk_invariant_and_seeded():
    a = simulate_estimates(THREE_LEVEL, W, 100, runs=25_000, seed=5)
    b = simulate_estimates(THREE_LEVEL, W, 100, runs=25_000, seed=5)
    assert_allclose(a[1], b[1], rtol=0, atol=0)
    c = simulate_estimates(THREE_LEVEL, W, 100, runs=25_000, seed=6)
    assert not np.allclose(a[1], c[1])
    # the first chunk does not depend on how many runs follow it
    d = simulate_estimates(THREE_LEVEL, W, 100, runs=10_000, seed=5)
    assert_allclose(a[1][:10_000], d[1], rtol=0, atol=0)


def test_monte_carlo_pdf(tmp_path):
    pdf = monte_carlo_pdf(THREE_LEVEL, 100, runs=100_000, seed=0)
    width = np.diff(pdf.bin_centers).mean()
    assert pdf.density_naive.sum() * width == pytest.approx(1.0, rel=1e-9)
    assert pdf.density_unbiased.sum() * width == pytest.approx(1.0, rel=1e-9)
    # centred on the true value, close to Gaussian with a small detectable skew
    assert abs(pdf.unbiased.mean() - 47 / 27) < 3 * pdf.unbiased.std() / np.sqrt(len(pdf.unbiased))
    s = skew(pdf.unbiased)
    assert 5 * np.sqrt(6 / len(pdf.unbiased)) < abs(s) < 0.2
    again = monte_carlo_pdf(THREE_LEVEL, 100, runs=100_000, seed=0)
    assert_allclose(again.density_unbiased, pdf.density_unbiased, rtol=0, atol=0)
    pdf.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "bin_center,density_naive,density_unbiased"
    assert len(lines) == 101


def test_monte_carlo_pdf_checks():
    with pytest.raises(ValueError):
        monte_carlo_pdf(THREE_LEVEL, 100, runs=1000)
    with pytest.raises(ValueError):
        monte_carlo_pdf(THREE_LEVEL, 100, J=30, runs=10_000)
