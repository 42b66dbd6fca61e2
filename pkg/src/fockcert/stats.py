"""Finite-shot statistics of the moment ratio ``C = M3 / M1**2``.

Each pattern point is a binomial proportion ``p_j = k_j / n``.  Plugging the
proportions straight into ``C`` gives an estimator biased upwards by terms of
order ``1/n``; the correction below subtracts the second- and third-order
terms of the Taylor expansion of ``E[C]`` about the true probabilities, with
the central moments replaced by their unbiased binomial estimators.  The
standard error follows from first-order error propagation through the
corrected estimator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .certifier import certify


@dataclass(frozen=True, eq=False)
class ShotRecord:
    """Success counts for ``shots_per_point`` binary shots at each phase."""

    phases: np.ndarray
    successes: np.ndarray
    shots_per_point: int

    def __post_init__(self):
        phases = np.asarray(self.phases, float)
        k = np.asarray(self.successes)
        if phases.shape != k.shape:
            raise ValueError("phases and successes differ in length")
        n = int(self.shots_per_point)
        if n < 3:
            raise ValueError("need at least three shots per point")
        if np.any(k < 0) or np.any(k > n) or np.any(k != np.round(k)):
            raise ValueError("successes must be integers in [0, shots_per_point]")
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "successes", k.astype(np.int64))
        object.__setattr__(self, "shots_per_point", n)

    @property
    def proportions(self) -> np.ndarray:
        return self.successes / self.shots_per_point

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["phase_rad", "successes", "shots"])
            for phi, k in zip(self.phases, self.successes):
                w.writerow([repr(float(phi)), int(k), self.shots_per_point])

    @classmethod
    def from_csv(cls, path: str | Path) -> "ShotRecord":
        data = np.genfromtxt(path, delimiter=",", names=True)
        shots = np.atleast_1d(data["shots"]).astype(int)
        if np.any(shots != shots[0]):
            raise ValueError("shot count must be the same at every point")
        return cls(np.atleast_1d(data["phase_rad"]),
                   np.atleast_1d(data["successes"]).astype(int), int(shots[0]))


@dataclass(frozen=True)
class CertifierResult:
    c_naive: float
    c_unbiased: float
    sigma: float
    certified_level: int

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be non-negative")

    def to_dict(self) -> dict:
        return {"c_naive": self.c_naive, "c_unbiased": self.c_unbiased,
                "sigma": self.sigma, "certified_level": self.certified_level}


def central_moment_estimators(p, n: int):
    """Unbiased binomial estimators of the 2nd and 3rd central moments of ``k/n``."""
    if n < 3:
        raise ValueError("need n >= 3")
    p = np.asarray(p, float)
    var = p * (1 - p) / (n - 1)
    skew = p * (1 - p) * (1 - 2 * p) / ((n - 1) * (n - 2))
    return var, skew


def _proportions(record, weights):
    p = np.asarray(record.proportions, float)
    w = np.asarray(weights, float)
    if p.shape != w.shape:
        raise ValueError("record and weights differ in length")
    return p, w


def naive_c(record: ShotRecord, weights) -> float:
    p, w = _proportions(record, weights)
    m1 = w @ p
    if m1 <= 0:
        raise ValueError("no successes recorded, C is undefined")
    return float(w @ p ** 3 / m1 ** 2)


def bias_terms(record: ShotRecord, weights) -> tuple[np.ndarray, np.ndarray]:
    """Per-point second- and third-order bias terms ``(z2, z3)``."""
    p, w = _proportions(record, weights)
    var, skew = central_moment_estimators(p, record.shots_per_point)
    m1, m3 = w @ p, w @ p ** 3
    if m1 <= 0:
        raise ValueError("no successes recorded, C is undefined")
    g = 3 * w / m1 ** 2 * (p - 2 * w * p ** 2 / m1 + w * m3 / m1 ** 2)
    h = w / m1 ** 2 * (1 - 6 * w * p / m1 + 9 * w ** 2 * p ** 2 / m1 ** 2
                       - 4 * w ** 2 * m3 / m1 ** 3)
    return g * var, h * skew


def c_gradient(record: ShotRecord, weights) -> np.ndarray:
    """``d c_unbiased / d p_j`` for every point."""
    p, w = _proportions(record, weights)
    n = record.shots_per_point
    var, skew = central_moment_estimators(p, n)
    dvar = (1 - 2 * p) / (n - 1)
    dskew = (1 - 6 * p + 6 * p ** 2) / ((n - 1) * (n - 2))
    m1, m3 = w @ p, w @ p ** 3

    grad = 3 * w * p ** 2 / m1 ** 2 - 2 * w * m3 / m1 ** 3

    # second-order terms z2_k = g_k var_k, g_k depends on all p through m1, m3
    g = 3 * w / m1 ** 2 * (p - 2 * w * p ** 2 / m1 + w * m3 / m1 ** 2)
    wj, wk = w[:, None], w[None, :]
    pj, pk = p[:, None], p[None, :]
    dg = (-6 * wj * wk * pk / m1 ** 3 + 18 * wj * wk ** 2 * pk ** 2 / m1 ** 4
          + 9 * wj * wk ** 2 * pj ** 2 / m1 ** 4 - 12 * wj * wk ** 2 * m3 / m1 ** 5)
    dg[np.diag_indices_from(dg)] += 3 * w / m1 ** 2 - 12 * w ** 2 * p / m1 ** 3
    dz2 = dg @ var + g * dvar

    # third-order terms z3_k = h_k skew_k
    h = w / m1 ** 2 * (1 - 6 * w * p / m1 + 9 * w ** 2 * p ** 2 / m1 ** 2
                       - 4 * w ** 2 * m3 / m1 ** 3)
    dh = wj * (-2 * wk / m1 ** 3 + 18 * wk ** 2 * pk / m1 ** 4
               - 36 * wk ** 3 * pk ** 2 / m1 ** 5 - 12 * wk ** 3 * pj ** 2 / m1 ** 5
               + 20 * wk ** 3 * m3 / m1 ** 6)
    dh[np.diag_indices_from(dh)] += -6 * w ** 2 / m1 ** 3 + 18 * w ** 3 * p / m1 ** 4
    dz3 = dh @ skew + h * dskew

    return grad - dz2 - dz3


def variance_c(record: ShotRecord, weights) -> float:
    """Delta-method variance of the bias-corrected estimator."""
    p, _ = _proportions(record, weights)
    var, _ = central_moment_estimators(p, record.shots_per_point)
    return float(np.sum(c_gradient(record, weights) ** 2 * var))


def unbiased_c(record: ShotRecord, weights, z: float = 1.0) -> CertifierResult:
    """Bias-corrected estimate, its standard error and the certified level."""
    c = naive_c(record, weights)
    z2, z3 = bias_terms(record, weights)
    c_hat = c - z2.sum() - z3.sum()
    sigma = float(np.sqrt(variance_c(record, weights)))
    return CertifierResult(c, float(c_hat), sigma, certify(c_hat, sigma, z))


def _batch_estimates(p, w, n):
    """Naive and corrected estimates for a ``(runs, J)`` array of proportions."""
    var = p * (1 - p) / (n - 1)
    skew = var * (1 - 2 * p) / (n - 2)
    m1 = p @ w
    m3 = (p ** 3) @ w
    m1c, m3c = m1[:, None], m3[:, None]
    g = 3 * w / m1c ** 2 * (p - 2 * w * p ** 2 / m1c + w * m3c / m1c ** 2)
    h = w / m1c ** 2 * (1 - 6 * w * p / m1c + 9 * w ** 2 * p ** 2 / m1c ** 2
                        - 4 * w ** 2 * m3c / m1c ** 3)
    naive = m3 / m1 ** 2
    return naive, naive - np.sum(g * var + h * skew, axis=1)


def simulate_estimates(probabilities, weights, n: int, runs: int, seed: int = 0,
                       chunk: int = 10_000) -> tuple[np.ndarray, np.ndarray]:
    """Naive and corrected estimates from ``runs`` simulated shot records.

    Runs are drawn in fixed-size chunks, each from its own Philox stream keyed
    by ``(seed, chunk index)``, so results do not depend on how the work is
    split.  Runs with no successes at all are dropped.
    """
    mu = np.clip(np.asarray(probabilities, float), 0.0, 1.0)
    w = np.asarray(weights, float)
    naive, fair = [], []
    for i, start in enumerate(range(0, runs, chunk)):
        size = min(chunk, runs - start)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, i])))
        p = rng.binomial(n, mu, size=(size, len(mu))) / n
        p = p[p @ w > 0]
        a, b = _batch_estimates(p, w, n)
        naive.append(a)
        fair.append(b)
    return np.concatenate(naive), np.concatenate(fair)


@dataclass
class MonteCarloPdf:
    bin_centers: np.ndarray
    density_naive: np.ndarray
    density_unbiased: np.ndarray
    naive: np.ndarray
    unbiased: np.ndarray

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_center", "density_naive", "density_unbiased"])
            for row in zip(self.bin_centers, self.density_naive, self.density_unbiased):
                w.writerow([repr(float(x)) for x in row])


def monte_carlo_pdf(true_pattern, n: int, J: int | None = None, runs: int = 100_000,
                    seed: int = 0, bins: int = 100) -> MonteCarloPdf:
    """Binned densities of the naive and corrected estimators.

    ``true_pattern`` is an ``InterferencePattern`` or a probability array; in
    the latter case ``J`` trapezium points are assumed.
    """
    from .certifier import trapezium_weights

    if runs < 10_000:
        raise ValueError("runs must be at least 10^4")
    if hasattr(true_pattern, "probabilities"):
        mu, w = true_pattern.probabilities, true_pattern.weights
    else:
        mu = np.asarray(true_pattern, float)
        w = trapezium_weights(len(mu) if J is None else J)
    if len(mu) != len(w):
        raise ValueError("pattern length does not match J")
    naive, fair = simulate_estimates(mu, w, n, runs, seed)
    edges = np.histogram_bin_edges(np.r_[naive, fair], bins=bins)
    dn, _ = np.histogram(naive, edges, density=True)
    du, _ = np.histogram(fair, edges, density=True)
    return MonteCarloPdf(0.5 * (edges[1:] + edges[:-1]), dn, du, naive, fair)
