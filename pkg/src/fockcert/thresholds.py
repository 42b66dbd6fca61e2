"""Numerical suprema of the certifier over k-coherent states.

Every search-space point is reached through an unconstrained real vector:

* a k-coherent density matrix is a mixture of density matrices supported on
  k-element subsets of the Fock basis, each written as ``L L^dagger / Tr`` for a
  lower-triangular ``L`` given by magnitudes and off-diagonal phases, with
  mixture weights ``y_j**2 / sum(y**2)`` (``y_0`` fixed to one);
* a POVM element is ``sum_j a_j |psi_j><psi_j|`` where each ``psi_j`` is a
  pure state in the orthogonal complement of the earlier ones and
  ``a_j = sin(x_j)**2``.

The certifier is evaluated from the exact trigonometric-polynomial pattern,
so no quadrature error enters the maximisation.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

log = logging.getLogger(__name__)


@dataclass
class KCoherentParametrization:
    dim: int
    k: int
    subspace_list: list[tuple[int, ...]] | None = None
    real: bool = False

    def __post_init__(self):
        if not 1 <= self.k <= self.dim:
            raise ValueError("need 1 <= k <= dim")
        if self.subspace_list is None:
            self.subspace_list = list(itertools.combinations(range(self.dim), self.k))
        self.subspace_list = [tuple(s) for s in self.subspace_list]
        self._tril = np.tril_indices(self.k)
        self._offdiag = np.tril_indices(self.k, -1)

    @property
    def per_subspace(self) -> int:
        k = self.k
        return k * (k + 1) // 2 + (0 if self.real else k * (k - 1) // 2)

    @property
    def n_params(self) -> int:
        return len(self.subspace_list) * self.per_subspace + len(self.subspace_list) - 1

    def components(self, params) -> tuple[np.ndarray, list[np.ndarray]]:
        """Mixture weights and the k x k block of every component."""
        x = np.asarray(params, float)
        k, per = self.k, self.per_subspace
        nsub = len(self.subspace_list)
        blocks = []
        for j in range(nsub):
            chunk = x[j * per:(j + 1) * per]
            L = np.zeros((k, k), complex)
            L[self._tril] = chunk[: k * (k + 1) // 2]
            if not self.real and k > 1:
                L[self._offdiag] *= np.exp(1j * chunk[k * (k + 1) // 2:])
            rho = L @ L.conj().T
            tr = np.trace(rho).real
            blocks.append(rho / tr if tr > 1e-300 else np.eye(k) / k)
        y = np.r_[1.0, x[nsub * per:]]
        weights = y ** 2 / np.sum(y ** 2)
        return weights, blocks

    def decode(self, params) -> np.ndarray:
        weights, blocks = self.components(params)
        rho = np.zeros((self.dim, self.dim), complex)
        for w, sub, block in zip(weights, self.subspace_list, blocks):
            idx = np.array(sub)
            rho[np.ix_(idx, idx)] += w * block
        return 0.5 * (rho + rho.conj().T)

    def random_params(self, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(size=self.n_params)


@dataclass
class PovmParametrization:
    dim: int
    m: int
    fixed_weights: tuple[float, ...] | None = None
    real: bool = False

    def __post_init__(self):
        if not 1 <= self.m <= self.dim:
            raise ValueError("need 1 <= m <= dim")
        if self.fixed_weights is not None and len(self.fixed_weights) != self.m:
            raise ValueError("fixed_weights must have one entry per component")

    def _state_params(self, j: int) -> int:
        free = self.dim - j - 1
        return free if self.real else 2 * free

    @property
    def n_params(self) -> int:
        n = sum(self._state_params(j) for j in range(self.m))
        return n + (0 if self.fixed_weights is not None else self.m)

    def components(self, params) -> tuple[np.ndarray, np.ndarray]:
        """Weights ``a_j`` and orthonormal states as columns."""
        x = np.asarray(params, float)
        states = np.zeros((self.dim, self.m), complex)
        pos = 0
        for j in range(self.m):
            if j == 0:
                basis = np.eye(self.dim, dtype=complex)
            else:
                # orthonormal completion of the states chosen so far
                q, _ = np.linalg.qr(np.hstack([states[:, :j], np.eye(self.dim)]))
                basis = q[:, j:self.dim]
            free = self.dim - j - 1
            n = self._state_params(j)
            chunk = x[pos:pos + n]
            pos += n
            coeff = np.ones(free + 1, complex)
            if free:
                coeff[1:] = chunk[:free]
                if not self.real:
                    coeff[1:] *= np.exp(1j * chunk[free:])
            v = basis @ coeff
            states[:, j] = v / np.linalg.norm(v)
        if self.fixed_weights is not None:
            a = np.asarray(self.fixed_weights, float)
        else:
            a = np.sin(x[pos:pos + self.m]) ** 2
        return a, states

    def decode(self, params) -> np.ndarray:
        a, states = self.components(params)
        A = (states * a) @ states.conj().T
        return 0.5 * (A + A.conj().T)

    def random_params(self, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(size=self.n_params)


def decode_state(p: KCoherentParametrization, params) -> np.ndarray:
    return p.decode(params)


def decode_povm(p: PovmParametrization, params) -> np.ndarray:
    return p.decode(params)


def pattern_coefficients(rho: np.ndarray, A: np.ndarray) -> np.ndarray:
    """``c_k`` with ``p(phi) = sum_k c_k exp(-i k phi)``, k = -(d-1)..d-1."""
    d = rho.shape[0]
    kernel = rho * A.T
    return np.array([np.trace(kernel, offset=-k) for k in range(-(d - 1), d)])


def exact_certifier(rho: np.ndarray, A: np.ndarray) -> tuple[float, float, float]:
    """``(C, M1, M3)`` of the free-evolution pattern with an identity mapping."""
    d = rho.shape[0]
    c = pattern_coefficients(rho, A)
    J = 3 * (d - 1) + 1  # distinct points, periodic rule exact for degree < J
    phases = 2 * np.pi * np.arange(J) / J
    ks = np.arange(-(d - 1), d)
    p = np.real(np.exp(-1j * np.outer(phases, ks)) @ c)
    m1 = float(np.mean(p))
    m3 = float(np.mean(p ** 3))
    if m1 <= 1e-300:
        return -np.inf, m1, m3
    return m3 / m1 ** 2, m1, m3


def certifier_objective(state_params, povm_params, state_par: KCoherentParametrization,
                        povm_par: PovmParametrization) -> float:
    rho = state_par.decode(state_params)
    A = povm_par.decode(povm_params)
    return exact_certifier(rho, A)[0]


def _central_gradient(f, x, step=1e-6):
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2 * step)
    return g


@dataclass
class ThresholdResult:
    value: float
    state: np.ndarray
    povm: np.ndarray
    values: np.ndarray = field(repr=False)
    subspaces: list = field(default_factory=list, repr=False)
    rank_one_fraction: float = np.nan

    @property
    def top_agreement(self) -> float:
        """Spread of the five best restarts."""
        top = np.sort(self.values)[::-1][:5]
        return float(top[0] - top[-1])

    def is_rank_one_projector(self, tol: float = 1e-4) -> bool:
        ev = np.linalg.eigvalsh(self.povm)
        return bool(abs(ev[-1] - 1) < tol and np.all(np.abs(ev[:-1]) < tol))

    def projector_overlap(self) -> float:
        """Overlap of the POVM's top eigenvector with the state's top eigenvector."""
        _, va = np.linalg.eigh(self.povm)
        _, vr = np.linalg.eigh(self.state)
        return float(abs(np.vdot(va[:, -1], vr[:, -1])) ** 2)

    def support(self, tol: float = 1e-6) -> np.ndarray:
        """Fock levels the optimal state occupies."""
        return np.flatnonzero(np.real(np.diag(self.state)) > tol)

    def collapses_to_rank_one(self, tol: float = 1e-4) -> bool:
        """Whether the measurement is a projector onto the optimal pure state.

        Only the block of the POVM on the state's support matters, and a
        free-evolution phase on the projector leaves C unchanged, so the
        check compares amplitude moduli on that block.
        """
        S = self.support()
        ea, va = np.linalg.eigh(self.povm[np.ix_(S, S)])
        er, vr = np.linalg.eigh(self.state[np.ix_(S, S)])
        proj = abs(ea[-1] - 1) < tol and np.all(np.abs(ea[:-1]) < tol)
        pure = abs(er[-1] - 1) < tol
        same = np.allclose(np.abs(va[:, -1]), np.abs(vr[:, -1]), atol=np.sqrt(tol))
        return bool(proj and pure and same)


def _is_rank_one(A, tol=1e-3):
    ev = np.linalg.eigvalsh(A)
    return abs(ev[-1] - 1) < tol and np.all(np.abs(ev[:-1]) < tol)


def maximize_threshold(dim: int, k: int, m: int | None = None, restarts: int = 200,
                       seed: int = 0, components: int | str = 1,
                       fixed_weights: tuple[float, ...] | None = None,
                       real: bool = False, maxiter: int = 500) -> ThresholdResult:
    """Best local maximum of C over k-coherent states and rank-m POVMs.

    ``components`` mixes that many randomly chosen k-subsets per restart, or
    every subset when ``"all"``.  ``m`` defaults to ``dim`` (full-rank search).
    """
    if k > dim:
        raise ValueError("k must not exceed dim")
    m = dim if m is None else m
    if m > dim:
        raise ValueError("m must not exceed dim")
    rng = np.random.default_rng(seed)
    all_subs = list(itertools.combinations(range(dim), k))
    povm_par = PovmParametrization(dim, m, fixed_weights, real)
    values, best = [], None
    rank_one = 0
    for _ in range(restarts):
        if components == "all":
            subs = all_subs
        else:
            pick = rng.choice(len(all_subs), size=min(int(components), len(all_subs)),
                              replace=False)
            subs = [all_subs[i] for i in sorted(pick)]
        state_par = KCoherentParametrization(dim, k, subs, real)
        ns = state_par.n_params

        def neg(x):
            v = certifier_objective(x[:ns], x[ns:], state_par, povm_par)
            return -v if np.isfinite(v) else 1e6

        x0 = np.r_[state_par.random_params(rng), povm_par.random_params(rng)]
        res = minimize(neg, x0, jac=lambda x: _central_gradient(neg, x), method="BFGS",
                       options={"maxiter": maxiter, "gtol": 1e-9})
        value = -res.fun
        values.append(value)
        A = povm_par.decode(res.x[ns:])
        rank_one += _is_rank_one(A)
        if best is None or value > best[0]:
            best = (value, state_par.decode(res.x[:ns]), A, subs)
    if not np.isfinite(best[0]):
        raise RuntimeError("every restart diverged")
    result = ThresholdResult(best[0], best[1], best[2], np.array(values), best[3],
                             float(rank_one / restarts))
    log.info("dim=%d k=%d m=%d: %.10f (top-5 spread %.1e, rank-1 %.0f%%)", dim, k, m,
             result.value, result.top_agreement, 100 * result.rank_one_fraction)
    return result


def sweep(dims, ks, ms=(None,), restarts: int = 50, seed: int = 0) -> list[dict]:
    """Rows of ``dim, k, m, optimum, wall_time`` for the CSV sweep."""
    import time

    rows = []
    for dim in dims:
        for k in ks:
            if k > dim:
                continue
            for m in ms:
                t0 = time.perf_counter()
                res = maximize_threshold(dim, k, m, restarts=restarts, seed=seed)
                rows.append({"dim": dim, "k": k, "m": dim if m is None else m,
                             "optimum": res.value,
                             "wall_time": time.perf_counter() - t0})
    return rows
