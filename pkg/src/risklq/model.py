"""System, cost, and noise descriptions plus their Q-weighted moments.

The controller synthesis downstream never touches raw noise distributions;
everything it needs is condensed here into the mean `wbar`, covariance `W`,
the skewness vectors `M3`/`m3`, and the quartic spread `m4` of the centered
disturbance, all contracted against the state penalty Q:

    M3 = 2 E[ d d'Q d ],       m3 = Q M3,
    m4 = E[ (d'Q d - tr(QW))^2 ],     d = w - wbar.

Gaussian and discrete specs admit exact formulas; Gaussian mixtures fall back
to a seeded Monte-Carlo estimate with a reported standard error.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, StructuralError
from .linalg import (as_matrix, as_vector, check_psd, freeze, is_pd, psd_sqrt,
                     symmetrize)

PROB_TOL = 1e-12


@dataclass(frozen=True)
class LinearSystem:
    """Discrete-time plant x[t+1] = A x[t] + B u[t] + w[t+1], y[t] = C x[t] + v[t]."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        A = as_matrix(A, n, n, "A")
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if B.shape[0] != n:
            raise StructuralError(f"B: expected {n} rows, got {B.shape[0]}")
        B = as_matrix(B, n, B.shape[1], "B")
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if C.shape[1] != n:
            raise StructuralError(f"C: expected {n} columns, got {C.shape[1]}")
        C = as_matrix(C, C.shape[0], n, "C")
        object.__setattr__(self, "A", freeze(A))
        object.__setattr__(self, "B", freeze(B))
        object.__setattr__(self, "C", freeze(C))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @staticmethod
    def fully_observed(A, B) -> "LinearSystem":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return LinearSystem(A=A, B=B, C=np.eye(A.shape[0]))


@dataclass(frozen=True)
class CostSpec:
    """Quadratic stage penalties x'Qx + u'Ru over a horizon of N steps.

    Q and R must be symmetric PSD. R = 0 is accepted at construction (the
    deadbeat toy problem has no input penalty); per-stage invertibility of
    B'VB + R is enforced during synthesis instead.
    """

    Q: np.ndarray
    R: np.ndarray
    N: int

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        Q = as_matrix(Q, Q.shape[0], Q.shape[0], "Q")
        check_psd(Q, "Q")
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        R = as_matrix(R, R.shape[0], R.shape[0], "R")
        check_psd(R, "R")
        if int(self.N) < 1:
            raise StructuralError(f"N: horizon must be >= 1, got {self.N}")
        object.__setattr__(self, "Q", freeze(Q))
        object.__setattr__(self, "R", freeze(R))
        object.__setattr__(self, "N", int(self.N))


class NoiseSpec:
    """Tagged union of disturbance distributions with finite fourth moments."""

    kind = "abstract"

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def mean(self) -> np.ndarray:
        raise NotImplementedError

    def cov(self) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        raise NotImplementedError

    @property
    def has_all_order_moments(self) -> bool:
        """True when every polynomial moment provably exists.

        All currently supported kinds (Gaussian, discrete, Gaussian mixture,
        and channels thereof) qualify; any future heavy-tailed kind must
        override this and return False.
        """
        return True


@dataclass(frozen=True)
class GaussianNoise(NoiseSpec):
    mean_vec: np.ndarray
    cov_mat: np.ndarray

    kind = "gaussian"

    def __post_init__(self):
        mean = np.asarray(self.mean_vec, dtype=float).reshape(-1)
        n = mean.shape[0]
        cov = as_matrix(np.atleast_2d(self.cov_mat), n, n, "gaussian cov")
        check_psd(cov, "gaussian cov")
        object.__setattr__(self, "mean_vec", freeze(mean))
        object.__setattr__(self, "cov_mat", freeze(cov))

    @property
    def dim(self):
        return self.mean_vec.shape[0]

    def mean(self):
        return np.array(self.mean_vec)

    def cov(self):
        return np.array(self.cov_mat)

    def sample(self, rng, count):
        root = psd_sqrt(self.cov_mat)
        z = rng.standard_normal((count, self.dim))
        return self.mean_vec + z @ root


@dataclass(frozen=True)
class DiscreteNoise(NoiseSpec):
    atoms: np.ndarray   # (k, n)
    probs: np.ndarray   # (k,)

    kind = "discrete"

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        probs = np.asarray(self.probs, dtype=float).reshape(-1)
        if atoms.shape[0] != probs.shape[0]:
            raise StructuralError("discrete noise: atoms and probs length mismatch")
        if np.any(probs < 0):
            raise StructuralError("discrete noise: negative probability")
        if abs(probs.sum() - 1.0) > PROB_TOL:
            raise StructuralError(f"discrete noise: probabilities sum to "
                                  f"{probs.sum():.15g}, not 1")
        object.__setattr__(self, "atoms", freeze(atoms))
        object.__setattr__(self, "probs", freeze(probs))

    @property
    def dim(self):
        return self.atoms.shape[1]

    def mean(self):
        return self.probs @ self.atoms

    def cov(self):
        d = self.atoms - self.mean()
        return symmetrize((d * self.probs[:, None]).T @ d)

    def sample(self, rng, count):
        idx = rng.choice(self.atoms.shape[0], size=count, p=self.probs)
        return np.array(self.atoms[idx])


@dataclass(frozen=True)
class GaussianMixtureNoise(NoiseSpec):
    weights: np.ndarray          # (k,)
    means: np.ndarray            # (k, n)
    covs: np.ndarray             # (k, n, n)

    kind = "gaussian_mixture"

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covs, dtype=float)
        k = weights.shape[0]
        if means.shape[0] != k or covs.shape[0] != k:
            raise StructuralError("mixture: weights/means/covs length mismatch")
        if np.any(weights < 0):
            raise StructuralError("mixture: negative weight")
        if abs(weights.sum() - 1.0) > PROB_TOL:
            raise StructuralError(f"mixture: weights sum to {weights.sum():.15g}, not 1")
        n = means.shape[1]
        if covs.shape[1:] != (n, n):
            raise StructuralError("mixture: covariance block shape mismatch")
        for i in range(k):
            check_psd(covs[i], f"mixture cov[{i}]")
        object.__setattr__(self, "weights", freeze(weights))
        object.__setattr__(self, "means", freeze(means))
        object.__setattr__(self, "covs", freeze(covs))

    @property
    def dim(self):
        return self.means.shape[1]

    def mean(self):
        return self.weights @ self.means

    def cov(self):
        mu = self.mean()
        out = np.zeros((self.dim, self.dim))
        for w, m, c in zip(self.weights, self.means, self.covs):
            d = m - mu
            out += w * (c + np.outer(d, d))
        return symmetrize(out)

    def sample(self, rng, count):
        comp = rng.choice(self.weights.shape[0], size=count, p=self.weights)
        z = rng.standard_normal((count, self.dim))
        out = np.empty((count, self.dim))
        for i in range(self.weights.shape[0]):
            mask = comp == i
            out[mask] = self.means[i] + z[mask] @ psd_sqrt(self.covs[i])
        return out


@dataclass(frozen=True)
class ChannelNoise(NoiseSpec):
    """Disturbance entering through an injection matrix: w = G d.

    Models e.g. a low-dimensional force acting through the input matrix,
    w = B (d - E d).
    """

    inner: NoiseSpec
    G: np.ndarray    # (n, q)

    kind = "channel"

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        if G.shape[1] != self.inner.dim:
            raise StructuralError(f"channel: G has {G.shape[1]} columns but inner "
                                  f"noise has dimension {self.inner.dim}")
        object.__setattr__(self, "G", freeze(G))

    @property
    def dim(self):
        return self.G.shape[0]

    def mean(self):
        return self.G @ self.inner.mean()

    def cov(self):
        return symmetrize(self.G @ self.inner.cov() @ self.G.T)

    def sample(self, rng, count):
        return self.inner.sample(rng, count) @ self.G.T

    @property
    def has_all_order_moments(self):
        return self.inner.has_all_order_moments

    def flattened(self) -> NoiseSpec:
        """Push the injection matrix into the inner spec when possible."""
        inner = self.inner
        if isinstance(inner, ChannelNoise):
            inner = inner.flattened()
        if isinstance(inner, GaussianNoise):
            return GaussianNoise(self.G @ inner.mean_vec,
                                 self.G @ inner.cov_mat @ self.G.T)
        if isinstance(inner, DiscreteNoise):
            return DiscreteNoise(inner.atoms @ self.G.T, inner.probs)
        if isinstance(inner, GaussianMixtureNoise):
            covs = np.array([self.G @ c @ self.G.T for c in inner.covs])
            return GaussianMixtureNoise(inner.weights, inner.means @ self.G.T, covs)
        return self


@dataclass(frozen=True)
class MomentSource:
    """Records which path produced the third/fourth moments."""

    kind: str                     # "analytic" | "monte_carlo"
    samples: int = 0
    seed: int = 0
    std_error: float = 0.0        # max std error over estimated scalars
    m3_std_error: Optional[np.ndarray] = None
    m4_std_error: float = 0.0


@dataclass(frozen=True)
class MonteCarloConfig:
    samples: int = 10 ** 6
    seed: int = 0


@dataclass(frozen=True)
class QWeightedMoments:
    """Noise moments contracted against the state penalty Q."""

    Q: np.ndarray
    wbar: np.ndarray
    W: np.ndarray
    M3: np.ndarray
    m3: np.ndarray
    m4: float
    source: MomentSource = field(default_factory=lambda: MomentSource("analytic"))

    def __post_init__(self):
        n = self.wbar.shape[0]
        object.__setattr__(self, "Q", freeze(as_matrix(self.Q, n, n, "Q")))
        object.__setattr__(self, "wbar", freeze(self.wbar))
        W = as_matrix(self.W, n, n, "W")
        check_psd(W, "W", sym_tol=1e-10)
        object.__setattr__(self, "W", freeze(W))
        object.__setattr__(self, "M3", freeze(as_vector(self.M3, n, "M3")))
        object.__setattr__(self, "m3", freeze(as_vector(self.m3, n, "m3")))
        if self.m4 < 0:
            raise StructuralError(f"m4 must be nonnegative, got {self.m4}")
        object.__setattr__(self, "m4", float(self.m4))

    @property
    def n(self):
        return self.wbar.shape[0]


def gaussian_m4(Q, W) -> float:
    """Quartic spread of a Gaussian: E[(d'Qd - tr(QW))^2] = 2 tr((QW)^2)."""
    QW = Q @ W
    return 2.0 * float(np.trace(QW @ QW))


def compute_moments(noise: NoiseSpec, Q, mc_config: Optional[MonteCarloConfig] = None
                    ) -> QWeightedMoments:
    """Q-weighted moments of a disturbance spec.

    Mean and covariance are always exact. M3/m3/m4 are exact for Gaussian
    (zero skewness, m4 = 2 tr((QW)^2)) and discrete (finite sums over atoms)
    specs; Gaussian mixtures are estimated by seeded Monte Carlo with the
    configured sample count. Channel specs are pushed through their injection
    matrix first, so they inherit the inner spec's path.
    """
    Q = as_matrix(np.atleast_2d(np.asarray(Q, dtype=float)), noise.dim, noise.dim, "Q")
    spec = noise.flattened() if isinstance(noise, ChannelNoise) else noise
    wbar = spec.mean()
    W = spec.cov()

    if isinstance(spec, GaussianNoise):
        zero = np.zeros(spec.dim)
        return QWeightedMoments(Q, wbar, W, zero, zero.copy(), gaussian_m4(Q, W))

    if isinstance(spec, DiscreteNoise):
        d = spec.atoms - wbar
        quad = np.einsum("ki,ij,kj->k", d, Q, d)
        M3 = 2.0 * (spec.probs * quad) @ d
        m4 = float(spec.probs @ (quad - np.trace(Q @ W)) ** 2)
        return QWeightedMoments(Q, wbar, W, M3, Q @ M3, m4)

    # Monte-Carlo path (Gaussian mixtures and anything without exact formulas).
    cfg = mc_config or MonteCarloConfig()
    if cfg.samples < 10 ** 4:
        raise ConfigurationError(f"Monte-Carlo moment estimation needs at least "
                                 f"1e4 samples to certify invariants, got {cfg.samples}")
    draws = sample_noise(spec, cfg.seed, cfg.samples)
    d = draws - wbar
    quad = np.einsum("ki,ij,kj->k", d, Q, d)
    M3_terms = 2.0 * d * quad[:, None]
    M3 = M3_terms.mean(axis=0)
    m4_terms = (quad - np.trace(Q @ W)) ** 2
    m4 = float(m4_terms.mean())
    m3_se = M3_terms.std(axis=0, ddof=1) / np.sqrt(cfg.samples)
    m4_se = float(m4_terms.std(ddof=1) / np.sqrt(cfg.samples))
    source = MomentSource("monte_carlo", samples=cfg.samples, seed=cfg.seed,
                          std_error=float(max(m3_se.max(initial=0.0), m4_se)),
                          m3_std_error=freeze(m3_se), m4_std_error=m4_se)
    return QWeightedMoments(Q, wbar, W, M3, Q @ M3, m4, source)


def sample_noise(noise: NoiseSpec, seed: int, count: int) -> np.ndarray:
    """Draw `count` noise vectors, deterministically in (seed, count)."""
    if count < 1:
        raise ConfigurationError(f"sample count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    return noise.sample(rng, count)


@dataclass(frozen=True)
class AssumptionReport:
    """PBH-test flags for the standing stabilizability/detectability conditions.

    Filter-side flags are None when no measurement covariance was supplied.
    """

    stabilizable_AB: bool
    detectable_AQ: bool
    R_pd: bool
    detectable_AC: Optional[bool] = None
    stabilizable_AW: Optional[bool] = None
    S_pd: Optional[bool] = None

    @property
    def controller_ok(self) -> bool:
        return self.stabilizable_AB and self.detectable_AQ and self.R_pd

    @property
    def filter_ok(self) -> Optional[bool]:
        if self.detectable_AC is None:
            return None
        return bool(self.detectable_AC and self.stabilizable_AW and self.S_pd)

    def as_dict(self) -> dict:
        return {
            "stabilizable_AB": self.stabilizable_AB,
            "detectable_AQ": self.detectable_AQ,
            "R_pd": self.R_pd,
            "detectable_AC": self.detectable_AC,
            "stabilizable_AW": self.stabilizable_AW,
            "S_pd": self.S_pd,
        }


PBH_RANK_TOL = 1e-9


def _pbh_stabilizable(A, B, tol=PBH_RANK_TOL) -> bool:
    """Hautus test: rank [A - lambda I, B] = n for every eigenvalue with
    |lambda| >= 1 (a small slack catches unit eigenvalues perturbed by
    roundoff)."""
    n = A.shape[0]
    eigs = np.linalg.eigvals(A)
    for lam in eigs:
        if abs(lam) < 1.0 - 1e-9:
            continue
        M = np.hstack([A - lam * np.eye(n), B.astype(complex)])
        sv = np.linalg.svd(M, compute_uv=False)
        rank = int(np.sum(sv > tol * sv[0])) if sv[0] > 0 else 0
        if rank < n:
            return False
    return True


def _pbh_detectable(A, C, tol=PBH_RANK_TOL) -> bool:
    return _pbh_stabilizable(A.T, C.T, tol)


def validate_assumptions(system: LinearSystem, cost: CostSpec, W,
                         S=None) -> AssumptionReport:
    """Check the standing conditions behind the stability guarantees.

    Controller side: (A, B) stabilizable, (A, Q^{1/2}) detectable, R > 0.
    Filter side (when S is given): (A, C) detectable, (A, W^{1/2})
    stabilizable, S > 0.
    """
    n = system.n
    W = as_matrix(np.atleast_2d(np.asarray(W, dtype=float)), n, n, "W")
    if cost.Q.shape[0] != n:
        raise StructuralError(f"Q: expected {n}x{n}, got {cost.Q.shape}")
    if cost.R.shape[0] != system.p:
        raise StructuralError(f"R: expected {system.p}x{system.p}, got {cost.R.shape}")
    report = {
        "stabilizable_AB": _pbh_stabilizable(system.A, system.B),
        "detectable_AQ": _pbh_detectable(system.A, psd_sqrt(cost.Q)),
        "R_pd": is_pd(cost.R),
    }
    if S is not None:
        S = as_matrix(np.atleast_2d(np.asarray(S, dtype=float)), system.m, system.m, "S")
        report["detectable_AC"] = _pbh_detectable(system.A, system.C)
        report["stabilizable_AW"] = _pbh_stabilizable(system.A, psd_sqrt(W))
        report["S_pd"] = is_pd(S)
    return AssumptionReport(**report)
