"""Exponential-cost (risk-sensitive) baseline controllers.

The baseline minimizes (2/theta) log E exp((theta/2) sum_t x'Qx + u'Ru) for
Gaussian second-order statistics W; for non-Gaussian noise it is only a
heuristic comparison obtained by plugging in W. The backward recursion
replaces the cost-to-go V by its risk-tilted version

    V~ = V (I - theta W V)^{-1},

which exists only while every eigenvalue of theta W V stays below 1. Pushing
theta past that point is the "neurotic breakdown": the exponential criterion
ceases to be finite and synthesis fails at some stage.

The output-feedback variant keeps the ordinary Kalman filter (non-delayed
measurement pattern) and applies the risk distortion to the estimate before
feedback: u_t = K_t (I - theta P_{t|t} V_t)^{-1} xhat_{t|t}.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BreakdownError, ConfigurationError, RiskLqError
from .lqg import KalmanSchedule, kalman_forward
from .linalg import freeze, guarded_solve, symmetrize
from .model import CostSpec, LinearSystem

THETA_SEARCH_CAP = 1e6


@dataclass(frozen=True)
class LeqgGains:
    """Risk-sensitive gains: u_t = K[t] x_t (fully observed) or
    u_t = K[t] @ estimate_transform[t] @ xhat_{t|t} (output feedback).

    valid_up_to is -1 when the recursion completed; synthesis raises a
    breakdown error otherwise, so constructed objects always have -1 unless
    built by internal probing.
    """

    theta: float
    V: tuple
    K: tuple
    valid_up_to: int
    mode: str
    kalman: Optional[KalmanSchedule] = None
    estimate_transform: Optional[tuple] = None

    @property
    def horizon(self) -> int:
        return len(self.K)


def _risk_tilt(V, W, theta, stage):
    """V (I - theta W V)^{-1}, failing when the tilt loses well-posedness."""
    n = V.shape[0]
    M = np.eye(n) - theta * (W @ V)
    eigs = np.linalg.eigvals(M)
    if np.any(eigs.real <= 0.0):
        raise BreakdownError(
            f"exponential-cost recursion ill posed at stage {stage}: "
            f"min Re eig(I - theta W V) = {eigs.real.min():.3e}",
            failing_stage=stage)
    return np.linalg.solve(M.T, V.T).T


def synthesize_leqg(system: LinearSystem, cost: CostSpec, W, theta: float,
                    N: int, mode: str = "fully_observed",
                    S=None) -> LeqgGains:
    """Backward risk-sensitive Riccati pass over horizon N.

    Raises BreakdownError (carrying the failing stage) when the tilt
    eigenvalue condition breaks before stage 0.
    """
    if theta <= 0:
        raise ConfigurationError(f"theta must be positive, got {theta}")
    if mode not in ("fully_observed", "gaussian_output"):
        raise ConfigurationError(f"unknown mode {mode!r}")
    A, B, Q, R = system.A, system.B, cost.Q, cost.R
    W = np.asarray(W, dtype=float)

    V = [None] * (N + 1)
    K = [None] * N
    V[N] = freeze(Q.copy())
    for t in range(N - 1, -1, -1):
        Vt = _risk_tilt(V[t + 1], W, theta, stage=t)
        M = B.T @ Vt @ B + R
        G = B.T @ Vt @ A
        X = guarded_solve(M, G, f"input curvature B'VB+R at stage {t}")
        K[t] = freeze(-X)
        V[t] = freeze(symmetrize(A.T @ Vt @ A + Q - G.T @ X))

    if mode == "fully_observed":
        return LeqgGains(theta=float(theta), V=tuple(V), K=tuple(K),
                         valid_up_to=-1, mode=mode)

    if S is None:
        raise ConfigurationError("gaussian_output mode needs the measurement "
                                 "covariance S")
    kalman = kalman_forward(system, W, S, N)
    n = system.n
    transform = []
    for t in range(N):
        P_post = kalman.Wt[t] - kalman.refinement_cov(t)
        M = np.eye(n) - theta * (P_post @ V[t])
        eigs = np.linalg.eigvals(M)
        if np.any(eigs.real <= 0.0):
            raise BreakdownError(
                f"risk-distorted estimate ill posed at stage {t}: "
                f"min Re eig(I - theta P V) = {eigs.real.min():.3e}",
                failing_stage=t)
        transform.append(freeze(np.linalg.inv(M)))
    return LeqgGains(theta=float(theta), V=tuple(V), K=tuple(K), valid_up_to=-1,
                     mode=mode, kalman=kalman, estimate_transform=tuple(transform))


def find_breakdown_theta(system: LinearSystem, cost: CostSpec, W, N: int,
                         tol: float = 1e-6, mode: str = "fully_observed",
                         S=None) -> float:
    """Largest theta (within tol) at which synthesis completes over horizon N.

    Bisection between a completing and a failing value; when no failure
    occurs up to the search cap (e.g. W = 0), the cap is returned.
    """
    def completes(theta):
        try:
            synthesize_leqg(system, cost, W, theta, N, mode=mode, S=S)
            return True
        except BreakdownError:
            return False

    lo = 1e-12
    if not completes(lo):
        raise RiskLqError("exponential recursion fails even at theta = 1e-12; "
                          "the model itself is ill posed for this baseline")
    hi = 1e-6
    while completes(hi):
        lo = hi
        hi *= 2.0
        if hi >= THETA_SEARCH_CAP:
            return THETA_SEARCH_CAP
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if completes(mid):
            lo = mid
        else:
            hi = mid
    return lo
