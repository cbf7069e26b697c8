"""Fully-observed risk-aware LQR synthesis and analysis.

For a risk multiplier mu >= 0 the controller u_t = K_t x_t + l_t minimizes
the Lagrangian of the predictive-variance-constrained LQ problem. The state
feedback solves a Riccati recursion with the inflated penalty

    Q_mu = Q + 4 mu Q W Q,

which regulates directions that are simultaneously costly and noisy more
strictly; the affine part l_t both cancels the noise mean and pushes the
state away from skewed (heavy-tailed) noise directions via m3.

mu = 0 recovers classical LQR exactly.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import SingularityError, StructuralError
from .linalg import freeze, guarded_solve, spectral_radius, symmetrize
from .model import CostSpec, LinearSystem, QWeightedMoments, validate_assumptions
from .riccati import rde_step, solve_dare


@dataclass(frozen=True)
class GainSchedule:
    """Time-indexed controller data from the backward pass.

    V[t], xi[t], c[t] for t = 0..N (V[N] = Q_mu, xi[N] = mu*m3, c[N] = 0);
    K[t], l[t] for t = 0..N-1. The runtime law is u_t = K[t] x_t + l[t].
    """

    V: tuple
    K: tuple
    xi: tuple
    l: tuple
    c: tuple
    mu: float
    Q_mu: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Q_mu", freeze(self.Q_mu))

    @property
    def horizon(self) -> int:
        return len(self.K)


@dataclass(frozen=True)
class SteadyGains:
    """Infinite-horizon limits of the schedule entries; rho = rho(A + BK)."""

    V: np.ndarray
    K: np.ndarray
    xi: np.ndarray
    l: np.ndarray
    rho: float

    def __post_init__(self):
        object.__setattr__(self, "V", freeze(self.V))
        object.__setattr__(self, "K", freeze(self.K))
        object.__setattr__(self, "xi", freeze(self.xi))
        object.__setattr__(self, "l", freeze(self.l))


def inflated_penalty(Q, W, mu: float) -> np.ndarray:
    if mu < 0:
        raise StructuralError(f"risk multiplier must be nonnegative, got {mu}")
    return symmetrize(Q + 4.0 * mu * Q @ W @ Q)


def _check_inputs(system: LinearSystem, cost: CostSpec, moments: QWeightedMoments):
    if cost.Q.shape[0] != system.n:
        raise StructuralError(f"Q is {cost.Q.shape[0]}x{cost.Q.shape[0]} but the "
                              f"state dimension is {system.n}")
    if cost.R.shape[0] != system.p:
        raise StructuralError(f"R is {cost.R.shape[0]}x{cost.R.shape[0]} but the "
                              f"input dimension is {system.p}")
    if moments.n != system.n:
        raise StructuralError("moments dimension does not match the state dimension")
    if not np.allclose(moments.Q, cost.Q, rtol=0, atol=1e-12):
        raise StructuralError("moments were contracted against a different Q "
                              "than the cost spec")


def synthesize(system: LinearSystem, cost: CostSpec, moments: QWeightedMoments,
               mu: float) -> GainSchedule:
    """Full backward pass over the horizon for a fixed risk multiplier."""
    _check_inputs(system, cost, moments)
    A, B, R = system.A, system.B, cost.R
    W, wbar, m3 = moments.W, moments.wbar, moments.m3
    N = cost.N
    Q_mu = inflated_penalty(cost.Q, W, mu)

    V = [None] * (N + 1)
    K = [None] * N
    xi = [None] * (N + 1)
    l = [None] * N
    c = [0.0] * (N + 1)
    V[N] = freeze(Q_mu)
    xi[N] = freeze(mu * m3)

    for t in range(N, 0, -1):
        step = rde_step(V[t], A, B, Q_mu, R, stage=t - 1)
        K[t - 1] = step.K
        V[t - 1] = step.V
        M = B.T @ V[t] @ B + R
        drive = xi[t] + V[t] @ wbar
        l[t - 1] = freeze(-guarded_solve(M, B.T @ drive,
                                         f"input curvature B'VB+R at stage {t - 1}"))
        xi[t - 1] = freeze((A + B @ K[t - 1]).T @ drive + mu * m3)
        c[t - 1] = float(c[t] + np.trace(W @ V[t]) + 2.0 * xi[t] @ wbar
                         + wbar @ V[t] @ wbar - l[t - 1] @ M @ l[t - 1])
    return GainSchedule(V=tuple(V), K=tuple(K), xi=tuple(xi), l=tuple(l),
                        c=tuple(c), mu=float(mu), Q_mu=Q_mu)


def steady_state(system: LinearSystem, cost: CostSpec, moments: QWeightedMoments,
                 mu: float) -> SteadyGains:
    """Infinite-horizon gains: DARE fixed point plus the closed-form limits

        xi = (I - (A+BK)')^{-1} ((A+BK)'V wbar + mu m3)
        l  = -(B'VB+R)^{-1} B'(xi + V wbar).
    """
    _check_inputs(system, cost, moments)
    report = validate_assumptions(system, cost, moments.W)
    if not report.controller_ok:
        warnings.warn("stabilizability/detectability/R>0 flags failed "
                      f"({report.as_dict()}); steady-state gains may not "
                      "stabilize the plant", stacklevel=2)
    A, B, R = system.A, system.B, cost.R
    Q_mu = inflated_penalty(cost.Q, moments.W, mu)
    dare = solve_dare(A, B, Q_mu, R)
    Abar = A + B @ dare.K
    if dare.rho >= 1.0:
        raise SingularityError(f"closed loop not stable (rho = {dare.rho:.6f}); "
                               "steady affine terms are undefined")
    rhs = Abar.T @ (dare.V @ moments.wbar) + mu * moments.m3
    xi = np.linalg.solve(np.eye(system.n) - Abar.T, rhs)
    M = B.T @ dare.V @ B + R
    l = -guarded_solve(M, B.T @ (xi + dare.V @ moments.wbar),
                       "input curvature B'VB+R at steady state")
    return SteadyGains(V=dare.V, K=dare.K, xi=xi, l=l, rho=dare.rho)


def evaluate_risk(system: LinearSystem, cost: CostSpec, moments: QWeightedMoments,
                  schedule: GainSchedule, x0=None) -> float:
    """Closed-form value of the predictive-variance risk functional

        J_R = E sum_{t=1..N} 4 xhat_t' QWQ xhat_t + 2 xhat_t' m3

    under the schedule's control law, where xhat_t is the one-step state
    prediction. Evaluated by a backward recursion in (P_t, zeta_t, d_t).
    """
    _check_inputs(system, cost, moments)
    if schedule.horizon != cost.N:
        raise StructuralError(f"schedule horizon {schedule.horizon} does not match "
                              f"cost horizon {cost.N}")
    A, B = system.A, system.B
    W, wbar, m3 = moments.W, moments.wbar, moments.m3
    x0 = np.zeros(system.n) if x0 is None else np.asarray(x0, dtype=float)
    QWQ4 = 4.0 * symmetrize(cost.Q @ W @ cost.Q)

    P = QWQ4.copy()
    zeta = m3.copy()
    d = 0.0
    for t in range(cost.N, 0, -1):
        Acl = A + B @ schedule.K[t - 1]
        shift = B @ schedule.l[t - 1] + wbar
        P_prev = symmetrize(Acl.T @ P @ Acl) + QWQ4
        zeta_prev = Acl.T @ zeta + m3 + Acl.T @ (P @ shift)
        d_prev = d + float(np.trace((P_prev - QWQ4) @ W)) \
            + 2.0 * zeta @ shift + shift @ P @ shift
        P, zeta, d = P_prev, zeta_prev, d_prev
    return float(x0 @ (P - QWQ4) @ x0 + 2.0 * (zeta - m3) @ x0
                 + d - np.trace((P - QWQ4) @ W))


@dataclass(frozen=True)
class DualValue:
    """Dual function value D(mu) and the induced LQ cost J(u*(mu))."""

    D: float
    J: float


def dual_value(system: LinearSystem, cost: CostSpec, moments: QWeightedMoments,
               schedule: GainSchedule, x0=None, eps_bar: float = 0.0) -> DualValue:
    """Evaluate the dual function at the schedule's multiplier.

    D(mu) is the minimized Lagrangian; J recovers the plain LQ cost through
    the Lagrangian identity L = J + mu (J_R - eps_bar). At mu = 0 both equal
    the classical LQR optimal cost and eps_bar is irrelevant.
    """
    _check_inputs(system, cost, moments)
    x0 = np.zeros(system.n) if x0 is None else np.asarray(x0, dtype=float)
    mu = schedule.mu
    WQ = moments.W @ cost.Q
    g_mu = mu * (-eps_bar - 4.0 * cost.N * float(np.trace(WQ @ WQ))) + x0 @ cost.Q @ x0
    cost_to_go = float(x0 @ (schedule.V[0] - schedule.Q_mu) @ x0
                       + 2.0 * (schedule.xi[0] - mu * moments.m3) @ x0
                       + schedule.c[0])
    D = cost_to_go + g_mu
    J_R = evaluate_risk(system, cost, moments, schedule, x0)
    return DualValue(D=float(D), J=float(D - mu * J_R + mu * eps_bar))


@dataclass(frozen=True)
class TrackingReformulation:
    """Equivalent tracking-problem view of the risk-aware stage cost.

    For all x, u:
        (x - target)' Q (x - target) + x' extra_penalty x + u'Ru + constant
            = x' Q_mu x + 2 mu m3' x + u'Ru,
    i.e. risk awareness equals tracking the static target -mu*M3 under an
    extra state penalty 4 mu QWQ.
    """

    target: np.ndarray
    extra_penalty: np.ndarray
    constant: float

    def __post_init__(self):
        object.__setattr__(self, "target", freeze(self.target))
        object.__setattr__(self, "extra_penalty", freeze(self.extra_penalty))


def tracking_reformulation(cost: CostSpec, moments: QWeightedMoments,
                           mu: float) -> TrackingReformulation:
    target = -mu * moments.M3
    extra = symmetrize(4.0 * mu * cost.Q @ moments.W @ cost.Q)
    constant = -float(mu ** 2 * moments.M3 @ cost.Q @ moments.M3)
    return TrackingReformulation(target=target, extra_penalty=extra,
                                 constant=constant)


def affine_decomposition(system: LinearSystem, schedule: GainSchedule):
    """Diagnostic split of the affine driver: xi_t = S_t (mu m3) + T_t wbar.

    S_t accumulates the skewness pressure, T_t the mean-cancellation term.
    Returns (S_list, T_list) indexed t = 0..N.
    """
    A, B = system.A, system.B
    N = schedule.horizon
    S = [None] * (N + 1)
    T = [None] * (N + 1)
    S[N] = np.eye(system.n)
    T[N] = np.zeros((system.n, system.n))
    for t in range(N, 0, -1):
        Acl = A + B @ schedule.K[t - 1]
        S[t - 1] = Acl.T @ S[t] + np.eye(system.n)
        T[t - 1] = Acl.T @ (T[t] + schedule.V[t])
    return S, T


def closed_loop_spectral_radius(system: LinearSystem, K) -> float:
    return spectral_radius(system.A + system.B @ np.asarray(K, dtype=float))
