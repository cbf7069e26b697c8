"""Partially-observed risk-aware control for Gaussian noise.

The estimator is the ordinary Kalman filter (it does not depend on the risk
multiplier: separation holds for the estimator design). The controller gain,
however, is coupled to the filter: the backward value recursion uses the
time-varying inflated penalty

    Q_mu_t = Q + 4 mu Q W_t Q,

where W_t is the one-step prediction-error covariance. With mu = 0 the
classical certainty-equivalent LQG controller is recovered.

Only the Gaussian case is handled here; for general noise the analogous
recursions involve conditional moments with no finite-dimensional
representation, and no estimator for them is provided.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NonConvergenceError, StructuralError
from .linalg import (as_matrix, check_psd, freeze, guarded_solve, min_eig_sym,
                     spectral_radius, symmetrize)
from .lqr import DualValue, inflated_penalty
from .model import CostSpec, LinearSystem
from .riccati import solve_dare

KALMAN_TOL = 1e-12
KALMAN_MAX_ITERS = 10 ** 5


@dataclass(frozen=True)
class KalmanSchedule:
    """Prediction-error covariances W[t] (t = 0..N), filter gains L[t], and
    the steady covariance Winf. Independent of the control objective."""

    system: LinearSystem
    S: np.ndarray
    Wt: tuple
    Lt: tuple
    Winf: np.ndarray
    wbar: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "S", freeze(self.S))
        object.__setattr__(self, "Winf", freeze(self.Winf))
        object.__setattr__(self, "wbar", freeze(self.wbar))

    @property
    def horizon(self) -> int:
        return len(self.Wt) - 1

    def refinement_cov(self, t: int) -> np.ndarray:
        """Covariance of the filter correction e_t = xhat_{t|t} - xhat_t,
        equal to W_t C'(C W_t C' + S)^{-1} C W_t."""
        return symmetrize(self.Lt[t] @ self.system.C @ self.Wt[t])


def _kalman_step(A, C, W, S, Wt):
    innov = C @ Wt @ C.T + S
    gain = guarded_solve(innov, C @ Wt @ A.T, "innovation covariance CWC'+S").T
    return symmetrize(A @ Wt @ A.T + W - gain @ (C @ Wt @ A.T)), innov


def kalman_forward(system: LinearSystem, W, S, N: int, W0=None,
                   wbar=None) -> KalmanSchedule:
    """Run the covariance recursion

        W[t+1] = A W[t] A' + W - A W[t] C'(C W[t] C' + S)^{-1} C W[t] A'

    from W[0] = W0 (default 0) and locate the steady point Winf by fixed-point
    iteration at tolerance 1e-12. `wbar` is the process-noise mean used by the
    filter's prediction step (default zero).
    """
    n, m = system.n, system.m
    A, C = system.A, system.C
    W = as_matrix(np.atleast_2d(np.asarray(W, dtype=float)), n, n, "W")
    check_psd(W, "W", sym_tol=1e-10)
    wbar = np.zeros(n) if wbar is None else np.asarray(wbar, dtype=float).reshape(n)
    S = as_matrix(np.atleast_2d(np.asarray(S, dtype=float)), m, m, "S")
    check_psd(S, "S", sym_tol=1e-10)
    guarded_solve(S, np.eye(m), "measurement covariance S")  # S > 0 with cond guard
    W0 = np.zeros((n, n)) if W0 is None else \
        as_matrix(np.atleast_2d(np.asarray(W0, dtype=float)), n, n, "W0")
    check_psd(W0, "W0", sym_tol=1e-10)

    Wt = [freeze(W0)]
    Lt = []
    cur = W0
    for _ in range(N):
        innov = C @ cur @ C.T + S
        Lt.append(freeze(guarded_solve(innov, C @ cur, "innovation covariance").T))
        cur, _ = _kalman_step(A, C, W, S, cur)
        Wt.append(freeze(cur))
    innov = C @ cur @ C.T + S
    Lt.append(freeze(guarded_solve(innov, C @ cur, "innovation covariance").T))

    Winf = W0.copy()
    for k in range(KALMAN_MAX_ITERS):
        nxt, _ = _kalman_step(A, C, W, S, Winf)
        step = float(np.linalg.norm(nxt - Winf, 2) / (1.0 + np.linalg.norm(Winf, 2)))
        Winf = nxt
        if step <= KALMAN_TOL:
            break
    else:
        raise NonConvergenceError("filter covariance recursion did not reach a "
                                  "fixed point; check detectability of (A, C)",
                                  residual=step)
    return KalmanSchedule(system=system, S=S, Wt=tuple(Wt), Lt=tuple(Lt),
                          Winf=Winf, wbar=wbar)


@dataclass(frozen=True)
class FilterStep:
    xhat_pred: np.ndarray
    xhat_post: np.ndarray


def filter_step(schedule: KalmanSchedule, xhat_prev_post, u_prev, y_t,
                t: int) -> FilterStep:
    """One measurement update: predict with the model mean, then correct by
    the output innovation y_t - C xhat_t."""
    if not 0 <= t < len(schedule.Lt):
        raise StructuralError(f"filter index {t} outside schedule range "
                              f"0..{len(schedule.Lt) - 1}")
    sys_ = schedule.system
    xhat_pred = sys_.A @ np.asarray(xhat_prev_post, dtype=float) \
        + sys_.B @ np.asarray(u_prev, dtype=float) + schedule.wbar
    innovation = np.asarray(y_t, dtype=float) - sys_.C @ xhat_pred
    return FilterStep(xhat_pred=xhat_pred,
                      xhat_post=xhat_pred + schedule.Lt[t] @ innovation)


@dataclass(frozen=True)
class LqgGainSchedule:
    """Output-feedback controller data: u_t = K[t] xhat_{t|t} + l[t].

    V, K, xi, l are indexed t = 0..N-1 with xi[N-1] = 0. Q_mu_t[s] for
    s = 0..N is the inflated penalty weighting the prediction error at filter
    time s (Q + 4 mu Q W_s Q); the value recursion consumes entries 1..N,
    with terminal V[N-1] = Q_mu_t[N] (the stage cost attached to the last
    prediction xhat_N). The Kalman schedule used during synthesis is
    attached; it is the same for every mu.
    """

    V: tuple
    K: tuple
    xi: tuple
    l: tuple
    Q_mu_t: tuple
    mu: float
    kalman: KalmanSchedule

    @property
    def horizon(self) -> int:
        return len(self.K)


def synthesize(system: LinearSystem, cost: CostSpec, W, S, mu: float,
               wbar=None) -> LqgGainSchedule:
    """Backward pass for the Gaussian output-feedback law.

        V[t-1] = (A+BK_t)'V[t](A+BK_t) + K_t'R K_t + Q_mu_{t-1}
        K[t]   = -(B'V[t]B + R)^{-1} B'V[t] A
        xi[t-1]= (A+BK_t)'(xi[t] + V[t] wbar)
        l[t]   = -(B'V[t]B + R)^{-1} B'(xi[t] + V[t] wbar)

    Gaussian noise has zero skewness, so the affine part is driven by the
    noise mean alone; with wbar = 0 every l[t] vanishes.
    """
    n = system.n
    wbar = np.zeros(n) if wbar is None else np.asarray(wbar, dtype=float).reshape(n)
    kalman = kalman_forward(system, W, S, cost.N, wbar=wbar)
    A, B, R = system.A, system.B, cost.R
    N = cost.N
    # Q_mu_t[s] weights the prediction error delta_s; the stage cost attached
    # to the prediction xhat_{t+1} therefore carries Q_mu_t[t+1].
    Q_mu_t = tuple(freeze(inflated_penalty(cost.Q, kalman.Wt[s], mu))
                   for s in range(N + 1))

    V = [None] * N
    K = [None] * N
    xi = [None] * N
    l = [None] * N
    V[N - 1] = Q_mu_t[N]
    xi[N - 1] = np.zeros(n)
    for t in range(N - 1, -1, -1):
        M = B.T @ V[t] @ B + R
        K[t] = freeze(-guarded_solve(M, B.T @ V[t] @ A,
                                     f"input curvature B'VB+R at stage {t}"))
        drive = xi[t] + V[t] @ wbar
        l[t] = freeze(-guarded_solve(M, B.T @ drive,
                                     f"input curvature B'VB+R at stage {t}"))
        if t > 0:
            Acl = A + B @ K[t]
            V[t - 1] = freeze(symmetrize(Acl.T @ V[t] @ Acl + K[t].T @ R @ K[t])
                              + Q_mu_t[t])
            xi[t - 1] = freeze(Acl.T @ drive)
    return LqgGainSchedule(V=tuple(V), K=tuple(K), xi=tuple(xi), l=tuple(l),
                           Q_mu_t=Q_mu_t, mu=float(mu), kalman=kalman)


def evaluate_risk(system: LinearSystem, cost: CostSpec,
                  schedule: LqgGainSchedule, x0=None) -> float:
    """Closed-form predictive-variance risk of the output-feedback law.

        J_R = E sum_{t=1..N} 4 xhat_t' Q Cov(delta_t) Q xhat_t

    where delta_t is the prediction error with covariance W_t (the skewness
    term vanishes for Gaussian noise). Backward recursion in (H, f, g) with
    the refinement-error covariance entering through tr(Theta_t Cov(e_t)).
    """
    if schedule.horizon != cost.N:
        raise StructuralError(f"schedule horizon {schedule.horizon} does not match "
                              f"cost horizon {cost.N}")
    A, B, Q = system.A, system.B, cost.Q
    N = cost.N
    kal = schedule.kalman
    wbar = kal.wbar
    x0 = np.zeros(system.n) if x0 is None else np.asarray(x0, dtype=float)

    H = symmetrize(4.0 * Q @ kal.Wt[N] @ Q)
    f = np.zeros(system.n)
    g = 0.0
    for t in range(N - 1, 0, -1):
        Acl = A + B @ schedule.K[t]
        shift = B @ schedule.l[t] + wbar
        Theta = symmetrize(Acl.T @ H @ Acl)
        eta = Acl.T @ (f + H @ shift)
        gamma = g + shift @ H @ shift + 2.0 * shift @ f
        H = Theta + symmetrize(4.0 * Q @ kal.Wt[t] @ Q)
        f = eta
        g = gamma + float(np.trace(Theta @ kal.refinement_cov(t)))
    Acl = A + B @ schedule.K[0]
    shift = B @ schedule.l[0] + wbar
    Theta0 = symmetrize(Acl.T @ H @ Acl)
    eta0 = Acl.T @ (f + H @ shift)
    gamma0 = g + shift @ H @ shift + 2.0 * shift @ f
    return float(x0 @ Theta0 @ x0 + 2.0 * eta0 @ x0 + gamma0)


def dual_value(system: LinearSystem, cost: CostSpec, schedule: LqgGainSchedule,
               x0=None, eps_bar: float = 0.0) -> DualValue:
    """Dual function value and induced LQ cost for the output-feedback law.

    The cost-to-go constant absorbs both the filter refinement covariance and
    the stage constants sum_t tr(Q W_t); at mu = 0 J equals the classical LQG
    optimal cost.
    """
    A, B, Q, R = system.A, system.B, cost.Q, cost.R
    N = cost.N
    kal = schedule.kalman
    wbar = kal.wbar
    x0 = np.zeros(system.n) if x0 is None else np.asarray(x0, dtype=float)

    P_next = np.zeros((system.n, system.n))
    c_next = 0.0
    P0 = zeta0 = c0 = None
    for t in range(N - 1, -1, -1):
        Vt, Kt, xit, lt = schedule.V[t], schedule.K[t], schedule.xi[t], schedule.l[t]
        Acl = A + B @ Kt
        P_t = symmetrize(Acl.T @ Vt @ Acl + Kt.T @ R @ Kt)
        d_t = c_next
        if t + 1 < N:
            d_t += float(np.trace(P_next @ kal.refinement_cov(t + 1)))
        M = B.T @ Vt @ B + R
        c_t = d_t + wbar @ Vt @ wbar - lt @ M @ lt + 2.0 * xit @ wbar
        if t == 0:
            P0 = P_t
            zeta0 = Acl.T @ (xit + Vt @ wbar)
            c0 = c_t
        P_next, c_next = P_t, c_t

    trace_term = sum(float(np.trace(Q @ kal.Wt[s])) for s in range(1, N + 1))
    g_mu = -schedule.mu * eps_bar + trace_term + float(x0 @ Q @ x0)
    D = float(x0 @ P0 @ x0 + 2.0 * zeta0 @ x0 + c0) + g_mu
    J_R = evaluate_risk(system, cost, schedule, x0)
    return DualValue(D=D, J=float(D - schedule.mu * J_R + schedule.mu * eps_bar))


@dataclass(frozen=True)
class SteadyLqgGains:
    """Doubly-infinite-horizon limits: filter covariance Winf, value matrix V,
    gain K, and the closed-loop spectral radius."""

    V: np.ndarray
    K: np.ndarray
    rho: float
    Winf: np.ndarray
    Q_mu_inf: np.ndarray

    def __post_init__(self):
        for name in ("V", "K", "Winf", "Q_mu_inf"):
            object.__setattr__(self, name, freeze(getattr(self, name)))


def steady_gains(system: LinearSystem, cost: CostSpec, W, S,
                 mu: float) -> SteadyLqgGains:
    kalman = kalman_forward(system, W, S, N=1)
    Q_mu_inf = inflated_penalty(cost.Q, kalman.Winf, mu)
    dare = solve_dare(system.A, system.B, Q_mu_inf, cost.R)
    return SteadyLqgGains(V=dare.V, K=dare.K, rho=dare.rho, Winf=kalman.Winf,
                          Q_mu_inf=Q_mu_inf)


@dataclass(frozen=True)
class ConvergenceDiagnostics:
    """Transient-decay diagnostics for the coupled filter/control recursions.

    Checks the bound shape

        ||V_t - V|| <= C1 ||Abar^{N-t-1}|| + C2 ||W_t - Winf||

    two ways: constants fitted as the cheapest linear envelope over the run,
    and constants from the closed-form expressions (which require Q > 0).
    Also reports the uniform bound on closed-loop products
    ||(A+BK_{k1}) ... (A+BK_{k2+1})|| <= sqrt(||V|| / sigma_min(Q)).
    """

    applicable: bool
    reason: str
    t_grid: Optional[np.ndarray] = None
    V_error_curve: Optional[np.ndarray] = None
    W_error_curve: Optional[np.ndarray] = None
    decay_curve: Optional[np.ndarray] = None
    fitted_C1: float = np.nan
    fitted_C2: float = np.nan
    bound_satisfied: bool = False
    formula_C1: float = np.nan
    formula_C2: float = np.nan
    formula_bound_satisfied: bool = False
    psi_max_norm: float = np.nan
    psi_bound: float = np.nan
    psi_bound_satisfied: bool = False


def convergence_diagnostics(system: LinearSystem, cost: CostSpec, W, S,
                            mu: float, t0: int, N: int,
                            W0=None) -> ConvergenceDiagnostics:
    """Simulate the doubly-extended horizon t0 <= t < N by index shifting and
    measure how fast V_t and W_t approach their steady values. W0 overrides
    the filter covariance at t0 (default zero; pass Winf to isolate the pure
    backward-recursion decay)."""
    if t0 >= N:
        raise StructuralError(f"need t0 < N, got t0={t0}, N={N}")
    if min_eig_sym(cost.Q) <= 0:
        return ConvergenceDiagnostics(
            applicable=False,
            reason="state penalty Q is singular; the product bound behind the "
                   "decay estimate requires Q > 0")

    steady = steady_gains(system, cost, W, S, mu)
    A, B, R, Q = system.A, system.B, cost.R, cost.Q
    T = N - t0
    # forward covariances over the shifted window (index i <-> time t0 + i)
    kal = kalman_forward(system, W, S, N=T, W0=W0)
    Q_mu = [inflated_penalty(Q, kal.Wt[s], mu) for s in range(T + 1)]

    V = [None] * T
    K = [None] * T
    V[T - 1] = Q_mu[T]
    for i in range(T - 1, -1, -1):
        M = B.T @ V[i] @ B + R
        K[i] = -guarded_solve(M, B.T @ V[i] @ A, "input curvature B'VB+R")
        if i > 0:
            Acl = A + B @ K[i]
            V[i - 1] = symmetrize(Acl.T @ V[i] @ Acl + K[i].T @ R @ K[i]) + Q_mu[i]

    V_err = np.array([np.linalg.norm(V[i] - steady.V, 2) for i in range(T)])
    # pair V_t with the covariance entering stage t's penalty (filter index t+1)
    W_err = np.array([np.linalg.norm(kal.Wt[i + 1] - steady.Winf, 2)
                      for i in range(T)])
    Abar = A + B @ steady.K
    powers = np.empty(T)
    Mpow = np.eye(system.n)
    norms = []
    for _ in range(T):
        norms.append(np.linalg.norm(Mpow, 2))
        Mpow = Abar @ Mpow
    norms = np.asarray(norms)
    powers = norms[::-1].copy()  # powers[i] = ||Abar^{T-1-i}||

    fitted_C1, fitted_C2, fit_ok = _fit_envelope(powers, W_err, V_err)

    sigma_min_Q = min_eig_sym(Q)
    normV = float(np.linalg.norm(steady.V, 2))
    formula_C1 = normV ** 1.5 / np.sqrt(sigma_min_Q)
    geom_sum = float(norms.sum())
    k = T
    while norms[-1] > 1e-14 and k < 10 ** 4:
        Mnorm = float(np.linalg.norm(np.linalg.matrix_power(Abar, k), 2))
        geom_sum += Mnorm
        if Mnorm < 1e-14:
            break
        k += 1
    formula_C2 = 4.0 * mu * float(np.linalg.norm(Q, 2)) ** 2 \
        * np.sqrt(normV / sigma_min_Q) * geom_sum
    formula_ok = bool(np.all(V_err <= formula_C1 * powers + formula_C2 * W_err
                             + 1e-9 * (1.0 + V_err.max())))

    psi_bound = float(np.sqrt(normV / sigma_min_Q))
    psi_max = 0.0
    stride = max(1, T // 64)
    for start in range(0, T - 1, stride):
        prod = np.eye(system.n)
        for k1 in range(start + 1, T):
            prod = (A + B @ K[k1]) @ prod
            psi_max = max(psi_max, float(np.linalg.norm(prod, 2)))

    return ConvergenceDiagnostics(
        applicable=True, reason="",
        t_grid=np.arange(t0, N), V_error_curve=V_err, W_error_curve=W_err,
        decay_curve=powers,
        fitted_C1=fitted_C1, fitted_C2=fitted_C2, bound_satisfied=fit_ok,
        formula_C1=formula_C1, formula_C2=formula_C2,
        formula_bound_satisfied=formula_ok,
        psi_max_norm=psi_max, psi_bound=psi_bound,
        psi_bound_satisfied=bool(psi_max <= psi_bound * (1.0 + 1e-9)))


def _fit_envelope(a, b, err):
    """Smallest (L1) nonnegative constants with c1*a + c2*b >= err pointwise."""
    from scipy.optimize import linprog

    res = linprog(c=[float(a.sum()), float(b.sum())],
                  A_ub=np.column_stack([-a, -b]), b_ub=-err,
                  bounds=[(0, None), (0, None)], method="highs")
    if not res.success:
        return np.nan, np.nan, False
    c1, c2 = float(res.x[0]), float(res.x[1])
    ok = bool(np.all(err <= c1 * a + c2 * b + 1e-9 * (1.0 + err.max())))
    return c1, c2, ok


def closed_loop_spectral_radius(system: LinearSystem, K) -> float:
    return spectral_radius(system.A + system.B @ np.asarray(K, dtype=float))
