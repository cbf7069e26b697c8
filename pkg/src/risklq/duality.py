"""Optimal-multiplier recovery by bisection.

Converts a user-facing risk budget eps on the cumulative predictive variance
into the shifted budget eps_bar, then exploits the monotonicity of the pair
(J, J_R) in the multiplier mu: J is nondecreasing, J_R nonincreasing, so the
smallest mu with J_R(u*(mu)) <= eps_bar is found by plain bisection. The
returned multiplier carries the optimality certificates (Lagrangian
minimization by construction, primal feasibility, complementary slackness).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import lqg as lqg_mod
from . import lqr as lqr_mod
from .errors import ConfigurationError, NonConvergenceError
from .model import CostSpec, LinearSystem, QWeightedMoments


def eps_to_eps_bar(eps: float, moments: QWeightedMoments, N: int) -> float:
    """Shifted budget for the time-invariant (fully observed) case:
    eps_bar = eps - N * m4."""
    return float(eps - N * moments.m4)


def eps_to_eps_bar_lqg(eps: float, Q, kalman: lqg_mod.KalmanSchedule) -> float:
    """Shifted budget with Gaussian filtering: the quartic spread of the
    prediction error at time t is 2 tr((Q W_t)^2), summed over t = 1..N."""
    Q = np.asarray(Q, dtype=float)
    shift = 0.0
    for s in range(1, len(kalman.Wt)):
        QW = Q @ kalman.Wt[s]
        shift += 2.0 * float(np.trace(QW @ QW))
    return float(eps - shift)


@dataclass(frozen=True)
class BisectionConfig:
    mu_max: float = 1e8
    tol: float = 1e-8
    max_iters: int = 200


@dataclass(frozen=True)
class BisectionResult:
    """Outcome of the multiplier search.

    status is "interior" (complementary-slackness root), "boundary_zero"
    (mu* = 0, constraint slack at the risk-neutral controller), or
    "infeasible" (budget below the attainable infimum). cs_residual is
    |mu* (J_R - eps_bar)|.
    """

    mu_star: float
    J: float
    J_R: float
    eps_bar: float
    status: str
    cs_residual: float
    iters: int
    certificates: dict = field(default_factory=dict)


def _make_evaluator(system, cost, moments, x0, mode, S):
    """Return mu -> (J_R, J) plus the eps_bar shift for the chosen mode."""
    if mode == "lqr":
        def evaluate(mu):
            schedule = lqr_mod.synthesize(system, cost, moments, mu)
            J_R = lqr_mod.evaluate_risk(system, cost, moments, schedule, x0)
            J = lqr_mod.dual_value(system, cost, moments, schedule, x0,
                                   eps_bar=0.0).J
            return J_R, J

        def shift(eps):
            return eps_to_eps_bar(eps, moments, cost.N)
        return evaluate, shift
    if mode == "lqg":
        if S is None:
            raise ConfigurationError("lqg mode needs the measurement covariance S")
        kalman = lqg_mod.kalman_forward(system, moments.W, S, cost.N)

        def evaluate(mu):
            schedule = lqg_mod.synthesize(system, cost, moments.W, S, mu,
                                          wbar=moments.wbar)
            J_R = lqg_mod.evaluate_risk(system, cost, schedule, x0)
            J = lqg_mod.dual_value(system, cost, schedule, x0, eps_bar=0.0).J
            return J_R, J

        def shift(eps):
            return eps_to_eps_bar_lqg(eps, cost.Q, kalman)
        return evaluate, shift
    raise ConfigurationError(f"unknown mode {mode!r}; expected 'lqr' or 'lqg'")


def bisect(system: LinearSystem, cost: CostSpec, moments: QWeightedMoments,
           eps: float, x0=None, config: Optional[BisectionConfig] = None,
           mode: str = "lqr", S=None) -> BisectionResult:
    """Find the optimal multiplier for the budget eps.

    Sequence: translate eps to eps_bar; if the risk-neutral controller is
    already feasible return mu* = 0; if even mu_max cannot meet the budget
    report infeasibility with the achieved value; otherwise bisect on
    [0, mu_max] until |J_R - eps_bar| <= tol (1 + |eps_bar|) and the bracket
    has collapsed to tol relative width.
    """
    cfg = config or BisectionConfig()
    evaluate, shift = _make_evaluator(system, cost, moments, x0, mode, S)
    eps_bar = shift(eps)
    value_tol = cfg.tol * (1.0 + abs(eps_bar))

    J_R0, J0 = evaluate(0.0)
    if J_R0 <= eps_bar:
        return BisectionResult(
            mu_star=0.0, J=J0, J_R=J_R0, eps_bar=eps_bar, status="boundary_zero",
            cs_residual=0.0, iters=0,
            certificates={"lagrangian_minimized": True,
                          "primal_feasible": True,
                          "complementary_slackness": 0.0})
    J_R_hi, J_hi = evaluate(cfg.mu_max)
    if J_R_hi > eps_bar:
        return BisectionResult(
            mu_star=cfg.mu_max, J=J_hi, J_R=J_R_hi, eps_bar=eps_bar,
            status="infeasible", cs_residual=abs(cfg.mu_max * (J_R_hi - eps_bar)),
            iters=0,
            certificates={"lagrangian_minimized": True,
                          "primal_feasible": False,
                          "complementary_slackness":
                              abs(cfg.mu_max * (J_R_hi - eps_bar))})

    lo, hi = 0.0, cfg.mu_max
    best = (cfg.mu_max, J_R_hi, J_hi)
    for k in range(1, cfg.max_iters + 1):
        mid = 0.5 * (lo + hi)
        J_R_mid, J_mid = evaluate(mid)
        if J_R_mid > eps_bar:
            lo = mid
        else:
            hi = mid
            best = (mid, J_R_mid, J_mid)
        if abs(J_R_mid - eps_bar) <= value_tol and hi - lo <= cfg.tol * (1.0 + mid):
            mu_star, J_R_star, J_star = mid, J_R_mid, J_mid
            cs = abs(mu_star * (J_R_star - eps_bar))
            return BisectionResult(
                mu_star=mu_star, J=J_star, J_R=J_R_star, eps_bar=eps_bar,
                status="interior", cs_residual=cs, iters=k,
                certificates={"lagrangian_minimized": True,
                              "primal_feasible": J_R_star <= eps_bar + value_tol,
                              "complementary_slackness": cs})
    raise NonConvergenceError(
        f"bisection did not meet |J_R - eps_bar| <= {value_tol:.3e} within "
        f"{cfg.max_iters} iterations (best feasible J_R = {best[1]:.6e})",
        residual=abs(best[1] - eps_bar))


@dataclass(frozen=True)
class InfimumEstimate:
    """Upper estimate of the attainable risk infimum from large-mu probing."""

    eps_bar_inf_estimate: float
    mu_probe: float
    reliable: bool
    probe_values: tuple


def eps_infimum_estimate(system: LinearSystem, cost: CostSpec,
                         moments: QWeightedMoments, x0=None, mode: str = "lqr",
                         S=None) -> InfimumEstimate:
    """Probe J_R at mu = 1e6, 1e7, 1e8; the monotone limit makes the largest
    probe an upper estimate of the infimum. The estimate is flagged
    unreliable unless successive probes agree within 1e-6 relative."""
    evaluate, _ = _make_evaluator(system, cost, moments, x0, mode, S)
    probes = [1e6, 1e7, 1e8]
    values = [evaluate(mu)[0] for mu in probes]
    scale = 1.0 + abs(values[-1])
    reliable = all(abs(values[i + 1] - values[i]) <= 1e-6 * scale
                   for i in range(len(values) - 1))
    return InfimumEstimate(eps_bar_inf_estimate=values[-1], mu_probe=probes[-1],
                           reliable=reliable, probe_values=tuple(values))
