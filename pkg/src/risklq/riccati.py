"""Riccati difference-equation kernel.

One backward step, fixed points of the discrete algebraic Riccati equation
(DARE) obtained by iterating that step, and a trajectory-difference
diagnostic. Every value matrix is re-symmetrized after each update to keep
floating-point drift under control.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonConvergenceError, StructuralError
from .linalg import freeze, guarded_solve, spectral_radius, symmetrize


@dataclass(frozen=True)
class RiccatiStepResult:
    """Cost-to-go matrix V and feedback gain K at the earlier stage."""

    V: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "V", freeze(self.V))
        object.__setattr__(self, "K", freeze(self.K))


@dataclass(frozen=True)
class DareSolution:
    """Stabilizing fixed point of the Riccati map.

    rho is the spectral radius of the closed loop A + BK; residual is the
    spectral norm of V - riccati_map(V) at the returned V.
    """

    V: np.ndarray
    K: np.ndarray
    rho: float
    iters: int
    residual: float

    def __post_init__(self):
        object.__setattr__(self, "V", freeze(self.V))
        object.__setattr__(self, "K", freeze(self.K))


def rde_step(V_next, A, B, Q_stage, R, stage: int | None = None) -> RiccatiStepResult:
    """One backward Riccati step.

        V = A'V+ A + Q_stage - A'V+ B (B'V+ B + R)^{-1} B'V+ A
        K = -(B'V+ B + R)^{-1} B'V+ A

    Fails with a singularity error (naming `stage` when given) if the input
    curvature B'V+ B + R is singular or has condition number above 1e12.
    """
    V_next = symmetrize(np.asarray(V_next, dtype=float))
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    M = B.T @ V_next @ B + np.asarray(R, dtype=float)
    G = B.T @ V_next @ A
    where = "input curvature B'VB+R" if stage is None else \
        f"input curvature B'VB+R at stage {stage}"
    X = guarded_solve(M, G, where)
    V = symmetrize(A.T @ V_next @ A + np.asarray(Q_stage, dtype=float) - G.T @ X)
    return RiccatiStepResult(V=V, K=-X)


def riccati_map(V, A, B, Q_stage, R):
    """The map whose fixed point defines the DARE; V is symmetrized first."""
    return rde_step(V, A, B, Q_stage, R).V


DARE_TOL = 1e-12
DARE_MAX_ITERS = 10 ** 5


def solve_dare(A, B, Q_stage, R, tol: float = DARE_TOL,
               max_iters: int = DARE_MAX_ITERS) -> DareSolution:
    """Stabilizing DARE solution by backward iteration from V = Q_stage.

    Converges when the relative step ||V_{k+1} - V_k|| / (1 + ||V_k||) drops
    below tol. Matches the finite-horizon limit construction exactly, so it
    doubles as a convergence check for the backward recursions.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q_stage = symmetrize(np.asarray(Q_stage, dtype=float))
    R = np.asarray(R, dtype=float)
    V = Q_stage.copy()
    step = np.inf
    for k in range(1, max_iters + 1):
        res = rde_step(V, A, B, Q_stage, R)
        step = float(np.linalg.norm(res.V - V, 2) / (1.0 + np.linalg.norm(V, 2)))
        V = res.V
        if step <= tol:
            K = res.K
            residual = float(np.linalg.norm(V - riccati_map(V, A, B, Q_stage, R), 2))
            return DareSolution(V=V, K=K, rho=spectral_radius(A + B @ K),
                                iters=k, residual=residual)
    raise NonConvergenceError(
        f"DARE iteration did not converge within {max_iters} steps "
        f"(last relative step {step:.3e})", residual=step)


def riccati_difference_identity(V_seq, Vbar_seq, K_seq, L_seq, Q_seq, Qbar_seq,
                                A, B) -> float:
    """Residual of the two-trajectory difference identity.

    For trajectories V, Vbar generated by rde_step under stage penalties
    Q_seq, Qbar_seq (with gains K, L), the difference satisfies

        V_{t-1} - Vbar_{t-1} = (A + B L_t)'(V_t - Vbar_t)(A + B K_t)
                               + Q_{t-1} - Qbar_{t-1}

    exactly in exact arithmetic. Returns the max spectral-norm residual over
    t; the contract for well-conditioned inputs is <= 1e-9 (1 + max ||V_t||).

    Sequences are ordered by time index: V_seq[t] is the value at stage t,
    K_seq[t] the gain computed from V_seq[t] (so V_seq[t-1] = step of
    V_seq[t] under Q_seq[t-1]).
    """
    if not (len(V_seq) == len(Vbar_seq) and len(K_seq) == len(L_seq)):
        raise StructuralError("trajectory sequences have mismatched lengths")
    if len(K_seq) != len(V_seq) or len(Q_seq) != len(V_seq) - 1 \
            or len(Qbar_seq) != len(V_seq) - 1:
        raise StructuralError("expected one gain per value matrix and one stage "
                              "penalty per transition")
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    worst = 0.0
    for t in range(len(V_seq) - 1, 0, -1):
        dV = V_seq[t] - Vbar_seq[t]
        predicted = (A + B @ L_seq[t]).T @ dV @ (A + B @ K_seq[t]) \
            + Q_seq[t - 1] - Qbar_seq[t - 1]
        actual = V_seq[t - 1] - Vbar_seq[t - 1]
        worst = max(worst, float(np.linalg.norm(actual - predicted, 2)))
    return worst
