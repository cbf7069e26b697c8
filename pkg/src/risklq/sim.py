"""Seeded closed-loop simulation engine.

Rollouts are deterministic in the seed: the process stream is a pure
function of (seed, time, channel) and never depends on the controller, so
competing controllers simulated with the same seed see identical noise
(common random numbers). Estimate-feedback controllers run the Kalman
measurement update inline; each rollout owns its filter state, so rollouts
can execute concurrently.

Two execution paths are provided: `rollout` records a full single-trajectory
trace (replayable bit-identically), and `rollout_batch` vectorizes many
rollouts for Monte-Carlo validation of the closed-form risk functionals.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .baselines import LeqgGains
from .errors import DivergenceError, StructuralError
from .lqg import KalmanSchedule, LqgGainSchedule, filter_step
from .lqr import GainSchedule, SteadyGains
from .model import CostSpec, LinearSystem, NoiseSpec, QWeightedMoments, sample_noise

STATE_OVERFLOW = 1e150


@dataclass(frozen=True)
class StateFeedback:
    """u_t = K[t] x_t + l[t]; offsets default to zero."""

    controller_id: str
    K: tuple
    l: Optional[tuple] = None

    @property
    def horizon(self) -> int:
        return len(self.K)

    def offset(self, t):
        return None if self.l is None else self.l[t]


@dataclass(frozen=True)
class EstimateFeedback:
    """u_t = K[t] T[t] xhat_{t|t} + l[t] with the filter run inline.

    T[t] is an optional estimate distortion (used by the exponential-cost
    baseline); identity when absent.
    """

    controller_id: str
    K: tuple
    l: tuple
    kalman: KalmanSchedule
    estimate_transform: Optional[tuple] = None

    @property
    def horizon(self) -> int:
        return len(self.K)


Controller = Union[StateFeedback, EstimateFeedback]


def from_lqr_schedule(schedule: GainSchedule, controller_id: str) -> StateFeedback:
    return StateFeedback(controller_id=controller_id, K=schedule.K, l=schedule.l)


def from_steady_gains(steady: SteadyGains, N: int, controller_id: str) -> StateFeedback:
    return StateFeedback(controller_id=controller_id, K=(steady.K,) * N,
                         l=(steady.l,) * N)


def from_lqg_schedule(schedule: LqgGainSchedule, controller_id: str) -> EstimateFeedback:
    return EstimateFeedback(controller_id=controller_id, K=schedule.K,
                            l=schedule.l, kalman=schedule.kalman)


def from_leqg(gains: LeqgGains, controller_id: str) -> Controller:
    if gains.mode == "fully_observed":
        return StateFeedback(controller_id=controller_id, K=gains.K)
    return EstimateFeedback(controller_id=controller_id, K=gains.K,
                            l=tuple(np.zeros(k.shape[0]) for k in gains.K),
                            kalman=gains.kalman,
                            estimate_transform=gains.estimate_transform)


@dataclass(frozen=True)
class SimulationTrace:
    """One closed-loop trajectory with the injected noise recorded, so the
    trace is replayable exactly from (scenario, seed)."""

    controller_id: str
    seed: int
    states: np.ndarray                      # (N+1, n)
    inputs: np.ndarray                      # (N, p)
    stage_state_penalty: np.ndarray         # (N+1,)
    stage_input_penalty: np.ndarray         # (N,)
    process_noise: np.ndarray               # (N, n); row t is w_{t+1}
    outputs: Optional[np.ndarray] = None    # (N, m)
    measurement_noise: Optional[np.ndarray] = None
    xhat_pred: Optional[np.ndarray] = None  # (N+1, n)
    xhat_post: Optional[np.ndarray] = None  # (N+1, n)

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]

    def total_cost(self) -> float:
        return float(self.stage_state_penalty.sum() + self.stage_input_penalty.sum())


def _stream_seeds(seed: int):
    """Child seeds for the process and measurement channels."""
    words = np.random.SeedSequence(int(seed)).generate_state(2)
    return int(words[0]), int(words[1])


def _check_finite(x, t):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > STATE_OVERFLOW:
        raise DivergenceError(f"state diverged at step {t}", first_bad_index=t)


def rollout(system: LinearSystem, cost: CostSpec, controller: Controller,
            noise: NoiseSpec, measurement_noise: Optional[NoiseSpec] = None,
            x0=None, N: Optional[int] = None, seed: int = 0) -> SimulationTrace:
    """Simulate one closed-loop trajectory of length N (default: the
    controller's horizon)."""
    N = controller.horizon if N is None else int(N)
    if controller.horizon < N:
        raise StructuralError(f"controller horizon {controller.horizon} is shorter "
                              f"than the requested {N} steps")
    if noise.dim != system.n:
        raise StructuralError("process noise dimension does not match the state")
    filtered = isinstance(controller, EstimateFeedback)
    if filtered and measurement_noise is None:
        raise StructuralError("estimate feedback needs a measurement noise spec")
    x0 = np.zeros(system.n) if x0 is None else np.asarray(x0, dtype=float)
    A, B, C, Q, R = system.A, system.B, system.C, cost.Q, cost.R

    w_seed, v_seed = _stream_seeds(seed)
    w = sample_noise(noise, w_seed, N)
    states = np.empty((N + 1, system.n))
    inputs = np.empty((N, system.p))
    states[0] = x0

    outputs = vnoise = xhat_pred = xhat_post = None
    if filtered:
        if measurement_noise.dim != system.m:
            raise StructuralError("measurement noise dimension does not match "
                                  "the output")
        kal = controller.kalman
        vnoise = sample_noise(measurement_noise, v_seed, N)
        outputs = np.empty((N, system.m))
        xhat_pred = np.empty((N + 1, system.n))
        xhat_post = np.empty((N + 1, system.n))
        outputs[0] = C @ x0 + vnoise[0]
        xhat_pred[0] = x0
        xhat_post[0] = x0 + kal.Lt[0] @ (outputs[0] - C @ x0)

    for t in range(N):
        if filtered:
            est = xhat_post[t]
            if controller.estimate_transform is not None:
                est = controller.estimate_transform[t] @ est
            u = controller.K[t] @ est + controller.l[t]
        else:
            u = controller.K[t] @ states[t]
            off = controller.offset(t)
            if off is not None:
                u = u + off
        inputs[t] = u
        states[t + 1] = A @ states[t] + B @ u + w[t]
        _check_finite(states[t + 1], t + 1)
        if filtered:
            if t + 1 < N:
                outputs[t + 1] = C @ states[t + 1] + vnoise[t + 1]
                step = filter_step(kal, xhat_post[t], u, outputs[t + 1], t + 1)
                xhat_pred[t + 1] = step.xhat_pred
                xhat_post[t + 1] = step.xhat_post
            else:
                # no measurement is drawn at the final state
                xhat_pred[N] = A @ xhat_post[N - 1] + B @ u + kal.wbar
                xhat_post[N] = xhat_pred[N]

    return SimulationTrace(
        controller_id=controller.controller_id, seed=int(seed),
        states=states, inputs=inputs,
        stage_state_penalty=np.einsum("ti,ij,tj->t", states, Q, states),
        stage_input_penalty=np.einsum("ti,ij,tj->t", inputs, R, inputs),
        process_noise=w, outputs=outputs, measurement_noise=vnoise,
        xhat_pred=xhat_pred, xhat_post=xhat_post)


@dataclass(frozen=True)
class BatchRollout:
    """Vectorized rollouts: leading axis is the rollout index."""

    controller_id: str
    seed: int
    states: np.ndarray                      # (R, N+1, n)
    inputs: np.ndarray                      # (R, N, p)
    xhat_pred: Optional[np.ndarray] = None  # (R, N+1, n)
    xhat_post: Optional[np.ndarray] = None

    @property
    def n_rollouts(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.inputs.shape[1]


def rollout_batch(system: LinearSystem, cost: CostSpec, controller: Controller,
                  noise: NoiseSpec, measurement_noise: Optional[NoiseSpec] = None,
                  x0=None, N: Optional[int] = None, n_rollouts: int = 1,
                  seed: int = 0) -> BatchRollout:
    """Simulate n_rollouts independent trajectories in one vectorized sweep."""
    N = controller.horizon if N is None else int(N)
    if controller.horizon < N:
        raise StructuralError(f"controller horizon {controller.horizon} is shorter "
                              f"than the requested {N} steps")
    R_count = int(n_rollouts)
    filtered = isinstance(controller, EstimateFeedback)
    if filtered and measurement_noise is None:
        raise StructuralError("estimate feedback needs a measurement noise spec")
    x0 = np.zeros(system.n) if x0 is None else np.asarray(x0, dtype=float)
    A, B, C = system.A, system.B, system.C

    w_seed, v_seed = _stream_seeds(seed)
    w = sample_noise(noise, w_seed, N * R_count).reshape(N, R_count, system.n)
    states = np.empty((R_count, N + 1, system.n))
    inputs = np.empty((R_count, N, system.p))
    states[:, 0] = x0

    xhat_pred = xhat_post = None
    if filtered:
        kal = controller.kalman
        v = sample_noise(measurement_noise, v_seed,
                         N * R_count).reshape(N, R_count, system.m)
        xhat_pred = np.empty((R_count, N + 1, system.n))
        xhat_post = np.empty((R_count, N + 1, system.n))
        xhat_pred[:, 0] = x0
        y0 = states[:, 0] @ C.T + v[0]
        xhat_post[:, 0] = xhat_pred[:, 0] + (y0 - xhat_pred[:, 0] @ C.T) @ kal.Lt[0].T

    for t in range(N):
        if filtered:
            est = xhat_post[:, t]
            if controller.estimate_transform is not None:
                est = est @ controller.estimate_transform[t].T
            u = est @ controller.K[t].T + controller.l[t]
        else:
            u = states[:, t] @ controller.K[t].T
            off = controller.offset(t)
            if off is not None:
                u = u + off
        inputs[:, t] = u
        states[:, t + 1] = states[:, t] @ A.T + u @ B.T + w[t]
        _check_finite(states[:, t + 1], t + 1)
        if filtered:
            pred = xhat_post[:, t] @ A.T + u @ B.T + kal.wbar
            xhat_pred[:, t + 1] = pred
            if t + 1 < N:
                y = states[:, t + 1] @ C.T + v[t + 1]
                xhat_post[:, t + 1] = pred + (y - pred @ C.T) @ kal.Lt[t + 1].T
            else:
                xhat_post[:, t + 1] = pred

    return BatchRollout(controller_id=controller.controller_id, seed=int(seed),
                        states=states, inputs=inputs,
                        xhat_pred=xhat_pred, xhat_post=xhat_post)


@dataclass(frozen=True)
class EnsembleStats:
    """Per-controller summary over CRN-paired rollouts."""

    controller_id: str
    n_rollouts: int
    mean_total_cost: float = np.nan
    total_cost_std_error: float = np.nan
    state_penalties: np.ndarray = field(default_factory=lambda: np.empty(0))
    input_penalties: np.ndarray = field(default_factory=lambda: np.empty(0))
    predictive_variance_estimate: float = np.nan
    predictive_variance_std_error: float = np.nan
    diverged: bool = False
    error: str = ""

    def cdf_pairs(self, which: str = "state"):
        """Pooled empirical CDF as (threshold, probability) pairs."""
        values = np.sort(self.state_penalties if which == "state"
                         else self.input_penalties)
        probs = np.arange(1, values.size + 1) / values.size
        return values, probs

    def tail_prob(self, tau: float, which: str = "state") -> float:
        values = self.state_penalties if which == "state" else self.input_penalties
        if values.size == 0:
            return np.nan
        return float(np.mean(values > tau))


def ensemble(system: LinearSystem, cost: CostSpec, controllers: Sequence[Controller],
             noise: NoiseSpec, measurement_noise: Optional[NoiseSpec] = None,
             x0=None, N: Optional[int] = None, n_rollouts: int = 1,
             base_seed: int = 0,
             moments: Optional[QWeightedMoments] = None) -> dict:
    """Run every controller over the same CRN-paired seeds.

    Rollout i of every controller uses seed base_seed + i, so comparisons are
    variance reduced. Divergence of one controller is reported in its stats
    entry and does not abort the others. Stage penalties are pooled across
    time and rollouts for the empirical CDFs.
    """
    results = {}
    for controller in controllers:
        traces = []
        failure = None
        for i in range(int(n_rollouts)):
            try:
                traces.append(rollout(system, cost, controller, noise,
                                      measurement_noise, x0, N,
                                      seed=base_seed + i))
            except DivergenceError as exc:
                failure = exc
                break
        if failure is not None:
            results[controller.controller_id] = EnsembleStats(
                controller_id=controller.controller_id, n_rollouts=len(traces),
                diverged=True, error=str(failure))
            continue
        totals = np.array([tr.total_cost() for tr in traces])
        se = totals.std(ddof=1) / np.sqrt(len(totals)) if len(totals) > 1 else 0.0
        pv = pv_se = np.nan
        kal = controller.kalman if isinstance(controller, EstimateFeedback) else None
        if moments is not None or kal is not None:
            est = estimate_predictive_variance(traces, system, cost,
                                               moments=moments, kalman=kal)
            pv, pv_se = est.value, est.std_error
        results[controller.controller_id] = EnsembleStats(
            controller_id=controller.controller_id, n_rollouts=len(traces),
            mean_total_cost=float(totals.mean()), total_cost_std_error=float(se),
            state_penalties=np.concatenate([tr.stage_state_penalty for tr in traces]),
            input_penalties=np.concatenate([tr.stage_input_penalty for tr in traces]),
            predictive_variance_estimate=pv, predictive_variance_std_error=pv_se)
    return results


@dataclass(frozen=True)
class PredictiveVarianceEstimate:
    value: float
    std_error: float
    n_rollouts: int


def estimate_predictive_variance(traces, system: LinearSystem, cost: CostSpec,
                                 moments: Optional[QWeightedMoments] = None,
                                 kalman: Optional[KalmanSchedule] = None
                                 ) -> PredictiveVarianceEstimate:
    """Sample estimate of the cumulative predictive variance

        E sum_{t=1..N} (x_t'Q x_t - E[x_t'Q x_t | previous step])^2,

    with the conditional mean computed from the known model:
    xhat_t' Q xhat_t + tr(Q W_{t-1-ish}) where xhat_t is the model-based
    one-step prediction and the trace term uses the prediction-error
    covariance at time t. Accepts a list of traces or a BatchRollout.
    """
    if kalman is None and moments is None:
        raise StructuralError("need either stationary moments (fully observed) "
                              "or a Kalman schedule (filtered)")
    if isinstance(traces, BatchRollout):
        states = traces.states
        inputs = traces.inputs
        xhat_pred = traces.xhat_pred
    else:
        states = np.stack([tr.states for tr in traces])
        inputs = np.stack([tr.inputs for tr in traces])
        if kalman is not None:
            if any(tr.xhat_pred is None for tr in traces):
                raise StructuralError("filtered predictive-variance estimation "
                                      "needs traces with recorded estimates")
            xhat_pred = np.stack([tr.xhat_pred for tr in traces])
        else:
            xhat_pred = None
    N = inputs.shape[1]
    Q = cost.Q

    if kalman is not None:
        xhat = xhat_pred[:, 1:N + 1]                      # (R, N, n)
        trace_terms = np.array([np.trace(Q @ kalman.Wt[t]) for t in range(1, N + 1)])
    else:
        xhat = states[:, :N] @ system.A.T + inputs @ system.B.T + moments.wbar
        trace_terms = np.full(N, float(np.trace(Q @ moments.W)))

    xqx = np.einsum("rti,ij,rtj->rt", states[:, 1:N + 1], Q, states[:, 1:N + 1])
    pred = np.einsum("rti,ij,rtj->rt", xhat, Q, xhat) + trace_terms
    delta_sq_sums = ((xqx - pred) ** 2).sum(axis=1)
    R_count = delta_sq_sums.shape[0]
    se = float(delta_sq_sums.std(ddof=1) / np.sqrt(R_count)) if R_count > 1 else 0.0
    return PredictiveVarianceEstimate(value=float(delta_sq_sums.mean()),
                                      std_error=se, n_rollouts=R_count)
