"""Batch command-line front end.

Verbs: synthesize, bisect, simulate, evaluate-risk, breakdown-scan,
reproduce. Every output file embeds (config hash, seed, version); repeated
runs of the same command produce byte-identical numeric payloads. Numeric
values are written with full double precision via repr.

Exit codes: 0 success, 2 scenario/config parse error, 3 assumption failure,
4 singularity, 5 infeasible budget, 6 closed-loop divergence, 1 any other
library error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, baselines, duality, lqg, lqr, sim
from .errors import (AssumptionError, ConfigurationError, DivergenceError,
                     InfeasibleError, RiskLqError, ScenarioParseError,
                     SingularityError)
from .model import MonteCarloConfig, compute_moments, validate_assumptions
from .scenarios import Scenario, config_hash, get_scenario

EXIT_CODES = {
    ScenarioParseError: 2,
    AssumptionError: 3,
    SingularityError: 4,
    InfeasibleError: 5,
    DivergenceError: 6,
}

FIGURES = {
    "fig2": {"scenario": "wind-lqr", "mu": [1.0], "theta": [0.001],
             "series": "state_penalty"},
    "fig3": {"scenario": "wind-lqr", "mu": [1.0], "theta": [0.001],
             "series": "cdf"},
    "fig4": {"scenario": "wind-lqr", "mu": [1.0], "theta": [0.001],
             "series": "trajectory"},
    "fig5": {"scenario": "wind-lqg", "mu": [1.0], "theta": [0.003],
             "series": "state_penalty"},
    "fig6": {"scenario": "wind-lqg", "mu": [0.5, 100.0], "theta": [0.006, 0.01],
             "series": "cdf"},
}


def _fmt(x) -> str:
    return repr(float(x))


def _meta(args_payload: dict, seed) -> dict:
    return {"config_hash": config_hash(args_payload), "seed": seed,
            "version": __version__}


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, meta: dict, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# " + ",".join(f"{k}={v}" for k, v in sorted(meta.items())) + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join("" if v is None else _fmt(v) for v in row) + "\n")


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get("RISKLQ_OUTDIR", "risklq-out"))


def _scenario_moments(sc: Scenario, seed: int = 0):
    return compute_moments(sc.noise, sc.cost.Q,
                           MonteCarloConfig(samples=10 ** 6, seed=seed))


def _check_assumptions(sc: Scenario, mode: str):
    S = sc.measurement_noise.cov_mat if sc.measurement_noise is not None else None
    W = sc.noise.cov()
    report = validate_assumptions(sc.system, sc.cost, W, S)
    if not report.stabilizable_AB:
        raise AssumptionError("(A, B) is not stabilizable; synthesis cannot "
                              "produce a stabilizing controller")
    if mode == "lqg":
        if S is None:
            raise ConfigurationError("lqg mode needs a measurement_noise block "
                                     "in the scenario")
        if not report.detectable_AC:
            raise AssumptionError("(A, C) is not detectable; the filter "
                                  "covariance recursion will not converge")
    for flag, value in report.as_dict().items():
        if value is False:
            print(f"warning: assumption flag {flag} failed", file=sys.stderr)
    return report


def _schedule_payload_lqr(schedule: lqr.GainSchedule) -> dict:
    return {
        "format": "risklq-gain-schedule", "mode": "lqr", "mu": schedule.mu,
        "horizon": schedule.horizon,
        "Q_mu": schedule.Q_mu.reshape(-1).tolist(),
        "V": [v.reshape(-1).tolist() for v in schedule.V],
        "K": [k.reshape(-1).tolist() for k in schedule.K],
        "xi": [x.tolist() for x in schedule.xi],
        "l": [x.tolist() for x in schedule.l],
        "c": list(schedule.c),
    }


def _schedule_payload_lqg(schedule: lqg.LqgGainSchedule) -> dict:
    kal = schedule.kalman
    return {
        "format": "risklq-gain-schedule", "mode": "lqg", "mu": schedule.mu,
        "horizon": schedule.horizon,
        "Q_mu_t": [q.reshape(-1).tolist() for q in schedule.Q_mu_t],
        "V": [v.reshape(-1).tolist() for v in schedule.V],
        "K": [k.reshape(-1).tolist() for k in schedule.K],
        "xi": [x.tolist() for x in schedule.xi],
        "l": [x.tolist() for x in schedule.l],
        "kalman": {
            "S": kal.S.reshape(-1).tolist(),
            "Wt": [w.reshape(-1).tolist() for w in kal.Wt],
            "Lt": [g.reshape(-1).tolist() for g in kal.Lt],
            "Winf": kal.Winf.reshape(-1).tolist(),
        },
    }


def cmd_synthesize(args) -> int:
    sc = get_scenario(args.scenario, args.horizon)
    out = _out_dir(args)
    payload_args = {"command": "synthesize", "scenario": args.scenario,
                    "mu": args.mu, "horizon": sc.cost.N, "mode": args.mode}
    meta = _meta(payload_args, args.seed)
    report = _check_assumptions(sc, args.mode)
    diagnostics = {"meta": meta, "scenario": sc.name,
                   "assumptions": report.as_dict(), "per_mu": {}}
    for mu in args.mu:
        if args.mode == "lqr":
            moments = _scenario_moments(sc, args.seed)
            schedule = lqr.synthesize(sc.system, sc.cost, moments, mu)
            steady = lqr.steady_state(sc.system, sc.cost, moments, mu)
            payload = _schedule_payload_lqr(schedule)
            diagnostics["per_mu"][_fmt(mu)] = {
                "rho": steady.rho,
                "K_steady": steady.K.reshape(-1).tolist(),
                "l_steady": steady.l.tolist(),
            }
        else:
            gauss = sc.gaussian_process_noise()
            schedule = lqg.synthesize(sc.system, sc.cost, gauss.cov_mat,
                                      sc.measurement_noise.cov_mat, mu,
                                      wbar=gauss.mean_vec)
            steady = lqg.steady_gains(sc.system, sc.cost, gauss.cov_mat,
                                      sc.measurement_noise.cov_mat, mu)
            payload = _schedule_payload_lqg(schedule)
            diagnostics["per_mu"][_fmt(mu)] = {
                "rho": steady.rho,
                "K_steady": steady.K.reshape(-1).tolist(),
                "Winf": steady.Winf.reshape(-1).tolist(),
            }
        payload["meta"] = meta
        _write_json(out / f"schedule_{sc.name}_mu{_fmt(mu)}.json", payload)
    _write_json(out / f"synthesize_{sc.name}.json", diagnostics)
    print(f"wrote {len(args.mu)} schedule file(s) to {out}")
    return 0


def cmd_bisect(args) -> int:
    sc = get_scenario(args.scenario, args.horizon)
    _check_assumptions(sc, args.mode)
    moments = _scenario_moments(sc, args.seed)
    S = sc.measurement_noise.cov_mat if sc.measurement_noise is not None else None
    result = duality.bisect(sc.system, sc.cost, moments, args.eps, sc.x0,
                            mode=args.mode, S=S)
    payload_args = {"command": "bisect", "scenario": args.scenario,
                    "eps": args.eps, "mode": args.mode, "horizon": sc.cost.N}
    payload = {
        "meta": _meta(payload_args, args.seed),
        "mu_star": result.mu_star, "J": result.J, "J_R": result.J_R,
        "eps_bar": result.eps_bar, "status": result.status,
        "cs_residual": result.cs_residual, "iters": result.iters,
        "certificates": result.certificates,
    }
    out = _out_dir(args)
    _write_json(out / f"bisect_{sc.name}.json", payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    if result.status == "infeasible":
        raise InfeasibleError(f"risk budget eps={args.eps} infeasible: achieved "
                              f"J_R={result.J_R:.6e} > eps_bar={result.eps_bar:.6e}")
    return 0


def cmd_evaluate_risk(args) -> int:
    sc = get_scenario(args.scenario, args.horizon)
    moments = _scenario_moments(sc, args.seed)
    rows = {}
    for mu in args.mu:
        if args.mode == "lqr":
            schedule = lqr.synthesize(sc.system, sc.cost, moments, mu)
            J_R = lqr.evaluate_risk(sc.system, sc.cost, moments, schedule, sc.x0)
            dv = lqr.dual_value(sc.system, sc.cost, moments, schedule, sc.x0)
        else:
            gauss = sc.gaussian_process_noise()
            schedule = lqg.synthesize(sc.system, sc.cost, gauss.cov_mat,
                                      sc.measurement_noise.cov_mat, mu,
                                      wbar=gauss.mean_vec)
            J_R = lqg.evaluate_risk(sc.system, sc.cost, schedule, sc.x0)
            dv = lqg.dual_value(sc.system, sc.cost, schedule, sc.x0)
        rows[_fmt(mu)] = {"J_R": J_R, "J": dv.J, "D": dv.D}
    payload_args = {"command": "evaluate-risk", "scenario": args.scenario,
                    "mu": args.mu, "mode": args.mode, "horizon": sc.cost.N}
    payload = {"meta": _meta(payload_args, args.seed), "values": rows,
               "m4": moments.m4}
    _write_json(_out_dir(args) / f"risk_{sc.name}.json", payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_breakdown_scan(args) -> int:
    sc = get_scenario(args.scenario, args.horizon)
    W = sc.noise.cov()
    mode = "fully_observed" if args.mode == "lqr" else "gaussian_output"
    S = sc.measurement_noise.cov_mat if sc.measurement_noise is not None else None
    theta = baselines.find_breakdown_theta(sc.system, sc.cost, W, sc.cost.N,
                                           mode=mode, S=S)
    payload_args = {"command": "breakdown-scan", "scenario": args.scenario,
                    "horizon": sc.cost.N, "mode": args.mode}
    payload = {"meta": _meta(payload_args, args.seed),
               "breakdown_theta": theta, "horizon": sc.cost.N}
    _write_json(_out_dir(args) / f"breakdown_{sc.name}.json", payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _build_controllers(sc: Scenario, mode: str, mus, thetas, moments=None):
    controllers = []
    W = sc.noise.cov()
    if mode == "lqr":
        for mu in mus:
            schedule = lqr.synthesize(sc.system, sc.cost, moments, mu)
            name = "lqr" if mu == 0 else f"risk_aware_mu{_fmt(mu)}"
            controllers.append(sim.from_lqr_schedule(schedule, name))
        for theta in thetas:
            gains = baselines.synthesize_leqg(sc.system, sc.cost, W, theta,
                                              sc.cost.N, mode="fully_observed")
            controllers.append(sim.from_leqg(gains, f"leqg_theta{_fmt(theta)}"))
    else:
        gauss = sc.gaussian_process_noise()
        S = sc.measurement_noise.cov_mat
        for mu in mus:
            schedule = lqg.synthesize(sc.system, sc.cost, gauss.cov_mat, S, mu,
                                      wbar=gauss.mean_vec)
            name = "lqg" if mu == 0 else f"risk_aware_mu{_fmt(mu)}"
            controllers.append(sim.from_lqg_schedule(schedule, name))
        for theta in thetas:
            gains = baselines.synthesize_leqg(sc.system, sc.cost,
                                              gauss.cov_mat, theta, sc.cost.N,
                                              mode="gaussian_output", S=S)
            controllers.append(sim.from_leqg(gains, f"leqg_theta{_fmt(theta)}"))
    return controllers


def _trace_rows(trace: sim.SimulationTrace, system):
    n, p = system.n, system.p
    header = ["t"] + [f"x{i+1}" for i in range(n)] + [f"u{i+1}" for i in range(p)]
    if trace.outputs is not None:
        header += [f"y{i+1}" for i in range(system.m)]
        header += [f"xhat{i+1}" for i in range(n)]
        header += [f"xhatf{i+1}" for i in range(n)]
    header += ["state_penalty", "input_penalty"]
    rows = []
    N = trace.horizon
    for t in range(N + 1):
        row = [t] + list(trace.states[t])
        row += list(trace.inputs[t]) if t < N else [None] * p
        if trace.outputs is not None:
            row += list(trace.outputs[t]) if t < N else [None] * system.m
            row += list(trace.xhat_pred[t])
            row += list(trace.xhat_post[t])
        row.append(trace.stage_state_penalty[t])
        row.append(trace.stage_input_penalty[t] if t < N else None)
        rows.append(row)
    return header, rows


def cmd_simulate(args) -> int:
    sc = get_scenario(args.scenario, args.horizon)
    moments = _scenario_moments(sc, args.seed)
    controllers = _build_controllers(sc, args.mode, args.mu, args.theta, moments)
    stats = sim.ensemble(sc.system, sc.cost, controllers, sc.noise,
                         sc.measurement_noise, sc.x0, sc.cost.N,
                         n_rollouts=args.rollouts, base_seed=args.seed,
                         moments=moments if args.mode == "lqr" else None)
    payload_args = {"command": "simulate", "scenario": args.scenario,
                    "mu": args.mu, "theta": args.theta, "mode": args.mode,
                    "horizon": sc.cost.N, "rollouts": args.rollouts}
    meta = _meta(payload_args, args.seed)
    out = _out_dir(args)
    summary = {"meta": meta, "controllers": {}}
    for name, st in stats.items():
        summary["controllers"][name] = {
            "n_rollouts": st.n_rollouts, "diverged": st.diverged,
            "error": st.error, "mean_total_cost": st.mean_total_cost,
            "total_cost_std_error": st.total_cost_std_error,
            "predictive_variance_estimate": st.predictive_variance_estimate,
            "predictive_variance_std_error": st.predictive_variance_std_error,
        }
        if not st.diverged:
            values, probs = st.cdf_pairs("state")
            _write_csv(out / f"cdf_state_{sc.name}_{name}.csv", meta,
                       ["state_penalty", "cdf"], zip(values, probs))
    for controller in controllers:
        trace = sim.rollout(sc.system, sc.cost, controller, sc.noise,
                            sc.measurement_noise, sc.x0, sc.cost.N,
                            seed=args.seed)
        header, rows = _trace_rows(trace, sc.system)
        _write_csv(out / f"trace_{sc.name}_{controller.controller_id}.csv",
                   meta, header, rows)
    _write_json(out / f"simulate_{sc.name}.json", summary)
    print(f"wrote simulation bundle to {out}")
    return 0


def cmd_reproduce(args) -> int:
    if args.figure not in FIGURES:
        raise ConfigurationError(f"unknown figure id {args.figure!r}; expected one "
                                 f"of {sorted(FIGURES)}")
    spec = FIGURES[args.figure]
    sc = get_scenario(args.scenario or spec["scenario"], args.horizon)
    mus = args.mu if args.mu else spec["mu"]
    thetas = args.theta if args.theta else spec["theta"]
    mode = "lqr" if spec["scenario"] == "wind-lqr" else "lqg"
    moments = _scenario_moments(sc, args.seed)
    risk_neutral = [0.0] if 0.0 not in mus else []
    controllers = _build_controllers(sc, mode, risk_neutral + list(mus), thetas,
                                     moments)
    payload_args = {"command": "reproduce", "figure": args.figure,
                    "scenario": sc.name, "mu": mus, "theta": thetas,
                    "horizon": sc.cost.N}
    meta = _meta(payload_args, args.seed)
    out = _out_dir(args)

    traces = {c.controller_id: sim.rollout(sc.system, sc.cost, c, sc.noise,
                                           sc.measurement_noise, sc.x0,
                                           sc.cost.N, seed=args.seed)
              for c in controllers}
    names = list(traces)
    if spec["series"] == "cdf":
        for name, trace in traces.items():
            for which, vals in (("state", trace.stage_state_penalty),
                                ("input", trace.stage_input_penalty)):
                values = np.sort(vals)
                probs = np.arange(1, values.size + 1) / values.size
                _write_csv(out / f"{args.figure}_cdf_{which}_{name}.csv", meta,
                           [f"{which}_penalty", "cdf"], zip(values, probs))
    elif spec["series"] == "state_penalty":
        N = sc.cost.N
        rows = [[t] + [traces[n].stage_state_penalty[t] for n in names]
                for t in range(N + 1)]
        _write_csv(out / f"{args.figure}_penalties.csv", meta, ["t"] + names, rows)
    else:  # trajectory: first position coordinate and first input
        N = sc.cost.N
        header = ["t"] + [f"x1_{n}" for n in names] + [f"u1_{n}" for n in names]
        rows = []
        for t in range(N + 1):
            row = [t] + [traces[n].states[t, 0] for n in names]
            row += [traces[n].inputs[t, 0] if t < N else None for n in names]
            rows.append(row)
        _write_csv(out / f"{args.figure}_trajectories.csv", meta, header, rows)
    manifest = {"meta": meta, "figure": args.figure, "scenario": sc.name,
                "controllers": names, "horizon": sc.cost.N}
    _write_json(out / f"{args.figure}_manifest.json", manifest)
    print(f"wrote {args.figure} bundle to {out}")
    return 0


def _float_list(text: str):
    return [float(tok) for tok in text.split(",") if tok != ""]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="risklq",
        description="Risk-constrained linear-quadratic control toolbox")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_scenario=True):
        if needs_scenario:
            p.add_argument("--scenario", required=True,
                           help="catalog name (toy-scalar, wind-lqr, wind-lqg) "
                                "or scenario file path")
        p.add_argument("--horizon", type=int, default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None,
                       help="output directory (default $RISKLQ_OUTDIR or "
                            "./risklq-out)")
        p.add_argument("--mode", choices=["lqr", "lqg"], default="lqr")

    p = sub.add_parser("synthesize", help="write gain schedules and diagnostics")
    common(p)
    p.add_argument("--mu", type=_float_list, default=[0.0],
                   help="comma-separated risk multipliers")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("bisect", help="find the optimal multiplier for a budget")
    common(p)
    p.add_argument("--eps", type=float, required=True,
                   help="risk budget on the cumulative predictive variance")
    p.set_defaults(func=cmd_bisect)

    p = sub.add_parser("evaluate-risk", help="closed-form J_R and J on a mu grid")
    common(p)
    p.add_argument("--mu", type=_float_list, default=[0.0])
    p.set_defaults(func=cmd_evaluate_risk)

    p = sub.add_parser("breakdown-scan",
                       help="largest well-posed exponential-cost parameter")
    common(p)
    p.set_defaults(func=cmd_breakdown_scan)

    p = sub.add_parser("simulate", help="CRN ensemble simulation")
    common(p)
    p.add_argument("--mu", type=_float_list, default=[0.0])
    p.add_argument("--theta", type=_float_list, default=[])
    p.add_argument("--rollouts", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reproduce", help="emit the data series behind a figure")
    p.add_argument("figure", choices=sorted(FIGURES))
    p.add_argument("--scenario", default=None)
    p.add_argument("--mu", type=_float_list, default=[])
    p.add_argument("--theta", type=_float_list, default=[])
    common(p, needs_scenario=False)
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RiskLqError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        for etype, code in EXIT_CODES.items():
            if isinstance(exc, etype):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
