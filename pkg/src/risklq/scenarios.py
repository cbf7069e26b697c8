"""Scenario files and the built-in scenario catalog.

A scenario bundles everything a pipeline needs: plant matrices, quadratic
cost, process/measurement noise specs, and the initial state. The on-disk
format is JSON with system matrices as row-major number lists and the noise
spec as a tagged union; see README for the schema. Parse failures name the
offending field.

Catalog entries:
  toy-scalar   scalar integrator with two-point shock noise and no input
               penalty (the deadbeat toy problem)
  wind-lqr     planar double integrator in a bimodal wind field, fully
               observed, horizon 5000
  wind-lqg     same plant with zero-mean Gaussian wind and noisy position
               measurements, horizon 3000
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ScenarioParseError, UnsupportedCaseError
from .model import (ChannelNoise, CostSpec, DiscreteNoise, GaussianMixtureNoise,
                    GaussianNoise, LinearSystem, NoiseSpec)


@dataclass(frozen=True)
class Scenario:
    name: str
    system: LinearSystem
    cost: CostSpec
    noise: NoiseSpec
    measurement_noise: Optional[GaussianNoise]
    x0: np.ndarray

    def with_horizon(self, N: int) -> "Scenario":
        return Scenario(name=self.name, system=self.system,
                        cost=CostSpec(self.cost.Q, self.cost.R, N),
                        noise=self.noise,
                        measurement_noise=self.measurement_noise, x0=self.x0)

    def gaussian_process_noise(self) -> GaussianNoise:
        """The process noise as a Gaussian, or an unsupported-case error.

        Output-feedback synthesis and risk evaluation are defined only for
        Gaussian noise; general distributions would require tracking
        conditional moments with no finite representation.
        """
        spec = self.noise.flattened() if isinstance(self.noise, ChannelNoise) \
            else self.noise
        if not isinstance(spec, GaussianNoise):
            raise UnsupportedCaseError(
                f"scenario {self.name!r}: output-feedback control requires "
                f"Gaussian process noise, got kind {self.noise.kind!r}")
        return spec


def _require(mapping, key, path):
    if key not in mapping:
        raise ScenarioParseError(f"{path}.{key}: missing required field")
    return mapping[key]


def _parse_matrix(value, rows, cols, path):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioParseError(f"{path}: not a numeric array ({exc})") from None
    if arr.ndim == 1:
        if arr.size != rows * cols:
            raise ScenarioParseError(f"{path}: expected {rows * cols} entries for "
                                     f"{rows}x{cols} row-major, got {arr.size}")
        arr = arr.reshape(rows, cols)
    elif arr.shape != (rows, cols):
        raise ScenarioParseError(f"{path}: expected shape {rows}x{cols}, "
                                 f"got {'x'.join(map(str, arr.shape))}")
    if not np.all(np.isfinite(arr)):
        raise ScenarioParseError(f"{path}: contains non-finite entries")
    return arr


def _parse_vector(value, size, path):
    try:
        arr = np.asarray(value, dtype=float).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise ScenarioParseError(f"{path}: not a numeric array ({exc})") from None
    if arr.size != size:
        raise ScenarioParseError(f"{path}: expected {size} entries, got {arr.size}")
    return arr


def _parse_noise(spec, path) -> NoiseSpec:
    if not isinstance(spec, dict):
        raise ScenarioParseError(f"{path}: expected an object with a 'kind' tag")
    kind = _require(spec, "kind", path)
    if kind == "gaussian":
        mean = np.asarray(_require(spec, "mean", path), dtype=float).reshape(-1)
        cov = _parse_matrix(_require(spec, "cov", path), mean.size, mean.size,
                            f"{path}.cov")
        return GaussianNoise(mean, cov)
    if kind == "discrete":
        atoms = np.atleast_2d(np.asarray(_require(spec, "atoms", path), dtype=float))
        probs = np.asarray(_require(spec, "probs", path), dtype=float).reshape(-1)
        if atoms.shape[0] != probs.size:
            raise ScenarioParseError(f"{path}: {atoms.shape[0]} atoms but "
                                     f"{probs.size} probabilities")
        return DiscreteNoise(atoms, probs)
    if kind == "gaussian_mixture":
        weights = np.asarray(_require(spec, "weights", path), dtype=float).reshape(-1)
        means = np.atleast_2d(np.asarray(_require(spec, "means", path), dtype=float))
        dim = means.shape[1]
        covs_raw = _require(spec, "covs", path)
        covs = np.array([_parse_matrix(c, dim, dim, f"{path}.covs[{i}]")
                         for i, c in enumerate(covs_raw)])
        return GaussianMixtureNoise(weights, means, covs)
    if kind == "channel":
        inner = _parse_noise(_require(spec, "inner", path), f"{path}.inner")
        rows = int(_require(spec, "rows", path))
        G = _parse_matrix(_require(spec, "G", path), rows, inner.dim, f"{path}.G")
        return ChannelNoise(inner=inner, G=G)
    raise ScenarioParseError(f"{path}.kind: unknown noise kind {kind!r}")


def _noise_to_dict(noise: NoiseSpec) -> dict:
    if isinstance(noise, GaussianNoise):
        return {"kind": "gaussian", "mean": noise.mean_vec.tolist(),
                "cov": noise.cov_mat.reshape(-1).tolist()}
    if isinstance(noise, DiscreteNoise):
        return {"kind": "discrete", "atoms": noise.atoms.tolist(),
                "probs": noise.probs.tolist()}
    if isinstance(noise, GaussianMixtureNoise):
        return {"kind": "gaussian_mixture", "weights": noise.weights.tolist(),
                "means": noise.means.tolist(),
                "covs": [c.reshape(-1).tolist() for c in noise.covs]}
    if isinstance(noise, ChannelNoise):
        return {"kind": "channel", "rows": noise.G.shape[0],
                "G": noise.G.reshape(-1).tolist(),
                "inner": _noise_to_dict(noise.inner)}
    raise ScenarioParseError(f"cannot serialize noise kind {noise.kind!r}")


def scenario_from_dict(data: dict, name: str = "scenario") -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioParseError("scenario: top level must be an object")
    name = data.get("name", name)
    sysd = _require(data, "system", "scenario")
    n = int(_require(sysd, "n", "scenario.system"))
    p = int(_require(sysd, "p", "scenario.system"))
    m = int(_require(sysd, "m", "scenario.system"))
    A = _parse_matrix(_require(sysd, "A", "scenario.system"), n, n,
                      "scenario.system.A")
    B = _parse_matrix(_require(sysd, "B", "scenario.system"), n, p,
                      "scenario.system.B")
    C = _parse_matrix(sysd.get("C", np.eye(n)), m, n, "scenario.system.C")
    system = LinearSystem(A=A, B=B, C=C)

    costd = _require(data, "cost", "scenario")
    Q = _parse_matrix(_require(costd, "Q", "scenario.cost"), n, n, "scenario.cost.Q")
    R = _parse_matrix(_require(costd, "R", "scenario.cost"), p, p, "scenario.cost.R")
    N = int(_require(costd, "horizon", "scenario.cost"))
    try:
        cost = CostSpec(Q=Q, R=R, N=N)
    except Exception as exc:
        raise ScenarioParseError(f"scenario.cost: {exc}") from None

    noise = _parse_noise(_require(data, "noise", "scenario"), "scenario.noise")
    if noise.dim != n:
        raise ScenarioParseError(f"scenario.noise: dimension {noise.dim} does not "
                                 f"match the state dimension {n}")
    vnoise = None
    if data.get("measurement_noise") is not None:
        parsed = _parse_noise(data["measurement_noise"],
                              "scenario.measurement_noise")
        if not isinstance(parsed, GaussianNoise):
            raise ScenarioParseError("scenario.measurement_noise: must be gaussian")
        if parsed.dim != m:
            raise ScenarioParseError(f"scenario.measurement_noise: dimension "
                                     f"{parsed.dim} does not match the output "
                                     f"dimension {m}")
        vnoise = parsed
    x0 = _parse_vector(data.get("x0", np.zeros(n)), n, "scenario.x0")
    return Scenario(name=name, system=system, cost=cost, noise=noise,
                    measurement_noise=vnoise, x0=x0)


def scenario_to_dict(sc: Scenario) -> dict:
    data = {
        "name": sc.name,
        "system": {"n": sc.system.n, "p": sc.system.p, "m": sc.system.m,
                   "A": sc.system.A.reshape(-1).tolist(),
                   "B": sc.system.B.reshape(-1).tolist(),
                   "C": sc.system.C.reshape(-1).tolist()},
        "cost": {"Q": sc.cost.Q.reshape(-1).tolist(),
                 "R": sc.cost.R.reshape(-1).tolist(),
                 "horizon": sc.cost.N},
        "noise": _noise_to_dict(sc.noise),
        "x0": sc.x0.tolist(),
    }
    if sc.measurement_noise is not None:
        data["measurement_noise"] = _noise_to_dict(sc.measurement_noise)
    return data


def load_scenario(path) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(
            f"scenario file is not valid JSON (line {exc.lineno}, "
            f"column {exc.colno}): {exc.msg}") from None
    return scenario_from_dict(data)


def save_scenario(sc: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(sc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def config_hash(payload: dict) -> str:
    """Stable digest embedded in every output file for provenance."""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


# --- built-in catalog ------------------------------------------------------

SAMPLING_TIME = 0.5


def _double_integrator():
    Ts = SAMPLING_TIME
    A = np.array([[1.0, Ts, 0.0, 0.0],
                  [0.0, 1.0, 0.0, 0.0],
                  [0.0, 0.0, 1.0, Ts],
                  [0.0, 0.0, 0.0, 1.0]])
    B = np.array([[Ts ** 2 / 2, 0.0],
                  [Ts, 0.0],
                  [0.0, Ts ** 2 / 2],
                  [0.0, Ts]])
    return A, B


def toy_scalar(N: int = 20, beta: float = 3.0) -> Scenario:
    """Scalar integrator with shocks of size beta at probability 1/beta and
    no input penalty; the risk-neutral optimum is the deadbeat u = -x - 1."""
    system = LinearSystem(A=[[1.0]], B=[[1.0]], C=[[1.0]])
    cost = CostSpec(Q=[[1.0]], R=[[0.0]], N=N)
    noise = DiscreteNoise(atoms=[[beta], [0.0]], probs=[1.0 / beta, 1.0 - 1.0 / beta])
    return Scenario(name="toy-scalar", system=system, cost=cost, noise=noise,
                    measurement_noise=None, x0=np.zeros(1))


def wind_lqr(N: int = 5000) -> Scenario:
    """Planar double integrator pushed by a bimodal wind along the first
    axis; the mean wind is already cancelled, so the injected disturbance is
    the centered gust through the input matrix."""
    A, B = _double_integrator()
    system = LinearSystem(A=A, B=B, C=np.eye(4))
    cost = CostSpec(Q=np.diag([1.0, 0.1, 2.0, 0.1]), R=np.eye(2), N=N)
    mean_wind = 0.8 * 30.0 + 0.2 * 80.0
    gusts = GaussianMixtureNoise(
        weights=[0.8, 0.2],
        means=[[30.0 - mean_wind, 0.0], [80.0 - mean_wind, 0.0]],
        covs=[np.diag([30.0, 5.0]), np.diag([60.0, 5.0])])
    return Scenario(name="wind-lqr", system=system, cost=cost,
                    noise=ChannelNoise(inner=gusts, G=B),
                    measurement_noise=None, x0=np.zeros(4))


def wind_lqg(N: int = 3000) -> Scenario:
    """Double integrator with zero-mean Gaussian wind and noisy position
    measurements."""
    A, B = _double_integrator()
    C = np.array([[1.0, 0.0, 0.0, 0.0],
                  [0.0, 0.0, 1.0, 0.0]])
    system = LinearSystem(A=A, B=B, C=C)
    cost = CostSpec(Q=np.diag([1.0, 0.5, 2.0, 0.5]), R=np.eye(2), N=N)
    wind = GaussianNoise(mean_vec=np.zeros(2), cov_mat=np.diag([30.0, 5.0]))
    S = np.array([[5.0, 2.0], [2.0, 2.0]])
    return Scenario(name="wind-lqg", system=system, cost=cost,
                    noise=ChannelNoise(inner=wind, G=B),
                    measurement_noise=GaussianNoise(np.zeros(2), S), x0=np.zeros(4))


CATALOG = {
    "toy-scalar": toy_scalar,
    "wind-lqr": wind_lqr,
    "wind-lqg": wind_lqg,
}


def get_scenario(name_or_path: str, horizon: Optional[int] = None) -> Scenario:
    """Resolve a catalog name or a scenario file path."""
    if name_or_path in CATALOG:
        sc = CATALOG[name_or_path]()
    else:
        sc = load_scenario(name_or_path)
    if horizon is not None:
        sc = sc.with_horizon(horizon)
    return sc
