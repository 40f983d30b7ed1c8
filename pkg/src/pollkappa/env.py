"""Random environment of the polling system.

An environment state fixes, for one server cycle, the arrival-rate matrix
``eps`` (``eps[i, j]`` is the Poisson rate of arrivals to station ``j`` while
the server works at station ``i``), the routing matrix ``gamma`` (column 0 is
the probability of leaving the system), the service-time laws and the service
policy of every station. The environment law is a finite mixture of states,
redrawn iid at the start of each cycle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

POLICIES = ("gated", "exhaustive")
FINAL_PRODUCTS = ("service_time", "unit")

# parameter names per service kind, in storage order
SERVICE_PARAMS = {
    "deterministic": ("value",),
    "exponential": ("rate",),
    "gamma": ("shape", "rate"),
    "lognormal": ("mu", "sigma"),
}

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class ServiceDist:
    kind: str
    params: tuple[float, ...]

    @classmethod
    def deterministic(cls, value: float) -> "ServiceDist":
        return cls("deterministic", (float(value),))

    @classmethod
    def exponential(cls, rate: float) -> "ServiceDist":
        return cls("exponential", (float(rate),))

    @classmethod
    def gamma(cls, shape: float, rate: float) -> "ServiceDist":
        return cls("gamma", (float(shape), float(rate)))

    @classmethod
    def lognormal(cls, mu: float, sigma: float) -> "ServiceDist":
        return cls("lognormal", (float(mu), float(sigma)))

    @property
    def mean(self) -> float:
        return mean_service_time(self)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        p = self.params
        if self.kind == "deterministic":
            return np.full(size, p[0])
        if self.kind == "exponential":
            return rng.exponential(1.0 / p[0], size)
        if self.kind == "gamma":
            return rng.gamma(p[0], 1.0 / p[1], size)
        if self.kind == "lognormal":
            return rng.lognormal(p[0], p[1], size)
        raise ValueError(f"unknown service kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, **dict(zip(SERVICE_PARAMS[self.kind], self.params))}


def mean_service_time(dist: ServiceDist) -> float:
    """Exact mean of a service-time law."""
    p = dist.params
    if dist.kind == "deterministic":
        return p[0]
    if dist.kind == "exponential":
        return 1.0 / p[0]
    if dist.kind == "gamma":
        return p[0] / p[1]
    if dist.kind == "lognormal":
        return math.exp(p[0] + 0.5 * p[1] ** 2)
    raise ValueError(f"unknown service kind {dist.kind!r}")


def _frozen(a: Any) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class EnvState:
    eps: np.ndarray
    gamma: np.ndarray
    service: tuple[ServiceDist, ...]
    policy: tuple[str, ...]
    route_cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "eps", _frozen(self.eps))
        object.__setattr__(self, "gamma", _frozen(self.gamma))
        object.__setattr__(self, "service", tuple(self.service))
        object.__setattr__(self, "policy", tuple(self.policy))
        cum = np.cumsum(self.gamma, axis=-1) if self.gamma.ndim == 2 else self.gamma
        object.__setattr__(self, "route_cum", _frozen(cum))

    @property
    def m(self) -> int:
        return len(self.policy)

    def to_dict(self) -> dict:
        return {
            "eps": self.eps.tolist(),
            "gamma": self.gamma.tolist(),
            "service": [s.to_dict() for s in self.service],
            "policy": list(self.policy),
        }


@dataclass(frozen=True, eq=False)
class EnvModel:
    states: tuple[EnvState, ...]
    probs: np.ndarray
    final_product: str = "service_time"
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "probs", _frozen(self.probs))
        object.__setattr__(self, "_cum", np.cumsum(self.probs))

    @property
    def m(self) -> int:
        return self.states[0].m

    def to_dict(self) -> dict:
        out = {"m": self.m, "final_product": self.final_product, "states": []}
        for p, s in zip(self.probs.tolist(), self.states):
            out["states"].append({"prob": p, **s.to_dict()})
        return out


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self):
        return f"{self.path}: {self.message}"


class ValidationReport(list):
    """List of :class:`Violation`; empty iff the model is valid."""

    def __str__(self):
        return "\n".join(str(v) for v in self) if self else "valid"


class ConfigError(ValueError):
    def __init__(self, report: ValidationReport):
        super().__init__(str(report))
        self.report = report


def _check_service(dist: ServiceDist, path: str, report: ValidationReport):
    if dist.kind not in SERVICE_PARAMS:
        report.append(Violation(path, f"unknown service kind {dist.kind!r}"))
        return
    names = SERVICE_PARAMS[dist.kind]
    if len(dist.params) != len(names):
        report.append(Violation(path, f"{dist.kind} needs parameters {names}"))
        return
    for name, value in zip(names, dist.params):
        if not math.isfinite(value):
            report.append(Violation(f"{path}.{name}", "must be finite"))
        # the lognormal log-mean is a location parameter and may be any real
        elif name != "mu" and value <= 0:
            report.append(Violation(f"{path}.{name}", f"must be > 0, got {value}"))


def _check_state(state: EnvState, m: int, path: str, report: ValidationReport):
    eps, gamma = state.eps, state.gamma
    if eps.shape != (m, m):
        report.append(Violation(f"{path}.eps", f"shape {eps.shape} != ({m}, {m})"))
    else:
        for (i, j), v in np.ndenumerate(eps):
            if not (math.isfinite(v) and v >= 0):
                report.append(Violation(f"{path}.eps[{i}][{j}]", f"must be finite and >= 0, got {v}"))
    if gamma.shape != (m, m + 1):
        report.append(Violation(f"{path}.gamma", f"shape {gamma.shape} != ({m}, {m + 1})"))
    else:
        for i, row in enumerate(gamma):
            bad = [j for j, v in enumerate(row) if not (0.0 <= v <= 1.0)]
            for j in bad:
                report.append(Violation(f"{path}.gamma[{i}][{j}]", f"must lie in [0, 1], got {row[j]}"))
            total = float(np.sum(row))
            if not bad and abs(total - 1.0) > ROW_SUM_TOL:
                report.append(Violation(f"{path}.gamma[{i}]", f"row sums to {total!r}, not 1"))
    if len(state.service) != m:
        report.append(Violation(f"{path}.service", f"expected {m} entries, got {len(state.service)}"))
    for i, dist in enumerate(state.service):
        _check_service(dist, f"{path}.service[{i}]", report)
    if len(state.policy) != m:
        report.append(Violation(f"{path}.policy", f"expected {m} entries, got {len(state.policy)}"))
    for i, pol in enumerate(state.policy):
        if pol not in POLICIES:
            report.append(Violation(f"{path}.policy[{i}]", f"unknown policy {pol!r}"))


def validate_env_model(model: EnvModel) -> ValidationReport:
    """Collect every invariant violation of ``model``; never raises."""
    report = ValidationReport()
    if not model.states:
        report.append(Violation("states", "must be nonempty"))
        return report
    m = model.m
    if m < 1:
        report.append(Violation("m", "station count must be >= 1"))
        return report
    probs = model.probs
    if probs.shape != (len(model.states),):
        report.append(Violation("probs", f"expected {len(model.states)} probabilities"))
    else:
        for k, p in enumerate(probs):
            if not (math.isfinite(p) and p >= 0):
                report.append(Violation(f"states[{k}].prob", f"must be >= 0, got {p}"))
        if abs(float(probs.sum()) - 1.0) > ROW_SUM_TOL:
            report.append(Violation("probs", f"probs sum {float(probs.sum())!r} != 1"))
    if model.final_product not in FINAL_PRODUCTS:
        report.append(Violation("final_product", f"unknown final product {model.final_product!r}"))
    for k, state in enumerate(model.states):
        _check_state(state, m, f"states[{k}]", report)
    return report


def sample_env_state(model: EnvModel, rng: np.random.Generator) -> EnvState:
    k = int(np.searchsorted(model._cum, rng.random(), side="right"))
    # guards against a cumulative sum ending a hair below 1
    k = min(k, len(model.states) - 1)
    while model.probs[k] == 0.0:
        k -= 1
    return model.states[k]


def sample_env_indices(model: EnvModel, rng: np.random.Generator, size: int) -> np.ndarray:
    """Vectorised state indices, same law as repeated :func:`sample_env_state`."""
    k = np.searchsorted(model._cum, rng.random(size), side="right")
    k = np.minimum(k, len(model.states) - 1)
    # zero-probability trailing states must never be returned
    last = int(np.flatnonzero(model.probs > 0)[-1])
    return np.minimum(k, last)


# ---------------------------------------------------------------- config I/O


def _parse_service(raw: Any, path: str, report: ValidationReport) -> ServiceDist:
    if not isinstance(raw, dict) or "kind" not in raw:
        report.append(Violation(path, "service entry must be an object with a 'kind'"))
        return ServiceDist("deterministic", (1.0,))
    kind = raw["kind"]
    names = SERVICE_PARAMS.get(kind)
    if names is None:
        return ServiceDist(kind, ())
    params = []
    for name in names:
        if name not in raw:
            report.append(Violation(f"{path}.{name}", "missing"))
            params.append(math.nan)
        else:
            params.append(float(raw[name]))
    return ServiceDist(kind, tuple(params))


def model_from_dict(raw: dict) -> tuple[EnvModel | None, ValidationReport]:
    """Build a model from the JSON config layout, validating it fully."""
    report = ValidationReport()
    states_raw = raw.get("states")
    if not isinstance(states_raw, list) or not states_raw:
        report.append(Violation("states", "must be a nonempty list"))
        return None, report
    m = raw.get("m")
    if not isinstance(m, int) or m < 1:
        report.append(Violation("m", f"must be an integer >= 1, got {m!r}"))
        return None, report
    states, probs = [], []
    for k, s in enumerate(states_raw):
        path = f"states[{k}]"
        missing = [key for key in ("prob", "eps", "gamma", "service", "policy") if key not in s]
        for key in missing:
            report.append(Violation(f"{path}.{key}", "missing"))
        if missing:
            continue
        try:
            eps = np.array(s["eps"], dtype=float)
            gamma = np.array(s["gamma"], dtype=float)
        except ValueError as exc:
            report.append(Violation(path, f"ragged or non-numeric matrix: {exc}"))
            continue
        service = [_parse_service(d, f"{path}.service[{i}]", report) for i, d in enumerate(s["service"])]
        states.append(EnvState(eps, gamma, service, s["policy"]))
        probs.append(float(s["prob"]))
    if report:
        return None, report
    model = EnvModel(states, probs, raw.get("final_product", "service_time"))
    report.extend(validate_env_model(model))
    if model.m != m:
        report.append(Violation("m", f"declared m={m} but states have m={model.m}"))
    return (model if not report else None), report


def load_env_model(path: str | Path) -> EnvModel:
    """Read a JSON config; raises :class:`ConfigError` carrying the full report."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(ValidationReport([Violation(str(path), f"invalid JSON: {exc}")])) from exc
    model, report = model_from_dict(raw)
    if report:
        raise ConfigError(report)
    return model


def single_state_model(state: EnvState, final_product: str = "service_time") -> EnvModel:
    return EnvModel((state,), [1.0], final_product)


def gated_scalar_model(
    rates: Sequence[float], probs: Sequence[float], service: ServiceDist | None = None
) -> EnvModel:
    """One gated station, customers always leave; per-cycle arrival rate is random.

    With deterministic unit service the cycle mean multiplier equals the rate.
    """
    service = service or ServiceDist.deterministic(1.0)
    states = [
        EnvState([[r]], [[1.0, 0.0]], [service], ["gated"]) for r in rates
    ]
    return EnvModel(states, probs)
