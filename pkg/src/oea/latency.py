"""Memory-bound latency model for an MoE block and a linear fit of
(activated experts, latency) observations.

Each activated expert costs a fixed weight-fetch time ``b`` plus ``a`` per
routed token, so a block costs ``b * T + a * total_load``. All times are in
microseconds.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from oea.routing import RoutingPlan


class FitError(ValueError):
    """Regression design is degenerate."""


class UndefinedRatioError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class LatencyParams:
    """``a``: per token-expert compute time; ``b``: per-expert weight fetch time."""

    a: float
    b: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError("latency parameters must be finite")
        if self.a < 0 or self.b < 0:
            raise ValueError(f"latency parameters must be >= 0, got a={self.a}, b={self.b}")
        if self.a == 0 and self.b == 0:
            raise ValueError("latency parameters cannot both be zero")


@dataclass(frozen=True)
class LatencyObservation:
    active_experts: int
    latency_us: float

    def __post_init__(self) -> None:
        if self.active_experts < 0 or self.latency_us < 0:
            raise ValueError(f"invalid observation {self}")


@dataclass(frozen=True)
class FitResult:
    """OLS fit ``latency = slope * T + intercept``.

    The slope estimates the per-expert fetch cost ``b``; the intercept
    absorbs the compute term and any fixed per-layer overhead.
    """

    slope: float
    intercept: float
    r_squared: float
    residual_std: float
    slope_stderr: float
    intercept_stderr: float
    n_obs: int

    def params(self, total_load: float | None = None) -> LatencyParams:
        """Latency parameters implied by the fit.

        With ``total_load`` given (the fixed ``B * k`` of the fitted traces),
        the intercept is read as compute time and converted to ``a``;
        otherwise ``a`` is left at zero.
        """
        a = 0.0
        if total_load:
            a = max(self.intercept, 0.0) / total_load
        return LatencyParams(a=a, b=max(self.slope, 0.0))

    def to_dict(self) -> dict:
        return {
            "slope_us_per_expert": self.slope,
            "intercept_us": self.intercept,
            "r_squared": self.r_squared,
            "residual_std_us": self.residual_std,
            "slope_stderr": self.slope_stderr,
            "intercept_stderr": self.intercept_stderr,
            "n_obs": self.n_obs,
        }


def expert_latency(n: int, params: LatencyParams) -> float:
    """Time for one expert to process ``n`` tokens: 0 if idle, else ``a*n + b``."""
    if n < 0:
        raise ValueError("token count must be >= 0")
    if n == 0:
        return 0.0
    return params.a * n + params.b


def moe_latency(loads: Sequence[int] | np.ndarray, params: LatencyParams) -> float:
    """Sum of per-expert latencies over a load vector."""
    loads = np.asarray(loads)
    if (loads < 0).any():
        raise ValueError("loads must be >= 0")
    active = int(np.count_nonzero(loads))
    return params.b * active + params.a * float(loads.sum())


def expected_active_experts(n_experts: int, k: int, batch: int) -> float:
    """Expected union size of ``batch`` uniform random ``k``-subsets of
    ``n_experts`` (each expert is missed by one token with probability
    ``1 - k/N``)."""
    if not 1 <= k <= n_experts or batch < 1:
        raise ValueError(f"need 1 <= k <= N and B >= 1, got N={n_experts}, k={k}, B={batch}")
    return n_experts * (1.0 - (1.0 - k / n_experts) ** batch)


def fit_linear(observations: Iterable[LatencyObservation]) -> FitResult:
    """Ordinary least squares of latency on active-expert count."""
    obs = list(observations)
    x = np.array([o.active_experts for o in obs], dtype=np.float64)
    y = np.array([o.latency_us for o in obs], dtype=np.float64)
    n = len(obs)
    if n < 2 or np.unique(x).size < 2:
        raise FitError("need at least two distinct active-expert counts")
    x_mean = x.mean()
    y_mean = y.mean()
    dx = x - x_mean
    sxx = float(dx @ dx)
    slope = float(dx @ (y - y_mean)) / sxx
    intercept = float(y_mean - slope * x_mean)
    resid = y - (slope * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float((y - y_mean) @ (y - y_mean))
    r2 = 1.0 if ss_tot == 0.0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    dof = n - 2
    if dof > 0:
        sigma2 = ss_res / dof
        slope_se = math.sqrt(sigma2 / sxx)
        intercept_se = math.sqrt(sigma2 * (1.0 / n + x_mean**2 / sxx))
        resid_std = math.sqrt(sigma2)
    else:
        slope_se = intercept_se = resid_std = 0.0
    return FitResult(slope, intercept, r2, resid_std, slope_se, intercept_se, n)


def estimate_speedup(plan_a: RoutingPlan, plan_b: RoutingPlan, params: LatencyParams) -> float:
    """Modeled latency of ``plan_a`` relative to ``plan_b``."""
    if plan_a.n_experts != plan_b.n_experts:
        raise ValueError("plans route over different expert counts")
    denom = moe_latency(plan_b.loads, params)
    if denom == 0:
        raise UndefinedRatioError("reference plan has zero modeled latency")
    return moe_latency(plan_a.loads, params) / denom


OBSERVATION_COLUMNS = ("T", "latency_us")


def read_observations_csv(path: str | Path) -> list[LatencyObservation]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(OBSERVATION_COLUMNS) <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain columns {OBSERVATION_COLUMNS}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(LatencyObservation(int(row["T"]), float(row["latency_us"])))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


def write_observations_csv(path: str | Path, observations: Iterable[LatencyObservation]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBSERVATION_COLUMNS)
        for o in observations:
            w.writerow([o.active_experts, repr(float(o.latency_us))])
