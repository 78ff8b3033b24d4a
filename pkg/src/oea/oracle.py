"""Slow, independent reference implementations used to check the fast paths.

Nothing here reuses the routing kernel: sorting, prefix search and set
handling are re-done with plain Python lists so that a bug in the vectorized
router cannot hide in shared code.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from oea.routing import (
    CapSemantics,
    DegenerateWeightsError,
    Mode,
    PlanBatch,
    RoutingConfig,
    RoutingPlan,
    ScoreMatrix,
    route_batch,
)

RouteBatchFn = Callable[[np.ndarray, RoutingConfig, "np.ndarray | None"], PlanBatch]


def _ranked(row: list[float]) -> list[int]:
    # selection sort: highest score first, lowest index among equals
    remaining = list(range(len(row)))
    out = []
    while remaining:
        best = remaining[0]
        for j in remaining[1:]:
            if row[j] > row[best]:
                best = j
        out.append(best)
        remaining.remove(best)
    return out


def _reference_sets(rows: list[list[float]], real: list[bool],
                    cfg: RoutingConfig) -> tuple[list[list[int]], list[list[int]]]:
    """Returns ``(S_base_i, S_i)`` as lists of expert indices."""
    B = len(rows)
    N = len(rows[0])
    k0, p, k_max, max_p = cfg.resolve(N)
    e = [_ranked(r) for r in rows]

    if cfg.mode is Mode.VANILLA:
        S = [e[i][: cfg.k] if real[i] else [] for i in range(B)]
        return S, S

    # Phase 1
    S_base_i = []
    for i in range(B):
        if not real[i]:
            S_base_i.append([])
            continue
        if p == 1.0:
            t_i = N
        else:
            acc = 0.0
            t_i = N
            for t_prime in range(1, N + 1):
                acc += rows[i][e[i][t_prime - 1]]
                if acc >= p:
                    t_i = t_prime
                    break
        n_i = min(k0, t_i)
        S_base_i.append([e[i][j] for j in range(n_i)])
    if cfg.mode is Mode.PRUNED:
        return S_base_i, S_base_i

    # Phase 2
    S_base = set()
    for s in S_base_i:
        S_base |= set(s)
    S = []
    for i in range(B):
        S_i = list(S_base_i[i])
        if real[i]:
            n_i = len(S_base_i[i])
            for j in range(n_i + 1, max_p + 1):
                if cfg.cap is CapSemantics.PSEUDOCODE:
                    if len(S_i) > k_max:
                        break
                elif len(S_i) >= k_max:
                    break
                if e[i][j - 1] in S_base:
                    S_i.append(e[i][j - 1])
        S.append(S_i)
    return S_base_i, S


def _reference_weights(rows: list[list[float]], S: list[list[int]]) -> list[list[float]]:
    out = []
    for i, s in enumerate(S):
        total = math.fsum(rows[i][j] for j in s)
        if s and total <= 1e-12:
            raise DegenerateWeightsError(f"token {i}: zero total score")
        out.append([rows[i][j] / total for j in s])
    return out


def reference_route(scores: ScoreMatrix, cfg: RoutingConfig) -> RoutingPlan:
    """Line-by-line transcription of the two-phase routing pseudocode.

    ``CapSemantics.PSEUDOCODE`` is the literal ``if |S_i| > k_max: break``
    guard; ``CapSemantics.EXACT`` breaks once ``|S_i|`` reaches ``k_max``.
    """
    rows = scores.values.tolist()
    _, S = _reference_sets(rows, scores.real.tolist(), cfg)
    weights = _reference_weights(rows, S)
    return RoutingPlan(
        sets=tuple(np.array(s, dtype=np.intp) for s in S),
        weights=tuple(np.array(w, dtype=np.float64) for w in weights),
        n_experts=len(rows[0]),
    )


def mc_expected_active_experts(n_experts: int, k: int, batch: int, trials: int,
                               seed: int) -> tuple[float, float]:
    """Monte-Carlo mean and standard error of the union size of ``batch``
    uniformly random ``k``-subsets of ``n_experts``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    counts = np.empty(trials)
    chunk = max(1, 400_000 // (batch * n_experts))
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        # the first k entries of a random permutation form a uniform k-subset
        picks = np.argsort(rng.random((m, batch, n_experts)), axis=2)[:, :, :k]
        hit = np.zeros((m, n_experts), dtype=bool)
        hit[np.repeat(np.arange(m), batch * k), picks.reshape(-1)] = True
        counts[done:done + m] = hit.sum(axis=1)
        done += m
    if trials == 1:
        return float(counts[0]), 0.0
    return float(counts.mean()), float(counts.std(ddof=1) / math.sqrt(trials))


def lattice_rows(n_experts: int, denominator: int = 8) -> list[tuple[float, ...]]:
    """All rows with entries in ``{0, 1/d, ..., 1}`` summing to exactly 1."""
    out = []
    slots = denominator + n_experts - 1
    for cut in itertools.combinations(range(slots), n_experts - 1):
        parts = []
        prev = -1
        for c in cut + (slots,):
            parts.append(c - prev - 1)
            prev = c
        out.append(tuple(x / denominator for x in parts))
    return out


def config_grid(n_experts: int, p_values: tuple[float, ...] = (0.5, 1.0)) -> list[RoutingConfig]:
    """Small-integer hyperparameter grid over every mode and cap semantics.

    ``max_p`` takes ``k0 + 1`` (a one-rank scan window) and ``N``. General
    configs with ``p = 1`` and ``max_p = N`` are skipped because they coincide
    with a simplified config.
    """
    N = n_experts
    grid = [RoutingConfig.vanilla(k) for k in range(1, N + 1)]
    grid += [RoutingConfig.pruned(k0, p=p, k=N) for k0 in range(1, N + 1) for p in p_values]
    for cap in CapSemantics:
        for k in range(1, N + 1):
            grid += [RoutingConfig.simplified(k0, k=k, cap=cap) for k0 in range(1, k + 1)]
        for k0 in range(1, N + 1):
            for k_max in range(k0, N + 1):
                for max_p in sorted({min(k0 + 1, N), N}):
                    for p in p_values:
                        if p == 1.0 and max_p == N:
                            continue
                        grid.append(RoutingConfig.oea(k0, p=p, k_max=k_max, max_p=max_p,
                                                      k=k_max, cap=cap))
    return grid


@dataclass
class CheckReport:
    instances: int = 0
    failures: list[tuple[str, np.ndarray, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        head = f"{self.instances} instances, {len(self.failures)} counterexamples"
        return "\n".join([head] + [f"  {lbl}: {msg}\n    scores={v.tolist()}"
                                   for lbl, v, msg in self.failures[:10]])


def check_against_reference(values: np.ndarray, cfg: RoutingConfig,
                            mask: np.ndarray | None = None,
                            route_fn: RouteBatchFn | None = None) -> list[tuple[int, str]]:
    """Route stacked batches ``(M, B, N)`` with ``route_fn`` and the reference.

    Returns ``(instance, message)`` pairs for reference mismatches and for
    violated routing invariants: cap, weight normalization, masked tokens,
    baseline containment and union conservation.
    """
    if route_fn is None:
        route_fn = route_batch
    M, B, N = values.shape
    real = np.ones((M, B), dtype=bool) if mask is None else np.broadcast_to(mask, (M, B))
    _, _, k_max, _ = cfg.resolve(N)

    got = route_fn(values, cfg, real)
    sel = np.zeros((M, B, N), dtype=bool)
    w = np.zeros((M, B, N))
    np.put_along_axis(sel, got.order, got.keep, axis=-1)
    np.put_along_axis(w, got.order, got.weights, axis=-1)

    # gather coordinates in Python, then scatter once
    ref_idx: tuple[list[int], list[int], list[int]] = ([], [], [])
    ref_vals: list[float] = []
    base_idx: tuple[list[int], list[int], list[int]] = ([], [], [])
    all_rows = values.tolist()
    all_real = real.tolist()
    for m in range(M):
        base, S = _reference_sets(all_rows[m], all_real[m], cfg)
        for i, (b, s, ws) in enumerate(zip(base, S, _reference_weights(all_rows[m], S))):
            ref_idx[0].extend([m] * len(s))
            ref_idx[1].extend([i] * len(s))
            ref_idx[2].extend(s)
            ref_vals.extend(ws)
            base_idx[0].extend([m] * len(b))
            base_idx[1].extend([i] * len(b))
            base_idx[2].extend(b)
    ref_sel = np.zeros((M, B, N), dtype=bool)
    ref_w = np.zeros((M, B, N))
    base_sel = np.zeros((M, B, N), dtype=bool)
    ref_sel[ref_idx] = True
    ref_w[ref_idx] = ref_vals
    base_sel[base_idx] = True

    bad: dict[int, list[str]] = {}

    def flag(which: np.ndarray, msg: str) -> None:
        for m in np.flatnonzero(which):
            bad.setdefault(int(m), []).append(msg)

    sizes = sel.sum(axis=-1)
    flag((sel != ref_sel).any(axis=(1, 2)), "sets differ from reference")
    flag((np.abs(w - ref_w) > 1e-12).any(axis=(1, 2)), "weights differ from reference")
    flag((real & (np.abs(w.sum(axis=-1) - 1.0) > 1e-9)).any(axis=1), "weights do not sum to 1")
    flag((~real & (sizes > 0)).any(axis=1), "masked token routed")
    if cfg.mode in (Mode.OEA, Mode.SIMPLIFIED):
        limit = k_max + (1 if cfg.cap is CapSemantics.PSEUDOCODE else 0)
        flag((sizes > limit).any(axis=1), f"|S_i| exceeds cap {limit}")
    if cfg.mode is not Mode.VANILLA:
        flag((base_sel & ~sel).any(axis=(1, 2)), "baseline not contained in final set")
        flag((base_sel.any(axis=1) != sel.any(axis=1)).any(axis=1),
             "active union differs from baseline union")
    return [(m, "; ".join(msgs)) for m, msgs in sorted(bad.items())]


def exhaustive_small_check(max_n: int = 4, max_b: int = 2, denominator: int = 8,
                           route_fn: RouteBatchFn | None = None,
                           p_values: tuple[float, ...] = (0.5, 1.0)) -> CheckReport:
    """Compare ``route_fn`` with the reference on every lattice batch.

    Batches are multisets of lattice rows: token order cannot change the
    union and every token is routed by the same rule.
    """
    if max_n > 6 or max_b > 3:
        raise ValueError("enumeration is only feasible for max_n <= 6, max_b <= 3")
    report = CheckReport()
    for N in range(1, max_n + 1):
        rows = np.array(lattice_rows(N, denominator))
        grid = config_grid(N, p_values)
        for B in range(1, max_b + 1):
            combos = np.array(list(itertools.combinations_with_replacement(range(len(rows)), B)))
            values = rows[combos]
            for cfg in grid:
                report.instances += len(values)
                for m, msg in check_against_reference(values, cfg, route_fn=route_fn):
                    report.failures.append((cfg.label(), values[m], msg))
    return report
