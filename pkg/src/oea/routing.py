"""Batch-aware expert routing.

Maps a batch of router score rows to per-token expert sets and mixture
weights. Four modes are supported:

* ``vanilla``    -- plain top-k per token.
* ``pruned``     -- baseline selection only: top-``n_i`` experts where
  ``n_i = min(k0, t_i)`` and ``t_i`` is the shortest prefix reaching
  cumulative mass ``p``.
* ``oea``        -- baseline selection followed by piggybacking: each token
  may add lower-ranked experts, scanning ranks up to ``max_p``, but only
  experts that some token in the batch already needs as a baseline expert.
* ``simplified`` -- ``oea`` with ``p = 1``, ``max_p = N`` and ``k_max = k``.

Expert indices are 0-based throughout. All functions are pure.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

WEIGHT_EPS = 1e-12
SIMPLEX_TOL = 1e-6


class InvalidInputError(ValueError):
    """Scores or routing configuration violate their preconditions."""


class DegenerateWeightsError(ValueError):
    """A token's selected experts carry (numerically) zero total score."""


class Mode(str, enum.Enum):
    VANILLA = "vanilla"
    PRUNED = "pruned"
    OEA = "oea"
    SIMPLIFIED = "simplified"


class CapSemantics(str, enum.Enum):
    # |S_i| <= k_max
    EXACT = "exact"
    # literal `if |S_i| > k_max: break` guard; |S_i| may reach k_max + 1
    PSEUDOCODE = "pseudocode"


@dataclass(frozen=True)
class ScoreMatrix:
    """Router scores for one batch, shape ``(B, N)``.

    ``mask[i]`` is True for real tokens and False for padding rows. Padding
    rows are not required to lie on the simplex.
    """

    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InvalidInputError(f"scores must be 2-D, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise InvalidInputError(f"scores must have B >= 1 and N >= 1, got shape {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.mask is not None:
            mask = np.array(self.mask, dtype=bool)
            if mask.shape != (values.shape[0],):
                raise InvalidInputError(
                    f"mask must have shape ({values.shape[0]},), got {mask.shape}"
                )
            mask.setflags(write=False)
            object.__setattr__(self, "mask", mask)

    @property
    def batch_size(self) -> int:
        return self.values.shape[0]

    @property
    def n_experts(self) -> int:
        return self.values.shape[1]

    @property
    def real(self) -> np.ndarray:
        """Boolean vector, True for unmasked rows."""
        if self.mask is None:
            return np.ones(self.batch_size, dtype=bool)
        return self.mask

    def validate(self) -> None:
        """Raise InvalidInputError naming the first bad real row, if any."""
        _validate_values(self.values, self.real)


@dataclass(frozen=True)
class RoutingConfig:
    """Routing hyperparameters.

    ``k`` is the model's default top-k; it is the routing width in vanilla
    mode, the per-token cap in simplified mode, and the reference against
    which normalized statistics are reported. ``k0``, ``k_max`` and ``max_p``
    default to ``k``, ``k`` and ``N`` respectively.
    """

    mode: Mode = Mode.VANILLA
    k: int = 8
    k0: int | None = None
    p: float = 1.0
    k_max: int | None = None
    max_p: int | None = None
    cap: CapSemantics = CapSemantics.EXACT

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "cap", CapSemantics(self.cap))

    @classmethod
    def vanilla(cls, k: int) -> RoutingConfig:
        return cls(Mode.VANILLA, k=k)

    @classmethod
    def pruned(cls, k0: int, p: float = 1.0, k: int = 8) -> RoutingConfig:
        return cls(Mode.PRUNED, k=k, k0=k0, p=p)

    @classmethod
    def oea(
        cls,
        k0: int,
        p: float = 1.0,
        k_max: int | None = None,
        max_p: int | None = None,
        k: int = 8,
        cap: CapSemantics = CapSemantics.EXACT,
    ) -> RoutingConfig:
        return cls(Mode.OEA, k=k, k0=k0, p=p, k_max=k_max, max_p=max_p, cap=cap)

    @classmethod
    def simplified(cls, k0: int, k: int = 8, cap: CapSemantics = CapSemantics.EXACT) -> RoutingConfig:
        return cls(Mode.SIMPLIFIED, k=k, k0=k0, cap=cap)

    def resolve(self, n_experts: int) -> tuple[int, float, int, int]:
        """Validate against ``n_experts`` and return ``(k0, p, k_max, max_p)``."""
        n = n_experts
        if not 1 <= self.k <= n:
            raise InvalidInputError(f"k={self.k} outside [1, {n}]")
        k0 = self.k if self.k0 is None else self.k0
        k_max = self.k if self.k_max is None else self.k_max
        max_p = n if self.max_p is None else self.max_p
        if self.mode is Mode.SIMPLIFIED:
            if self.p != 1.0 or k_max != self.k or max_p != n:
                raise InvalidInputError("simplified mode fixes p=1, k_max=k, max_p=N")
        if not 1 <= k0 <= n:
            raise InvalidInputError(f"k0={k0} outside [1, {n}]")
        if not 0.0 < self.p <= 1.0:
            raise InvalidInputError(f"p={self.p} outside (0, 1]")
        if self.mode in (Mode.OEA, Mode.SIMPLIFIED):
            if not k0 <= k_max <= n:
                raise InvalidInputError(f"need k0 <= k_max <= N, got k0={k0}, k_max={k_max}, N={n}")
            if not 1 <= max_p <= n:
                raise InvalidInputError(f"max_p={max_p} outside [1, {n}]")
        return k0, float(self.p), k_max, max_p

    def label(self) -> str:
        if self.mode is Mode.VANILLA:
            return f"vanilla(k={self.k})"
        parts = [f"k0={self.k0 if self.k0 is not None else self.k}"]
        if self.mode in (Mode.PRUNED, Mode.OEA):
            parts.append(f"p={self.p:g}")
        if self.mode is Mode.OEA:
            parts.append(f"k_max={self.k_max if self.k_max is not None else self.k}")
            parts.append(f"max_p={'N' if self.max_p is None else self.max_p}")
        if self.mode is not Mode.PRUNED and self.cap is CapSemantics.PSEUDOCODE:
            parts.append("cap=pseudocode")
        return f"{self.mode.value}({', '.join(parts)})"


@dataclass(frozen=True)
class SortedExperts:
    """``order[i, j]`` is token i's j-th choice; descending score, ties by index."""

    order: np.ndarray


@dataclass(frozen=True)
class Phase1Result:
    t: np.ndarray
    n: np.ndarray
    base_sets: tuple[np.ndarray, ...]
    base_union: frozenset[int]


@dataclass(frozen=True)
class RoutingPlan:
    """Per-token expert sets (descending score order) and aligned weights.

    Masked tokens have empty sets. ``weights`` may be empty tuples when the
    plan came straight from :func:`phase2_piggyback`.
    """

    sets: tuple[np.ndarray, ...]
    weights: tuple[np.ndarray, ...]
    n_experts: int
    _loads: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.sets:
            flat = np.concatenate(self.sets).astype(np.intp, copy=False)
        else:
            flat = np.zeros(0, dtype=np.intp)
        loads = np.bincount(flat, minlength=self.n_experts)
        loads.setflags(write=False)
        object.__setattr__(self, "_loads", loads)

    @property
    def batch_size(self) -> int:
        return len(self.sets)

    @property
    def loads(self) -> np.ndarray:
        """Per-expert token counts ``cnt_j``."""
        return self._loads

    @property
    def active_union(self) -> frozenset[int]:
        return frozenset(np.flatnonzero(self._loads).tolist())

    @property
    def active_count(self) -> int:
        return int(np.count_nonzero(self._loads))

    @property
    def total_load(self) -> int:
        return int(self._loads.sum())

    def to_dense(self) -> np.ndarray:
        """``(B, N)`` weight matrix, zero outside each token's set."""
        dense = np.zeros((self.batch_size, self.n_experts))
        for i, (s, w) in enumerate(zip(self.sets, self.weights)):
            dense[i, s] = w
        return dense

    def same_as(self, other: RoutingPlan) -> bool:
        """Bit-exact equality of sets and weights."""
        if self.n_experts != other.n_experts or self.batch_size != other.batch_size:
            return False
        return all(
            np.array_equal(a, b) for a, b in zip(self.sets, other.sets)
        ) and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))




def _validate_values(values: np.ndarray, real: np.ndarray) -> None:
    """Vectorized simplex check over the last axis of real rows."""
    finite = np.isfinite(values).all(axis=-1)
    nonneg = (values >= 0).all(axis=-1)
    with np.errstate(invalid="ignore"):
        on_simplex = np.abs(values.sum(axis=-1) - 1.0) <= SIMPLEX_TOL
    bad = real & ~(finite & nonneg & on_simplex)
    if not bad.any():
        return
    where = tuple(int(x) for x in np.argwhere(bad)[0])
    row = values[where]
    label = f"row {where[-1]}"
    if len(where) > 1 and values.shape[0] > 1:
        label = f"batch {where[0]} {label}"
    if not np.isfinite(row).all():
        raise InvalidInputError(f"{label}: non-finite score")
    if (row < 0).any():
        raise InvalidInputError(f"{label}: negative score {float(row.min())!r}")
    raise InvalidInputError(f"{label}: scores sum to {float(row.sum())!r}, expected 1")


def _argsort_desc(values: np.ndarray) -> np.ndarray:
    # stable sort of negated scores keeps ascending index order among ties
    return np.argsort(-values, axis=-1, kind="stable")


def sort_experts(scores: ScoreMatrix) -> SortedExperts:
    """Per-token expert ranking, descending by score, ties by ascending index."""
    if scores.n_experts < 1 or scores.batch_size < 1:
        raise InvalidInputError("empty score matrix")
    order = _argsort_desc(scores.values)
    order.setflags(write=False)
    return SortedExperts(order)


def _baseline_counts(ranked: np.ndarray, real: np.ndarray, k0: int, p: float) -> tuple[np.ndarray, np.ndarray]:
    n_exp = ranked.shape[-1]
    if p >= 1.0:
        t = np.full(ranked.shape[:-1], n_exp, dtype=np.intp)
    else:
        csum = np.cumsum(ranked, axis=-1)
        # rows whose float mass stops just short of p take every expert
        t = np.minimum(np.count_nonzero(csum < p, axis=-1) + 1, n_exp)
    n = np.where(real, np.minimum(t, k0), 0)
    return t, n


def _piggyback(order: np.ndarray, n: np.ndarray, k_max: int, max_p: int,
               cap: CapSemantics) -> np.ndarray:
    """Rank-space keep mask after piggybacking, for stacked batches ``(..., B, N)``."""
    n_exp = order.shape[-1]
    ranks = np.arange(n_exp)
    base = ranks < n[..., None]
    base_by_expert = np.zeros(order.shape, dtype=bool)
    np.put_along_axis(base_by_expert, order, base, axis=-1)
    union = base_by_expert.any(axis=-2, keepdims=True)
    in_union = np.take_along_axis(np.broadcast_to(union, order.shape), order, axis=-1)
    candidate = in_union & ~base & (ranks < max_p)
    added = np.cumsum(candidate, axis=-1)
    room = k_max - n
    if cap is CapSemantics.PSEUDOCODE:
        # the guard runs before each rank, so one extra addition slips through
        room = room + 1
    return base | (candidate & (added <= room[..., None]))


@dataclass(frozen=True)
class PlanBatch:
    """Routing result for ``M`` independent batches stacked as ``(M, B, N)``.

    Everything is kept in rank space: ``keep[m, i, j]`` says whether token i
    of batch m routes to its j-th choice ``order[m, i, j]``; ``weights`` is
    aligned with ``order`` and zero where ``keep`` is False.
    """

    order: np.ndarray
    keep: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return self.order.shape[0]

    @property
    def n_experts(self) -> int:
        return self.order.shape[-1]

    def loads(self) -> np.ndarray:
        """``(M, N)`` per-expert token counts."""
        by_expert = np.zeros(self.order.shape, dtype=bool)
        np.put_along_axis(by_expert, self.order, self.keep, axis=-1)
        return by_expert.sum(axis=-2)

    def active_counts(self) -> np.ndarray:
        return np.count_nonzero(self.loads(), axis=-1)

    def total_loads(self) -> np.ndarray:
        return self.keep.sum(axis=(-2, -1))

    def plan(self, m: int) -> RoutingPlan:
        order, keep, weights = self.order[m], self.keep[m], self.weights[m]
        sets = tuple(order[i][keep[i]] for i in range(order.shape[0]))
        ws = tuple(weights[i][keep[i]] for i in range(order.shape[0]))
        return RoutingPlan(sets=sets, weights=ws, n_experts=self.n_experts)


def route_batch(values: np.ndarray, cfg: RoutingConfig, mask: np.ndarray | None = None) -> PlanBatch:
    """Route ``M`` independent batches at once; ``values`` has shape ``(M, B, N)``.

    Each batch is routed in isolation: piggybacking never crosses the
    leading axis.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or 0 in values.shape:
        raise InvalidInputError(f"expected a non-empty (M, B, N) array, got shape {values.shape}")
    real = np.ones(values.shape[:-1], dtype=bool) if mask is None else np.broadcast_to(
        np.asarray(mask, dtype=bool), values.shape[:-1])
    _validate_values(values, real)
    n_exp = values.shape[-1]
    k0, p, k_max, max_p = cfg.resolve(n_exp)

    order = _argsort_desc(values)
    ranked = np.take_along_axis(values, order, axis=-1)
    ranks = np.arange(n_exp)
    if cfg.mode is Mode.VANILLA:
        keep = (ranks < cfg.k) & real[..., None]
    else:
        _, n = _baseline_counts(ranked, real, k0, p)
        if cfg.mode is Mode.PRUNED:
            keep = ranks < n[..., None]
        else:
            keep = _piggyback(order, n, k_max, max_p, cfg.cap) & real[..., None]

    selected = np.where(keep, ranked, 0.0)
    total = selected.sum(axis=-1)
    degenerate = real & (total <= WEIGHT_EPS)
    if degenerate.any():
        where = tuple(int(x) for x in np.argwhere(degenerate)[0])
        raise DegenerateWeightsError(
            f"token {where[-1]}: selected experts have total score {float(total[where])!r}")
    with np.errstate(invalid="ignore", divide="ignore"):
        weights = np.where(keep, selected / total[..., None], 0.0)
    return PlanBatch(order=order, keep=keep, weights=weights)


def _single(scores: ScoreMatrix, cfg: RoutingConfig) -> RoutingPlan:
    if not isinstance(scores, ScoreMatrix):
        raise InvalidInputError(f"expected ScoreMatrix, got {type(scores).__name__}")
    return route_batch(scores.values[None], cfg, scores.real[None]).plan(0)


def route_topk(scores: ScoreMatrix, k: int) -> RoutingPlan:
    """Vanilla top-k routing with renormalized weights."""
    if not 1 <= k <= scores.n_experts:
        raise InvalidInputError(f"k={k} outside [1, {scores.n_experts}]")
    return _single(scores, RoutingConfig.vanilla(k))


def route(scores: ScoreMatrix, cfg: RoutingConfig) -> RoutingPlan:
    """Route one batch according to ``cfg.mode`` and renormalize weights."""
    return _single(scores, cfg)


def phase1_baseline(scores: ScoreMatrix, sorted_: SortedExperts, cfg: RoutingConfig) -> Phase1Result:
    """Baseline experts: the top ``n_i = min(k0, t_i)`` choices of each token.

    Masked tokens get ``n_i = 0`` and an empty baseline.
    """
    k0, p, _, _ = cfg.resolve(scores.n_experts)
    ranked = np.take_along_axis(scores.values, sorted_.order, axis=-1)
    t, n = _baseline_counts(ranked, scores.real, k0, p)
    base_sets = tuple(sorted_.order[i, : n[i]] for i in range(scores.batch_size))
    union = frozenset(np.concatenate(base_sets).tolist())
    return Phase1Result(t=t, n=n, base_sets=base_sets, base_union=union)


def phase2_piggyback(sorted_: SortedExperts, phase1: Phase1Result, cfg: RoutingConfig) -> RoutingPlan:
    """Extend each baseline with experts already in the batch union.

    Returns a plan with sets only; ``weights`` is empty.
    """
    n_exp = sorted_.order.shape[-1]
    _, _, k_max, max_p = cfg.resolve(n_exp)
    keep = _piggyback(sorted_.order, np.asarray(phase1.n), k_max, max_p, cfg.cap)
    sets = tuple(sorted_.order[i][keep[i]] for i in range(keep.shape[0]))
    return RoutingPlan(sets=sets, weights=(), n_experts=n_exp)


def batch_stats(plan: RoutingPlan) -> tuple[int, np.ndarray, int]:
    """``(T, loads, total_load)`` for a plan."""
    return plan.active_count, plan.loads, plan.total_load
