"""Decode-step simulation over synthetic or replayed router scores.

Every random draw comes from a Philox4x64 counter-based generator keyed by
``(seed, stream, step, layer, index)`` through ``numpy.random.SeedSequence``,
so any (step, layer) cell can be regenerated alone and results do not depend
on evaluation order or thread count.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from oea.latency import LatencyObservation, LatencyParams
from oea.moe import MoeLayerParams, output_divergence, router_scores
from oea.routing import CapSemantics, Mode, PlanBatch, RoutingConfig, ScoreMatrix, route_batch

# key streams
_SCORES, _PAD, _TEMPLATE, _EMBED, _NOISE = range(5)

SCORES_FORMAT_VERSION = 1


def keyed_rng(seed: int, stream: int, *counters: int) -> np.random.Generator:
    """Independent generator for one key; same key, same stream of numbers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, *counters])))


class GenKind(str, enum.Enum):
    DIRICHLET = "dirichlet"
    CLUSTERED = "clustered"
    REPLAY = "replay"


@dataclass(frozen=True)
class ScoreGenConfig:
    """Synthetic router-score source.

    ``dirichlet``: i.i.d. rows ~ Dirichlet(alpha * 1).
    ``clustered``: token ``i`` belongs to group ``i % groups``; its logits are
    ``concentration * template[group] + spread * noise_i`` with standard
    normal template and noise, then softmaxed. Templates are fixed per
    (seed, layer), noise is fresh per token and step.
    ``replay``: rows read from an ndjson score trace.
    """

    kind: GenKind = GenKind.DIRICHLET
    n_experts: int = 128
    batch: int = 16
    steps: int = 100
    layers: int = 1
    seed: int = 0
    alpha: float = 1.0
    groups: int = 4
    concentration: float = 3.0
    spread: float = 1.0
    trace_path: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", GenKind(self.kind))
        for name in ("n_experts", "batch", "steps", "layers", "groups"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.concentration < 0 or self.spread < 0:
            raise ValueError("concentration and spread must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.kind is GenKind.REPLAY and not self.trace_path:
            raise ValueError("replay generator needs trace_path")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d


# ---------------------------------------------------------------- score traces

def read_score_trace(path: str | Path) -> dict[tuple[int, int], ScoreMatrix]:
    """ndjson, one object per line:
    ``{"version": 1, "step": s, "layer": l, "scores": [[...], ...], "mask": [...]}``
    (``mask`` optional)."""
    out: dict[tuple[int, int], ScoreMatrix] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if rec.get("version", SCORES_FORMAT_VERSION) != SCORES_FORMAT_VERSION:
                    raise ValueError(f"unsupported version {rec['version']!r}")
                key = (int(rec.get("step", 0)), int(rec.get("layer", 0)))
                out[key] = ScoreMatrix(np.array(rec["scores"], dtype=np.float64), rec.get("mask"))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not out:
        raise ValueError(f"{path}: no score records")
    return out


def write_score_trace(path: str | Path, records: dict[tuple[int, int], ScoreMatrix]) -> None:
    with open(path, "w") as fh:
        for (step, layer), s in sorted(records.items()):
            rec = {"version": SCORES_FORMAT_VERSION, "step": step, "layer": layer,
                   "scores": s.values.tolist()}
            if s.mask is not None:
                rec["mask"] = s.mask.tolist()
            fh.write(json.dumps(rec) + "\n")


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _token_row(cfg: ScoreGenConfig, step: int, layer: int, token: int,
               templates: np.ndarray | None) -> np.ndarray:
    rng = keyed_rng(cfg.seed, _SCORES, step, layer, token)
    if cfg.kind is GenKind.DIRICHLET:
        return rng.dirichlet(np.full(cfg.n_experts, cfg.alpha))
    logits = cfg.concentration * templates[token % cfg.groups]
    if cfg.spread:
        logits = logits + cfg.spread * rng.standard_normal(cfg.n_experts)
    return _softmax(logits)


def _templates(cfg: ScoreGenConfig, layer: int) -> np.ndarray | None:
    if cfg.kind is not GenKind.CLUSTERED:
        return None
    return np.stack([keyed_rng(cfg.seed, _TEMPLATE, layer, g).standard_normal(cfg.n_experts)
                     for g in range(cfg.groups)])


_replay_cache: dict[str, dict[tuple[int, int], ScoreMatrix]] = {}


def _replay(cfg: ScoreGenConfig) -> dict[tuple[int, int], ScoreMatrix]:
    key = str(Path(cfg.trace_path).resolve())
    if key not in _replay_cache:
        _replay_cache[key] = read_score_trace(cfg.trace_path)
    return _replay_cache[key]


def gen_scores(cfg: ScoreGenConfig, step: int, layer: int) -> ScoreMatrix:
    """Score matrix for one (step, layer) cell; a pure function of its inputs."""
    if cfg.kind is GenKind.REPLAY:
        try:
            return _replay(cfg)[(step, layer)]
        except KeyError:
            raise ValueError(f"replay trace has no record for step={step}, layer={layer}") from None
    templates = _templates(cfg, layer)
    return ScoreMatrix(np.stack([_token_row(cfg, step, layer, i, templates)
                                 for i in range(cfg.batch)]))


def layer_scores(cfg: ScoreGenConfig, layer: int) -> tuple[np.ndarray, np.ndarray]:
    """All steps of one layer stacked: ``(values (steps, B, N), mask (steps, B))``."""
    mats = [gen_scores(cfg, s, layer) for s in range(cfg.steps)]
    shapes = {m.values.shape for m in mats}
    if len(shapes) != 1:
        raise ValueError(f"layer {layer}: score matrices differ in shape {sorted(shapes)}")
    return np.stack([m.values for m in mats]), np.stack([m.real for m in mats])


def pad_rows(cfg: ScoreGenConfig, step: int, layer: int, count: int, alpha: float = 1.0) -> np.ndarray:
    """Random score rows standing in for padding tokens, ~ Dirichlet(alpha)."""
    return np.stack([keyed_rng(cfg.seed, _PAD, step, layer, j).dirichlet(np.full(cfg.n_experts, alpha))
                     for j in range(count)]) if count else np.zeros((0, cfg.n_experts))


def layer_embeddings(cfg: ScoreGenConfig, layer: int, d: int) -> np.ndarray:
    """Standard normal token embeddings, ``(steps, B, D)``."""
    return np.stack([
        np.stack([keyed_rng(cfg.seed, _EMBED, s, layer, i).standard_normal(d) for i in range(cfg.batch)])
        for s in range(cfg.steps)
    ])


# ---------------------------------------------------------------- simulation

@dataclass(frozen=True)
class StepRecord:
    layer: int
    step: int
    T: int
    total_load: int
    modeled_latency_us: float
    divergence: float | None = None


@dataclass
class DecodeTrace:
    """Per-(layer, step) records for a routing config and for vanilla top-k on
    the same scores."""

    records: list[StepRecord]
    baseline: list[StepRecord]
    routing: RoutingConfig
    gen: ScoreGenConfig
    latency: LatencyParams
    meta: dict = field(default_factory=dict)

    def summary(self) -> dict:
        t = np.array([r.T for r in self.records], dtype=np.float64)
        load = np.array([r.total_load for r in self.records], dtype=np.float64)
        lat = np.array([r.modeled_latency_us for r in self.records])
        t_van = np.array([r.T for r in self.baseline], dtype=np.float64)
        lat_van = np.array([r.modeled_latency_us for r in self.baseline])
        n = len(t)
        se = float(t.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        divs = [r.divergence for r in self.records if r.divergence is not None]
        return {
            "schema_version": TRACE_FORMAT_VERSION,
            "cells": n,
            "mean_T": float(t.mean()),
            "mean_T_stderr": se,
            "mean_T_ci95": [float(t.mean()) - 1.96 * se, float(t.mean()) + 1.96 * se],
            "mean_total_load": float(load.mean()),
            "mean_latency_us": float(lat.mean()),
            "mean_divergence_proxy": float(np.mean(divs)) if divs else None,
            "vanilla": {
                "k": self.routing.k,
                "mean_T": float(t_van.mean()),
                "mean_latency_us": float(lat_van.mean()),
            },
            "normalized_average": {
                "T": float(t.mean() / t_van.mean()) if t_van.mean() else None,
                "latency": float(lat.mean() / lat_van.mean()) if lat_van.mean() else None,
            },
            "config": {
                "routing": routing_to_dict(self.routing),
                "generator": self.gen.to_dict(),
                "latency": {"a_us": self.latency.a, "b_us": self.latency.b},
                **self.meta,
            },
        }


TRACE_FORMAT_VERSION = 1
TRACE_COLUMNS = ("layer", "step", "T", "total_load", "modeled_latency_us", "divergence")


def routing_to_dict(cfg: RoutingConfig) -> dict:
    return {"mode": cfg.mode.value, "k": cfg.k, "k0": cfg.k0, "p": cfg.p, "k_max": cfg.k_max,
            "max_p": cfg.max_p, "cap": cfg.cap.value}


def routing_from_dict(d: dict) -> RoutingConfig:
    def opt_int(v):
        return None if v in (None, "") else int(v)
    return RoutingConfig(mode=Mode(d["mode"]), k=int(d["k"]), k0=opt_int(d.get("k0")),
                         p=float(d.get("p", 1.0) or 1.0), k_max=opt_int(d.get("k_max")),
                         max_p=opt_int(d.get("max_p")), cap=CapSemantics(d.get("cap") or "exact"))


def _latencies(batch: PlanBatch, params: LatencyParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    loads = batch.loads()
    t = np.count_nonzero(loads, axis=-1)
    total = loads.sum(axis=-1)
    return t, total, params.b * t + params.a * total


def _mix(expert_out: np.ndarray, batch: PlanBatch, m: int) -> np.ndarray:
    # expert_out: (B, N, D); accumulate each token's experts in ranked order
    order, keep, weights = batch.order[m], batch.keep[m], batch.weights[m]
    out = np.zeros((expert_out.shape[0], expert_out.shape[2]))
    for i in range(order.shape[0]):
        for e, w in zip(order[i][keep[i]].tolist(), weights[i][keep[i]].tolist()):
            out[i] += w * expert_out[i, e]
    return out


def _expert_outputs(layer: MoeLayerParams, x: np.ndarray) -> np.ndarray:
    """``(B, N, D)`` output of every expert on every token."""
    gate = np.stack([e.w_gate for e in layer.experts]).astype(np.float64)
    up = np.stack([e.w_up for e in layer.experts]).astype(np.float64)
    down = np.stack([e.w_down for e in layer.experts]).astype(np.float64)
    g = np.einsum("bd,ndh->bnh", x, gate)
    u = np.einsum("bd,ndh->bnh", x, up)
    h = g / (1.0 + np.exp(-g)) * u
    return np.einsum("bnh,nhd->bnd", h, down)


@dataclass
class _LayerCell:
    values: np.ndarray
    mask: np.ndarray
    expert_out: list[np.ndarray] | None = None


def _prepare_layer(gen: ScoreGenConfig, layer: int, layer_params: MoeLayerParams | None) -> _LayerCell:
    if layer_params is None:
        values, mask = layer_scores(gen, layer)
        return _LayerCell(values, mask)
    d, _, n = layer_params.dims
    if n != gen.n_experts:
        raise ValueError(f"toy layer has {n} experts, generator {gen.n_experts}")
    emb = layer_embeddings(gen, layer, d)
    values = np.stack([router_scores(layer_params, x).values for x in emb])
    mask = np.ones(values.shape[:2], dtype=bool)
    return _LayerCell(values, mask, [_expert_outputs(layer_params, x) for x in emb])


def _run_layer(cell: _LayerCell, layer: int, routing: RoutingConfig,
               latency: LatencyParams) -> tuple[list[StepRecord], list[StepRecord]]:
    got = route_batch(cell.values, routing, cell.mask)
    van = route_batch(cell.values, RoutingConfig.vanilla(routing.k), cell.mask)
    t, total, lat = _latencies(got, latency)
    vt, vtotal, vlat = _latencies(van, latency)
    recs, base = [], []
    for s in range(cell.values.shape[0]):
        div = None
        if cell.expert_out is not None:
            real = cell.mask[s]
            ref = _mix(cell.expert_out[s], van, s)[real]
            test = _mix(cell.expert_out[s], got, s)[real]
            div = output_divergence(ref, test)[0]
        recs.append(StepRecord(layer, s, int(t[s]), int(total[s]), float(lat[s]), div))
        base.append(StepRecord(layer, s, int(vt[s]), int(vtotal[s]), float(vlat[s]),
                               0.0 if div is not None else None))
    return recs, base


def _map_layers(fn, layers: int, workers: int | None) -> list:
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, range(layers)))
    return [fn(layer) for layer in range(layers)]


def simulate_decode(gen: ScoreGenConfig, routing: RoutingConfig, latency: LatencyParams,
                    layer_params: MoeLayerParams | None = None,
                    workers: int | None = None) -> DecodeTrace:
    """Route every (step, layer) cell independently and record batch stats.

    With ``layer_params``, scores come from the toy layer's router applied to
    keyed random embeddings and each record carries the output divergence
    from vanilla top-k routing.
    """
    def one(layer: int):
        return _run_layer(_prepare_layer(gen, layer, layer_params), layer, routing, latency)

    results = _map_layers(one, gen.layers, workers)
    records = [r for recs, _ in results for r in recs]
    baseline = [r for _, base in results for r in base]
    source = "toy_router" if layer_params is not None else gen.kind.value
    return DecodeTrace(records, baseline, routing, gen, latency, meta={"score_source": source})


def observations_from_trace(trace: DecodeTrace, rel_noise: float = 0.0,
                            seed: int = 0) -> list[LatencyObservation]:
    """(T, latency) pairs with optional multiplicative Gaussian noise."""
    out = []
    for r in trace.records:
        lat = r.modeled_latency_us
        if rel_noise:
            eps = keyed_rng(seed, _NOISE, r.step, r.layer).standard_normal()
            lat = max(0.0, lat * (1.0 + rel_noise * eps))
        out.append(LatencyObservation(r.T, lat))
    return out


def format_trace_csv(trace: DecodeTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for r in trace.records:
        w.writerow([r.layer, r.step, r.T, r.total_load, repr(r.modeled_latency_us),
                    "" if r.divergence is None else repr(r.divergence)])
    return buf.getvalue()


def write_trace_csv(path: str | Path, trace: DecodeTrace) -> None:
    Path(path).write_text(format_trace_csv(trace))


# ---------------------------------------------------------------- padding

@dataclass
class PaddingVariant:
    name: str
    T: np.ndarray
    latency_us: np.ndarray

    @property
    def mean_T(self) -> float:
        return float(self.T.mean())

    @property
    def mean_latency_us(self) -> float:
        return float(self.latency_us.mean())


@dataclass
class PaddingReport:
    batch: int
    pad_to: int
    unpadded: PaddingVariant
    naive: PaddingVariant
    masked: PaddingVariant

    @property
    def masked_matches_unpadded(self) -> bool:
        return bool(np.array_equal(self.unpadded.T, self.masked.T)
                    and np.array_equal(self.unpadded.latency_us, self.masked.latency_us))

    def to_dict(self) -> dict:
        return {
            "schema_version": TRACE_FORMAT_VERSION,
            "batch": self.batch,
            "pad_to": self.pad_to,
            "variants": {
                v.name: {"mean_T": v.mean_T, "mean_latency_us": v.mean_latency_us}
                for v in (self.unpadded, self.naive, self.masked)
            },
            "naive_minus_unpadded_T": self.naive.mean_T - self.unpadded.mean_T,
            "masked_minus_unpadded_T": self.masked.mean_T - self.unpadded.mean_T,
            "masked_matches_unpadded_stepwise": self.masked_matches_unpadded,
        }


def padding_experiment(gen: ScoreGenConfig, routing: RoutingConfig, pad_to: int,
                       latency: LatencyParams, pad_alpha: float = 1.0) -> PaddingReport:
    """Compare no padding, padding with random rows routed as real tokens,
    and padding rows masked out, on identical real-token scores."""
    if pad_to < gen.batch:
        raise ValueError(f"pad_to={pad_to} is smaller than batch={gen.batch}")
    if gen.kind is GenKind.REPLAY:
        raise ValueError("padding experiment needs a synthetic generator")
    extra = pad_to - gen.batch
    acc: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {"unpadded": [], "naive": [], "masked": []}
    for layer in range(gen.layers):
        values, _ = layer_scores(gen, layer)
        pads = np.stack([pad_rows(gen, s, layer, extra, pad_alpha) for s in range(gen.steps)])
        padded = np.concatenate([values, pads], axis=1)
        mask = np.concatenate([np.ones(values.shape[:2], bool), np.zeros(pads.shape[:2], bool)], axis=1)
        for name, v, m in (("unpadded", values, None), ("naive", padded, None), ("masked", padded, mask)):
            t, _, lat = _latencies(route_batch(v, routing, m), latency)
            acc[name].append((t, lat))

    def variant(name: str) -> PaddingVariant:
        return PaddingVariant(name, np.concatenate([t for t, _ in acc[name]]),
                              np.concatenate([lat for _, lat in acc[name]]))

    return PaddingReport(gen.batch, pad_to, variant("unpadded"), variant("naive"), variant("masked"))


# ---------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class SweepPoint:
    config: RoutingConfig
    mean_active_experts: float
    mean_latency_us: float
    quality_delta: float | None
    rounded_active_experts: float
    rounded_quality_delta: float | None


def round_to(x: float, step: float) -> float:
    """Nearest multiple of ``step``."""
    return float(round(round(x / step) * step, 12))


def sweep(gen: ScoreGenConfig, grid: list[RoutingConfig], latency: LatencyParams,
          layer_params: MoeLayerParams | None = None, delta_bin: float = 0.005,
          active_bin: float = 0.1, workers: int | None = None) -> list[SweepPoint]:
    """One point per config. Scores (and toy-layer expert outputs) are
    generated once and shared by every config."""
    if not grid:
        raise ValueError("empty sweep grid")
    cells = _map_layers(lambda layer: _prepare_layer(gen, layer, layer_params), gen.layers, workers)
    points = []
    for cfg in grid:
        results = [_run_layer(cell, layer, cfg, latency) for layer, cell in enumerate(cells)]
        recs = [r for rs, _ in results for r in rs]
        mean_t = float(np.mean([r.T for r in recs]))
        mean_lat = float(np.mean([r.modeled_latency_us for r in recs]))
        delta = float(np.mean([r.divergence for r in recs])) if layer_params is not None else None
        points.append(SweepPoint(
            config=cfg,
            mean_active_experts=mean_t,
            mean_latency_us=mean_lat,
            quality_delta=delta,
            rounded_active_experts=round_to(mean_t, active_bin),
            rounded_quality_delta=None if delta is None else round_to(delta, delta_bin),
        ))
    return points


def full_grid(n_experts: int, k: int) -> list[RoutingConfig]:
    """The full OEA and pruned hyperparameter grid, rescaled to ``(N, k)``.

    Reference point is ``N = 128, k = 8``: ``k0 in 4..8``, ``k_max in 7..11``,
    ``p in 0.4..1`` and ``max_p in {8, 16, 32, 128}``. Rank-like values are
    scaled by ``k / 8`` (k0, k_max) or ``N / 128`` (max_p), rounded, clipped to
    ``[1, N]`` and de-duplicated.
    """
    def scale(values, factor):
        return sorted({min(n_experts, max(1, round(v * factor))) for v in values})

    k0s = scale(range(4, 9), k / 8)
    k_maxes = scale(range(7, 12), k / 8)
    max_ps = scale((8, 16, 32, 128), n_experts / 128)
    ps = (0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    grid = [RoutingConfig.vanilla(k)]
    for k0 in k0s:
        for p in ps:
            grid.append(RoutingConfig.pruned(k0, p=p, k=k))
            for k_max in k_maxes:
                if k_max < k0:
                    continue
                for max_p in max_ps:
                    grid.append(RoutingConfig.oea(k0, p=p, k_max=k_max,
                                                  max_p=None if max_p == n_experts else max_p, k=k))
    return grid


def _quality(p: SweepPoint) -> float:
    if p.quality_delta is None:
        raise ValueError(f"point {p.config.label()} has no quality_delta")
    return p.quality_delta


def pareto_frontier(points: list[SweepPoint]) -> list[SweepPoint]:
    """Points not dominated when minimizing (mean_active_experts, quality_delta).

    Sorted by mean_active_experts; exact duplicates are all kept.
    """
    if not points:
        raise ValueError("no points")
    ordered = sorted(points, key=lambda p: (p.mean_active_experts, _quality(p)))
    frontier: list[SweepPoint] = []
    best_y = math.inf
    i = 0
    while i < len(ordered):
        x = ordered[i].mean_active_experts
        j = i
        while j < len(ordered) and ordered[j].mean_active_experts == x:
            j += 1
        group_min = _quality(ordered[i])
        if group_min < best_y:
            frontier.extend(p for p in ordered[i:j] if _quality(p) == group_min)
            best_y = group_min
        i = j
    return frontier


def pareto_frontier_bruteforce(points: list[SweepPoint]) -> list[SweepPoint]:
    """O(n^2) all-pairs dominance filter, input order preserved; reference for
    :func:`pareto_frontier`."""
    x = np.array([p.mean_active_experts for p in points], dtype=np.float64)
    y = np.array([_quality(p) for p in points], dtype=np.float64)
    # dom[j, i]: point j dominates point i
    le = (x[:, None] <= x[None, :]) & (y[:, None] <= y[None, :])
    lt = (x[:, None] < x[None, :]) | (y[:, None] < y[None, :])
    dominated = (le & lt).any(axis=0)
    return [p for p, d in zip(points, dominated.tolist()) if not d]


SWEEP_COLUMNS = ("mode", "k", "k0", "p", "k_max", "max_p", "cap", "mean_active_experts",
                 "mean_latency_us", "quality_delta", "rounded_active_experts",
                 "rounded_quality_delta", "schema_version")


def format_sweep_csv(points: list[SweepPoint]) -> str:
    def fmt(v):
        if v is None:
            return ""
        return repr(v) if isinstance(v, float) else str(v)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for pt in points:
        c = routing_to_dict(pt.config)
        w.writerow([fmt(c[k]) for k in ("mode", "k", "k0", "p", "k_max", "max_p", "cap")] + [
            fmt(pt.mean_active_experts), fmt(pt.mean_latency_us), fmt(pt.quality_delta),
            fmt(pt.rounded_active_experts), fmt(pt.rounded_quality_delta), TRACE_FORMAT_VERSION])
    return buf.getvalue()


def write_sweep_csv(path: str | Path, points: list[SweepPoint]) -> None:
    Path(path).write_text(format_sweep_csv(points))


def read_sweep_csv(path: str | Path) -> list[SweepPoint]:
    def opt(v):
        return None if v in (None, "") else float(v)

    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"mean_active_experts", "quality_delta"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                cfg = routing_from_dict(row) if row.get("mode") else RoutingConfig()
                x = float(row["mean_active_experts"])
                out.append(SweepPoint(cfg, x, opt(row.get("mean_latency_us")) or 0.0,
                                      opt(row["quality_delta"]),
                                      opt(row.get("rounded_active_experts")) or x,
                                      opt(row.get("rounded_quality_delta"))))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out
