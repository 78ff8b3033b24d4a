import dataclasses
import random

import numpy as np
import pytest

from oea.latency import LatencyParams, expected_active_experts
from oea.moe import init_layer
from oea.routing import CapSemantics, RoutingConfig, ScoreMatrix, route_batch
from oea.workload import (
    GenKind,
    ScoreGenConfig,
    SweepPoint,
    format_sweep_csv,
    format_trace_csv,
    full_grid,
    gen_scores,
    keyed_rng,
    observations_from_trace,
    padding_experiment,
    pareto_frontier,
    pareto_frontier_bruteforce,
    read_score_trace,
    read_sweep_csv,
    round_to,
    routing_from_dict,
    routing_to_dict,
    simulate_decode,
    sweep,
    write_score_trace,
    write_sweep_csv,
)

LAT = LatencyParams(a=0.05, b=2.0)


def pt(x, y):
    return SweepPoint(RoutingConfig.vanilla(1), x, 0.0, y, x, y)


# ---------------------------------------------------------------- generators

def test_keyed_rng_is_pure():
    assert keyed_rng(1, 0, 2, 3).random() == keyed_rng(1, 0, 2, 3).random()
    assert keyed_rng(1, 0, 2, 3).random() != keyed_rng(1, 0, 3, 2).random()


def test_dirichlet_large_alpha_is_uniform():
    s = gen_scores(ScoreGenConfig(n_experts=32, batch=4, alpha=1e6), 0, 0)
    np.testing.assert_allclose(s.values, 1 / 32, atol=1e-2)


def test_gen_scores_deterministic():
    cfg = ScoreGenConfig(GenKind.CLUSTERED, n_experts=16, batch=5, seed=9)
    np.testing.assert_array_equal(gen_scores(cfg, 3, 1).values, gen_scores(cfg, 3, 1).values)
    assert not np.array_equal(gen_scores(cfg, 3, 1).values, gen_scores(cfg, 4, 1).values)


def test_clustered_single_group_no_spread_shares_order():
    cfg = ScoreGenConfig(GenKind.CLUSTERED, n_experts=16, batch=6, groups=1, spread=0.0)
    order = np.argsort(-gen_scores(cfg, 0, 0).values, axis=1, kind="stable")
    assert (order == order[0]).all()


def test_clustered_overlaps_more_than_dirichlet():
    kw = dict(n_experts=128, batch=16, steps=200, seed=2)
    van = RoutingConfig.vanilla(8)
    t_dir = simulate_decode(ScoreGenConfig(**kw), van, LAT).summary()["mean_T"]
    t_clu = simulate_decode(ScoreGenConfig(GenKind.CLUSTERED, **kw), van, LAT).summary()["mean_T"]
    assert t_clu < t_dir


def test_gen_config_validation():
    with pytest.raises(ValueError):
        ScoreGenConfig(alpha=0)
    with pytest.raises(ValueError):
        ScoreGenConfig(batch=0)
    with pytest.raises(ValueError):
        ScoreGenConfig(GenKind.REPLAY)


def test_score_trace_round_trip(tmp_path):
    cfg = ScoreGenConfig(n_experts=8, batch=3)
    recs = {(s, l): gen_scores(cfg, s, l) for s in range(2) for l in range(2)}
    recs[(1, 1)] = ScoreMatrix(recs[(1, 1)].values, [True, False, True])
    path = tmp_path / "s.ndjson"
    write_score_trace(path, recs)
    back = read_score_trace(path)
    assert back.keys() == recs.keys()
    for key in recs:
        np.testing.assert_array_equal(back[key].values, recs[key].values)
    assert back[(1, 1)].real.tolist() == [True, False, True]

    replay = ScoreGenConfig(GenKind.REPLAY, n_experts=8, batch=3, steps=2, layers=2, trace_path=str(path))
    trace = simulate_decode(replay, RoutingConfig.vanilla(2), LAT)
    assert len(trace.records) == 4


def test_score_trace_errors(tmp_path):
    path = tmp_path / "bad.ndjson"
    path.write_text('{"version": 1, "step": 0, "layer": 0}\n')
    with pytest.raises(ValueError, match=":1:"):
        read_score_trace(path)
    path.write_text("\n")
    with pytest.raises(ValueError, match="no score records"):
        read_score_trace(path)


# ---------------------------------------------------------------- simulation

def test_vanilla_uniform_mean_t():
    gen = ScoreGenConfig(n_experts=128, batch=16, steps=200, seed=0)
    s = simulate_decode(gen, RoutingConfig.vanilla(8), LAT).summary()
    assert abs(s["mean_T"] - expected_active_experts(128, 8, 16)) <= 3 * s["mean_T_stderr"]
    assert s["normalized_average"] == {"T": 1.0, "latency": 1.0}


def test_single_token_batches_use_own_baseline():
    gen = ScoreGenConfig(n_experts=32, batch=1, steps=50, seed=4)
    for cfg in (RoutingConfig.simplified(3, k=8), RoutingConfig.oea(2, p=0.5, k_max=6, k=8)):
        trace = simulate_decode(gen, cfg, LAT)
        n = route_batch(np.stack([gen_scores(gen, s, 0).values for s in range(50)]),
                        RoutingConfig.pruned(cfg.k0, p=cfg.p, k=8)).total_loads()
        assert [r.T for r in trace.records] == n.tolist()


def test_simplified_never_exceeds_vanilla():
    gen = ScoreGenConfig(n_experts=64, batch=8, steps=100, seed=5)
    trace = simulate_decode(gen, RoutingConfig.simplified(3, k=8), LAT)
    for r, v in zip(trace.records, trace.baseline):
        assert r.T <= v.T
        assert r.total_load <= 8 * 8


def test_step_isolation_and_thread_invariance():
    gen = ScoreGenConfig(GenKind.CLUSTERED, n_experts=32, batch=8, steps=30, layers=3, seed=6)
    cfg = RoutingConfig.oea(2, p=0.8, k_max=6, max_p=16, k=6)
    serial = simulate_decode(gen, cfg, LAT)
    threaded = simulate_decode(gen, cfg, LAT, workers=3)
    assert serial.records == threaded.records
    short = simulate_decode(dataclasses.replace(gen, steps=10), cfg, LAT)
    assert [r for r in serial.records if r.step < 10] == short.records


def test_normalized_latency_identity():
    gen = ScoreGenConfig(n_experts=64, batch=16, steps=40, seed=7)
    trace = simulate_decode(gen, RoutingConfig.simplified(2, k=8), LAT)
    s = trace.summary()
    mt = np.mean([r.T for r in trace.records])
    ml = np.mean([r.total_load for r in trace.records])
    vt = np.mean([r.T for r in trace.baseline])
    vl = np.mean([r.total_load for r in trace.baseline])
    assert s["normalized_average"]["latency"] == pytest.approx(
        (LAT.b * mt + LAT.a * ml) / (LAT.b * vt + LAT.a * vl), rel=1e-12)


def test_toy_layer_divergence_recorded():
    layer = init_layer(d=16, h=16, n=16, seed=1)
    gen = ScoreGenConfig(n_experts=16, batch=8, steps=5, seed=1)
    s = simulate_decode(gen, RoutingConfig.simplified(2, k=4), LAT, layer_params=layer).summary()
    assert s["mean_divergence_proxy"] > 0
    same = simulate_decode(gen, RoutingConfig.simplified(4, k=4), LAT, layer_params=layer).summary()
    assert same["mean_divergence_proxy"] == 0.0


def test_toy_layer_dims_must_match():
    with pytest.raises(ValueError):
        simulate_decode(ScoreGenConfig(n_experts=32, steps=1), RoutingConfig.vanilla(4), LAT,
                        layer_params=init_layer(8, 8, 16))


def test_observations_noise():
    gen = ScoreGenConfig(n_experts=64, batch=8, steps=20, seed=8)
    trace = simulate_decode(gen, RoutingConfig.vanilla(4), LAT)
    clean = observations_from_trace(trace)
    assert [o.latency_us for o in clean] == [r.modeled_latency_us for r in trace.records]
    noisy = observations_from_trace(trace, rel_noise=0.01, seed=1)
    assert noisy == observations_from_trace(trace, rel_noise=0.01, seed=1)
    assert all(abs(n.latency_us / c.latency_us - 1) < 0.06 for n, c in zip(noisy, clean))


def test_trace_csv_header():
    gen = ScoreGenConfig(n_experts=16, batch=2, steps=2, seed=0)
    text = format_trace_csv(simulate_decode(gen, RoutingConfig.vanilla(2), LAT))
    lines = text.splitlines()
    assert lines[0] == "layer,step,T,total_load,modeled_latency_us,divergence"
    assert len(lines) == 3


# ---------------------------------------------------------------- padding

def test_padding_variants():
    gen = ScoreGenConfig(n_experts=128, batch=7, steps=200, seed=3)
    rep = padding_experiment(gen, RoutingConfig.vanilla(8), 8, LAT)
    assert rep.masked_matches_unpadded
    assert rep.naive.mean_T > rep.unpadded.mean_T
    assert rep.to_dict()["masked_minus_unpadded_T"] == 0.0


def test_padding_to_same_batch_is_noop():
    gen = ScoreGenConfig(n_experts=32, batch=4, steps=20, seed=3)
    rep = padding_experiment(gen, RoutingConfig.simplified(2, k=4), 4, LAT)
    assert np.array_equal(rep.naive.T, rep.unpadded.T)
    assert rep.masked_matches_unpadded


def test_padding_rejects_shrink():
    with pytest.raises(ValueError):
        padding_experiment(ScoreGenConfig(batch=8), RoutingConfig.vanilla(8), 7, LAT)


# ---------------------------------------------------------------- sweeps

def test_sweep_vanilla_only_has_zero_delta():
    layer = init_layer(d=8, h=8, n=16, seed=0)
    gen = ScoreGenConfig(n_experts=16, batch=4, steps=5, seed=0)
    (p,) = sweep(gen, [RoutingConfig.vanilla(4)], LAT, layer_params=layer)
    assert p.quality_delta == 0.0


def test_sweep_duplicates_and_monotone_k0():
    gen = ScoreGenConfig(n_experts=64, batch=16, steps=50, seed=10)
    grid = [RoutingConfig.simplified(k0, k=8) for k0 in (2, 3, 4)] + [RoutingConfig.simplified(3, k=8)]
    pts = sweep(gen, grid, LAT)
    assert pts[1] == pts[3]
    xs = [p.mean_active_experts for p in pts[:3]]
    assert xs[0] < xs[1] < xs[2]
    assert all(p.quality_delta is None for p in pts)


def test_sweep_rounding():
    assert round_to(0.0124, 0.005) == 0.01
    assert round_to(0.0126, 0.005) == 0.015
    assert round_to(41.26, 0.1) == 41.3


def test_sweep_empty_grid():
    with pytest.raises(ValueError):
        sweep(ScoreGenConfig(), [], LAT)


def test_full_grid_reference_point():
    grid = full_grid(128, 8)
    oea = [c for c in grid if c.mode.value == "oea"]
    assert {c.k0 for c in oea} == {4, 5, 6, 7, 8}
    assert {c.max_p for c in oea} == {8, 16, 32, None}
    assert all(c.k_max >= c.k0 for c in oea)
    for c in full_grid(16, 4):
        c.resolve(16)


def test_routing_dict_round_trip():
    for cfg in (RoutingConfig.vanilla(3), RoutingConfig.oea(2, p=0.7, k_max=5, max_p=9, k=4,
                                                           cap=CapSemantics.PSEUDOCODE)):
        assert routing_from_dict(routing_to_dict(cfg)) == cfg


# ---------------------------------------------------------------- pareto

def test_pareto_examples():
    pts = [pt(10, 0.5), pt(12, 0.3), pt(11, 0.6)]
    assert [(p.mean_active_experts, p.quality_delta) for p in pareto_frontier(pts)] == [(10, 0.5), (12, 0.3)]
    assert pareto_frontier([pt(1, 1)]) == [pt(1, 1)]
    assert len(pareto_frontier([pt(2, 2)] * 4)) == 4


def test_pareto_requires_quality():
    with pytest.raises(ValueError):
        pareto_frontier([SweepPoint(RoutingConfig.vanilla(1), 1.0, 0.0, None, 1.0, None)])
    with pytest.raises(ValueError):
        pareto_frontier([])


def test_pareto_matches_bruteforce_small():
    rnd = random.Random(0)
    for _ in range(200):
        pts = [pt(rnd.randint(0, 6), rnd.randint(0, 6) / 10) for _ in range(rnd.randint(1, 25))]
        fast = pareto_frontier(pts)
        assert sorted(map(id, fast)) == sorted(map(id, pareto_frontier_bruteforce(pts)))
        xs = [p.mean_active_experts for p in fast]
        assert xs == sorted(xs)


def test_sweep_csv_round_trip(tmp_path):
    gen = ScoreGenConfig(n_experts=16, batch=4, steps=3, seed=0)
    layer = init_layer(d=8, h=8, n=16, seed=0)
    pts = sweep(gen, [RoutingConfig.vanilla(4), RoutingConfig.oea(2, p=0.5, k_max=3, k=4)], LAT,
                layer_params=layer)
    path = tmp_path / "sweep.csv"
    write_sweep_csv(path, pts)
    assert read_sweep_csv(path) == pts
    assert format_sweep_csv(read_sweep_csv(path)) == path.read_text()
