"""Command-line entry point.

Every command is a pure function of its flags, optional ``--config`` JSON
file and input files. Precedence: flags > config file > built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from oea import latency as lat
from oea.moe import init_layer, load_layer
from oea.routing import CapSemantics, Mode, RoutingConfig, route
from oea.workload import (
    GenKind,
    ScoreGenConfig,
    padding_experiment,
    pareto_frontier,
    full_grid,
    read_score_trace,
    read_sweep_csv,
    routing_from_dict,
    routing_to_dict,
    simulate_decode,
    sweep,
    format_sweep_csv,
    write_trace_csv,
)

PLAN_FORMAT_VERSION = 1
FIT_FORMAT_VERSION = 1
EXIT_USAGE = 2

DEFAULTS = {
    "command": None,
    "config": None,
    "out": None,
    "scores": None,
    "input": None,
    "mode": "vanilla",
    "k": 8,
    "k0": None,
    "p": 1.0,
    "kmax": None,
    "maxp": None,
    "cap": "exact",
    "n_experts": 128,
    "batch": 16,
    "steps": 100,
    "layers": 1,
    "seed": None,
    "gen": "dirichlet",
    "alpha": 1.0,
    "groups": 4,
    "concentration": 3.0,
    "spread": 1.0,
    "trace": None,
    "a_us": 0.05,
    "b_us": 2.0,
    "workers": None,
    "toy_layer": None,
    "toy_dims": None,
    "grid": "simplified",
    "grid_file": None,
    "pad_to": None,
    "masked": False,
    "delta_bin": 0.005,
    "active_bin": 0.1,
}


class UsageError(Exception):
    pass


def _routing_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("routing")
    g.add_argument("--mode", "--routing", dest="mode", choices=[m.value for m in Mode])
    g.add_argument("--k", type=int, help="model default top-k")
    g.add_argument("--k0", type=int)
    g.add_argument("--p", type=float)
    g.add_argument("--kmax", type=int)
    g.add_argument("--maxp", type=int)
    g.add_argument("--cap", choices=[c.value for c in CapSemantics])


def _gen_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("workload")
    g.add_argument("--gen", choices=[k.value for k in GenKind])
    g.add_argument("--n-experts", type=int)
    g.add_argument("--batch", type=int)
    g.add_argument("--steps", type=int)
    g.add_argument("--layers", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--alpha", type=float, help="Dirichlet concentration")
    g.add_argument("--groups", type=int, help="clustered: number of token groups")
    g.add_argument("--concentration", type=float, help="clustered: template logit scale")
    g.add_argument("--spread", type=float, help="clustered: per-token logit noise")
    g.add_argument("--trace", help="replay: score ndjson file")
    g.add_argument("--workers", type=int)


def _latency_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("latency model")
    g.add_argument("--a-us", type=float, help="per token-expert compute time (us)")
    g.add_argument("--b-us", type=float, help="per-expert weight fetch time (us)")


def _toy_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("quality proxy")
    g.add_argument("--toy-layer", help="toy MoE layer JSON; enables output-divergence proxy")
    g.add_argument("--toy-dims", type=int, nargs=2, metavar=("D", "H"),
                   help="build a random toy layer of this size from --seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oea", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON file of option defaults")
        p.add_argument("--out", help="output path (default: stdout)")
        return p

    p = add("route", "route score batches from an ndjson file")
    p.add_argument("--scores", required=True)
    _routing_flags(p)

    p = add("simulate", "simulate decode steps; writes trace.csv and summary.json into --out")
    _routing_flags(p)
    _gen_flags(p)
    _latency_flags(p)
    _toy_flags(p)

    p = add("sweep", "hyperparameter sweep; writes sweep CSV")
    p.add_argument("--grid", choices=["simplified", "full"],
                   help="simplified: vanilla + pruned/simplified over k0=1..k; full: the complete OEA and pruned grid")
    p.add_argument("--grid-file", help="JSON list of routing config objects")
    p.add_argument("--delta-bin", type=float)
    p.add_argument("--active-bin", type=float)
    _routing_flags(p)
    _gen_flags(p)
    _latency_flags(p)
    _toy_flags(p)

    p = add("pareto", "Pareto frontier of a sweep CSV")
    p.add_argument("--input", required=True)

    p = add("padding", "compare unpadded, naively padded and mask-padded batches")
    p.add_argument("--pad-to", type=int, required=True)
    p.add_argument("--masked", action="store_true", default=None,
                   help="report the masked-padding delta as the headline")
    _routing_flags(p)
    _gen_flags(p)
    _latency_flags(p)

    p = add("fit-latency", "fit latency = slope * T + intercept from a CSV")
    p.add_argument("--input", required=True)
    return parser


def _options(args: argparse.Namespace) -> dict:
    opts = dict(DEFAULTS)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(cfg) - set(DEFAULTS) | ({"command", "config"} & set(cfg))
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        opts.update(cfg)
    opts.update({k: v for k, v in vars(args).items() if v is not None})
    return opts


def _routing(o: dict) -> RoutingConfig:
    return RoutingConfig(mode=Mode(o["mode"]), k=o["k"], k0=o["k0"], p=o["p"],
                         k_max=o["kmax"], max_p=o["maxp"], cap=CapSemantics(o["cap"]))


def _gen(o: dict) -> ScoreGenConfig:
    if o["seed"] is None and o["gen"] != GenKind.REPLAY.value:
        raise UsageError("--seed is required for randomized commands")
    kind = GenKind(o["gen"])
    n, b = o["n_experts"], o["batch"]
    steps, layers = o["steps"], o["layers"]
    if kind is GenKind.REPLAY:
        if not o["trace"]:
            raise UsageError("--gen replay needs --trace")
        records = read_score_trace(o["trace"])
        first = next(iter(records.values()))
        b, n = first.values.shape
        steps = 1 + max(s for s, _ in records)
        layers = 1 + max(l for _, l in records)
    return ScoreGenConfig(kind=kind, n_experts=n, batch=b, steps=steps, layers=layers,
                          seed=o["seed"] or 0, alpha=o["alpha"], groups=o["groups"],
                          concentration=o["concentration"], spread=o["spread"],
                          trace_path=o["trace"])


def _latency(o: dict) -> lat.LatencyParams:
    return lat.LatencyParams(a=o["a_us"], b=o["b_us"])


def _toy(o: dict, n_experts: int):
    if o["toy_layer"]:
        return load_layer(o["toy_layer"])
    if o["toy_dims"]:
        d, h = o["toy_dims"]
        return init_layer(d, h, n_experts, seed=o["seed"] or 0)
    return None


def _emit(out: str | None, text: str) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dump(doc) -> str:
    return json.dumps(doc, indent=2) + "\n"


def cmd_route(o: dict) -> None:
    cfg = _routing(o)
    records = read_score_trace(o["scores"])
    plans = []
    for (step, layer), scores in sorted(records.items()):
        try:
            plan = route(scores, cfg)
        except ValueError as exc:
            raise UsageError(f"step {step} layer {layer}: {exc}") from None
        plans.append({
            "step": step,
            "layer": layer,
            "sets": [s.tolist() for s in plan.sets],
            "weights": [w.tolist() for w in plan.weights],
            "T": plan.active_count,
            "loads": plan.loads.tolist(),
            "total_load": plan.total_load,
        })
    _emit(o["out"], _dump({"schema_version": PLAN_FORMAT_VERSION,
                           "config": routing_to_dict(cfg), "plans": plans}))


def cmd_simulate(o: dict) -> None:
    if not o["out"]:
        raise UsageError("simulate needs --out DIR")
    gen = _gen(o)
    cfg = _routing(o)
    trace = simulate_decode(gen, cfg, _latency(o), layer_params=_toy(o, gen.n_experts),
                            workers=o["workers"])
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(out / "trace.csv", trace)
    summary = trace.summary()
    summary["config"]["options"] = _echo(o)
    (out / "summary.json").write_text(_dump(summary))


def _echo(o: dict) -> dict:
    # output locations do not influence results
    return {k: v for k, v in o.items() if k not in ("out", "config", "command", "workers")}


def _grid(o: dict, n_experts: int) -> list[RoutingConfig]:
    k = o["k"]
    if o["grid_file"]:
        try:
            items = json.loads(Path(o["grid_file"]).read_text())
            return [routing_from_dict(d) for d in items]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"bad grid file {o['grid_file']}: {exc}") from None
    if o["grid"] == "full":
        return full_grid(n_experts, k)
    grid = [RoutingConfig.vanilla(k)]
    grid += [RoutingConfig.pruned(k0, k=k) for k0 in range(1, k + 1)]
    grid += [RoutingConfig.simplified(k0, k=k, cap=CapSemantics(o["cap"])) for k0 in range(1, k + 1)]
    return grid


def cmd_sweep(o: dict) -> None:
    gen = _gen(o)
    points = sweep(gen, _grid(o, gen.n_experts), _latency(o), layer_params=_toy(o, gen.n_experts),
                   delta_bin=o["delta_bin"], active_bin=o["active_bin"], workers=o["workers"])
    _emit(o["out"], format_sweep_csv(points))


def cmd_pareto(o: dict) -> None:
    points = read_sweep_csv(o["input"])
    if not points:
        raise UsageError(f"{o['input']}: no sweep points")
    if any(p.quality_delta is None for p in points):
        raise UsageError(f"{o['input']}: quality_delta missing; rerun sweep with --toy-layer/--toy-dims")
    _emit(o["out"], format_sweep_csv(pareto_frontier(points)))


def cmd_padding(o: dict) -> None:
    gen = _gen(o)
    report = padding_experiment(gen, _routing(o), o["pad_to"], _latency(o))
    doc = report.to_dict()
    headline = "masked" if o["masked"] else "naive"
    doc["headline"] = {"variant": headline,
                       "delta_T_vs_unpadded": doc[f"{headline}_minus_unpadded_T"]}
    doc["config"] = _echo(o)
    _emit(o["out"], _dump(doc))


def cmd_fit_latency(o: dict) -> None:
    try:
        obs = lat.read_observations_csv(o["input"])
        fit = lat.fit_linear(obs)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    doc = {"schema_version": FIT_FORMAT_VERSION, **fit.to_dict(), "input": str(o["input"])}
    _emit(o["out"], _dump(doc))


COMMANDS = {
    "route": cmd_route,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "pareto": cmd_pareto,
    "padding": cmd_padding,
    "fit-latency": cmd_fit_latency,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        opts = _options(args)
        COMMANDS[args.command](opts)
    except (UsageError, ValueError, OSError) as exc:
        print(f"oea {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
