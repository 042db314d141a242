"""Command-line entry points: instance generation, validation, replays,
diagnostic plots, and the allocation service."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import data, sim
from .model import validate
from .policies import PolicyConfig


def _add_gen(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("gen", help="generate a synthetic instance")
    p.add_argument("out", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--affiliates", type=int, default=18)
    p.add_argument("--refugees", type=int, default=3000)
    p.add_argument("--tightness", type=float, default=0.95)
    p.add_argument("--batch-cases", type=float, default=7.0)
    p.add_argument("--history-cases", type=int, default=None)
    p.add_argument("--revision", type=float, nargs=2, metavar=("FRACTION", "SCALE"),
                   default=None, help="capacity revision event")
    p.set_defaults(func=_run_gen)


def _run_gen(args: argparse.Namespace) -> int:
    cfg = data.GeneratorConfig(
        seed=args.seed,
        num_affiliates=args.affiliates,
        total_refugees=args.refugees,
        tightness=args.tightness,
        mean_batch_cases=args.batch_cases,
        history_cases=args.history_cases,
        revision=tuple(args.revision) if args.revision else None,
    )
    instance = data.generate(cfg)
    data.write_instance(instance, args.out)
    print(f"wrote {args.out}: {len(instance.cases)} cases, "
          f"{instance.total_refugees()} refugees, {len(instance.batches())} batches")
    return 0


def _add_validate(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("validate", help="check an instance file")
    p.add_argument("path", type=Path)
    p.set_defaults(func=_run_validate)


def _run_validate(args: argparse.Namespace) -> int:
    try:
        instance = data.read_instance(args.path)
    except data.InstanceFormatError as exc:
        print(f"parse error: {exc}")
        return 2
    violations = validate(instance)
    for v in violations:
        print(v)
    if not violations:
        print("ok")
    return 1 if violations else 0


def _add_replay(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("replay", help="replay one policy over a year")
    p.add_argument("path", type=Path)
    p.add_argument("--policy", choices=sim.POLICIES, default="pmb")
    p.add_argument("--method", choices=["pot1", "pot2", "zero"], default="pot2")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--mode", choices=sim.CAPACITY_MODES, default="final")
    p.add_argument("--arrivals", choices=["known_n", "capacity_fraction"], default="capacity_fraction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", type=Path, default=None)
    p.add_argument("--summary", type=Path, default=None)
    p.set_defaults(func=_run_replay)


def _run_replay(args: argparse.Namespace) -> int:
    instance = data.read_instance(args.path)
    config = PolicyConfig(
        potential_method=args.method, k=args.k, arrival_mode=args.arrivals,
        rng_seed=args.seed,
    )
    result = sim.replay(instance, config, capacity_mode=args.mode, policy=args.policy)
    if args.csv:
        sim.write_csv(result, args.csv)
    if args.summary:
        sim.write_summary(result, args.summary)
    print(json.dumps(sim.summary(result), indent=2))
    return 0


def _add_plot(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("plot", help="replay several policies and render SVG diagnostics")
    p.add_argument("path", type=Path)
    p.add_argument("outdir", type=Path)
    p.add_argument("--policies", nargs="+", default=["greedy", "pmb", "hindsight"])
    p.add_argument("--method", choices=["pot1", "pot2"], default="pot2")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--mode", choices=sim.CAPACITY_MODES, default="final")
    p.add_argument("--arrivals", choices=["known_n", "capacity_fraction"], default="capacity_fraction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--smooth", type=int, default=500)
    p.set_defaults(func=_run_plot)


def _run_plot(args: argparse.Namespace) -> int:
    instance = data.read_instance(args.path)
    from . import matching

    benchmark = matching.hindsight_optimum(instance, sim.reference_caps(instance, args.mode))
    prices = sim.year_prices(instance)
    results = []
    for policy in args.policies:
        config = PolicyConfig(
            potential_method=args.method, k=args.k, arrival_mode=args.arrivals,
            rng_seed=args.seed,
        )
        results.append(
            sim.replay(instance, config, capacity_mode=args.mode, policy=policy,
                       benchmark=benchmark, price_vector=prices)
        )
        print(f"{policy}: ratio {results[-1].optimum_ratio:.4f}")
    written = sim.plot_results(results, args.outdir, smooth_width=args.smooth)
    for path in written:
        print(f"wrote {path}")
    return 0


def _add_serve(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("serve", help="run the allocation service")
    p.add_argument("path", type=Path, help="instance file providing affiliates and history")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--method", choices=["pot1", "pot2", "zero"], default="pot2")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--event-log", type=Path, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_run_serve)


def _run_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import AllocationSession, create_app

    instance = data.read_instance(args.path)
    config = PolicyConfig(
        potential_method=args.method, k=args.k,
        arrival_mode="capacity_fraction", rng_seed=args.seed,
    )
    session = AllocationSession(instance, config, event_log=args.event_log)
    uvicorn.run(create_app(session), host=args.host, port=args.port)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="dynmatch")
    sub = parser.add_subparsers(required=True)
    _add_gen(sub)
    _add_validate(sub)
    _add_replay(sub)
    _add_plot(sub)
    _add_serve(sub)
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
