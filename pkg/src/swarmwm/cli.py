"""Command-line entry point wiring the offline and online pipelines.

Subcommands: gen-instances, gen-demos, learn, simulate, ingest, report.
Every run writes a manifest (resolved config, seeds, output hashes, timings)
next to its outputs. Exit codes: 0 success, 1 domain error, 2 usage error.
Set SWARM_LOG=error|info|debug to control logging.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .ingest import (
    combined_transition,
    generate_synthetic_flightlog,
    gng_fit,
    GNGConfig,
    label_sequence,
    load_flightlog,
    predict_and_correct,
    velocities_from_log,
)
from .runtime import Event, SimConfig, learn_from_demos, preset_config, run_offline, run_online
from .scenario import InstanceError, MissionInstance, generate_instance
from .world_model import ModelFormatError, infer_swarm_size, load_model, save_model

log = logging.getLogger("swarmwm")


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("SWARM_LOG", "error").lower(), logging.ERROR
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, subcommand: str, config: dict, seeds: list[int], inputs: list[str], started: float) -> None:
    outputs = {}
    for path in sorted(out_dir.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            outputs[str(path.relative_to(out_dir))] = _sha256(path)
    manifest = {
        "version": __version__,
        "subcommand": subcommand,
        "config": config,
        "seeds": seeds,
        "inputs": inputs,
        "outputs": outputs,
        "timings": {"wall_seconds": round(time.time() - started, 3)},
    }
    tmp = out_dir / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    os.replace(tmp, out_dir / "manifest.json")


def _sim_config_from_args(args) -> SimConfig:
    config = preset_config(args.preset, seed=args.seed)
    if getattr(args, "config", None):
        payload = json.loads(Path(args.config).read_text())
        for key in ("n_missions", "n_cities_min", "n_cities_max", "cities_per_uav", "q_max", "n_obstacles",
                    "alpha", "n_letters", "swarm_bin_width", "n_test", "max_sim_time", "pf_particles"):
            if key in payload:
                setattr(config, key, payload[key])
        if "area" in payload:
            config.area = tuple(payload["area"])
        if "events" in payload:
            config.events = [Event.from_dict(e) for e in payload["events"]]
    if getattr(args, "count", None) is not None:
        config.n_missions = args.count
    return config


def cmd_gen_instances(args) -> int:
    started = time.time()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = []
    for i in range(args.count):
        seed = args.seed + i
        seeds.append(seed)
        instance = generate_instance(
            seed=seed,
            n_cities=args.cities,
            uav_count=args.uavs,
            area=(args.area[0], args.area[1]),
            n_obstacles=args.obstacles,
        )
        instance.save(out_dir / f"instance_{i:05d}.json")
    config = {
        "count": args.count,
        "seed": args.seed,
        "cities": args.cities,
        "uavs": args.uavs,
        "obstacles": args.obstacles,
        "area": list(args.area),
        "out": str(out_dir),
    }
    _write_manifest(out_dir, "gen-instances", config, seeds, [], started)
    print(f"wrote {args.count} instances to {out_dir}")
    return 0


def cmd_gen_demos(args) -> int:
    started = time.time()
    out_dir = Path(args.out)
    config = _sim_config_from_args(args)
    demo_dir, model, stats = run_offline(config, out_dir)
    save_model(model, out_dir / "model.json")
    _write_manifest(out_dir, "gen-demos", {"preset": args.preset, "count": config.n_missions}, [config.seed], [], started)
    print(
        f"demos: {stats['learned_from']} learned, {stats['skipped']} skipped; "
        f"dictionary sizes {model.dictionaries.sizes}; model at {out_dir / 'model.json'}"
    )
    return 0


def cmd_learn(args) -> int:
    started = time.time()
    demos = Path(args.demos)
    if not demos.is_dir():
        raise InstanceError(f"demos directory {demos} does not exist")
    config = preset_config(args.preset, seed=args.seed)
    config.alpha = args.alpha
    model, n_loaded = learn_from_demos(config, demos)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out_path)
    out_dir = out_path.parent
    _write_manifest(out_dir, "learn", {"demos": str(demos), "alpha": args.alpha}, [args.seed], [str(demos)], started)
    print(f"learned model from {n_loaded} demos; sizes {model.dictionaries.sizes}; wrote {out_path}")
    return 0


def cmd_simulate(args) -> int:
    started = time.time()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = _sim_config_from_args(args)

    if args.model:
        model = load_model(args.model)
    else:
        demo_dir, model, _ = run_offline(config, out_dir / "offline")
        save_model(model, out_dir / "model.json")

    if args.instance:
        instance = MissionInstance.load(args.instance)
    else:
        n = args.cities or config.n_cities_max
        if args.uavs:
            uavs = args.uavs
        else:
            # let the learned city-count-to-swarm-size table pick the fleet
            decision = infer_swarm_size(model, n)
            uavs = decision.q
            log.info("inferred swarm size %d for %d cities (fallback=%s)", uavs, n, decision.fallback)
        instance = generate_instance(
            seed=config.seed + 90001,
            n_cities=n,
            uav_count=uavs,
            area=config.area,
            n_obstacles=config.n_obstacles,
        )

    report = run_online(instance, model, config, out_dir=out_dir)
    _write_manifest(
        out_dir,
        "simulate",
        {"preset": args.preset, "model": args.model, "instance": args.instance},
        [config.seed],
        [p for p in (args.model, args.instance) if p],
        started,
    )
    print(json.dumps(report.to_dict()["success"], sort_keys=True))
    print(f"metrics at {out_dir / 'metrics.json'}")
    return 0


def cmd_ingest(args) -> int:
    started = time.time()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.synthetic:
        log_path = out_dir / "synthetic_log.csv"
        generate_synthetic_flightlog(log_path, seed=args.seed)
    else:
        if not args.log:
            raise InstanceError("either --log FILE or --synthetic is required")
        log_path = Path(args.log)

    flight = load_flightlog(log_path)
    velocities = velocities_from_log(flight)
    stacked = [v for uav_id in sorted(velocities) for v in velocities[uav_id]]
    import numpy as np

    cfg = GNGConfig(max_nodes=args.max_nodes, seed=args.seed)
    codebook = gng_fit(np.asarray(stacked), cfg)
    sequences = label_sequence(flight, codebook)
    transition = combined_transition(sequences, alpha=args.alpha, n_labels=codebook.n_nodes)

    reports = [predict_and_correct(seq, transition, codebook) for seq in sequences]
    summary = {
        "n_sequences": len(sequences),
        "n_nodes": codebook.n_nodes,
        "per_sequence": [
            {
                "uav_id": seq.uav_id,
                "n": int(len(seq.labels)),
                "predicted_errors": int(rep["predicted_errors"].sum()),
                "corrected_errors": int(rep["corrected_errors"].sum()),
            }
            for seq, rep in zip(sequences, reports)
        ],
    }
    (out_dir / "codebook.json").write_text(json.dumps(codebook.to_dict(), indent=1, sort_keys=True))
    (out_dir / "transition.json").write_text(
        json.dumps(
            {
                "col_keys": transition.col_keys,
                "rows": {k: transition.rows[k].tolist() for k in sorted(transition.rows)},
                "alpha": transition.alpha,
            },
            indent=1,
            sort_keys=True,
        )
    )
    (out_dir / "correction_report.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    _write_manifest(out_dir, "ingest", {"log": str(log_path), "max_nodes": args.max_nodes}, [args.seed], [str(log_path)], started)
    print(json.dumps(summary["per_sequence"], sort_keys=True))
    return 0


def cmd_report(args) -> int:
    started = time.time()
    runs = sorted(Path(args.runs).rglob("metrics.json"))
    if not runs:
        raise InstanceError(f"no metrics.json files under {args.runs}")
    fields = [
        "run",
        "completion_time",
        "total_distance",
        "min_inter_uav_distance",
        "below_dmin_fraction",
        "division_similarity",
        "order_similarity",
        "rmse_ekf",
        "rmse_pf",
        "rmse_meas",
        "ga_invocations",
        "steps",
    ]
    rows = []
    for path in runs:
        payload = json.loads(path.read_text())
        rows.append([str(path.parent)] + [payload.get(f) for f in fields[1:]])

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(fields)
        writer.writerows(rows)
        numeric = list(zip(*[r[1:] for r in rows]))
        means = []
        for col in numeric:
            vals = [v for v in col if isinstance(v, (int, float)) and v is not None]
            means.append(round(sum(vals) / len(vals), 6) if vals else "")
        writer.writerow(["MEAN"] + means)
    _write_manifest(out_path.parent, "report", {"runs": str(args.runs)}, [], [str(p) for p in runs], started)
    print(f"wrote {out_path} with {len(rows)} runs")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swarmwm", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-instances", help="generate mission instance files")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cities", type=int, default=10)
    p.add_argument("--uavs", type=int, default=2)
    p.add_argument("--obstacles", type=int, default=0)
    p.add_argument("--area", type=float, nargs=2, default=[1000.0, 1000.0], metavar=("W", "H"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_instances)

    p = sub.add_parser("gen-demos", help="run the expert planner and learn the model")
    p.add_argument("--count", type=int, default=None, help="number of demonstrations (overrides preset)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", choices=["ci", "full"], default="ci")
    p.add_argument("--config", default=None, help="JSON file overriding preset fields")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_demos)

    p = sub.add_parser("learn", help="learn a world model from existing demos")
    p.add_argument("--demos", required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", choices=["ci", "full"], default="ci")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("simulate", help="run an online mission against a model")
    p.add_argument("--model", default=None, help="model JSON (trained on the fly when omitted)")
    p.add_argument("--instance", default=None, help="instance JSON (generated when omitted)")
    p.add_argument("--cities", type=int, default=None)
    p.add_argument("--uavs", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", choices=["ci", "full"], default="ci")
    p.add_argument("--config", default=None, help="JSON file with sim overrides (events, noise...)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="cluster a flight log and run label correction")
    p.add_argument("--log", default=None, help="CSV with t,x,y,z,uav_id")
    p.add_argument("--synthetic", action="store_true", help="generate a synthetic log instead")
    p.add_argument("--max-nodes", type=int, default=10)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("report", help="aggregate metrics.json files into a CSV summary")
    p.add_argument("--runs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InstanceError, ModelFormatError, FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
