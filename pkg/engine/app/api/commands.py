import argparse
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, Tuple

from ..core.belief import BeliefState
from ..core.geometry import SeededRng
from ..core.mission import build_estimator, finite_or_none, load_world, run_exploration, run_monitoring
from ..core.path_selection import Path as TreePath, select_path
from ..core.planner import PlanningResult, iig_tree, rig_tree, total_tree_cost, total_tree_information
from ..core.pose import MotionNoise, PoseBelief
from ..database import BenchRun, _resolve_database_url, export_bench_csv, get_db, session_factory
from ..models import InfoKind, RunConfig
from ..utils.results_writer import emit_results, planning_summary

logger = logging.getLogger(__name__)

BENCH_SETTINGS = {
    "beams": (10, 20, 30, 40, 50),
    "range": (5.0, 10.0, 15.0, 20.0),
    "radius": (5.0, 10.0, 15.0, 20.0),
}


def _out_dir(config: RunConfig) -> Path:
    return Path(config.run.output_dir)


def plan_once(config: RunConfig, rig: bool = False) -> Tuple[PlanningResult, TreePath]:
    """One IIG (or fixed-sample RIG) tree on the configured world, map prior from ground truth"""
    world = load_world(config)
    inv = config.inverse_model
    belief = BeliefState.from_truth(world, inv.p_occ, inv.p_free)
    geometry = config.geometry
    start = PoseBelief.from_std(geometry.start_x, geometry.start_y, geometry.start_heading, config.motion.init_std)
    noise = MotionNoise.from_std(config.motion.q_std)
    rng = SeededRng(config.run.seed)
    estimator = build_estimator(config)

    if rig:
        samples = config.planner.rig_samples
        tree = rig_tree(belief.planning_world, belief, config.planner, estimator, start, noise, rng, samples)
        result = PlanningResult(tree, [], samples, False)
    else:
        result = iig_tree(belief.planning_world, belief, config.planner, estimator, start, noise, rng)
    return result, select_path(result.tree, config.selection)


def plan_command(args: argparse.Namespace, config: RunConfig) -> int:
    if args.info is not None:
        config = config.model_copy(update={"planner": config.planner.model_copy(update={"info_kind": args.info})})
    logger.info(f"Planning with {config.planner.info_kind.value} on {config.geometry.world_file}, "
                f"seed {config.run.seed}")
    result, path = plan_once(config, rig=args.rig)
    summary = planning_summary(result, path, config.planner.info_kind.value, config.run.seed)
    emit_results(_out_dir(config), result=result, path=path, summary=summary)
    return 0


def explore_command(args: argparse.Namespace, config: RunConfig) -> int:
    outcome = run_exploration(config)
    emit_results(_out_dir(config), result=outcome.planning, path=outcome.path, log=outcome.log,
                 belief=outcome.belief)
    return 0


def monitor_command(args: argparse.Namespace, config: RunConfig) -> int:
    if args.info is not None:
        config = config.model_copy(update={"monitoring": config.monitoring.model_copy(update={"info_kind": args.info})})
    outcome = run_monitoring(config)
    emit_results(_out_dir(config), result=outcome.planning, path=outcome.path, log=outcome.log)
    return 0


def _sweep_config(config: RunConfig, sweep: str, setting: float, seed: int, out: Path) -> RunConfig:
    raw = config.model_dump()
    raw["run"]["seed"] = seed
    raw["run"]["output_dir"] = str(out)
    if sweep == "beams":
        raw["sensor"]["n_beams"] = int(setting)
    elif sweep == "range":
        raw["sensor"]["r_max"] = float(setting)
    else:
        raw["monitoring"]["sensing_radius"] = float(setting)
    return RunConfig.model_validate(raw)


def _bench_job(job: Tuple[str, float, int, Dict[str, Any], str]) -> Dict[str, Any]:
    """Runs in a worker process; every run writes into its own directory"""
    sweep, setting, seed, raw, out = job
    config = _sweep_config(RunConfig.model_validate(raw), sweep, setting, seed, Path(out))
    started = time.perf_counter()
    rmse = None
    if sweep == "radius":
        outcome = run_monitoring(config)
        result = outcome.planning
        rmse = outcome.log.summary.rmse
        info_kind = config.monitoring.info_kind.value
        emit_results(out, log=outcome.log)
    else:
        result, path = plan_once(config)
        info_kind = config.planner.info_kind.value
        emit_results(out, summary=planning_summary(result, path, info_kind, seed))
    return {
        "sweep": sweep,
        "setting": float(setting),
        "seed": seed,
        "info_kind": info_kind,
        "samples": result.samples,
        "nodes": len(result.tree),
        "total_info": total_tree_information(result.tree),
        "total_cost": total_tree_cost(result.tree),
        "converged": result.converged,
        "final_mean": finite_or_none(result.final_mean),
        "rmse": rmse,
        "runtime_s": time.perf_counter() - started,
    }


def bench_command(args: argparse.Namespace, config: RunConfig) -> int:
    sweep = args.sweep or config.bench.sweep
    seeds = args.seeds or config.bench.seeds
    workers = args.workers or config.bench.workers
    out = _out_dir(config)
    raw = config.model_dump()
    jobs = [
        (sweep, setting, config.run.seed + k, raw, str(out / "bench" / sweep / f"{setting:g}_seed{config.run.seed + k}"))
        for setting in BENCH_SETTINGS[sweep]
        for k in range(seeds)
    ]
    logger.info(f"Bench sweep '{sweep}': {len(jobs)} runs on {workers} worker(s)")

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_bench_job, jobs))
    else:
        rows = [_bench_job(job) for job in jobs]

    out.mkdir(parents=True, exist_ok=True)
    factory = session_factory(_resolve_database_url(out))
    for db in get_db(factory):
        db.query(BenchRun).filter(BenchRun.sweep == sweep).delete()
        db.add_all(BenchRun(**row) for row in rows)
        db.commit()
        export_bench_csv(db, out / f"bench_{sweep}.csv", sweep)
    return 0


def register(subparsers: argparse._SubParsersAction, common: argparse.ArgumentParser):
    """Attach every subcommand with its handler"""
    plan = subparsers.add_parser("plan", parents=[common], help="Grow one IIG tree on a world")
    plan.add_argument("--info", type=InfoKind, choices=list(InfoKind), help="Information function")
    plan.add_argument("--rig", action="store_true", help="Plain RIG tree with [planner] rig_samples samples")
    plan.set_defaults(handler=plan_command)

    explore = subparsers.add_parser("explore", parents=[common], help="Run an exploration mission")
    explore.set_defaults(handler=explore_command)

    monitor = subparsers.add_parser("monitor", parents=[common], help="Run a signal monitoring mission")
    monitor.add_argument("--info", type=InfoKind, choices=[InfoKind.GPVR, InfoKind.UGPVR],
                         help="Variance-reduction information function")
    monitor.set_defaults(handler=monitor_command)

    bench = subparsers.add_parser("bench", parents=[common], help="Seed sweep over one sensor parameter")
    bench.add_argument("--sweep", choices=sorted(BENCH_SETTINGS), help="Swept parameter")
    bench.add_argument("--seeds", type=int, help="Seeds per setting")
    bench.add_argument("--workers", type=int, help="Worker processes")
    bench.set_defaults(handler=bench_command)
