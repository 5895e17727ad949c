import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..models import (InfoKind, InverseModelParams, MissionLog, MissionStepRecord, MissionSummary, RunConfig,
                      SensorModel, WssDataset)
from ..utils.world_parser import DataFileParser, WorldFileParser
from .belief import (BeliefState, Observation, average_map_entropy, bcm_fuse, hit_responsibility, occupancy_auc,
                     occupancy_bayes_update)
from .exceptions import CollisionError, ConfigError, DatasetError, FitError, MissionAbortedError
from .geometry import GridWorld, Point2, SeededRng, no_collision, ray_cast
from .gp import (GaussHermiteScheme, KernelFamily, KernelSpec, LogInputWarp, TrainingSet, fit_hyperparameters,
                 gp_predict)
from .info_functions import InformationEstimator, RadiusQueryPredictor
from .path_selection import Path, select_path
from .planner import PlanningResult, iig_tree, total_tree_information
from .pose import MotionNoise, PoseBelief, propagate

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0
# beams whose hit responsibility falls below this are dropped as outliers
MIN_BEAM_WEIGHT = 1e-3


@dataclass
class MissionOutcome:
    log: MissionLog
    belief: Optional[BeliefState] = None
    planning: Optional[PlanningResult] = None
    path: Optional[Path] = None


@dataclass(frozen=True)
class SignalSamples:
    """Signal observations at metric positions (2 x n inputs, n values in dBm)"""
    inputs: np.ndarray
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.size


def _beam_sample(rng: SeededRng, true_range: float, sensor: SensorModel) -> float:
    weights = np.array([sensor.z_hit, sensor.z_short, sensor.z_max, sensor.z_rand])
    component = rng.choice(4, weights / weights.sum())
    if component == 0:
        return min(max(rng.normal(true_range, sensor.sigma_hit), 0.0), sensor.r_max)
    if component == 1:
        if true_range <= 0:
            return 0.0
        lam = sensor.lambda_short
        u = rng.uniform()
        return -math.log1p(-u * -math.expm1(-lam * true_range)) / lam
    if component == 2:
        return sensor.r_max
    return rng.uniform(0.0, sensor.r_max)


def simulate_scan(truth: GridWorld, position: Point2, heading: float, sensor: SensorModel,
                  rng: SeededRng) -> List[float]:
    """One noisy range per beam, drawn from the mixture model around the true range"""
    if not truth.is_free_point(position):
        raise CollisionError(f"Scan pose ({position.x}, {position.y}) is inside an obstacle")
    return [
        _beam_sample(rng, ray_cast(truth, position, float(angle), sensor.r_max).range, sensor)
        for angle in sensor.beam_angles(heading)
    ]


def _beam_weight(belief: BeliefState, position: Point2, angle: float, z: float, sensor: SensorModel,
                 p_confident: float) -> float:
    """
    Hit-component responsibility of reading z against the range the confident
    part of the map predicts. Readings that run through a confidently occupied
    cell, or end inside confidently free space, are likely outliers.
    """
    world = belief.sensing_world(1.0 - p_confident)
    if not world.is_free_point(position):
        return 1.0
    expected = ray_cast(world, position, angle, sensor.r_max).range
    if abs(z - expected) <= belief.resolution:
        return 1.0
    if z < expected:
        depth = z + 0.5 * belief.resolution
        end = Point2(position.x + depth * math.cos(angle), position.y + depth * math.sin(angle))
        grid = belief.grid
        if not grid.contains(end) or belief.probability(grid.flat_index(*grid.cell_of(end))) > p_confident:
            return 1.0
    return hit_responsibility(min(z, sensor.r_max), expected, sensor)


def integrate_scan(belief: BeliefState, position: Point2, heading: float, ranges: List[float],
                   sensor: SensorModel, inv: InverseModelParams, observation_variance: float,
                   p_confident: Optional[float] = None) -> BeliefState:
    """
    Bayes update of the cells crossed by each beam. A reading measures the
    distance to the near face of the first obstacle, so the beam is walked half
    a cell past it and the last cell reached is the occupied one; max-range
    readings only free cells. With p_confident set, every update of a beam is
    weighted by its hit-component responsibility against the confident map.
    """
    occupancy: Dict[int, float] = {}
    observed = set()
    depth = 0.5 * belief.resolution
    for angle, z in zip(sensor.beam_angles(heading), ranges):
        if z <= 0:
            continue
        angle = float(angle)
        weight = 1.0 if p_confident is None else _beam_weight(belief, position, angle, z, sensor, p_confident)
        if weight < MIN_BEAM_WEIGHT:
            continue
        returned = z < sensor.r_max
        beam = ray_cast(belief.grid, position, angle, z + depth if returned else z)
        if not beam.cells:
            continue
        # a beam leaving the grid before z saw no surface inside it
        hit = returned and beam.range >= z
        for k, cell in enumerate(beam.cells):
            state = Observation.OCCUPIED if hit and k == len(beam.cells) - 1 else Observation.FREE
            m = occupancy.get(cell, belief.probability(cell))
            occupancy[cell] = occupancy_bayes_update(m, state, inv.p_occ, inv.p_free, weight)
            observed.add(cell)
    variance = {
        cell: bcm_fuse(belief.variance_at(cell), observation_variance)
        for cell in sorted(observed) if belief.variance_at(cell) > 0
    }
    return belief.with_updates(occupancy, variance)


def _online_params(config: RunConfig) -> Tuple[InverseModelParams, RunConfig]:
    inv = InverseModelParams(**{**config.inverse_model.model_dump(), "p_sat": config.mission.p_sat_online,
                                "epsilon": None})
    planner = config.planner.model_copy(update={"delta_ric": config.mission.delta_ric_online})
    return inv, config.model_copy(update={"inverse_model": inv, "planner": planner})


def build_estimator(config: RunConfig, inv: Optional[InverseModelParams] = None, kind: Optional[InfoKind] = None,
                    predictor=None, kernel: Optional[KernelSpec] = None,
                    warp: Optional[LogInputWarp] = None) -> InformationEstimator:
    return InformationEstimator(
        kind or config.planner.info_kind,
        config.sensor,
        inv or config.inverse_model,
        kernel=kernel or config.kernel.to_spec(),
        scheme=GaussHermiteScheme(config.quadrature.order),
        predictor=predictor,
        noise_variance=config.kernel.noise_variance,
        warp=warp,
    )


def check_world_resolution(world: GridWorld, config: RunConfig) -> GridWorld:
    expected = config.geometry.map_resolution
    if not math.isclose(world.resolution, expected, rel_tol=1e-9, abs_tol=1e-12):
        raise ConfigError(f"World resolution {world.resolution} m/cell does not match "
                          f"[geometry] map_resolution = {expected}")
    return world


def load_world(config: RunConfig) -> GridWorld:
    if not config.geometry.world_file:
        raise FileNotFoundError("No world file configured: pass --world or set [geometry] world_file")
    return check_world_resolution(WorldFileParser.parse_world(config.geometry.world_file), config)


def run_exploration(config: RunConfig, truth: Optional[GridWorld] = None) -> MissionOutcome:
    """Sense, update, plan, select and execute until the average map entropy is saturated"""
    truth = check_world_resolution(truth, config) if truth is not None else load_world(config)
    mission = config.mission
    inv, online = _online_params(config)
    rng = SeededRng(config.run.seed)
    plan_rng, sense_rng = rng.spawn(), rng.spawn()
    noise = MotionNoise.from_std(config.motion.q_std)
    estimator = build_estimator(online, inv)
    scanner = config.sensor.model_copy(update={"n_beams": mission.scan_beams})
    h_term = mission.h_sat_term

    geometry = config.geometry
    start = Point2(geometry.start_x, geometry.start_y)
    if not truth.is_free_point(start):
        raise CollisionError(f"Start ({start.x}, {start.y}) is not in free space")
    pose = PoseBelief.from_std(start.x, start.y, geometry.start_heading, config.motion.init_std)
    belief = BeliefState.uniform(truth.width, truth.height, truth.resolution, truth.origin,
                                 mission.initial_probability, mission.initial_variance)
    records: List[MissionStepRecord] = []
    distance = 0.0
    last_plan, last_path = None, None

    def scan(belief: BeliefState, pose: PoseBelief) -> BeliefState:
        ranges = simulate_scan(truth, pose.position, pose.heading, scanner, sense_rng)
        return integrate_scan(belief, pose.position, pose.heading, ranges, scanner, config.inverse_model,
                              mission.observation_variance, p_confident=mission.p_sat_term)

    entropy = average_map_entropy(belief)
    if entropy <= h_term:
        logger.info(f"Map already saturated (average entropy {entropy:.6g})")
        records.append(MissionStepRecord(step=0, x=start.x, y=start.y, heading=pose.heading,
                                         average_entropy=entropy, terminated=True))
        return _exploration_outcome(records, distance, entropy, True, belief, truth, None, None)

    belief = scan(belief, pose)
    root_only = 0
    terminated = False
    step = 0
    while True:
        entropy = average_map_entropy(belief)
        if entropy <= h_term:
            terminated = True
            if records:
                records[-1].terminated = True
            logger.info(f"Exploration finished after {step} steps: average entropy {entropy:.6g} <= {h_term:.6g}")
            break
        if step >= mission.max_steps:
            logger.info(f"Step limit {mission.max_steps} reached with average entropy {entropy:.6g}")
            break

        step += 1
        result = iig_tree(belief.planning_world, belief, online.planner, estimator, pose, noise, plan_rng)
        if len(result.tree) == 1:
            root_only += 1
            if root_only >= 2:
                logger.error(f"Planner returned a root-only tree twice in a row at step {step}")
                raise MissionAbortedError(
                    f"No reachable free space around ({pose.position.x}, {pose.position.y}) at step {step}"
                )
        else:
            root_only = 0
        path = select_path(result.tree, config.selection)
        last_plan, last_path = result, path

        moved = False
        for node_id in path.node_ids[1:]:
            node = result.tree.nodes[node_id]
            if not no_collision(pose.position, node.position, truth):
                logger.warning(f"Edge to node {node_id} is blocked in the real world, stopping the path")
                break
            distance += pose.position.distance_to(node.position)
            pose = propagate(pose, pose.position, node.position, noise)
            belief = scan(belief, pose)
            moved = True
        if not moved:
            # look again before replanning
            belief = scan(belief, pose)

        entropy = average_map_entropy(belief)
        records.append(MissionStepRecord(
            step=step, x=pose.position.x, y=pose.position.y, heading=pose.heading,
            average_entropy=entropy, planner_samples=result.samples, planner_nodes=len(result.tree),
            planner_converged=result.converged, final_mean=finite_or_none(result.final_mean),
            selected_path=list(path.node_ids), distance_traveled=distance,
        ))
        logger.info(f"Step {step}: {len(result.tree)} nodes, path of {path.length}, "
                    f"distance {distance:.3f} m, average entropy {entropy:.6g}")

    return _exploration_outcome(records, distance, entropy, terminated, belief, truth, last_plan, last_path)


def finite_or_none(value: Optional[float]) -> Optional[float]:
    return value if value is not None and math.isfinite(value) else None


def _exploration_outcome(records, distance, entropy, terminated, belief, truth, plan, path) -> MissionOutcome:
    auc = occupancy_auc(belief, truth) if truth.cells.any() and not truth.cells.all() else None
    summary = MissionSummary(scenario="exploration", steps=len([r for r in records if r.step > 0]),
                             total_distance=distance, final_entropy=entropy, terminated=terminated, auc=auc)
    return MissionOutcome(MissionLog(records=records, summary=summary), belief, plan, path)


def haversine_distance(a: Tuple[float, float], b: Tuple[float, float]) -> float:
    """Great-circle distance in metres between two (lat, lon) pairs in degrees"""
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = (math.sin(0.5 * (lat2 - lat1)) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin(0.5 * (lon2 - lon1)) ** 2)
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def latlon_to_metric(dataset: WssDataset) -> SignalSamples:
    """Positions in metres east/north of the south-west corner of the survey"""
    if len(dataset.records) < 2:
        raise DatasetError(f"Need at least 2 records for metric conversion, got {len(dataset.records)}")
    lat0 = min(r.latitude for r in dataset.records)
    lon0 = min(r.longitude for r in dataset.records)
    xy = np.array([
        (haversine_distance((lat0, lon0), (lat0, r.longitude)), haversine_distance((lat0, lon0), (r.latitude, lon0)))
        for r in dataset.records
    ]).T
    return SignalSamples(xy, np.array([r.rssi_dbm for r in dataset.records]))


def generate_friis_field(config: RunConfig, rng: SeededRng, n_points: Optional[int] = None) -> SignalSamples:
    """Log-distance path loss from one transmitter plus Gaussian shadowing"""
    cfg = config.monitoring
    n_points = n_points or 4 * cfg.n_training
    xy = np.vstack([
        rng.generator.uniform(0.0, cfg.extent_x, n_points),
        rng.generator.uniform(0.0, cfg.extent_y, n_points),
    ])
    d = np.hypot(xy[0] - cfg.transmitter_x, xy[1] - cfg.transmitter_y)
    loss = 10.0 * cfg.path_loss_exponent * np.log10(np.maximum(d, cfg.reference_distance) / cfg.reference_distance)
    values = cfg.tx_power_dbm - loss + rng.generator.normal(0.0, cfg.shadowing_std, n_points)
    return SignalSamples(xy, values)


def downsample(samples: SignalSamples, n: int) -> SignalSamples:
    """Keep n records at a uniform stride"""
    if samples.n <= n:
        return samples
    keep = np.floor(np.arange(n) * samples.n / n).astype(int)
    return SignalSamples(samples.inputs[:, keep], samples.values[keep])


# signal attenuation grows with the logarithm of distance
FIELD_WARP = LogInputWarp()


def fit_signal_field(samples: SignalSamples, noise_variance: float, rng: SeededRng) -> Tuple[KernelSpec, float]:
    """ARD squared-exponential hyperparameters on log-scaled inputs, plus the constant mean"""
    if samples.n < 2:
        raise DatasetError(f"Need at least 2 observations to fit the field, got {samples.n}")
    mean = float(np.mean(samples.values))
    data = TrainingSet(FIELD_WARP(samples.inputs), samples.values - mean, noise_variance)
    guess = KernelSpec(KernelFamily.SQUARED_EXPONENTIAL_ARD, (1.0, 1.0), max(float(np.var(data.targets)), 1e-3))
    try:
        spec = fit_hyperparameters(data, KernelFamily.SQUARED_EXPONENTIAL_ARD, [guess], rng=rng)
    except FitError as e:
        raise DatasetError(f"Could not fit the signal field: {e}") from e
    return spec, mean


def run_monitoring(config: RunConfig, dataset: Optional[WssDataset] = None) -> MissionOutcome:
    """Plan one IIG episode over a signal field and report the reconstruction RMSE"""
    cfg = config.monitoring
    rng = SeededRng(config.run.seed)
    field_rng, plan_rng, noise_rng = rng.spawn(), rng.spawn(), rng.spawn()

    if dataset is None and cfg.dataset_file:
        dataset = DataFileParser.parse_wss_csv(cfg.dataset_file)
    if dataset is not None:
        samples = latlon_to_metric(dataset)
        # one extra cell keeps the easternmost and northernmost records inside the grid
        extent_x = float(samples.inputs[0].max()) + cfg.resolution
        extent_y = float(samples.inputs[1].max()) + cfg.resolution
        start = Point2(samples.inputs[0, 0], samples.inputs[1, 0])
    else:
        samples = generate_friis_field(config, field_rng)
        extent_x, extent_y = cfg.extent_x, cfg.extent_y
        start = Point2(cfg.start_x, cfg.start_y)
    training = downsample(samples, cfg.n_training)
    noise_variance = max(cfg.measurement_noise_std ** 2, 1e-2)
    spec, mean = fit_signal_field(training, noise_variance, field_rng)

    nx = max(1, math.ceil(extent_x / cfg.resolution))
    ny = max(1, math.ceil(extent_y / cfg.resolution))
    grid = GridWorld(np.zeros((ny, nx), dtype=bool), cfg.resolution)
    if not grid.contains(start):
        raise DatasetError(f"Start ({start.x}, {start.y}) lies outside the {extent_x} x {extent_y} m field")
    truth_data = TrainingSet(FIELD_WARP(training.inputs), training.values - mean, noise_variance)
    truth = gp_predict(truth_data, FIELD_WARP(grid.cell_centers), spec)[0] + mean
    logger.info(f"Ground-truth field on {nx}x{ny} cells from {training.n} observations")

    # the planner scores cells with the fitted field prior, not the occupancy kernel
    belief = BeliefState.uniform(nx, ny, cfg.resolution, variance=spec.signal_variance)
    predictor = RadiusQueryPredictor(cfg.sensing_radius, noise_variance)
    estimator = build_estimator(config, kind=cfg.info_kind, predictor=predictor, kernel=spec, warp=FIELD_WARP)
    pose = PoseBelief.from_std(start.x, start.y, config.geometry.start_heading, config.motion.init_std)
    result = iig_tree(grid, belief, config.planner, estimator, pose, MotionNoise.from_std(config.motion.q_std),
                      plan_rng)
    path = select_path(result.tree, config.selection)

    cells: List[int] = []
    for node_id in path.node_ids:
        cells.extend(grid.center_index.near_indices(result.tree.nodes[node_id].position, cfg.sensing_radius))
    measured = truth[cells] + noise_rng.generator.normal(0.0, cfg.measurement_noise_std, len(cells))
    rmse = _reconstruction_rmse(grid, truth, cells, measured, spec, noise_variance)

    distance = path.cost
    end = result.tree.nodes[path.leaf_id]
    record = MissionStepRecord(
        step=1, x=end.position.x, y=end.position.y, heading=end.pose_belief.heading,
        average_entropy=average_map_entropy(belief), planner_samples=result.samples,
        planner_nodes=len(result.tree), planner_converged=result.converged,
        final_mean=finite_or_none(result.final_mean), selected_path=list(path.node_ids),
        distance_traveled=distance,
    )
    summary = MissionSummary(scenario="monitoring", steps=1, total_distance=distance, rmse=rmse,
                             total_info=total_tree_information(result.tree), measurements=len(cells))
    logger.info(f"Monitoring: {len(cells)} measurements along {path.length} nodes, RMSE {rmse:.4f} dBm")
    return MissionOutcome(MissionLog(records=[record], summary=summary), belief, result, path)


def _reconstruction_rmse(grid: GridWorld, truth: np.ndarray, cells: List[int], measured: np.ndarray,
                         spec: KernelSpec, noise_variance: float) -> float:
    if not cells:
        return float(np.sqrt(np.mean((truth - np.mean(truth)) ** 2)))
    mean = float(np.mean(measured))
    data = TrainingSet(FIELD_WARP(grid.cell_centers[:, cells]), measured - mean, noise_variance)
    estimate = gp_predict(data, FIELD_WARP(grid.cell_centers), spec)[0] + mean
    return float(np.sqrt(np.mean((estimate - truth) ** 2)))
