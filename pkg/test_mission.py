"""
Missions: simulated scans, map integration, exploration steps and signal
field monitoring.
"""
import math

import numpy as np
import pytest

from app.core.belief import BeliefState, bcm_fuse
from app.core.exceptions import CollisionError, ConfigError, DatasetError
from app.core.geometry import Point2, SeededRng, no_collision
from app.core.gp import KernelFamily, KernelSpec
from app.core.info_functions import RadiusQueryPredictor
from app.core.mission import (FIELD_WARP, SignalSamples, build_estimator, downsample, generate_friis_field,
                              haversine_distance, integrate_scan, latlon_to_metric, run_exploration, run_monitoring,
                              simulate_scan)
from app.models import InfoKind, InverseModelParams, RunConfig, SensorModel, WssDataset, WssRecord

INV = InverseModelParams()
EXACT_SENSOR = SensorModel(z_hit=1.0, z_short=0.0, z_max=0.0, z_rand=0.0, sigma_hit=0.01, r_max=10.0)


def _exploration_config(**mission) -> RunConfig:
    return RunConfig.model_validate({
        "geometry": {"start_x": 5.0, "start_y": 5.0},
        "planner": {"max_samples": 300},
        "mission": {"scan_beams": 36, **mission},
    })


def _monitoring_config(seed: int = 0) -> RunConfig:
    return RunConfig.model_validate({
        "run": {"seed": seed},
        "planner": {"max_samples": 60},
        "monitoring": {
            "extent_x": 20.0, "extent_y": 20.0, "resolution": 2.5, "sensing_radius": 3.0,
            "transmitter_x": 2.0, "transmitter_y": 2.0, "n_training": 30, "start_x": 10.0, "start_y": 10.0,
        },
    })


def test_haversine_distance():
    assert haversine_distance((52.0, 4.0), (52.0, 4.0)) == 0.0
    assert haversine_distance((0.0, 0.0), (0.0, 1.0)) == pytest.approx(111_194.93, abs=1.0)
    a, b = (51.98, 4.37), (52.01, 4.35)
    assert haversine_distance(a, b) == pytest.approx(haversine_distance(b, a))


def test_latlon_to_metric():
    dataset = WssDataset(records=[
        WssRecord(latitude=0.0, longitude=0.001, rssi_dbm=-40.0),
        WssRecord(latitude=0.001, longitude=0.0, rssi_dbm=-55.0),
    ])
    samples = latlon_to_metric(dataset)
    metre = haversine_distance((0.0, 0.0), (0.0, 0.001))
    np.testing.assert_allclose(samples.inputs, [[metre, 0.0], [0.0, metre]], atol=1e-6)
    np.testing.assert_array_equal(samples.values, [-40.0, -55.0])

    with pytest.raises(DatasetError):
        latlon_to_metric(WssDataset(records=dataset.records[:1]))


def test_friis_field_without_shadowing():
    config = RunConfig.model_validate({"monitoring": {"shadowing_std": 0.0}})
    cfg = config.monitoring
    samples = generate_friis_field(config, SeededRng(1), n_points=200)
    assert samples.inputs.shape == (2, 200)
    d = np.hypot(samples.inputs[0] - cfg.transmitter_x, samples.inputs[1] - cfg.transmitter_y)
    expected = cfg.tx_power_dbm - 10 * cfg.path_loss_exponent * np.log10(np.maximum(d, 1.0))
    np.testing.assert_allclose(samples.values, expected)
    assert samples.values.max() <= cfg.tx_power_dbm


def test_downsample_uses_a_uniform_stride():
    samples = SignalSamples(np.vstack([np.arange(100.0), np.zeros(100)]), np.arange(100.0))
    kept = downsample(samples, 10)
    np.testing.assert_array_equal(kept.values, np.arange(0, 100, 10))
    assert downsample(samples, 500) is samples


def test_simulate_scan_follows_the_true_ranges(open_world):
    ranges = simulate_scan(open_world, Point2(5.0, 5.0), 0.0, EXACT_SENSOR.model_copy(update={"n_beams": 4}),
                           SeededRng(0))
    # walls start 4.8 m away in every axis direction
    np.testing.assert_allclose(ranges, [4.8] * 4, atol=0.06)


def test_simulated_ranges_stay_in_the_sensor_domain(open_world):
    sensor = SensorModel(n_beams=180)
    ranges = simulate_scan(open_world, Point2(3.0, 7.0), 0.3, sensor, SeededRng(2))
    assert len(ranges) == 180
    assert all(0.0 <= z <= sensor.r_max for z in ranges)


def test_simulate_scan_inside_obstacle(open_world):
    with pytest.raises(CollisionError):
        simulate_scan(open_world, Point2(0.1, 5.0), 0.0, SensorModel(), SeededRng(0))


def test_integrate_scan_marks_the_return_cell_occupied():
    belief = BeliefState.uniform(10, 3, 1.0)
    sensor = SensorModel(n_beams=1)
    # the face of cell 13 is 2.5 m away; readings fall on either side of it
    for z in (2.5, 2.45, 2.56):
        updated = integrate_scan(belief, Point2(0.5, 1.5), 0.0, [z], sensor, INV, 0.1)
        # row 1 holds flat indices 10..19
        for cell in (10, 11, 12):
            assert updated.probability(cell) == pytest.approx(INV.p_free)
            assert updated.variance_at(cell) == pytest.approx(bcm_fuse(1.0, 0.1))
        assert updated.probability(13) == pytest.approx(INV.p_occ)
        assert updated.probability(14) == 0.5
        assert updated.variance_at(14) == 1.0
    assert belief.probability(13) == 0.5


def test_max_range_reading_only_frees_cells():
    belief = BeliefState.uniform(10, 3, 1.0)
    sensor = SensorModel(n_beams=1, r_max=3.0)
    updated = integrate_scan(belief, Point2(0.5, 1.5), 0.0, [3.0], sensor, INV, 0.1)
    assert all(updated.probability(c) == pytest.approx(INV.p_free) for c in (10, 11, 12, 13))


def _known_wall() -> BeliefState:
    """Corridor row with confidently free cells 10..12 and a confidently occupied cell 13"""
    return BeliefState.uniform(10, 3, 1.0).with_updates({10: 0.01, 11: 0.01, 12: 0.01, 13: 0.99})


def test_reading_through_a_known_wall_is_ignored():
    belief = _known_wall()
    sensor = SensorModel(n_beams=1)
    updated = integrate_scan(belief, Point2(0.5, 1.5), 0.0, [3.9], sensor, INV, 0.1, p_confident=0.1)
    np.testing.assert_array_equal(updated.occupancy, belief.occupancy)
    np.testing.assert_array_equal(updated.variance, belief.variance)

    trusting = integrate_scan(belief, Point2(0.5, 1.5), 0.0, [3.9], sensor, INV, 0.1)
    assert trusting.probability(13) < belief.probability(13)
    assert trusting.probability(14) == pytest.approx(INV.p_occ)


def test_short_reading_in_known_free_space_is_ignored():
    belief = _known_wall()
    sensor = SensorModel(n_beams=1)
    updated = integrate_scan(belief, Point2(0.5, 1.5), 0.0, [0.8], sensor, INV, 0.1, p_confident=0.1)
    np.testing.assert_array_equal(updated.occupancy, belief.occupancy)


def test_reading_that_agrees_with_the_map_is_integrated():
    belief = _known_wall()
    sensor = SensorModel(n_beams=1)
    updated = integrate_scan(belief, Point2(0.5, 1.5), 0.0, [2.52], sensor, INV, 0.1, p_confident=0.1)
    assert updated.probability(13) > belief.probability(13)
    assert all(updated.probability(c) < 0.01 for c in (10, 11, 12))


def test_new_surface_in_unknown_space_is_integrated():
    belief = BeliefState.uniform(10, 3, 1.0).with_updates({10: 0.01, 11: 0.01})
    sensor = SensorModel(n_beams=1)
    updated = integrate_scan(belief, Point2(0.5, 1.5), 0.0, [2.5], sensor, INV, 0.1, p_confident=0.1)
    assert updated.probability(13) == pytest.approx(INV.p_occ)
    assert updated.probability(12) == pytest.approx(INV.p_free)


def test_exploration_on_a_saturated_map_stops_at_step_zero(open_world):
    config = _exploration_config(initial_probability=0.02)
    outcome = run_exploration(config, truth=open_world)
    (record,) = outcome.log.records
    assert record.step == 0
    assert record.terminated
    assert outcome.log.summary.steps == 0
    assert outcome.log.summary.total_distance == 0.0
    assert outcome.planning is None


def test_exploration_start_in_obstacle(open_world):
    config = RunConfig.model_validate({"geometry": {"start_x": 0.1, "start_y": 0.1}})
    with pytest.raises(CollisionError):
        run_exploration(config, truth=open_world)


def test_exploration_rejects_a_world_at_another_resolution(open_world):
    config = RunConfig.model_validate({"geometry": {"start_x": 5.0, "start_y": 5.0, "map_resolution": 0.5}})
    with pytest.raises(ConfigError, match="map_resolution"):
        run_exploration(config, truth=open_world)


def test_single_exploration_step(open_world):
    outcome = run_exploration(_exploration_config(max_steps=1), truth=open_world)
    (record,) = outcome.log.records
    assert record.step == 1
    assert record.selected_path[0] == 0
    assert outcome.log.summary.steps == 1
    assert outcome.log.summary.total_distance == record.distance_traveled

    tree = outcome.planning.tree
    executed = 0.0
    position = Point2(5.0, 5.0)
    for node_id in outcome.path.node_ids[1:]:
        node = tree.nodes[node_id]
        if not no_collision(position, node.position, open_world):
            break
        executed += position.distance_to(node.position)
        position = node.position
    assert record.distance_traveled == pytest.approx(executed)
    assert (record.x, record.y) == (position.x, position.y)
    assert open_world.is_free_point(position)
    assert record.average_entropy < math.log(2.0)


def test_exploration_is_deterministic(open_world):
    config = _exploration_config(max_steps=2)
    first = run_exploration(config, truth=open_world)
    second = run_exploration(config, truth=open_world)
    assert first.log == second.log
    np.testing.assert_array_equal(first.belief.occupancy, second.belief.occupancy)


def test_monitoring_run():
    outcome = run_monitoring(_monitoring_config())
    summary = outcome.log.summary
    assert summary.scenario == "monitoring"
    assert summary.measurements > 0
    assert math.isfinite(summary.rmse) and summary.rmse >= 0
    assert summary.total_info >= 0
    assert outcome.path.node_ids[0] == 0
    assert summary.total_distance == pytest.approx(outcome.path.cost)


def test_monitoring_is_deterministic():
    assert run_monitoring(_monitoring_config(3)).log == run_monitoring(_monitoring_config(3)).log


def test_monitoring_plans_with_the_fitted_field_kernel():
    config = _monitoring_config()
    spec = KernelSpec(KernelFamily.SQUARED_EXPONENTIAL_ARD, (0.8, 1.3), 12.0)
    estimator = build_estimator(config, kind=InfoKind.GPVR, predictor=RadiusQueryPredictor(3.0, 0.25),
                                kernel=spec, warp=FIELD_WARP)
    assert estimator.kernel is spec
    assert estimator.warp is FIELD_WARP
    assert build_estimator(config).kernel == config.kernel.to_spec()

    outcome = run_monitoring(config)
    variances = {float(v) for v in outcome.belief.variance.ravel()}
    # the belief starts at the fitted signal variance, not the occupancy default
    assert variances != {config.mission.initial_variance}


def test_monitoring_from_a_survey():
    rng = np.random.default_rng(0)
    records = [
        WssRecord(latitude=lat, longitude=lon, rssi_dbm=-40.0 - 1.0e5 * math.hypot(lat, lon))
        for lat, lon in rng.uniform(0.0, 1.5e-4, size=(40, 2))
    ]
    outcome = run_monitoring(_monitoring_config(), dataset=WssDataset(records=records))
    first = latlon_to_metric(WssDataset(records=records))
    root = outcome.planning.tree.root.position
    assert (root.x, root.y) == pytest.approx((first.inputs[0, 0], first.inputs[1, 0]))
    assert math.isfinite(outcome.log.summary.rmse)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(10))
def test_exploration_of_the_desk_world(desk_world, seed):
    config = RunConfig.model_validate({"run": {"seed": seed}})
    outcome = run_exploration(config, truth=desk_world)
    summary = outcome.log.summary
    assert summary.terminated
    assert summary.final_entropy <= config.mission.h_sat_term
    assert summary.auc >= 0.9
    assert summary.total_distance > 0


@pytest.mark.slow
def test_wider_sensing_radius_improves_monitoring():
    rmse, info = [], []
    for radius in (5.0, 10.0, 20.0):
        outcomes = [
            run_monitoring(RunConfig.model_validate({
                "run": {"seed": seed},
                "planner": {"max_samples": 300},
                "monitoring": {"info_kind": "gpvr", "sensing_radius": radius},
            }))
            for seed in range(20)
        ]
        rmse.append(np.mean([o.log.summary.rmse for o in outcomes]))
        info.append(np.mean([o.log.summary.total_info for o in outcomes]))
    assert rmse[0] >= rmse[1] >= rmse[2]
    assert info[0] <= info[1] <= info[2]
