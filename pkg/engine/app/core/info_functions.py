import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Protocol, Tuple

import numpy as np

from ..models import InfoKind, InverseModelParams, SensorModel
from .belief import (BeliefOverlay, BeliefState, negative_entropy, bcm_fuse, beam_likelihood_grid,
                     cell_entropy, predict_cell)
from .geometry import Point2, ray_cast
from .gp import (GaussHermiteScheme, KernelSpec, LogInputWarp, TrainingSet, expected_kernel_matrix, kernel_matrix,
                 predictive_variances)
from .pose import PoseBelief

logger = logging.getLogger(__name__)

# GP predictive variances are floored here before fusion
VARIANCE_FLOOR = 1e-12
# spacing of the free training points sampled along a predicted beam (m)
FREE_SAMPLE_SPACING = 1.0


@dataclass
class InfoResult:
    info: float
    overlay: BeliefOverlay
    upper_bound: Optional[float] = None


def _start(i_near: Optional[float], overlay: Optional[BeliefOverlay]) -> Tuple[float, BeliefOverlay]:
    info = 0.0 if i_near is None else float(i_near)
    return info, (overlay.child() if overlay is not None else BeliefOverlay())


def information_miub(position: Point2, heading: float, belief: BeliefState,
                     overlay: Optional[BeliefOverlay], i_near: Optional[float],
                     sensor: SensorModel, inv: InverseModelParams) -> InfoResult:
    """Total entropy of the unsaturated cells in the perception field"""
    info, out = _start(i_near, overlay)
    h_sat = inv.h_sat
    world = belief.sensing_world(inv.p_occ)
    for angle in sensor.beam_angles(heading):
        beam = ray_cast(world, position, float(angle), sensor.r_max)
        for cell in beam.perception_cells:
            m = belief.probability(cell, out)
            h = cell_entropy(m)
            if h <= h_sat:
                continue
            info += h
            out.occupancy[cell] = predict_cell(m, inv)
    return InfoResult(info, out)


def information_mi(position: Point2, heading: float, belief: BeliefState,
                   overlay: Optional[BeliefOverlay], i_near: Optional[float],
                   sensor: SensorModel, inv: InverseModelParams,
                   with_upper_bound: bool = False) -> InfoResult:
    """
    Mutual information between the map and a predicted scan. The conditional
    entropy of each unsaturated cell is integrated over the range measurement
    with step 1/s_z; the marginal p(z) comes from the forward model over the
    beam's cells using the incoming map.
    """
    info, out = _start(i_near, overlay)
    upper = info
    h_sat = inv.h_sat
    step = 1.0 / sensor.s_z
    world = belief.sensing_world(inv.p_occ)

    for angle in sensor.beam_angles(heading):
        beam = ray_cast(world, position, float(angle), sensor.r_max)
        cells = beam.perception_cells
        if not cells:
            continue
        n_steps = int(math.floor(beam.range * sensor.s_z + 1e-9))
        z = step * np.arange(1, n_steps + 1)
        p_z = _marginal_measurement(z, belief, overlay, cells, beam.perception_distances, sensor)

        gain = 0.0
        for cell in cells:
            m = belief.probability(cell, out)
            h = cell_entropy(m)
            if h <= h_sat:
                continue
            upper += h
            h_bar = 0.0
            for k in range(n_steps):
                m = predict_cell(m, inv)
                h_bar += p_z[k] * negative_entropy(m)
            if n_steps == 0:
                # still predict once so later beams do not count this cell again
                m = predict_cell(m, inv)
            out.occupancy[cell] = m
            gain += h + h_bar * step
        info += max(gain, 0.0)

    return InfoResult(info, out, upper if with_upper_bound else None)


def _marginal_measurement(z: np.ndarray, belief: BeliefState, overlay: Optional[BeliefOverlay],
                          cells: List[int], distances: List[float], sensor: SensorModel) -> np.ndarray:
    """p(z) = p(z | all free) prod(1 - m_j) + sum_j p(z | hit at j) m_j prod_{l<j}(1 - m_l)"""
    if z.size == 0:
        return z
    m = np.array([belief.probability(c, overlay) for c in cells])
    free_before = np.concatenate([[1.0], np.cumprod(1.0 - m)])
    p_miss = beam_likelihood_grid(z, np.array([sensor.r_max]), sensor)[:, 0] * free_before[-1]
    p_hits = beam_likelihood_grid(z, np.asarray(distances), sensor) @ (m * free_before[:-1])
    return p_miss + p_hits


def variance_reduction(sigma: float, v: float) -> Tuple[float, float]:
    """BCM-fused variance and the log-variance reduction it brings"""
    fused = bcm_fuse(sigma, v)
    return fused, math.log(sigma) - math.log(fused)


class MeasurementPredictor(Protocol):
    def predict(self, position: Point2, heading: float, belief: BeliefState) -> Tuple[TrainingSet, List[int]]:
        """Training set predicted from the pose and the sub-map cells it informs"""


class RangeScanPredictor:
    """Ray-cast range scan: hit points labelled +1, free points along each beam -1"""

    def __init__(self, sensor: SensorModel, p_occ: float, noise_variance: float,
                 spacing: float = FREE_SAMPLE_SPACING):
        self.sensor = sensor
        self.p_occ = p_occ
        self.noise_variance = noise_variance
        self.spacing = spacing

    def predict(self, position: Point2, heading: float, belief: BeliefState) -> Tuple[TrainingSet, List[int]]:
        world = belief.sensing_world(self.p_occ)
        points, labels = [], []
        for angle in self.sensor.beam_angles(heading):
            beam = ray_cast(world, position, float(angle), self.sensor.r_max)
            c, s = math.cos(angle), math.sin(angle)
            t = self.spacing
            while t < beam.range:
                points.append((position.x + t * c, position.y + t * s))
                labels.append(-1.0)
                t += self.spacing
            if beam.hit_cell is not None:
                points.append((position.x + beam.range * c, position.y + beam.range * s))
                labels.append(1.0)

        inputs = np.array(points, dtype=float).T.reshape(2, -1)
        data = TrainingSet(inputs, np.array(labels), self.noise_variance)
        index = belief.grid.center_index
        sub_map = list(dict.fromkeys(index.nearest_index(Point2(x, y)) for x, y in points))
        return data, sub_map


class RadiusQueryPredictor:
    """Point sensor reading every surface cell within a radius; the sub-map is the training set"""

    def __init__(self, radius: float, noise_variance: float):
        if not radius > 0:
            raise ValueError(f"Sensing radius must be positive, got {radius}")
        self.radius = radius
        self.noise_variance = noise_variance

    def predict(self, position: Point2, heading: float, belief: BeliefState) -> Tuple[TrainingSet, List[int]]:
        cells = belief.grid.center_index.near_indices(position, self.radius)
        inputs = belief.grid.cell_centers[:, cells]
        return TrainingSet(inputs, np.zeros(len(cells)), self.noise_variance), cells


def _fuse_sub_map(info: float, out: BeliefOverlay, belief: BeliefState, sub_map: List[int],
                  variances: np.ndarray) -> float:
    for cell, v in zip(sub_map, variances):
        sigma = belief.variance_at(cell, out)
        if sigma <= 0:
            continue
        fused, gain = variance_reduction(sigma, max(float(v), VARIANCE_FLOOR))
        out.variance[cell] = fused
        info += gain
    return info


def _kernel_inputs(data: TrainingSet, belief: BeliefState, sub_map: List[int],
                   warp: Optional[LogInputWarp]) -> Tuple[TrainingSet, np.ndarray]:
    targets = belief.grid.cell_centers[:, sub_map]
    if warp is None:
        return data, targets
    return TrainingSet(warp(data.inputs), data.targets, data.noise_variance), warp(targets)


def information_gpvr(position: Point2, heading: float, belief: BeliefState,
                     overlay: Optional[BeliefOverlay], i_near: Optional[float],
                     kernel: KernelSpec, predictor: MeasurementPredictor,
                     warp: Optional[LogInputWarp] = None) -> InfoResult:
    """GP variance reduction of the sub-map informed by the predicted measurements"""
    info, out = _start(i_near, overlay)
    data, sub_map = predictor.predict(position, heading, belief)
    if data.n == 0 or not sub_map:
        return InfoResult(info, out)
    data, targets = _kernel_inputs(data, belief, sub_map, warp)
    cross = kernel_matrix(kernel, data.inputs, targets)
    prior = np.diag(kernel_matrix(kernel, targets, targets)).copy()
    variances = predictive_variances(data, kernel, cross, prior)
    return InfoResult(_fuse_sub_map(info, out, belief, sub_map, variances), out)


def information_ugpvr(pose_belief: PoseBelief, belief: BeliefState,
                      overlay: Optional[BeliefOverlay], i_near: Optional[float],
                      kernel: KernelSpec, scheme: GaussHermiteScheme,
                      predictor: MeasurementPredictor, warp: Optional[LogInputWarp] = None,
                      average_all: bool = False) -> InfoResult:
    """
    GPVR with kernels averaged over the positional uncertainty of the pose.
    By default only the cross-covariances are averaged: the training points move
    rigidly with the pose, so K(X, X) and the prior variances are unchanged.
    average_all also averages K(X, X) and the prior variances of the sub-map;
    that form shrinks the prior and can report more information than GPVR.
    """
    info, out = _start(i_near, overlay)
    data, sub_map = predictor.predict(pose_belief.position, pose_belief.heading, belief)
    if data.n == 0 or not sub_map:
        return InfoResult(info, out)
    data, targets = _kernel_inputs(data, belief, sub_map, warp)
    covariance = pose_belief.position_covariance
    if warp is not None:
        covariance = warp.covariance(pose_belief.position.as_array(), covariance)
    cross = expected_kernel_matrix(kernel, data.inputs, covariance, targets, scheme)
    if average_all:
        gram = expected_kernel_matrix(kernel, data.inputs, covariance, data.inputs, scheme)
        prior = np.array([
            expected_kernel_matrix(kernel, targets[:, j], covariance, targets[:, j], scheme)[0, 0]
            for j in range(targets.shape[1])
        ])
        variances = predictive_variances(data, kernel, cross, prior, gram=gram)
    else:
        prior = np.diag(kernel_matrix(kernel, targets, targets)).copy()
        variances = predictive_variances(data, kernel, cross, prior)
    return InfoResult(_fuse_sub_map(info, out, belief, sub_map, variances), out)


class InformationEstimator:
    """Scores a candidate pose with the configured information function"""

    def __init__(self, kind: InfoKind, sensor: SensorModel, inv: InverseModelParams,
                 kernel: Optional[KernelSpec] = None, scheme: Optional[GaussHermiteScheme] = None,
                 predictor: Optional[MeasurementPredictor] = None, noise_variance: float = 0.01,
                 warp: Optional[LogInputWarp] = None):
        self.kind = InfoKind(kind)
        self.sensor = sensor
        self.inv = inv
        self.kernel = kernel
        self.scheme = scheme or GaussHermiteScheme()
        self.warp = warp
        if self.kind in (InfoKind.GPVR, InfoKind.UGPVR):
            if kernel is None:
                raise ValueError(f"{self.kind.value} needs a kernel")
            self.predictor = predictor or RangeScanPredictor(sensor, inv.p_occ, noise_variance)
        else:
            self.predictor = predictor

    def evaluate(self, pose: PoseBelief, belief: BeliefState, overlay: Optional[BeliefOverlay],
                 i_near: Optional[float]) -> InfoResult:
        if self.kind == InfoKind.MI:
            return information_mi(pose.position, pose.heading, belief, overlay, i_near, self.sensor, self.inv)
        if self.kind == InfoKind.MIUB:
            return information_miub(pose.position, pose.heading, belief, overlay, i_near, self.sensor, self.inv)
        if self.kind == InfoKind.GPVR:
            return information_gpvr(pose.position, pose.heading, belief, overlay, i_near,
                                    self.kernel, self.predictor, self.warp)
        return information_ugpvr(pose, belief, overlay, i_near, self.kernel, self.scheme, self.predictor, self.warp)
