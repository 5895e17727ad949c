import logging
import math
from collections import ChainMap
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Dict, Optional, Set, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import norm

from ..models import InverseModelParams, SensorModel
from .geometry import GridWorld, Point2

logger = logging.getLogger(__name__)

# occupancy probabilities never leave [EPSILON_M, 1 - EPSILON_M]
EPSILON_M = 1e-4
# overlay chains longer than this are collapsed into one layer
MAX_OVERLAY_DEPTH = 16


class Observation(str, Enum):
    FREE = "free"
    OCCUPIED = "occupied"


def cell_entropy(p: float) -> float:
    """Bernoulli entropy in nats"""
    if not 0.0 < p < 1.0:
        raise ValueError(f"Probability must lie in (0, 1), got {p}")
    return -(p * math.log(p) + (1.0 - p) * math.log(1.0 - p))


def entropy_array(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ValueError("Probabilities must lie in (0, 1)")
    return -(p * np.log(p) + (1.0 - p) * np.log1p(-p))


def negative_entropy(p: float) -> float:
    return p * math.log(p) + (1.0 - p) * math.log(1.0 - p)


@dataclass
class BeliefOverlay:
    """
    Sparse predicted values layered over a BeliefState.
    Each planner node owns one layer; lookups fall through to the parent layers
    and finally to the base grids, which are never written.
    """
    occupancy: ChainMap = field(default_factory=ChainMap)
    variance: ChainMap = field(default_factory=ChainMap)

    def child(self) -> "BeliefOverlay":
        occupancy, variance = self.occupancy, self.variance
        if len(occupancy.maps) >= MAX_OVERLAY_DEPTH:
            # flatten long chains so lookups stay O(MAX_OVERLAY_DEPTH)
            occupancy, variance = ChainMap(dict(occupancy)), ChainMap(dict(variance))
        return BeliefOverlay(occupancy.new_child(), variance.new_child())

    @property
    def local_cells(self) -> Set[int]:
        """Cells written in this layer only"""
        return set(self.occupancy.maps[0]) | set(self.variance.maps[0])

    def __len__(self) -> int:
        return len(set(self.occupancy) | set(self.variance))


@dataclass(frozen=True)
class BeliefState:
    """Occupancy-probability and variance grids, indexed [iy, ix] like GridWorld.cells"""
    occupancy: np.ndarray
    variance: np.ndarray
    resolution: float
    origin: Point2 = field(default_factory=lambda: Point2(0.0, 0.0))

    def __post_init__(self):
        occupancy = np.clip(np.asarray(self.occupancy, dtype=float), EPSILON_M, 1.0 - EPSILON_M)
        variance = np.asarray(self.variance, dtype=float)
        if occupancy.ndim != 2 or occupancy.size == 0:
            raise ValueError("Belief needs a non-empty 2D occupancy grid")
        if variance.shape != occupancy.shape:
            raise ValueError(f"Variance grid {variance.shape} does not match occupancy {occupancy.shape}")
        if np.any(variance < 0):
            raise ValueError("Variances must be nonnegative")
        occupancy.setflags(write=False)
        variance.setflags(write=False)
        object.__setattr__(self, "occupancy", occupancy)
        object.__setattr__(self, "variance", variance)

    @classmethod
    def uniform(cls, width: int, height: int, resolution: float, origin: Optional[Point2] = None,
                probability: float = 0.5, variance: float = 1.0) -> "BeliefState":
        return cls(
            occupancy=np.full((height, width), probability),
            variance=np.full((height, width), variance),
            resolution=resolution,
            origin=origin or Point2(0.0, 0.0),
        )

    @classmethod
    def from_truth(cls, world: GridWorld, p_occ: float, p_free: float, variance: float = 1.0) -> "BeliefState":
        """Map prior built from ground truth, used by the offline planner runs"""
        return cls(
            occupancy=np.where(world.cells, p_occ, p_free),
            variance=np.full(world.cells.shape, variance),
            resolution=world.resolution,
            origin=world.origin,
        )

    @property
    def shape(self):
        return self.occupancy.shape

    @property
    def n_cells(self) -> int:
        return self.occupancy.size

    @cached_property
    def grid(self) -> GridWorld:
        """All-free grid with the belief's geometry (cell centers, index)"""
        return GridWorld(np.zeros(self.shape, dtype=bool), self.resolution, self.origin)

    @cached_property
    def planning_world(self) -> GridWorld:
        """Believed-free cells (m < 0.5) are traversable"""
        return GridWorld(self.occupancy >= 0.5, self.resolution, self.origin)

    @cached_property
    def _sensing_worlds(self) -> Dict[float, GridWorld]:
        return {}

    def sensing_world(self, p_occ: float) -> GridWorld:
        """Cells at or above p_occ stop predicted beams"""
        if p_occ not in self._sensing_worlds:
            self._sensing_worlds[p_occ] = GridWorld(self.occupancy >= p_occ, self.resolution, self.origin)
        return self._sensing_worlds[p_occ]

    def probability(self, index: int, overlay: Optional[BeliefOverlay] = None) -> float:
        if overlay is not None and index in overlay.occupancy:
            return overlay.occupancy[index]
        return float(self.occupancy.flat[index])

    def variance_at(self, index: int, overlay: Optional[BeliefOverlay] = None) -> float:
        if overlay is not None and index in overlay.variance:
            return overlay.variance[index]
        return float(self.variance.flat[index])

    def with_updates(self, occupancy: Optional[Dict[int, float]] = None,
                     variance: Optional[Dict[int, float]] = None) -> "BeliefState":
        occ = self.occupancy.copy()
        var = self.variance.copy()
        for index, value in (occupancy or {}).items():
            occ.flat[index] = value
        for index, value in (variance or {}).items():
            var.flat[index] = value
        return BeliefState(occ, var, self.resolution, self.origin)


def average_map_entropy(belief: BeliefState, overlay: Optional[BeliefOverlay] = None) -> float:
    probabilities = belief.occupancy.ravel().copy()
    if overlay is not None:
        for index, value in overlay.occupancy.items():
            probabilities[index] = value
    return float(np.mean(entropy_array(probabilities)))


def beam_components(z: np.ndarray, z_hat: np.ndarray, model: SensorModel) -> Tuple[np.ndarray, ...]:
    """Weighted hit, short, max and random densities for every (z, z_hat) pair"""
    r_max = model.r_max
    z = np.asarray(z, dtype=float).reshape(-1, 1)
    z_hat = np.clip(np.asarray(z_hat, dtype=float).reshape(1, -1), 0.0, r_max)

    sigma = model.sigma_hit
    mass = norm.cdf((r_max - z_hat) / sigma) - norm.cdf(-z_hat / sigma)
    p_hit = norm.pdf(z, loc=z_hat, scale=sigma) / mass

    lam = model.lambda_short
    with np.errstate(divide="ignore", invalid="ignore"):
        p_short = np.where(
            (z_hat > 0) & (z <= z_hat),
            lam * np.exp(-lam * z) / -np.expm1(-lam * z_hat),
            0.0,
        )

    # max-range point mass spread over the last integration bin
    bin_width = min(1.0 / model.s_z, r_max)
    p_max = np.where(z >= r_max - bin_width, 1.0 / bin_width, 0.0)
    p_rand = np.full(np.broadcast(z, z_hat).shape, 1.0 / r_max)

    return model.z_hit * p_hit, model.z_short * p_short, model.z_max * p_max, model.z_rand * p_rand


def beam_likelihood_grid(z: np.ndarray, z_hat: np.ndarray, model: SensorModel) -> np.ndarray:
    """Mixture densities for every (z, z_hat) pair, shape (len(z), len(z_hat))"""
    hit, short, max_range, rand = beam_components(z, z_hat, model)
    return hit + short + max_range + rand


def beam_likelihood(z: float, z_hat: float, model: SensorModel) -> float:
    """Mixture density p(z | z_hat) on [0, r_max]"""
    if not 0.0 <= z <= model.r_max:
        raise ValueError(f"Measurement {z} outside [0, {model.r_max}]")
    return float(beam_likelihood_grid(np.array([z]), np.array([z_hat]), model)[0, 0])


def hit_responsibility(z: float, z_hat: float, model: SensorModel) -> float:
    """Posterior probability that reading z came from the hit component"""
    hit, short, max_range, rand = (float(c[0, 0]) for c in beam_components(np.array([z]), np.array([z_hat]), model))
    total = hit + short + max_range + rand
    return hit / total if total > 0 else 0.0


def inverse_update(m: float, observation: Observation, params: InverseModelParams) -> float:
    if Observation(observation) == Observation.FREE:
        return max(params.p_sat - params.epsilon, params.b_free * m)
    return min(1.0 - params.p_sat + params.epsilon, params.b_occ * m)


def predict_cell(m: float, params: InverseModelParams) -> float:
    """Inverse-model prediction; m <= 0.5 is treated as free"""
    return inverse_update(m, Observation.FREE if m <= 0.5 else Observation.OCCUPIED, params)


def bcm_fuse(sigma_a: float, sigma_b: float) -> float:
    if not (sigma_a > 0 and sigma_b > 0):
        raise ValueError(f"Variances must be positive, got {sigma_a} and {sigma_b}")
    return 1.0 / (1.0 / sigma_a + 1.0 / sigma_b)


def occupancy_bayes_update(m: float, observation: Observation, p_occ: float, p_free: float,
                           weight: float = 1.0) -> float:
    """Binary Bayes filter in odds form, used to integrate real scans; weight scales the log-odds step"""
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"Update weight must lie in [0, 1], got {weight}")
    p = p_occ if Observation(observation) == Observation.OCCUPIED else p_free
    odds = m / (1.0 - m) * (p / (1.0 - p)) ** weight
    return min(max(odds / (1.0 + odds), EPSILON_M), 1.0 - EPSILON_M)


def occupancy_auc(belief: BeliefState, truth: GridWorld, thresholds: int = 200) -> float:
    """Area under the ROC curve of thresholded occupancy against ground truth"""
    if belief.shape != truth.cells.shape:
        raise ValueError(f"Belief {belief.shape} and truth {truth.cells.shape} differ in shape")
    scores = belief.occupancy.ravel()
    labels = truth.cells.ravel()
    positives, negatives = int(labels.sum()), int((~labels).sum())
    if positives == 0 or negatives == 0:
        raise ValueError("AUC needs both occupied and free cells in the truth")

    fpr, tpr = [], []
    for t in np.linspace(0.0, 1.0, thresholds):
        predicted = scores >= t
        tpr.append(np.count_nonzero(predicted & labels) / positives)
        fpr.append(np.count_nonzero(predicted & ~labels) / negatives)
    points = sorted(zip(fpr, tpr))
    xs, ys = zip(*points)
    return float(trapezoid(ys, xs))
