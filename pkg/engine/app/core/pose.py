import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .geometry import Point2


def _validated_covariance(matrix, shape=(3, 3)) -> np.ndarray:
    cov = np.asarray(matrix, dtype=float)
    if cov.shape != shape:
        raise ValueError(f"Covariance must be {shape}, got {cov.shape}")
    if np.max(np.abs(cov - cov.T)) > 1e-12:
        raise ValueError("Covariance must be symmetric")
    try:
        np.linalg.cholesky(cov + 1e-15 * np.eye(shape[0]))
    except np.linalg.LinAlgError as e:
        raise ValueError(f"Covariance must be positive semi-definite: {e}") from e
    return cov


@dataclass(frozen=True)
class PoseBelief:
    """Gaussian pose (x, y, heading) with 3x3 covariance"""
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        if mean.size != 3:
            raise ValueError(f"Pose mean needs (x, y, heading), got {mean.size} values")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", _validated_covariance(self.covariance))

    @classmethod
    def from_std(cls, x: float, y: float, heading: float, std: Sequence[float]) -> "PoseBelief":
        return cls(np.array([x, y, heading]), np.diag(np.square(np.asarray(std, dtype=float))))

    @property
    def position(self) -> Point2:
        return Point2(self.mean[0], self.mean[1])

    @property
    def heading(self) -> float:
        return float(self.mean[2])

    @property
    def position_covariance(self) -> np.ndarray:
        return self.covariance[:2, :2]

    def log_det(self) -> float:
        sign, value = np.linalg.slogdet(self.covariance)
        return value if sign > 0 else -math.inf


@dataclass(frozen=True)
class MotionNoise:
    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.shape != (3, 3) or np.any(np.diag(q) < 0) or np.any(q != np.diag(np.diag(q))):
            raise ValueError("Motion noise must be a 3x3 diagonal matrix with nonnegative entries")
        object.__setattr__(self, "q", q)

    @classmethod
    def from_std(cls, std: Sequence[float]) -> "MotionNoise":
        return cls(np.diag(np.square(np.asarray(std, dtype=float))))


def motion_map(state: np.ndarray, control: Tuple[float, float]) -> np.ndarray:
    """Unicycle step: turn by dtheta, then drive d along the new heading"""
    x, y, theta = state
    d, dtheta = control
    heading = theta + dtheta
    return np.array([x + d * math.cos(heading), y + d * math.sin(heading), heading])


def motion_jacobian(state: np.ndarray, control: Tuple[float, float]) -> np.ndarray:
    d, dtheta = control
    heading = state[2] + dtheta
    return np.array([
        [1.0, 0.0, -d * math.sin(heading)],
        [0.0, 1.0, d * math.cos(heading)],
        [0.0, 0.0, 1.0],
    ])


def propagate(belief: PoseBelief, start: Point2, end: Point2, noise: MotionNoise) -> PoseBelief:
    """First-order covariance propagation along a straight edge"""
    d = start.distance_to(end)
    if d == 0:
        return PoseBelief(belief.mean.copy(), _symmetrised(belief.covariance + noise.q))

    dtheta = math.atan2(end.y - start.y, end.x - start.x) - belief.heading
    control = (d, dtheta)
    jac = motion_jacobian(belief.mean, control)
    cov = jac @ belief.covariance @ jac.T + noise.q
    mean = motion_map(belief.mean, control)
    mean[:2] = (end.x, end.y)
    return PoseBelief(mean, _symmetrised(cov))


def _symmetrised(cov: np.ndarray) -> np.ndarray:
    return 0.5 * (cov + cov.T)
