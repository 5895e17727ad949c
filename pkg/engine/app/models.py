import math
from enum import Enum
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .core.gp import KernelFamily, KernelSpec


class InfoKind(str, Enum):
    """Information function used to score planner nodes"""
    MI = "mi"
    MIUB = "miub"
    GPVR = "gpvr"
    UGPVR = "ugpvr"


class RunSection(BaseModel):
    """Run-wide settings"""
    seed: int = Field(0, ge=0, description="Seed for every random stream of the run")
    output_dir: str = Field("results", description="Directory receiving result files")
    log_level: str = Field("INFO", description="Root logger level")

    class Config:
        extra = "forbid"


class GeometryConfig(BaseModel):
    """Workspace and start pose"""
    world_file: Optional[str] = Field(None, description="Text world file ('#' obstacle, '.' free)")
    start_x: float = Field(10.0, description="Initial x position in m")
    start_y: float = Field(2.0, description="Initial y position in m")
    start_heading: float = Field(0.0, description="Initial heading in rad")
    map_resolution: float = Field(0.2, gt=0, description="Map resolution in m/cell")

    class Config:
        extra = "forbid"


class SensorModel(BaseModel):
    """Range-finder with a beam-based mixture measurement model"""
    n_beams: int = Field(10, ge=1, description="Number of beams n_z")
    r_max: float = Field(5.0, gt=0, description="Maximum range in m")
    fov: float = Field(2 * math.pi, gt=0, le=2 * math.pi, description="Field of view in rad")
    z_hit: float = Field(0.7, ge=0, description="Hit weight")
    z_short: float = Field(0.1, ge=0, description="Short weight")
    z_max: float = Field(0.1, ge=0, description="Max-range weight")
    z_rand: float = Field(0.1, ge=0, description="Random weight")
    sigma_hit: float = Field(0.05, gt=0, description="Hit std in m")
    lambda_short: float = Field(0.2, gt=0, description="Short decay in 1/m")
    s_z: float = Field(2.0, gt=0, description="Numerical integration resolution in 1/m")

    class Config:
        extra = "forbid"

    @model_validator(mode="after")
    def _weights_sum_to_one(self):
        total = self.z_hit + self.z_short + self.z_max + self.z_rand
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"Mixture weights must sum to 1, got {total}")
        return self

    def beam_angles(self, heading: float) -> np.ndarray:
        if self.n_beams == 1:
            return np.array([heading])
        if self.fov >= 2 * math.pi:
            return heading + 2 * math.pi * np.arange(self.n_beams) / self.n_beams
        return heading + np.linspace(-0.5 * self.fov, 0.5 * self.fov, self.n_beams)


class InverseModelParams(BaseModel):
    """Inverse sensor model used for map prediction"""
    b_free: float = Field(0.6, gt=0, lt=1, description="Unoccupied belief multiplier")
    b_occ: float = Field(1.66, gt=1, description="Occupied belief multiplier")
    p_sat: float = Field(0.05, gt=0, lt=0.5, description="Saturation probability")
    epsilon: Optional[float] = Field(None, gt=0, description="Clamp slack, defaults to 0.01 * p_sat")
    p_occ: float = Field(0.65, gt=0.5, lt=1, description="Occupied probability")
    p_free: float = Field(0.35, gt=0, lt=0.5, description="Unoccupied probability")

    class Config:
        extra = "forbid"

    @model_validator(mode="after")
    def _default_epsilon(self):
        if self.epsilon is None:
            self.epsilon = 0.01 * self.p_sat
        if not self.epsilon < self.p_sat:
            raise ValueError(f"epsilon ({self.epsilon}) must be smaller than p_sat ({self.p_sat})")
        return self

    @property
    def h_sat(self) -> float:
        p = self.p_sat
        return -(p * math.log(p) + (1 - p) * math.log(1 - p))


class KernelConfig(BaseModel):
    """Covariance function for variance-reduction information"""
    family: KernelFamily = Field(KernelFamily.MATERN52, description="se, se_ard or matern52")
    lengthscale: float = Field(3.2623, gt=0, description="Characteristic length-scale in m")
    signal_variance: float = Field(0.1879, gt=0, description="Signal variance")
    noise_variance: float = Field(0.01, ge=0, description="Sensor noise variance")

    class Config:
        extra = "forbid"

    def to_spec(self) -> KernelSpec:
        if self.family == KernelFamily.SQUARED_EXPONENTIAL_ARD:
            return KernelSpec(self.family, (self.lengthscale, self.lengthscale), self.signal_variance)
        return KernelSpec(self.family, self.lengthscale, self.signal_variance)


class QuadratureConfig(BaseModel):
    order: int = Field(11, ge=1, description="Gauss-Hermite points per dimension")

    class Config:
        extra = "forbid"


class MotionConfig(BaseModel):
    """Motion noise and initial pose uncertainty, as standard deviations"""
    q_std: Tuple[float, float, float] = Field((0.1, 0.1, 0.0026), description="Motion noise std (m, m, rad)")
    init_std: Tuple[float, float, float] = Field((0.4, 0.1, 0.0), description="Initial pose std (m, m, rad)")

    class Config:
        extra = "forbid"

    @model_validator(mode="after")
    def _nonnegative(self):
        if min(self.q_std) < 0 or min(self.init_std) < 0:
            raise ValueError("Standard deviations must be nonnegative")
        return self


class PlannerConfig(BaseModel):
    """RIG/IIG tree parameters"""
    delta: float = Field(1.0, gt=0, description="Steer step in m")
    r_near: float = Field(1.5, gt=0, description="Near radius in m")
    budget: float = Field(math.inf, ge=0, description="Budget (travel distance) in m")
    delta_ric: float = Field(5e-4, ge=0, description="I_RIC convergence threshold")
    n_ric: int = Field(30, ge=1, description="I_RIC averaging window")
    info_kind: InfoKind = Field(InfoKind.MIUB, description="mi, miub, gpvr or ugpvr")
    max_samples: int = Field(200_000, ge=0, description="Hard cap on samples")
    rig_samples: int = Field(2_000, ge=0, description="Sample budget for a plain RIG tree")

    class Config:
        extra = "forbid"


class SelectionParams(BaseModel):
    kappa: float = Field(0.4, gt=0, lt=1, description="Minimum path length coefficient")
    s_ratio: float = Field(0.6, gt=0, lt=1, description="Path similarity ratio")

    class Config:
        extra = "forbid"


class MissionConfig(BaseModel):
    """Exploration mission settings (online parameters)"""
    p_sat_term: float = Field(0.1, gt=0, lt=0.5, description="Termination saturation probability")
    p_sat_online: float = Field(0.3, gt=0, lt=0.5, description="Saturation probability while exploring")
    delta_ric_online: float = Field(1e-2, ge=0, description="I_RIC threshold while exploring")
    max_steps: int = Field(50, ge=0, description="Planning step limit")
    initial_probability: float = Field(0.5, gt=0, lt=1, description="Initial occupancy belief")
    initial_variance: float = Field(1.0, gt=0, description="Initial variance map value")
    observation_variance: float = Field(0.1, gt=0, description="Variance fused into observed cells")
    scan_beams: int = Field(180, ge=1, description="Beams of the real scans integrated into the map")

    class Config:
        extra = "forbid"

    @property
    def h_sat_term(self) -> float:
        p = self.p_sat_term
        return -(p * math.log(p) + (1 - p) * math.log(1 - p))


class MonitoringConfig(BaseModel):
    """Wireless signal strength monitoring replay"""
    dataset_file: Optional[str] = Field(None, description="CSV with lat,lon,rssi_dbm")
    info_kind: InfoKind = Field(InfoKind.GPVR, description="gpvr or ugpvr")
    sensing_radius: float = Field(10.0, gt=0, description="Radius of the near-query sensor in m")
    resolution: float = Field(2.5, gt=0, description="Query surface resolution in m")
    extent_x: float = Field(50.0, gt=0, description="Synthetic field width in m")
    extent_y: float = Field(50.0, gt=0, description="Synthetic field height in m")
    transmitter_x: float = Field(5.0, description="Synthetic transmitter x in m")
    transmitter_y: float = Field(5.0, description="Synthetic transmitter y in m")
    tx_power_dbm: float = Field(-30.0, description="Signal at the reference distance in dBm")
    path_loss_exponent: float = Field(2.5, gt=0, description="Log-distance path loss exponent")
    reference_distance: float = Field(1.0, gt=0, description="Reference distance in m")
    shadowing_std: float = Field(2.0, ge=0, description="Log-normal shadowing std in dB")
    n_training: int = Field(267, ge=2, description="Down-sampled training observations")
    measurement_noise_std: float = Field(0.5, ge=0, description="Measurement noise std in dBm")
    start_x: float = Field(25.0, description="Start x in m")
    start_y: float = Field(25.0, description="Start y in m")

    class Config:
        extra = "forbid"


class BenchConfig(BaseModel):
    sweep: Literal["beams", "range", "radius"] = "beams"
    seeds: int = Field(10, ge=1, description="Seeds per setting")
    workers: int = Field(1, ge=1, description="Parallel worker processes")

    class Config:
        extra = "forbid"


class RunConfig(BaseModel):
    """Complete run configuration, one section per module"""
    run: RunSection = Field(default_factory=RunSection)
    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    sensor: SensorModel = Field(default_factory=SensorModel)
    inverse_model: InverseModelParams = Field(default_factory=InverseModelParams)
    kernel: KernelConfig = Field(default_factory=KernelConfig)
    quadrature: QuadratureConfig = Field(default_factory=QuadratureConfig)
    motion: MotionConfig = Field(default_factory=MotionConfig)
    planner: PlannerConfig = Field(default_factory=PlannerConfig)
    selection: SelectionParams = Field(default_factory=SelectionParams)
    mission: MissionConfig = Field(default_factory=MissionConfig)
    monitoring: MonitoringConfig = Field(default_factory=MonitoringConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)

    class Config:
        extra = "forbid"


class TraceEntry(BaseModel):
    """One IIG insertion: samples drawn, penalized RIC, windowed mean"""
    samples: int
    iric: float
    mean: float


class MissionStepRecord(BaseModel):
    """Output model for one mission step"""
    step: int
    x: float
    y: float
    heading: float
    average_entropy: float
    planner_samples: int = 0
    planner_nodes: int = 0
    planner_converged: bool = False
    final_mean: Optional[float] = None
    selected_path: List[int] = Field(default_factory=list)
    distance_traveled: float = 0.0
    terminated: bool = False

    class Config:
        from_attributes = True


class MissionSummary(BaseModel):
    scenario: str
    steps: int
    total_distance: float
    final_entropy: Optional[float] = None
    terminated: bool = False
    auc: Optional[float] = None
    rmse: Optional[float] = None
    total_info: Optional[float] = None
    measurements: Optional[int] = None


class MissionLog(BaseModel):
    records: List[MissionStepRecord] = Field(default_factory=list)
    summary: Optional[MissionSummary] = None


class WssRecord(BaseModel):
    """One wireless signal strength observation"""
    latitude: float = Field(..., ge=-90, le=90, description="Latitude in degrees")
    longitude: float = Field(..., ge=-180, le=180, description="Longitude in degrees")
    rssi_dbm: float = Field(..., description="Received signal strength in dBm")

    @model_validator(mode="after")
    def _finite(self):
        if not math.isfinite(self.rssi_dbm):
            raise ValueError("Signal strength must be finite")
        return self


class WssDataset(BaseModel):
    records: List[WssRecord] = Field(default_factory=list)
