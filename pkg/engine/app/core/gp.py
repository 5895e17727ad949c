import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy import linalg
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .exceptions import FactorizationError, FitError
from .geometry import Point2, SeededRng

logger = logging.getLogger(__name__)

# diagonal jitter used when the noise variance is exactly zero
JITTER = 1e-10


class KernelFamily(str, Enum):
    SQUARED_EXPONENTIAL = "se"
    SQUARED_EXPONENTIAL_ARD = "se_ard"
    MATERN52 = "matern52"


@dataclass(frozen=True)
class KernelSpec:
    family: KernelFamily
    lengthscale: Union[float, Tuple[float, ...]]
    signal_variance: float

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        if np.ndim(self.lengthscale) == 0:
            object.__setattr__(self, "lengthscale", float(self.lengthscale))
        else:
            object.__setattr__(self, "lengthscale", tuple(float(v) for v in self.lengthscale))
        if not np.all(np.asarray(self.lengthscale) > 0):
            raise ValueError(f"Lengthscales must be positive, got {self.lengthscale}")
        if not self.signal_variance > 0:
            raise ValueError(f"Signal variance must be positive, got {self.signal_variance}")

    @property
    def is_ard(self) -> bool:
        return isinstance(self.lengthscale, tuple)

    def profile(self, r: np.ndarray) -> np.ndarray:
        """Covariance as a function of lengthscale-normalised distance"""
        if self.family == KernelFamily.MATERN52:
            s5r = math.sqrt(5.0) * r
            return self.signal_variance * (1.0 + s5r + 5.0 * r ** 2 / 3.0) * np.exp(-s5r)
        return self.signal_variance * np.exp(-0.5 * r ** 2)

    def scale(self, points: np.ndarray) -> np.ndarray:
        """Divide a d x n input matrix by the lengthscale(s)"""
        ls = np.asarray(self.lengthscale, dtype=float)
        if ls.ndim == 0:
            return points / ls
        if ls.size != points.shape[0]:
            raise ValueError(f"ARD kernel has {ls.size} lengthscales for {points.shape[0]}-D inputs")
        return points / ls[:, None]

    def with_params(self, lengthscale, signal_variance: float) -> "KernelSpec":
        return KernelSpec(self.family, lengthscale, signal_variance)


@dataclass(frozen=True)
class TrainingSet:
    inputs: np.ndarray
    targets: np.ndarray
    noise_variance: float = 0.0

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        targets = np.asarray(self.targets, dtype=float).reshape(-1)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)
        if inputs.shape[1] != targets.size:
            raise ValueError(
                f"Training inputs have {inputs.shape[1]} columns but {targets.size} targets"
            )
        if self.noise_variance < 0:
            raise ValueError(f"Noise variance must be nonnegative, got {self.noise_variance}")

    @property
    def n(self) -> int:
        return self.targets.size

    @property
    def dim(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class GaussHermiteScheme:
    order: int = 11
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError(f"Quadrature order must be positive, got {self.order}")
        nodes, weights = hermgauss(self.order)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    def tensor_grid(self, dim: int = 2) -> Tuple[np.ndarray, np.ndarray]:
        """Row-major tensor product: dim x order**dim nodes and their weights"""
        x = np.array(list(itertools.product(*(self.nodes,) * dim))).T
        w = np.prod(np.array(list(itertools.product(*(self.weights,) * dim))), axis=1)
        return x, w


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"Covariance shape {cov.shape} does not match mean size {mean.size}")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12:
            raise ValueError("Covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        _cholesky(cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def _cholesky(matrix: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(matrix, lower=True)
    except linalg.LinAlgError as e:
        raise FactorizationError(f"Matrix is not positive definite: {e}") from e


def _logdet(matrix: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(_cholesky(matrix)))))


def _as_columns(points) -> np.ndarray:
    if isinstance(points, Point2):
        return points.as_array()[:, None]
    arr = np.asarray(points, dtype=float)
    return arr[:, None] if arr.ndim == 1 else arr


def kernel_eval(spec: KernelSpec, r_or_pair) -> float:
    """Covariance for a distance r >= 0 or for a pair of points"""
    if isinstance(r_or_pair, tuple):
        a, b = (_as_columns(p) for p in r_or_pair)
        return float(kernel_matrix(spec, a, b)[0, 0])
    r = float(r_or_pair)
    if r < 0:
        raise ValueError(f"Distance must be nonnegative, got {r}")
    if spec.is_ard:
        raise ValueError("ARD kernels need a point pair, not a scalar distance")
    return float(spec.profile(np.asarray(r / spec.lengthscale)))


def kernel_matrix(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """K(A, B) for d x n and d x m input matrices"""
    a, b = _as_columns(a), _as_columns(b)
    if a.shape[1] == 0 or b.shape[1] == 0:
        return np.zeros((a.shape[1], b.shape[1]))
    r = cdist(spec.scale(a).T, spec.scale(b).T)
    return spec.profile(r)


def _regularised_gram(data: TrainingSet, spec: KernelSpec) -> np.ndarray:
    noise = data.noise_variance
    if noise == 0 and data.n > 1 and np.unique(data.inputs.T, axis=0).shape[0] < data.n:
        raise FactorizationError("Duplicate training inputs require a positive noise variance")
    gram = kernel_matrix(spec, data.inputs, data.inputs)
    gram[np.diag_indices_from(gram)] += noise if noise > 0 else JITTER
    return gram


def gp_predict(data: TrainingSet, queries: np.ndarray, spec: KernelSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Predictive means and variances at the columns of `queries`"""
    queries = _as_columns(queries)
    prior = spec.signal_variance * np.ones(queries.shape[1])
    if data.n == 0:
        return np.zeros(queries.shape[1]), prior

    chol = _cholesky(_regularised_gram(data, spec))
    cross = kernel_matrix(spec, data.inputs, queries)
    alpha = linalg.cho_solve((chol, True), data.targets)
    means = cross.T @ alpha
    v = linalg.solve_triangular(chol, cross, lower=True)
    variances = np.clip(prior - np.sum(v * v, axis=0), 0.0, prior)
    return means, variances


def predictive_variances(data: TrainingSet, spec: KernelSpec, cross: np.ndarray,
                         prior: np.ndarray, gram: Optional[np.ndarray] = None) -> np.ndarray:
    """
    prior - diag(cross^T (K + noise I)^-1 cross) for a precomputed n x m cross-covariance.
    A precomputed noise-free gram replaces K(X, X).
    """
    if gram is None:
        gram = _regularised_gram(data, spec)
    else:
        gram = 0.5 * (gram + gram.T)
        gram[np.diag_indices_from(gram)] += data.noise_variance if data.noise_variance > 0 else JITTER
    chol = _cholesky(gram)
    v = linalg.solve_triangular(chol, cross, lower=True)
    return prior - np.sum(v * v, axis=0)


def log_marginal_likelihood(data: TrainingSet, spec: KernelSpec) -> float:
    if data.n < 1:
        raise ValueError("Log marginal likelihood needs at least one training point")
    chol = _cholesky(_regularised_gram(data, spec))
    alpha = linalg.cho_solve((chol, True), data.targets)
    return float(
        -0.5 * data.targets @ alpha
        - np.sum(np.log(np.diag(chol)))
        - 0.5 * data.n * math.log(2.0 * math.pi)
    )


def _pack(spec: KernelSpec) -> np.ndarray:
    return np.log(np.append(np.atleast_1d(spec.lengthscale), spec.signal_variance))


def _unpack(theta: np.ndarray, template: KernelSpec) -> KernelSpec:
    values = np.exp(theta)
    lengthscale = tuple(values[:-1]) if template.is_ard else float(values[0])
    return template.with_params(lengthscale, float(values[-1]))


def fit_hyperparameters(data: TrainingSet, family: KernelFamily, initial_guesses: Sequence[KernelSpec],
                        restarts: int = 5, max_iterations: int = 400,
                        rng: Optional[SeededRng] = None) -> KernelSpec:
    """
    Maximise the log marginal likelihood with Nelder-Mead in log-parameter space.
    Starts from every guess; when there are fewer guesses than `restarts`, the rest
    are log-normal perturbations of the first guess.
    """
    if data.n < 2:
        raise ValueError("Hyperparameter fitting needs at least two training points")
    if not initial_guesses:
        raise ValueError("At least one initial guess is required")
    rng = rng or SeededRng(0)
    family = KernelFamily(family)
    starts = [KernelSpec(family, g.lengthscale, g.signal_variance) for g in initial_guesses]
    while len(starts) < restarts:
        theta = _pack(starts[0]) + rng.generator.normal(0.0, 1.0, size=_pack(starts[0]).size)
        starts.append(_unpack(theta, starts[0]))

    def objective(theta: np.ndarray, template: KernelSpec) -> float:
        try:
            return -log_marginal_likelihood(data, _unpack(theta, template))
        except (FactorizationError, ValueError, FloatingPointError):
            return 1e25

    best_spec, best_value = None, math.inf
    for start in starts:
        candidates = [start]
        if max_iterations > 0:
            result = minimize(objective, _pack(start), args=(start,), method="Nelder-Mead",
                              options={"maxiter": max_iterations, "xatol": 1e-6, "fatol": 1e-8})
            candidates.append(_unpack(result.x, start))
        for candidate in candidates:
            value = objective(_pack(candidate), candidate)
            if value < best_value:
                best_spec, best_value = candidate, value

    if best_spec is None or best_value >= 1e25:
        raise FitError("No hyperparameter candidate produced a valid likelihood")
    logger.info(f"Fitted {family.value} kernel: lengthscale={best_spec.lengthscale}, "
                f"signal_variance={best_spec.signal_variance:.6g}, lml={-best_value:.6g}")
    return best_spec


def _covariance_root(input_cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(input_cov, dtype=float)
    if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12:
        raise ValueError("Input covariance must be symmetric")
    w, v = np.linalg.eigh(cov)
    if np.min(w) < -1e-12 * max(1.0, np.max(np.abs(w))):
        raise ValueError("Input covariance must be positive semi-definite")
    return v * np.sqrt(np.clip(w, 0.0, None))


def expected_kernel_matrix(spec: KernelSpec, means: np.ndarray, input_cov: np.ndarray,
                           others: np.ndarray, scheme: GaussHermiteScheme) -> np.ndarray:
    """
    E[k(x + e, x')] for e ~ N(0, input_cov), for every column pair of means x others.
    Reduces to kernel_matrix exactly when the covariance is zero.
    """
    means, others = _as_columns(means), _as_columns(others)
    root = _covariance_root(input_cov)
    if not np.any(root):
        return kernel_matrix(spec, means, others)
    nodes, weights = scheme.tensor_grid(means.shape[0])
    offsets = math.sqrt(2.0) * root @ nodes
    weights = weights / math.pi ** (0.5 * means.shape[0])
    total = np.zeros((means.shape[1], others.shape[1]))
    for k in range(offsets.shape[1]):
        total += weights[k] * kernel_matrix(spec, means + offsets[:, k:k + 1], others)
    return total


def expected_kernel(spec: KernelSpec, input_mean: Point2, input_cov: np.ndarray, other: Point2,
                    scheme: GaussHermiteScheme) -> float:
    return float(expected_kernel_matrix(
        spec, input_mean.as_array(), input_cov, other.as_array(), scheme
    )[0, 0])


def mi_gaussian_exact(prior: GaussianBelief, posterior: GaussianBelief) -> float:
    if prior.dim != posterior.dim:
        raise ValueError(f"Dimension mismatch: {prior.dim} vs {posterior.dim}")
    return 0.5 * (_logdet(prior.covariance) - _logdet(posterior.covariance))


def mi_gaussian_marginal(prior: GaussianBelief, posterior: GaussianBelief) -> float:
    if prior.dim != posterior.dim:
        raise ValueError(f"Dimension mismatch: {prior.dim} vs {posterior.dim}")
    prior_diag, post_diag = np.diag(prior.covariance), np.diag(posterior.covariance)
    if np.any(prior_diag <= 0) or np.any(post_diag <= 0):
        raise ValueError("Marginal variances must be positive")
    return 0.5 * float(np.sum(np.log(prior_diag)) - np.sum(np.log(post_diag)))


def gaussian_entropy(belief: GaussianBelief) -> float:
    """Differential entropy in nats"""
    n = belief.dim
    return 0.5 * (n * math.log(2.0 * math.pi * math.e) + _logdet(belief.covariance))


def condition_gaussian(prior: GaussianBelief, observation: np.ndarray, noise: np.ndarray) -> GaussianBelief:
    """Posterior of X after observing Z = H X + v, v ~ N(0, noise) (covariance only depends on H)"""
    h = np.atleast_2d(np.asarray(observation, dtype=float))
    r = np.atleast_2d(np.asarray(noise, dtype=float))
    s = h @ prior.covariance @ h.T + r
    gain = linalg.solve(s, h @ prior.covariance, assume_a="pos").T
    cov = prior.covariance - gain @ h @ prior.covariance
    cov = 0.5 * (cov + cov.T)
    return GaussianBelief(prior.mean.copy(), cov)


class LogInputWarp:
    """Per-axis log(1 + x) input warping; covariances map through the Jacobian at the mean"""

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.log1p(np.maximum(_as_columns(points), 0.0))

    def covariance(self, mean: np.ndarray, covariance: np.ndarray) -> np.ndarray:
        scale = 1.0 / (1.0 + np.maximum(np.asarray(mean, dtype=float).reshape(-1), 0.0))
        warped = np.asarray(covariance, dtype=float) * np.outer(scale, scale)
        return 0.5 * (warped + warped.T)
