import logging
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Deque, Dict, Iterable, List, Optional, Tuple

from ..models import PlannerConfig, TraceEntry
from .belief import BeliefOverlay, BeliefState
from .exceptions import CollisionError
from .geometry import GridWorld, Point2, SeededRng, SpatialIndex, no_collision, sample_uniform, steer
from .info_functions import InformationEstimator
from .pose import MotionNoise, PoseBelief, propagate

logger = logging.getLogger(__name__)

# denominator floor for the relative information contribution
I_NEAR_FLOOR = 1e-9


@dataclass
class NodeRecord:
    id: int
    position: Point2
    cost: float
    info: float
    parent: Optional[int]
    overlay: BeliefOverlay
    pose_belief: PoseBelief
    closed: bool = False


class Tree:
    """
    Planner tree. Every node is kept; only open nodes (cost within budget)
    are visible to nearest/near queries.
    """

    def __init__(self, world: GridWorld):
        self.world = world
        self.nodes: List[NodeRecord] = []
        self._open = SpatialIndex()
        self._cells: Dict[Tuple[int, int], List[int]] = defaultdict(list)
        self._children: Dict[int, List[int]] = defaultdict(list)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def root(self) -> NodeRecord:
        return self.nodes[0]

    def add(self, position: Point2, cost: float, info: float, parent: Optional[int],
            overlay: BeliefOverlay, pose_belief: PoseBelief, closed: bool = False) -> NodeRecord:
        node = NodeRecord(len(self.nodes), position, cost, info, parent, overlay, pose_belief, closed)
        self.nodes.append(node)
        self._cells[self.world.cell_of(position)].append(node.id)
        if parent is not None:
            self._children[parent].append(node.id)
        if not closed:
            self._open.add(position, key=node.id)
        return node

    def nearest_open(self, query: Point2) -> NodeRecord:
        return self.nodes[self._open.key(self._open.nearest_index(query))]

    def near_open(self, query: Point2, radius: float) -> List[NodeRecord]:
        return [self.nodes[self._open.key(i)] for i in self._open.near_indices(query, radius)]

    def co_located(self, position: Point2) -> List[NodeRecord]:
        return [self.nodes[i] for i in self._cells.get(self.world.cell_of(position), ())]

    def children(self, node_id: int) -> List[int]:
        return list(self._children.get(node_id, ()))

    def edges(self) -> Iterable[Tuple[NodeRecord, NodeRecord]]:
        for node in self.nodes[1:]:
            yield self.nodes[node.parent], node

    @property
    def open_count(self) -> int:
        return len(self._open)


@dataclass
class RicWindow:
    capacity: int
    values: Deque[float] = field(default_factory=deque)
    samples_since_insert: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"Window capacity must be at least 1, got {self.capacity}")
        self.values = deque(self.values, maxlen=self.capacity)

    def append(self, value: float):
        self.values.append(value)

    @property
    def full(self) -> bool:
        return len(self.values) == self.capacity


@dataclass
class PlanningResult:
    tree: Tree
    trace: List[TraceEntry]
    samples: int
    converged: bool

    @property
    def final_mean(self) -> Optional[float]:
        return self.trace[-1].mean if self.trace else None


def compute_ric(i_new: float, i_near: float, n_samples: int) -> float:
    """Penalized relative information contribution"""
    if n_samples < 1:
        raise ValueError(f"Sample count must be at least 1, got {n_samples}")
    return (i_new / max(i_near, I_NEAR_FLOOR) - 1.0) / n_samples


def average_ric(window: RicWindow) -> float:
    # no convergence verdict until the window is full
    if not window.full:
        return math.inf
    return sum(window.values) / len(window.values)


def prune(candidate: NodeRecord, co_located: Iterable[NodeRecord]) -> bool:
    """True when a co-located node is at least as cheap and at least as informative"""
    return any(n.cost <= candidate.cost and n.info >= candidate.info for n in co_located)


class _TreeExpander:
    """One sample of the RIG loop: nearest, steer, near set, extend"""

    def __init__(self, world: GridWorld, belief: BeliefState, config: PlannerConfig,
                 estimator: InformationEstimator, start: PoseBelief, noise: MotionNoise, rng: SeededRng):
        if not world.is_free_point(start.position):
            raise CollisionError(f"Start ({start.position.x}, {start.position.y}) is not in free space")
        self.world = world
        self.belief = belief
        self.config = config
        self.estimator = estimator
        self.noise = noise
        self.rng = rng
        self.tree = Tree(world)
        root = estimator.evaluate(start, belief, None, None)
        self.tree.add(start.position, 0.0, root.info, None, root.overlay, start)
        logger.debug(f"Root information {root.info:.6g} at ({start.position.x}, {start.position.y})")

    def sample_once(self) -> List[Tuple[NodeRecord, NodeRecord]]:
        """Draw one sample; returns the (near, new) pairs that were inserted"""
        sample = sample_uniform(self.world, self.rng)
        nearest = self.tree.nearest_open(sample)
        feasible = steer(nearest.position, sample, self.config.delta)
        inserted = []
        for near in self.tree.near_open(feasible, self.config.r_near):
            new_position = steer(near.position, feasible, self.config.delta)
            edge = near.position.distance_to(new_position)
            if edge == 0 or not no_collision(near.position, new_position, self.world):
                continue
            pose = propagate(near.pose_belief, near.position, new_position, self.noise)
            result = self.estimator.evaluate(pose, self.belief, near.overlay, near.info)
            cost = near.cost + edge
            candidate = NodeRecord(-1, new_position, cost, result.info, near.id, result.overlay, pose)
            if prune(candidate, self.tree.co_located(new_position)):
                continue
            node = self.tree.add(new_position, cost, result.info, near.id, result.overlay, pose,
                                 closed=cost > self.config.budget)
            inserted.append((near, node))
        return inserted


def rig_tree(world: GridWorld, belief: BeliefState, config: PlannerConfig, estimator: InformationEstimator,
             start: PoseBelief, noise: MotionNoise, rng: SeededRng, samples: int) -> Tree:
    """Plain RIG tree grown for a fixed number of samples"""
    expander = _TreeExpander(world, belief, config, estimator, start, noise, rng)
    for _ in range(samples):
        expander.sample_once()
    logger.info(f"RIG tree: {len(expander.tree)} nodes after {samples} samples")
    return expander.tree


def iig_tree(world: GridWorld, belief: BeliefState, config: PlannerConfig, estimator: InformationEstimator,
             start: PoseBelief, noise: MotionNoise, rng: SeededRng) -> PlanningResult:
    """RIG tree grown until the windowed penalized RIC drops below delta_ric"""
    expander = _TreeExpander(world, belief, config, estimator, start, noise, rng)
    window = RicWindow(config.n_ric)
    trace: List[TraceEntry] = []
    samples = 0
    converged = False

    while samples < config.max_samples:
        if average_ric(window) < config.delta_ric:
            converged = True
            break
        samples += 1
        window.samples_since_insert += 1
        for near, node in expander.sample_once():
            # the sample is charged to the first insertion it produced
            ric = compute_ric(node.info, near.info, max(window.samples_since_insert, 1))
            window.samples_since_insert = 0
            window.append(ric)
            trace.append(TraceEntry(samples=samples, iric=ric, mean=average_ric(window)))
    else:
        converged = average_ric(window) < config.delta_ric

    tree = expander.tree
    if converged:
        logger.info(f"IIG converged after {samples} samples with {len(tree)} nodes")
    else:
        logger.warning(f"IIG hit the {config.max_samples} sample cap with {len(tree)} nodes")
    return PlanningResult(tree, trace, samples, converged)


def total_tree_information(tree: Tree) -> float:
    """Sum of edge information gains over the whole tree"""
    return sum(child.info - parent.info for parent, child in tree.edges())


def total_tree_cost(tree: Tree) -> float:
    return sum(child.cost - parent.cost for parent, child in tree.edges())
