import logging
import math
from dataclasses import dataclass
from typing import List, Tuple

from ..models import SelectionParams
from .planner import Tree

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Path:
    """Root-to-leaf node chain; cost and info are the leaf's accumulated values"""
    node_ids: Tuple[int, ...]
    cost: float
    info: float

    @property
    def length(self) -> int:
        return len(self.node_ids)

    @property
    def leaf_id(self) -> int:
        return self.node_ids[-1]


def _path_to_root(tree: Tree, leaf: int) -> Path:
    ids = []
    node_id = leaf
    while node_id is not None:
        ids.append(node_id)
        node_id = tree.nodes[node_id].parent
    node = tree.nodes[leaf]
    return Path(tuple(reversed(ids)), node.cost, node.info)


def enumerate_paths(tree: Tree) -> List[Path]:
    """One path per leaf, leaves in preorder depth-first order"""
    if len(tree) == 0:
        raise ValueError("Cannot enumerate paths of an empty tree")
    leaves = []
    stack = [tree.root.id]
    while stack:
        node_id = stack.pop()
        children = tree.children(node_id)
        if not children:
            leaves.append(node_id)
        stack.extend(reversed(children))
    return [_path_to_root(tree, leaf) for leaf in leaves]


def similar_nodes(a: Path, b: Path) -> int:
    return len(set(a.node_ids) & set(b.node_ids))


def _vote(paths: List[Path], s_ratio: float) -> List[int]:
    votes = [0] * len(paths)
    for i in range(len(paths) - 1):
        for j in range(i + 1, len(paths)):
            a, b = paths[i], paths[j]
            shared = similar_nodes(a, b) / min(a.length, b.length)
            if shared <= s_ratio:
                votes[i] += 1
                votes[j] += 1
                continue
            # equal lengths: the higher leaf id counts as the longer path
            if (a.length, a.leaf_id) > (b.length, b.leaf_id):
                votes[i] += 1
                votes[j] -= 1
            else:
                votes[i] -= 1
                votes[j] += 1
    return votes


def select_path(tree: Tree, params: SelectionParams) -> Path:
    """Longest independent, maximally informative root-to-leaf path"""
    paths = enumerate_paths(tree)
    l_max = max(p.length for p in paths)
    l_min = math.ceil(params.kappa * l_max)
    candidates = [p for p in paths if p.length > l_min]
    if not candidates:
        longest = min(paths, key=lambda p: (-p.length, p.leaf_id))
        logger.debug(f"Every path is shorter than {l_min + 1} nodes, falling back to leaf {longest.leaf_id}")
        return longest

    votes = _vote(candidates, params.s_ratio)
    top = max(votes)
    best = [p for p, v in zip(candidates, votes) if v == top]
    chosen = min(best, key=lambda p: (-p.info, p.leaf_id))
    logger.debug(f"Selected path to leaf {chosen.leaf_id}: {chosen.length} nodes, info {chosen.info:.6g}, "
                 f"{len(candidates)} candidates")
    return chosen
