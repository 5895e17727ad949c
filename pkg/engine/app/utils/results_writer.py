import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from ..core.belief import BeliefState
from ..core.path_selection import Path as TreePath
from ..core.planner import PlanningResult, Tree, total_tree_cost, total_tree_information
from ..models import MissionLog, TraceEntry

logger = logging.getLogger(__name__)

TREE_FILE = "tree.json"
PATH_FILE = "path.json"
CONVERGENCE_FILE = "convergence.csv"
ENTROPY_FILE = "entropy.csv"
SUMMARY_FILE = "summary.json"
MISSION_LOG_FILE = "mission_log.jsonl"
OCCUPANCY_FILE = "occupancy.csv"


def _finite(value: Optional[float]) -> Optional[float]:
    # JSON has no infinities; they are written as null
    if value is None or not math.isfinite(value):
        return None
    return value


def _number(value: float) -> str:
    return format(float(value), ".17g")


class ResultsWriter:
    """Serialises planner trees, paths and mission logs into a result directory"""

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise OSError(f"Cannot create output directory {self.directory}: {e}") from e
        self.written: List[Path] = []

    def _write_text(self, name: str, text: str) -> Path:
        target = self.directory / name
        try:
            target.write_text(text)
        except OSError as e:
            raise OSError(f"Could not write {target}: {e}") from e
        self.written.append(target)
        return target

    def _write_json(self, name: str, payload: Any) -> Path:
        return self._write_text(name, json.dumps(payload, indent=2, allow_nan=False) + "\n")

    def _write_csv(self, name: str, header: List[str], rows: List[List[str]]) -> Path:
        target = self.directory / name
        try:
            with target.open("w", newline="") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(header)
                writer.writerows(rows)
        except OSError as e:
            raise OSError(f"Could not write {target}: {e}") from e
        self.written.append(target)
        return target

    def write_tree(self, tree: Tree, result: Optional[PlanningResult] = None) -> Path:
        nodes = [
            {
                "id": node.id,
                "x": node.position.x,
                "y": node.position.y,
                "heading": node.pose_belief.heading,
                "parent": node.parent,
                "cost": node.cost,
                "info": node.info,
                "closed": node.closed,
            }
            for node in tree.nodes
        ]
        payload: Dict[str, Any] = {"nodes": nodes}
        if result is not None:
            payload["samples"] = result.samples
            payload["converged"] = result.converged
            payload["trace"] = [
                {"samples": e.samples, "iric": e.iric, "mean": _finite(e.mean)} for e in result.trace
            ]
        return self._write_json(TREE_FILE, payload)

    def write_path(self, tree: Tree, path: TreePath) -> Path:
        return self._write_json(PATH_FILE, {
            "node_ids": list(path.node_ids),
            "positions": [[tree.nodes[i].position.x, tree.nodes[i].position.y] for i in path.node_ids],
            "cost": path.cost,
            "info": path.info,
        })

    def write_convergence(self, trace: List[TraceEntry]) -> Path:
        rows = [[str(e.samples), _number(e.iric), _number(e.mean)] for e in trace]
        return self._write_csv(CONVERGENCE_FILE, ["sample", "iric", "mean"], rows)

    def write_entropy(self, log: MissionLog) -> Path:
        rows = [[str(r.step), _number(r.average_entropy)] for r in log.records]
        return self._write_csv(ENTROPY_FILE, ["step", "avg_entropy"], rows)

    def write_mission_log(self, log: MissionLog) -> Path:
        lines = [json.dumps(record.model_dump(), allow_nan=False) for record in log.records]
        return self._write_text(MISSION_LOG_FILE, "".join(line + "\n" for line in lines))

    def write_occupancy(self, belief: BeliefState) -> Path:
        """Occupancy rows from the top of the map down, like world files"""
        rows = [[_number(v) for v in belief.occupancy[iy]] for iy in range(belief.shape[0] - 1, -1, -1)]
        target = self.directory / OCCUPANCY_FILE
        try:
            with target.open("w", newline="") as f:
                csv.writer(f, lineterminator="\n").writerows(rows)
        except OSError as e:
            raise OSError(f"Could not write {target}: {e}") from e
        self.written.append(target)
        return target

    def write_summary(self, summary: Dict[str, Any]) -> Path:
        return self._write_json(SUMMARY_FILE, {k: _finite(v) if isinstance(v, float) else v
                                               for k, v in summary.items()})


def planning_summary(result: PlanningResult, path: Optional[TreePath], info_kind: str, seed: int) -> Dict[str, Any]:
    tree = result.tree
    return {
        "scenario": "plan",
        "info_kind": info_kind,
        "seed": seed,
        "samples": result.samples,
        "nodes": len(tree),
        "converged": result.converged,
        "final_mean": result.final_mean,
        "total_info": total_tree_information(tree),
        "total_cost": total_tree_cost(tree),
        "path_length": path.length if path is not None else None,
        "path_info": path.info if path is not None else None,
    }


def emit_results(directory: Union[str, Path], result: Optional[PlanningResult] = None,
                 path: Optional[TreePath] = None, log: Optional[MissionLog] = None,
                 belief: Optional[BeliefState] = None, summary: Optional[Dict[str, Any]] = None) -> List[Path]:
    """Write every artifact available for a run; returns the files written"""
    writer = ResultsWriter(directory)
    if result is not None:
        writer.write_tree(result.tree, result)
        writer.write_convergence(result.trace)
        if path is not None:
            writer.write_path(result.tree, path)
    if log is not None:
        writer.write_entropy(log)
        writer.write_mission_log(log)
        if summary is None and log.summary is not None:
            summary = log.summary.model_dump()
    if belief is not None:
        writer.write_occupancy(belief)
    if summary is not None:
        writer.write_summary(summary)
    logger.info(f"Wrote {len(writer.written)} result files to {writer.directory}")
    return writer.written


def load_tree_json(path: Union[str, Path]) -> Dict[str, Any]:
    """Parse a tree file back; null trace means become infinity again"""
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ValueError(f"Could not read tree file {path}: {e}") from e
    for entry in payload.get("trace", []):
        if entry["mean"] is None:
            entry["mean"] = math.inf
    return payload


def load_convergence_csv(path: Union[str, Path]) -> List[TraceEntry]:
    path = Path(path)
    with path.open(newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["sample", "iric", "mean"]:
            raise ValueError(f"{path}: unexpected convergence header {header}")
        return [TraceEntry(samples=int(s), iric=float(i), mean=float(m)) for s, i, m in reader]
