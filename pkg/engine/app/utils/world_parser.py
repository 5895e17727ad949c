import csv
import logging
from pathlib import Path
from typing import List, Union

import numpy as np
from pydantic import ValidationError

from ..core.exceptions import DatasetError
from ..core.geometry import GridWorld
from ..models import WssDataset, WssRecord

logger = logging.getLogger(__name__)


class WorldFileParser:
    """
    Parser for text world files.
    Expected format: a header line "width height resolution_m" followed by
    `height` rows of `width` characters, '#' for an obstacle and '.' for free
    space. The first row is the top of the map (highest y).
    """

    OBSTACLE = "#"
    FREE = "."

    @classmethod
    def parse_world_string(cls, text: str) -> GridWorld:
        lines = [line.strip() for line in text.splitlines() if line.strip()]
        if not lines:
            raise DatasetError("World file is empty")
        try:
            width, height, resolution = lines[0].split()
            width, height, resolution = int(width), int(height), float(resolution)
        except ValueError as e:
            raise DatasetError(f"Bad world header '{lines[0]}': expected 'width height resolution_m'") from e

        rows = lines[1:]
        if len(rows) != height:
            raise DatasetError(f"World header promises {height} rows, found {len(rows)}")
        cells = np.zeros((height, width), dtype=bool)
        for r, row in enumerate(rows):
            if len(row) != width or set(row) - {cls.OBSTACLE, cls.FREE}:
                raise DatasetError(f"World row {r + 1} must have {width} '#'/'.' characters: '{row}'")
            # first text row is the top of the map
            cells[height - 1 - r] = [c == cls.OBSTACLE for c in row]
        return GridWorld(cells, resolution)

    @classmethod
    def parse_world(cls, path: Union[str, Path]) -> GridWorld:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"World file not found: {path}")
        world = cls.parse_world_string(path.read_text())
        logger.info(f"Loaded world {path}: {world.width}x{world.height} cells at {world.resolution} m")
        return world

    @classmethod
    def format_world(cls, world: GridWorld) -> str:
        header = f"{world.width} {world.height} {world.resolution!r}"
        rows = [
            "".join(cls.OBSTACLE if c else cls.FREE for c in world.cells[iy])
            for iy in range(world.height - 1, -1, -1)
        ]
        return "\n".join([header] + rows) + "\n"


class DataFileParser:
    """Parser for CSV survey data"""

    WSS_COLUMNS = ("lat", "lon", "rssi_dbm")

    @classmethod
    def parse_wss_csv(cls, path: Union[str, Path]) -> WssDataset:
        """
        Parse a wireless signal strength survey.
        Expected format: header "lat,lon,rssi_dbm" then one record per line.
        """
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"Dataset file not found: {path}")

        records: List[WssRecord] = []
        with path.open(newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != cls.WSS_COLUMNS:
                raise DatasetError(f"{path}: expected header {','.join(cls.WSS_COLUMNS)}, got {header}")
            for line_no, row in enumerate(reader, start=2):
                if not row or not "".join(row).strip():
                    continue
                try:
                    lat, lon, rssi = (float(v) for v in row)
                    records.append(WssRecord(latitude=lat, longitude=lon, rssi_dbm=rssi))
                except (ValueError, ValidationError) as e:
                    raise DatasetError(f"{path}:{line_no}: bad record {row}: {e}") from e

        logger.info(f"Loaded {len(records)} signal records from {path}")
        return WssDataset(records=records)
