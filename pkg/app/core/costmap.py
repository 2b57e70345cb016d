import logging
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from app.core.exceptions import OutOfBoundsError
from app.core.gridio import write_pgm
from app.models.costmap_models import INSCRIBED, LETHAL, SocialEntityAttr
from app.models.world_models import LidarScan, Pose

logger = logging.getLogger("costmap")

LAYER_NAMES = ("static", "obstacle", "social")


class CostmapStack:
    """
    Layered costmap. static and obstacle hold uint8 costs, social holds real
    values that are quantized when merged into master. Operations mutate the
    stack in place and return it.
    """

    def __init__(self, resolution: float, width: int, height: int, origin: Optional[Pose] = None):
        origin = origin or Pose()
        if origin.theta != 0.0:
            raise ValueError("rotated costmap origins are not supported")
        if width <= 0 or height <= 0 or resolution <= 0:
            raise ValueError("costmap needs positive width, height and resolution")
        self.resolution = float(resolution)
        self.origin = origin
        self.width = int(width)
        self.height = int(height)
        self.layers = {
            "static": np.zeros((height, width), dtype=np.uint8),
            "obstacle": np.zeros((height, width), dtype=np.uint8),
            "social": np.zeros((height, width), dtype=np.float64),
        }
        self.master = np.zeros((height, width), dtype=np.uint8)
        # static + obstacle only; the SFM obstacle term reads this view
        self.physical = np.zeros((height, width), dtype=np.uint8)
        self._xs = self.origin.x + (np.arange(width) + 0.5) * self.resolution
        self._ys = self.origin.y + (np.arange(height) + 0.5) * self.resolution

    @classmethod
    def from_occupancy(
        cls,
        occupied: np.ndarray,
        resolution: float,
        origin: Tuple[float, float] = (0.0, 0.0),
        inflation_radius: float = 0.0,
    ) -> "CostmapStack":
        occupied = np.asarray(occupied, dtype=bool)
        stack = cls(resolution, occupied.shape[1], occupied.shape[0], Pose(x=origin[0], y=origin[1]))
        static = stack.layers["static"]
        if inflation_radius > 0 and occupied.any():
            # distance (m) from each free cell centre to the nearest occupied cell centre
            dist = ndimage.distance_transform_edt(~occupied) * resolution
            static[dist <= inflation_radius] = INSCRIBED
        static[occupied] = LETHAL
        return merge_layers(stack)

    # --- coordinates ---

    def world_to_cell(self, x: float, y: float) -> Tuple[int, int]:
        return (
            int(math.floor((x - self.origin.x) / self.resolution)),
            int(math.floor((y - self.origin.y) / self.resolution)),
        )

    def cell_center(self, ix: int, iy: int) -> Tuple[float, float]:
        return (float(self._xs[ix]), float(self._ys[iy]))

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def window(self, x: float, y: float, radius: float):
        """Clipped cell slice covering the square of half-size radius around (x, y)."""
        ix0, iy0 = self.world_to_cell(x - radius, y - radius)
        ix1, iy1 = self.world_to_cell(x + radius, y + radius)
        ix0, iy0 = max(ix0, 0), max(iy0, 0)
        ix1, iy1 = min(ix1, self.width - 1), min(iy1, self.height - 1)
        if ix0 > ix1 or iy0 > iy1:
            return None
        return slice(iy0, iy1 + 1), slice(ix0, ix1 + 1)

    def cell_centers(self, rows: slice, cols: slice) -> Tuple[np.ndarray, np.ndarray]:
        return self._xs[cols][None, :], self._ys[rows][:, None]

    def social_quantized(self) -> np.ndarray:
        return np.clip(np.rint(self.layers["social"]), 0, LETHAL).astype(np.uint8)


# --- Layer updates ---

def update_obstacle_layer(stack: CostmapStack, scan: LidarScan, pose: Pose) -> CostmapStack:
    """Clear cells traversed by each beam, then mark beam endpoints that hit something."""
    obstacle = stack.layers["obstacle"]
    ranges = np.asarray(scan.ranges, dtype=float)
    angles = pose.theta + scan.beam_angles()
    cos_a, sin_a = np.cos(angles), np.sin(angles)

    step = stack.resolution * 0.5
    count = int(math.ceil(scan.max_range / step))
    dists = np.arange(count) * step
    before_end = dists[None, :] < ranges[:, None]
    xs = pose.x + cos_a[:, None] * dists[None, :]
    ys = pose.y + sin_a[:, None] * dists[None, :]
    ix = np.floor((xs - stack.origin.x) / stack.resolution).astype(np.int64)
    iy = np.floor((ys - stack.origin.y) / stack.resolution).astype(np.int64)
    clear = before_end & (ix >= 0) & (ix < stack.width) & (iy >= 0) & (iy < stack.height)
    obstacle[iy[clear], ix[clear]] = 0

    hits = ranges < scan.max_range
    if hits.any():
        hx = pose.x + cos_a[hits] * ranges[hits]
        hy = pose.y + sin_a[hits] * ranges[hits]
        hix = np.floor((hx - stack.origin.x) / stack.resolution).astype(np.int64)
        hiy = np.floor((hy - stack.origin.y) / stack.resolution).astype(np.int64)
        inside = (hix >= 0) & (hix < stack.width) & (hiy >= 0) & (hiy < stack.height)
        obstacle[hiy[inside], hix[inside]] = LETHAL
    return stack


def social_cost(entity: SocialEntityAttr, d: np.ndarray) -> np.ndarray:
    """Cost field of one marker at distances d (meters)."""
    c_base, lam, radius = entity.cost_value, entity.decay_rate, entity.inflation_radius
    if entity.band is None:
        return np.where(d <= radius, c_base * np.exp(-lam * d), 0.0)
    d_min, d_max = entity.band
    tail = np.where(d <= d_max + radius, c_base * np.exp(-lam * (d - d_max)), 0.0)
    return np.where(d < d_min, float(LETHAL), np.where(d <= d_max, c_base / 2.0, tail))


def entity_extent(entity: SocialEntityAttr) -> float:
    if entity.band is None:
        return entity.inflation_radius
    return entity.band[1] + entity.inflation_radius


def apply_social_entities(stack: CostmapStack, entities: Iterable[SocialEntityAttr]) -> CostmapStack:
    """Rebuild the social layer from scratch; overlapping markers keep the per-cell maximum."""
    social = stack.layers["social"]
    social.fill(0.0)
    for entity in entities:
        if entity.cost_value > LETHAL or entity.cost_value < 0:
            raise ValueError(f"marker '{entity.entity_id}' cost_value {entity.cost_value} outside [0, {LETHAL}]")
        x, y = entity.position
        win = stack.window(x, y, entity_extent(entity))
        if win is None:
            continue
        rows, cols = win
        cx, cy = stack.cell_centers(rows, cols)
        d = np.hypot(cx - x, cy - y)
        np.maximum(social[rows, cols], social_cost(entity, d), out=social[rows, cols])
    return stack


def merge_layers(stack: CostmapStack) -> CostmapStack:
    np.maximum(stack.layers["static"], stack.layers["obstacle"], out=stack.physical)
    np.maximum(stack.physical, stack.social_quantized(), out=stack.master)
    return stack


def sample(stack: CostmapStack, point: Sequence[float]) -> Tuple[int, Tuple[float, float]]:
    """Master cost of the containing cell and its finite-difference gradient (cost per meter)."""
    ix, iy = stack.world_to_cell(point[0], point[1])
    if not stack.in_bounds(ix, iy):
        raise OutOfBoundsError(point)
    m = stack.master

    def diff(lo_val, hi_val, span):
        return (float(hi_val) - float(lo_val)) / (span * stack.resolution)

    x_lo, x_hi = max(ix - 1, 0), min(ix + 1, stack.width - 1)
    y_lo, y_hi = max(iy - 1, 0), min(iy + 1, stack.height - 1)
    gx = diff(m[iy, x_lo], m[iy, x_hi], x_hi - x_lo) if x_hi > x_lo else 0.0
    gy = diff(m[y_lo, ix], m[y_hi, ix], y_hi - y_lo) if y_hi > y_lo else 0.0
    return int(stack.master[iy, ix]), (float(gx), float(gy))


def dump_layer_pgm(stack: CostmapStack, layer: str, path: Path) -> Path:
    if layer == "master":
        values = stack.master
    elif layer == "social":
        values = stack.social_quantized()
    elif layer in stack.layers:
        values = stack.layers[layer]
    else:
        raise KeyError(f"unknown layer '{layer}'")
    # inverted so lethal reads dark, like map_server images
    written = write_pgm(path, 255 - values.astype(np.int64))
    logger.debug(f"Wrote {layer} layer to {written}")
    return written
