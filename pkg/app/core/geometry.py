import math
from typing import Sequence, Tuple

import numpy as np
import shapely
from shapely.geometry import LinearRing, Point as ShapelyPoint, Polygon

TWO_PI = 2.0 * math.pi

Point = Tuple[float, float]


def wrap_angle(angle: float) -> float:
    """Map an angle onto (-pi, pi]. -pi itself maps to +pi."""
    wrapped = math.fmod(angle, TWO_PI)
    if wrapped > math.pi:
        wrapped -= TWO_PI
    elif wrapped <= -math.pi:
        wrapped += TWO_PI
    return wrapped


def polygon_is_simple(vertices: Sequence[Point]) -> bool:
    if len(vertices) < 3:
        return False
    ring = LinearRing(vertices)
    return ring.is_simple and Polygon(ring).area > 1e-12


def polygon_centroid(shape: Polygon) -> Point:
    c = shape.centroid
    return float(c.x), float(c.y)


def point_in_polygon(shape: Polygon, point: Point) -> bool:
    """Boundary-inclusive: points on an edge or vertex count as inside."""
    return bool(shape.covers(ShapelyPoint(point)))


def points_in_polygon(shape: Polygon, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    # a point intersects a polygon exactly when the polygon covers it
    return shapely.intersects_xy(shape, xs, ys)
