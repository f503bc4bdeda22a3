"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import math
from itertools import product

import numpy as np
from shapely.geometry import MultiPoint, Point, Polygon

from tabletop_datagen.geometry import Footprint, Pose


def polygon(pose: Pose, fp: Footprint) -> Polygon:
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    pts = []
    for sx, sy in ((1, 1), (-1, 1), (-1, -1), (1, -1)):
        lx, ly = sx * fp.half_x, sy * fp.half_y
        pts.append((pose.x + c * lx - s * ly, pose.y + s * lx + c * ly))
    return Polygon(pts)


def minkowski_depth(pa: Pose, fa: Footprint, pb: Pose, fb: Footprint) -> float:
    """Penetration depth as the distance from the origin to the boundary of A - B.

    Works from the vertex sets through shapely's convex hull, sharing no code
    with the separating-axis implementation.
    """
    a = list(polygon(pa, fa).exterior.coords)[:-1]
    b = list(polygon(pb, fb).exterior.coords)[:-1]
    hull = MultiPoint([(ax - bx, ay - by) for (ax, ay), (bx, by) in product(a, b)]).convex_hull
    origin = Point(0.0, 0.0)
    if not hull.contains(origin):
        return 0.0
    return hull.exterior.distance(origin)


def raster_overlap(pa: Pose, fa: Footprint, pb: Pose, fb: Footprint, res: float = 1e-3) -> float:
    """Area of intersection estimated on a grid of ``res``-sized cells."""
    pga, pgb = polygon(pa, fa), polygon(pb, fb)
    minx, miny, maxx, maxy = pga.intersection(pgb).buffer(2 * res).bounds if pga.intersects(pgb) else (0, 0, 0, 0)
    if maxx <= minx:
        return 0.0
    xs = np.arange(minx, maxx, res) + res / 2
    ys = np.arange(miny, maxy, res) + res / 2
    gx, gy = np.meshgrid(xs, ys)
    return float((inside(gx, gy, pa, fa) & inside(gx, gy, pb, fb)).sum()) * res * res


def inside(gx, gy, pose: Pose, fp: Footprint):
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    dx, dy = gx - pose.x, gy - pose.y
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    return (np.abs(lx) <= fp.half_x) & (np.abs(ly) <= fp.half_y)


def binomial_tail(n: int, p: float, k: int) -> float:
    """P(X >= k) for X ~ Binomial(n, p), summed exactly."""
    return sum(math.comb(n, i) * p**i * (1 - p) ** (n - i) for i in range(k, n + 1))


def noisy_purity_enumerated(p: float, alpha: float, beta: float, k: int) -> float:
    """Purity of a product-rule filter behind a noisy critic, by enumeration.

    Walks all 2**k truth patterns; each step reports 1 with probability
    1 - beta on success and alpha on failure. Purity is
    P(all true | all verdicts 1).
    """
    accepted = pure = 0.0
    for pattern in product((True, False), repeat=k):
        prob = 1.0
        pass_all = 1.0
        for ok in pattern:
            prob *= p if ok else 1 - p
            pass_all *= (1 - beta) if ok else alpha
        accepted += prob * pass_all
        if all(pattern):
            pure += prob * pass_all
    return pure / accepted
