"""Planar oriented-box geometry and the prohibited-volume map.

Objects are oriented rectangles on the table plane with a discrete stacking
``level``. Two objects interact only when they share a level. The
prohibited-volume map is the running record of what is already occupied; a new
object may be placed only where the map reports no conflict.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Protocol

from .errors import DuplicateId, PlacementConflict, PlacementExhausted

TWO_PI = 2.0 * math.pi

#: Overlaps at or below this depth count as touching, which is allowed.
EPS_PEN = 1e-9

DEFAULT_MAX_ATTEMPTS = 256


def normalize_angle(theta: float) -> float:
    """Wrap ``theta`` into [-pi, pi). Values already in range pass unchanged."""
    if -math.pi <= theta < math.pi:
        return theta
    t = math.fmod(theta + math.pi, TWO_PI)
    if t < 0.0:
        t += TWO_PI
    t -= math.pi
    if t >= math.pi:
        t -= TWO_PI
    return t


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0
    level: int = 0

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))
        if not isinstance(self.level, int) or self.level < 0:
            raise ValueError(f"level must be a non-negative integer, got {self.level!r}")

    def to_list(self) -> list:
        return [self.x, self.y, self.theta, self.level]

    @classmethod
    def from_list(cls, values) -> "Pose":
        x, y, theta, level = values
        return cls(float(x), float(y), float(theta), int(level))


@dataclass(frozen=True)
class Footprint:
    half_x: float
    half_y: float
    height: float = 0.05

    def __post_init__(self):
        if not (self.half_x > 0 and self.half_y > 0 and self.height > 0):
            raise ValueError(f"footprint extents must be positive: {self}")

    @property
    def radius(self) -> float:
        return math.hypot(self.half_x, self.half_y)

    @property
    def area(self) -> float:
        return 4.0 * self.half_x * self.half_y

    def inflated(self, margin: float) -> "Footprint":
        if margin == 0.0:
            return self
        return Footprint(self.half_x + margin, self.half_y + margin, self.height)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned sampling region."""

    min_x: float
    max_x: float
    min_y: float
    max_y: float

    @property
    def empty(self) -> bool:
        return not (self.min_x <= self.max_x and self.min_y <= self.max_y)

    def intersect(self, other: "RegionLike") -> "Rect":
        return Rect(
            max(self.min_x, other.min_x),
            min(self.max_x, other.max_x),
            max(self.min_y, other.min_y),
            min(self.max_y, other.max_y),
        )


class RegionLike(Protocol):
    min_x: float
    max_x: float
    min_y: float
    max_y: float


@dataclass(frozen=True)
class WorkspaceBounds:
    min_x: float = -0.6
    max_x: float = 0.6
    min_y: float = -0.4
    max_y: float = 0.4
    reach_center: tuple[float, float] = (0.0, 0.0)
    reach_radius: float = 0.75

    def __post_init__(self):
        if not (self.min_x < self.max_x and self.min_y < self.max_y):
            raise ValueError("workspace bounds must satisfy min < max")
        if not self.reach_radius > 0:
            raise ValueError("reach_radius must be positive")
        object.__setattr__(self, "reach_center", tuple(float(c) for c in self.reach_center))

    @property
    def rect(self) -> Rect:
        return Rect(self.min_x, self.max_x, self.min_y, self.max_y)

    @property
    def area(self) -> float:
        return (self.max_x - self.min_x) * (self.max_y - self.min_y)

    def to_dict(self) -> dict:
        return {
            "min_x": self.min_x,
            "max_x": self.max_x,
            "min_y": self.min_y,
            "max_y": self.max_y,
            "reach_center": list(self.reach_center),
            "reach_radius": self.reach_radius,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorkspaceBounds":
        d = dict(d)
        if "reach_center" in d:
            d["reach_center"] = tuple(d["reach_center"])
        return cls(**d)


def corners(pose: Pose, fp: Footprint) -> list[tuple[float, float]]:
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    out = []
    for sx, sy in ((1, 1), (-1, 1), (-1, -1), (1, -1)):
        lx, ly = sx * fp.half_x, sy * fp.half_y
        out.append((pose.x + c * lx - s * ly, pose.y + s * lx + c * ly))
    return out


def to_local(px: float, py: float, frame: Pose) -> tuple[float, float]:
    """Express world point ``(px, py)`` in the frame of ``frame``."""
    c, s = math.cos(frame.theta), math.sin(frame.theta)
    dx, dy = px - frame.x, py - frame.y
    return c * dx + s * dy, -s * dx + c * dy


def to_world(lx: float, ly: float, frame: Pose) -> tuple[float, float]:
    c, s = math.cos(frame.theta), math.sin(frame.theta)
    return frame.x + c * lx - s * ly, frame.y + s * lx + c * ly


def box_excess(pose: Pose, fp: Footprint, frame: Pose, half_x: float, half_y: float) -> float:
    """How far the box ``(pose, fp)`` sticks out of a rectangle centred on ``frame``.

    Returns the largest per-axis excursion of any corner beyond the rectangle,
    or 0 if the box lies entirely inside.
    """
    worst = 0.0
    for cx, cy in corners(pose, fp):
        lx, ly = to_local(cx, cy, frame)
        worst = max(worst, abs(lx) - half_x, abs(ly) - half_y)
    return worst


def point_rect_distance(px: float, py: float, frame: Pose, half_x: float, half_y: float) -> float:
    """Euclidean distance from a point to a rectangle centred on ``frame`` (0 inside)."""
    lx, ly = to_local(px, py, frame)
    ex = max(0.0, abs(lx) - half_x)
    ey = max(0.0, abs(ly) - half_y)
    return math.hypot(ex, ey)


def penetration_depth(pose_a: Pose, fp_a: Footprint, pose_b: Pose, fp_b: Footprint) -> float:
    """Minimum translation distance separating two oriented rectangles.

    Separating-axis test over the two face normals of each box. Returns 0 when
    the boxes are disjoint or merely touching. Levels are not consulted.
    """
    dx = pose_b.x - pose_a.x
    dy = pose_b.y - pose_a.y
    reach = fp_a.radius + fp_b.radius
    if dx * dx + dy * dy >= reach * reach:
        return 0.0
    ca, sa = math.cos(pose_a.theta), math.sin(pose_a.theta)
    cb, sb = math.cos(pose_b.theta), math.sin(pose_b.theta)
    best = math.inf
    for ax, ay in ((ca, sa), (-sa, ca), (cb, sb), (-sb, cb)):
        dist = abs(dx * ax + dy * ay)
        ra = fp_a.half_x * abs(ca * ax + sa * ay) + fp_a.half_y * abs(ca * ay - sa * ax)
        rb = fp_b.half_x * abs(cb * ax + sb * ay) + fp_b.half_y * abs(cb * ay - sb * ax)
        overlap = ra + rb - dist
        if overlap <= 0.0:
            return 0.0
        if overlap < best:
            best = overlap
    return best


def in_workspace(pose: Pose, fp: Footprint, ws: WorkspaceBounds) -> bool:
    cx, cy = ws.reach_center
    if math.hypot(pose.x - cx, pose.y - cy) > ws.reach_radius:
        return False
    for x, y in corners(pose, fp):
        if x < ws.min_x or x > ws.max_x or y < ws.min_y or y > ws.max_y:
            return False
    return True


class MapEntry(NamedTuple):
    object_id: str
    pose: Pose
    footprint: Footprint
    margin: float = 0.0


@dataclass(frozen=True)
class ProhibitedVolumeMap:
    """Occupied regions of the workspace, one entry per placed object.

    Updates return a new map; instances are never mutated.
    """

    workspace: WorkspaceBounds
    entries: tuple[MapEntry, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, object_id: str) -> bool:
        return any(e.object_id == object_id for e in self.entries)

    @property
    def ids(self) -> list[str]:
        return [e.object_id for e in self.entries]

    def get(self, object_id: str) -> MapEntry | None:
        for e in self.entries:
            if e.object_id == object_id:
                return e
        return None


def map_conflicts(
    pvm: ProhibitedVolumeMap,
    pose: Pose,
    fp: Footprint,
    level: int | None = None,
    margin: float = 0.0,
) -> list[tuple[str, float]]:
    """Same-level entries that the candidate box penetrates beyond ``EPS_PEN``."""
    if level is None:
        level = pose.level
    out = []
    for entry in pvm.entries:
        if entry.pose.level != level:
            continue
        grow = entry.margin + margin
        if grow:
            depth = penetration_depth(pose, fp.inflated(grow), entry.pose, entry.footprint)
        else:
            depth = penetration_depth(pose, fp, entry.pose, entry.footprint)
        if depth > EPS_PEN:
            out.append((entry.object_id, depth))
    return out


def map_insert(
    pvm: ProhibitedVolumeMap,
    object_id: str,
    pose: Pose,
    fp: Footprint,
    margin: float = 0.0,
    allow_overlap: bool = False,
) -> ProhibitedVolumeMap:
    """Return a copy of ``pvm`` with one more entry.

    ``allow_overlap`` skips the conflict and workspace checks; the simulator
    uses it only for degenerate slip landings.
    """
    if object_id in pvm:
        raise DuplicateId(object_id)
    if not allow_overlap:
        if not in_workspace(pose, fp, pvm.workspace):
            raise PlacementConflict(f"{object_id} lies outside the workspace")
        hits = map_conflicts(pvm, pose, fp, pose.level, margin)
        if hits:
            raise PlacementConflict(f"{object_id} overlaps {[h[0] for h in hits]}")
    return ProhibitedVolumeMap(pvm.workspace, pvm.entries + (MapEntry(object_id, pose, fp, margin),))


def map_remove(pvm: ProhibitedVolumeMap, object_id: str) -> ProhibitedVolumeMap:
    kept = tuple(e for e in pvm.entries if e.object_id != object_id)
    if len(kept) == len(pvm.entries):
        raise KeyError(object_id)
    return ProhibitedVolumeMap(pvm.workspace, kept)


def is_free(pvm: ProhibitedVolumeMap, pose: Pose, fp: Footprint, margin: float = 0.0) -> bool:
    if not in_workspace(pose, fp, pvm.workspace):
        return False
    return not map_conflicts(pvm, pose, fp, pose.level, margin)


def sample_free_pose(
    pvm: ProhibitedVolumeMap,
    fp: Footprint,
    region: RegionLike,
    rng: random.Random,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    level: int = 0,
    theta: float | None = None,
    margin: float = 0.0,
) -> Pose:
    """Rejection-sample a pose uniformly over ``region`` x [-pi, pi).

    Each attempt consumes exactly three draws (two when ``theta`` is fixed), so
    the sequence of candidates depends only on the generator state.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    for _ in range(max_attempts):
        x = rng.uniform(region.min_x, region.max_x)
        y = rng.uniform(region.min_y, region.max_y)
        t = rng.uniform(-math.pi, math.pi) if theta is None else theta
        pose = Pose(x, y, t, level)
        if is_free(pvm, pose, fp, margin):
            return pose
    raise PlacementExhausted(f"no free pose after {max_attempts} attempts")


def pairwise_overlaps(items: Iterable[tuple[str, Pose, Footprint]]) -> list[tuple[str, str, float]]:
    """All same-level pairs with penetration above ``EPS_PEN`` (brute force)."""
    items = list(items)
    out = []
    for i in range(len(items)):
        ia, pa, fa = items[i]
        for j in range(i + 1, len(items)):
            ib, pb, fb = items[j]
            if pa.level != pb.level:
                continue
            d = penetration_depth(pa, fa, pb, fb)
            if d > EPS_PEN:
                out.append((ia, ib, d))
    return out


def sample_free_pose_in_frame(
    pvm: ProhibitedVolumeMap,
    fp: Footprint,
    frame: Pose,
    half_x: float,
    half_y: float,
    rng: random.Random,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    level: int = 0,
    theta_offset: float = 0.0,
) -> Pose:
    """Like :func:`sample_free_pose`, but over a rectangle attached to ``frame``.

    The candidate centre is drawn uniformly in ``[-half_x, half_x] x [-half_y,
    half_y]`` of the frame, and its heading is the frame heading plus
    ``theta_offset``.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    if half_x < 0 or half_y < 0:
        raise PlacementExhausted("sampling rectangle is empty")
    for _ in range(max_attempts):
        lx = rng.uniform(-half_x, half_x)
        ly = rng.uniform(-half_y, half_y)
        x, y = to_world(lx, ly, frame)
        pose = Pose(x, y, frame.theta + theta_offset, level)
        if is_free(pvm, pose, fp):
            return pose
    raise PlacementExhausted(f"no free pose in frame after {max_attempts} attempts")
