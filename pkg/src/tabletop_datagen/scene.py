"""Scene synthesis: scattering, goal-layout proposal, refinement and rasters.

The flow for one scene is

1. :func:`scatter_initial` drops the retrieved objects at random
   conflict-free poses and :func:`rasterize` renders the top-down label image.
2. :func:`propose_layout` produces goal poses that try to honour the scene
   description's spatial relations.
3. The goal image is matched back to object centres
   (:func:`match_templates`, :func:`project_to_world`) and :func:`refine`
   removes remaining collisions and relation violations by minimising
   ``collision_loss + lambda * semantic_loss``.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import seeding
from .assets import AssetClass, ObjectInstance
from .errors import MissingObject, OutOfBounds, PlacementExhausted, UnsatisfiableRelation
from .geometry import (
    DEFAULT_MAX_ATTEMPTS,
    EPS_PEN,
    Footprint,
    Pose,
    ProhibitedVolumeMap,
    Rect,
    WorkspaceBounds,
    box_excess,
    in_workspace,
    map_insert,
    map_remove,
    penetration_depth,
    point_rect_distance,
    sample_free_pose,
    sample_free_pose_in_frame,
)

RELATION_KINDS = ("inside", "on", "left_of", "right_of", "behind", "in_front_of", "near")

#: Fixed penalty for a stacking relation whose subject sits on the wrong level.
KAPPA_LEVEL = 1.0

#: Heading perturbation per metre of refinement step.
ANGLE_PER_METER = 10.0


@dataclass(frozen=True)
class SpatialRelation:
    kind: str
    subject: str
    reference: str
    margin: float = 0.0

    def __post_init__(self):
        if self.kind not in RELATION_KINDS:
            raise ValueError(f"unknown relation kind {self.kind!r}")
        if self.subject == self.reference:
            raise ValueError("relation subject and reference must differ")
        if self.margin < 0:
            raise ValueError("relation margin must be >= 0")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "subject": self.subject, "reference": self.reference, "margin": self.margin}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SpatialRelation":
        return cls(d["kind"], d["subject"], d["reference"], float(d.get("margin", 0.0)))


@dataclass(frozen=True)
class SceneDescription:
    relations: tuple[SpatialRelation, ...] = ()
    prose: str = ""

    def __post_init__(self):
        object.__setattr__(self, "relations", tuple(self.relations))

    @property
    def object_ids(self) -> set[str]:
        ids = set()
        for r in self.relations:
            ids.add(r.subject)
            ids.add(r.reference)
        return ids


@dataclass(frozen=True)
class PlacedObject:
    asset: AssetClass
    pose: Pose


@dataclass(frozen=True)
class Scene:
    """Objects with poses plus the matching prohibited-volume map.

    Treated as a value: the ``place``/``remove`` helpers return new scenes.
    """

    bounds: WorkspaceBounds
    objects: Mapping[str, PlacedObject] = field(default_factory=dict)
    map: ProhibitedVolumeMap = None

    def __post_init__(self):
        if self.map is None:
            object.__setattr__(self, "map", ProhibitedVolumeMap(self.bounds))

    def place(self, object_id: str, asset: AssetClass, pose: Pose, allow_overlap: bool = False) -> "Scene":
        new_map = map_insert(self.map, object_id, pose, asset.footprint, allow_overlap=allow_overlap)
        objects = dict(self.objects)
        objects[object_id] = PlacedObject(asset, pose)
        return Scene(self.bounds, objects, new_map)

    def remove(self, object_id: str) -> "Scene":
        objects = dict(self.objects)
        del objects[object_id]
        return Scene(self.bounds, objects, map_remove(self.map, object_id))

    def poses(self) -> dict[str, Pose]:
        return {k: v.pose for k, v in self.objects.items()}

    def assets(self) -> dict[str, AssetClass]:
        return {k: v.asset for k, v in self.objects.items()}

    def __contains__(self, object_id: str) -> bool:
        return object_id in self.objects


def build_scene(
    assets: Mapping[str, AssetClass],
    poses: Mapping[str, Pose],
    bounds: WorkspaceBounds,
    allow_overlap: bool = False,
) -> Scene:
    """Insert objects in ascending level order so supports precede what they carry."""
    scene = Scene(bounds)
    for oid in sorted(poses, key=lambda k: (poses[k].level, k)):
        scene = scene.place(oid, assets[oid], poses[oid], allow_overlap=allow_overlap)
    return scene


def scatter_initial(
    instances: Sequence[ObjectInstance],
    bounds: WorkspaceBounds,
    rng: random.Random,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> Scene:
    """Place every instance on the tabletop at a random conflict-free pose.

    Larger objects go first; ties keep the input order.
    """
    if not instances:
        raise ValueError("scatter_initial needs at least one instance")
    total = sum(inst.footprint.area for inst in instances)
    if total > bounds.area:
        raise PlacementExhausted(f"total footprint {total:.3f} m^2 exceeds workspace {bounds.area:.3f} m^2")
    order = sorted(range(len(instances)), key=lambda i: -instances[i].footprint.area)
    scene = Scene(bounds)
    for i in order:
        inst = instances[i]
        pose = sample_free_pose(scene.map, inst.footprint, bounds, rng, max_attempts)
        scene = scene.place(inst.instance_id, inst.asset, pose)
    return scene


# -- losses -----------------------------------------------------------------


def _footprint(shape) -> Footprint:
    return shape.footprint if isinstance(shape, AssetClass) else shape


def _interior(shape) -> tuple[float, float]:
    if isinstance(shape, AssetClass):
        if shape.interior is not None:
            return shape.interior
        return shape.footprint.half_x, shape.footprint.half_y
    return shape.half_x, shape.half_y


def collision_loss(poses: Mapping[str, Pose], footprints: Mapping[str, Footprint | AssetClass]) -> float:
    """Sum of squared penetration depths over unordered same-level pairs."""
    ids = sorted(poses)
    total = 0.0
    for i, a in enumerate(ids):
        pa, fa = poses[a], _footprint(footprints[a])
        for b in ids[i + 1 :]:
            pb = poses[b]
            if pa.level != pb.level:
                continue
            d = penetration_depth(pa, fa, pb, _footprint(footprints[b]))
            if d > EPS_PEN:
                total += d * d
    return total


def relation_violation(rel: SpatialRelation, poses: Mapping[str, Pose], shapes: Mapping) -> float:
    """Squared violation of one relation; 0 when it holds.

    Violations up to ``EPS_PEN`` are rounding noise and count as satisfied.
    """
    s, r = poses[rel.subject], poses[rel.reference]
    m = rel.margin
    kind = rel.kind
    if kind == "inside":
        if s.level != r.level + 1:
            return KAPPA_LEVEL
        ihx, ihy = _interior(shapes[rel.reference])
        v = box_excess(s, _footprint(shapes[rel.subject]), r, ihx, ihy)
        return v * v if v > EPS_PEN else 0.0
    if kind == "on":
        if s.level != r.level + 1:
            return KAPPA_LEVEL
        fr = _footprint(shapes[rel.reference])
        v = point_rect_distance(s.x, s.y, r, fr.half_x, fr.half_y)
        return v * v if v > EPS_PEN else 0.0
    if kind == "left_of":
        v = s.x + m - r.x
    elif kind == "right_of":
        v = r.x + m - s.x
    elif kind == "behind":
        v = r.y + m - s.y
    elif kind == "in_front_of":
        v = s.y + m - r.y
    else:  # near
        v = math.hypot(s.x - r.x, s.y - r.y) - m
    return v * v if v > EPS_PEN else 0.0


def semantic_loss(poses: Mapping[str, Pose], description: SceneDescription, shapes: Mapping = None) -> float:
    """Sum of squared relation violations.

    ``shapes`` maps object ids to :class:`AssetClass` (or bare footprints);
    only ``inside`` and ``on`` relations need it.
    """
    shapes = shapes or {}
    return sum(relation_violation(rel, poses, shapes) for rel in description.relations)


# -- layout proposal --------------------------------------------------------


def _relation_order(description: SceneDescription) -> list[str]:
    subjects: list[str] = []
    for rel in description.relations:
        if rel.subject not in subjects:
            subjects.append(rel.subject)
    deps = {s: {r.reference for r in description.relations if r.subject == s} & set(subjects) for s in subjects}
    done: list[str] = []
    pending = list(subjects)
    while pending:
        for s in pending:
            if deps[s] <= set(done):
                break
        else:
            s = pending[0]  # cycle: fall back to declaration order
        pending.remove(s)
        done.append(s)
    return done


def _planar_region(rels: Iterable[SpatialRelation], poses: Mapping[str, Pose], bounds: WorkspaceBounds) -> Rect:
    region = bounds.rect
    for rel in rels:
        r = poses[rel.reference]
        m = rel.margin
        if rel.kind == "left_of":
            region = region.intersect(Rect(-math.inf, r.x - m, -math.inf, math.inf))
        elif rel.kind == "right_of":
            region = region.intersect(Rect(r.x + m, math.inf, -math.inf, math.inf))
        elif rel.kind == "behind":
            region = region.intersect(Rect(-math.inf, math.inf, r.y + m, math.inf))
        elif rel.kind == "in_front_of":
            region = region.intersect(Rect(-math.inf, math.inf, -math.inf, r.y - m))
        elif rel.kind == "near":
            h = m / math.sqrt(2.0)
            region = region.intersect(Rect(r.x - h, r.x + h, r.y - h, r.y + h))
    return region


def propose_layout(
    scene: Scene,
    description: SceneDescription,
    rng: random.Random,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> dict[str, Pose]:
    """Goal poses that try to satisfy every relation of ``description``.

    Greedy: references keep their poses, subjects are re-sampled inside the
    region their relations allow. A subject whose region has no free spot keeps
    its current pose, so the result may still violate relations; :func:`refine`
    is expected to clean those up.
    """
    missing = description.object_ids - set(scene.objects)
    if missing:
        raise MissingObject(f"description references unknown objects {sorted(missing)}")
    assets = scene.assets()
    poses = scene.poses()
    order = _relation_order(description)
    work = scene
    for s in order:
        work = work.remove(s)
    for s in order:
        rels = [r for r in description.relations if r.subject == s]
        fp = assets[s].footprint
        stacked = [r for r in rels if r.kind in ("inside", "on")]
        pose = None
        if stacked:
            rel = stacked[0]
            ref_pose = poses[rel.reference]
            if rel.kind == "inside":
                ihx, ihy = _interior(assets[rel.reference])
            else:
                rf = assets[rel.reference].footprint
                ihx, ihy = rf.half_x, rf.half_y
            options = []
            for offset, (hx, hy) in ((0.0, (fp.half_x, fp.half_y)), (math.pi / 2, (fp.half_y, fp.half_x))):
                if rel.kind == "inside":
                    lx, ly = ihx - hx, ihy - hy
                else:
                    lx, ly = ihx, ihy
                if lx >= 0 and ly >= 0:
                    options.append((offset, lx, ly))
            if not options:
                raise UnsatisfiableRelation(f"{s} does not fit inside {rel.reference}")
            for offset, lx, ly in options:
                try:
                    pose = sample_free_pose_in_frame(
                        work.map, fp, ref_pose, lx, ly, rng, max_attempts, ref_pose.level + 1, offset
                    )
                    break
                except PlacementExhausted:
                    continue
        else:
            region = _planar_region(rels, poses, scene.bounds)
            if region.empty:
                raise UnsatisfiableRelation(f"no region of the workspace satisfies the relations of {s}")
            try:
                pose = sample_free_pose(work.map, fp, region, rng, max_attempts, level=poses[s].level)
            except PlacementExhausted:
                pose = None
        if pose is None:
            pose = poses[s]
            work = work.place(s, assets[s], pose, allow_overlap=True)
        else:
            work = work.place(s, assets[s], pose)
        poses[s] = pose
    return poses


# -- refinement -------------------------------------------------------------


@dataclass(frozen=True)
class RefineConfig:
    lam: float = 1.0
    max_iters: int = 500
    step_init: float = 0.05
    step_decay: float = 0.9
    decay_every: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0 < self.step_decay < 1:
            raise ValueError("step_decay must lie in (0, 1)")
        if not self.step_init > 0 or self.decay_every < 1:
            raise ValueError("step_init must be > 0 and decay_every >= 1")

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "max_iters": self.max_iters,
            "step_init": self.step_init,
            "step_decay": self.step_decay,
            "decay_every": self.decay_every,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RefineConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


@dataclass
class RefineResult:
    poses: dict[str, Pose]
    cost: float
    collision_loss: float
    semantic_loss: float
    accepted_costs: list[float]
    iterations: int

    @property
    def collision_free(self) -> bool:
        return self.collision_loss == 0.0

    @property
    def not_collision_free(self) -> bool:
        return not self.collision_free


def refine(
    poses: Mapping[str, Pose],
    description: SceneDescription,
    footprints: Mapping,
    cfg: RefineConfig = RefineConfig(),
    bounds: WorkspaceBounds | None = None,
) -> RefineResult:
    """Seeded random coordinate descent on ``collision + lam * semantic``.

    Each iteration perturbs one coordinate (x, y or heading) of one object
    that currently contributes to the cost, and keeps the move only if the
    total cost strictly drops. The step shrinks by ``step_decay`` every
    ``decay_every`` iterations. With ``bounds`` given, moves leaving the
    workspace are rejected. Levels are never changed.
    """
    rng = seeding.stream(cfg.seed, "refine")
    ids = sorted(poses)
    index = {oid: i for i, oid in enumerate(ids)}
    cur = dict(poses)
    fps = [_footprint(footprints[oid]) for oid in ids]
    n = len(ids)

    depth = [[0.0] * n for _ in range(n)]

    def pair_depth(i: int, j: int, pi: Pose, pj: Pose) -> float:
        if pi.level != pj.level:
            return 0.0
        d = penetration_depth(pi, fps[i], pj, fps[j])
        return d if d > EPS_PEN else 0.0

    for i in range(n):
        for j in range(i + 1, n):
            depth[i][j] = depth[j][i] = pair_depth(i, j, cur[ids[i]], cur[ids[j]])

    def coll_total(mat) -> float:
        total = 0.0
        for i in range(n):
            row = mat[i]
            for j in range(i + 1, n):
                d = row[j]
                if d:
                    total += d * d
        return total

    rels_of = {oid: [] for oid in ids}
    for rel in description.relations:
        rels_of[rel.subject].append(rel)
        rels_of[rel.reference].append(rel)

    coll = coll_total(depth)
    sem = semantic_loss(cur, description, footprints)
    cost = coll + cfg.lam * sem
    accepted = [cost]
    iterations = 0
    for it in range(cfg.max_iters):
        if cost == 0.0:
            break
        active = [
            i
            for i in range(n)
            if any(depth[i]) or any(relation_violation(r, cur, footprints) for r in rels_of[ids[i]])
        ]
        if not active:
            break
        iterations += 1
        step = cfg.step_init * cfg.step_decay ** (it // cfg.decay_every)
        k = active[rng.randrange(len(active))]
        coord = rng.randrange(3)
        delta = rng.uniform(-step, step)
        old = cur[ids[k]]
        if coord == 0:
            cand = Pose(old.x + delta, old.y, old.theta, old.level)
        elif coord == 1:
            cand = Pose(old.x, old.y + delta, old.theta, old.level)
        else:
            cand = Pose(old.x, old.y, old.theta + delta * ANGLE_PER_METER, old.level)
        if bounds is not None and not in_workspace(cand, fps[k], bounds):
            continue
        row = [pair_depth(k, j, cand, cur[ids[j]]) if j != k else 0.0 for j in range(n)]
        trial = [r[:] for r in depth]
        for j in range(n):
            trial[k][j] = trial[j][k] = row[j]
        cur[ids[k]] = cand
        new_coll = coll_total(trial)
        new_sem = semantic_loss(cur, description, footprints)
        new_cost = new_coll + cfg.lam * new_sem
        if new_cost < cost:
            depth, coll, sem, cost = trial, new_coll, new_sem, new_cost
            accepted.append(cost)
        else:
            cur[ids[k]] = old
    return RefineResult(cur, cost, coll, sem, accepted, iterations)


# -- rasters ----------------------------------------------------------------


@dataclass(frozen=True)
class Raster:
    """Top-down label image. ``pixels[v, u]`` holds 0 or a 1-based label.

    Label ``i`` refers to ``labels[i - 1]``. Pixel ``(u, v)`` covers the
    world square whose centre is ``origin + scale * (u + 0.5, v + 0.5)``.
    """

    width: int
    height: int
    scale: float
    origin: tuple[float, float]
    pixels: np.ndarray = field(compare=False)
    labels: tuple[str, ...] = ()

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return (
            (self.width, self.height, self.scale, self.origin, self.labels)
            == (other.width, other.height, other.scale, other.origin, other.labels)
            and np.array_equal(self.pixels, other.pixels)
        )

    __hash__ = None

    def meta(self) -> dict:
        return {
            "scale": self.scale,
            "origin": list(self.origin),
            "width": self.width,
            "height": self.height,
            "labels": list(self.labels),
        }

    def label_of(self, object_id: str) -> int:
        return self.labels.index(object_id) + 1


def rasterize(scene: Scene, scale: float) -> Raster:
    """Render the scene top-down; higher levels paint over lower ones."""
    if not scale > 0:
        raise ValueError("scale must be positive")
    b = scene.bounds
    width = max(1, int(math.ceil((b.max_x - b.min_x) / scale - 1e-9)))
    height = max(1, int(math.ceil((b.max_y - b.min_y) / scale - 1e-9)))
    labels = tuple(sorted(scene.objects))
    if len(labels) > 255:
        raise ValueError("at most 255 objects fit in a byte raster")
    pixels = np.zeros((height, width), dtype=np.uint8)
    ox, oy = b.min_x, b.min_y
    order = sorted(labels, key=lambda k: (scene.objects[k].pose.level, k))
    for oid in order:
        obj = scene.objects[oid]
        pose, fp = obj.pose, obj.asset.footprint
        r = fp.radius
        u0 = max(0, int(math.floor((pose.x - r - ox) / scale)))
        u1 = min(width - 1, int(math.ceil((pose.x + r - ox) / scale)))
        v0 = max(0, int(math.floor((pose.y - r - oy) / scale)))
        v1 = min(height - 1, int(math.ceil((pose.y + r - oy) / scale)))
        if u1 < u0 or v1 < v0:
            continue
        us = ox + scale * (np.arange(u0, u1 + 1) + 0.5)
        vs = oy + scale * (np.arange(v0, v1 + 1) + 0.5)
        gx, gy = np.meshgrid(us - pose.x, vs - pose.y)
        c, s = math.cos(pose.theta), math.sin(pose.theta)
        lx = c * gx + s * gy
        ly = -s * gx + c * gy
        mask = (np.abs(lx) <= fp.half_x) & (np.abs(ly) <= fp.half_y)
        pixels[v0 : v1 + 1, u0 : u1 + 1][mask] = labels.index(oid) + 1
    return Raster(width, height, scale, (ox, oy), pixels, labels)


def match_templates(goal: Raster, init: Raster) -> dict[str, tuple[float, float]]:
    """Pixel centroid ``(u, v)`` in ``goal`` of every object labelled in ``init``.

    Labels carry object identity, so matching reduces to mask centroids.
    """
    if (goal.scale, goal.origin, goal.width, goal.height) != (init.scale, init.origin, init.width, init.height):
        raise ValueError("goal and init rasters must share scale, origin and size")
    flat = goal.pixels.ravel().astype(np.int64)
    counts = np.bincount(flat, minlength=len(goal.labels) + 1)
    us = np.tile(np.arange(goal.width, dtype=np.float64), goal.height)
    vs = np.repeat(np.arange(goal.height, dtype=np.float64), goal.width)
    sum_u = np.bincount(flat, weights=us, minlength=len(goal.labels) + 1)
    sum_v = np.bincount(flat, weights=vs, minlength=len(goal.labels) + 1)
    out = {}
    for oid in init.labels:
        if oid not in goal.labels:
            raise MissingObject(f"{oid} is not present in the goal raster")
        lab = goal.labels.index(oid) + 1
        if counts[lab] == 0:
            raise MissingObject(f"{oid} has no visible pixels in the goal raster")
        out[oid] = (float(sum_u[lab] / counts[lab]), float(sum_v[lab] / counts[lab]))
    return out


def project_to_world(pixel: tuple[float, float], raster: Raster) -> tuple[float, float]:
    u, v = pixel
    if not (0 <= u <= raster.width - 1 and 0 <= v <= raster.height - 1):
        raise OutOfBounds(f"pixel {pixel} outside {raster.width}x{raster.height}")
    ox, oy = raster.origin
    return ox + raster.scale * (u + 0.5), oy + raster.scale * (v + 0.5)


def world_to_pixel(x: float, y: float, raster: Raster) -> tuple[int, int]:
    ox, oy = raster.origin
    u = int(math.floor((x - ox) / raster.scale))
    v = int(math.floor((y - oy) / raster.scale))
    if not (0 <= u < raster.width and 0 <= v < raster.height):
        raise OutOfBounds(f"point ({x}, {y}) outside raster")
    return u, v


def pgm_bytes(raster: Raster) -> bytes:
    """Binary PGM (P5). Row 0 of the image is ``v = 0`` (smallest y)."""
    header = f"P5\n{raster.width} {raster.height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(raster.pixels, dtype=np.uint8).tobytes()


def write_pgm(raster: Raster, path: str | Path) -> Path:
    """Write ``path`` plus a ``.json`` sidecar with scale, origin and labels."""
    path = Path(path)
    path.write_bytes(pgm_bytes(raster))
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(raster.meta(), sort_keys=True) + "\n", "utf-8")
    return sidecar


def read_pgm(path: str | Path) -> Raster:
    path = Path(path)
    data = path.read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path} is not a binary PGM")
    width, height = (int(t) for t in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=width * height).reshape(height, width).copy()
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text("utf-8"))
    return Raster(width, height, float(meta["scale"]), tuple(meta["origin"]), pixels, tuple(meta["labels"]))
