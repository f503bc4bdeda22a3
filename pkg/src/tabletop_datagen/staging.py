"""Turn a grounded plan and its asset request into a start scene."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Mapping

from . import seeding
from .assets import AssetCatalog, AssetClass, instantiate, retrieve
from .errors import MissingObject, PlacementConflict
from .geometry import DEFAULT_MAX_ATTEMPTS, Pose, WorkspaceBounds
from .grounding import AssetRequest, Plan, bind_targets, validate_plan
from .scene import (
    RefineConfig,
    Scene,
    SceneDescription,
    build_scene,
    match_templates,
    project_to_world,
    propose_layout,
    rasterize,
    refine,
    scatter_initial,
)


@dataclass(frozen=True)
class SceneParams:
    object_count: tuple[int, int] = (3, 8)
    workspace: WorkspaceBounds = field(default_factory=WorkspaceBounds)
    raster_scale: float = 0.005
    layout: bool = True
    refine: RefineConfig = field(default_factory=RefineConfig)
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    scene_retries: int = 3

    def __post_init__(self):
        lo, hi = self.object_count
        if not 0 <= lo <= hi:
            raise ValueError(f"bad object_count range {self.object_count}")
        if not self.raster_scale > 0:
            raise ValueError("raster_scale must be positive")
        object.__setattr__(self, "object_count", (int(lo), int(hi)))

    def to_dict(self) -> dict:
        return {
            "object_count": list(self.object_count),
            "workspace": self.workspace.to_dict(),
            "raster_scale": self.raster_scale,
            "layout": self.layout,
            "refine": self.refine.to_dict(),
            "max_attempts": self.max_attempts,
            "scene_retries": self.scene_retries,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SceneParams":
        d = dict(d)
        if "object_count" in d:
            d["object_count"] = tuple(d["object_count"])
        if "workspace" in d:
            d["workspace"] = WorkspaceBounds.from_dict(d["workspace"])
        if "refine" in d:
            d["refine"] = RefineConfig.from_dict(d["refine"])
        return cls(**d)


def choose_assets(request: AssetRequest, catalog: AssetCatalog, rng: random.Random) -> dict[str, AssetClass]:
    """One catalog class per slot, drawn uniformly among the matches."""
    out = {}
    for slot in request.slots:
        matches = retrieve(catalog, slot.tags, slot.affordances, (1, None))
        out[slot.name] = matches[rng.randrange(len(matches))]
    return out


def arrange(
    scene: Scene,
    description: SceneDescription,
    params: SceneParams,
    rng: random.Random,
    refine_seed: int,
) -> Scene:
    """Goal layout -> goal raster -> pixel grounding -> refinement -> new scene.

    Raises :class:`PlacementConflict` when refinement cannot remove every
    overlap.
    """
    assets = scene.assets()
    goal = propose_layout(scene, description, rng, params.max_attempts)
    init_raster = rasterize(scene, params.raster_scale)
    goal_raster = rasterize(build_scene(assets, goal, scene.bounds, allow_overlap=True), params.raster_scale)
    try:
        pixels = match_templates(goal_raster, init_raster)
    except MissingObject:
        pixels = {}
    grounded = {}
    for oid, pose in goal.items():
        if oid in pixels:
            x, y = project_to_world(pixels[oid], goal_raster)
            grounded[oid] = Pose(x, y, pose.theta, pose.level)
        else:
            grounded[oid] = pose
    cfg = RefineConfig(**{**params.refine.__dict__, "seed": refine_seed})
    result = refine(grounded, description, assets, cfg, bounds=scene.bounds)
    if not result.collision_free:
        raise PlacementConflict("refinement left overlapping objects")
    return build_scene(assets, result.poses, scene.bounds)


def stage(
    plan: Plan,
    request: AssetRequest,
    catalog: AssetCatalog,
    params: SceneParams,
    seed: int,
) -> tuple[Scene, Plan]:
    """Build the start scene for ``plan`` and return it with the bound, validated plan.

    Distractor objects fill the scene up to a total drawn from
    ``params.object_count``.
    """
    assets = choose_assets(request, catalog, seeding.stream(seed, "assets"))
    count_rng = seeding.stream(seed, "distractors")
    lo, hi = params.object_count
    total = count_rng.randint(lo, hi) if hi > 0 else 0
    instances = [instantiate(a, oid) for oid, a in assets.items()]
    taken = set(assets)
    for i in range(max(0, total - len(instances))):
        oid = f"distractor_{i}"
        instances.append(instantiate(catalog.classes[count_rng.randrange(len(catalog))], oid, taken))
        taken.add(oid)
    scene = scatter_initial(instances, params.workspace, seeding.stream(seed, "scatter"), params.max_attempts)
    if params.layout and request.description.relations:
        scene = arrange(scene, request.description, params, seeding.stream(seed, "layout"), seeding.derive(seed, "refine"))
    plan = bind_targets(plan, scene, seeding.stream(seed, "targets"), params.max_attempts)
    validate_plan(plan, scene)
    return scene, plan
