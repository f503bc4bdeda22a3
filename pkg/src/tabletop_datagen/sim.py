"""Kinematic tabletop simulator with seeded silent-failure injection.

Primitives are instantaneous. Programmatic impossibilities (missing object,
occupied hand, unreachable target) return a hard error and leave the state
untouched. Injected failures never raise: a slipped object lands somewhere
wrong, a missed switch keeps its state, and only the ground-truth
``injected_failure`` flag tells the difference.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from typing import Mapping

from .assets import AssetCatalog, AssetClass
from .geometry import (
    EPS_PEN,
    Pose,
    box_excess,
    in_workspace,
    is_free,
    penetration_depth,
    point_rect_distance,
    sample_free_pose_in_frame,
)
from .errors import PlacementExhausted
from .scene import Raster, Scene, build_scene, rasterize

PRIMITIVES = ("pick", "place_at", "place_in", "stack_on", "toggle", "press")
PLACE_FAMILY = frozenset({"place_at", "place_in", "stack_on"})

#: Success radius for ``place_at``, metres.
DELTA_POS = 0.02

_TARGET_ATTEMPTS = 64
_NUDGE_RINGS = 12
_NUDGE_SPOKES = 16


@dataclass(frozen=True)
class Subtask:
    """One parameterised skill call.

    ``reference`` is the container (``place_in``) or support (``stack_on``);
    ``target`` is the commanded pose for ``place_at``. Before a scene exists a
    ``place_at`` may carry only a symbolic ``target_region``.
    """

    primitive: str
    object_id: str
    reference: str | None = None
    target: Pose | None = None
    text: str = ""
    target_region: str | None = None

    def __post_init__(self):
        if self.primitive not in PRIMITIVES:
            raise ValueError(f"unknown primitive {self.primitive!r}")
        if self.primitive in ("place_in", "stack_on") and not self.reference:
            raise ValueError(f"{self.primitive} needs a reference object")
        if self.primitive == "place_at" and self.target is None and self.target_region is None:
            raise ValueError("place_at needs a target pose")

    def to_dict(self) -> dict:
        args: dict = {"object": self.object_id}
        if self.primitive == "place_in":
            args["container"] = self.reference
        elif self.primitive == "stack_on":
            args["support"] = self.reference
        elif self.primitive == "place_at":
            if self.target is not None:
                args["target"] = self.target.to_list()
            else:
                args["target_region"] = self.target_region
        return {"primitive": self.primitive, "args": args, "text": self.text}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Subtask":
        args = d["args"]
        prim = d["primitive"]
        ref = args.get("container") if prim == "place_in" else args.get("support") if prim == "stack_on" else None
        target = args.get("target")
        if isinstance(target, Mapping):
            target = Pose(float(target["x"]), float(target["y"]), float(target.get("theta", 0.0)), int(target.get("level", 0)))
        elif target is not None:
            target = Pose.from_list(target)
        return cls(prim, str(args["object"]), ref, target, str(d.get("text", "")), args.get("target_region"))


@dataclass(frozen=True)
class FailureModel:
    slip_prob: float = 0.0
    slip_offset_sigma: float = 0.03
    toggle_miss_prob: float = 0.0
    press_miss_prob: float = 0.0
    seed_stream: str = "sim"

    def __post_init__(self):
        for name in ("slip_prob", "toggle_miss_prob", "press_miss_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.slip_offset_sigma < 0:
            raise ValueError("slip_offset_sigma must be >= 0")

    def to_dict(self) -> dict:
        return {
            "slip_prob": self.slip_prob,
            "slip_offset_sigma": self.slip_offset_sigma,
            "toggle_miss_prob": self.toggle_miss_prob,
            "press_miss_prob": self.press_miss_prob,
            "seed_stream": self.seed_stream,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FailureModel":
        return cls(**d)


NO_FAILURES = FailureModel()


@dataclass(frozen=True)
class SimState:
    scene: Scene
    held: str | None = None
    held_asset: AssetClass | None = None
    switches: Mapping[str, str] = field(default_factory=dict)
    pressed: Mapping[str, int] = field(default_factory=dict)
    prev_switches: Mapping[str, str] = field(default_factory=dict)
    prev_pressed: Mapping[str, int] = field(default_factory=dict)
    tick: int = 0
    degenerate: bool = False


@dataclass(frozen=True)
class StepOutcome:
    new_state: SimState
    hard_error: str | None = None
    injected_failure: bool = False


@dataclass(frozen=True)
class Snapshot:
    state: SimState
    subtask_index: int
    raster: Raster | None = None


def initial_state(scene: Scene) -> SimState:
    switches = {k: "off" for k, o in sorted(scene.objects.items()) if o.asset.has("toggleable")}
    pressed = {k: 0 for k, o in sorted(scene.objects.items()) if o.asset.has("pressable")}
    return SimState(scene, switches=switches, pressed=pressed, prev_switches=switches, prev_pressed=pressed)


def supports_something(scene: Scene, object_id: str) -> bool:
    """True if some object one level up rests on (overlaps) ``object_id``."""
    base = scene.objects[object_id]
    for oid, obj in scene.objects.items():
        if oid == object_id or obj.pose.level != base.pose.level + 1:
            continue
        if penetration_depth(obj.pose, obj.asset.footprint, base.pose, base.asset.footprint) > EPS_PEN:
            return True
    return False


def _fit_options(asset: AssetClass, ihx: float, ihy: float, strict: bool) -> list[tuple[float, float, float]]:
    """(heading offset, local half-range x, local half-range y) for centre placement."""
    fp = asset.footprint
    out = []
    for offset, hx, hy in ((0.0, fp.half_x, fp.half_y), (math.pi / 2, fp.half_y, fp.half_x)):
        if strict:
            lx, ly = ihx - hx, ihy - hy
        else:
            lx, ly = ihx, ihy
        if lx >= 0 and ly >= 0:
            out.append((offset, lx, ly))
    return out


def _commanded_pose(state: SimState, subtask: Subtask, asset: AssetClass, rng: random.Random):
    """Pose the gripper aims for, or a hard-error code."""
    scene = state.scene
    fp = asset.footprint
    if subtask.primitive == "place_at":
        target = subtask.target
        if target is None:
            return "Unbound"
        if not in_workspace(target, fp, scene.bounds):
            return "Unreachable"
        if not is_free(scene.map, target, fp):
            return "TargetOccupied"
        return target
    ref = scene.objects.get(subtask.reference)
    if ref is None:
        return "ObjectMissing"
    if subtask.primitive == "place_in":
        if not ref.asset.has("container"):
            return "NotContainer"
        ihx, ihy = ref.asset.interior
        options = _fit_options(asset, ihx, ihy, strict=True)
        if not options:
            return "DoesNotFit"
    else:
        if not ref.asset.has("surface"):
            return "NotSurface"
        rf = ref.asset.footprint
        options = _fit_options(asset, rf.half_x, rf.half_y, strict=False)
    level = ref.pose.level + 1
    for offset, _, _ in options:
        centre = Pose(ref.pose.x, ref.pose.y, ref.pose.theta + offset, level)
        if is_free(scene.map, centre, fp):
            return centre
    for offset, lx, ly in options:
        try:
            return sample_free_pose_in_frame(scene.map, fp, ref.pose, lx, ly, rng, _TARGET_ATTEMPTS, level, offset)
        except PlacementExhausted:
            continue
    return "TargetOccupied"


def _slip_landing(
    state: SimState,
    subtask: Subtask,
    asset: AssetClass,
    commanded: Pose,
    fm: FailureModel,
    rng: random.Random,
    delta_pos: float,
) -> tuple[Pose, bool]:
    """Where a slipped object comes to rest, and whether the landing is degenerate.

    The object drops to the tabletop at the commanded position plus a Gaussian
    offset, then is nudged to the nearest free spot that still fails the step's
    postcondition. Without such a spot it stays put, overlapping.
    """
    scene = state.scene
    fp = asset.footprint
    sigma = fm.slip_offset_sigma
    ox, oy = rng.gauss(0.0, sigma), rng.gauss(0.0, sigma)
    if subtask.primitive == "place_at":
        for _ in range(16):
            if math.hypot(ox, oy) > delta_pos:
                break
            ox, oy = rng.gauss(0.0, sigma), rng.gauss(0.0, sigma)
        norm = math.hypot(ox, oy)
        if norm <= delta_pos:
            ux, uy = (ox / norm, oy / norm) if norm > 0 else (1.0, 0.0)
            ox, oy = 1.5 * delta_pos * ux, 1.5 * delta_pos * uy
        radius = 3.0 * sigma
        target = subtask.target

        def still_fails(p: Pose) -> bool:
            return math.hypot(p.x - target.x, p.y - target.y) > delta_pos
    else:
        ref = scene.objects[subtask.reference]
        radius = 3.0 * sigma + fp.radius + ref.asset.footprint.radius

        def still_fails(p: Pose) -> bool:
            return True

    land = Pose(commanded.x + ox, commanded.y + oy, commanded.theta, 0)
    if is_free(scene.map, land, fp) and still_fails(land):
        return land, False
    for ring in range(1, _NUDGE_RINGS + 1):
        r = radius * ring / _NUDGE_RINGS
        for spoke in range(_NUDGE_SPOKES):
            a = 2.0 * math.pi * spoke / _NUDGE_SPOKES
            cand = Pose(land.x + r * math.cos(a), land.y + r * math.sin(a), land.theta, 0)
            if is_free(scene.map, cand, fp) and still_fails(cand):
                return cand, False
    return land, True


def execute_primitive(
    state: SimState,
    subtask: Subtask,
    fm: FailureModel,
    rng: random.Random,
    delta_pos: float = DELTA_POS,
) -> StepOutcome:
    prim = subtask.primitive
    oid = subtask.object_id
    scene = state.scene

    def hard(code: str) -> StepOutcome:
        return StepOutcome(state, code, False)

    stamped = dict(prev_switches=state.switches, prev_pressed=state.pressed, tick=state.tick + 1)

    if prim == "pick":
        if state.held is not None:
            return hard("HandOccupied")
        obj = scene.objects.get(oid)
        if obj is None:
            return hard("ObjectMissing")
        if not obj.asset.has("graspable"):
            return hard("NotGraspable")
        if supports_something(scene, oid):
            return hard("ObjectBlocked")
        new = replace(state, scene=scene.remove(oid), held=oid, held_asset=obj.asset, **stamped)
        return StepOutcome(new)

    if prim in PLACE_FAMILY:
        if state.held != oid:
            return hard("NotHolding")
        asset = state.held_asset
        slip = rng.random() < fm.slip_prob
        commanded = _commanded_pose(state, subtask, asset, rng)
        if isinstance(commanded, str):
            return hard(commanded)
        degenerate = False
        pose = commanded
        if slip:
            pose, degenerate = _slip_landing(state, subtask, asset, commanded, fm, rng, delta_pos)
        new_scene = scene.place(oid, asset, pose, allow_overlap=degenerate)
        new = replace(
            state,
            scene=new_scene,
            held=None,
            held_asset=None,
            degenerate=state.degenerate or degenerate,
            **stamped,
        )
        return StepOutcome(new, None, slip)

    obj = scene.objects.get(oid)
    if obj is None:
        return hard("ObjectMissing")
    if prim == "toggle":
        if not obj.asset.has("toggleable"):
            return hard("NotToggleable")
        miss = rng.random() < fm.toggle_miss_prob
        switches = dict(state.switches)
        if not miss:
            switches[oid] = "off" if switches.get(oid, "off") == "on" else "on"
        return StepOutcome(replace(state, switches=switches, **stamped), None, miss)

    # press
    if not obj.asset.has("pressable"):
        return hard("NotPressable")
    miss = rng.random() < fm.press_miss_prob
    pressed = dict(state.pressed)
    if not miss:
        pressed[oid] = pressed.get(oid, 0) + 1
    return StepOutcome(replace(state, pressed=pressed, **stamped), None, miss)


def check_postcondition(state: SimState, subtask: Subtask, delta_pos: float = DELTA_POS) -> bool:
    """Ground-truth success of the most recently executed ``subtask``."""
    prim = subtask.primitive
    oid = subtask.object_id
    scene = state.scene
    if prim == "pick":
        return state.held == oid
    if prim == "toggle":
        return state.switches.get(oid) != state.prev_switches.get(oid)
    if prim == "press":
        return state.pressed.get(oid, 0) == state.prev_pressed.get(oid, 0) + 1
    obj = scene.objects.get(oid)
    if obj is None:
        return False
    pose = obj.pose
    if prim == "place_at":
        t = subtask.target
        if t is None:
            return False
        return pose.level == t.level and math.hypot(pose.x - t.x, pose.y - t.y) <= delta_pos
    ref = scene.objects.get(subtask.reference)
    if ref is None or pose.level != ref.pose.level + 1:
        return False
    if prim == "place_in":
        ihx, ihy = ref.asset.interior if ref.asset.interior else (ref.asset.footprint.half_x, ref.asset.footprint.half_y)
        return box_excess(pose, obj.asset.footprint, ref.pose, ihx, ihy) <= EPS_PEN
    rf = ref.asset.footprint
    return point_rect_distance(pose.x, pose.y, ref.pose, rf.half_x, rf.half_y) <= EPS_PEN


def snapshot(state: SimState, subtask_index: int, with_raster: bool = False, scale: float = 0.005) -> Snapshot:
    copy = replace(
        state,
        scene=Scene(state.scene.bounds, dict(state.scene.objects), state.scene.map),
        switches=dict(state.switches),
        pressed=dict(state.pressed),
        prev_switches=dict(state.prev_switches),
        prev_pressed=dict(state.prev_pressed),
    )
    raster = rasterize(copy.scene, scale) if with_raster else None
    return Snapshot(copy, subtask_index, raster)


def state_digest(state: SimState) -> dict:
    """JSON-ready summary of poses and discrete states (what datasets store)."""
    return {
        "objects": {
            oid: {"class": obj.asset.name, "pose": obj.pose.to_list()}
            for oid, obj in sorted(state.scene.objects.items())
        },
        "held": state.held,
        "held_class": state.held_asset.name if state.held_asset else None,
        "switches": dict(sorted(state.switches.items())),
        "pressed": dict(sorted(state.pressed.items())),
        "tick": state.tick,
    }


def state_to_dict(state: SimState) -> dict:
    """Full state, enough to rebuild it with :func:`state_from_dict`."""
    d = state_digest(state)
    d["prev_switches"] = dict(sorted(state.prev_switches.items()))
    d["prev_pressed"] = dict(sorted(state.prev_pressed.items()))
    d["degenerate"] = state.degenerate
    d["bounds"] = state.scene.bounds.to_dict()
    return d


def state_from_dict(d: Mapping, catalog: AssetCatalog) -> SimState:
    from .geometry import WorkspaceBounds

    assets = {oid: catalog[o["class"]] for oid, o in d["objects"].items()}
    poses = {oid: Pose.from_list(o["pose"]) for oid, o in d["objects"].items()}
    scene = build_scene(assets, poses, WorkspaceBounds.from_dict(d["bounds"]), allow_overlap=True)
    return SimState(
        scene,
        held=d.get("held"),
        held_asset=catalog[d["held_class"]] if d.get("held_class") else None,
        switches=dict(d.get("switches", {})),
        pressed={k: int(v) for k, v in d.get("pressed", {}).items()},
        prev_switches=dict(d.get("prev_switches", {})),
        prev_pressed={k: int(v) for k, v in d.get("prev_pressed", {}).items()},
        tick=int(d.get("tick", 0)),
        degenerate=bool(d.get("degenerate", False)),
    )
