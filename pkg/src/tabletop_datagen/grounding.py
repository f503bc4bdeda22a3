"""Instruction grounding: templates, plans, plan validation, remote planner.

A :class:`TaskTemplate` names object *slots* (with the tags/affordances an
asset must carry) and expands into a list of skill calls over those slots.
Slot names double as the object instance ids of the episode, so a grounded
plan can run as soon as the requested assets are placed.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .assets import AssetCatalog, retrieve
from .errors import (
    BindingError,
    GroundingError,
    PlacementExhausted,
    PlanValidationError,
    ProtocolError,
    RetrievalError,
    TransportError,
)
from .geometry import Rect, in_workspace, sample_free_pose
from .scene import Scene, SceneDescription, SpatialRelation
from .sim import NO_FAILURES, PRIMITIVES, SimState, Subtask, _fit_options, execute_primitive, initial_state
from . import wire

PLAN_SCHEMA = "v1"


@dataclass(frozen=True)
class Slot:
    name: str
    tags: tuple[str, ...] = ()
    affordances: tuple[str, ...] = ()


@dataclass(frozen=True)
class StepSpec:
    """Template step. ``target`` is ``"free"`` or ``"right_of:<slot>"`` etc."""

    primitive: str
    object: str
    reference: str | None = None
    target: str | None = None
    text: str = ""


@dataclass(frozen=True)
class TaskTemplate:
    id: str
    slots: tuple[Slot, ...]
    expansion: tuple[StepSpec, ...]
    phrases: tuple[str, ...] = ()
    relations: tuple[SpatialRelation, ...] = ()

    def __post_init__(self):
        names = {s.name for s in self.slots}
        if len(names) != len(self.slots):
            raise ValueError(f"template {self.id}: duplicate slot names")
        for step in self.expansion:
            if step.primitive not in PRIMITIVES:
                raise ValueError(f"template {self.id}: unknown primitive {step.primitive}")
            used = [step.object, step.reference]
            if step.target and ":" in step.target:
                used.append(step.target.split(":", 1)[1])
            for ref in used:
                if ref is not None and ref not in names:
                    raise ValueError(f"template {self.id}: step references undeclared slot {ref!r}")
        for rel in self.relations:
            if rel.subject not in names or rel.reference not in names:
                raise ValueError(f"template {self.id}: relation references undeclared slot")

    @property
    def slot_map(self) -> dict[str, Slot]:
        return {s.name: s for s in self.slots}


@dataclass(frozen=True)
class Instruction:
    text: str = ""
    template_id: str | None = None
    bindings: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Plan:
    subtasks: tuple[Subtask, ...]
    source: str = "rule_engine"
    template_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "subtasks", tuple(self.subtasks))
        if not self.subtasks:
            raise ValueError("a plan needs at least one subtask")
        if self.source not in ("rule_engine", "remote"):
            raise ValueError(f"unknown plan source {self.source!r}")

    def __len__(self) -> int:
        return len(self.subtasks)

    def to_list(self) -> list[dict]:
        return [st.to_dict() for st in self.subtasks]


@dataclass(frozen=True)
class AssetRequest:
    """What the scene stage must provide: one asset per slot, plus layout relations."""

    slots: tuple[Slot, ...]
    description: SceneDescription = SceneDescription()


def _slot(name, tags=(), affordances=()):
    return Slot(name, tuple(tags), tuple(affordances))


SLOTS = {
    s.name: s
    for s in (
        _slot("mouse", ["mouse"], ["graspable"]),
        _slot("pad", ["pad"], ["container"]),
        _slot("clock", ["alarmclock"], ["pressable"]),
        _slot("bell", ["bell"], ["pressable"]),
        _slot("stapler", ["stapler"], ["graspable", "pressable"]),
        _slot("lamp", ["lamp"], ["toggleable"]),
        _slot("bread", ["bread"], ["graspable"]),
        _slot("basket", ["basket"], ["container"]),
        _slot("cup", ["cup"], ["graspable"]),
        _slot("plate", ["plate"], ["surface"]),
        _slot("bowl_a", ["bowl"], ["graspable", "surface"]),
        _slot("bowl_b", ["bowl"], ["graspable", "surface"]),
        _slot("bowl_c", ["bowl"], ["graspable", "surface"]),
        _slot("block_a", ["block"], ["graspable", "surface"]),
        _slot("block_b", ["block"], ["graspable", "surface"]),
        _slot("card", ["playingcard"], ["graspable"]),
        _slot("obj_a", ["block", "cup", "bread", "mouse"], ["graspable"]),
        _slot("obj_b", ["plate", "bowl", "basket", "box"], []),
    )
}


def _t(tid, steps, phrases=(), relations=()):
    specs = tuple(StepSpec(*s) for s in steps)
    names = []
    for sp in specs:
        for ref in (sp.object, sp.reference, sp.target.split(":", 1)[1] if sp.target and ":" in sp.target else None):
            if ref and ref not in names:
                names.append(ref)
    for rel in relations:
        for ref in (rel.subject, rel.reference):
            if ref not in names:
                names.append(ref)
    return TaskTemplate(tid, tuple(SLOTS[n] for n in names), specs, tuple(phrases), tuple(relations))


def compose(tid: str, parts: Sequence[TaskTemplate], phrases=(), relations=()) -> TaskTemplate:
    """Concatenate templates; slots with the same name denote the same object."""
    slots: dict[str, Slot] = {}
    steps: list[StepSpec] = []
    for part in parts:
        for s in part.slots:
            if s.name in slots and slots[s.name] != s:
                raise ValueError(f"slot {s.name!r} declared inconsistently")
            slots.setdefault(s.name, s)
        steps.extend(part.expansion)
    for rel in relations:
        for ref in (rel.subject, rel.reference):
            slots.setdefault(ref, SLOTS[ref])
    return TaskTemplate(tid, tuple(slots.values()), tuple(steps), tuple(phrases), tuple(relations))


def _builtin_templates() -> dict[str, TaskTemplate]:
    base = [
        _t("place_mouse_pad", [("pick", "mouse", None, None, "pick up {mouse}"),
                               ("place_in", "mouse", "pad", None, "put {mouse} on {pad}")]),
        _t("move_stapler_pad", [("pick", "stapler", None, None, "pick up {stapler}"),
                                ("place_in", "stapler", "pad", None, "put {stapler} on {pad}")]),
        _t("click_alarmclock", [("press", "clock", None, None, "press the button of {clock}")]),
        _t("click_bell", [("press", "bell", None, None, "ring {bell}")]),
        _t("press_stapler", [("press", "stapler", None, None, "press {stapler}")]),
        _t("move_and_press_stapler", [("pick", "stapler", None, None, "pick up {stapler}"),
                                      ("place_at", "stapler", None, "free", "move {stapler} to a free spot"),
                                      ("press", "stapler", None, None, "press {stapler}")]),
        _t("place_bread_basket", [("pick", "bread", None, None, "pick up {bread}"),
                                  ("place_in", "bread", "basket", None, "put {bread} into {basket}")]),
        _t("place_empty_cup", [("pick", "cup", None, None, "pick up {cup}"),
                               ("stack_on", "cup", "plate", None, "set {cup} on {plate}")]),
        _t("stack_blocks_two", [("pick", "block_b", None, None, "pick up {block_b}"),
                                ("stack_on", "block_b", "block_a", None, "stack {block_b} on {block_a}")]),
        _t("stack_bowls_three", [("pick", "bowl_b", None, None, "pick up {bowl_b}"),
                                 ("stack_on", "bowl_b", "bowl_a", None, "stack {bowl_b} on {bowl_a}"),
                                 ("pick", "bowl_c", None, None, "pick up {bowl_c}"),
                                 ("stack_on", "bowl_c", "bowl_b", None, "stack {bowl_c} on {bowl_b}")]),
        _t("move_playingcard_away", [("pick", "card", None, None, "pick up {card}"),
                                     ("place_at", "card", None, "free", "move {card} away")]),
        _t("place_a2b_right", [("pick", "obj_a", None, None, "pick up {obj_a}"),
                               ("place_at", "obj_a", None, "right_of:obj_b", "place {obj_a} right of {obj_b}")]),
        _t("turn_switch", [("toggle", "lamp", None, None, "turn the switch of {lamp}")]),
    ]
    lib = {t.id: t for t in base}
    lib["get_ready_for_work"] = compose(
        "get_ready_for_work",
        [lib["turn_switch"], lib["click_alarmclock"], lib["place_mouse_pad"], lib["press_stapler"]],
        phrases=("get ready for work", "prepare the desk for work"),
        relations=(SpatialRelation("right_of", "pad", "lamp", 0.1), SpatialRelation("near", "mouse", "pad", 0.3)),
    )
    lib["organize_breakfast_table"] = compose(
        "organize_breakfast_table",
        [lib["place_bread_basket"], lib["place_empty_cup"],
         _t("_stack_two_bowls", [("pick", "bowl_b", None, None, "pick up {bowl_b}"),
                                 ("stack_on", "bowl_b", "bowl_a", None, "stack {bowl_b} on {bowl_a}")])],
        phrases=("organize the breakfast table",),
        relations=(SpatialRelation("left_of", "plate", "basket", 0.05), SpatialRelation("near", "cup", "plate", 0.3)),
    )
    lib["wake_up_routine"] = compose(
        "wake_up_routine", [lib["click_alarmclock"], lib["turn_switch"], lib["click_bell"]],
        phrases=("wake up",),
    )
    lib["check_desk_devices"] = compose(
        "check_desk_devices",
        [lib["click_alarmclock"], lib["click_bell"], lib["press_stapler"], lib["turn_switch"]],
        phrases=("check the desk devices",),
    )
    return lib


BUILTIN_TEMPLATES: dict[str, TaskTemplate] = _builtin_templates()


def _normalize(text: str) -> str:
    return re.sub(r"[\s_]+", " ", text.strip().lower()).strip(" .!")


def find_template(instruction: Instruction, templates: Mapping[str, TaskTemplate] | None = None) -> TaskTemplate:
    templates = BUILTIN_TEMPLATES if templates is None else templates
    if instruction.template_id is not None:
        try:
            return templates[instruction.template_id]
        except KeyError:
            raise GroundingError(f"unknown template {instruction.template_id!r}") from None
    key = _normalize(instruction.text)
    for t in templates.values():
        if key == _normalize(t.id) or key in (_normalize(p) for p in t.phrases):
            return t
    raise GroundingError(f"no template matches instruction {instruction.text!r}")


def ground(
    instruction: Instruction | str,
    catalog: AssetCatalog | None = None,
    rng: random.Random | None = None,
    templates: Mapping[str, TaskTemplate] | None = None,
) -> tuple[Plan, AssetRequest]:
    """Expand an instruction into a plan and the asset request it needs.

    Pure and deterministic; ``rng`` is accepted for interface symmetry with
    stochastic planners and is not consumed. ``place_at`` steps come out with
    symbolic targets; :func:`bind_targets` resolves them once a scene exists.
    """
    if isinstance(instruction, str):
        instruction = Instruction(instruction)
    template = find_template(instruction, templates)
    unknown = set(instruction.bindings) - set(template.slot_map)
    if unknown:
        raise BindingError(f"bindings name unknown slots {sorted(unknown)}")
    slots = []
    for s in template.slots:
        if s.name in instruction.bindings:
            s = replace(s, tags=(instruction.bindings[s.name],))
        if not s.tags and not s.affordances:
            raise BindingError(f"slot {s.name!r} is unconstrained and unbound")
        if catalog is not None:
            try:
                retrieve(catalog, s.tags, s.affordances, (1, None))
            except RetrievalError as exc:
                raise BindingError(f"slot {s.name!r} cannot be filled: {exc}") from exc
        slots.append(s)
    names = {s.name: s.name for s in template.slots}
    subtasks = []
    for spec in template.expansion:
        subtasks.append(
            Subtask(
                spec.primitive,
                spec.object,
                spec.reference,
                None,
                spec.text.format(**names),
                target_region=spec.target,
            )
        )
    plan = Plan(tuple(subtasks), "rule_engine", template.id)
    return plan, AssetRequest(tuple(slots), SceneDescription(template.relations, instruction.text or template.id))


def _target_region(spec: str, state: SimState, fp) -> Rect:
    bounds = state.scene.bounds
    if spec == "free":
        return bounds.rect
    side, ref = spec.split(":", 1)
    obj = state.scene.objects[ref]
    gap = obj.asset.footprint.radius + fp.radius
    p = obj.pose
    if side == "right_of":
        region = Rect(p.x + gap, p.x + gap + 0.15, p.y - 0.1, p.y + 0.1)
    elif side == "left_of":
        region = Rect(p.x - gap - 0.15, p.x - gap, p.y - 0.1, p.y + 0.1)
    elif side == "behind":
        region = Rect(p.x - 0.1, p.x + 0.1, p.y + gap, p.y + gap + 0.15)
    elif side == "in_front_of":
        region = Rect(p.x - 0.1, p.x + 0.1, p.y - gap - 0.15, p.y - gap)
    else:
        raise ValueError(f"unknown target region {spec!r}")
    return region.intersect(bounds)


def bind_targets(plan: Plan, scene: Scene, rng: random.Random, max_attempts: int = 256) -> Plan:
    """Give every symbolic ``place_at`` a concrete free target.

    Targets are chosen while dry-running the plan without failures, so each
    one is free in the state the step will (nominally) see. Raises
    :class:`PlanValidationError` when no free target exists.
    """
    if all(st.target is not None or st.primitive != "place_at" for st in plan.subtasks):
        return plan
    state = initial_state(scene)
    out = []
    for i, st in enumerate(plan.subtasks):
        if st.primitive == "place_at" and st.target is None:
            if st.object_id != state.held or st.target_region is None:
                raise PlanValidationError(i, "place_at target cannot be resolved")
            fp = state.held_asset.footprint
            try:
                region = _target_region(st.target_region, state, fp)
                if region.empty:
                    raise PlacementExhausted("empty target region")
                target = sample_free_pose(state.scene.map, fp, region, rng, max_attempts)
            except (PlacementExhausted, KeyError) as exc:
                raise PlanValidationError(i, f"no free target: {exc}") from exc
            st = replace(st, target=target)
        out.append(st)
        outcome = execute_primitive(state, st, NO_FAILURES, rng)
        if outcome.hard_error is None:
            state = outcome.new_state
    return replace(plan, subtasks=tuple(out))


_NEEDS = {"pick": "graspable", "toggle": "toggleable", "press": "pressable"}


def validate_plan(plan: Plan, scene: Scene) -> Plan:
    """Check object existence, affordances and hand discipline; return ``plan`` unchanged."""
    present = {oid: obj.asset for oid, obj in scene.objects.items()}
    held: str | None = None
    held_asset = None
    for i, st in enumerate(plan.subtasks):
        oid = st.object_id
        known = present.get(oid) or (held_asset if held == oid else None)
        if known is None:
            raise PlanValidationError(i, f"object {oid!r} is not in the scene")
        if st.reference is not None and st.reference not in present:
            raise PlanValidationError(i, f"object {st.reference!r} is not in the scene")
        need = _NEEDS.get(st.primitive)
        if need and not known.has(need):
            raise PlanValidationError(i, f"{oid!r} is not {need}")
        if st.primitive == "pick":
            if held is not None:
                raise PlanValidationError(i, f"hand already holds {held!r}")
            held, held_asset = oid, present.pop(oid)
        elif st.primitive in ("place_at", "place_in", "stack_on"):
            if held != oid:
                raise PlanValidationError(i, f"not holding {oid!r}")
            if st.primitive == "place_in":
                ref = present[st.reference]
                if not ref.has("container"):
                    raise PlanValidationError(i, f"{st.reference!r} is not a container")
                if not _fit_options(known, *ref.interior, strict=True):
                    raise PlanValidationError(i, f"{oid!r} does not fit inside {st.reference!r}")
            elif st.primitive == "stack_on":
                if not present[st.reference].has("surface"):
                    raise PlanValidationError(i, f"{st.reference!r} is not a surface")
            else:
                if st.target is None:
                    raise PlanValidationError(i, "place_at target is unbound")
                if not in_workspace(st.target, known.footprint, scene.bounds):
                    raise PlanValidationError(i, "place_at target is outside the workspace")
            present[oid] = known
            held, held_asset = None, None
    return plan


def scene_summary(scene: Scene) -> str:
    """One line per object: id, class and pose rounded to a millimetre."""
    lines = []
    for oid, obj in sorted(scene.objects.items()):
        p = obj.pose
        lines.append(f"{oid} {obj.asset.name} x={p.x:.3f} y={p.y:.3f} theta={p.theta:.3f} level={p.level}")
    return "\n".join(lines)


def parse_plan_response(body: Mapping) -> Plan:
    schema = body.get("schema", PLAN_SCHEMA)
    if schema != PLAN_SCHEMA:
        raise ProtocolError(f"unsupported plan schema {schema!r}")
    raw = body.get("subtasks")
    if not isinstance(raw, list) or not raw:
        raise ProtocolError("response lacks a non-empty 'subtasks' list")
    try:
        subtasks = tuple(Subtask.from_dict(d) for d in raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed subtask: {exc}") from exc
    return Plan(subtasks, "remote")


def remote_plan(
    endpoint: str,
    instruction: Instruction | str,
    scene: Scene,
    timeout: float = wire.DEFAULT_TIMEOUT,
    retries: int = wire.DEFAULT_RETRIES,
    session=None,
) -> Plan:
    """Ask a planner service at ``endpoint`` for a plan, then validate it."""
    text = instruction if isinstance(instruction, str) else instruction.text
    body = wire.post_json(
        endpoint.rstrip("/") + "/plan",
        {"instruction": text, "scene": scene_summary(scene)},
        timeout=timeout,
        retries=retries,
        non_ok=TransportError,
        session=session,
    )
    return validate_plan(parse_plan_response(body), scene)
