from __future__ import annotations

import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tabletop_datagen.assets import AssetClass, instantiate
from tabletop_datagen.errors import MissingObject, OutOfBounds, PlacementExhausted, UnsatisfiableRelation
from tabletop_datagen.geometry import EPS_PEN, Footprint, Pose, WorkspaceBounds, box_excess, pairwise_overlaps
from tabletop_datagen.scene import (
    KAPPA_LEVEL,
    Raster,
    RefineConfig,
    Scene,
    SceneDescription,
    SpatialRelation,
    build_scene,
    collision_loss,
    match_templates,
    project_to_world,
    propose_layout,
    rasterize,
    read_pgm,
    refine,
    scatter_initial,
    semantic_loss,
    world_to_pixel,
    write_pgm,
)

UNIT = Footprint(0.5, 0.5, 0.1)
BIG = WorkspaceBounds(-2, 2, -2, 2, reach_radius=5)
ONE_M2 = WorkspaceBounds(-0.5, 0.5, -0.5, 0.5, reach_radius=1.0)


def square(name, half=0.5, affordances=("graspable",), interior=None):
    return AssetClass(name, Footprint(half, half, 0.1), frozenset(affordances), (name,), interior)


def rel(kind, s, r, m=0.0):
    return SpatialRelation(kind, s, r, m)


# -- relations --------------------------------------------------------------


def test_relation_validation_and_round_trip():
    with pytest.raises(ValueError):
        rel("above", "a", "b")
    with pytest.raises(ValueError):
        rel("near", "a", "a")
    with pytest.raises(ValueError):
        rel("near", "a", "b", -1)
    r = rel("near", "a", "b", 0.2)
    assert SpatialRelation.from_dict(r.to_dict()) == r
    assert SceneDescription((r,)).object_ids == {"a", "b"}


# -- scatter ----------------------------------------------------------------


def test_scatter_single_object_huge_workspace(catalog):
    ws = WorkspaceBounds(-50, 50, -50, 50, reach_radius=100)
    for seed in range(20):
        sc = scatter_initial([instantiate(catalog["cup"], "cup")], ws, random.Random(seed))
        assert sc.objects["cup"].pose.level == 0


def test_scatter_fifteen_objects_one_square_metre(catalog):
    classes = [c for c in catalog.classes]
    insts = [instantiate(classes[i % len(classes)], f"o{i}") for i in range(15)]
    sc = scatter_initial(insts, ONE_M2, random.Random(7))
    items = [(k, o.pose, o.asset.footprint) for k, o in sc.objects.items()]
    assert len(items) == 15
    assert pairwise_overlaps(items) == []


def test_scatter_pigeonhole():
    big = square("slab", 0.4)
    insts = [instantiate(big, f"s{i}") for i in range(2)]
    with pytest.raises(PlacementExhausted):
        scatter_initial(insts, ONE_M2, random.Random(0))
    with pytest.raises(ValueError):
        scatter_initial([], ONE_M2, random.Random(0))


def _scene_invariants(sc: Scene):
    items = [(k, o.pose, o.asset.footprint) for k, o in sc.objects.items()]
    assert pairwise_overlaps(items) == []
    assert set(sc.map.ids) == set(sc.objects)
    from tabletop_datagen.geometry import in_workspace

    for _, p, f in items:
        assert in_workspace(p, f, sc.bounds)


@given(st.integers(0, 2**32), st.integers(1, 10))
def test_scatter_satisfies_scene_invariants(seed, n):
    from tabletop_datagen.assets import load_catalog

    cat = load_catalog()
    rng = random.Random(seed)
    insts = [instantiate(cat.classes[rng.randrange(len(cat))], f"o{i}") for i in range(n)]
    try:
        sc = scatter_initial(insts, WorkspaceBounds(), rng)
    except PlacementExhausted:
        return
    _scene_invariants(sc)


# -- losses -----------------------------------------------------------------


def test_collision_loss_examples():
    fps = {k: UNIT for k in "abcd"}
    assert collision_loss({"a": Pose(0, 0), "b": Pose(3, 0)}, fps) == 0.0
    assert collision_loss({"a": Pose(0, 0), "b": Pose(0.5, 0)}, fps) == pytest.approx(0.25)
    poses = {"a": Pose(0, 0), "b": Pose(0.5, 0), "c": Pose(5, 0), "d": Pose(5.8, 0)}
    assert collision_loss(poses, fps) == pytest.approx(0.29)


def test_collision_loss_ignores_other_levels():
    fps = {"a": UNIT, "b": UNIT}
    assert collision_loss({"a": Pose(0, 0, 0, 0), "b": Pose(0, 0, 0, 1)}, fps) == 0.0


def test_semantic_loss_examples():
    p = {"a": Pose(0.1, 0), "b": Pose(0, 0)}
    assert semantic_loss(p, SceneDescription((rel("left_of", "a", "b"),))) == pytest.approx(0.01)
    assert semantic_loss({"a": Pose(-0.1, 0), "b": Pose(0, 0)}, SceneDescription((rel("left_of", "a", "b"),))) == 0
    near = SceneDescription((rel("near", "a", "b", 0.2),))
    assert semantic_loss({"a": Pose(0.5, 0), "b": Pose(0, 0)}, near) == pytest.approx(0.09)


def test_semantic_loss_directional_kinds():
    p = {"a": Pose(0, 0), "b": Pose(0, 0)}
    for kind in ("right_of", "behind", "in_front_of"):
        assert semantic_loss(p, SceneDescription((rel(kind, "a", "b", 0.1),))) == pytest.approx(0.01)
    assert semantic_loss({"a": Pose(0, 0.3), "b": Pose(0, 0)}, SceneDescription((rel("behind", "a", "b", 0.1),))) == 0


def test_semantic_loss_stacking_kinds():
    box = square("box", 0.2, ("container",), interior=(0.15, 0.15))
    item = square("item", 0.05)
    shapes = {"i": item, "b": box}
    inside = SceneDescription((rel("inside", "i", "b"),))
    assert semantic_loss({"i": Pose(0, 0, 0, 1), "b": Pose(0, 0)}, inside, shapes) == 0.0
    assert semantic_loss({"i": Pose(0, 0, 0, 0), "b": Pose(0, 0)}, inside, shapes) == KAPPA_LEVEL
    # Item sticks 0.05 m out of the interior on +x.
    assert semantic_loss({"i": Pose(0.15, 0, 0, 1), "b": Pose(0, 0)}, inside, shapes) == pytest.approx(0.0025)
    on = SceneDescription((rel("on", "i", "b"),))
    assert semantic_loss({"i": Pose(0.3, 0, 0, 1), "b": Pose(0, 0)}, on, shapes) == pytest.approx(0.01)
    assert semantic_loss({"i": Pose(0.3, 0, 0, 2), "b": Pose(0, 0)}, on, shapes) == KAPPA_LEVEL


# -- propose_layout ---------------------------------------------------------


def _scene(catalog, names, seed=0, ws=None):
    insts = [instantiate(catalog[n], n) for n in names]
    return scatter_initial(insts, ws or WorkspaceBounds(), random.Random(seed))


def test_propose_inside_puts_subject_within_interior(catalog):
    for seed in range(20):
        sc = _scene(catalog, ["bread", "wooden_box", "cup"], seed)
        goal = propose_layout(sc, SceneDescription((rel("inside", "bread", "wooden_box"),)), random.Random(seed))
        box = catalog["wooden_box"]
        ihx, ihy = box.interior
        assert box_excess(goal["bread"], catalog["bread"].footprint, goal["wooden_box"], ihx, ihy) <= EPS_PEN
        assert goal["bread"].level == goal["wooden_box"].level + 1


def test_propose_left_of_holds(catalog):
    for seed in range(20):
        sc = _scene(catalog, ["block", "cup", "plate"], seed)
        goal = propose_layout(sc, SceneDescription((rel("left_of", "block", "plate", 0.05),)), random.Random(seed))
        assert goal["block"].x + 0.05 <= goal["plate"].x


def test_propose_unsatisfiable(catalog):
    sc = _scene(catalog, ["wooden_box", "mouse_pad"])
    with pytest.raises(UnsatisfiableRelation):
        propose_layout(sc, SceneDescription((rel("inside", "wooden_box", "mouse_pad"),)), random.Random(0))
    sc = _scene(catalog, ["block", "cup"])
    with pytest.raises(UnsatisfiableRelation):
        propose_layout(sc, SceneDescription((rel("left_of", "block", "cup", 5.0),)), random.Random(0))
    with pytest.raises(MissingObject):
        propose_layout(sc, SceneDescription((rel("near", "block", "ghost", 0.1),)), random.Random(0))


# -- refine -----------------------------------------------------------------


def test_refine_fixed_point():
    poses = {"a": Pose(0, 0), "b": Pose(3, 0)}
    r = refine(poses, SceneDescription(), {"a": UNIT, "b": UNIT})
    assert r.poses == poses and r.cost == 0 and r.accepted_costs == [0.0]


def test_refine_separates_two_squares():
    fps = {"a": UNIT, "b": UNIT}
    r = refine({"a": Pose(0, 0), "b": Pose(0.3, 0.1)}, SceneDescription(), fps, RefineConfig(max_iters=2000))
    assert r.collision_loss == 0.0 and r.collision_free
    assert collision_loss(r.poses, fps) == 0.0


def test_refine_config_validation_and_dict():
    with pytest.raises(ValueError):
        RefineConfig(max_iters=0)
    with pytest.raises(ValueError):
        RefineConfig(lam=-1)
    with pytest.raises(ValueError):
        RefineConfig(step_decay=1.0)
    cfg = RefineConfig(lam=2.0, seed=9)
    assert cfg.to_dict()["lambda"] == 2.0
    assert RefineConfig.from_dict(cfg.to_dict()) == cfg


@given(st.integers(0, 10_000), st.integers(2, 6))
def test_refine_accepted_costs_strictly_decrease(seed, n):
    rng = random.Random(seed)
    fps = {f"o{i}": Footprint(rng.uniform(0.03, 0.1), rng.uniform(0.03, 0.1)) for i in range(n)}
    poses = {k: Pose(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-3, 3)) for k in fps}
    desc = SceneDescription((rel("near", "o0", "o1", 0.15),))
    r = refine(poses, desc, fps, RefineConfig(seed=seed, max_iters=200))
    costs = r.accepted_costs
    assert all(b < a for a, b in zip(costs, costs[1:]))
    start = collision_loss(poses, fps) + semantic_loss(poses, desc, fps)
    assert r.cost <= start
    assert r.cost == pytest.approx(collision_loss(r.poses, fps) + semantic_loss(r.poses, desc, fps))
    assert {p.level for p in r.poses.values()} == {0}


def test_refine_is_deterministic():
    fps = {"a": UNIT, "b": UNIT}
    a = refine({"a": Pose(0, 0), "b": Pose(0.3, 0)}, SceneDescription(), fps, RefineConfig(seed=4))
    b = refine({"a": Pose(0, 0), "b": Pose(0.3, 0)}, SceneDescription(), fps, RefineConfig(seed=4))
    assert a.poses == b.poses and a.accepted_costs == b.accepted_costs


def test_refine_respects_bounds():
    ws = WorkspaceBounds(-1, 1, -1, 1, reach_radius=2)
    fps = {"a": UNIT, "b": UNIT}
    r = refine({"a": Pose(0, 0), "b": Pose(0.2, 0)}, SceneDescription(), fps, RefineConfig(max_iters=300), ws)
    from tabletop_datagen.geometry import in_workspace

    assert all(in_workspace(p, UNIT, ws) for p in r.poses.values())


# -- rasters ----------------------------------------------------------------


def test_rasterize_empty_scene():
    r = rasterize(Scene(ONE_M2), 0.01)
    assert r.pixels.shape == (100, 100) and not r.pixels.any()
    with pytest.raises(ValueError):
        rasterize(Scene(ONE_M2), 0)


def test_rasterize_unit_square_pixel_count():
    sc = build_scene({"sq": square("sq")}, {"sq": Pose(0.003, -0.002)}, BIG)
    r = rasterize(sc, 0.01)
    count = int((r.pixels == r.label_of("sq")).sum())
    assert abs(count - 10_000) <= 2 * 100 + 1


def test_rasterize_topmost_masks_lower():
    assets = {"base": square("base", 0.2, ("surface",)), "top": square("top", 0.05)}
    sc = build_scene(assets, {"base": Pose(0, 0), "top": Pose(0, 0, 0, 1)}, BIG)
    r = rasterize(sc, 0.01)
    u, v = world_to_pixel(0.0, 0.0, r)
    assert r.pixels[v, u] == r.label_of("top")
    u, v = world_to_pixel(0.15, 0.15, r)
    assert r.pixels[v, u] == r.label_of("base")


def test_match_templates_identity_and_translation():
    assets = {"a": square("a", 0.1), "b": square("b", 0.05)}
    init = build_scene(assets, {"a": Pose(0, 0), "b": Pose(0.5, 0.5)}, BIG)
    ri = rasterize(init, 0.01)
    ci = match_templates(ri, ri)
    goal = build_scene(assets, {"a": Pose(0.1, 0), "b": Pose(0.5, 0.5)}, BIG)
    cg = match_templates(rasterize(goal, 0.01), ri)
    assert cg["a"][0] - ci["a"][0] == pytest.approx(10.0)
    assert cg["a"][1] == pytest.approx(ci["a"][1])
    assert cg["b"] == ci["b"]


def test_match_templates_missing_object():
    assets = {"a": square("a", 0.1), "b": square("b", 0.05)}
    init = rasterize(build_scene(assets, {"a": Pose(0, 0), "b": Pose(0.5, 0.5)}, BIG), 0.01)
    goal = rasterize(build_scene({"a": assets["a"]}, {"a": Pose(0, 0)}, BIG), 0.01)
    with pytest.raises(MissingObject):
        match_templates(goal, init)


def test_project_to_world_examples():
    r = Raster(10, 10, 0.01, (0.0, 0.0), np.zeros((10, 10), np.uint8))
    assert project_to_world((0, 0), r) == pytest.approx((0.005, 0.005))
    with pytest.raises(OutOfBounds):
        project_to_world((10, 0), r)
    with pytest.raises(OutOfBounds):
        project_to_world((0, -1), r)


@given(st.floats(-0.999, 0.999), st.floats(-0.999, 0.999), st.sampled_from([0.003, 0.01, 0.05]))
def test_world_pixel_world_round_trip(x, y, scale):
    r = Raster(int(2 / scale) + 1, int(2 / scale) + 1, scale, (-1.0, -1.0), np.zeros((1, 1), np.uint8))
    wx, wy = project_to_world(world_to_pixel(x, y, r), r)
    assert abs(wx - x) <= scale / 2 + 1e-12 and abs(wy - y) <= scale / 2 + 1e-12


def test_grounding_round_trip_recovers_centres(catalog):
    scale = 0.005
    for seed in range(10):
        sc = _scene(catalog, ["mouse", "cup", "stapler", "block"], seed)
        r = rasterize(sc, scale)
        for oid, (u, v) in match_templates(r, r).items():
            x, y = project_to_world((u, v), r)
            p = sc.objects[oid].pose
            assert math.hypot(x - p.x, y - p.y) <= scale / math.sqrt(2)


def test_pgm_round_trip(tmp_path, catalog):
    sc = _scene(catalog, ["mouse", "cup"], 3)
    r = rasterize(sc, 0.01)
    sidecar = write_pgm(r, tmp_path / "s.pgm")
    assert sidecar.name == "s.pgm.json"
    assert (tmp_path / "s.pgm").read_bytes().startswith(b"P5\n120 80\n255\n")
    assert read_pgm(tmp_path / "s.pgm") == r
