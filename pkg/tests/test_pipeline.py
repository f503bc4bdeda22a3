from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabletop_datagen.config import CriticConfig, PipelineConfig
from tabletop_datagen.dataset import SCHEMA, Dataset, dataset_bytes, read_dataset, write_dataset
from tabletop_datagen.errors import CapExceeded, IoError, SchemaError, ValidationError
from tabletop_datagen.pipeline import compare_modes, final_scene, generate_dataset, replay_episode, run_batch, run_episode
from tabletop_datagen.records import StatsReport, StepRecord, Trajectory
from tabletop_datagen.sim import FailureModel, Subtask
from tabletop_datagen.verify import accept_trajectory

SMALL = PipelineConfig(n_target=20)


def test_noise_free_episode_is_accepted():
    t = run_episode(SMALL, 0)
    assert t.status == "accepted" and t.accepted
    assert [s.verdict for s in t.steps] == [1, 1]
    assert not any(s.injected_failure for s in t.steps)
    assert t.instruction == "place_mouse_pad" and len(t.plan) == 2


def test_vcage_aborts_at_first_rejected_step():
    cfg = PipelineConfig(tasks=("get_ready_for_work",), failure=FailureModel(toggle_miss_prob=1.0))
    for i in range(5):
        t = run_episode(cfg, i)
        if t.status == "degenerate":
            continue
        assert t.status == "rejected" and t.abort_step == 0
        assert len(t.steps) == 1 and t.steps[0].verdict == 0 and t.steps[0].injected_failure
        assert t.rejection_step == 0


def test_vanilla_runs_every_step_and_accepts_silent_failures():
    cfg = PipelineConfig(mode="vanilla", tasks=("wake_up_routine",), failure=FailureModel(press_miss_prob=1.0))
    t = run_episode(cfg, 0)
    assert t.accepted and len(t.steps) == 3
    assert all(s.verdict is None for s in t.steps)
    assert t.steps[0].injected_failure


def test_run_episode_is_deterministic():
    cfg = PipelineConfig(tasks=("stack_bowls_three", "wake_up_routine"), failure=FailureModel(0.3, 0.03, 0.3, 0.3))
    for i in range(10):
        assert run_episode(cfg, i).to_dict() == run_episode(cfg, i).to_dict()


def test_reset_same_scene_retries():
    fm = FailureModel(toggle_miss_prob=0.5)
    once = PipelineConfig(tasks=("turn_switch",), failure=fm)
    retry = once.with_(abort_policy="reset_same_scene", max_resets=5)
    a = sum(run_episode(once, i).accepted for i in range(200))
    b = sum(run_episode(retry, i).accepted for i in range(200))
    assert b > a
    # The scene and seed are those of the episode, whatever the attempt.
    assert run_episode(retry, 3).seed == run_episode(once, 3).seed


def test_run_batch_order_and_workers():
    cfg = PipelineConfig(tasks=("wake_up_routine",), failure=FailureModel(press_miss_prob=0.3))
    serial = run_batch(cfg, 40)
    parallel = run_batch(cfg, 40, workers=2)
    assert [t.episode for t in serial] == list(range(40))
    assert [t.to_dict() for t in serial] == [t.to_dict() for t in parallel]


# -- dataset ------------------------------------------------------------------


@pytest.fixture(scope="module")
def noisy_dataset():
    cfg = PipelineConfig(n_target=100, tasks=("wake_up_routine", "place_mouse_pad"),
                         failure=FailureModel(0.2, 0.03, 0.2, 0.2))
    ds, stats = generate_dataset(cfg)
    return cfg, ds, stats


def test_generate_dataset_counts(noisy_dataset):
    cfg, ds, stats = noisy_dataset
    assert len(ds) == 100
    assert stats.accepted_count == 100
    assert ds.manifest["schema"] == SCHEMA and ds.config_sha256 == cfg.sha256()
    assert ds.stats() == stats
    assert [t.episode for t in ds.records] == sorted(t.episode for t in ds.records)


def test_stored_trajectories_satisfy_acceptance(noisy_dataset):
    _, ds, _ = noisy_dataset
    for t in ds.records:
        assert accept_trajectory([s.verdict for s in t.steps], [s.hard_error for s in t.steps], "vcage", len(t.plan))


def test_dataset_round_trip(tmp_path, noisy_dataset):
    cfg, ds, _ = noisy_dataset
    p = write_dataset(ds, tmp_path / "d.jsonl")
    back = read_dataset(p, expect_config=cfg.sha256())
    assert back == ds
    assert dataset_bytes(back) == p.read_bytes()


def test_truncated_final_line(tmp_path, noisy_dataset):
    _, ds, _ = noisy_dataset
    data = dataset_bytes(ds)
    p = tmp_path / "d.jsonl"
    p.write_bytes(data[:-40])
    with pytest.raises(SchemaError) as info:
        read_dataset(p)
    assert info.value.line == 101


def test_corrupt_line_reports_number(tmp_path, noisy_dataset):
    _, ds, _ = noisy_dataset
    lines = dataset_bytes(ds).decode().split("\n")
    lines[5] = lines[5][:10]
    p = tmp_path / "d.jsonl"
    p.write_text("\n".join(lines))
    with pytest.raises(SchemaError) as info:
        read_dataset(p)
    assert info.value.line == 6


def test_manifest_checks(tmp_path, noisy_dataset):
    _, ds, _ = noisy_dataset
    p = write_dataset(ds, tmp_path / "d.jsonl")
    with pytest.raises(SchemaError):
        read_dataset(p, expect_config="0" * 64)
    bad = dict(ds.manifest, schema="other")
    p.write_text(json.dumps(bad) + "\n")
    with pytest.raises(SchemaError):
        read_dataset(p)
    p.write_text("")
    with pytest.raises(SchemaError):
        read_dataset(p)
    with pytest.raises(IoError):
        read_dataset(tmp_path / "missing.jsonl")
    with pytest.raises(IoError):
        write_dataset(ds, tmp_path / "no" / "dir" / "d.jsonl")


def test_cap_exceeded_carries_partial_dataset():
    cfg = PipelineConfig(n_target=5, episode_cap=20, tasks=("turn_switch",), failure=FailureModel(toggle_miss_prob=1.0))
    with pytest.raises(CapExceeded) as info:
        generate_dataset(cfg)
    assert info.value.stats.episodes_run == 20
    assert len(info.value.dataset) == 0


def test_generation_stops_at_target():
    ds, stats = generate_dataset(PipelineConfig(n_target=7), batch_size=4)
    assert len(ds) == 7 and stats.episodes_run == 7


def test_replay_and_final_scene(noisy_dataset):
    cfg, ds, _ = noisy_dataset
    rec = ds.records[3]
    ok, fresh = replay_episode(cfg, rec)
    assert ok and fresh.to_dict() == rec.to_dict()
    scene = final_scene(cfg, rec)
    assert set(scene.objects) == set(rec.steps[-1].state_digest["objects"])
    with pytest.raises(ValidationError):
        final_scene(cfg, Trajectory(0, 0, "x", [], (), False, None, "degenerate"))


# -- compare and statistics ------------------------------------------------------


def test_compare_modes_noise_free_identical():
    out = compare_modes(PipelineConfig(tasks=("place_mouse_pad", "wake_up_routine")), 60)
    assert out["vcage"]["accepted_count"] == out["vanilla"]["accepted_count"]
    assert out["delta_acceptance"] == 0 and out["delta_purity"] == 0
    assert out["vcage_subset_of_vanilla"]


def test_compare_modes_subset_with_noise():
    cfg = PipelineConfig(tasks=("check_desk_devices",), failure=FailureModel(0, 0.03, 0.2, 0.2))
    out = compare_modes(cfg, 300)
    assert out["vcage_subset_of_vanilla"]
    assert out["vcage"]["purity"] == 1.0
    assert out["delta_acceptance"] < 0
    with pytest.raises(ValidationError):
        compare_modes(cfg.with_(critic=CriticConfig("noisy", 0.1, 0.1)), 5)


def test_stats_conservation_enforced():
    with pytest.raises(ValueError):
        StatsReport(episodes_run=3, accepted_count=1)
    assert StatsReport().purity is None
    assert StatsReport().acceptance_rate == 0.0


def _traj(i, status, injected=False):
    st_ = StepRecord(Subtask("toggle", "lamp"), None, injected, 0 if status == "rejected" else 1, {}, not injected)
    return Trajectory(i, i, "t", [{}], (st_,), status == "accepted", 0 if status == "rejected" else None, status)


traj_lists = st.lists(
    st.builds(_traj, st.integers(0, 99), st.sampled_from(["accepted", "rejected", "degenerate", "unverifiable"]),
              st.booleans()),
    max_size=20,
)


@settings(max_examples=50)
@given(traj_lists, traj_lists, traj_lists)
def test_stats_merge_is_associative_and_matches_concatenation(a, b, c):
    sa, sb, sc = (StatsReport.from_trajectories(x) for x in (a, b, c))
    assert sa.merge(sb).merge(sc) == sa.merge(sb.merge(sc))
    assert sa.merge(sb).merge(sc) == StatsReport.from_trajectories(a + b + c)
    assert StatsReport.from_counts(sa.counts()) == sa


def test_trajectory_status_must_match_flag():
    with pytest.raises(ValueError):
        Trajectory(0, 0, "t", [], (), True, None, "rejected")
    with pytest.raises(ValueError):
        Trajectory(0, 0, "t", [], (), False, None, "lost")


def test_dataset_equality_ignores_type_mismatch():
    assert Dataset({}, []) != object()
