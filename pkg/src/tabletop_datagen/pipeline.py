"""Episode orchestration: plan, stage a scene, execute, verify, accept or abort."""

from __future__ import annotations

import functools
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Iterable, Sequence

from . import seeding
from .assets import AssetCatalog, load_catalog
from .config import PipelineConfig
from .dataset import Dataset, make_manifest
from .errors import (
    CapExceeded,
    GateError,
    PlacementConflict,
    PlacementExhausted,
    ProtocolError,
    TransportError,
    UnsatisfiableRelation,
    ValidationError,
)
from .grounding import Instruction, Plan, bind_targets, find_template, ground, remote_plan, validate_plan
from .records import StatsReport, StepRecord, Trajectory
from .scene import Scene
from .sim import Snapshot, check_postcondition, execute_primitive, initial_state, state_digest
from .staging import stage
from .verify import (
    AcceptanceRule,
    Critic,
    NoisyCritic,
    NoisyCriticConfig,
    OracleCritic,
    RemoteCritic,
    accept_trajectory,
    default_environment,
    gate_subtask,
)

log = logging.getLogger(__name__)

# Scene-construction failures that make an episode degenerate.
_DEGENERATE = (PlacementExhausted, PlacementConflict, UnsatisfiableRelation, ValidationError)
_WIRE = (TransportError, ProtocolError)


@functools.lru_cache(maxsize=8)
def _catalog(path: str | None) -> AssetCatalog:
    return load_catalog(path)


def make_critic(config: PipelineConfig) -> Critic:
    c = config.critic
    if c.kind == "oracle":
        return OracleCritic(config.delta_pos)
    if c.kind == "noisy":
        return NoisyCritic(NoisyCriticConfig(c.alpha, c.beta, c.seed_stream), config.delta_pos)
    return RemoteCritic(c.endpoint, c.timeout, c.retries, config.scene.raster_scale)


def _stage_episode(config: PipelineConfig, task: str, catalog: AssetCatalog, seed: int) -> tuple[Scene, Plan]:
    plan, request = ground(Instruction(task), catalog)
    params = config.scene
    last: Exception | None = None
    for attempt in range(params.scene_retries + 1):
        scene_seed = seeding.derive(seed, "scene", attempt)
        try:
            scene, bound = stage(plan, request, catalog, params, scene_seed)
        except PlacementExhausted as exc:
            last = exc
            continue
        if config.planner.kind == "remote":
            p = config.planner
            bound = remote_plan(p.endpoint, task, scene, p.timeout, p.retries)
            bound = validate_plan(bind_targets(bound, scene, seeding.stream(scene_seed, "remote_targets")), scene)
        return scene, bound
    raise PlacementExhausted(f"no start scene after {params.scene_retries + 1} attempts: {last}")


def _execute(config: PipelineConfig, critic: Critic, scene: Scene, plan: Plan, seed: int, attempt: int):
    """One pass over the plan. Returns (steps, abort_step, status)."""
    fm = config.failure
    vcage = config.mode == "vcage"
    critic_stream = config.critic.seed_stream
    state = initial_state(scene)
    steps: list[StepRecord] = []
    abort = None
    for i, st in enumerate(plan.subtasks):
        out = execute_primitive(state, st, fm, seeding.stream(seed, fm.seed_stream, attempt, i), config.delta_pos)
        if out.hard_error is not None:
            steps.append(StepRecord(st, out.hard_error, False, None, state_digest(state), False))
            break
        state = out.new_state
        post = check_postcondition(state, st, config.delta_pos)
        verdict = None
        if vcage:
            try:
                v = critic.verify(Snapshot(state, i), st, seeding.stream(seed, critic_stream, attempt, i))
            except _WIRE as exc:
                log.warning("critic unavailable at step %d: %s", i, exc)
                return steps, None, "unverifiable"
            verdict = v.value
        steps.append(StepRecord(st, None, out.injected_failure, verdict, state_digest(state), post))
        if verdict == 0:
            abort = i
            break
    if state.degenerate:
        return steps, abort, "degenerate"
    ok = accept_trajectory(
        [s.verdict for s in steps],
        [s.hard_error for s in steps],
        AcceptanceRule(config.mode),
        len(plan),
    )
    return steps, abort, "accepted" if ok else "rejected"


def run_episode(
    config: PipelineConfig,
    episode_index: int,
    catalog: AssetCatalog | None = None,
    critic: Critic | None = None,
) -> Trajectory:
    catalog = catalog or _catalog(config.catalog)
    critic = critic or make_critic(config)
    seed = seeding.derive(config.master_seed, episode_index)
    task = config.tasks[seeding.stream(seed, "task").randrange(len(config.tasks))]

    def finish(plan, steps=(), abort=None, status="degenerate"):
        return Trajectory(
            episode_index, seed, task, plan.to_list() if plan else [], tuple(steps), status == "accepted", abort, status
        )

    try:
        scene, plan = _stage_episode(config, task, catalog, seed)
    except _DEGENERATE as exc:
        log.info("episode %d degenerate: %s", episode_index, exc)
        return finish(None)
    except _WIRE as exc:
        log.warning("episode %d planner unavailable: %s", episode_index, exc)
        return finish(None, status="unverifiable")

    attempts = config.max_resets + 1 if config.abort_policy == "reset_same_scene" else 1
    for attempt in range(attempts):
        steps, abort, status = _execute(config, critic, scene, plan, seed, attempt)
        if status != "rejected":
            break
    return finish(plan, steps, abort, status)


def _run_chunk(config_dict: dict, indices: Sequence[int]) -> list[Trajectory]:
    config = PipelineConfig.from_dict(config_dict)
    catalog = _catalog(config.catalog)
    critic = make_critic(config)
    return [run_episode(config, i, catalog, critic) for i in indices]


def _chunks(indices: Sequence[int], n: int) -> list[list[int]]:
    size = max(1, -(-len(indices) // n))
    return [list(indices[i : i + size]) for i in range(0, len(indices), size)]


def run_batch(
    config: PipelineConfig,
    indices: Iterable[int] | int,
    workers: int = 1,
    executor: ProcessPoolExecutor | None = None,
) -> list[Trajectory]:
    """Run episodes and return them in the order of ``indices``."""
    indices = list(range(indices)) if isinstance(indices, int) else list(indices)
    if workers <= 1 and executor is None:
        return _run_chunk(config.to_dict(), indices)
    own = executor is None
    executor = executor or ProcessPoolExecutor(max_workers=workers)
    try:
        out: list[Trajectory] = []
        chunks = _chunks(indices, max(workers, 1) * 4)
        for part in executor.map(_run_chunk, [config.to_dict()] * len(chunks), chunks):
            out.extend(part)
        return out
    finally:
        if own:
            executor.shutdown()


def gate_tasks(config: PipelineConfig, catalog: AssetCatalog | None = None) -> dict:
    """Gate every configured task; returns ``{task: GateReport}``."""
    catalog = catalog or _catalog(config.catalog)
    reports = {}
    for n, task in enumerate(config.tasks):
        template = find_template(Instruction(task))
        env = default_environment(template, catalog, config.scene)
        reports[task] = gate_subtask(
            template,
            env,
            config.gate.trials,
            config.failure,
            seeding.derive(config.master_seed, "gate", n),
            config.gate.threshold,
            config.delta_pos,
        )
    return reports


def generate_dataset(config: PipelineConfig, workers: int = 1, batch_size: int = 256) -> tuple[Dataset, StatsReport]:
    """Run episodes in index order until ``n_target`` are accepted or the cap is hit.

    Batches run in parallel, but results are consumed strictly by episode
    index, so the output does not depend on ``workers``.
    """
    if config.gate.enabled:
        reports = gate_tasks(config)
        passed = tuple(t for t in config.tasks if reports[t].status == "Accept")
        if not passed:
            raise GateError("no task passed the robustness gate")
        run_config = config.with_(tasks=passed)
    else:
        run_config = config
    cap = config.cap
    executor = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    records: list[Trajectory] = []
    seen: list[Trajectory] = []
    try:
        start = 0
        while start < cap and len(records) < config.n_target:
            batch = run_batch(run_config, range(start, min(cap, start + batch_size)), workers, executor)
            for t in batch:
                seen.append(t)
                if t.accepted:
                    records.append(t)
                    if len(records) >= config.n_target:
                        break
            start += batch_size
    finally:
        if executor is not None:
            executor.shutdown()
    stats = StatsReport.from_trajectories(seen)
    dataset = Dataset(make_manifest(config, stats), records)
    if len(records) < config.n_target:
        raise CapExceeded(
            f"episode cap {cap} reached with {len(records)} of {config.n_target} accepted", dataset, stats
        )
    return dataset, stats


def compare_modes(config: PipelineConfig, episodes: int, workers: int = 1) -> dict:
    """Run the same episode stream under both acceptance rules."""
    if config.critic.kind != "oracle":
        raise ValidationError("compare_modes needs the oracle critic")
    runs = {mode: run_batch(config.with_(mode=mode), episodes, workers) for mode in ("vcage", "vanilla")}
    stats = {mode: StatsReport.from_trajectories(ts) for mode, ts in runs.items()}
    ids = {mode: {t.episode for t in ts if t.accepted} for mode, ts in runs.items()}
    v, b = stats["vcage"], stats["vanilla"]
    return {
        "vcage": v.to_dict(),
        "vanilla": b.to_dict(),
        "delta_purity": None if v.purity is None or b.purity is None else v.purity - b.purity,
        "delta_acceptance": v.acceptance_rate - b.acceptance_rate,
        "vcage_subset_of_vanilla": ids["vcage"] <= ids["vanilla"],
    }


def replay_episode(config: PipelineConfig, record: Trajectory) -> tuple[bool, Trajectory]:
    """Re-simulate ``record`` from its seed; the remote critic is replaced by the oracle."""
    if config.critic.kind == "remote":
        config = config.with_(critic=type(config.critic)())
    fresh = run_episode(config, record.episode)
    return fresh.to_dict() == record.to_dict(), fresh


def final_scene(config: PipelineConfig, record: Trajectory) -> Scene:
    """Rebuild the scene after the last stored step."""
    from .geometry import Pose
    from .scene import build_scene

    catalog = _catalog(config.catalog)
    if not record.steps:
        raise ValidationError("the record has no executed steps")
    objs = record.steps[-1].state_digest["objects"]
    assets = {oid: catalog[o["class"]] for oid, o in objs.items()}
    poses = {oid: Pose.from_list(o["pose"]) for oid, o in objs.items()}
    return build_scene(assets, poses, config.scene.workspace, allow_overlap=True)

