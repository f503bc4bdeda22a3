"""Critics, trajectory acceptance and the subtask robustness gate."""

from __future__ import annotations

import base64
import random
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from . import seeding, wire
from .assets import AssetCatalog, load_catalog
from .errors import (
    GateError,
    MissingAnnotations,
    PlacementConflict,
    PlacementExhausted,
    ProtocolError,
    UnsatisfiableRelation,
    ValidationError,
)
from .grounding import Instruction, Plan, TaskTemplate, ground
from .scene import Scene, pgm_bytes, rasterize
from .sim import (
    DELTA_POS,
    NO_FAILURES,
    FailureModel,
    Snapshot,
    Subtask,
    check_postcondition,
    execute_primitive,
    initial_state,
    state_to_dict,
)
from .staging import SceneParams, stage

CRITIC_KINDS = ("oracle", "noisy", "remote")
MODES = ("vcage", "vanilla")


@dataclass(frozen=True)
class Verdict:
    value: int
    critic_kind: str
    subtask_index: int
    latency: float | None = None

    def __post_init__(self):
        if self.value not in (0, 1):
            raise ValueError(f"verdict must be 0 or 1, got {self.value!r}")


@dataclass(frozen=True)
class NoisyCriticConfig:
    """``alpha``: P(verdict 1 | true failure). ``beta``: P(verdict 0 | true success)."""

    alpha: float = 0.0
    beta: float = 0.0
    seed_stream: str = "critic"

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("alpha and beta must lie in [0, 1]")


@dataclass(frozen=True)
class AcceptanceRule:
    mode: str = "vcage"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown acceptance mode {self.mode!r}")


@dataclass(frozen=True)
class GateReport:
    template_id: str
    trials: int
    successes: int
    sr: float
    status: str

    def to_dict(self) -> dict:
        return {
            "template": self.template_id,
            "trials": self.trials,
            "successes": self.successes,
            "sr": self.sr,
            "status": self.status,
        }


class Critic(Protocol):
    kind: str

    def verify(self, snapshot: Snapshot, subtask: Subtask, rng: random.Random | None = None) -> Verdict: ...


class OracleCritic:
    kind = "oracle"

    def __init__(self, delta_pos: float = DELTA_POS):
        self.delta_pos = delta_pos

    def verify(self, snapshot, subtask, rng=None):
        ok = check_postcondition(snapshot.state, subtask, self.delta_pos)
        return Verdict(int(ok), self.kind, snapshot.subtask_index)


class NoisyCritic:
    """Ground truth passed through a binary channel with flip rates alpha/beta."""

    kind = "noisy"

    def __init__(self, config: NoisyCriticConfig, delta_pos: float = DELTA_POS):
        self.config = config
        self.delta_pos = delta_pos

    def verify(self, snapshot, subtask, rng=None):
        if rng is None:
            raise ValueError("the noisy critic needs a random stream")
        truth = check_postcondition(snapshot.state, subtask, self.delta_pos)
        u = rng.random()
        if truth:
            value = 0 if u < self.config.beta else 1
        else:
            value = 1 if u < self.config.alpha else 0
        return Verdict(value, self.kind, snapshot.subtask_index)


class RemoteCritic:
    """Client for a ``POST /verify`` critic service.

    Besides the raster and its ``scale``/``origin``, ``meta`` carries the label
    table, the full simulator state and the structured subtask; a vision model
    may ignore them, the bundled mock critic relies on them.
    """

    kind = "remote"

    def __init__(
        self,
        endpoint: str,
        timeout: float = wire.DEFAULT_TIMEOUT,
        retries: int = wire.DEFAULT_RETRIES,
        scale: float = 0.005,
        session=None,
    ):
        self.url = endpoint.rstrip("/") + "/verify"
        self.timeout = timeout
        self.retries = retries
        self.scale = scale
        self.session = session

    def request_body(self, snapshot: Snapshot, subtask: Subtask) -> dict:
        raster = snapshot.raster if snapshot.raster is not None else rasterize(snapshot.state.scene, self.scale)
        meta = raster.meta()
        meta["state"] = state_to_dict(snapshot.state)
        meta["subtask"] = subtask.to_dict()
        return {
            "image_pgm_b64": base64.b64encode(pgm_bytes(raster)).decode("ascii"),
            "meta": meta,
            "subtask_text": subtask.text,
        }

    def verify(self, snapshot, subtask, rng=None):
        start = time.perf_counter()
        body = wire.post_json(
            self.url,
            self.request_body(snapshot, subtask),
            timeout=self.timeout,
            retries=self.retries,
            non_ok=ProtocolError,
            session=self.session,
        )
        value = body.get("verdict")
        if isinstance(value, bool) or value not in (0, 1):
            raise ProtocolError(f"critic response has no valid 'verdict': {body!r}")
        return Verdict(int(value), self.kind, snapshot.subtask_index, time.perf_counter() - start)


def verify_step(critic: Critic, snapshot: Snapshot, subtask: Subtask, rng: random.Random | None = None) -> Verdict:
    return critic.verify(snapshot, subtask, rng)


def accept_trajectory(
    verdicts: Sequence[Verdict | int | None],
    hard_errors: Sequence[str | None],
    rule: AcceptanceRule | str,
    k: int,
) -> bool:
    """Product rule for ``vcage``; absence of hard errors for ``vanilla``."""
    mode = rule.mode if isinstance(rule, AcceptanceRule) else AcceptanceRule(rule).mode
    if any(e is not None for e in hard_errors):
        return False
    if mode == "vanilla":
        return True
    values = [v.value if isinstance(v, Verdict) else v for v in verdicts]
    return len(values) == k and all(v == 1 for v in values)


def gate_status(successes: int, trials: int, threshold: float = 0.5) -> str:
    """``Accept`` iff successes / trials > threshold, compared exactly."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    return "Accept" if Fraction(successes, trials) > Fraction(str(threshold)) else "Reject"


def make_report(template_id: str, successes: int, trials: int, threshold: float = 0.5) -> GateReport:
    return GateReport(template_id, trials, successes, successes / trials, gate_status(successes, trials, threshold))


EnvGenerator = Callable[[int], tuple[Scene, Plan]]


def default_environment(
    template: TaskTemplate,
    catalog: AssetCatalog | None = None,
    params: SceneParams | None = None,
) -> EnvGenerator:
    """Scene factory for gating: fresh assets and scatter for every trial seed."""
    catalog = catalog or load_catalog()
    params = params or SceneParams(object_count=(0, 0))
    plan, request = ground(Instruction(template_id=template.id), catalog, templates={template.id: template})

    def generate(seed: int) -> tuple[Scene, Plan]:
        last: Exception | None = None
        for attempt in range(params.scene_retries + 1):
            try:
                return stage(plan, request, catalog, params, seeding.derive(seed, "scene", attempt))
            except (PlacementExhausted, PlacementConflict, UnsatisfiableRelation, ValidationError) as exc:
                last = exc
        raise GateError(f"could not build a scene for {template.id}: {last}")

    return generate


def run_trial(scene: Scene, plan: Plan, noise: FailureModel, seed: int, delta_pos: float = DELTA_POS) -> bool:
    """Execute ``plan`` once; success means no hard error and every postcondition true."""
    state = initial_state(scene)
    for i, st in enumerate(plan.subtasks):
        out = execute_primitive(state, st, noise, seeding.stream(seed, noise.seed_stream, i), delta_pos)
        if out.hard_error is not None or out.new_state.degenerate:
            return False
        state = out.new_state
        if not check_postcondition(state, st, delta_pos):
            return False
    return True


def gate_subtask(
    template: TaskTemplate,
    env: EnvGenerator | None = None,
    trials: int = 10,
    noise: FailureModel = NO_FAILURES,
    rng: random.Random | int = 0,
    threshold: float = 0.5,
    delta_pos: float = DELTA_POS,
) -> GateReport:
    """Empirical success rate of ``template`` over ``trials`` independent scenes."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    base = rng if isinstance(rng, int) else rng.getrandbits(64)
    env = env or default_environment(template)
    successes = 0
    for t in range(trials):
        trial_seed = seeding.derive(base, "gate", t)
        scene, plan = env(trial_seed)
        successes += run_trial(scene, plan, noise, trial_seed, delta_pos)
    return make_report(template.id, successes, trials, threshold)


def purity(records: Iterable) -> float:
    """Fraction of accepted trajectories in which no step suffered an injected failure.

    ``records`` are trajectories (objects with ``steps``) or their dict form.
    """
    n = pure = 0
    for rec in records:
        steps = rec["steps"] if isinstance(rec, Mapping) else rec.steps
        flags = []
        for step in steps:
            flag = step.get("injected_failure") if isinstance(step, Mapping) else getattr(step, "injected_failure", None)
            if flag is None:
                raise MissingAnnotations("a step lacks its injected_failure annotation")
            flags.append(flag)
        n += 1
        pure += not any(flags)
    if n == 0:
        raise ValueError("purity of an empty dataset is undefined")
    return pure / n
