"""Episode records and the statistics computed over them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .sim import Subtask

STATUSES = ("accepted", "rejected", "degenerate", "unverifiable")


@dataclass(frozen=True)
class StepRecord:
    subtask: Subtask
    hard_error: str | None
    injected_failure: bool
    verdict: int | None
    state_digest: dict
    # Ground truth after the step; kept in memory only, never serialized.
    postcondition: bool = field(default=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "subtask": self.subtask.to_dict(),
            "hard_error": self.hard_error,
            "injected_failure": self.injected_failure,
            "verdict": self.verdict,
            "state_digest": self.state_digest,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "StepRecord":
        return cls(
            Subtask.from_dict(d["subtask"]),
            d["hard_error"],
            d["injected_failure"],
            d["verdict"],
            d["state_digest"],
            d["hard_error"] is None and not d["injected_failure"],
        )


@dataclass(frozen=True)
class Trajectory:
    episode: int
    seed: int
    instruction: str
    plan: list
    steps: tuple[StepRecord, ...]
    accepted: bool
    abort_step: int | None
    status: str = field(default="rejected", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.accepted != (self.status == "accepted"):
            raise ValueError("accepted flag and status disagree")

    @property
    def hard_error(self) -> bool:
        return any(s.hard_error is not None for s in self.steps)

    @property
    def all_postconditions(self) -> bool:
        return len(self.steps) == len(self.plan) and all(s.postcondition for s in self.steps)

    @property
    def rejection_step(self) -> int | None:
        """Index of the step that sank a rejected episode."""
        if self.status != "rejected":
            return None
        if self.abort_step is not None:
            return self.abort_step
        for i, s in enumerate(self.steps):
            if s.hard_error is not None:
                return i
        return None

    def to_dict(self) -> dict:
        return {
            "episode": self.episode,
            "seed": self.seed,
            "instruction": self.instruction,
            "plan": self.plan,
            "steps": [s.to_dict() for s in self.steps],
            "accepted": self.accepted,
            "abort_step": self.abort_step,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Trajectory":
        return cls(
            int(d["episode"]),
            int(d["seed"]),
            str(d["instruction"]),
            list(d["plan"]),
            tuple(StepRecord.from_dict(s) for s in d["steps"]),
            bool(d["accepted"]),
            d["abort_step"],
            "accepted" if d["accepted"] else "rejected",
        )


@dataclass(frozen=True)
class StatsReport:
    """Episode counts; every rate is derived from them.

    ``hard_error_rate`` and ``all_postcondition_rate`` are the measured
    frequencies standing in for physical feasibility and semantic correctness.
    Merging two reports adds their counts, so aggregation order is irrelevant.
    """

    episodes_run: int = 0
    accepted_count: int = 0
    rejected_count: int = 0
    degenerate_count: int = 0
    unverifiable_count: int = 0
    pure_accepted_count: int = 0
    hard_error_count: int = 0
    all_postcondition_count: int = 0
    rejection_histogram: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        total = self.accepted_count + self.rejected_count + self.degenerate_count + self.unverifiable_count
        if total != self.episodes_run:
            raise ValueError(f"status counts sum to {total}, expected {self.episodes_run}")
        object.__setattr__(self, "rejection_histogram", dict(sorted(self.rejection_histogram.items())))

    @classmethod
    def from_trajectories(cls, trajectories: Iterable[Trajectory]) -> "StatsReport":
        c = dict.fromkeys(STATUSES, 0)
        pure = hard = allpost = 0
        hist: dict[int, int] = {}
        n = 0
        for t in trajectories:
            n += 1
            c[t.status] += 1
            hard += t.hard_error
            allpost += t.all_postconditions
            if t.status == "accepted":
                pure += not any(s.injected_failure for s in t.steps)
            step = t.rejection_step
            if step is not None:
                hist[step] = hist.get(step, 0) + 1
        return cls(n, c["accepted"], c["rejected"], c["degenerate"], c["unverifiable"], pure, hard, allpost, hist)

    def merge(self, other: "StatsReport") -> "StatsReport":
        hist = dict(self.rejection_histogram)
        for k, v in other.rejection_histogram.items():
            hist[k] = hist.get(k, 0) + v
        return StatsReport(
            self.episodes_run + other.episodes_run,
            self.accepted_count + other.accepted_count,
            self.rejected_count + other.rejected_count,
            self.degenerate_count + other.degenerate_count,
            self.unverifiable_count + other.unverifiable_count,
            self.pure_accepted_count + other.pure_accepted_count,
            self.hard_error_count + other.hard_error_count,
            self.all_postcondition_count + other.all_postcondition_count,
            hist,
        )

    def _rate(self, num: int) -> float:
        return num / self.episodes_run if self.episodes_run else 0.0

    @property
    def acceptance_rate(self) -> float:
        return self._rate(self.accepted_count)

    @property
    def purity(self) -> float | None:
        return self.pure_accepted_count / self.accepted_count if self.accepted_count else None

    @property
    def hard_error_rate(self) -> float:
        return self._rate(self.hard_error_count)

    @property
    def all_postcondition_rate(self) -> float:
        return self._rate(self.all_postcondition_count)

    def counts(self) -> dict:
        return {
            "episodes_run": self.episodes_run,
            "accepted": self.accepted_count,
            "rejected": self.rejected_count,
            "degenerate": self.degenerate_count,
            "unverifiable": self.unverifiable_count,
            "pure_accepted": self.pure_accepted_count,
            "hard_error": self.hard_error_count,
            "all_postcondition": self.all_postcondition_count,
            "rejection_histogram": {str(k): v for k, v in self.rejection_histogram.items()},
        }

    @classmethod
    def from_counts(cls, d: Mapping) -> "StatsReport":
        return cls(
            int(d["episodes_run"]),
            int(d["accepted"]),
            int(d["rejected"]),
            int(d["degenerate"]),
            int(d["unverifiable"]),
            int(d["pure_accepted"]),
            int(d["hard_error"]),
            int(d["all_postcondition"]),
            {int(k): int(v) for k, v in d.get("rejection_histogram", {}).items()},
        )

    def to_dict(self) -> dict:
        return {
            "episodes_run": self.episodes_run,
            "accepted_count": self.accepted_count,
            "rejected_count": self.rejected_count,
            "degenerate_count": self.degenerate_count,
            "unverifiable_count": self.unverifiable_count,
            "acceptance_rate": self.acceptance_rate,
            "purity": self.purity,
            "rejection_histogram": {str(k): v for k, v in self.rejection_histogram.items()},
            "hard_error_rate": self.hard_error_rate,
            "all_postcondition_rate": self.all_postcondition_rate,
        }
