"""JSONL dataset files: a manifest line followed by one accepted trajectory per line."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IoError, SchemaError
from .records import StatsReport, Trajectory

SCHEMA = "vcage-ds-v1"


@dataclass
class Dataset:
    manifest: dict
    records: list[Trajectory] = field(default_factory=list)

    @property
    def config_sha256(self) -> str:
        return self.manifest["config_sha256"]

    def stats(self) -> StatsReport:
        return StatsReport.from_counts(self.manifest["counts"])

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.manifest == other.manifest and [r.to_dict() for r in self.records] == [
            r.to_dict() for r in other.records
        ]


def make_manifest(config, stats: StatsReport) -> dict:
    return {
        "schema": SCHEMA,
        "config_sha256": config.sha256(),
        "master_seed": config.master_seed,
        "config": config.content_dict(),
        "counts": stats.counts(),
    }


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def dataset_bytes(dataset: Dataset) -> bytes:
    lines = [_dump(dataset.manifest)] + [_dump(r.to_dict()) for r in dataset.records]
    return ("\n".join(lines) + "\n").encode()


def write_dataset(dataset: Dataset, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.write_bytes(dataset_bytes(dataset))
    except OSError as exc:
        raise IoError(f"cannot write dataset {path}: {exc}") from exc
    return path


def read_dataset(path: str | Path, expect_config: str | None = None) -> Dataset:
    """Parse a dataset file. Line numbers in errors are 1-based file lines."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read dataset {path}: {exc}") from exc
    text = raw.decode("utf-8", errors="replace")
    if not text:
        raise SchemaError("empty dataset file", line=1)
    lines = text.split("\n")
    if lines[-1] == "":
        lines.pop()
    else:
        # Every complete record ends with a newline.
        raise SchemaError("truncated final line", line=len(lines))

    def parse(i: int) -> dict:
        try:
            obj = json.loads(lines[i])
        except json.JSONDecodeError as exc:
            raise SchemaError(f"corrupt JSON: {exc.msg}", line=i + 1) from exc
        if not isinstance(obj, dict):
            raise SchemaError("line is not a JSON object", line=i + 1)
        return obj

    manifest = parse(0)
    if manifest.get("schema") != SCHEMA:
        raise SchemaError(f"unsupported schema {manifest.get('schema')!r}", line=1)
    for key in ("config_sha256", "master_seed", "counts"):
        if key not in manifest:
            raise SchemaError(f"manifest lacks {key!r}", line=1)
    if expect_config is not None and manifest["config_sha256"] != expect_config:
        raise SchemaError(
            f"config hash {manifest['config_sha256']} does not match expected {expect_config}", line=1
        )
    records = []
    for i in range(1, len(lines)):
        obj = parse(i)
        try:
            records.append(Trajectory.from_dict(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed trajectory: {exc!r}", line=i + 1) from exc
    return Dataset(manifest, records)
