"""Object classes, the asset catalog and tag/affordance retrieval.

Catalog file format (JSON)::

    {
      "version": "1",
      "classes": [
        {
          "name": "bread_basket",
          "footprint": {"half_x": 0.12, "half_y": 0.09, "height": 0.08},
          "interior": {"half_x": 0.105, "half_y": 0.075},   # containers only
          "affordances": ["container"],
          "tags": ["basket", "breakfast"]
        }
      ]
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DuplicateId, ParseError, RetrievalError, ValidationError
from .geometry import Footprint

AFFORDANCES = frozenset({"graspable", "container", "surface", "toggleable", "pressable", "stackable"})


@dataclass(frozen=True)
class AssetClass:
    name: str
    footprint: Footprint
    affordances: frozenset[str]
    tags: tuple[str, ...] = ()
    interior: tuple[float, float] | None = None

    def has(self, affordance: str) -> bool:
        return affordance in self.affordances

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "footprint": {
                "half_x": self.footprint.half_x,
                "half_y": self.footprint.half_y,
                "height": self.footprint.height,
            },
            "affordances": sorted(self.affordances),
            "tags": list(self.tags),
        }
        if self.interior is not None:
            d["interior"] = {"half_x": self.interior[0], "half_y": self.interior[1]}
        return d


@dataclass(frozen=True)
class AssetCatalog:
    classes: tuple[AssetClass, ...]
    version: str = "1"
    _by_name: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        validate_catalog(self)
        object.__setattr__(self, "_by_name", {c.name: c for c in self.classes})

    def __len__(self) -> int:
        return len(self.classes)

    def __iter__(self):
        return iter(self.classes)

    def __getitem__(self, name: str) -> AssetClass:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def to_dict(self) -> dict:
        return {"version": self.version, "classes": [c.to_dict() for c in self.classes]}


@dataclass(frozen=True)
class ObjectInstance:
    instance_id: str
    asset: AssetClass

    @property
    def footprint(self) -> Footprint:
        return self.asset.footprint

    @property
    def affordances(self) -> frozenset[str]:
        return self.asset.affordances


def validate_catalog(catalog: AssetCatalog) -> None:
    seen = set()
    for cls in catalog.classes:
        if cls.name in seen:
            raise ValidationError(f"duplicate class name {cls.name!r}")
        seen.add(cls.name)
        if not cls.affordances:
            raise ValidationError(f"class {cls.name!r} has no affordances")
        unknown = set(cls.affordances) - AFFORDANCES
        if unknown:
            raise ValidationError(f"class {cls.name!r} has unknown affordances {sorted(unknown)}")
        if cls.has("container"):
            if cls.interior is None:
                raise ValidationError(f"container class {cls.name!r} lacks an interior")
            ix, iy = cls.interior
            if not (0 < ix <= cls.footprint.half_x and 0 < iy <= cls.footprint.half_y):
                raise ValidationError(f"interior of {cls.name!r} is not inside its footprint")


def _require(obj: Mapping, key: str, path: str, line: int | None):
    if not isinstance(obj, Mapping) or key not in obj:
        raise ParseError("missing field", line=line, field=f"{path}.{key}" if path else key)
    return obj[key]


def _line_of_class(text: str, index: int) -> int | None:
    # Best effort: the n-th occurrence of a "name" key marks the n-th class.
    pos = -1
    for _ in range(index + 1):
        pos = text.find('"name"', pos + 1)
        if pos < 0:
            return None
    return text.count("\n", 0, pos) + 1


def catalog_from_dict(data: Mapping, text: str = "") -> AssetCatalog:
    classes = []
    raw_classes = _require(data, "classes", "", 1)
    if not isinstance(raw_classes, list):
        raise ParseError("expected a list", line=1, field="classes")
    for i, raw in enumerate(raw_classes):
        line = _line_of_class(text, i) if text else None
        path = f"classes[{i}]"
        try:
            name = str(_require(raw, "name", path, line))
            fp_raw = _require(raw, "footprint", path, line)
            extents = (
                float(_require(fp_raw, "half_x", f"{path}.footprint", line)),
                float(_require(fp_raw, "half_y", f"{path}.footprint", line)),
                float(fp_raw.get("height", 0.05)),
            )
            interior = None
            if raw.get("interior") is not None:
                ir = raw["interior"]
                interior = (
                    float(_require(ir, "half_x", f"{path}.interior", line)),
                    float(_require(ir, "half_y", f"{path}.interior", line)),
                )
            affordances = frozenset(_require(raw, "affordances", path, line))
            tags = tuple(str(t) for t in raw.get("tags", ()))
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), line=line, field=path) from exc
        try:
            fp = Footprint(*extents)
        except ValueError as exc:
            raise ValidationError(f"class {name!r}: {exc}") from exc
        classes.append(AssetClass(name, fp, affordances, tags, interior))
    return AssetCatalog(tuple(classes), str(data.get("version", "1")))


def load_catalog(path: str | Path | None = None) -> AssetCatalog:
    """Load and validate a catalog file; ``None`` loads the bundled default."""
    if path is None:
        text = resources.files("tabletop_datagen").joinpath("data/catalog.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(data, dict):
        raise ParseError("top level must be an object", line=1)
    return catalog_from_dict(data, text)


def write_catalog(catalog: AssetCatalog, path: str | Path) -> None:
    Path(path).write_text(json.dumps(catalog.to_dict(), indent=2) + "\n", "utf-8")


def retrieve(
    catalog: AssetCatalog,
    required_tags: Sequence[str] = (),
    required_affordances: Sequence[str] = (),
    count_range: tuple[int, int | None] = (1, None),
) -> list[AssetClass]:
    """Classes carrying every required affordance and at least one required tag.

    Results follow catalog order and are truncated to ``count_range[1]``.
    """
    lo, hi = count_range
    if hi is not None and hi < lo:
        raise ValueError(f"empty count range {count_range}")
    tags = set(required_tags)
    needs = set(required_affordances)
    matches = [
        c
        for c in catalog.classes
        if needs <= c.affordances and (not tags or tags.intersection(c.tags))
    ]
    if len(matches) < lo:
        raise RetrievalError(
            f"only {len(matches)} classes match tags={sorted(tags)} affordances={sorted(needs)}; need {lo}"
        )
    return matches if hi is None else matches[:hi]


def instantiate(
    asset: AssetClass,
    instance_id: str,
    existing: Iterable[str] | Mapping[str, object] = (),
) -> ObjectInstance:
    if instance_id in existing:
        raise DuplicateId(instance_id)
    return ObjectInstance(instance_id, asset)
