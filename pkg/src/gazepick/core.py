"""Shared data model: boxes, detections, tasks, the task->object category map
and the run configuration.

Object category ids follow the 80-class MS COCO indexing used by YOLO models
(0 = person ... 79 = toothbrush).  Objects that COCO lacks but the assistive
tasks need live in 100..199.  Task pictograms occupy 1000..1007 so both kinds
can share one detection stream.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

TASK_ID_BASE = 1000


class GazePickError(Exception):
    """Base class for all errors raised by this package."""


class UnknownTask(GazePickError):
    pass


class ConfigError(GazePickError):
    def __init__(self, message, field_name=None, line=None):
        where = []
        if field_name is not None:
            where.append(f"field '{field_name}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.field_name = field_name
        self.line = line


class TaskId(enum.IntEnum):
    Drink = 1000
    FillCup = 1001
    Eat = 1002
    Scratch = 1003
    SwitchLightSwitch = 1004
    Brush = 1005
    PickObject = 1006
    PlaceObject = 1007

    @classmethod
    def from_label(cls, label: str) -> "TaskId":
        try:
            return cls[label]
        except KeyError:
            raise UnknownTask(f"unknown task label {label!r}") from None

    @classmethod
    def from_category(cls, category_id: int) -> "TaskId":
        try:
            return cls(category_id)
        except ValueError:
            raise UnknownTask(f"category {category_id} is not a task pictogram") from None


def is_task_category(category_id: int) -> bool:
    return TASK_ID_BASE <= category_id < TASK_ID_BASE + len(TaskId)


# COCO (YOLO 80-class indexing) entries the shipped map refers to, plus the
# assistive extras.  Only used for human-readable reports.
CATEGORY_NAMES = {
    0: "person",
    39: "bottle",
    40: "wine glass",
    41: "cup",
    42: "fork",
    43: "knife",
    44: "spoon",
    45: "bowl",
    46: "banana",
    47: "apple",
    65: "remote",
    67: "cell phone",
    73: "book",
    76: "scissors",
    79: "toothbrush",
    100: "light switch",
    101: "hairbrush",
    102: "back scratcher",
}
CATEGORY_NAMES.update({int(t): f"pictogram:{t.name}" for t in TaskId})

CUP, BOTTLE, FORK, WINE_GLASS = 41, 39, 42, 40


def category_name(category_id: int) -> str:
    return CATEGORY_NAMES.get(category_id, f"category_{category_id}")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box, top-left origin."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box needs positive size, got {self.w}x{self.h}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"box origin must be non-negative, got ({self.x}, {self.y})")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h

    def contains(self, u: float, v: float) -> bool:
        # inclusive on all four edges
        return self.x <= u <= self.x2 and self.y <= v <= self.y2

    def iou(self, other: "BoundingBox") -> float:
        ix = max(0.0, min(self.x2, other.x2) - max(self.x, other.x))
        iy = max(0.0, min(self.y2, other.y2) - max(self.y, other.y))
        inter = ix * iy
        union = self.area + other.area - inter
        return inter / union if union > 0 else 0.0

    def clamp(self, width: int, height: int) -> "BoundingBox":
        x1 = min(max(self.x, 0.0), width)
        y1 = min(max(self.y, 0.0), height)
        x2 = min(max(self.x2, 0.0), width)
        y2 = min(max(self.y2, 0.0), height)
        return BoundingBox(x1, y1, x2 - x1, y2 - y1)

    def pixel_slice(self, width: int, height: int) -> tuple[slice, slice]:
        """Row/column slices of the integer pixels this box covers."""
        x1 = max(0, int(math.floor(self.x)))
        y1 = max(0, int(math.floor(self.y)))
        x2 = min(width, int(math.ceil(self.x2)))
        y2 = min(height, int(math.ceil(self.y2)))
        return slice(y1, y2), slice(x1, x2)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    category_id: int
    score: float = 1.0
    frame_id: int = 0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")

    @property
    def is_pictogram(self) -> bool:
        return is_task_category(self.category_id)

    def to_record(self, t: float | None = None) -> dict:
        rec = {"frame": self.frame_id}
        if t is not None:
            rec["t"] = t
        rec.update(category_id=self.category_id, score=self.score, **self.box.to_dict())
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Detection":
        box = BoundingBox(float(rec["x"]), float(rec["y"]), float(rec["w"]), float(rec["h"]))
        return cls(box, int(rec["category_id"]), float(rec.get("score", 1.0)), int(rec.get("frame", 0)))


@dataclass(frozen=True)
class CategoryMap:
    objects: dict[TaskId, frozenset[int]]
    needs_secondary: dict[TaskId, bool]

    def __post_init__(self):
        missing = [t.name for t in TaskId if t not in self.objects]
        if missing:
            raise ConfigError(f"category map lacks tasks: {', '.join(missing)}")
        empty = [t.name for t, ids in self.objects.items() if not ids]
        if empty:
            raise ConfigError(f"tasks without object categories: {', '.join(empty)}")

    @classmethod
    def parse(cls, text: str) -> "CategoryMap":
        objects: dict[TaskId, frozenset[int]] = {}
        secondary: dict[TaskId, bool] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            label, sep, rest = line.partition(":")
            if not sep:
                raise ConfigError("expected 'task: ids'", line=lineno)
            try:
                task = TaskId.from_label(label.strip())
            except UnknownTask as exc:
                raise ConfigError(str(exc), field_name=label.strip(), line=lineno) from None
            if task in objects:
                raise ConfigError("task listed twice", field_name=task.name, line=lineno)
            parts = rest.split()
            flag = False
            if parts and parts[-1] == "secondary":
                flag = True
                parts = parts[:-1]
            if len(parts) != 1:
                raise ConfigError("expected a comma-separated id list", field_name=task.name, line=lineno)
            try:
                ids = frozenset(int(tok) for tok in parts[0].split(",") if tok)
            except ValueError:
                raise ConfigError("category ids must be integers", field_name=task.name, line=lineno) from None
            objects[task] = ids
            secondary[task] = flag
        return cls(objects, secondary)

    @classmethod
    def load(cls, path) -> "CategoryMap":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> "CategoryMap":
        return cls.load(Path(__file__).with_name("data") / "categories.txt")

    def dumps(self) -> str:
        lines = []
        for task in TaskId:
            ids = ",".join(str(i) for i in sorted(self.objects[task]))
            suffix = " secondary" if self.needs_secondary.get(task, False) else ""
            lines.append(f"{task.name}: {ids}{suffix}")
        return "\n".join(lines) + "\n"

    def with_objects(self, task: TaskId, ids) -> "CategoryMap":
        objects = dict(self.objects)
        objects[task] = frozenset(ids)
        return CategoryMap(objects, dict(self.needs_secondary))


def resolve_task(task, cmap: CategoryMap) -> frozenset[int]:
    """Object categories that can fulfil ``task``."""
    try:
        task = TaskId(task)
    except ValueError:
        raise UnknownTask(f"task id {task} is not in the category map") from None
    ids = cmap.objects.get(task)
    if not ids:
        raise UnknownTask(f"task {task.name} is not in the category map")
    return ids


@dataclass(frozen=True)
class FeaturesMessage:
    """Selection payload handed from the user side to the robot side."""

    box: BoundingBox
    object_category: int
    task: TaskId
    has_secondary: bool = False
    secondary_box: BoundingBox | None = None
    timestamp: float = 0.0

    def to_dict(self) -> dict:
        return {
            "box": self.box.to_dict(),
            "object_category": self.object_category,
            "task": self.task.name,
            "has_secondary": self.has_secondary,
            "secondary_box": self.secondary_box.to_dict() if self.secondary_box else None,
            "timestamp": self.timestamp,
        }


@dataclass(frozen=True)
class DwellParams:
    dispersion_px: float = 25.0
    min_duration_ms: float = 300.0
    # longest single fixation report; keeps the publisher cadence sub-second
    max_duration_ms: float = 900.0


DETECTORS = ("ORB", "AKAZE")
MATCHERS = ("BruteForce", "Approximate")


@dataclass(frozen=True)
class PipelineConfig:
    ratio: float = 0.75
    min_matches: int = 5
    cutout_scale: float = 4.0
    dwell: DwellParams = field(default_factory=DwellParams)
    detector: str = "AKAZE"
    matcher: str = "Approximate"
    seed: int = 0

    def __post_init__(self):
        validate_config(self)

    def to_dict(self) -> dict:
        return {
            "ratio": self.ratio,
            "min_matches": self.min_matches,
            "cutout_scale": self.cutout_scale,
            "dispersion_px": self.dwell.dispersion_px,
            "min_duration_ms": self.dwell.min_duration_ms,
            "max_duration_ms": self.dwell.max_duration_ms,
            "detector": self.detector,
            "matcher": self.matcher,
            "seed": self.seed,
        }


def validate_config(cfg: PipelineConfig, line_of=None):
    line_of = line_of or {}

    def fail(name, msg):
        raise ConfigError(msg, field_name=name, line=line_of.get(name))

    if not (isinstance(cfg.ratio, (int, float)) and 0.0 < cfg.ratio <= 1.0):
        fail("ratio", f"must be in (0, 1], got {cfg.ratio}")
    if not (isinstance(cfg.min_matches, int) and cfg.min_matches >= 0):
        fail("min_matches", f"must be a non-negative integer, got {cfg.min_matches}")
    if not cfg.cutout_scale >= 1.0:
        fail("cutout_scale", f"must be >= 1, got {cfg.cutout_scale}")
    if not cfg.dwell.dispersion_px > 0:
        fail("dispersion_px", "must be positive")
    if not cfg.dwell.min_duration_ms > 0:
        fail("min_duration_ms", "must be positive")
    if not cfg.dwell.max_duration_ms >= cfg.dwell.min_duration_ms:
        fail("max_duration_ms", "must be >= min_duration_ms")
    if cfg.detector not in DETECTORS:
        fail("detector", f"must be one of {DETECTORS}, got {cfg.detector!r}")
    if cfg.matcher not in MATCHERS:
        fail("matcher", f"must be one of {MATCHERS}, got {cfg.matcher!r}")
    if not (isinstance(cfg.seed, int) and -(2**63) <= cfg.seed < 2**64):
        fail("seed", "must be a 64-bit integer")


_DETECTOR_ALIASES = {"orb": "ORB", "akaze": "AKAZE"}
_MATCHER_ALIASES = {
    "bf": "BruteForce",
    "bruteforce": "BruteForce",
    "approx": "Approximate",
    "approximate": "Approximate",
    "flann": "Approximate",
    "lsh": "Approximate",
}
_DWELL_KEYS = {"dispersion_px", "min_duration_ms", "max_duration_ms"}
_CONFIG_KEYS = {"ratio", "min_matches", "cutout_scale", "detector", "matcher", "seed"} | _DWELL_KEYS


def _coerce(name: str, value, line=None):
    try:
        if name in ("min_matches", "seed"):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if name == "detector":
            return _DETECTOR_ALIASES[str(value).lower()]
        if name == "matcher":
            return _MATCHER_ALIASES[str(value).lower()]
        return float(value)
    except (KeyError, ValueError, TypeError):
        raise ConfigError(f"invalid value {value!r}", field_name=name, line=line) from None


def config_with(base: PipelineConfig, overrides: dict, line_of=None) -> PipelineConfig:
    """Apply flat ``name -> value`` overrides (config-file / CLI vocabulary)."""
    line_of = line_of or {}
    top, dwell = {}, {}
    for name, value in overrides.items():
        if value is None:
            continue
        name = name.replace("-", "_")
        if name not in _CONFIG_KEYS:
            raise ConfigError("unknown setting", field_name=name, line=line_of.get(name))
        coerced = _coerce(name, value, line_of.get(name))
        (dwell if name in _DWELL_KEYS else top)[name] = coerced
    candidate = dict(
        (f.name, getattr(base, f.name)) for f in fields(base) if f.name != "dwell"
    )
    candidate.update(top)
    dwell_params = replace(base.dwell, **dwell)
    # validate before construction so errors carry line numbers
    probe = object.__new__(PipelineConfig)
    for k, v in candidate.items():
        object.__setattr__(probe, k, v)
    object.__setattr__(probe, "dwell", dwell_params)
    validate_config(probe, line_of)
    return PipelineConfig(dwell=dwell_params, **candidate)


def parse_config(text: str) -> PipelineConfig:
    values, line_of = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError("expected key=value", line=lineno)
        if key in values:
            raise ConfigError("duplicate setting", field_name=key, line=lineno)
        values[key] = value.strip()
        line_of[key.replace("-", "_")] = lineno
    return config_with(PipelineConfig(), values, line_of)


def load_config(path) -> PipelineConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
