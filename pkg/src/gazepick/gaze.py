"""Gaze stream -> fixations -> task selections.

Gaze samples arrive normalised with the origin at the lower-left corner of
the scene image.  They are converted once, at ingestion, to top-left pixel
coordinates; everything downstream works in pixels.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from gazepick.core import (
    BoundingBox,
    CategoryMap,
    Detection,
    DwellParams,
    FeaturesMessage,
    GazePickError,
    TaskId,
    resolve_task,
)

MIN_CONFIDENCE = 0.95
DEBOUNCE_S = 1.0
_SAME_BOX_IOU = 0.5


class EmptyStream(GazePickError):
    pass


@dataclass(frozen=True)
class GazeSample:
    t: float
    x: float
    y: float
    confidence: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "x", min(max(float(self.x), 0.0), 1.0))
        object.__setattr__(self, "y", min(max(float(self.y), 0.0), 1.0))


def to_pixels(sample: GazeSample, width: int, height: int) -> tuple[float, float]:
    """Lower-left normalised -> top-left pixel coordinates."""
    return sample.x * width, (1.0 - sample.y) * height


def from_pixels(t: float, u: float, v: float, width: int, height: int, confidence: float = 1.0) -> GazeSample:
    return GazeSample(t, u / width, 1.0 - v / height, confidence)


def load_gaze(path) -> list[GazeSample]:
    samples = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        samples.append(GazeSample(float(rec["t"]), float(rec["x"]), float(rec["y"]), float(rec.get("conf", 1.0))))
    return samples


def write_gaze(samples: Sequence[GazeSample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps({"t": round(s.t, 6), "x": round(s.x, 6), "y": round(s.y, 6), "conf": round(s.confidence, 4)}) + "\n")


@dataclass(frozen=True)
class Fixation:
    center: tuple[float, float]
    onset: float
    duration: float
    dispersion: float
    mean_confidence: float

    @property
    def end(self) -> float:
        return self.onset + self.duration

    @property
    def eligible(self) -> bool:
        return self.mean_confidence >= MIN_CONFIDENCE


def _dispersion(xs, ys) -> float:
    return float((xs.max() - xs.min()) + (ys.max() - ys.min()))


def detect_fixations(stream: Sequence[GazeSample], params: DwellParams, width: int, height: int) -> list[Fixation]:
    """Dispersion-threshold (I-DT) fixation identification.

    Dispersion is (max x - min x) + (max y - min y) in pixels.  A window that
    keeps growing is reported once it reaches ``params.max_duration_ms`` and a
    fresh window starts, so a long dwell yields a fixation at least every
    ``max_duration_ms``.
    """
    if not stream:
        raise EmptyStream("gaze stream has no samples")
    t = np.array([s.t for s in stream], float)
    if np.any(np.diff(t) < 0):
        raise ValueError("gaze stream must be sorted by time")
    xs = np.array([s.x for s in stream], float) * width
    ys = (1.0 - np.array([s.y for s in stream], float)) * height
    conf = np.array([s.confidence for s in stream], float)

    min_dur = params.min_duration_ms / 1000.0
    max_dur = params.max_duration_ms / 1000.0
    max_disp = params.dispersion_px
    eps = 1e-9
    n = len(t)
    out = []
    i = 0
    while i < n:
        # smallest window covering the minimum duration
        j = int(np.searchsorted(t, t[i] + min_dur - eps, side="left"))
        if j >= n:
            break
        if _dispersion(xs[i : j + 1], ys[i : j + 1]) > max_disp:
            i += 1
            continue
        lo_x, hi_x = xs[i : j + 1].min(), xs[i : j + 1].max()
        lo_y, hi_y = ys[i : j + 1].min(), ys[i : j + 1].max()
        while j + 1 < n and t[j + 1] - t[i] <= max_dur + eps:
            nx, ny = xs[j + 1], ys[j + 1]
            d = (max(hi_x, nx) - min(lo_x, nx)) + (max(hi_y, ny) - min(lo_y, ny))
            if d > max_disp:
                break
            lo_x, hi_x = min(lo_x, nx), max(hi_x, nx)
            lo_y, hi_y = min(lo_y, ny), max(hi_y, ny)
            j += 1
        sl = slice(i, j + 1)
        out.append(
            Fixation(
                center=(float(xs[sl].mean()), float(ys[sl].mean())),
                onset=float(t[i]),
                duration=float(t[j] - t[i]),
                dispersion=float((hi_x - lo_x) + (hi_y - lo_y)),
                mean_confidence=float(conf[sl].mean()),
            )
        )
        i = j + 1
    return out


def _pick_containing(point, detections: Sequence[Detection]) -> Optional[Detection]:
    u, v = point
    best, best_d = None, math.inf
    for det in detections:
        if not det.box.contains(u, v):
            continue
        cx, cy = det.box.center
        d = math.hypot(cx - u, cy - v)
        # strict < keeps the lowest index on ties
        if d < best_d:
            best, best_d = det, d
    return best


def select_pictogram(fix: Fixation, pictograms: Sequence[Detection]) -> Optional[Detection]:
    """Pictogram whose box contains the fixation centre (nearest centre wins)."""
    return _pick_containing(fix.center, [d for d in pictograms if d.is_pictogram])


def object_under(point, detections: Sequence[Detection]) -> Optional[Detection]:
    return _pick_containing(point, [d for d in detections if not d.is_pictogram])


def host_object(pictogram: Detection, detections: Sequence[Detection]) -> Optional[Detection]:
    """The plain object detection the pictogram is attached to, if any."""
    return object_under(pictogram.box.center, detections)


@dataclass(frozen=True)
class SelectionState:
    task: Optional[TaskId] = None
    primary: Optional[Detection] = None
    debounce_until: float = -math.inf
    last_task: Optional[TaskId] = None
    last_box: Optional[BoundingBox] = None
    suppressed: int = field(default=0, compare=False)

    @property
    def awaiting_secondary(self) -> bool:
        return self.task is not None


def _object_category(task: TaskId, pictogram: Detection, detections, cmap: CategoryMap) -> int:
    allowed = resolve_task(task, cmap)
    host = host_object(pictogram, detections)
    if host is not None and host.category_id in allowed:
        return host.category_id
    return min(allowed)


def _is_repeat(state: SelectionState, task: TaskId, box: BoundingBox, now: float) -> bool:
    return (
        now < state.debounce_until
        and state.last_task == task
        and state.last_box is not None
        and state.last_box.iou(box) >= _SAME_BOX_IOU
    )


def step_selection(
    state: SelectionState,
    fix: Fixation,
    detections: Sequence[Detection],
    cmap: CategoryMap,
    now: float,
    debounce: float = DEBOUNCE_S,
) -> tuple[SelectionState, Optional[FeaturesMessage]]:
    """Advance the dwell-selection state machine by one fixation."""
    if not fix.eligible:
        return state, None

    if state.awaiting_secondary:
        primary = state.primary
        # still dwelling on the task pictogram itself
        if primary.box.contains(*fix.center):
            return state, None
        target = object_under(fix.center, detections)
        if target is None:
            return state, None
        msg = FeaturesMessage(
            box=primary.box,
            object_category=_object_category(state.task, primary, detections, cmap),
            task=state.task,
            has_secondary=True,
            secondary_box=target.box,
            timestamp=now,
        )
        return SelectionState(debounce_until=now + debounce, last_task=state.task, last_box=primary.box), msg

    picto = select_pictogram(fix, detections)
    if picto is None:
        return state, None
    task = TaskId.from_category(picto.category_id)
    if _is_repeat(state, task, picto.box, now):
        # sliding window: a continuous dwell never re-triggers
        return (
            SelectionState(
                debounce_until=now + debounce,
                last_task=task,
                last_box=picto.box,
                suppressed=state.suppressed + 1,
            ),
            None,
        )
    if cmap.needs_secondary.get(task, False):
        return SelectionState(task=task, primary=picto, debounce_until=state.debounce_until,
                              last_task=state.last_task, last_box=state.last_box), None
    msg = FeaturesMessage(
        box=picto.box,
        object_category=_object_category(task, picto, detections, cmap),
        task=task,
        timestamp=now,
    )
    return SelectionState(debounce_until=now + debounce, last_task=task, last_box=picto.box), msg
