"""Carry the user's selection over to the robot's camera view.

The user-side pictogram box is enlarged into an object cutout and matched
against the robot image.  When the robot sees an object of a category the
task accepts, each robot detection is compared directly (comparative
approach).  Otherwise the whole robot image is matched, the match locations
are clustered and the detection nearest the densest cluster is chosen
(in-the-wild search).
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import cv2
import numpy as np

from gazepick.core import (
    BoundingBox,
    CategoryMap,
    Detection,
    GazePickError,
    PipelineConfig,
    TaskId,
    resolve_task,
)
from gazepick.features import FeatureSet, as_gray, detect, empty_features
from gazepick.features.akaze import MIN_SIZE
from gazepick.gaze import host_object
from gazepick.matching import MatchPair, match_and_filter

KMEANS_MAX_ITER = 100


class NoCandidates(GazePickError):
    pass


class NoDetections(GazePickError):
    pass


class TooFewPoints(GazePickError):
    pass


class Approach(str, enum.Enum):
    Comparative = "Comparative"
    WildSearch = "WildSearch"


class Reason(str, enum.Enum):
    Sent = "Sent"
    BelowThreshold = "BelowThreshold"
    CategoryMismatch = "CategoryMismatch"
    TooFewForClustering = "TooFewForClustering"
    NoDetections = "NoDetections"


@dataclass(frozen=True, eq=False)
class SceneView:
    image: np.ndarray
    detections: tuple[Detection, ...]
    frame_id: int = 0
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))
        h, w = self.image.shape[:2]
        for det in self.detections:
            b = det.box
            if b.x2 > w + 1e-6 or b.y2 > h + 1e-6:
                raise ValueError(f"detection {b} exceeds {w}x{h} image")

    @property
    def size(self) -> tuple[int, int]:
        h, w = self.image.shape[:2]
        return w, h

    @property
    def gray(self) -> np.ndarray:
        return as_gray(self.image)

    @property
    def objects(self) -> list[Detection]:
        return [d for d in self.detections if not d.is_pictogram]

    def crop(self, box: BoundingBox) -> np.ndarray:
        w, h = self.size
        rows, cols = box.pixel_slice(w, h)
        return self.gray[rows, cols]


@dataclass(frozen=True)
class SelectionOutcome:
    target: Optional[Detection]
    approach: Approach
    match_count: int
    sent: bool
    reason: Reason
    cluster_sizes: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.approach is Approach.WildSearch and self.cluster_sizes is None:
            raise ValueError("wild-search outcomes carry cluster sizes")


def outcome_record(frame: int, task: TaskId, outcome: SelectionOutcome, elapsed_ms: float) -> dict:
    tgt = outcome.target
    return {
        "frame": frame,
        "task": TaskId(task).name,
        "approach": outcome.approach.value,
        "sent": outcome.sent,
        "reason": outcome.reason.value,
        "match_count": outcome.match_count,
        "target_category": tgt.category_id if tgt is not None else None,
        "target_box": tgt.box.to_dict() if tgt is not None else None,
        "elapsed_ms": round(elapsed_ms, 3),
    }


def write_outcomes(records: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def expand_cutout(pictogram: BoundingBox, img_dims: tuple[int, int], scale: float) -> BoundingBox:
    """Same centre, each side multiplied by ``scale``, clamped to the image."""
    if scale < 1:
        raise ValueError("cutout scale must be >= 1")
    if scale == 1:
        return pictogram
    w, h = img_dims
    cx, cy = pictogram.center
    nw, nh = pictogram.w * scale, pictogram.h * scale
    x1, y1 = max(0.0, cx - nw / 2.0), max(0.0, cy - nh / 2.0)
    x2, y2 = min(float(w), cx + nw / 2.0), min(float(h), cy + nh / 2.0)
    return BoundingBox(x1, y1, x2 - x1, y2 - y1)


def features_of(img, detector: str) -> FeatureSet:
    """Detect on ``img``; patches below the detector's minimum are edge-padded."""
    gray = as_gray(img)
    if gray.size == 0:
        return empty_features(detector)
    h, w = gray.shape
    if detector == "AKAZE" and (h < MIN_SIZE or w < MIN_SIZE):
        ph, pw = max(0, MIN_SIZE - h), max(0, MIN_SIZE - w)
        gray = cv2.copyMakeBorder(gray, 0, ph, 0, pw, cv2.BORDER_REPLICATE)
        fs = detect(gray, detector)
        keep = np.flatnonzero((fs.xy[:, 0] < w) & (fs.xy[:, 1] < h))
        return fs.subset(keep)
    return detect(gray, detector)


class FeatureCache:
    """Memoises detections per (view, box, detector) across calls.

    Views are held by reference so their identity stays valid while cached.
    """

    def __init__(self):
        self._store = {}

    def get(self, view: SceneView, box: Optional[BoundingBox], detector: str) -> FeatureSet:
        key = (id(view), None if box is None else (box.x, box.y, box.w, box.h), detector)
        hit = self._store.get(key)
        if hit is None:
            img = view.gray if box is None else view.crop(box)
            hit = (view, features_of(img, detector))
            self._store[key] = hit
        return hit[1]

    def __len__(self):
        return len(self._store)


def view_features(view: SceneView, box: Optional[BoundingBox], detector: str, cache: Optional[FeatureCache] = None) -> FeatureSet:
    if cache is not None:
        return cache.get(view, box, detector)
    return features_of(view.gray if box is None else view.crop(box), detector)


def _kmeanspp(pts: np.ndarray, k: int, rng) -> np.ndarray:
    centroids = [pts[rng.integers(len(pts))]]
    d2 = ((pts - centroids[0]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            i = int(rng.choice(len(pts), p=d2 / total))
        else:
            i = int(rng.integers(len(pts)))
        centroids.append(pts[i])
        d2 = np.minimum(d2, ((pts - pts[i]) ** 2).sum(1))
    return np.array(centroids, dtype=float)


def kmeans(points, k: int, seed: int = 0):
    """Lloyd's k-means from a seeded k-means++ start.

    Returns (assignments, centroids, sizes).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(pts) < k:
        raise TooFewPoints(f"{len(pts)} points cannot form {k} clusters")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(pts, k, rng)
    labels = None
    for _ in range(KMEANS_MAX_ITER):
        d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(-1)
        new = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            members = pts[labels == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
    sizes = np.bincount(labels, minlength=k)
    return labels, centroids, sizes


def _largest_cluster(centroids: np.ndarray, sizes: np.ndarray) -> int:
    # biggest first, then lower centroid x, then lower y
    order = np.lexsort((centroids[:, 1], centroids[:, 0], -sizes))
    return int(order[0])


def _nearest_detection(point, detections: Sequence[Detection]) -> Detection:
    px, py = point
    best, best_d = None, math.inf
    for det in detections:
        cx, cy = det.box.center
        d = math.hypot(cx - px, cy - py)
        if d < best_d:
            best, best_d = det, d
    return best


def _mean_distance(matches: Sequence[MatchPair]) -> float:
    return sum(m.distance for m in matches) / len(matches) if matches else math.inf


def comparative_match(
    user_cutout: np.ndarray,
    robot_view: SceneView,
    candidate_ids,
    cfg: PipelineConfig,
    user_features: Optional[FeatureSet] = None,
    cache: Optional[FeatureCache] = None,
) -> SelectionOutcome:
    """Match the cutout against every robot object box; most matches wins."""
    candidate_ids = frozenset(candidate_ids)
    objects = robot_view.objects
    if not any(d.category_id in candidate_ids for d in objects):
        raise NoCandidates("robot view has no detection of a candidate category")
    uf = user_features if user_features is not None else features_of(user_cutout, cfg.detector)

    best_key, best_det, best_count = None, None, 0
    for idx, det in enumerate(objects):
        rf = view_features(robot_view, det.box, cfg.detector, cache)
        matches = match_and_filter(uf, rf, cfg) if len(uf) and len(rf) else []
        key = (-len(matches), _mean_distance(matches), idx)
        if best_key is None or key < best_key:
            best_key, best_det, best_count = key, det, len(matches)

    if best_count < cfg.min_matches:
        reason = Reason.BelowThreshold
    elif best_det.category_id not in candidate_ids:
        reason = Reason.CategoryMismatch
    else:
        reason = Reason.Sent
    return SelectionOutcome(best_det, Approach.Comparative, best_count, reason is Reason.Sent, reason)


def wild_search(
    user_cutout: np.ndarray,
    robot_view: SceneView,
    cfg: PipelineConfig,
    seed: int = 0,
    user_features: Optional[FeatureSet] = None,
    cache: Optional[FeatureCache] = None,
) -> SelectionOutcome:
    """Match against the full robot image and follow the densest match cluster."""
    objects = robot_view.objects
    if not objects:
        raise NoDetections("robot view has no object detections")
    uf = user_features if user_features is not None else features_of(user_cutout, cfg.detector)
    rf = view_features(robot_view, None, cfg.detector, cache)
    matches = match_and_filter(uf, rf, cfg) if len(uf) and len(rf) else []
    k = len(objects) + 1
    if len(matches) < k:
        return SelectionOutcome(None, Approach.WildSearch, len(matches), False, Reason.TooFewForClustering, ())
    pts = rf.xy[[m.train_idx for m in matches]]
    _, centroids, sizes = kmeans(pts, k, seed)
    c = _largest_cluster(centroids, sizes)
    target = _nearest_detection(centroids[c], objects)
    sent = int(sizes[c]) >= cfg.min_matches
    return SelectionOutcome(
        target,
        Approach.WildSearch,
        len(matches),
        sent,
        Reason.Sent if sent else Reason.BelowThreshold,
        tuple(int(s) for s in sizes),
    )


def candidate_categories(user_view: SceneView, pictogram: Detection, task: TaskId, cmap: CategoryMap) -> frozenset[int]:
    """Task categories, narrowed by the object the pictogram sits on when that agrees."""
    allowed = resolve_task(task, cmap)
    host = host_object(pictogram, user_view.detections)
    if host is not None and host.category_id in allowed:
        return frozenset({host.category_id})
    return allowed


def fallback_select(
    user_view: SceneView,
    selected_pictogram: Detection,
    task: TaskId,
    robot_view: SceneView,
    cmap: CategoryMap,
    cfg: PipelineConfig,
    cache: Optional[FeatureCache] = None,
) -> SelectionOutcome:
    box = expand_cutout(selected_pictogram.box, user_view.size, cfg.cutout_scale)
    cutout = user_view.crop(box)
    candidates = candidate_categories(user_view, selected_pictogram, task, cmap)
    uf = view_features(user_view, box, cfg.detector, cache)
    if any(d.category_id in candidates for d in robot_view.objects):
        return comparative_match(cutout, robot_view, candidates, cfg, user_features=uf, cache=cache)
    try:
        return wild_search(cutout, robot_view, cfg, seed=cfg.seed, user_features=uf, cache=cache)
    except NoDetections:
        return SelectionOutcome(None, Approach.WildSearch, 0, False, Reason.NoDetections, ())
