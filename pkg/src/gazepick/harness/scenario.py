"""Scenario model, synthetic SU-case generation and on-disk layout."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import cv2
import numpy as np

from gazepick.core import BoundingBox, CategoryMap, Detection, GazePickError, TaskId
from gazepick.features import load_image
from gazepick.gaze import GazeSample, from_pixels, load_gaze, write_gaze
from gazepick.geometry import CameraRig, Intrinsics, RigidTransform, load_calibration, load_depth, save_depth
from gazepick.transfer import SceneView

from . import synth

GAZE_HZ = 60.0
DWELL_S = 1.2
GAP_S = 0.8
N_SELECTIONS = 100
N_FRAMES = 4
NONEXISTENT_CATEGORY = 999


class ScenarioError(GazePickError):
    def __init__(self, message, frame=None):
        super().__init__(message if frame is None else f"frame {frame}: {message}")
        self.frame = frame


class CaseKind(str, enum.Enum):
    Case1 = "case1"
    Case2 = "case2"
    Case3Joint = "case3-joint"
    Case3Disjoint = "case3-disjoint"

    @classmethod
    def parse(cls, text: str) -> "CaseKind":
        key = text.strip().lower().replace("_", "-")
        for k in cls:
            if key in (k.value, k.name.lower()):
                return k
        raise ValueError(f"unknown case kind {text!r}; expected one of {', '.join(k.value for k in cls)}")


@dataclass(frozen=True)
class Truth:
    """Expected outcome of one scripted selection."""

    index: int
    onset: float
    end: float
    task: TaskId
    pictogram_box: BoundingBox
    target_category: Optional[int]
    target_box: Optional[BoundingBox]
    object_name: str

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "onset": round(self.onset, 6),
            "end": round(self.end, 6),
            "task": self.task.name,
            "pictogram_box": self.pictogram_box.to_dict(),
            "target_category": self.target_category,
            "target_box": self.target_box.to_dict() if self.target_box else None,
            "object": self.object_name,
        }

    @classmethod
    def from_dict(cls, d) -> "Truth":
        tb = d.get("target_box")
        return cls(
            int(d["index"]),
            float(d["onset"]),
            float(d["end"]),
            TaskId.from_label(d["task"]),
            BoundingBox(**d["pictogram_box"]),
            d.get("target_category"),
            BoundingBox(**tb) if tb else None,
            d.get("object", ""),
        )


@dataclass(eq=False)
class Scenario:
    name: str
    user_frames: list[SceneView]
    robot_frames: list[SceneView]
    gaze: list[GazeSample]
    ground_truth: list[Truth]
    categories: CategoryMap = field(default_factory=CategoryMap.default)
    rig: Optional[CameraRig] = None
    depth: dict[int, np.ndarray] = field(default_factory=dict)
    kind: Optional[str] = None
    seed: Optional[int] = None
    custom_categories: bool = False

    def validate(self) -> None:
        for label, frames in (("user", self.user_frames), ("robot", self.robot_frames)):
            if not frames:
                raise ScenarioError(f"scenario has no {label} frames")
            for prev, cur in zip(frames, frames[1:]):
                if cur.t < prev.t:
                    raise ScenarioError(f"{label} frame timestamps go backwards", cur.frame_id)
        for prev, cur in zip(self.gaze, self.gaze[1:]):
            if cur.t < prev.t:
                raise ScenarioError(f"gaze timestamps go backwards at t={cur.t}")

    @staticmethod
    def frame_at(frames, t: float) -> SceneView:
        """Latest frame captured at or before ``t`` (the first one before that)."""
        best = frames[0]
        for f in frames:
            if f.t <= t:
                best = f
            else:
                break
        return best


def _synthetic_rig() -> CameraRig:
    K = Intrinsics(900.0, 900.0, synth.VIEW_W / 2.0, synth.VIEW_H / 2.0, synth.VIEW_W, synth.VIEW_H)
    return CameraRig(K, K, RigidTransform(np.eye(3), np.array([0.015, 0.0, 0.0])), 0.001)


def _synthetic_depth(boxes) -> np.ndarray:
    """Tilted table plane at about 1 m with objects standing 0.2 m closer (mm units)."""
    v = np.arange(synth.VIEW_H, dtype=float)[:, None]
    depth = np.repeat(1100.0 - 0.2 * v, synth.VIEW_W, axis=1)
    for b in boxes:
        rows, cols = b.pixel_slice(synth.VIEW_W, synth.VIEW_H)
        depth[rows, cols] -= 200.0
    return np.rint(depth).astype(np.uint16)


def _layout(rng, objects, identities, tasks):
    xs = [430.0, 760.0, 1090.0]
    order = rng.permutation(len(objects))
    out = []
    for slot, i in enumerate(order):
        cy = 440.0 + float(rng.integers(-20, 21))
        cx = xs[slot] + float(rng.integers(-15, 16))
        out.append((objects[i], identities[i], tasks[i], cx, cy))
    return out


def _detections(placed, cam: synth.Camera, frame_id: int, rng, include_glyphs: bool) -> list[Detection]:
    dets = []
    for p in placed:
        b = cam.box(p.box)
        jx, jy = rng.uniform(-2.0, 2.0, 2)
        x, y = max(0.0, b.x + jx), max(0.0, b.y + jy)
        x, y = round(float(x), 2), round(float(y), 2)
        box = BoundingBox(x, y, round(float(min(b.w, synth.VIEW_W - x)), 2), round(float(min(b.h, synth.VIEW_H - y)), 2))
        dets.append(Detection(box, p.spec.category_id, round(float(rng.uniform(0.80, 0.97)), 3), frame_id))
        if include_glyphs and p.glyph_box is not None:
            g = cam.box(p.glyph_box)
            dets.append(Detection(BoundingBox(round(g.x, 2), round(g.y, 2), round(g.w, 2), round(g.h, 2)),
                                  int(p.task), round(float(rng.uniform(0.85, 0.99)), 3), frame_id))
    return dets


def _script_gaze(rng, user_placed, neutral):
    """Dwell on a pictogram until the cue, look away, repeat."""
    samples, truth = [], []
    dt = 1.0 / GAZE_HZ
    t = 0.5
    glyphs = [p for p in user_placed if p.glyph_box is not None]
    for idx in range(N_SELECTIONS):
        p = glyphs[int(rng.integers(len(glyphs)))]
        gx, gy = synth.USER_CAM.point(*p.glyph_box.center)
        onset = t
        n = int(round(DWELL_S * GAZE_HZ))
        for _ in range(n):
            u, v = gx + rng.normal(0.0, 1.5), gy + rng.normal(0.0, 1.5)
            samples.append(from_pixels(round(t, 6), u, v, synth.VIEW_W, synth.VIEW_H, round(float(rng.uniform(0.96, 1.0)), 4)))
            t += dt
        truth.append((idx, onset, t, p))
        nx, ny = neutral[int(rng.integers(len(neutral)))]
        for k in range(int(round(GAP_S * GAZE_HZ))):
            conf = 0.3 if 20 <= k < 24 else float(rng.uniform(0.96, 1.0))
            u, v = nx + rng.normal(0.0, 3.0), ny + rng.normal(0.0, 3.0)
            samples.append(from_pixels(round(t, 6), u, v, synth.VIEW_W, synth.VIEW_H, round(conf, 4)))
            t += dt
    return samples, truth, t


def generate_su_case(kind, seed: int = 0) -> Scenario:
    kind = CaseKind.parse(kind) if isinstance(kind, str) else kind
    rng = np.random.default_rng([seed, list(CaseKind).index(kind)])
    objects = [synth.CUP, synth.FORK, synth.BOTTLE]
    if kind is CaseKind.Case2:
        user_tasks = [TaskId.PlaceObject] * 3
    else:
        user_tasks = [TaskId.Drink, TaskId.PlaceObject, TaskId.PickObject]

    cmap = CategoryMap.default()
    custom = False
    if kind is CaseKind.Case2:
        cmap = cmap.with_objects(TaskId.PlaceObject, [NONEXISTENT_CATEGORY])
        custom = True

    if kind in (CaseKind.Case1, CaseKind.Case2):
        world, placed = synth.compose_world(f"room-{seed}", _layout(rng, objects, [o.name + "-a" for o in objects], user_tasks))
        user_world, user_placed = world, placed
        robot_world, robot_placed = world, placed
    else:
        user_world, user_placed = synth.compose_world(
            f"away-{seed}", _layout(rng, objects, [o.name + "-b" for o in objects], user_tasks)
        )
        robot_world, robot_placed = synth.compose_world(
            f"room-{seed}",
            _layout(rng, objects, [o.name + "-a" for o in objects], user_tasks),
            with_glyphs=kind is CaseKind.Case3Joint,
        )
    shared_scene = robot_world is user_world

    neutral = [(120.0, 110.0), (1160.0, 110.0), (640.0, 680.0)]
    gaze, scripted, t_end = _script_gaze(rng, user_placed, neutral)

    user_frames, robot_frames, depth = [], [], {}
    rig = _synthetic_rig()
    for f in range(N_FRAMES):
        ft = round(f * t_end / N_FRAMES, 6)
        frng = np.random.default_rng([seed, f, 7])
        uimg = synth.USER_CAM.render(user_world, int(frng.integers(2**31)))
        rimg = synth.ROBOT_CAM.render(robot_world, int(frng.integers(2**31)))
        udets = _detections(user_placed, synth.USER_CAM, f, frng, include_glyphs=True)
        rdets = _detections(robot_placed, synth.ROBOT_CAM, f, frng, include_glyphs=True)
        user_frames.append(SceneView(uimg, udets, f, ft))
        robot_frames.append(SceneView(rimg, rdets, f, ft))
        depth[f] = _synthetic_depth([d.box for d in rdets if not d.is_pictogram])

    truth = []
    for idx, onset, end, p in scripted:
        target_box, target_cat = None, None
        if shared_scene:
            target_cat = p.spec.category_id
            target_box = synth.ROBOT_CAM.box(p.box)
        truth.append(
            Truth(idx, onset, end, p.task, synth.USER_CAM.box(p.glyph_box), target_cat, target_box, p.spec.name)
        )
    return Scenario(
        name=f"{kind.value}-seed{seed}",
        user_frames=user_frames,
        robot_frames=robot_frames,
        gaze=gaze,
        ground_truth=truth,
        categories=cmap,
        rig=rig,
        depth=depth,
        kind=kind.value,
        seed=seed,
        custom_categories=custom,
    )


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_detections(path: Path, frames) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in frames:
            for d in f.detections:
                fh.write(json.dumps(d.to_record(f.t), sort_keys=True) + "\n")


def save_scenario(s: Scenario, out_dir) -> Path:
    out = Path(out_dir)
    (out / "user").mkdir(parents=True, exist_ok=True)
    (out / "robot").mkdir(parents=True, exist_ok=True)
    manifest = {
        "name": s.name,
        "kind": s.kind,
        "seed": s.seed,
        "user_frames": [],
        "robot_frames": [],
        "categories": "categories.txt" if s.custom_categories else None,
        "calib": "calib.json" if s.rig is not None else None,
        "depth": [],
    }
    for label, frames in (("user", s.user_frames), ("robot", s.robot_frames)):
        for f in frames:
            rel = f"{label}/{f.frame_id:06d}.png"
            if not cv2.imwrite(str(out / rel), f.image):
                raise OSError(f"cannot write {out / rel}")
            manifest[f"{label}_frames"].append({"id": f.frame_id, "t": f.t, "file": rel})
    if s.depth:
        (out / "depth").mkdir(exist_ok=True)
        for fid in sorted(s.depth):
            rel = f"depth/{fid:06d}.png"
            save_depth(out / rel, s.depth[fid])
            manifest["depth"].append({"frame": fid, "file": rel})
    if s.custom_categories:
        (out / "categories.txt").write_text(s.categories.dumps(), encoding="utf-8")
    if s.rig is not None:
        _write_json(out / "calib.json", s.rig.to_dict())
    write_gaze(s.gaze, out / "gaze.jsonl")
    _write_detections(out / "detections_user.jsonl", s.user_frames)
    _write_detections(out / "detections_robot.jsonl", s.robot_frames)
    with open(out / "truth.jsonl", "w", encoding="utf-8") as fh:
        for tr in s.ground_truth:
            fh.write(json.dumps(tr.to_dict(), sort_keys=True) + "\n")
    _write_json(out / "scenario.json", manifest)
    return out


def _read_detections(path: Path) -> dict[int, list[Detection]]:
    by_frame: dict[int, list[Detection]] = {}
    if not path.exists():
        return by_frame
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            det = Detection.from_record(rec)
        except (ValueError, KeyError) as exc:
            raise ScenarioError(f"{path.name}:{n}: bad detection record ({exc})") from None
        by_frame.setdefault(det.frame_id, []).append(det)
    return by_frame


def load_scenario(path) -> Scenario:
    root = Path(path)
    manifest_path = root / "scenario.json"
    if not root.is_dir():
        raise FileNotFoundError(f"scenario directory {root} does not exist")
    if not manifest_path.exists():
        raise FileNotFoundError(f"{manifest_path} is missing")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario.json: {exc}") from None

    frames = {}
    for label in ("user", "robot"):
        dets = _read_detections(root / f"detections_{label}.jsonl")
        views = []
        for entry in manifest.get(f"{label}_frames", []):
            fid = int(entry["id"])
            img = load_image(root / entry["file"], gray=False)
            try:
                views.append(SceneView(img, dets.get(fid, []), fid, float(entry["t"])))
            except ValueError as exc:
                raise ScenarioError(str(exc), fid) from None
        frames[label] = views

    cats = manifest.get("categories")
    cmap = CategoryMap.load(root / cats) if cats else CategoryMap.default()
    calib = manifest.get("calib")
    rig = load_calibration(root / calib) if calib else None
    depth = {int(e["frame"]): load_depth(root / e["file"]) for e in manifest.get("depth", [])}
    truth = []
    truth_path = root / "truth.jsonl"
    if truth_path.exists():
        for line in truth_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                truth.append(Truth.from_dict(json.loads(line)))
    s = Scenario(
        name=manifest.get("name", root.name),
        user_frames=frames["user"],
        robot_frames=frames["robot"],
        gaze=load_gaze(root / "gaze.jsonl"),
        ground_truth=truth,
        categories=cmap,
        rig=rig,
        depth=depth,
        kind=manifest.get("kind"),
        seed=manifest.get("seed"),
        custom_categories=bool(cats),
    )
    s.validate()
    return s
