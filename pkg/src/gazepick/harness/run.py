"""Replay a scenario through the pipeline and score the outcomes."""
from __future__ import annotations

import csv
import json
import math
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from gazepick.core import CATEGORY_NAMES, BoundingBox, PipelineConfig, TaskId
from gazepick.gaze import DEBOUNCE_S, SelectionState, detect_fixations, step_selection
from gazepick.geometry import EmptyCloud, RigidTransform, extract_object_cloud, object_pose_world
from gazepick.transfer import FeatureCache, fallback_select, outcome_record, write_outcomes

from .scenario import Scenario, ScenarioError, Truth

UNDEFINED = "undefined"
TIMING_KEYS = ("elapsed_ms",)


@dataclass
class Metrics:
    total_measurements: int
    messages_sent: int
    correct_sent: int
    task_sent_rate: Optional[float]
    task_selection_success_rate: Optional[float]
    per_object_correct: dict[str, int]
    mean_selection_time_ms: float = math.nan
    sd_ms: float = math.nan
    name: str = ""
    approaches: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def rate(r):
            return UNDEFINED if r is None else round(r, 6)

        return {
            "name": self.name,
            "total_measurements": self.total_measurements,
            "messages_sent": self.messages_sent,
            "correct_sent": self.correct_sent,
            "task_sent_rate": rate(self.task_sent_rate),
            "task_selection_success_rate": rate(self.task_selection_success_rate),
            "per_object_correct": dict(sorted(self.per_object_correct.items())),
            "approaches": dict(sorted(self.approaches.items())),
            "timing": {
                "mean_selection_time_ms": None if math.isnan(self.mean_selection_time_ms) else round(self.mean_selection_time_ms, 3),
                "sd_selection_time_ms": None if math.isnan(self.sd_ms) else round(self.sd_ms, 3),
            },
        }


def _same_selection(a: dict, b: dict, debounce: float) -> bool:
    return (
        a["task"] == b["task"]
        and a.get("pictogram_box") == b.get("pictogram_box")
        and abs(b.get("t", 0.0) - a.get("t", 0.0)) < debounce
    )


def remove_duplicates(records: Sequence[dict], debounce: float = DEBOUNCE_S) -> list[dict]:
    """Drop a record that repeats the previously kept one within ``debounce`` seconds."""
    kept: list[dict] = []
    for rec in records:
        if kept and _same_selection(kept[-1], rec, debounce):
            continue
        kept.append(rec)
    return kept


def compute_metrics(records: Sequence[dict], name: str = "") -> Metrics:
    total = len(records)
    sent = [r for r in records if r["sent"]]
    correct = [r for r in sent if r.get("correct")]
    per_object: dict[str, int] = {}
    for r in correct:
        label = CATEGORY_NAMES.get(r["target_category"], str(r["target_category"]))
        per_object[label] = per_object.get(label, 0) + 1
    approaches: dict[str, int] = {}
    for r in records:
        approaches[r["approach"]] = approaches.get(r["approach"], 0) + 1
    times = [r["elapsed_ms"] for r in records if r.get("elapsed_ms") is not None]
    return Metrics(
        total_measurements=total,
        messages_sent=len(sent),
        correct_sent=len(correct),
        task_sent_rate=len(sent) / total if total else None,
        task_selection_success_rate=len(correct) / len(sent) if sent else None,
        per_object_correct=per_object,
        mean_selection_time_ms=statistics.fmean(times) if times else math.nan,
        sd_ms=statistics.stdev(times) if len(times) > 1 else math.nan,
        name=name,
        approaches=approaches,
    )


def _match_truth(truth: Sequence[Truth], t: float, box: BoundingBox, task: TaskId) -> Optional[Truth]:
    for tr in truth:
        if tr.onset - 1e-6 <= t <= tr.end + 1e-6 and tr.task == task and tr.pictogram_box.iou(box) >= 0.5:
            return tr
    return None


def _is_correct(rec: dict, tr: Optional[Truth]) -> bool:
    if not rec["sent"] or tr is None or tr.target_category is None:
        return False
    return rec["target_category"] == tr.target_category


def run_scenario(
    s: Scenario,
    cfg: PipelineConfig,
    cache: Optional[FeatureCache] = None,
    locate: bool = True,
) -> tuple[Metrics, list[dict]]:
    """Gaze -> selection -> user/robot transfer for every measurement.

    Each record carries the outcome fields plus the selection time ``t``,
    the pictogram box, the matching ground-truth index and correctness.
    """
    s.validate()
    user0 = s.user_frames[0]
    width, height = user0.size
    fixations = detect_fixations(s.gaze, cfg.dwell, width, height)
    state = SelectionState()
    records = []
    for fix in fixations:
        now = fix.end
        user_view = Scenario.frame_at(s.user_frames, now)
        state, msg = step_selection(state, fix, user_view.detections, s.categories, now)
        if msg is None:
            continue
        picto = next((d for d in user_view.detections if d.is_pictogram and d.box == msg.box), None)
        if picto is None:
            raise ScenarioError("selected pictogram missing from detections", user_view.frame_id)
        robot_view = Scenario.frame_at(s.robot_frames, now)
        t0 = time.perf_counter()
        outcome = fallback_select(user_view, picto, msg.task, robot_view, s.categories, cfg, cache=cache)
        elapsed = (time.perf_counter() - t0) * 1000.0
        if outcome.sent and outcome.match_count < cfg.min_matches:
            raise ScenarioError("outcome sent below the match threshold", robot_view.frame_id)

        rec = outcome_record(robot_view.frame_id, msg.task, outcome, elapsed)
        rec["t"] = round(now, 6)
        rec["user_frame"] = user_view.frame_id
        rec["pictogram_box"] = msg.box.to_dict()
        rec["cluster_sizes"] = list(outcome.cluster_sizes) if outcome.cluster_sizes is not None else None
        tr = _match_truth(s.ground_truth, now, msg.box, msg.task)
        rec["truth"] = tr.index if tr is not None else None
        rec["correct"] = _is_correct(rec, tr)
        if locate and outcome.sent and s.rig is not None and robot_view.frame_id in s.depth:
            try:
                cloud = extract_object_cloud(s.depth[robot_view.frame_id], s.rig, outcome.target.box)
                p = object_pose_world(cloud, RigidTransform.identity())
                rec["target_xyz"] = [round(p.X, 4), round(p.Y, 4), round(p.Z, 4)]
            except EmptyCloud:
                rec["target_xyz"] = None
        records.append(rec)

    records = remove_duplicates(records)
    return compute_metrics(records, s.name), records


def metrics_csv_row(m: Metrics, objects: Sequence[str]) -> dict:
    def fmt(r):
        return UNDEFINED if r is None else f"{r:.4f}"

    row = {
        "Test case": m.name,
        "Total meas.": m.total_measurements,
        "Messages sent": m.messages_sent,
        "Task sent rate": fmt(m.task_sent_rate),
        "Task selection success rate": fmt(m.task_selection_success_rate),
    }
    for obj in objects:
        row[f"Correct: {obj}"] = m.per_object_correct.get(obj, 0)
    return row


def write_metrics(metrics: Sequence[Metrics], out_dir, objects: Sequence[str] = ("bottle", "cup", "fork")) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = [m.to_dict() for m in metrics]
    (out / "metrics.json").write_text(
        json.dumps(payload[0] if len(payload) == 1 else payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    rows = [metrics_csv_row(m, objects) for m in metrics]
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def write_run(out_dir, metrics: Metrics, records: Sequence[dict]) -> None:
    write_metrics([metrics], out_dir)
    write_outcomes(records, Path(out_dir) / "outcomes.jsonl")
