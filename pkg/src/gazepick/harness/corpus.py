"""Build the small image-pair corpus used by the benchmark."""
from __future__ import annotations

import csv
from pathlib import Path

import cv2
import numpy as np

from gazepick.core import TaskId
from gazepick.features import as_gray
from gazepick.transfer import expand_cutout

from . import synth
from .scenario import _layout

SCALE = 0.5
CUTOUT_SCALE = 4.0
SCENES = {
    # name: (user camera, robot camera)
    "indoor": (synth.USER_CAM, synth.ROBOT_CAM),
    "outdoor": (
        synth.Camera(0.0, 0.0, 1.0, gain=1.25, bias=25.0),
        synth.Camera(200.0, 120.0, 1.05, gain=1.35, bias=30.0),
    ),
}


def _half(img):
    h, w = img.shape[:2]
    return cv2.resize(img, (int(w * SCALE), int(h * SCALE)), interpolation=cv2.INTER_AREA)


def build_corpus(out_dir, seed: int = 0) -> Path:
    """Per scene: one pictogram cutout per object (user side) and one robot view."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    objects = [synth.CUP, synth.FORK, synth.BOTTLE]
    tasks = [TaskId.Drink, TaskId.PlaceObject, TaskId.PickObject]
    rows = []
    for k, (scene, (ucam, rcam)) in enumerate(SCENES.items()):
        rng = np.random.default_rng([seed, k])
        world, placed = synth.compose_world(f"corpus-{scene}-{seed}", _layout(rng, objects, [o.name + "-a" for o in objects], tasks))
        user = ucam.render(world, int(rng.integers(2**31)))
        robot = rcam.render(world, int(rng.integers(2**31)))
        robot_name = f"{scene}_robot.png"
        cv2.imwrite(str(out / robot_name), as_gray(_half(robot)))
        for p in placed:
            b = expand_cutout(ucam.box(p.glyph_box), (synth.VIEW_W, synth.VIEW_H), CUTOUT_SCALE)
            rows_, cols = b.pixel_slice(synth.VIEW_W, synth.VIEW_H)
            name = f"{scene}_{p.spec.name}.png"
            cv2.imwrite(str(out / name), as_gray(_half(user[rows_, cols])))
            rows.append((name, robot_name))
    with open(out / "pairs.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query", "train"])
        w.writerows(rows)
    return out
