"""Procedural scenes: textured objects, task glyphs and camera crops."""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import cv2
import numpy as np

from gazepick.core import BoundingBox, TaskId

GLYPH_SIZE = 72
VIEW_W, VIEW_H = 1280, 720
WORLD_W, WORLD_H = 1450, 840


def stable_seed(*parts) -> int:
    """Seed derived from labels, independent of Python's hash randomisation."""
    return zlib.crc32("/".join(str(p) for p in parts).encode("utf-8"))


def _glyph_canvas():
    g = np.full((GLYPH_SIZE, GLYPH_SIZE), 255, np.uint8)
    cv2.rectangle(g, (0, 0), (GLYPH_SIZE - 1, GLYPH_SIZE - 1), 0, 7)
    return g


def _draw_glyph(task: TaskId) -> np.ndarray:
    g = _glyph_canvas()
    c = GLYPH_SIZE // 2
    if task is TaskId.Drink:
        for r, col in ((24, 0), (17, 255), (10, 0), (4, 255)):
            cv2.circle(g, (c, c), r, col, -1)
    elif task is TaskId.FillCup:
        cv2.fillPoly(g, [np.array([[c, 14], [58, 50], [14, 50]])], 0)
        cv2.rectangle(g, (16, 54), (56, 60), 0, -1)
    elif task is TaskId.Eat:
        cell = 16
        for i in range(3):
            for j in range(3):
                if (i + j) % 2 == 0:
                    x0, y0 = 12 + j * cell, 12 + i * cell
                    cv2.rectangle(g, (x0, y0), (x0 + cell - 1, y0 + cell - 1), 0, -1)
    elif task is TaskId.Scratch:
        for k in range(-3, 4):
            o = k * 14
            cv2.line(g, (12 + o, 60), (60 + o, 12), 0, 5)
        cv2.rectangle(g, (0, 0), (GLYPH_SIZE - 1, GLYPH_SIZE - 1), 0, 7)
        g[:7, :] = 0
    elif task is TaskId.SwitchLightSwitch:
        cv2.fillPoly(g, [np.array([[c, 10], [62, c], [c, 62], [10, c]])], 0)
        cv2.rectangle(g, (c - 9, c - 9), (c + 9, c + 9), 255, -1)
    elif task is TaskId.Brush:
        cv2.rectangle(g, (c - 6, 12), (c + 6, 60), 0, -1)
        cv2.rectangle(g, (12, c - 6), (60, c + 6), 0, -1)
        cv2.circle(g, (c, c), 4, 255, -1)
    elif task is TaskId.PickObject:
        for (x, y), (dx, dy) in (((14, 14), (1, 1)), ((58, 14), (-1, 1)), ((14, 58), (1, -1)), ((58, 58), (-1, -1))):
            cv2.rectangle(g, (x, y), (x + dx * 16, y + dy * 5), 0, -1)
            cv2.rectangle(g, (x, y), (x + dx * 5, y + dy * 16), 0, -1)
        cv2.circle(g, (c, c), 7, 0, -1)
    elif task is TaskId.PlaceObject:
        for k, y in enumerate((14, 30, 46)):
            pts = np.array([[14, y], [c, y + 12], [58, y], [58, y + 6], [c, y + 18], [14, y + 6]])
            cv2.fillPoly(g, [pts], 0)
    return g


GLYPHS = {t: _draw_glyph(t) for t in TaskId}


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    category_id: int
    width: int
    height: int


CUP = ObjectSpec("cup", 41, 180, 200)
FORK = ObjectSpec("fork", 42, 120, 300)
BOTTLE = ObjectSpec("bottle", 39, 130, 320)


def object_texture(spec: ObjectSpec, identity: str) -> np.ndarray:
    """BGR texture for one physical object instance, ``height x width``."""
    rng = np.random.default_rng(stable_seed("texture", identity))
    h, w = spec.height, spec.width
    base = rng.integers(60, 200, 3)
    img = np.empty((h, w, 3), np.uint8)
    img[:] = base
    for _ in range(45):
        col = tuple(int(v) for v in rng.integers(0, 256, 3))
        kind = rng.integers(3)
        if kind == 0:
            x0, y0 = int(rng.integers(0, w)), int(rng.integers(0, h))
            cv2.rectangle(img, (x0, y0), (x0 + int(rng.integers(6, 40)), y0 + int(rng.integers(6, 40))), col, -1)
        elif kind == 1:
            cv2.circle(img, (int(rng.integers(0, w)), int(rng.integers(0, h))), int(rng.integers(4, 22)), col, -1)
        else:
            p1 = (int(rng.integers(0, w)), int(rng.integers(0, h)))
            p2 = (int(rng.integers(0, w)), int(rng.integers(0, h)))
            cv2.line(img, p1, p2, col, int(rng.integers(2, 6)))
    return img


def object_mask(spec: ObjectSpec) -> np.ndarray:
    h, w = spec.height, spec.width
    m = np.zeros((h, w), np.uint8)
    if spec is BOTTLE or spec.name == "bottle":
        neck = w // 3
        cv2.rectangle(m, (0, h // 4), (w - 1, h - 1), 255, -1)
        cv2.rectangle(m, ((w - neck) // 2, 0), ((w + neck) // 2, h // 4), 255, -1)
    elif spec.name == "fork":
        cv2.rectangle(m, (0, h // 3), (w - 1, h - 1), 255, -1)
        for k in range(4):
            x0 = k * w // 4 + 4
            cv2.rectangle(m, (x0, 0), (x0 + w // 4 - 10, h // 3), 255, -1)
    else:
        cv2.rectangle(m, (0, 0), (w - 1, h - 1), 255, -1)
    return m


def background(seed_label: str) -> np.ndarray:
    rng = np.random.default_rng(stable_seed("background", seed_label))
    coarse = rng.normal(0.0, 1.0, (9, 15, 3)).astype(np.float32)
    smooth = cv2.resize(coarse, (WORLD_W, WORLD_H), interpolation=cv2.INTER_CUBIC)
    tint = rng.integers(110, 170, 3).astype(np.float32)
    fine = cv2.GaussianBlur(rng.normal(0.0, 4.0, (WORLD_H, WORLD_W, 3)).astype(np.float32), (0, 0), 1.5)
    img = tint + 18.0 * smooth + fine
    return np.clip(img, 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class Placed:
    """An object instance on the world canvas, in world pixels."""

    spec: ObjectSpec
    identity: str
    box: BoundingBox
    task: TaskId | None
    glyph_box: BoundingBox | None


def compose_world(seed_label: str, layout, with_glyphs: bool = True) -> tuple[np.ndarray, list[Placed]]:
    """Paint objects onto a background.

    ``layout`` is a sequence of (spec, identity, task, center_x, center_y).
    """
    world = background(seed_label).copy()
    placed = []
    for spec, identity, task, cx, cy in layout:
        x0, y0 = int(round(cx - spec.width / 2)), int(round(cy - spec.height / 2))
        tex = object_texture(spec, identity)
        mask = object_mask(spec) > 0
        region = world[y0 : y0 + spec.height, x0 : x0 + spec.width]
        region[mask] = tex[mask]
        glyph_box = None
        if with_glyphs and task is not None:
            gx = x0 + (spec.width - GLYPH_SIZE) // 2
            gy = y0 + int(spec.height * 0.55) - GLYPH_SIZE // 2
            g = GLYPHS[task]
            world[gy : gy + GLYPH_SIZE, gx : gx + GLYPH_SIZE] = g[:, :, None]
            glyph_box = BoundingBox(float(gx), float(gy), float(GLYPH_SIZE), float(GLYPH_SIZE))
        placed.append(Placed(spec, identity, BoundingBox(float(x0), float(y0), float(spec.width), float(spec.height)), task, glyph_box))
    return world, placed


@dataclass(frozen=True)
class Camera:
    """A view of the world: crop at (ox, oy), then magnify by ``zoom``."""

    ox: float
    oy: float
    zoom: float = 1.0
    gain: float = 1.0
    bias: float = 0.0

    def render(self, world: np.ndarray, noise_seed: int, noise_sd: float = 2.0) -> np.ndarray:
        M = np.array([[self.zoom, 0.0, -self.ox * self.zoom], [0.0, self.zoom, -self.oy * self.zoom]])
        img = cv2.warpAffine(world, M, (VIEW_W, VIEW_H), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT)
        rng = np.random.default_rng(noise_seed)
        out = img.astype(np.float32) * self.gain + self.bias + rng.normal(0.0, noise_sd, img.shape).astype(np.float32)
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)

    def box(self, b: BoundingBox) -> BoundingBox:
        x1 = min(max((b.x - self.ox) * self.zoom, 0.0), VIEW_W)
        y1 = min(max((b.y - self.oy) * self.zoom, 0.0), VIEW_H)
        x2 = min(max((b.x2 - self.ox) * self.zoom, 0.0), VIEW_W)
        y2 = min(max((b.y2 - self.oy) * self.zoom, 0.0), VIEW_H)
        x1, y1, x2, y2 = (round(v, 3) for v in (x1, y1, x2, y2))
        return BoundingBox(x1, y1, round(x2 - x1, 3), round(y2 - y1, 3))

    def point(self, x: float, y: float) -> tuple[float, float]:
        return (x - self.ox) * self.zoom, (y - self.oy) * self.zoom


USER_CAM = Camera(0.0, 0.0, 1.0)
ROBOT_CAM = Camera(250.0, 150.0, 1.1, gain=0.92, bias=8.0)
