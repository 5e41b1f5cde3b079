from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from gazepick.core import GazePickError

ORB_BITS = 256
AKAZE_BITS = 486  # 3 channels x (6 + 36 + 120) comparisons, stored in 61 bytes


class ImageTooSmall(GazePickError):
    pass


class ImageError(GazePickError):
    pass


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float
    orientation: float
    response: float


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Keypoints stored column-wise plus one packed binary descriptor per row.

    ``n_bits`` is the number of meaningful descriptor bits; any remaining bits
    in the last byte are padding and are never compared.
    """

    xy: np.ndarray
    scale: np.ndarray
    orientation: np.ndarray
    response: np.ndarray
    descriptors: np.ndarray
    detector: str
    n_bits: int

    def __post_init__(self):
        n = len(self.xy)
        if self.descriptors.ndim != 2 or len(self.descriptors) != n:
            raise ValueError("need exactly one descriptor per keypoint")
        if self.descriptors.dtype != np.uint8:
            raise ValueError("descriptors must be packed uint8")
        if self.descriptors.shape[1] * 8 < self.n_bits:
            raise ValueError("descriptor too narrow for n_bits")
        for arr in (self.xy, self.scale, self.orientation, self.response, self.descriptors):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.xy)

    @property
    def keypoints(self) -> list[Keypoint]:
        return [
            Keypoint(float(x), float(y), float(s), float(o), float(r))
            for (x, y), s, o, r in zip(self.xy, self.scale, self.orientation, self.response)
        ]

    @property
    def width_bytes(self) -> int:
        return self.descriptors.shape[1]

    def subset(self, idx) -> "FeatureSet":
        idx = np.asarray(idx, dtype=np.intp)
        return FeatureSet(
            self.xy[idx].copy(),
            self.scale[idx].copy(),
            self.orientation[idx].copy(),
            self.response[idx].copy(),
            self.descriptors[idx].copy(),
            self.detector,
            self.n_bits,
        )

    def translated(self, dx: float, dy: float) -> "FeatureSet":
        return FeatureSet(
            self.xy + np.array([dx, dy]),
            self.scale.copy(),
            self.orientation.copy(),
            self.response.copy(),
            self.descriptors.copy(),
            self.detector,
            self.n_bits,
        )

    def same_bits(self, other: "FeatureSet") -> bool:
        return (
            self.detector == other.detector
            and self.n_bits == other.n_bits
            and len(self) == len(other)
            and np.array_equal(self.xy, other.xy)
            and np.array_equal(self.scale, other.scale)
            and np.array_equal(self.orientation, other.orientation)
            and np.array_equal(self.response, other.response)
            and np.array_equal(self.descriptors, other.descriptors)
        )


def empty_features(detector: str) -> FeatureSet:
    n_bits = ORB_BITS if detector == "ORB" else AKAZE_BITS
    width = (n_bits + 7) // 8
    z = np.zeros(0)
    return FeatureSet(np.zeros((0, 2)), z, z.copy(), z.copy(), np.zeros((0, width), np.uint8), detector, n_bits)


def as_gray(img) -> np.ndarray:
    """8-bit single-channel view of ``img``; colour input is BGR (BT.601 luma)."""
    img = np.asarray(img)
    if img.ndim == 3:
        if img.shape[2] == 4:
            img = cv2.cvtColor(img, cv2.COLOR_BGRA2GRAY)
        elif img.shape[2] == 3:
            img = cv2.cvtColor(np.ascontiguousarray(img), cv2.COLOR_BGR2GRAY)
        elif img.shape[2] == 1:
            img = img[:, :, 0]
        else:
            raise ImageError(f"unsupported channel count {img.shape[2]}")
    if img.ndim != 2:
        raise ImageError(f"expected a 2-D image, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ImageError(f"expected 8-bit pixels, got {img.dtype}")
    return np.ascontiguousarray(img)


def load_image(path, gray: bool = True) -> np.ndarray:
    path = Path(path)
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise ImageError(f"cannot read image {path}")
    if img.dtype != np.uint8:
        raise ImageError(f"{path}: expected 8-bit image, got {img.dtype}")
    return as_gray(img) if gray else img


def save_image(path, img) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), img):
        raise ImageError(f"cannot write image {path}")


def dump_features(fs: FeatureSet, path) -> None:
    """JSON-lines debug dump: one keypoint per line with its hex descriptor."""
    with open(path, "w", encoding="utf-8") as fh:
        for (x, y), s, o, r, d in zip(fs.xy, fs.scale, fs.orientation, fs.response, fs.descriptors):
            rec = {
                "x": float(x),
                "y": float(y),
                "scale": float(s),
                "orientation": float(o),
                "response": float(r),
                "descriptor": d.tobytes().hex(),
            }
            fh.write(json.dumps(rec) + "\n")


def load_features(path, detector: str) -> FeatureSet:
    rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    if not rows:
        return empty_features(detector)
    xy = np.array([[r["x"], r["y"]] for r in rows], dtype=float)
    desc = np.array([np.frombuffer(bytes.fromhex(r["descriptor"]), np.uint8) for r in rows])
    return FeatureSet(
        xy,
        np.array([r["scale"] for r in rows], float),
        np.array([r["orientation"] for r in rows], float),
        np.array([r["response"] for r in rows], float),
        desc,
        detector,
        ORB_BITS if detector == "ORB" else AKAZE_BITS,
    )
