"""Pinhole camera geometry for locating a selected object in 3D.

Depth pixels are lifted with the depth intrinsics, moved into the colour
camera frame with the depth->colour extrinsics, projected with the colour
intrinsics and kept when they land inside the object's colour-image box.
Images are assumed rectified; no distortion model is applied.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import cv2
import numpy as np

from gazepick.core import BoundingBox, GazePickError

ORTHO_TOL = 1e-9


class OutOfBounds(GazePickError):
    pass


class EmptyCloud(GazePickError):
    pass


class CalibrationError(GazePickError):
    pass


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise CalibrationError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise CalibrationError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @classmethod
    def from_dict(cls, d) -> "Intrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), int(d["w"]), int(d["h"]))

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy, "w": self.width, "h": self.height}


@dataclass(frozen=True, eq=False)
class RigidTransform:
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise CalibrationError("transform has non-finite entries")
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL:
            raise CalibrationError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise CalibrationError("rotation has determinant != +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @property
    def matrix(self) -> np.ndarray:
        """4x4 homogeneous form [R t; 0 1]."""
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.R.T, -self.R.T @ self.t)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other."""
        return RigidTransform(self.R @ other.R, self.R @ other.t + self.t)

    def apply(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.R.T + self.t


@dataclass(frozen=True)
class Point3:
    X: float
    Y: float
    Z: float
    frame: str = "depth"

    def as_array(self) -> np.ndarray:
        return np.array([self.X, self.Y, self.Z])


@dataclass(frozen=True)
class CameraRig:
    depth: Intrinsics
    color: Intrinsics
    depth_to_color: RigidTransform
    depth_scale: float

    def __post_init__(self):
        if not self.depth_scale > 0:
            raise CalibrationError("depth_scale must be positive")

    @classmethod
    def from_dict(cls, d) -> "CameraRig":
        ext = d["depth_to_color"]
        if len(ext["R"]) != 9 or len(ext["t"]) != 3:
            raise CalibrationError("depth_to_color needs R[9] and t[3]")
        return cls(
            Intrinsics.from_dict(d["depth"]),
            Intrinsics.from_dict(d["color"]),
            RigidTransform(np.array(ext["R"], float).reshape(3, 3), np.array(ext["t"], float)),
            float(d["depth_scale"]),
        )

    def to_dict(self) -> dict:
        return {
            "depth": self.depth.to_dict(),
            "color": self.color.to_dict(),
            "depth_to_color": {"R": self.depth_to_color.R.ravel().tolist(), "t": self.depth_to_color.t.tolist()},
            "depth_scale": self.depth_scale,
        }


def load_calibration(path) -> CameraRig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CalibrationError(f"{path}: {exc}") from None
    try:
        return CameraRig.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise CalibrationError(f"{path}: malformed calibration ({exc})") from None


def load_depth(path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None or img.ndim != 2 or img.dtype != np.uint16:
        raise CalibrationError(f"{path}: expected a 16-bit single-channel depth image")
    return img


def save_depth(path, depth) -> None:
    depth = np.asarray(depth)
    if depth.dtype != np.uint16:
        raise ValueError("depth frames are stored as uint16")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    cv2.imwrite(str(path), depth)


def deproject(u: float, v: float, depth: np.ndarray, K: Intrinsics, depth_scale: float) -> Optional[Point3]:
    """Z * K^-1 [u v 1]^T for depth pixel (u, v); None where depth is missing."""
    h, w = depth.shape
    iu, iv = int(round(u)), int(round(v))
    if not (0 <= iu < w and 0 <= iv < h):
        raise OutOfBounds(f"pixel ({u}, {v}) outside {w}x{h} depth image")
    raw = int(depth[iv, iu])
    if raw == 0:
        return None
    Z = raw * depth_scale
    return Point3(Z * (u - K.cx) / K.fx, Z * (v - K.cy) / K.fy, Z, "depth")


def transform(p: Point3, T: RigidTransform, frame: Optional[str] = None) -> Point3:
    q = T.R @ p.as_array() + T.t
    return Point3(float(q[0]), float(q[1]), float(q[2]), frame or p.frame)


def project(p: Point3, K: Intrinsics) -> Optional[tuple[float, float]]:
    if p.Z <= 0:
        return None
    return (K.fx * p.X / p.Z + K.cx, K.fy * p.Y / p.Z + K.cy)


def in_box(u: float, v: float, box: BoundingBox) -> bool:
    return box.x <= u <= box.x + box.w and box.y <= v <= box.y + box.h


def deproject_all(depth: np.ndarray, K: Intrinsics, depth_scale: float):
    """Vectorised deprojection of every valid pixel in row-major order.

    Returns (points Nx3, pixel_index N) where pixel_index = v * width + u.
    """
    h, w = depth.shape
    vv, uu = np.nonzero(depth)
    Z = depth[vv, uu].astype(float) * depth_scale
    pts = np.column_stack([Z * (uu - K.cx) / K.fx, Z * (vv - K.cy) / K.fy, Z])
    return pts, vv * w + uu


def project_all(pts: np.ndarray, K: Intrinsics):
    """(u, v, valid) for an Nx3 array; points at Z <= 0 are invalid."""
    Z = pts[:, 2]
    valid = Z > 0
    safe = np.where(valid, Z, 1.0)
    u = K.fx * pts[:, 0] / safe + K.cx
    v = K.fy * pts[:, 1] / safe + K.cy
    return u, v, valid


def extract_object_cloud(depth: np.ndarray, rig: CameraRig, color_box: BoundingBox, return_index: bool = False):
    """Colour-frame points (Nx3, metres) of depth pixels that project into ``color_box``.

    With ``return_index`` the row-major depth pixel index of each point is
    returned as well.
    """
    pts, index = deproject_all(depth, rig.depth, rig.depth_scale)
    pc = rig.depth_to_color.apply(pts)
    u, v, valid = project_all(pc, rig.color)
    keep = (
        valid
        & (u >= color_box.x)
        & (u <= color_box.x + color_box.w)
        & (v >= color_box.y)
        & (v <= color_box.y + color_box.h)
    )
    if return_index:
        return pc[keep], index[keep]
    return pc[keep]


def object_pose_world(cloud, world_from_color: RigidTransform) -> Point3:
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(cloud) == 0:
        raise EmptyCloud("object point cloud is empty")
    c = world_from_color.apply(cloud.mean(axis=0))
    return Point3(float(c[0]), float(c[1]), float(c[2]), "world")


def write_xyz(cloud, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in np.asarray(cloud, dtype=float).reshape(-1, 3):
            fh.write(f"{x:.6f} {y:.6f} {z:.6f}\n")


def round_trip_error(rig: CameraRig, step: int = 16, depths=(0.5, 1.0, 2.0)) -> float:
    """Max pixel error of depth -> colour -> depth reprojection on a grid."""
    K_d, K_c = rig.depth, rig.color
    T = rig.depth_to_color
    Tinv = T.inverse()
    us = np.arange(0, K_d.width, step, dtype=float)
    vs = np.arange(0, K_d.height, step, dtype=float)
    uu, vv = np.meshgrid(us, vs)
    uu, vv = uu.ravel(), vv.ravel()
    worst = 0.0
    for Z in depths:
        pd = np.column_stack([Z * (uu - K_d.cx) / K_d.fx, Z * (vv - K_d.cy) / K_d.fy, np.full_like(uu, Z)])
        pc = T.apply(pd)
        uc, vc, ok = project_all(pc, K_c)
        # lift the colour pixel back with its own depth and return to depth frame
        Zc = pc[:, 2]
        back = np.column_stack([Zc * (uc - K_c.cx) / K_c.fx, Zc * (vc - K_c.cy) / K_c.fy, Zc])
        pd2 = Tinv.apply(back)
        ud, vd, ok2 = project_all(pd2, K_d)
        good = ok & ok2
        if good.any():
            err = np.hypot(ud[good] - uu[good], vd[good] - vv[good]).max()
            worst = max(worst, float(err))
    return worst
