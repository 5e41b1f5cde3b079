"""ORB keypoints and rotated-BRIEF descriptors, backed by OpenCV's ORB."""
from __future__ import annotations

import math

import cv2
import numpy as np

from .base import ORB_BITS, FeatureSet, as_gray, empty_features

SCALE_FACTOR = 1.2
N_LEVELS = 8


def detect_orb(img, max_features: int = 500) -> FeatureSet:
    """Harris-ranked FAST keypoints over an 8-level, 1.2x pyramid.

    At most ``max_features`` keypoints are returned, strongest first.
    """
    gray = as_gray(img)
    if gray.size == 0 or max_features <= 0:
        return empty_features("ORB")
    orb = cv2.ORB_create(
        nfeatures=max_features,
        scaleFactor=SCALE_FACTOR,
        nlevels=N_LEVELS,
        edgeThreshold=31,
        patchSize=31,
        scoreType=cv2.ORB_HARRIS_SCORE,
    )
    kps, desc = orb.detectAndCompute(gray, None)
    if not kps or desc is None:
        return empty_features("ORB")

    # OpenCV may keep extra keypoints that tie at the cutoff response
    order = sorted(range(len(kps)), key=lambda i: (-kps[i].response, kps[i].pt[1], kps[i].pt[0]))
    order = order[:max_features]
    kps = [kps[i] for i in order]
    desc = desc[order]

    xy = np.array([kp.pt for kp in kps], dtype=float)
    scale = np.array([kp.size for kp in kps], dtype=float)
    orientation = np.array([math.radians(kp.angle) % (2 * math.pi) for kp in kps], dtype=float)
    response = np.array([kp.response for kp in kps], dtype=float)
    return FeatureSet(xy, scale, orientation, response, np.ascontiguousarray(desc, np.uint8), "ORB", ORB_BITS)
