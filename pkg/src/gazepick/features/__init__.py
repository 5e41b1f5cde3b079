"""Keypoint detection and binary descriptors (ORB, AKAZE)."""
from .akaze import detect_akaze
from .base import (
    AKAZE_BITS,
    ORB_BITS,
    FeatureSet,
    ImageError,
    ImageTooSmall,
    Keypoint,
    as_gray,
    dump_features,
    empty_features,
    load_features,
    load_image,
    save_image,
)
from .orb import detect_orb


def detect(img, detector: str = "AKAZE") -> FeatureSet:
    if detector == "ORB":
        return detect_orb(img)
    if detector == "AKAZE":
        return detect_akaze(img)
    raise ValueError(f"unknown detector {detector!r}")


__all__ = [
    "AKAZE_BITS",
    "ORB_BITS",
    "FeatureSet",
    "ImageError",
    "ImageTooSmall",
    "Keypoint",
    "as_gray",
    "detect",
    "detect_akaze",
    "detect_orb",
    "dump_features",
    "empty_features",
    "load_features",
    "load_image",
    "save_image",
]
