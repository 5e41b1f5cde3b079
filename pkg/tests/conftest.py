import numpy as np
import pytest

from gazepick.core import PipelineConfig
from gazepick.features import FeatureSet


def random_features(rng, n, n_bits, detector="ORB", width=None):
    """FeatureSet with uniformly random packed descriptors and dummy keypoints."""
    width = width or (n_bits + 7) // 8
    desc = rng.integers(0, 256, (n, width), dtype=np.uint8)
    z = np.zeros(n)
    return FeatureSet(rng.uniform(0, 100, (n, 2)), np.ones(n), z, z.copy(), desc, detector, n_bits)


def popcount_oracle(a: np.ndarray, b: np.ndarray, n_bits: int) -> int:
    """Hamming distance of two packed descriptors via Python integers."""
    mask = (1 << n_bits) - 1
    x = int.from_bytes(a.tobytes(), "little") ^ int.from_bytes(b.tobytes(), "little")
    return bin(x & mask).count("1")


def checkerboard(square=16, n=8, margin=32, lo=30, hi=220):
    size = square * n + 2 * margin
    img = np.full((size, size), lo, np.uint8)
    for i in range(n):
        for j in range(n):
            if (i + j) % 2 == 0:
                y, x = margin + i * square, margin + j * square
                img[y : y + square, x : x + square] = hi
    corners = [(margin + j * square, margin + i * square) for i in range(1, n) for j in range(1, n)]
    return img, np.array(corners, float)


def textured(seed=0, size=(240, 320)):
    """Smoothed random blobs: plenty of corners at several scales."""
    import cv2

    rng = np.random.default_rng(seed)
    h, w = size
    img = np.full((h, w), 128, np.uint8)
    for _ in range(120):
        c = int(rng.integers(0, 256))
        if rng.random() < 0.5:
            x, y = int(rng.integers(0, w)), int(rng.integers(0, h))
            cv2.rectangle(img, (x, y), (x + int(rng.integers(5, 40)), y + int(rng.integers(5, 40))), c, -1)
        else:
            cv2.circle(img, (int(rng.integers(0, w)), int(rng.integers(0, h))), int(rng.integers(3, 20)), c, -1)
    return img


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cfg():
    return PipelineConfig()


ACCEPTANCE: dict[int, str] = {}


def report(n: int, ok: bool, detail: str) -> bool:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
