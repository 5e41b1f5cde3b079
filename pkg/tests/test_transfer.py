import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import textured
from gazepick.core import BoundingBox, CategoryMap, Detection, PipelineConfig, TaskId, resolve_task
from gazepick.matching import match_and_filter
from gazepick.transfer import (
    Approach,
    FeatureCache,
    NoCandidates,
    NoDetections,
    Reason,
    SceneView,
    SelectionOutcome,
    TooFewPoints,
    candidate_categories,
    comparative_match,
    expand_cutout,
    fallback_select,
    features_of,
    kmeans,
    outcome_record,
    wild_search,
    write_outcomes,
)

CUP, FORK, BOTTLE, SUITCASE = 41, 42, 39, 28
BOXES = [BoundingBox(40, 60, 150, 180), BoundingBox(250, 40, 120, 240), BoundingBox(430, 50, 140, 250)]


def scene(seeds=(1, 2, 3), cats=(CUP, FORK, BOTTLE), boxes=BOXES, bg=120, extra=()):
    img = np.full((360, 640), bg, np.uint8)
    dets = []
    for seed, cat, b in zip(seeds, cats, boxes):
        x, y, w, h = (int(v) for v in (b.x, b.y, b.w, b.h))
        if seed is not None:
            img[y : y + h, x : x + w] = textured(seed, (h, w))
        dets.append(Detection(b, cat))
    return SceneView(img, tuple(dets) + tuple(extra))


def noisy(img, seed=0, sd=2.0):
    r = np.random.default_rng(seed)
    return np.clip(img.astype(float) + r.normal(0, sd, img.shape), 0, 255).astype(np.uint8)


# -- cutouts ------------------------------------------------------------------

def test_scale_one_is_identity():
    b = BoundingBox(100, 100, 50, 50)
    assert expand_cutout(b, (1280, 720), 1.0) == b


def test_centred_box_scaled_by_four():
    b = BoundingBox(615, 335, 50, 50)
    e = expand_cutout(b, (1280, 720), 4.0)
    assert (e.w, e.h) == (200, 200)
    assert e.center == b.center


def test_corner_box_is_clamped():
    b = BoundingBox(0, 0, 50, 50)
    e = expand_cutout(b, (1280, 720), 4.0)
    assert e.x >= 0 and e.y >= 0 and e.x2 <= 1280 and e.y2 <= 720
    assert e.area < 16 * b.area
    assert e == BoundingBox(0, 0, 125, 125)


@given(st.floats(0, 1200), st.floats(0, 650), st.floats(2, 80), st.floats(2, 70), st.floats(1, 6))
def test_expanded_box_contains_original_and_stays_inside(x, y, w, h, s):
    b = BoundingBox(x, y, w, h).clamp(1280, 720)
    e = expand_cutout(b, (1280, 720), s)
    assert e.x <= b.x + 1e-9 and e.y <= b.y + 1e-9 and e.x2 >= b.x2 - 1e-9 and e.y2 >= b.y2 - 1e-9
    assert e.x2 <= 1280 and e.y2 <= 720


def test_scale_below_one_rejected():
    with pytest.raises(ValueError):
        expand_cutout(BoundingBox(0, 0, 5, 5), (10, 10), 0.5)


def test_small_cutouts_are_padded_for_akaze():
    patch = textured(4, (40, 90))
    fs = features_of(patch, "AKAZE")
    assert np.all(fs.xy[:, 1] < 40)


# -- comparative ------------------------------------------------------------

def test_pixel_exact_copy_wins_with_zero_distance(cfg):
    view = scene()
    cut = view.crop(BOXES[1])
    out = comparative_match(cut, view, {FORK}, cfg)
    assert out.sent and out.reason is Reason.Sent
    assert out.target is view.detections[1] and out.approach is Approach.Comparative
    m = match_and_filter(features_of(cut, "AKAZE"), features_of(view.crop(BOXES[1]), "AKAZE"), cfg)
    assert len(m) == out.match_count >= cfg.min_matches
    assert all(p.distance == 0 for p in m)


def test_uniform_cutouts_fall_below_threshold(cfg):
    view = scene(seeds=(None, None, None))
    out = comparative_match(np.full((100, 100), 90, np.uint8), view, {CUP}, cfg)
    assert not out.sent and out.reason is Reason.BelowThreshold and out.match_count == 0


def test_winner_of_wrong_category_is_not_sent(cfg):
    view = scene()
    out = comparative_match(view.crop(BOXES[1]), view, {CUP}, cfg)
    assert out.target is view.detections[1]
    assert not out.sent and out.reason is Reason.CategoryMismatch


def test_no_candidate_in_robot_view(cfg):
    with pytest.raises(NoCandidates):
        comparative_match(np.zeros((80, 80), np.uint8), scene(), {SUITCASE}, cfg)


def test_equal_counts_prefer_lower_index(cfg):
    view = scene(seeds=(5, 5, 6))
    out = comparative_match(view.crop(BOXES[0]), view, {CUP, FORK}, cfg)
    assert out.target is view.detections[0]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.integers(0, 2))
def test_comparative_winner_is_maximal(seed, pick):
    view = scene(seeds=(seed, seed + 1, seed + 2))
    cut = noisy(view.crop(BOXES[pick]), seed)
    cfg = PipelineConfig(matcher="BruteForce")
    out = comparative_match(cut, view, {CUP, FORK, BOTTLE}, cfg)
    uf = features_of(cut, "AKAZE")
    counts = [len(match_and_filter(uf, features_of(view.crop(d.box), "AKAZE"), cfg)) for d in view.objects]
    assert out.match_count == max(counts)
    if out.sent:
        assert out.match_count >= cfg.min_matches
        assert out.target.category_id in {CUP, FORK, BOTTLE}


# -- k-means ----------------------------------------------------------------

def test_single_cluster_is_the_mean(rng):
    pts = rng.normal(size=(40, 2)) * 10
    labels, c, sizes = kmeans(pts, 1, seed=3)
    assert np.allclose(c[0], pts.mean(0))
    assert sizes.tolist() == [40] and set(labels) == {0}


def test_two_blobs(rng):
    a = np.array([100.0, 100.0]) + rng.uniform(-5, 5, (30, 2))
    b = np.array([500.0, 500.0]) + rng.uniform(-5, 5, (30, 2))
    _, c, sizes = kmeans(np.vstack([a, b]), 2, seed=0)
    c = c[np.argsort(c[:, 0])]
    assert np.linalg.norm(c[0] - a.mean(0)) < 5 and np.linalg.norm(c[1] - b.mean(0)) < 5
    assert sorted(sizes) == [30, 30]


def test_k_equals_n_gives_singletons(rng):
    pts = rng.uniform(0, 100, (7, 2))
    labels, _, sizes = kmeans(pts, 7, seed=1)
    assert sizes.tolist() == [1] * 7 and sorted(labels) == list(range(7))


def test_too_few_points():
    with pytest.raises(TooFewPoints):
        kmeans(np.zeros((2, 2)), 3)
    with pytest.raises(ValueError):
        kmeans(np.zeros((2, 2)), 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 60), st.integers(1, 6))
def test_kmeans_partition_and_determinism(seed, n, k):
    pts = np.random.default_rng(seed).uniform(0, 500, (max(n, k), 2))
    labels, c, sizes = kmeans(pts, k, seed=seed)
    assert sizes.sum() == len(pts) and len(labels) == len(pts)
    assert np.array_equal(np.bincount(labels, minlength=k), sizes)
    again = kmeans(pts, k, seed=seed)
    assert np.array_equal(again[0], labels) and np.array_equal(again[1], c)


# -- wild search --------------------------------------------------------------

def test_all_matches_in_one_box_select_it(cfg):
    view = scene(seeds=(None, 8, None))
    out = wild_search(view.crop(BOXES[1]), view, cfg, seed=0)
    assert out.approach is Approach.WildSearch and out.sent
    assert out.target is view.detections[1]
    assert len(out.cluster_sizes) == len(view.objects) + 1


def test_too_few_matches_to_cluster(cfg):
    view = scene()
    out = wild_search(np.full((100, 100), 50, np.uint8), view, cfg)
    assert not out.sent and out.reason is Reason.TooFewForClustering
    assert out.cluster_sizes == () and out.target is None


def test_no_detections_raises(cfg):
    view = SceneView(np.full((100, 100), 9, np.uint8), ())
    with pytest.raises(NoDetections):
        wild_search(np.zeros((64, 64), np.uint8), view, cfg)


def test_planted_blob_near_bottle(cfg):
    # the cutout only exists in the robot scene on the bottle
    view = scene(seeds=(31, 32, 33))
    out = wild_search(noisy(view.crop(BOXES[2])), view, cfg, seed=4)
    assert out.sent and out.target.category_id == BOTTLE


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.integers(0, 2), st.integers(0, 5))
def test_wild_search_partition_gate_and_determinism(seed, pick, min_matches):
    view = scene(seeds=(seed, seed + 1, seed + 2))
    cut = noisy(view.crop(BOXES[pick]), seed, 4.0)
    cfg = PipelineConfig(min_matches=min_matches)
    out = wild_search(cut, view, cfg, seed=seed)
    assert out == wild_search(cut, view, cfg, seed=seed)
    if out.reason is not Reason.TooFewForClustering:
        assert sum(out.cluster_sizes) == out.match_count
        assert out.sent == (max(out.cluster_sizes) >= min_matches)
    if out.sent:
        assert out.match_count >= min_matches


# -- fallback routing ---------------------------------------------------------

def user_scene(task=TaskId.Drink, host=CUP):
    base = scene(seeds=(1, 2, 3), cats=(host, FORK, BOTTLE))
    glyph = Detection(BoundingBox(79, 114, 72, 72), int(task))
    return SceneView(base.image, base.detections + (glyph,)), glyph


def test_drink_with_cup_in_robot_view_goes_comparative(cfg):
    user, glyph = user_scene()
    robot = scene()
    out = fallback_select(user, glyph, TaskId.Drink, robot, CategoryMap.default(), cfg)
    assert out.approach is Approach.Comparative
    assert out.sent and out.target.category_id == CUP


def test_mislabelled_cup_goes_wild(cfg):
    user, glyph = user_scene()
    robot = scene(cats=(SUITCASE, FORK, BOTTLE))
    out = fallback_select(user, glyph, TaskId.Drink, robot, CategoryMap.default(), cfg)
    assert out.approach is Approach.WildSearch
    assert out.sent and out.target is robot.detections[0]


def test_empty_robot_view_is_an_unsent_outcome(cfg):
    user, glyph = user_scene()
    robot = SceneView(np.full((360, 640), 100, np.uint8), ())
    out = fallback_select(user, glyph, TaskId.Drink, robot, CategoryMap.default(), cfg)
    assert not out.sent and out.reason is Reason.NoDetections


def test_host_object_narrows_candidates():
    cmap = CategoryMap.default()
    user, glyph = user_scene(TaskId.PickObject, host=BOTTLE)
    assert candidate_categories(user, glyph, TaskId.PickObject, cmap) == {BOTTLE}
    user, glyph = user_scene(TaskId.Drink, host=FORK)
    assert candidate_categories(user, glyph, TaskId.Drink, cmap) == resolve_task(TaskId.Drink, cmap)


def test_cache_reuses_detections(cfg):
    user, glyph = user_scene()
    robot = scene()
    cache = FeatureCache()
    a = fallback_select(user, glyph, TaskId.Drink, robot, CategoryMap.default(), cfg, cache=cache)
    n = len(cache)
    b = fallback_select(user, glyph, TaskId.Drink, robot, CategoryMap.default(), cfg, cache=cache)
    assert a == b and len(cache) == n > 0


def test_wild_outcome_requires_cluster_sizes():
    with pytest.raises(ValueError):
        SelectionOutcome(None, Approach.WildSearch, 0, False, Reason.TooFewForClustering)


def test_outcome_log_schema(tmp_path):
    det = Detection(BoundingBox(1, 2, 3, 4), CUP)
    out = SelectionOutcome(det, Approach.Comparative, 9, True, Reason.Sent)
    rec = outcome_record(3, TaskId.Drink, out, 12.3456)
    assert set(rec) == {"frame", "task", "approach", "sent", "reason", "match_count", "target_category", "target_box", "elapsed_ms"}
    assert rec["task"] == "Drink" and rec["target_category"] == CUP and rec["elapsed_ms"] == 12.346
    write_outcomes([rec], tmp_path / "o.jsonl")
    assert json.loads((tmp_path / "o.jsonl").read_text()) == rec
