"""Detector x matcher benchmark over an image-pair corpus."""
from __future__ import annotations

import csv
import json
import math
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

from gazepick.core import GazePickError, PipelineConfig
from gazepick.features import detect, load_image
from gazepick.matching import knn_approx, knn_bruteforce, ratio_filter

TABLE_COLUMNS = (
    "Algorithm",
    "Total computation time (sec), mean (± SD)",
    "Computation time/feature matched (ms), mean (± SD)",
    "Features matched, mean (± SD)",
)
MATCHER_LABEL = {"BruteForce": "BF", "Approximate": "LSH"}
DEFAULT_GRID = (
    ("AKAZE", "BruteForce"),
    ("AKAZE", "Approximate"),
    ("ORB", "BruteForce"),
    ("ORB", "Approximate"),
)


class CorpusError(GazePickError):
    pass


def bundled_corpus() -> Path:
    return Path(__file__).resolve().parent.parent / "data" / "corpus"


def read_pairs(corpus) -> list[tuple[Path, Path]]:
    """Image pairs listed in ``pairs.csv`` (columns query, train)."""
    root = Path(corpus)
    if not root.is_dir():
        raise CorpusError(f"corpus directory {root} does not exist")
    listing = root / "pairs.csv"
    if not listing.exists():
        raise CorpusError(f"{listing} is missing")
    with open(listing, newline="", encoding="utf-8") as fh:
        pairs = [(root / r["query"], root / r["train"]) for r in csv.DictReader(fh)]
    if not pairs:
        raise CorpusError(f"corpus {root} lists no image pairs")
    return pairs


def corpus_images(corpus) -> list[Path]:
    seen = []
    for q, t in read_pairs(corpus):
        for p in (q, t):
            if p not in seen:
                seen.append(p)
    return seen


@dataclass(frozen=True)
class PairResult:
    total_s: float
    matches: int

    @property
    def ms_per_match(self) -> float:
        return self.total_s * 1000.0 / self.matches if self.matches else math.nan


def time_pair(query, train, detector: str, matcher: str, ratio: float, seed: int = 0, reps: int = 3) -> PairResult:
    """Median wall time of detect(query) + detect(train) + kNN + ratio test."""
    times, count = [], 0
    for _ in range(reps):
        t0 = time.perf_counter()
        fq = detect(query, detector)
        ft = detect(train, detector)
        if matcher == "BruteForce":
            knn = knn_bruteforce(fq, ft, 2)
        else:
            knn = knn_approx(fq, ft, 2, seed=seed)
        count = len(ratio_filter(knn, ratio))
        times.append(time.perf_counter() - t0)
    return PairResult(statistics.median(times), count)


def _mean_sd(values):
    values = [v for v in values if not math.isnan(v)]
    if not values:
        return math.nan, math.nan
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return statistics.fmean(values), sd


def _fmt(mean, sd, digits):
    if math.isnan(mean):
        return "undefined"
    return f"{mean:.{digits}f} (±{sd:.{digits}f})"


def bench_detectors(corpus, grid=DEFAULT_GRID, cfg: PipelineConfig = PipelineConfig(), reps: int = 3) -> list[dict]:
    pairs = read_pairs(corpus)
    images = {}
    for q, t in pairs:
        for p in (q, t):
            if p not in images:
                images[p] = load_image(p)
    rows = []
    for detector, matcher in grid:
        results = [time_pair(images[q], images[t], detector, matcher, cfg.ratio, cfg.seed, reps) for q, t in pairs]
        total = _mean_sd([r.total_s for r in results])
        per = _mean_sd([r.ms_per_match for r in results])
        matched = _mean_sd([float(r.matches) for r in results])
        rows.append(
            {
                "algorithm": f"{MATCHER_LABEL[matcher]}-{detector}",
                "detector": detector,
                "matcher": matcher,
                "total_s": total,
                "ms_per_match": per,
                "matches": matched,
                "match_counts": [r.matches for r in results],
            }
        )
    return rows


def write_bench(rows, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bench.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for r in rows:
            w.writerow(
                [
                    r["algorithm"],
                    _fmt(*r["total_s"], 3),
                    _fmt(*r["ms_per_match"], 3),
                    _fmt(*r["matches"], 2),
                ]
            )

    def clean(v):
        return None if isinstance(v, float) and math.isnan(v) else v

    payload = [
        {
            "algorithm": r["algorithm"],
            "match_counts": r["match_counts"],
            "matches_mean": clean(r["matches"][0]),
            "matches_sd": clean(r["matches"][1]),
            "timing": {
                "total_s_mean": clean(r["total_s"][0]),
                "total_s_sd": clean(r["total_s"][1]),
                "ms_per_match_mean": clean(r["ms_per_match"][0]),
                "ms_per_match_sd": clean(r["ms_per_match"][1]),
            },
        }
        for r in rows
    ]
    (out / "bench.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return out / "bench.csv"
