"""Hamming k-nearest-neighbour matching of binary descriptors and Lowe's
ratio test.

Two matchers are provided: an exact brute-force scan and an approximate
multi-table LSH index on descriptor bit subsets (the structure FLANN uses for
binary descriptors).
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from gazepick.core import GazePickError, PipelineConfig
from gazepick.features import FeatureSet

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint16)


class WidthMismatch(GazePickError):
    pass


@dataclass(frozen=True)
class MatchPair:
    query_idx: int
    train_idx: int
    distance: int


@dataclass(frozen=True)
class KnnResult:
    """Per query row, up to k neighbours sorted by (distance, train_idx)."""

    rows: tuple[tuple[MatchPair, ...], ...]

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __getitem__(self, i):
        return self.rows[i]

    def best(self) -> list[MatchPair]:
        return [row[0] for row in self.rows if row]


def _check_compatible(query: FeatureSet, train: FeatureSet) -> None:
    if query.n_bits != train.n_bits or query.width_bytes != train.width_bytes:
        raise WidthMismatch(
            f"descriptor widths differ: {query.detector}/{query.n_bits} bits "
            f"vs {train.detector}/{train.n_bits} bits"
        )


def _bit_mask(n_bits: int, width: int) -> np.ndarray:
    bits = np.zeros(width * 8, np.uint8)
    bits[:n_bits] = 1
    return np.packbits(bits, bitorder="little")


def _masked(fs: FeatureSet) -> np.ndarray:
    d = fs.descriptors
    if fs.n_bits == fs.width_bytes * 8:
        return d
    return d & _bit_mask(fs.n_bits, fs.width_bytes)


def _unpack(desc: np.ndarray, n_bits: int) -> np.ndarray:
    return np.unpackbits(desc, axis=1, bitorder="little")[:, :n_bits]


def hamming_matrix(query: FeatureSet, train: FeatureSet) -> np.ndarray:
    """All pairwise Hamming distances (int32, queries x train)."""
    _check_compatible(query, train)
    qb = _unpack(_masked(query), query.n_bits).astype(np.float32)
    tb = _unpack(_masked(train), train.n_bits).astype(np.float32)
    # |a xor b| = |a| + |b| - 2 a.b ; exact in float32 for < 2**24
    dot = qb @ tb.T
    dist = qb.sum(1)[:, None] + tb.sum(1)[None, :] - 2.0 * dot
    return np.rint(dist).astype(np.int32)


def _rows_from_sorted(q_idx, t_idx, dist, n_query, k) -> KnnResult:
    """Build a KnnResult from pairs already sorted by (query, distance, train)."""
    rows: list[list[MatchPair]] = [[] for _ in range(n_query)]
    for q, t, d in zip(q_idx.tolist(), t_idx.tolist(), dist.tolist()):
        row = rows[q]
        if len(row) < k:
            row.append(MatchPair(q, t, d))
    return KnnResult(tuple(tuple(r) for r in rows))


def knn_bruteforce(query: FeatureSet, train: FeatureSet, k: int = 2) -> KnnResult:
    """Exact k nearest neighbours by Hamming distance; ties go to lower train_idx."""
    if k < 1:
        raise ValueError("k must be >= 1")
    _check_compatible(query, train)
    nq, nt = len(query), len(train)
    if nq == 0 or nt == 0:
        return KnnResult(tuple(() for _ in range(nq)))
    dist = hamming_matrix(query, train)
    kk = min(k, nt)
    # stable sort keeps lower train_idx first among equal distances
    order = np.argsort(dist, axis=1, kind="stable")[:, :kk]
    d = np.take_along_axis(dist, order, axis=1)
    rows = tuple(
        tuple(MatchPair(qi, int(t), int(dd)) for t, dd in zip(order[qi], d[qi])) for qi in range(nq)
    )
    return KnnResult(rows)


class LshIndex:
    """Multi-table LSH over descriptor bit subsets with multi-probe lookup.

    Each table hashes a descriptor by ``key_bits`` randomly chosen bit
    positions.  A query probes every bucket whose key is within
    ``probe_level`` bit flips of its own key.
    """

    def __init__(self, train: FeatureSet, n_tables: int = 12, key_bits: int = 20, probe_level: int = 2, seed: int = 0):
        if key_bits > 62:
            raise ValueError("key_bits must fit in a 64-bit integer")
        self.train = train
        self.n_bits = train.n_bits
        self.n_tables = n_tables
        self.key_bits = min(key_bits, train.n_bits)
        self.probe_level = probe_level
        rng = np.random.default_rng(seed)
        self.positions = [np.sort(rng.choice(self.n_bits, self.key_bits, replace=False)) for _ in range(n_tables)]
        self._weights = (1 << np.arange(self.key_bits, dtype=np.int64)).astype(np.int64)
        self._probes = self._probe_masks()

        bits = _unpack(_masked(train), self.n_bits)
        self._train_masked = _masked(train)
        self.tables = []
        for pos in self.positions:
            keys = bits[:, pos].astype(np.int64) @ self._weights
            order = np.argsort(keys, kind="stable")
            self.tables.append((keys[order], order))

    def _probe_masks(self) -> np.ndarray:
        masks = [0]
        for level in range(1, self.probe_level + 1):
            for combo in itertools.combinations(range(self.key_bits), level):
                m = 0
                for b in combo:
                    m |= 1 << b
                masks.append(m)
        return np.array(masks, dtype=np.int64)

    def candidates(self, query: FeatureSet) -> tuple[np.ndarray, np.ndarray]:
        """Unique (query_idx, train_idx) candidate pairs, sorted."""
        _check_compatible(query, self.train)
        nq = len(query)
        if nq == 0 or len(self.train) == 0:
            return np.zeros(0, np.intp), np.zeros(0, np.intp)
        qbits = _unpack(_masked(query), self.n_bits)
        q_parts, t_parts = [], []
        for pos, (sorted_keys, order) in zip(self.positions, self.tables):
            qkeys = qbits[:, pos].astype(np.int64) @ self._weights
            probes = (qkeys[:, None] ^ self._probes[None, :]).ravel()
            lo = np.searchsorted(sorted_keys, probes, side="left")
            hi = np.searchsorted(sorted_keys, probes, side="right")
            counts = hi - lo
            total = int(counts.sum())
            if total == 0:
                continue
            qrep = np.repeat(np.arange(nq).repeat(len(self._probes)), counts)
            starts = np.repeat(lo - np.cumsum(counts) + counts, counts)
            pos_in = starts + np.arange(total)
            q_parts.append(qrep)
            t_parts.append(order[pos_in])
        if not q_parts:
            return np.zeros(0, np.intp), np.zeros(0, np.intp)
        q = np.concatenate(q_parts)
        t = np.concatenate(t_parts)
        pairs = np.unique(q.astype(np.int64) * len(self.train) + t)
        return pairs // len(self.train), pairs % len(self.train)

    def knn(self, query: FeatureSet, k: int = 2) -> KnnResult:
        if k < 1:
            raise ValueError("k must be >= 1")
        q, t = self.candidates(query)
        nq = len(query)
        if len(q) == 0:
            return KnnResult(tuple(() for _ in range(nq)))
        qd = _masked(query)
        xor = qd[q] ^ self._train_masked[t]
        dist = _POPCOUNT[xor].sum(1).astype(np.int64)
        order = np.lexsort((t, dist, q))
        return _rows_from_sorted(q[order], t[order], dist[order], nq, k)


def knn_approx(query: FeatureSet, train: FeatureSet, k: int = 2, seed: int = 0, **index_params) -> KnnResult:
    _check_compatible(query, train)
    if len(train) == 0:
        return KnnResult(tuple(() for _ in range(len(query))))
    return LshIndex(train, seed=seed, **index_params).knn(query, k)


def ratio_filter(knn: KnnResult, ratio: float) -> list[MatchPair]:
    """Best match of each row kept iff d1 < ratio * d2; rows with < 2 neighbours drop."""
    out = []
    for row in knn:
        if len(row) < 2:
            continue
        if row[0].distance < ratio * row[1].distance:
            out.append(row[0])
    return out


def match_and_filter(a: FeatureSet, b: FeatureSet, cfg: PipelineConfig) -> list[MatchPair]:
    _check_compatible(a, b)
    if cfg.matcher == "BruteForce":
        knn = knn_bruteforce(a, b, 2)
    else:
        knn = knn_approx(a, b, 2, seed=cfg.seed)
    return ratio_filter(knn, cfg.ratio)


def write_matches_csv(matches, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_idx", "train_idx", "distance"])
        for m in matches:
            w.writerow([m.query_idx, m.train_idx, m.distance])
