"""Hamming-radius search over packed codes and precision/recall evaluation."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import numpy as np

from foresthash._accel import kernels
from foresthash.errors import ValidationError
from foresthash.hashcore import pack_bits, packed_nbytes, to_words, unpack_bits
from foresthash.training import encode_hash, resolve_threads


class RetrievalIndex:
    """Packed codes of uniform length ``nbits`` with aligned class labels.

    Used both as the searchable database and as a batch of queries.
    """

    def __init__(self, packed, nbits: int, labels=None):
        packed = np.ascontiguousarray(packed, dtype=np.uint8)
        if packed.ndim != 2 or packed.shape[1] != packed_nbytes(nbits):
            raise ValidationError(f"{nbits}-bit codes need shape (N, {packed_nbytes(nbits)}), got {packed.shape}")
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (packed.shape[0],):
                raise ValidationError(f"{labels.shape} labels for {packed.shape[0]} codes")
        self.packed = packed
        self.nbits = int(nbits)
        self.labels = labels
        self.words = to_words(packed) if packed.shape[0] else np.zeros((0, max(1, (packed.shape[1] + 7) // 8)), np.uint64)

    @classmethod
    def from_bits(cls, bits, labels=None) -> "RetrievalIndex":
        bits = np.atleast_2d(np.asarray(bits))
        return cls(pack_bits(bits), bits.shape[1], labels)

    def __len__(self) -> int:
        return self.packed.shape[0]

    def bits(self) -> np.ndarray:
        return unpack_bits(self.packed, self.nbits)

    def _query_words(self, q) -> np.ndarray:
        q = np.asarray(q)
        if q.ndim != 1 or q.shape[0] != self.nbits:
            raise ValidationError(f"query has {q.shape[-1] if q.ndim else 0} bits, index holds {self.nbits}-bit codes")
        return to_words(pack_bits(q))[0]

    def distances(self, q) -> np.ndarray:
        """Hamming distance of every stored code to the bit vector ``q``."""
        return kernels.hamming_distances(self.words, self._query_words(q))


def query_radius(index: RetrievalIndex, q, radius: int) -> np.ndarray:
    """Ascending indices of stored codes within Hamming distance ``radius`` of ``q``."""
    if radius < 0:
        raise ValidationError(f"radius must be >= 0, got {radius}")
    return kernels.radius_query(index.words, index._query_words(q), int(radius))


def brute_force_radius(index: RetrievalIndex, q, radius: int) -> np.ndarray:
    """Bit-by-bit linear scan; the reference that :func:`query_radius` must match."""
    bits = index.bits()
    q = np.asarray(q, dtype=np.uint8)
    if q.shape != (index.nbits,):
        raise ValidationError(f"query has shape {q.shape}, index holds {index.nbits}-bit codes")
    return np.flatnonzero((bits != q).sum(axis=1) <= radius).astype(np.int64)


@dataclass(frozen=True)
class RetrievalMetrics:
    precision: float
    recall: float
    mean_query_time: float
    queries_rejected: int
    n_queries: int
    radius: int

    def line(self) -> str:
        return (
            f"precision={self.precision:.2f}% recall={self.recall:.2f}% "
            f"rejected={self.queries_rejected} n_queries={self.n_queries} radius={self.radius}"
        )

    def table(self) -> str:
        rows = [
            ("radius", str(self.radius)),
            ("queries", str(self.n_queries)),
            ("rejected", str(self.queries_rejected)),
            ("precision (%)", f"{self.precision:.2f}"),
            ("recall (%)", f"{self.recall:.2f}"),
            ("query time (us)", f"{self.mean_query_time:.2f}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def _score_queries(index, queries, radius, rows):
    db_labels = index.labels
    out = np.zeros((len(rows), 3))  # retrieved, true positives, relevant
    t0 = time.perf_counter()
    for n, i in enumerate(rows):
        hits = kernels.radius_query(index.words, queries.words[i], radius)
        relevant = db_labels == queries.labels[i]
        out[n] = hits.size, np.count_nonzero(relevant[hits]), np.count_nonzero(relevant)
    return out, time.perf_counter() - t0


def evaluate(index: RetrievalIndex, queries: RetrievalIndex, radius: int, threads: int = 1) -> RetrievalMetrics:
    """Precision/recall (percent) of radius-``radius`` retrieval.

    Queries that retrieve nothing are rejected: counted, and left out of the
    precision mean.  Recall averages over every query that has at least one
    relevant database item.
    """
    if len(queries) == 0:
        raise ValidationError("query set is empty")
    if queries.nbits != index.nbits:
        raise ValidationError(f"queries have {queries.nbits} bits, index holds {index.nbits}-bit codes")
    if index.labels is None or queries.labels is None:
        raise ValidationError("evaluation needs labels for both database and queries")
    if radius < 0:
        raise ValidationError(f"radius must be >= 0, got {radius}")
    n = len(queries)
    workers = min(resolve_threads(threads), n)
    chunks = np.array_split(np.arange(n), workers)
    if workers == 1:
        results = [_score_queries(index, queries, radius, chunks[0])]
    else:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda rows: _score_queries(index, queries, radius, rows), chunks))
    stats = np.concatenate([r[0] for r in results])
    elapsed = sum(r[1] for r in results)
    retrieved, tp, relevant = stats.T
    answered = retrieved > 0
    precision = float((tp[answered] / retrieved[answered]).mean() * 100) if answered.any() else 0.0
    has_rel = relevant > 0
    recall = float((tp[has_rel] / relevant[has_rel]).mean() * 100) if has_rel.any() else 0.0
    return RetrievalMetrics(
        precision=precision,
        recall=recall,
        mean_query_time=elapsed / n * 1e6,
        queries_rejected=int(n - answered.sum()),
        n_queries=n,
        radius=int(radius),
    )


def bench_encode_runs(forest, selection, data, repetitions: int = 10, threads: int = 1) -> np.ndarray:
    """Per-repetition encoding time in microseconds per sample.

    Each repetition routes every row through all trees and packs the selected
    blocks.  One untimed warm-up run precedes the measurements.
    """
    if repetitions < 1:
        raise ValidationError(f"repetitions must be >= 1, got {repetitions}")
    x = getattr(data, "features", data)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValidationError("benchmark data is empty")
    encode_hash(forest, selection, x[: min(len(x), 64)], threads)
    runs = np.empty(repetitions)
    for r in range(repetitions):
        t0 = time.perf_counter()
        encode_hash(forest, selection, x, threads)
        runs[r] = (time.perf_counter() - t0) / x.shape[0] * 1e6
    return runs


def bench_encode(forest, selection, data, repetitions: int = 10, threads: int = 1) -> float:
    """Mean encoding time in microseconds per sample."""
    return float(bench_encode_runs(forest, selection, data, repetitions, threads).mean())
