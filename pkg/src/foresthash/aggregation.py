"""Information-theoretic code aggregation.

Each tree's code block is recoded as a categorical leaf variable.  Blocks
are chosen greedily to maximise

    J(S) = sum_{i in S, j not in S} I(B_i; B_j) + lam * sum_{i in S} I(B_i; C)

a pairwise surrogate for the mutual information between the selected and
the remaining blocks, plus an optional label term.  All estimates are
plug-in (maximum likelihood) in bits.

Selection happens once, at training time.  Encoding only ever consumes a
frozen :class:`BlockSelection`.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from foresthash._accel import kernels
from foresthash.errors import ConfigurationError, ValidationError
from foresthash.hashcore import TreeShape, codes_to_leaves

TIE_TOL = 1e-12
EXHAUSTIVE_BUDGET = 10**6


class SelectionMethod(str, Enum):
    MI = "mi"
    RANDOM = "random"


@dataclass(frozen=True)
class AggregationConfig:
    target_bits: int = 36
    lam: float = 1.0
    method: SelectionMethod = SelectionMethod.MI
    mi_sample_split: float = 1.0
    """Fraction of labelled training rows whose labels feed the label term."""

    def __post_init__(self):
        object.__setattr__(self, "method", SelectionMethod(self.method))
        if self.target_bits < 1:
            raise ConfigurationError(f"target_bits must be >= 1, got {self.target_bits}")
        if not self.lam >= 0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 < self.mi_sample_split <= 1.0:
            raise ConfigurationError(f"mi_sample_split must lie in (0, 1], got {self.mi_sample_split}")


@dataclass(frozen=True)
class BlockSelection:
    indices: tuple
    objective_value: Optional[float] = None

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(set(idx)) != len(idx):
            raise ValidationError(f"duplicate block indices: {idx}")
        if any(i < 0 for i in idx):
            raise ValidationError(f"negative block index in {idx}")
        object.__setattr__(self, "indices", idx)

    @property
    def k(self) -> int:
        return len(self.indices)

    def code_length(self, shape: TreeShape) -> int:
        return self.k * shape.node_count


def blocks_for_bits(target_bits: int, shape: TreeShape, num_trees: int) -> int:
    """Number of blocks ``k = floor(L / (2**d - 2))``; warns when ``L`` is not a multiple."""
    k = target_bits // shape.node_count
    if k < 1:
        raise ConfigurationError(
            f"{target_bits} bits cannot hold one {shape.node_count}-bit block of a depth-{shape.depth} tree"
        )
    if k * shape.node_count != target_bits:
        warnings.warn(
            f"{target_bits} bits is not a multiple of {shape.node_count}; using k={k} blocks "
            f"({k * shape.node_count} bits)",
            stacklevel=2,
        )
    if k > num_trees:
        raise ConfigurationError(f"k={k} blocks requested from a forest of {num_trees} trees")
    return k


# ---------------------------------------------------------------- estimators


def block_to_leaf_variable(block, shape: TreeShape) -> np.ndarray:
    """Leaf id of each code in an ``(N, 2**d - 2)`` block."""
    block = np.asarray(block)
    if block.size == 0:
        return np.zeros(0, dtype=np.int64)
    return codes_to_leaves(block, shape)


def entropy(counts) -> float:
    """Plug-in entropy in bits of a histogram."""
    c = np.asarray(counts, dtype=np.float64).ravel()
    if (c < 0).any():
        raise ValidationError("histogram counts must be non-negative")
    total = c.sum()
    if total <= 0:
        raise ValidationError("histogram is empty")
    p = c[c > 0] / total
    return float(max(0.0, -(p * np.log2(p)).sum()))


def mi_from_table(table) -> float:
    """``H(X) + H(Y) - H(X, Y)`` of a joint count table."""
    t = np.asarray(table, dtype=np.float64)
    return entropy(t.sum(axis=1)) + entropy(t.sum(axis=0)) - entropy(t)


def _arity(x: np.ndarray) -> int:
    return int(x.max()) + 1 if x.size else 1


def _check_pair(x, y):
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValidationError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size == 0:
        raise ValidationError("mutual information needs at least one sample")
    if x.min() < 0 or y.min() < 0:
        raise ValidationError("categorical values must be non-negative")
    return x, y


def pairwise_mi(x, y) -> float:
    """Plug-in mutual information (bits) between two categorical vectors."""
    x, y = _check_pair(x, y)
    return mi_from_table(kernels.joint_counts(x, y, _arity(x), _arity(y)))


def label_mi(x, labels, labeled_mask=None) -> float:
    """Plug-in ``I(X; C)`` using only the rows flagged in ``labeled_mask``."""
    x = np.asarray(x, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.ones(x.shape, dtype=bool) if labeled_mask is None else np.asarray(labeled_mask, dtype=bool)
    if mask.shape != x.shape or labels.shape != x.shape:
        raise ValidationError("values, labels and mask must be aligned")
    if not mask.any():
        raise ValidationError("no labelled rows")
    return pairwise_mi(x[mask], labels[mask])


def mi_matrix(leaves, arity: int) -> np.ndarray:
    """``(M, M)`` matrix of pairwise MI between the columns of ``leaves`` ``(N, M)``.

    The diagonal holds each block's entropy.
    """
    leaves = np.asarray(leaves, dtype=np.int64)
    if leaves.ndim != 2 or leaves.shape[0] == 0:
        raise ValidationError("need a non-empty (N, M) leaf matrix")
    tables = kernels.pairwise_joint_counts(leaves, arity)
    m = leaves.shape[1]
    out = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            out[i, j] = out[j, i] = entropy(tables[i, i].diagonal()) if i == j else mi_from_table(tables[i, j])
    return out


def label_mi_vector(leaves, labels, labeled_mask=None) -> np.ndarray:
    leaves = np.asarray(leaves, dtype=np.int64)
    return np.array([label_mi(leaves[:, i], labels, labeled_mask) for i in range(leaves.shape[1])])


# ---------------------------------------------------------------- selection


def objective(selected, mi: np.ndarray, label_mi_vec, lam: float) -> float:
    """Pairwise cross-MI between ``selected`` and the rest, plus ``lam`` times the label MI."""
    mi = np.asarray(mi, dtype=np.float64)
    m = mi.shape[0]
    inside = np.zeros(m, dtype=bool)
    inside[list(selected)] = True
    cross = float(mi[np.ix_(inside, ~inside)].sum())
    label_term = float(np.asarray(label_mi_vec, dtype=np.float64)[inside].sum()) if lam else 0.0
    return cross + lam * label_term


def _prepare(mi, label_mi_vec, k):
    mi = np.asarray(mi, dtype=np.float64)
    if mi.ndim != 2 or mi.shape[0] != mi.shape[1]:
        raise ValidationError(f"MI matrix must be square, got shape {mi.shape}")
    m = mi.shape[0]
    label_vec = np.zeros(m) if label_mi_vec is None else np.asarray(label_mi_vec, dtype=np.float64)
    if label_vec.shape != (m,):
        raise ValidationError(f"label MI vector must have length {m}")
    if not 0 <= k <= m:
        raise ConfigurationError(f"cannot select k={k} of {m} blocks")
    return mi, label_vec, m


def greedy_select(mi, label_mi_vec, k: int, lam: float = 1.0) -> BlockSelection:
    """Add, ``k`` times, the block that maximises the objective of the grown set.

    Near-ties (within ``TIE_TOL``) go to the lowest index.
    """
    mi, label_vec, m = _prepare(mi, label_mi_vec, k)
    chosen: list[int] = []
    value = 0.0
    for _ in range(k):
        best, best_value = -1, -math.inf
        for b in range(m):
            if b in chosen:
                continue
            v = objective(chosen + [b], mi, label_vec, lam)
            if v > best_value + TIE_TOL:
                best, best_value = b, v
        chosen.append(best)
        value = best_value
    return BlockSelection(tuple(chosen), value)


def exhaustive_select(mi, label_mi_vec, k: int, lam: float = 1.0) -> BlockSelection:
    """Global maximiser over all ``k``-subsets; ties go to the lexicographically smallest."""
    mi, label_vec, m = _prepare(mi, label_mi_vec, k)
    if math.comb(m, k) > EXHAUSTIVE_BUDGET:
        raise ConfigurationError(f"C({m}, {k}) = {math.comb(m, k)} subsets exceeds the budget of {EXHAUSTIVE_BUDGET}")
    best, best_value = (), -math.inf
    for subset in itertools.combinations(range(m), k):
        v = objective(subset, mi, label_vec, lam)
        if v > best_value + TIE_TOL:
            best, best_value = subset, v
    return BlockSelection(best, best_value if k else 0.0)


def random_select(num_blocks: int, k: int, seed: int) -> BlockSelection:
    """Uniform ``k``-subset of ``range(num_blocks)``, in draw order."""
    if not 0 <= k <= num_blocks:
        raise ConfigurationError(f"cannot select k={k} of {num_blocks} blocks")
    rng = np.random.default_rng(seed)
    return BlockSelection(tuple(int(i) for i in rng.choice(num_blocks, size=k, replace=False)))


def labeled_rows(n: int, fraction: float, seed: int) -> np.ndarray:
    """Boolean mask exposing ``ceil(fraction * n)`` randomly chosen rows' labels."""
    mask = np.zeros(n, dtype=bool)
    if fraction >= 1.0:
        mask[:] = True
    else:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0x4C41,)))
        mask[rng.choice(n, size=math.ceil(fraction * n), replace=False)] = True
    return mask


def aggregate(
    leaves,
    shape: TreeShape,
    config: AggregationConfig,
    labels=None,
    labeled_mask=None,
    seed: int = 0,
) -> BlockSelection:
    """Select blocks for ``config.target_bits`` bits from training leaves ``(N, M)``.

    The block-block term uses every row; the label term uses only the rows in
    ``labeled_mask`` (all labelled rows by default, subsampled by
    ``config.mi_sample_split``).
    """
    leaves = np.asarray(leaves, dtype=np.int64)
    m = leaves.shape[1]
    k = blocks_for_bits(config.target_bits, shape, m)
    if config.method is SelectionMethod.RANDOM:
        return random_select(m, k, seed)
    mi = mi_matrix(leaves, shape.leaf_count)
    label_vec = None
    if labels is not None and config.lam > 0:
        if labeled_mask is None:
            labeled_mask = labeled_rows(leaves.shape[0], config.mi_sample_split, seed)
        label_vec = label_mi_vector(leaves, labels, labeled_mask)
    return greedy_select(mi, label_vec, k, config.lam if label_vec is not None else 0.0)
