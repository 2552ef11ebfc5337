"""Randomised forest training and path-code encoding.

Every internal node draws a fresh random bipartition of the classes that
reach it and fits a binary split model separating the two class groups:

* ``stump``: best of ``T`` random (feature, threshold) candidates by
  information gain over the group label.
* ``subspace``: one PCA subspace per group; a point goes to the group whose
  affine subspace reconstructs it with the smaller residual.

Nodes that cannot be split (too few samples, a single class, identical
samples) become :class:`Passthrough` nodes so that every tree stays complete
and every code has the same length.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum, IntEnum
from functools import cached_property
from typing import Optional, Union

import numpy as np

from foresthash._accel import kernels
from foresthash.errors import ConfigurationError, ValidationError
from foresthash.hashcore import TreeShape, concat_codes, leaf_code_table, leaves_to_codes, pack_bits

ENCODE_CHUNK_ROWS = 4096


class Branch(IntEnum):
    LEFT = 0
    RIGHT = 1


class Splitter(str, Enum):
    STUMP = "stump"
    SUBSPACE = "subspace"


def resolve_threads(threads: int) -> int:
    """``0`` means one worker per CPU."""
    if threads < 0:
        raise ConfigurationError(f"thread count must be >= 0, got {threads}")
    return threads or os.cpu_count() or 1


@dataclass(frozen=True)
class ForestConfig:
    num_trees: int = 64
    depth: int = 3
    splitter: Splitter = Splitter.SUBSPACE
    subspace_rank: int = 3
    sample_fraction: float = 0.5
    stump_candidates: int = 100
    min_node_samples: int = 4
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "splitter", Splitter(self.splitter))
        if self.num_trees < 1:
            raise ConfigurationError(f"num_trees must be >= 1, got {self.num_trees}")
        TreeShape(self.depth)
        if self.subspace_rank < 0:
            raise ConfigurationError(f"subspace_rank must be >= 0, got {self.subspace_rank}")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ConfigurationError(f"sample_fraction must lie in (0, 1], got {self.sample_fraction}")
        if self.stump_candidates < 1:
            raise ConfigurationError(f"stump_candidates must be >= 1, got {self.stump_candidates}")
        if self.min_node_samples < 2:
            raise ConfigurationError(f"min_node_samples must be >= 2, got {self.min_node_samples}")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigurationError(f"master_seed must fit in 64 unsigned bits, got {self.master_seed}")

    @property
    def shape(self) -> TreeShape:
        return TreeShape(self.depth)


@dataclass(frozen=True, eq=False)
class Dataset:
    """``N x D`` float64 features with optional integer class labels."""

    features: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise ValidationError(f"features must be a 2-D matrix, got shape {x.shape}")
        if not np.isfinite(x).all():
            raise ValidationError("features contain non-finite values")
        object.__setattr__(self, "features", x)
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.dtype.kind not in "iu":
                if y.size and not np.array_equal(y, np.round(y)):
                    raise ValidationError("labels must be integers")
            y = y.astype(np.int64)
            if y.shape != (x.shape[0],):
                raise ValidationError(f"{y.shape[0] if y.ndim else 0} labels for {x.shape[0]} rows")
            if y.size and y.min() < 0:
                raise ValidationError("class ids must be non-negative")
            object.__setattr__(self, "labels", y)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        if self.labels is None or not self.labels.size:
            return 0
        return int(self.labels.max()) + 1

    def subset(self, rows) -> "Dataset":
        labels = None if self.labels is None else self.labels[rows]
        return Dataset(self.features[rows], labels)


# ---------------------------------------------------------------- split models


@dataclass(frozen=True)
class Stump:
    feature: int
    threshold: float

    def go_right(self, x: np.ndarray) -> np.ndarray:
        return x[..., self.feature] > self.threshold


@dataclass(frozen=True, eq=False)
class Subspace:
    mean_left: np.ndarray
    mean_right: np.ndarray
    basis_left: np.ndarray
    basis_right: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Subspace):
            return NotImplemented
        return all(
            a.shape == b.shape and np.array_equal(a, b)
            for a, b in zip(self._arrays(), other._arrays())
        )

    __hash__ = None

    def _arrays(self):
        return self.mean_left, self.mean_right, self.basis_left, self.basis_right

    @property
    def dim(self) -> int:
        return self.mean_left.shape[0]

    def residuals(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Distance of ``x`` (one point or rows) to the left and right affine subspaces."""
        out = []
        for mean, basis in ((self.mean_left, self.basis_left), (self.mean_right, self.basis_right)):
            z = x - mean
            out.append(np.linalg.norm(z - (z @ basis) @ basis.T, axis=-1))
        return out[0], out[1]

    def go_right(self, x: np.ndarray) -> np.ndarray:
        left, right = self.residuals(x)
        return left > right


@dataclass(frozen=True)
class Passthrough:
    branch: Branch = Branch.LEFT

    def go_right(self, x: np.ndarray) -> np.ndarray:
        shape = np.shape(x)[:-1]
        return np.full(shape, self.branch == Branch.RIGHT, dtype=bool)


SplitModel = Union[Stump, Subspace, Passthrough]


def route(split: SplitModel, x) -> Branch:
    """Branch taken by a single point; ties (``<=``) go left."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError(f"route expects one point, got shape {x.shape}")
    if isinstance(split, Stump):
        if not 0 <= split.feature < x.shape[0]:
            raise ValidationError(f"stump feature {split.feature} outside a {x.shape[0]}-dim point")
    elif isinstance(split, Subspace) and split.dim != x.shape[0]:
        raise ValidationError(f"point has dimension {x.shape[0]}, split expects {split.dim}")
    if not np.isfinite(x).all():
        raise ValidationError("point contains non-finite values")
    return Branch.RIGHT if bool(split.go_right(x)) else Branch.LEFT


# ---------------------------------------------------------------- learners


def bipartition_classes(classes, rng: np.random.Generator) -> tuple[frozenset, frozenset]:
    """Uniformly random split of ``classes`` into two non-empty groups.

    A single class yields ``({c}, {})``; the caller turns that into a
    passthrough node.
    """
    classes = sorted(int(c) for c in set(classes))
    if not classes:
        raise ValidationError("cannot bipartition an empty class set")
    if len(classes) == 1:
        return frozenset(classes), frozenset()
    while True:
        side = rng.integers(0, 2, size=len(classes))
        if 0 < side.sum() < len(classes):
            break
    left = frozenset(c for c, s in zip(classes, side) if s == 0)
    right = frozenset(c for c, s in zip(classes, side) if s == 1)
    return left, right


def _binary_entropy(n0, n1):
    n0 = np.asarray(n0, dtype=np.float64)
    n1 = np.asarray(n1, dtype=np.float64)
    n = n0 + n1
    with np.errstate(divide="ignore", invalid="ignore"):
        p0 = np.where(n > 0, n0 / n, 0.0)
        p1 = np.where(n > 0, n1 / n, 0.0)
        h = -(np.where(p0 > 0, p0 * np.log2(p0), 0.0) + np.where(p1 > 0, p1 * np.log2(p1), 0.0))
    return h


def _gain(left0, left1, right0, right1):
    left0, left1, right0, right1 = (np.asarray(a, dtype=np.float64) for a in (left0, left1, right0, right1))
    nl = left0 + left1
    nr = right0 + right1
    n = nl + nr
    parent = _binary_entropy(left0 + right0, left1 + right1)
    with np.errstate(divide="ignore", invalid="ignore"):
        child = np.where(n > 0, (nl * _binary_entropy(left0, left1) + nr * _binary_entropy(right0, right1)) / n, 0.0)
    return parent - child


def info_gain(parent_counts, left_counts, right_counts) -> float:
    """Entropy reduction (bits) of the binary group label achieved by a split.

    Each argument is a ``(count_group0, count_group1)`` pair.
    """
    parent = np.asarray(parent_counts)
    left = np.asarray(left_counts)
    right = np.asarray(right_counts)
    if not np.array_equal(left + right, parent):
        raise ValidationError(f"left {tuple(left)} + right {tuple(right)} != parent {tuple(parent)}")
    return float(max(0.0, _gain(left[0], left[1], right[0], right[1])))


def fit_stump(samples, group_of, rng: np.random.Generator, candidates: int = 100) -> SplitModel:
    """Best of ``candidates`` random axis-aligned splits by information gain.

    ``group_of`` is 0 for samples of the left class group, 1 for the right.
    Features are drawn uniformly, thresholds uniformly within the feature's
    range at this node; ties keep the first candidate evaluated.
    """
    x = np.asarray(samples, dtype=np.float64)
    g = np.asarray(group_of).astype(bool)
    if x.ndim != 2 or x.shape[0] != g.shape[0]:
        raise ValidationError("samples and group_of are misaligned")
    if g.all() or not g.any():
        return Passthrough(Branch.LEFT)
    if (x == x[0]).all():
        return Passthrough(Branch.LEFT)
    features = rng.integers(0, x.shape[1], size=candidates)
    cols = x[:, features]
    thresholds = rng.uniform(cols.min(axis=0), cols.max(axis=0))
    left = cols <= thresholds
    left1 = (left & g[:, None]).sum(axis=0)
    left0 = left.sum(axis=0) - left1
    right1 = g.sum() - left1
    right0 = (~g).sum() - left0
    gains = _gain(left0, left1, right0, right1)
    best = int(np.argmax(gains))
    return Stump(int(features[best]), float(thresholds[best]))


def _principal_basis(centered: np.ndarray, rank: int) -> np.ndarray:
    n, d = centered.shape
    keep = min(rank, n - 1, d)
    if keep <= 0:
        return np.zeros((d, 0))
    _, sv, vt = np.linalg.svd(centered, full_matrices=False)
    tol = sv[0] * max(n, d) * np.finfo(np.float64).eps if sv.size else 0.0
    keep = min(keep, int(np.count_nonzero(sv > tol)))
    basis = vt[:keep].T.copy()
    # canonical sign: largest-magnitude entry of each column positive
    pivots = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[pivots, np.arange(keep)])
    basis *= np.where(signs == 0, 1.0, signs)
    return basis


def fit_subspace(samples, group_of, rank: int) -> Subspace:
    """Per-group mean and top-``rank`` principal directions (orthonormal columns)."""
    x = np.asarray(samples, dtype=np.float64)
    g = np.asarray(group_of).astype(bool)
    if x.ndim != 2 or x.shape[0] != g.shape[0]:
        raise ValidationError("samples and group_of are misaligned")
    if g.all() or not g.any():
        raise ValidationError("both groups need at least one sample")
    parts = []
    for mask in (~g, g):
        xg = x[mask]
        mean = xg.mean(axis=0)
        parts.append((mean, _principal_basis(xg - mean, rank)))
    (mean_l, basis_l), (mean_r, basis_r) = parts
    return Subspace(mean_l, mean_r, basis_l, basis_r)


# ---------------------------------------------------------------- forest


@dataclass(frozen=True, eq=False)
class Tree:
    shape: TreeShape
    splits: tuple

    def __post_init__(self):
        object.__setattr__(self, "splits", tuple(self.splits))
        if len(self.splits) != self.shape.internal_count:
            raise ValidationError(
                f"depth-{self.shape.depth} tree needs {self.shape.internal_count} splits, got {len(self.splits)}"
            )

    def __eq__(self, other):
        if not isinstance(other, Tree):
            return NotImplemented
        return self.shape == other.shape and all(a == b for a, b in zip(self.splits, other.splits))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Forest:
    config: ForestConfig
    trees: tuple
    n_features: int

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        if len(self.trees) != self.config.num_trees:
            raise ValidationError(f"config declares {self.config.num_trees} trees, got {len(self.trees)}")
        if any(t.shape != self.config.shape for t in self.trees):
            raise ValidationError("all trees must share the configured depth")

    def __eq__(self, other):
        if not isinstance(other, Forest):
            return NotImplemented
        return (
            self.config == other.config
            and self.n_features == other.n_features
            and all(a == b for a, b in zip(self.trees, other.trees))
        )

    __hash__ = None

    @property
    def shape(self) -> TreeShape:
        return self.config.shape

    @cached_property
    def encoder(self) -> "ForestEncoder":
        return ForestEncoder(self)


def derive_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent generator for tree ``index``; depends on nothing but the two integers."""
    return np.random.default_rng(np.random.SeedSequence(entropy=master_seed, spawn_key=(index,)))


def _fit_node(x, y, config: ForestConfig, rng) -> SplitModel:
    if x.shape[0] < config.min_node_samples:
        return Passthrough(Branch.LEFT)
    left, right = bipartition_classes(np.unique(y), rng)
    if not right:
        return Passthrough(Branch.LEFT)
    group_of = np.isin(y, np.fromiter(right, dtype=np.int64))
    if config.splitter is Splitter.STUMP:
        return fit_stump(x, group_of, rng, config.stump_candidates)
    if (x == x[0]).all():
        return Passthrough(Branch.LEFT)
    return fit_subspace(x, group_of, config.subspace_rank)


def _train_tree(data: Dataset, config: ForestConfig, index: int) -> Tree:
    rng = derive_rng(config.master_seed, index)
    shape = config.shape
    n = data.n_samples
    size = math.ceil(config.sample_fraction * n)
    rows = np.sort(rng.choice(n, size=size, replace=False))
    members = {0: rows}
    splits = []
    for h in range(shape.internal_count):
        idx = members.pop(h)
        x = data.features[idx]
        split = _fit_node(x, data.labels[idx], config, rng)
        splits.append(split)
        if 2 * h + 1 < shape.internal_count:
            right = split.go_right(x) if idx.size else np.zeros(0, dtype=bool)
            members[2 * h + 1] = idx[~right]
            members[2 * h + 2] = idx[right]
    return Tree(shape, splits)


def train_forest(data: Dataset, config: ForestConfig, threads: int = 1) -> Forest:
    """Train ``config.num_trees`` trees, each on its own random subset of the rows.

    The result depends only on ``(data, config)``; ``threads`` changes the
    schedule, never the output.
    """
    if data.n_samples == 0:
        raise ValidationError("cannot train on an empty dataset")
    if data.labels is None:
        raise ValidationError("training requires class labels")
    if np.unique(data.labels).size < 2:
        raise ConfigurationError("training requires at least two classes")
    if data.n_samples < config.min_node_samples:
        raise ValidationError(f"{data.n_samples} samples is below min_node_samples={config.min_node_samples}")
    if config.splitter is Splitter.SUBSPACE and config.subspace_rank > data.n_features:
        raise ConfigurationError(f"subspace_rank {config.subspace_rank} exceeds feature dimension {data.n_features}")
    workers = resolve_threads(threads)
    indices = range(config.num_trees)
    if workers == 1:
        trees = [_train_tree(data, config, i) for i in indices]
    else:
        with ThreadPoolExecutor(workers) as pool:
            trees = list(pool.map(lambda i: _train_tree(data, config, i), indices))
    return Forest(config, trees, data.n_features)


# ---------------------------------------------------------------- encoding


def encode_point(tree: Tree, x) -> np.ndarray:
    """Path code of one point through one tree (reference walk using :func:`route`)."""
    shape = tree.shape
    bits = np.zeros(shape.node_count, dtype=np.uint8)
    h = 0
    while h < shape.internal_count:
        h = 2 * h + 1 + int(route(tree.splits[h], x))
        bits[h - 1] = 1
    return bits


def encode_forest(forest: Forest, x) -> list[np.ndarray]:
    return [encode_point(tree, x) for tree in forest.trees]


class ForestEncoder:
    """Flattened forest for batched encoding.

    All split decisions for a batch are computed at once: stumps by column
    comparison, subspace nodes by a single matrix product.  For orthonormal
    ``U`` the squared residual is ``|x - m|^2 - |U^T x - U^T m|^2``; in the
    difference of the two branch residuals ``|x|^2`` cancels, leaving one
    column ``m_l - m_r`` plus both bases per node.  The compiled traversal
    kernel then walks the trees.
    """

    def __init__(self, forest: Forest):
        shape = forest.shape
        self.depth = shape.depth
        self.num_trees = forest.config.num_trees
        self.n_features = forest.n_features
        internal = shape.internal_count
        splits = [s for tree in forest.trees for s in tree.splits]
        self.n_nodes = len(splits)

        pass_nodes, pass_right = [], []
        stump_nodes, stump_feat, stump_thr = [], [], []
        sub_nodes, sub_models = [], []
        for col, s in enumerate(splits):
            if isinstance(s, Stump):
                stump_nodes.append(col)
                stump_feat.append(s.feature)
                stump_thr.append(s.threshold)
            elif isinstance(s, Subspace):
                sub_nodes.append(col)
                sub_models.append(s)
            else:
                pass_nodes.append(col)
                pass_right.append(s.branch == Branch.RIGHT)
        self.pass_nodes = np.array(pass_nodes, dtype=np.int64)
        self.pass_right = np.array(pass_right, dtype=np.uint8)
        self.stump_nodes = np.array(stump_nodes, dtype=np.int64)
        self.stump_feat = np.array(stump_feat, dtype=np.int64)
        self.stump_thr = np.array(stump_thr, dtype=np.float64)
        self.sub_nodes = np.array(sub_nodes, dtype=np.int64)

        rank = max((b.shape[1] for s in sub_models for b in (s.basis_left, s.basis_right)), default=0)
        n_sub = len(sub_models)
        self.rank = rank
        # columns: [m_l - m_r for every node | per node (U_l, U_r), zero-padded to ``rank``]
        self.weights = np.zeros((self.n_features, n_sub * (1 + 2 * rank)))
        self.offsets = np.zeros((n_sub, 2, rank))
        self.mean_gap = np.zeros(n_sub)
        for i, s in enumerate(sub_models):
            self.weights[:, i] = s.mean_left - s.mean_right
            self.mean_gap[i] = s.mean_left @ s.mean_left - s.mean_right @ s.mean_right
            for side, (mean, basis) in enumerate(((s.mean_left, s.basis_left), (s.mean_right, s.basis_right))):
                base = n_sub + (2 * i + side) * rank
                self.weights[:, base : base + basis.shape[1]] = basis
                self.offsets[i, side, : basis.shape[1]] = mean @ basis
        assert internal * self.num_trees == self.n_nodes

    def decisions(self, x: np.ndarray) -> np.ndarray:
        """``(N, M * internal)`` uint8, 1 where the node sends the row right."""
        n = x.shape[0]
        out = np.zeros((n, self.n_nodes), dtype=np.uint8)
        if self.pass_nodes.size:
            out[:, self.pass_nodes] = self.pass_right
        if self.stump_nodes.size:
            out[:, self.stump_nodes] = x[:, self.stump_feat] > self.stump_thr
        if self.sub_nodes.size:
            n_sub = self.sub_nodes.size
            proj = x @ self.weights
            # residual_left - residual_right
            gap = self.mean_gap - 2.0 * proj[:, :n_sub]
            if self.rank:
                coords = proj[:, n_sub:].reshape(n, n_sub, 2, self.rank) - self.offsets
                sq = np.einsum("nkbr,nkbr->nkb", coords, coords)
                gap += sq[:, :, 1] - sq[:, :, 0]
            out[:, self.sub_nodes] = gap > 0.0
        return out

    def leaves(self, x: np.ndarray) -> np.ndarray:
        return kernels.traverse(self.decisions(x), self.depth, self.num_trees)


def _as_matrix(x, n_features: int) -> np.ndarray:
    if isinstance(x, Dataset):
        x = x.features
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != n_features:
        raise ValidationError(f"data has dimension {x.shape[-1]}, model expects {n_features}")
    if not np.isfinite(x).all():
        raise ValidationError("data contains non-finite values")
    return x


def encode_leaves(forest: Forest, data, threads: int = 1) -> np.ndarray:
    """Leaf id of every row in every tree, ``(N, M)`` int32."""
    x = _as_matrix(data, forest.n_features)
    enc = forest.encoder
    chunks = [x[i : i + ENCODE_CHUNK_ROWS] for i in range(0, x.shape[0], ENCODE_CHUNK_ROWS)]
    if not chunks:
        return np.zeros((0, forest.config.num_trees), dtype=np.int32)
    workers = min(resolve_threads(threads), len(chunks))
    if workers == 1:
        parts = [enc.leaves(c) for c in chunks]
    else:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(enc.leaves, chunks))
    return np.concatenate(parts)


def encode_dataset(forest: Forest, data, threads: int = 1) -> list[np.ndarray]:
    """Per-tree code blocks: ``M`` arrays of shape ``(N, 2**d - 2)``."""
    leaves = encode_leaves(forest, data, threads)
    table = leaf_code_table(forest.shape)
    return [table[leaves[:, t]] for t in range(forest.config.num_trees)]


def encode_hash(forest: Forest, selection, data, threads: int = 1, packed: bool = True) -> np.ndarray:
    """Final hash codes of ``data`` under a frozen block selection.

    All trees are routed; the selected blocks are concatenated in selection
    order.  Returns packed bytes ``(N, ceil(L/8))`` or bits ``(N, L)``.
    """
    leaves = encode_leaves(forest, data, threads)
    indices = [int(i) for i in getattr(selection, "indices", selection)]
    blocks = [leaves_to_codes(leaves[:, t], forest.shape) for t in range(leaves.shape[1])]
    bits = concat_codes(blocks, indices)
    return pack_bits(bits) if packed else bits


def same_class_collision_rate(forest: Forest, data: Dataset) -> float:
    """Fraction of same-class pairs that share a leaf, averaged over trees."""
    leaves = encode_leaves(forest, data)
    labels = data.labels
    rates = []
    for t in range(leaves.shape[1]):
        hits = total = 0
        for c in np.unique(labels):
            counts = np.bincount(leaves[labels == c, t], minlength=forest.shape.leaf_count)
            n = counts.sum()
            hits += int((counts * (counts - 1)).sum())
            total += int(n * (n - 1))
        rates.append(hits / total if total else 0.0)
    return float(np.mean(rates))
