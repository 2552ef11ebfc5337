"""Code geometry: complete-tree indexing, path codes, bit packing, Hamming distance.

A tree of depth ``d`` is a complete binary tree in heap numbering (root at
heap index 0, children of ``h`` at ``2h+1`` and ``2h+2``).  Its path code has
one bit per non-root node: bit ``p`` belongs to heap index ``p + 1``, so the
code length is ``2**d - 2`` and a root-to-leaf walk sets exactly ``d - 1``
bits.

Packed codes store bit ``p`` in byte ``p // 8`` at bit position ``p % 8``
(least significant first).  The same layout is used by the code files in
:mod:`foresthash.io`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from foresthash.errors import LeafRangeError, ValidationError

MAX_DEPTH = 24


@dataclass(frozen=True)
class TreeShape:
    """Geometry of a complete binary tree with ``depth`` levels (root included)."""

    depth: int

    def __post_init__(self):
        if not isinstance(self.depth, (int, np.integer)) or not 2 <= self.depth <= MAX_DEPTH:
            raise ValidationError(f"tree depth must be an integer in [2, {MAX_DEPTH}], got {self.depth!r}")
        object.__setattr__(self, "depth", int(self.depth))

    @property
    def node_count(self) -> int:
        """Number of non-root nodes, i.e. the path-code length."""
        return 2**self.depth - 2

    @property
    def leaf_count(self) -> int:
        return 2 ** (self.depth - 1)

    @property
    def internal_count(self) -> int:
        """Number of split nodes (heap indices ``0 .. leaf_count - 2``)."""
        return self.leaf_count - 1

    @property
    def first_leaf(self) -> int:
        """Heap index of the leftmost leaf."""
        return self.leaf_count - 1


def _as_bits(code, name="code") -> np.ndarray:
    bits = np.asarray(code)
    if bits.dtype == np.bool_:
        return bits.astype(np.uint8)
    if bits.dtype.kind not in "iu":
        raise ValidationError(f"{name} must be an integer or boolean bit array, got dtype {bits.dtype}")
    if bits.size and (bits.min() < 0 or bits.max() > 1):
        raise ValidationError(f"{name} must contain only 0/1 values")
    return bits.astype(np.uint8, copy=False)


def leaf_to_path(leaf_index: int, shape: TreeShape) -> np.ndarray:
    """Path code of the leaf ``leaf_index`` (0 = leftmost) as a uint8 0/1 vector."""
    if not 0 <= leaf_index < shape.leaf_count:
        raise LeafRangeError(f"leaf index {leaf_index} outside [0, {shape.leaf_count})")
    bits = np.zeros(shape.node_count, dtype=np.uint8)
    h = int(leaf_index) + shape.first_leaf
    while h > 0:
        bits[h - 1] = 1
        h = (h - 1) // 2
    return bits


def path_to_leaf(code, shape: TreeShape) -> int:
    """Inverse of :func:`leaf_to_path`; rejects codes that are not a single root-to-leaf path."""
    bits = _as_bits(code)
    if bits.shape != (shape.node_count,):
        raise ValidationError(f"path code must have length {shape.node_count}, got shape {bits.shape}")
    if int(bits.sum()) != shape.depth - 1:
        raise ValidationError(f"path code has popcount {int(bits.sum())}, expected {shape.depth - 1}")
    h = 0
    for _ in range(shape.depth - 1):
        left, right = bits[2 * h], bits[2 * h + 1]  # bits of heap 2h+1 and 2h+2
        if left == right:
            raise ValidationError("path code does not form a connected root-to-leaf chain")
        h = 2 * h + (1 if left else 2)
    return h - shape.first_leaf


@lru_cache(maxsize=None)
def _leaf_table(depth: int) -> np.ndarray:
    shape = TreeShape(depth)
    table = np.stack([leaf_to_path(i, shape) for i in range(shape.leaf_count)])
    table.setflags(write=False)
    return table


def leaf_code_table(shape: TreeShape) -> np.ndarray:
    """Read-only ``(leaf_count, node_count)`` table whose row ``i`` is ``leaf_to_path(i)``."""
    return _leaf_table(shape.depth)


def leaves_to_codes(leaves, shape: TreeShape) -> np.ndarray:
    """Vectorised :func:`leaf_to_path`: an array of leaf ids -> array of path codes (last axis)."""
    leaves = np.asarray(leaves)
    if leaves.size and (leaves.min() < 0 or leaves.max() >= shape.leaf_count):
        raise LeafRangeError(f"leaf ids must lie in [0, {shape.leaf_count})")
    return leaf_code_table(shape)[leaves]


def codes_to_leaves(codes, shape: TreeShape) -> np.ndarray:
    """Vectorised :func:`path_to_leaf` over the rows of an ``(N, node_count)`` array."""
    bits = _as_bits(codes)
    if bits.ndim != 2 or bits.shape[1] != shape.node_count:
        raise ValidationError(f"expected an (N, {shape.node_count}) code matrix, got shape {bits.shape}")
    n = bits.shape[0]
    h = np.zeros(n, dtype=np.int64)
    for _ in range(shape.depth - 1):
        h = 2 * h + 2 - bits[np.arange(n), 2 * h]
    leaves = h - shape.first_leaf
    bad = np.flatnonzero((leaf_code_table(shape)[leaves] != bits).any(axis=1))
    if bad.size:
        raise ValidationError(f"row {int(bad[0])} is not a valid path code")
    return leaves


def hamming(a, b) -> int:
    """Number of positions where the bit vectors ``a`` and ``b`` differ."""
    a = _as_bits(a, "a")
    b = _as_bits(b, "b")
    if a.shape != b.shape:
        raise ValidationError(f"length mismatch: {a.shape} vs {b.shape}")
    return int(np.count_nonzero(a != b))


def _selection_indices(selection) -> list[int]:
    return [int(i) for i in getattr(selection, "indices", selection)]


def concat_codes(block_codes: Sequence, selection) -> np.ndarray:
    """Concatenate the selected blocks, in selection order, along the bit axis.

    ``block_codes`` holds per-tree path codes (1-D) or code blocks
    (``(N, node_count)``); ``selection`` is a :class:`BlockSelection` or a
    sequence of block indices.
    """
    indices = _selection_indices(selection)
    m = len(block_codes)
    if len(set(indices)) != len(indices):
        raise ValidationError(f"selection contains duplicate indices: {indices}")
    if any(not 0 <= i < m for i in indices):
        raise ValidationError(f"selection indices {indices} out of range for {m} blocks")
    if not indices:
        raise ValidationError("selection is empty")
    blocks = [_as_bits(block_codes[i], "block") for i in indices]
    widths = {blk.shape[-1] for blk in blocks}
    if len(widths) != 1:
        raise ValidationError(f"blocks have differing code lengths: {sorted(widths)}")
    return np.concatenate(blocks, axis=-1)


def packed_nbytes(nbits: int) -> int:
    return (nbits + 7) // 8


def pack_bits(bits) -> np.ndarray:
    """Pack a 0/1 array along its last axis, least-significant bit first."""
    return np.packbits(_as_bits(bits, "bits"), axis=-1, bitorder="little")


def unpack_bits(packed, nbits: int) -> np.ndarray:
    """Inverse of :func:`pack_bits` for codes of ``nbits`` bits."""
    packed = np.asarray(packed, dtype=np.uint8)
    if packed.shape[-1] != packed_nbytes(nbits):
        raise ValidationError(f"{nbits}-bit codes need {packed_nbytes(nbits)} bytes, got {packed.shape[-1]}")
    return np.unpackbits(packed, axis=-1, count=nbits, bitorder="little")


def to_words(packed) -> np.ndarray:
    """Widen packed byte codes ``(N, nbytes)`` to zero-padded little-endian uint64 words ``(N, W)``."""
    packed = np.atleast_2d(np.asarray(packed, dtype=np.uint8))
    n, nbytes = packed.shape
    nwords = max(1, (nbytes + 7) // 8)
    buf = np.zeros((n, nwords * 8), dtype=np.uint8)
    buf[:, :nbytes] = packed
    return buf.view("<u8").astype(np.uint64, copy=False)
