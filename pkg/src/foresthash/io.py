"""Dataset loaders and the binary model / code file formats.

Model file (all little-endian)::

    "FHM1" | u16 version
    u32 num_trees | u32 depth | u8 splitter | u32 subspace_rank | f64 sample_fraction
    u32 stump_candidates | u32 min_node_samples | u64 master_seed | u32 n_features
    per split, trees in order, heap order within a tree:
        u8 tag   0 stump:       u32 feature, f64 threshold
                 1 subspace:    u32 rank_left, u32 rank_right,
                                f64[D] mean_left, f64[D] mean_right,
                                f64[D*rank_left] basis_left, f64[D*rank_right] basis_right  (row-major)
                 2 passthrough: u8 branch (0 left, 1 right)
    u8 has_selection [u32 k, f64 objective (NaN if unset), u32[k] indices]
    u32 CRC32 of everything above

Code file::

    "FHC1" | u16 version | u32 L | u64 N | N * ceil(L/8) packed code bytes
    [N * i32 labels] | u32 CRC32

Codes use the :mod:`foresthash.hashcore` packing; label presence follows
from the file size.
"""

from __future__ import annotations

import csv
import gzip
import math
import os
import re
import struct
import zlib
from pathlib import Path
from typing import Optional

import numpy as np

from foresthash.aggregation import BlockSelection
from foresthash.errors import CorruptionError, FormatError, UnsupportedVersionError, ValidationError
from foresthash.hashcore import packed_nbytes
from foresthash.retrieval import RetrievalIndex
from foresthash.training import Branch, Dataset, Forest, ForestConfig, Passthrough, Splitter, Stump, Subspace, Tree

MODEL_MAGIC = b"FHM1"
CODES_MAGIC = b"FHC1"
FORMAT_VERSION = 1

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

_SPLITTER_CODES = {Splitter.STUMP: 0, Splitter.SUBSPACE: 1}
_TAG_STUMP, _TAG_SUBSPACE, _TAG_PASS = 0, 1, 2

CODES_HEADER = struct.calcsize("<4sHIQ")


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated file: need {n} bytes, {len(self.buf) - self.pos} left", offset=self.pos)
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _check_envelope(buf: bytes, magic: bytes, what: str) -> _Reader:
    reader = _Reader(buf)
    found = reader.take(4)
    if found != magic:
        raise FormatError(f"not a {what}: magic {found!r}, expected {magic!r}", offset=0)
    (version,) = reader.unpack("<H")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{what} version {version} is not supported (expected {FORMAT_VERSION})", offset=4)
    if len(buf) < reader.pos + 4:
        raise FormatError(f"truncated {what}: no CRC trailer", offset=len(buf))
    (stored,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) != stored:
        raise CorruptionError(f"{what} CRC32 mismatch", offset=len(buf) - 4)
    reader.buf = buf[:-4]
    return reader


def _with_crc(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body))


def _write_atomic(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------- models


def model_to_bytes(forest: Forest, selection: Optional[BlockSelection] = None) -> bytes:
    cfg = forest.config
    d = forest.n_features
    parts = [
        MODEL_MAGIC,
        struct.pack("<H", FORMAT_VERSION),
        struct.pack(
            "<IIBIdIIQI",
            cfg.num_trees,
            cfg.depth,
            _SPLITTER_CODES[cfg.splitter],
            cfg.subspace_rank,
            cfg.sample_fraction,
            cfg.stump_candidates,
            cfg.min_node_samples,
            cfg.master_seed,
            d,
        ),
    ]
    for tree in forest.trees:
        for split in tree.splits:
            if isinstance(split, Stump):
                parts.append(struct.pack("<BId", _TAG_STUMP, split.feature, split.threshold))
            elif isinstance(split, Subspace):
                parts.append(struct.pack("<BII", _TAG_SUBSPACE, split.basis_left.shape[1], split.basis_right.shape[1]))
                for arr in (split.mean_left, split.mean_right, split.basis_left, split.basis_right):
                    parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
            else:
                parts.append(struct.pack("<BB", _TAG_PASS, int(split.branch)))
    if selection is None:
        parts.append(b"\x00")
    else:
        obj = math.nan if selection.objective_value is None else selection.objective_value
        parts.append(struct.pack("<BId", 1, selection.k, obj))
        parts.append(np.asarray(selection.indices, dtype="<u4").tobytes())
    return _with_crc(b"".join(parts))


def model_from_bytes(buf: bytes) -> tuple[Forest, Optional[BlockSelection]]:
    r = _check_envelope(buf, MODEL_MAGIC, "model file")
    num_trees, depth, splitter, rank, fraction, candidates, min_node, seed, d = r.unpack("<IIBIdIIQI")
    splitters = {v: k for k, v in _SPLITTER_CODES.items()}
    if splitter not in splitters:
        raise FormatError(f"unknown splitter code {splitter}", offset=14)
    try:
        config = ForestConfig(num_trees, depth, splitters[splitter], rank, fraction, candidates, min_node, seed)
    except (ValueError, ValidationError) as exc:
        raise FormatError(f"invalid forest configuration: {exc}", offset=6) from exc
    internal = config.shape.internal_count
    trees = []
    for _ in range(num_trees):
        splits = []
        for _ in range(internal):
            at = r.pos
            (tag,) = r.unpack("<B")
            if tag == _TAG_STUMP:
                feature, threshold = r.unpack("<Id")
                if feature >= d:
                    raise FormatError(f"stump feature {feature} >= dimension {d}", offset=at)
                splits.append(Stump(feature, threshold))
            elif tag == _TAG_SUBSPACE:
                rl, rr = r.unpack("<II")
                if rl > d or rr > d:
                    raise FormatError(f"subspace rank exceeds dimension {d}", offset=at)
                mean_l, mean_r = r.floats(d), r.floats(d)
                basis_l = r.floats(d * rl).reshape(d, rl)
                basis_r = r.floats(d * rr).reshape(d, rr)
                splits.append(Subspace(mean_l, mean_r, basis_l, basis_r))
            elif tag == _TAG_PASS:
                (branch,) = r.unpack("<B")
                if branch > 1:
                    raise FormatError(f"bad passthrough branch {branch}", offset=at + 1)
                splits.append(Passthrough(Branch(branch)))
            else:
                raise FormatError(f"unknown split tag {tag}", offset=at)
        trees.append(Tree(config.shape, splits))
    (has_sel,) = r.unpack("<B")
    selection = None
    if has_sel == 1:
        k, obj = r.unpack("<Id")
        at = r.pos
        indices = np.frombuffer(r.take(4 * k), dtype="<u4")
        if (indices >= num_trees).any() or len(set(indices.tolist())) != k:
            raise FormatError("invalid block selection", offset=at)
        selection = BlockSelection(tuple(int(i) for i in indices), None if math.isnan(obj) else obj)
    elif has_sel != 0:
        raise FormatError(f"bad selection flag {has_sel}", offset=r.pos - 1)
    if r.pos != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.pos} trailing bytes", offset=r.pos)
    return Forest(config, trees, d), selection


def save_model(path, forest: Forest, selection: Optional[BlockSelection] = None) -> None:
    _write_atomic(path, model_to_bytes(forest, selection))


def load_model(path) -> tuple[Forest, Optional[BlockSelection]]:
    return model_from_bytes(_read_bytes(path))


# ---------------------------------------------------------------- code files


def codes_to_bytes(index: RetrievalIndex) -> bytes:
    n = len(index)
    parts = [CODES_MAGIC, struct.pack("<HIQ", FORMAT_VERSION, index.nbits, n), index.packed.tobytes()]
    if index.labels is not None:
        parts.append(np.asarray(index.labels, dtype="<i4").tobytes())
    return _with_crc(b"".join(parts))


def codes_from_bytes(buf: bytes) -> RetrievalIndex:
    r = _check_envelope(buf, CODES_MAGIC, "code file")
    nbits, n = r.unpack("<IQ")
    if nbits == 0:
        raise FormatError("code length is zero", offset=6)
    rec = packed_nbytes(nbits)
    body = len(r.buf) - r.pos
    if body == n * rec:
        has_labels = False
    elif body == n * (rec + 4):
        has_labels = True
    else:
        raise FormatError(
            f"payload is {body} bytes; {n} records of {rec} bytes need {n * rec} (or {n * (rec + 4)} with labels)",
            offset=r.pos,
        )
    packed = np.frombuffer(r.take(n * rec), dtype=np.uint8).reshape(n, rec)
    labels = np.frombuffer(r.take(4 * n), dtype="<i4").astype(np.int64) if has_labels else None
    return RetrievalIndex(packed, nbits, labels)


def save_codes(path, index: RetrievalIndex) -> None:
    _write_atomic(path, codes_to_bytes(index))


def load_codes(path) -> RetrievalIndex:
    return codes_from_bytes(_read_bytes(path))


def code_file_size(nbits: int, n: int, labels: bool) -> int:
    return CODES_HEADER + n * packed_nbytes(nbits) + (4 * n if labels else 0) + 4


# ---------------------------------------------------------------- IDX


def _read_maybe_gzip(path) -> bytes:
    buf = _read_bytes(path)
    if buf[:2] == b"\x1f\x8b":
        buf = gzip.decompress(buf)
    return buf


def _parse_idx(buf: bytes, magic: int, what: str) -> np.ndarray:
    if len(buf) < 4:
        raise FormatError(f"truncated IDX {what} file header", offset=len(buf))
    (found,) = struct.unpack(">I", buf[:4])
    if found != magic:
        raise FormatError(f"bad IDX {what} magic 0x{found:08x}, expected 0x{magic:08x}", offset=0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise FormatError(f"truncated IDX {what} dimensions", offset=len(buf))
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    need = int(np.prod(dims, dtype=np.int64))
    if len(buf) - header < need:
        raise FormatError(f"truncated IDX {what} payload: expected {need} bytes, found {len(buf) - header}", offset=len(buf))
    if len(buf) - header > need:
        raise FormatError(f"IDX {what} file has {len(buf) - header - need} trailing bytes", offset=header + need)
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=header).reshape(dims)


def read_idx_labels(path) -> np.ndarray:
    return _parse_idx(_read_maybe_gzip(path), IDX_LABELS_MAGIC, "label").astype(np.int64)


def load_idx(images_path, labels_path=None) -> Dataset:
    """MNIST-style IDX images (scaled to ``[0, 1]``) with optional IDX labels."""
    images = _parse_idx(_read_maybe_gzip(images_path), IDX_IMAGES_MAGIC, "image")
    n = images.shape[0]
    features = images.reshape(n, int(np.prod(images.shape[1:]))).astype(np.float64) / 255.0
    labels = None
    if labels_path is not None:
        labels = read_idx_labels(labels_path)
        if labels.shape[0] != n:
            raise FormatError(f"count mismatch: {n} images but {labels.shape[0]} labels", offset=4)
    return Dataset(features, labels)


def write_idx(images_path, images, labels_path=None, labels=None) -> None:
    """Write uint8 images ``(N, rows, cols)`` and optional labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ValidationError("IDX images must be (N, rows, cols)")
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape) + images.tobytes())
    if labels_path is not None:
        labels = np.asarray(labels, dtype=np.uint8)
        Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes())


# ---------------------------------------------------------------- CSV / raw


def load_csv(path, label_column: Optional[int] = None, skip_header: bool = False) -> Dataset:
    """Numeric CSV (no quoting).  ``label_column`` may be negative to count from the end."""
    rows, labels = [], []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, quoting=csv.QUOTE_NONE), start=1):
            if skip_header and lineno == 1:
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if width is None:
                width = len(row)
                if label_column is not None and not -width <= label_column < width:
                    raise FormatError(f"label column {label_column} outside {width} columns", row=lineno)
            elif len(row) != width:
                raise FormatError(f"ragged row: {len(row)} fields, expected {width}", row=lineno)
            try:
                values = [float(cell) for cell in row]
            except ValueError as exc:
                raise FormatError(f"non-numeric cell: {exc}", row=lineno) from None
            if label_column is not None:
                label = values.pop(label_column % width)
                if label != int(label):
                    raise FormatError(f"label {label} is not an integer", row=lineno)
                labels.append(int(label))
            rows.append(values)
    d = (width or 0) - (1 if label_column is not None and width else 0)
    features = np.array(rows, dtype=np.float64).reshape(len(rows), d)
    return Dataset(features, np.array(labels, dtype=np.int64) if label_column is not None else None)


_DESCRIPTOR_ITEM = re.compile(r"^\s*(\w+)\s*=\s*([\w.]+)\s*$")


def read_descriptor(path) -> tuple[int, int, str]:
    """Parse ``N=..,D=..,dtype=f32le`` (comma- or newline-separated)."""
    fields = {}
    for item in re.split(r"[,\n]", Path(path).read_text()):
        if not item.strip():
            continue
        m = _DESCRIPTOR_ITEM.match(item)
        if not m:
            raise FormatError(f"bad descriptor entry {item.strip()!r}")
        fields[m.group(1)] = m.group(2)
    try:
        n, d = int(fields["N"]), int(fields["D"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"descriptor needs integer N and D: {exc}") from None
    dtype = fields.get("dtype", "f32le")
    if dtype != "f32le":
        raise FormatError(f"unsupported dtype {dtype!r} (only f32le)")
    return n, d, dtype


def load_labels(path) -> np.ndarray:
    """Labels from an IDX label file or a raw little-endian int32 file."""
    buf = _read_maybe_gzip(path)
    if len(buf) >= 4 and struct.unpack(">I", buf[:4])[0] == IDX_LABELS_MAGIC:
        return _parse_idx(buf, IDX_LABELS_MAGIC, "label").astype(np.int64)
    if len(buf) % 4:
        raise FormatError(f"raw label file size {len(buf)} is not a multiple of 4", offset=len(buf))
    return np.frombuffer(buf, dtype="<i4").astype(np.int64)


def load_raw(data_path, descriptor_path, labels_path=None) -> Dataset:
    """Headerless row-major float32 LE matrix described by a descriptor file."""
    n, d, _ = read_descriptor(descriptor_path)
    buf = _read_bytes(data_path)
    expected = n * d * 4
    if len(buf) != expected:
        raise FormatError(f"raw data size mismatch: expected {expected} bytes (N={n}, D={d}), got {len(buf)}")
    features = np.frombuffer(buf, dtype="<f4").reshape(n, d).astype(np.float64)
    labels = None
    if labels_path is not None:
        labels = load_labels(labels_path)
        if labels.shape[0] != n:
            raise FormatError(f"count mismatch: {n} rows but {labels.shape[0]} labels")
    return Dataset(features, labels)


def load_dataset(data_path, labels_path=None, label_column=None, descriptor=None) -> Dataset:
    """Dispatch on inputs: descriptor -> raw, ``.csv`` -> CSV, otherwise IDX."""
    if descriptor is not None:
        return load_raw(data_path, descriptor, labels_path)
    if str(data_path).lower().endswith(".csv"):
        data = load_csv(data_path, label_column)
        if labels_path is not None:
            labels = load_labels(labels_path)
            if labels.shape[0] != data.n_samples:
                raise FormatError(f"count mismatch: {data.n_samples} rows but {labels.shape[0]} labels")
            data = Dataset(data.features, labels)
        return data
    return load_idx(data_path, labels_path)
