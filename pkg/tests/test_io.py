import gzip
import struct
import zlib

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from foresthash.aggregation import BlockSelection
from foresthash.errors import CorruptionError, FormatError, UnsupportedVersionError
from foresthash.io import (
    code_file_size,
    codes_from_bytes,
    codes_to_bytes,
    load_codes,
    load_csv,
    load_dataset,
    load_idx,
    load_labels,
    load_model,
    load_raw,
    model_from_bytes,
    model_to_bytes,
    read_descriptor,
    save_codes,
    save_model,
    write_idx,
)
from foresthash.retrieval import RetrievalIndex
from foresthash.training import Dataset, ForestConfig, encode_leaves, train_forest


def refresh_crc(buf: bytes) -> bytes:
    body = buf[:-4]
    return body + struct.pack("<I", zlib.crc32(body))


@pytest.fixture(params=["stump", "subspace"])
def trained(request, multiclass):
    forest = train_forest(multiclass, ForestConfig(num_trees=6, depth=3, splitter=request.param, min_node_samples=8))
    return forest, BlockSelection((4, 0, 2), 1.25)


class TestModelFile:
    def test_round_trip(self, trained, multiclass, tmp_path):
        forest, sel = trained
        path = tmp_path / "m.fhm"
        save_model(path, forest, sel)
        forest2, sel2 = load_model(path)
        assert forest2 == forest
        assert sel2 == sel and sel2.objective_value == 1.25
        np.testing.assert_array_equal(encode_leaves(forest2, multiclass), encode_leaves(forest, multiclass))

    def test_resave_byte_identical(self, trained, tmp_path):
        forest, sel = trained
        save_model(tmp_path / "a", forest, sel)
        save_model(tmp_path / "b", *load_model(tmp_path / "a"))
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_without_selection(self, trained):
        forest, _ = trained
        f2, sel = model_from_bytes(model_to_bytes(forest))
        assert sel is None and f2 == forest

    def test_unset_objective(self, trained):
        forest, _ = trained
        _, sel = model_from_bytes(model_to_bytes(forest, BlockSelection((1,))))
        assert sel.objective_value is None

    def test_flipped_byte(self, trained):
        buf = bytearray(model_to_bytes(*trained))
        buf[len(buf) // 2] ^= 0x40
        with pytest.raises(CorruptionError):
            model_from_bytes(bytes(buf))

    def test_version(self, trained):
        buf = bytearray(model_to_bytes(*trained))
        buf[4:6] = struct.pack("<H", 2)
        with pytest.raises(UnsupportedVersionError):
            model_from_bytes(refresh_crc(bytes(buf)))

    def test_bad_magic(self, trained):
        buf = b"XXXX" + model_to_bytes(*trained)[4:]
        with pytest.raises(FormatError, match="offset 0"):
            model_from_bytes(buf)

    def test_truncated(self, trained):
        buf = model_to_bytes(*trained)
        with pytest.raises(FormatError):
            model_from_bytes(refresh_crc(buf[:40] + buf[-4:]))

    @given(st.integers(0, 2**32 - 1), st.sampled_from(["stump", "subspace"]), st.integers(2, 4), st.integers(1, 4))
    @settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
    def test_random_forests(self, seed, splitter, depth, trees):
        rng = np.random.default_rng(seed)
        data = Dataset(rng.normal(size=(60, 5)), rng.integers(0, 3, 60))
        forest = train_forest(data, ForestConfig(num_trees=trees, depth=depth, splitter=splitter, subspace_rank=2, master_seed=seed))
        buf = model_to_bytes(forest)
        f2, _ = model_from_bytes(buf)
        assert f2 == forest
        assert model_to_bytes(f2) == buf


class TestCodeFile:
    def index(self, n=1000, nbits=36, labels=True, seed=0):
        rng = np.random.default_rng(seed)
        bits = rng.integers(0, 2, size=(n, nbits), dtype=np.uint8)
        return RetrievalIndex.from_bits(bits, labels=rng.integers(0, 10, n) if labels else None)

    def test_size_formula(self, tmp_path):
        idx = self.index()
        save_codes(tmp_path / "c", idx)
        assert (tmp_path / "c").stat().st_size == code_file_size(36, 1000, True) == 18 + 5000 + 4000 + 4

    @pytest.mark.parametrize("nbits, labels", [(36, True), (36, False), (64, True), (1, False), (130, True)])
    def test_round_trip(self, nbits, labels, tmp_path):
        idx = self.index(n=37, nbits=nbits, labels=labels)
        save_codes(tmp_path / "c", idx)
        back = load_codes(tmp_path / "c")
        assert back.nbits == nbits
        np.testing.assert_array_equal(back.bits(), idx.bits())
        if labels:
            np.testing.assert_array_equal(back.labels, idx.labels)
        else:
            assert back.labels is None

    def test_empty(self):
        back = codes_from_bytes(codes_to_bytes(self.index(n=0, labels=False)))
        assert len(back) == 0

    def test_flipped_byte(self):
        buf = bytearray(codes_to_bytes(self.index(n=20)))
        buf[30] ^= 1
        with pytest.raises(CorruptionError):
            codes_from_bytes(bytes(buf))

    def test_version(self):
        buf = bytearray(codes_to_bytes(self.index(n=5)))
        buf[4:6] = struct.pack("<H", 9)
        with pytest.raises(UnsupportedVersionError):
            codes_from_bytes(refresh_crc(bytes(buf)))

    def test_bad_payload_size(self):
        buf = codes_to_bytes(self.index(n=5, labels=False))
        with pytest.raises(FormatError, match="payload"):
            codes_from_bytes(refresh_crc(buf[:-5] + buf[-4:]))


class TestIdx:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        imgs = rng.integers(0, 256, size=(7, 4, 3), dtype=np.uint8)
        labels = rng.integers(0, 10, 7)
        write_idx(tmp_path / "i", imgs, tmp_path / "l", labels)
        data = load_idx(tmp_path / "i", tmp_path / "l")
        np.testing.assert_allclose(data.features, imgs.reshape(7, 12) / 255.0)
        np.testing.assert_array_equal(data.labels, labels)
        np.testing.assert_array_equal(load_labels(tmp_path / "l"), labels)

    def test_gzip(self, tmp_path):
        imgs = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
        write_idx(tmp_path / "i", imgs)
        (tmp_path / "i.gz").write_bytes(gzip.compress((tmp_path / "i").read_bytes()))
        np.testing.assert_array_equal(load_idx(tmp_path / "i.gz").features, load_idx(tmp_path / "i").features)

    def test_zero_images(self, tmp_path):
        write_idx(tmp_path / "i", np.zeros((0, 28, 28), np.uint8))
        data = load_idx(tmp_path / "i")
        assert data.features.shape == (0, 784)

    def test_count_mismatch(self, tmp_path):
        write_idx(tmp_path / "i", np.zeros((3, 2, 2), np.uint8), tmp_path / "l", [1, 2])
        with pytest.raises(FormatError, match="count mismatch"):
            load_idx(tmp_path / "i", tmp_path / "l")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "i").write_bytes(struct.pack(">IIII", 0x0801, 1, 1, 1) + b"\x00")
        with pytest.raises(FormatError, match="offset 0"):
            load_idx(tmp_path / "i")

    def test_truncated(self, tmp_path):
        write_idx(tmp_path / "i", np.zeros((3, 2, 2), np.uint8))
        buf = (tmp_path / "i").read_bytes()
        (tmp_path / "i").write_bytes(buf[:-1])
        with pytest.raises(FormatError, match="truncated"):
            load_idx(tmp_path / "i")
        (tmp_path / "i").write_bytes(buf + b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            load_idx(tmp_path / "i")


class TestCsv:
    def test_label_column(self, tmp_path):
        (tmp_path / "d.csv").write_text("1,2,0\n3,4,1\n5,6,0\n")
        data = load_csv(tmp_path / "d.csv", label_column=2)
        np.testing.assert_array_equal(data.features, [[1, 2], [3, 4], [5, 6]])
        np.testing.assert_array_equal(data.labels, [0, 1, 0])
        np.testing.assert_array_equal(load_csv(tmp_path / "d.csv", label_column=-1).labels, data.labels)

    def test_unlabelled(self, tmp_path):
        (tmp_path / "d.csv").write_text("1.5,2\n3,-4e1\n")
        data = load_csv(tmp_path / "d.csv")
        assert data.labels is None
        np.testing.assert_array_equal(data.features, [[1.5, 2], [3, -40]])

    def test_ragged(self, tmp_path):
        (tmp_path / "d.csv").write_text("1,2,0\n3,4\n")
        with pytest.raises(FormatError, match="row 2"):
            load_csv(tmp_path / "d.csv", label_column=2)

    def test_non_numeric(self, tmp_path):
        (tmp_path / "d.csv").write_text("1,2,0\n3,4,1\n5,x,0\n")
        with pytest.raises(FormatError, match="row 3"):
            load_csv(tmp_path / "d.csv", label_column=2)

    def test_dispatch(self, tmp_path):
        (tmp_path / "d.csv").write_text("1,2,0\n3,4,1\n")
        assert load_dataset(tmp_path / "d.csv", label_column=2).n_features == 2


class TestRaw:
    def write(self, tmp_path, n, d, rows=None):
        rows = n if rows is None else rows
        x = np.arange(rows * d, dtype="<f4").reshape(rows, d) / 7
        (tmp_path / "x.bin").write_bytes(x.tobytes())
        (tmp_path / "x.desc").write_text(f"N={n},D={d},dtype=f32le\n")
        return x

    def test_load(self, tmp_path):
        x = self.write(tmp_path, 4, 3)
        (tmp_path / "y.bin").write_bytes(np.array([0, 1, 1, 0], "<i4").tobytes())
        data = load_raw(tmp_path / "x.bin", tmp_path / "x.desc", tmp_path / "y.bin")
        np.testing.assert_array_equal(data.features, x.astype(np.float64))
        np.testing.assert_array_equal(data.labels, [0, 1, 1, 0])
        assert load_dataset(tmp_path / "x.bin", descriptor=tmp_path / "x.desc").n_samples == 4

    def test_size_mismatch(self, tmp_path):
        self.write(tmp_path, 4, 3, rows=3)
        with pytest.raises(FormatError, match=r"expected 48 bytes.*got 36"):
            load_raw(tmp_path / "x.bin", tmp_path / "x.desc")

    def test_descriptor(self, tmp_path):
        (tmp_path / "d").write_text("N=10\nD=2\n")
        assert read_descriptor(tmp_path / "d") == (10, 2, "f32le")
        (tmp_path / "d").write_text("N=10,D=2,dtype=f64le")
        with pytest.raises(FormatError):
            read_descriptor(tmp_path / "d")
