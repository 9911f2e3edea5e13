import math
import struct

import numpy as np
import pytest

from swepipe import forge, phantoms, simulate, swedio


def tiny_dataset(n=3, snr=math.inf, seed=0):
    return forge.generate_dataset(
        n, snr_db=snr, seed=seed, preset="desk", split_fractions=(1.0, 0.0, 0.0)
    )


class TestTensorFormat:
    def test_roundtrip_exact(self):
        rng = np.random.default_rng(0)
        for shape in [(3,), (4, 5), (2, 3, 4), (2, 3, 4, 5)]:
            arr = rng.normal(size=shape).astype(np.float32)
            again = swedio.tensor_from_bytes(swedio.tensor_to_bytes(arr))
            np.testing.assert_array_equal(arr, again)

    def test_scalar_rank0(self):
        arr = np.float32(3.5).reshape(())
        again = swedio.tensor_from_bytes(swedio.tensor_to_bytes(np.asarray(arr)))
        assert again.shape == ()
        assert float(again) == 3.5

    def test_bad_magic(self):
        blob = bytearray(swedio.tensor_to_bytes(np.zeros((2, 2), np.float32)))
        blob[:4] = b"NOPE"
        with pytest.raises(swedio.BadMagicError):
            swedio.tensor_from_bytes(bytes(blob))

    def test_bad_version(self):
        blob = bytearray(swedio.tensor_to_bytes(np.zeros((2, 2), np.float32)))
        blob[4:8] = struct.pack("<I", 99)
        with pytest.raises(swedio.BadVersionError):
            swedio.tensor_from_bytes(bytes(blob))

    def test_truncated_payload(self):
        blob = swedio.tensor_to_bytes(np.zeros((70, 168, 16), np.float32))
        with pytest.raises(swedio.TruncatedTensorError):
            swedio.tensor_from_bytes(blob[: len(blob) // 2])

    def test_checksum_flip(self):
        blob = bytearray(swedio.tensor_to_bytes(np.ones((4, 4), np.float32)))
        blob[30] ^= 0xFF
        with pytest.raises(swedio.ChecksumError):
            swedio.tensor_from_bytes(bytes(blob))


class TestDatasetRoundtrip:
    def test_write_read_bit_exact(self, tmp_path):
        ds = tiny_dataset(3)
        swedio.write_dataset(ds, tmp_path / "ds")
        back = swedio.read_dataset(tmp_path / "ds")
        assert len(back.samples) == 3
        assert back.layout == ds.layout
        for a, b in zip(ds.samples, back.samples):
            np.testing.assert_array_equal(a.volumes, b.volumes)
            assert a.spec == b.spec
            assert a.snr_db == b.snr_db
            assert a.split == b.split

    def test_snr_survives_roundtrip(self, tmp_path):
        ds = tiny_dataset(2, snr=11.0, seed=1)
        swedio.write_dataset(ds, tmp_path / "ds")
        back = swedio.read_dataset(tmp_path / "ds")
        assert all(s.snr_db == 11.0 for s in back.samples)

    def test_split_leak_rejected(self, tmp_path):
        ds = tiny_dataset(2)
        ds.samples[0].split = "train"
        ds.samples[1].split = "test"
        ds.samples[1].spec = phantoms.PhantomSpec.from_dict(
            {**ds.samples[0].spec.to_dict()}
        )
        with pytest.raises(swedio.SplitLeakError):
            swedio.write_dataset(ds, tmp_path / "leak")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(swedio.DatasetError):
            swedio.read_dataset(tmp_path / "nothing")

    def test_shape_vs_layout_mismatch(self, tmp_path):
        ds = tiny_dataset(1)
        swedio.write_dataset(ds, tmp_path / "ds")
        bad = np.zeros((2, 32, 64, 15), np.float32)  # wrong lateral size
        swedio.write_tensor(tmp_path / "ds" / "samples" / "sample_00000.swed", bad)
        with pytest.raises(swedio.DatasetError, match="shape"):
            swedio.read_dataset(tmp_path / "ds")


class TestStiffnessPools:
    def test_pools_disjoint(self):
        pools = swedio.stiffness_pools(np.random.default_rng(0))
        sets = [set(v.tolist()) for v in pools.values()]
        assert sets[0] & sets[1] == set()
        assert sets[0] & sets[2] == set()
        assert sets[1] & sets[2] == set()
        assert all(len(s) > 0 for s in sets)


class TestGenerate:
    def test_split_counts(self):
        ds = forge.generate_dataset(
            10, seed=3, preset="desk", split_fractions=(0.7, 0.15, 0.15)
        )
        counts = {name: len(ds.split(name)) for name in ("train", "val", "test")}
        assert counts["train"] == 7
        assert counts["val"] + counts["test"] == 3

    def test_deterministic_given_seed(self):
        a = forge.generate_dataset(2, seed=9, preset="desk")
        b = forge.generate_dataset(2, seed=9, preset="desk")
        for sa, sb in zip(a.samples, b.samples):
            np.testing.assert_array_equal(sa.volumes, sb.volumes)
            assert sa.spec == sb.spec

    def test_volume_shapes_desk(self):
        ds = tiny_dataset(1)
        assert ds.samples[0].volumes.shape == (2, 32, 64, 16)
