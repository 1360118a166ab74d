import numpy as np
import pytest

from voxsketch.checkpoint import FormatError
from voxsketch.features import (
    FileFeatureProvider,
    ToyEncoder,
    ToyEncoderConfig,
    ToyFeatureProvider,
    load_feature_grid,
    save_feature_grid,
)
from voxsketch.seeding import derive_rng

SMALL = ToyEncoderConfig(width=16, layers=3, heads=2)


def an_image(seed=0):
    return derive_rng(seed, "img").random((64, 64)).astype(np.float32)


class TestToyEncoder:
    def test_same_seed_same_weights(self):
        a = ToyEncoder(SMALL, seed=5)
        b = ToyEncoder(SMALL, seed=5)
        assert a.bag.checksum() == b.bag.checksum()
        c = ToyEncoder(SMALL, seed=6)
        assert a.bag.checksum() != c.bag.checksum()

    def test_encode_is_deterministic_and_pure(self):
        enc = ToyEncoder(SMALL, seed=1).freeze()
        img = an_image()
        g1 = enc.encode_grid(img[None], layer=2)
        g2 = enc.encode_grid(img[None], layer=2)
        assert g1.tobytes() == g2.tobytes()
        enc.assert_unchanged()

    def test_output_shapes(self):
        enc = ToyEncoder(SMALL, seed=2).freeze()
        imgs = np.stack([an_image(0), an_image(1)])
        grid = enc.encode_grid(imgs, layer=3)
        assert grid.shape == (2, 8, 8, 16)
        vec = enc.encode_global(imgs)
        assert vec.shape == (2, 16)

    def test_layer_bounds(self):
        enc = ToyEncoder(SMALL, seed=3).freeze()
        with pytest.raises(ValueError):
            enc.encode_grid(an_image()[None], layer=0)
        with pytest.raises(ValueError):
            enc.encode_grid(an_image()[None], layer=4)

    def test_checksum_detects_drift(self):
        enc = ToyEncoder(SMALL, seed=4).freeze()
        enc.pos.value.data[0, 0] += 1.0
        with pytest.raises(RuntimeError):
            enc.assert_unchanged()

    def test_save_load_round_trip(self, tmp_path):
        enc = ToyEncoder(SMALL, seed=7)
        enc.save(tmp_path / "enc.ckpt")
        loaded = ToyEncoder.load(tmp_path / "enc.ckpt", SMALL)
        assert loaded.frozen
        assert loaded.bag.checksum() == enc.bag.checksum()


class TestProviders:
    def test_grid_provider_sequences(self):
        enc = ToyEncoder(SMALL, seed=1).freeze()
        provider = ToyFeatureProvider(enc, layer=2, mode="grid")
        seq = provider.encode_batch(np.stack([an_image()]))
        assert seq.shape == (1, 64, 16)
        assert provider.sequence_length == 64

    def test_global_provider_sequences(self):
        enc = ToyEncoder(SMALL, seed=1).freeze()
        provider = ToyFeatureProvider(enc, mode="global")
        seq = provider.encode_batch(np.stack([an_image()]))
        assert seq.shape == (1, 1, 16)
        assert provider.sequence_length == 1

    def test_provider_dim_constant_across_calls(self):
        enc = ToyEncoder(SMALL, seed=1).freeze()
        provider = ToyFeatureProvider(enc, layer=1)
        a = provider.encode(an_image(0))
        b = provider.encode(an_image(1))
        assert a.shape == b.shape

    def test_mode_and_layer_validation(self):
        enc = ToyEncoder(SMALL, seed=1).freeze()
        with pytest.raises(ValueError):
            ToyFeatureProvider(enc, mode="patchwise")
        with pytest.raises(ValueError):
            ToyFeatureProvider(enc, layer=9)

    def test_file_provider_round_trip(self, tmp_path):
        grid = derive_rng(3, "g").normal(size=(8, 8, 16)).astype(np.float32)
        save_feature_grid(tmp_path / "sketch.fgrd", grid)
        provider = FileFeatureProvider(tmp_path, dim=16)
        seq = provider.load("sketch")
        np.testing.assert_array_equal(seq, grid.reshape(64, 16))

    def test_file_provider_dim_mismatch(self, tmp_path):
        save_feature_grid(tmp_path / "s.fgrd", np.zeros((8, 8, 16), dtype=np.float32))
        provider = FileFeatureProvider(tmp_path, dim=64)
        with pytest.raises(FormatError):
            provider.load("s")


class TestFeatureFiles:
    def test_round_trip_bit_exact(self, tmp_path):
        grid = derive_rng(0, "fg").normal(size=(8, 8, 64)).astype(np.float32)
        save_feature_grid(tmp_path / "f.fgrd", grid)
        loaded = load_feature_grid(tmp_path / "f.fgrd")
        assert loaded.tobytes() == grid.tobytes()

    def test_file_size_matches_format(self, tmp_path):
        grid = np.zeros((8, 8, 64), dtype=np.float32)
        save_feature_grid(tmp_path / "f.fgrd", grid)
        # 8-byte magic + three uint32 dims + float payload
        assert (tmp_path / "f.fgrd").stat().st_size == 8 + 12 + 8 * 8 * 64 * 4

    def test_truncated_payload_rejected(self, tmp_path):
        save_feature_grid(tmp_path / "f.fgrd", np.zeros((8, 8, 4), dtype=np.float32))
        raw = (tmp_path / "f.fgrd").read_bytes()
        (tmp_path / "short.fgrd").write_bytes(raw[:-40])
        with pytest.raises(FormatError):
            load_feature_grid(tmp_path / "short.fgrd")

    def test_bad_magic_rejected(self, tmp_path):
        (tmp_path / "bad.fgrd").write_bytes(b"XXXX0001" + b"\x00" * 20)
        with pytest.raises(FormatError):
            load_feature_grid(tmp_path / "bad.fgrd")
