import math

import numpy as np
import pytest

from voxsketch.maskformer import MaskFormer, MaskFormerConfig
from voxsketch.sampler import DecodeConfig, cfg_logits, decode, decode_many, schedule
from voxsketch.seeding import derive_rng

MODEL_CFG = MaskFormerConfig(
    tokens=512, vocab=32, width=16, blocks=1, heads=2,
    mapping_layers=0, cond_dim=4, cond_length=4,
)


@pytest.fixture(scope="module")
def model():
    return MaskFormer(MODEL_CFG, seed=3)


@pytest.fixture(scope="module")
def features():
    return derive_rng(0, "feat").normal(size=(4, 4)).astype(np.float32)


class TestSchedule:
    def test_final_step_unmasks_everything(self):
        for steps in (1, 2, 7, 15):
            assert schedule(512, steps)[-1] == 0

    def test_initial_state_is_fully_masked(self):
        # before any step the quota is the full sequence
        assert math.floor(math.cos(0.0) * 512) == 512

    def test_known_value_at_fifteen_steps(self):
        counts = schedule(512, 15)
        assert counts[0] == 509  # floor(512 * cos(pi/30))

    def test_non_increasing(self):
        counts = schedule(512, 15)
        assert all(a >= b for a, b in zip(counts, counts[1:]))
        counts = schedule(100, 7)
        assert all(a >= b for a, b in zip(counts, counts[1:]))

    def test_rejects_zero_steps(self):
        with pytest.raises(ValueError):
            schedule(512, 0)


class TestCfgLogits:
    def test_scale_one_is_exactly_conditional(self):
        rng = derive_rng(1, "cfg")
        cond = rng.normal(size=(5, 7)).astype(np.float32)
        uncond = rng.normal(size=(5, 7)).astype(np.float32)
        out = cfg_logits(cond, uncond, 1.0)
        assert out.tobytes() == cond.tobytes()

    def test_scale_zero_is_exactly_unconditional(self):
        rng = derive_rng(2, "cfg")
        cond = rng.normal(size=(3, 4)).astype(np.float32)
        uncond = rng.normal(size=(3, 4)).astype(np.float32)
        out = cfg_logits(cond, uncond, 0.0)
        assert out.tobytes() == uncond.tobytes()

    def test_scalar_arithmetic(self):
        out = cfg_logits(np.array([2.0]), np.array([1.0]), 3.0)
        assert out[0] == 4.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            cfg_logits(np.zeros((2, 3)), np.zeros((3, 2)), 2.0)


class TestDecode:
    def test_trace_partitions_all_positions(self, model, features):
        cfg = DecodeConfig(steps=15, guidance_scale=3.0, seed=11)
        tokens, trace = decode(model, features, cfg)
        seen = set()
        for positions in trace.accepted_positions:
            as_set = set(positions)
            assert not (seen & as_set), "a position was accepted twice"
            seen |= as_set
        assert seen == set(range(512))
        assert trace.masked_counts == schedule(512, 15)

    def test_deterministic_per_seed(self, model, features):
        cfg = DecodeConfig(steps=7, guidance_scale=3.0, seed=4)
        t1, _ = decode(model, features, cfg)
        t2, _ = decode(model, features, cfg)
        np.testing.assert_array_equal(t1, t2)

    def test_batched_matches_solo(self, model, features):
        cfg = DecodeConfig(steps=5, guidance_scale=2.0, seed=0)
        batch, _ = decode_many(model, features, cfg, [100, 101, 102])
        for i, seed in enumerate([100, 101, 102]):
            solo, _ = decode_many(model, features, cfg, [seed])
            np.testing.assert_array_equal(batch[i], solo[0])

    def test_mask_id_never_emitted(self, model, features):
        cfg = DecodeConfig(steps=3, seed=9)
        tokens, _ = decode(model, features, cfg)
        assert tokens.max() < MODEL_CFG.vocab
        assert tokens.min() >= 0

    def test_single_step_matches_reference_oracle(self, model, features):
        cfg = DecodeConfig(steps=1, guidance_scale=3.0, seed=42)
        tokens, trace = decode(model, features, cfg)
        assert len(trace.accepted_positions) == 1
        assert len(trace.accepted_positions[0]) == 512

        # independent single-step reference: one conditional and one null
        # forward, guidance blend, inverse-CDF sample with the same stream
        mask_row = np.full((1, 512), MODEL_CFG.mask_id, dtype=np.int64)
        cond_logits = model.logits(mask_row, features[None], np.array([False]))[0]
        null_logits = model.logits(mask_row, None)[0]
        blended = null_logits + 3.0 * (cond_logits - null_logits)
        z = blended - blended.max(axis=-1, keepdims=True)
        probs = np.exp(z)
        probs /= probs.sum(axis=-1, keepdims=True)
        cdf = np.cumsum(probs, axis=-1)
        cdf[:, -1] = 1.0
        rng = derive_rng(42, "decode")
        u = rng.random((512, 1))
        want = (u > cdf).sum(axis=-1)
        np.testing.assert_array_equal(tokens, want)

    def test_deterministic_flag_ignores_seed(self, model, features):
        cfg_a = DecodeConfig(steps=4, seed=1, deterministic=True)
        cfg_b = DecodeConfig(steps=4, seed=999, deterministic=True)
        ta, _ = decode(model, features, cfg_a)
        tb, _ = decode(model, features, cfg_b)
        np.testing.assert_array_equal(ta, tb)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DecodeConfig(steps=0)
        with pytest.raises(ValueError):
            DecodeConfig(guidance_scale=-1.0)
        with pytest.raises(ValueError):
            DecodeConfig(samples=0)
