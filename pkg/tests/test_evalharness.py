import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxsketch.corpus import build_corpus
from voxsketch.evalharness import (
    EvalReport,
    build_sketch_eval_set,
    classifier_accuracy,
    classifier_test_accuracy,
    config_diff,
    iou,
    plan_ablation,
    train_classifier,
)
from voxsketch.pipeline import _with_overrides
from voxsketch.config import parse_config
from voxsketch.seeding import derive_rng
from voxsketch.voxels import empty_grid


class TestIou:
    def test_identical_grids(self):
        g = derive_rng(0, "g").random((32, 32, 32)) > 0.5
        assert iou(g, g) == 1.0

    def test_disjoint_grids(self):
        a = empty_grid()
        b = empty_grid()
        a[:4], b[10:14] = True, True
        assert iou(a, b) == 0.0

    def test_half_overlap(self):
        a = empty_grid()
        b = empty_grid()
        a[0, 0, 0] = a[0, 0, 1] = True
        b[0, 0, 0] = True
        assert iou(a, b) == 0.5

    def test_both_empty_is_one(self):
        assert iou(empty_grid(), empty_grid()) == 1.0

    def test_resolution_mismatch(self):
        with pytest.raises(ValueError):
            iou(np.zeros((8, 8, 8), bool), np.zeros((16, 16, 16), bool))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_symmetric_and_bounded(self, seed):
        rng = derive_rng(seed, "iou")
        a = rng.random((8, 8, 8)) > 0.6
        b = rng.random((8, 8, 8)) > 0.6
        ab, ba = iou(a, b), iou(b, a)
        assert ab == ba
        assert 0.0 <= ab <= 1.0
        if a.any() or b.any():
            assert (ab == 1.0) == np.array_equal(a, b)


@pytest.fixture(scope="module")
def tiny_world(tmp_path_factory):
    corpus = build_corpus(10, seed=31, root=tmp_path_factory.mktemp("evalcorpus"))
    clf, acc = train_classifier(corpus, seed=1, epochs=2, floor=0.0)
    return corpus, clf


class TestClassifierAccuracy:
    def test_oracle_pipeline_scores_classifier_accuracy(self, tiny_world):
        corpus, clf = tiny_world
        sketches = build_sketch_eval_set(corpus, split="test", seed=0)
        by_id = {r.shape_id: r for r in corpus.records}

        def oracle(image, k, seed):
            # find the sketch that produced this image and return its shape
            for sk in sketches:
                if np.array_equal(sk.image, image):
                    return [corpus.load_grid(by_id[sk.shape_id])] * k
            raise AssertionError("unknown sketch")

        acc, per_cat = classifier_accuracy(sketches, oracle, clf, k=3, seed=0)
        want = classifier_test_accuracy(clf, corpus, "test")
        assert abs(acc - want) < 1e-9

    def test_empty_grid_pipeline_is_chance_or_worse(self, tiny_world):
        corpus, clf = tiny_world
        sketches = build_sketch_eval_set(corpus, split="test", seed=0)
        acc, _ = classifier_accuracy(
            sketches, lambda image, k, seed: [empty_grid()] * k, clf, k=2, seed=0
        )
        assert acc <= 0.25

    def test_order_invariance(self, tiny_world):
        corpus, clf = tiny_world
        sketches = build_sketch_eval_set(corpus, split="test", seed=0)

        def fake(image, k, seed):
            rng = derive_rng(seed, "fake")
            grid = empty_grid()
            grid[8:24, 8:24, 8:24] = rng.random((16, 16, 16)) > 0.5
            return [grid] * k

        a, _ = classifier_accuracy(sketches, fake, clf, k=2, seed=5)
        b, _ = classifier_accuracy(list(reversed(sketches)), fake, clf, k=2, seed=5)
        assert a == b

    def test_classifier_total_on_empty_input_grid(self, tiny_world):
        _, clf = tiny_world
        pred, probs = clf.predict_batch(np.stack([empty_grid()]))
        assert probs.shape == (1, 8)
        assert np.isfinite(probs).all()

    def test_classifier_determinism(self, tiny_world):
        corpus, _ = tiny_world
        c1, _ = train_classifier(corpus, seed=2, epochs=1, floor=0.0)
        c2, _ = train_classifier(corpus, seed=2, epochs=1, floor=0.0)
        assert c1.checksum() == c2.checksum()


class TestSketchSets:
    def test_one_sketch_per_test_record(self, tiny_world):
        corpus, _ = tiny_world
        sketches = build_sketch_eval_set(corpus, split="test", seed=3)
        assert len(sketches) == len(corpus.split("test"))
        for sk in sketches:
            assert sk.image.shape == (64, 64)
            assert set(np.unique(sk.image)) <= {0.0, 1.0}

    def test_jitter_changes_images_deterministically(self, tiny_world):
        corpus, _ = tiny_world
        plain = build_sketch_eval_set(corpus, split="test", seed=3)
        j1 = build_sketch_eval_set(corpus, split="test", seed=3, jitter=True)
        j2 = build_sketch_eval_set(corpus, split="test", seed=3, jitter=True)
        assert any((a.image != b.image).any() for a, b in zip(plain, j1))
        for a, b in zip(j1, j2):
            np.testing.assert_array_equal(a.image, b.image)


class TestAblationPlans:
    @pytest.mark.parametrize(
        "variant,factor_keys",
        [
            ("global-vs-grid", {"provider.mode"}),
            ("cfg-on-off", {"decode.scale"}),
            ("layer-sweep", {"provider.layer"}),
            ("mapping-depth", {"stage2.mapping_layers"}),
            ("attention", {"stage2.attention"}),
            ("augmentation", {"augment.names"}),
        ],
    )
    def test_arms_differ_only_in_declared_factor(self, variant, factor_keys):
        base = parse_config(None, preset="desk")
        arms = plan_ablation(variant, base)
        assert len(arms) >= 2
        configs = [_with_overrides(base, a["overrides"]).to_dict() for a in arms]
        for other in configs[1:]:
            diff = set(config_diff(configs[0], other))
            assert diff <= factor_keys, f"{variant}: unexpected diff {diff}"

    def test_layer_sweep_has_four_arms(self):
        base = parse_config(None, preset="desk")
        assert len(plan_ablation("layer-sweep", base)) == 4

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            plan_ablation("bogus", parse_config(None))


class TestReports:
    def test_report_save_and_table(self, tmp_path):
        report = EvalReport(
            name="demo", accuracy=0.75, per_category={"box": 1.0, "sphere": None},
            iou_mean=0.5, fingerprint="abc123", seed=7,
            samples_per_sketch=5, sketch_count=16,
        )
        report.save(tmp_path)
        data = (tmp_path / "demo.json").read_text()
        assert '"accuracy": 0.75' in data
        table = (tmp_path / "demo.txt").read_text()
        assert "accuracy: 0.7500" in table and "box" in table
