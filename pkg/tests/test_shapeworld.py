import math

import numpy as np
import pytest

from voxsketch import shapes, voxels
from voxsketch.checkpoint import FormatError, load_checkpoint, save_checkpoint
from voxsketch.corpus import build_corpus, category_counts, load_corpus
from voxsketch.render import ViewSpec, canonical_views, render, rotate_grid
from voxsketch.seeding import derive_rng, derive_seed
from voxsketch.shapes import CATEGORIES, generate_shape


class TestSeeding:
    def test_deterministic_and_distinct(self):
        assert derive_seed(7, "a", 1) == derive_seed(7, "a", 1)
        assert derive_seed(7, "a", 1) != derive_seed(7, "a", 2)
        assert derive_seed(7, "a") != derive_seed(8, "a")

    def test_rng_streams_independent_of_call_order(self):
        a1 = derive_rng(3, "x").random(4)
        b1 = derive_rng(3, "y").random(4)
        b2 = derive_rng(3, "y").random(4)
        a2 = derive_rng(3, "x").random(4)
        np.testing.assert_array_equal(a1, a2)
        np.testing.assert_array_equal(b1, b2)


class TestGenerators:
    def test_box_occupancy_count_is_volume(self):
        grid, params = generate_shape("box", 123)
        a, b, c = params["extents"]
        assert grid.sum() == a * b * c

    def test_sphere_matches_enumeration_oracle(self):
        grid, params = generate_shape("sphere", 9)
        r = params["radius"]
        cx, cy, cz = params["center"]
        oracle = np.zeros_like(grid)
        for x in range(32):
            for y in range(32):
                for z in range(32):
                    d2 = (x + 0.5 - cx) ** 2 + (y + 0.5 - cy) ** 2 + (z + 0.5 - cz) ** 2
                    oracle[x, y, z] = d2 <= r * r
        np.testing.assert_array_equal(grid, oracle)

    @pytest.mark.parametrize("category", CATEGORIES)
    def test_deterministic_nonempty_with_margin(self, category):
        g1, _ = generate_shape(category, 42)
        g2, _ = generate_shape(category, 42)
        np.testing.assert_array_equal(g1, g2)
        assert g1.any()
        # one-voxel margin on every boundary plane
        assert not g1[0].any() and not g1[-1].any()
        assert not g1[:, 0].any() and not g1[:, -1].any()
        assert not g1[:, :, 0].any() and not g1[:, :, -1].any()

    def test_different_seeds_differ(self):
        g1, _ = generate_shape("chair", 1)
        g2, _ = generate_shape("chair", 2)
        assert (g1 != g2).any()


class TestVoxelFiles:
    def test_round_trip(self, tmp_path):
        grid = derive_rng(0, "grid").random((32, 32, 32)) > 0.5
        path = tmp_path / "g.svox"
        voxels.save_voxels(grid, path)
        np.testing.assert_array_equal(voxels.load_voxels(path), grid)

    def test_file_size(self, tmp_path):
        path = tmp_path / "g.svox"
        voxels.save_voxels(voxels.empty_grid(), path)
        # 8-byte magic + three uint32 dims + 32768 bits packed
        assert path.stat().st_size == 8 + 12 + 4096

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.svox"
        path.write_bytes(b"")
        with pytest.raises(FormatError):
            voxels.load_voxels(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.svox"
        path.write_bytes(b"NOTAVOX!" + b"\x00" * 64)
        with pytest.raises(FormatError):
            voxels.load_voxels(path)

    def test_truncated_payload_rejected(self, tmp_path):
        good = tmp_path / "good.svox"
        voxels.save_voxels(voxels.empty_grid(), good)
        bad = tmp_path / "trunc.svox"
        bad.write_bytes(good.read_bytes()[:-100])
        with pytest.raises(FormatError):
            voxels.load_voxels(bad)

    def test_packing_is_x_fastest(self):
        grid = voxels.empty_grid()
        grid[3, 0, 0] = True
        packed = voxels.pack_occupancy(grid)
        assert packed[0] == 0b00010000  # bit 3 of the first byte, MSB first


def mesh_face_oracle(grid):
    """Count exposed faces by checking all six neighbors of every voxel."""
    count = 0
    for x, y, z in np.argwhere(grid):
        for dx, dy, dz in [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]:
            nx, ny, nz = x + dx, y + dy, z + dz
            if not (0 <= nx < 32 and 0 <= ny < 32 and 0 <= nz < 32) or not grid[nx, ny, nz]:
                count += 1
    return count


class TestMesh:
    def test_single_voxel(self, tmp_path):
        grid = voxels.empty_grid()
        grid[5, 6, 7] = True
        nv, nf = voxels.export_mesh(grid, tmp_path / "one.obj")
        assert (nv, nf) == (8, 12)

    def test_two_adjacent_voxels_share_a_face(self, tmp_path):
        grid = voxels.empty_grid()
        grid[5, 6, 7] = True
        grid[6, 6, 7] = True
        _, nf = voxels.export_mesh(grid, tmp_path / "two.obj")
        assert nf == 20

    def test_empty_grid_mesh(self, tmp_path):
        path = tmp_path / "empty.obj"
        nv, nf = voxels.export_mesh(voxels.empty_grid(), path)
        assert (nv, nf) == (0, 0)
        assert path.read_text().startswith("#")

    def test_random_grid_matches_face_oracle(self, tmp_path):
        grid = derive_rng(4, "mesh").random((32, 32, 32)) > 0.9
        _, nf = voxels.export_mesh(grid, tmp_path / "r.obj")
        assert nf == 2 * mesh_face_oracle(grid)
        assert voxels.exposed_face_count(grid) == mesh_face_oracle(grid)

    def test_obj_records(self, tmp_path):
        grid = voxels.empty_grid()
        grid[0, 0, 0] = True
        path = tmp_path / "rec.obj"
        voxels.export_mesh(grid, path)
        lines = path.read_text().splitlines()
        assert sum(1 for line in lines if line.startswith("v ")) == 8
        assert sum(1 for line in lines if line.startswith("f ")) == 12


class TestRender:
    def test_empty_grid_renders_black(self):
        img = render(voxels.empty_grid(), ViewSpec(0.3, 0.2, "silhouette"))
        assert img.shape == (64, 64)
        assert not img.any()

    def test_full_cube_silhouette_covers_frame(self):
        grid = np.ones((32, 32, 32), dtype=bool)
        img = render(grid, ViewSpec(0.0, 0.0, "silhouette"))
        np.testing.assert_array_equal(img, np.ones((64, 64), dtype=np.float32))

    def test_single_voxel_projection_matches_oracle(self):
        grid = voxels.empty_grid()
        x, y, z = 4, 20, 9
        grid[x, y, z] = True
        img = render(grid, ViewSpec(0.0, 0.0, "shaded"))
        # oracle: identity view maps cell (x, y, z) to a 2x2 block at
        # rows [2*(31-z), cols 2*x], brightness (32 - y) / 32
        want = np.zeros((64, 64), dtype=np.float32)
        want[2 * (31 - z) : 2 * (31 - z) + 2, 2 * x : 2 * x + 2] = (32 - y) / 32
        np.testing.assert_allclose(img, want, atol=1e-7)

    def test_render_is_pure_and_deterministic(self):
        grid, _ = generate_shape("table", 5)
        before = grid.copy()
        view = ViewSpec(math.pi / 4, math.pi / 6, "shaded")
        a = render(grid, view)
        b = render(grid, view)
        np.testing.assert_array_equal(grid, before)
        np.testing.assert_array_equal(a, b)

    def test_silhouette_nonempty_iff_grid_nonempty(self):
        for seed in range(5):
            cat = CATEGORIES[seed % len(CATEGORIES)]
            grid, _ = generate_shape(cat, seed)
            img = render(grid, ViewSpec(0.7, -0.3, "silhouette"))
            assert img.any()

    def test_quarter_turn_is_exact_permutation(self):
        grid = derive_rng(1, "rot").random((32, 32, 32)) > 0.7
        once = rotate_grid(grid, math.pi / 2, 0.0)
        want = np.zeros_like(grid)
        for i in range(32):
            for j in range(32):
                want[i, j] = grid[j, 31 - i]
        np.testing.assert_array_equal(once, want)
        four = grid
        for _ in range(4):
            four = rotate_grid(four, math.pi / 2, 0.0)
        np.testing.assert_array_equal(four, grid)

    def test_canonical_views(self):
        views = canonical_views()
        assert len(views) == 24
        assert len({(v.azimuth, v.elevation) for v in views}) == 24

    def test_pixels_stay_in_range(self):
        grid, _ = generate_shape("cone", 11)
        for style in ("silhouette", "shaded"):
            img = render(grid, ViewSpec(1.1, 0.4, style))
            assert img.min() >= 0.0 and img.max() <= 1.0


class TestCorpus:
    def test_split_sizes_and_partition(self, tmp_path):
        corpus = build_corpus(10, seed=5, root=tmp_path / "c")
        counts = category_counts(corpus, "train")
        assert all(v == 8 for v in counts.values())
        assert all(v == 1 for v in category_counts(corpus, "val").values())
        assert all(v == 1 for v in category_counts(corpus, "test").values())
        ids = [r.shape_id for r in corpus.records]
        assert len(ids) == len(set(ids)) == 80
        seeds_by_split = {
            s: {r.seed for r in corpus.split(s)} for s in ("train", "val", "test")
        }
        assert not (seeds_by_split["train"] & seeds_by_split["val"])
        assert not (seeds_by_split["train"] & seeds_by_split["test"])
        assert not (seeds_by_split["val"] & seeds_by_split["test"])

    def test_manifest_byte_identical_across_rebuilds(self, tmp_path):
        build_corpus(10, seed=5, root=tmp_path / "a")
        build_corpus(10, seed=5, root=tmp_path / "b")
        ma = (tmp_path / "a" / "manifest.tsv").read_bytes()
        mb = (tmp_path / "b" / "manifest.tsv").read_bytes()
        assert ma == mb

    def test_roundtrip_via_load(self, tmp_path):
        built = build_corpus(10, seed=1, root=tmp_path / "c")
        loaded = load_corpus(tmp_path / "c")
        assert [r.shape_id for r in loaded.records] == [r.shape_id for r in built.records]
        rec = loaded.split("train")[0]
        grid = loaded.load_grid(rec)
        regen, _ = generate_shape(rec.category, rec.seed)
        np.testing.assert_array_equal(grid, regen)

    def test_minimum_count_enforced(self, tmp_path):
        with pytest.raises(ValueError):
            build_corpus(5, seed=0, root=tmp_path / "c")


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = derive_rng(2, "ckpt")
        arrays = {
            "enc.w": rng.normal(size=(3, 4)).astype(np.float32),
            "enc.b": rng.normal(size=4).astype(np.float32),
            "scalar": np.float32(3.5),
        }
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, arrays)
        loaded = load_checkpoint(path)
        assert list(loaded) == list(arrays)
        for k in arrays:
            assert loaded[k].tobytes() == np.asarray(arrays[k], dtype="<f4").tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"XXXXXXXX\x00\x00\x00\x00")
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_truncation(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, {"w": np.ones((8, 8), dtype=np.float32)})
        clipped = tmp_path / "c.ckpt"
        clipped.write_bytes(path.read_bytes()[:-9])
        with pytest.raises(FormatError):
            load_checkpoint(clipped)
