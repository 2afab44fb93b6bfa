"""Cine rendering, normalization, CDIM container, and unpaired pools."""
from __future__ import annotations

import numpy as np
import pytest

from cine2mesh.dataset import (
    DatasetError,
    CineSequence,
    VIEW_NAMES,
    imaging_planes,
    load_cine,
    make_unpaired_pools,
    normalization_stats,
    render_cine,
    save_cine,
    zscore_normalize,
)
from cine2mesh.geometry import LABEL_IDS, MeshVideo, rasterize, slice_mesh
from cine2mesh.shapemodel import (
    MotionModel,
    default_shape_model,
    generate_mesh_video,
    synth_base_heart,
)


@pytest.fixture(scope="module")
def model():
    return default_shape_model(seed=0, detail=1, n_modes=4, cohort_size=12)


@pytest.fixture(scope="module")
def video(model):
    motion = MotionModel(
        amplitudes={"LV": 0.3, "Myo": 0.15, "RV": 0.2, "LA": 0.15, "RA": 0.1},
        phases={"LV": 0.0, "Myo": 0.0, "RV": 0.0, "LA": np.pi, "RA": np.pi},
    )
    vid, ef = generate_mesh_video(model, np.zeros(model.n_modes), motion, 4)
    return vid, ef


class TestImagingPlanes:
    def test_four_planes_all_intersect(self, video):
        vid, _ = video
        planes = imaging_planes(vid[0])
        assert set(planes) == set(VIEW_NAMES)
        for name, plane in planes.items():
            assert not slice_mesh(vid[0], plane).is_empty(), name

    def test_lax_plane_sees_all_four_chambers(self, video):
        vid, _ = video
        planes = imaging_planes(vid[0])
        cut = slice_mesh(vid[0], planes["lax"])
        assert {"LV", "RV", "LA", "RA"} <= set(cut.structures())

    def test_mid_sax_contains_lv_and_rv(self, video):
        vid, _ = video
        planes = imaging_planes(vid[0])
        cut = slice_mesh(vid[0], planes["sax_mid"])
        labels = rasterize(cut, 64, 2.5)
        present = set(np.unique(labels)) - {0}
        assert {LABEL_IDS["LV"], LABEL_IDS["RV"]} <= present


class TestRenderCine:
    def test_same_seed_bit_identical(self, video):
        vid, ef = video
        a = render_cine(vid, image_size=32, seed=9, ef=ef)
        b = render_cine(vid, image_size=32, seed=9, ef=ef)
        np.testing.assert_array_equal(a.stack(), b.stack())

    def test_zero_noise_static_video_identical_frames(self, model):
        vid, _ = generate_mesh_video(
            model, np.zeros(model.n_modes), MotionModel(amplitudes={}, phases={}), 3
        )
        cine = render_cine(vid, image_size=32, noise_sigma=0.0)
        stack = cine.stack()
        for t in range(1, vid.n_frames):
            np.testing.assert_array_equal(stack[t], stack[0])

    def test_shapes_and_spacing(self, video):
        vid, _ = video
        cine = render_cine(vid, image_size=48, fov_mm=144.0, seed=1)
        assert cine.stack().shape == (vid.n_frames, 4, 48, 48)
        assert cine.pixel_spacing == pytest.approx(3.0)

    def test_moving_video_changes_frames(self, video):
        vid, _ = video
        cine = render_cine(vid, image_size=32, noise_sigma=0.0)
        assert not np.array_equal(cine.lax[0], cine.lax[2])


class TestZScore:
    def test_constant_stack_goes_to_zero(self):
        out = zscore_normalize(np.full((3, 2, 8, 8), 7.0))
        np.testing.assert_array_equal(out, np.zeros_like(out))

    def test_mean_zero_std_one(self):
        rng = np.random.default_rng(0)
        stack = rng.normal(5.0, 2.0, size=(4, 2, 16, 16))
        out = zscore_normalize(stack)
        assert abs(out.mean()) < 1e-9
        assert abs(out.std() - 1.0) < 1e-9

    def test_idempotent_on_normalized_input(self):
        rng = np.random.default_rng(1)
        stack = zscore_normalize(rng.normal(size=(2, 4, 8, 8)))
        again = zscore_normalize(stack)
        np.testing.assert_allclose(again, stack, atol=1e-9)

    def test_stats_reproduce_normalization(self):
        rng = np.random.default_rng(2)
        stack = rng.normal(3.0, 1.5, size=(2, 4, 8, 8))
        mean, std = normalization_stats(stack)
        np.testing.assert_array_equal(
            zscore_normalize(stack), (stack - mean) / max(std, 1e-8)
        )


class TestCdim:
    def test_round_trip(self, tmp_path, video):
        vid, ef = video
        cine = render_cine(vid, image_size=32, seed=4, ef=ef)
        path = tmp_path / "sample.cdim"
        save_cine(cine, path)
        loaded = load_cine(path, pixel_spacing=cine.pixel_spacing, ef=ef)
        # float32 container: exact as float32
        np.testing.assert_array_equal(
            loaded.stack().astype(np.float32), cine.stack().astype(np.float32)
        )
        assert loaded.n_frames == cine.n_frames
        assert path.read_bytes()[:4] == b"CDIM"

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.cdim"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(DatasetError, match="magic"):
            load_cine(path, pixel_spacing=1.0)


class TestUnpairedPools:
    def test_pools_disjoint_and_exhaustive(self):
        split = make_unpaired_pools(20, n_train=14, n_validation=3, n_test=3, seed=0)
        image = set(split.image_subjects)
        mesh = set(split.mesh_subjects)
        assert image.isdisjoint(mesh)
        groups = [image, mesh, set(split.validation), set(split.test)]
        combined: set[int] = set()
        for g in groups:
            assert combined.isdisjoint(g)
            combined |= g
        assert combined == set(range(20))

    def test_proportional_split_at_desk_scale(self):
        # 140:60 of 200 mirrors the reference 313:133 train/test proportion.
        split = make_unpaired_pools(200, n_train=140, n_validation=30, n_test=30, seed=1)
        assert len(split.image_subjects) + len(split.mesh_subjects) == 140
        assert len(split.validation) == 30 and len(split.test) == 30

    def test_fixed_seed_identical(self):
        a = make_unpaired_pools(12, 8, 2, 2, seed=3)
        b = make_unpaired_pools(12, 8, 2, 2, seed=3)
        assert a == b

    def test_too_small_cohort_rejected(self):
        with pytest.raises(DatasetError, match="small"):
            make_unpaired_pools(3, 1, 1, 1)

    def test_inconsistent_split_rejected(self):
        with pytest.raises(DatasetError, match="split"):
            make_unpaired_pools(10, 5, 2, 2)
