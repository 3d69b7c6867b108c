import numpy as np
import numpy.testing as npt
import pytest

from actionseg.backends import (
    FileBackend,
    OracleBackend,
    RecordingBackend,
    SegBackendSpec,
    WindowKey,
    clip_annotation,
    make_backend,
    render_groundtruth,
)
from actionseg.core import BBox, ContractError, DataError, ImageU8, LabelSet
from actionseg.dataset import ObjectAnnotation, SceneAnnotation, write_fpm


def labels2():
    return LabelSet.with_objects(["obj_a", "obj_b"])


def blank_image(h=16, w=16):
    return ImageU8(np.zeros((h, w, 3), dtype=np.uint8))


def scene(objects=(), face=None, hands=(), image_id="img0", class_name="c"):
    return SceneAnnotation(
        image_id=image_id,
        class_name=class_name,
        face=face,
        hands=tuple(hands),
        objects=tuple(objects),
    )


def block_object(x0, y0, x1, y1, label="obj_a"):
    mask = np.ones((y1 - y0, x1 - x0), dtype=bool)
    return ObjectAnnotation(label=label, bbox=BBox(x0, y0, x1, y1), mask=mask)


def box_blur_loop(plane, radius):
    """Mean over a (2r+1)^2 window with nearest-edge padding, as plain loops."""
    h, w = plane.shape
    out = np.zeros_like(plane, dtype=np.float64)
    for y in range(h):
        for x in range(w):
            total = 0.0
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    total += plane[yy, xx]
            out[y, x] = total / (2 * radius + 1) ** 2
    return out


def block_mean_loop(plane, stride):
    """Per-block means broadcast back to pixel resolution, as plain loops."""
    h, w = plane.shape
    out = np.zeros_like(plane, dtype=np.float64)
    for by in range(0, h, stride):
        for bx in range(0, w, stride):
            block = plane[by : by + stride, bx : bx + stride]
            out[by : by + stride, bx : bx + stride] = block.mean(dtype=np.float64)
    return out


class TestSpecParsing:
    def test_defaults_per_role(self):
        c = SegBackendSpec.parse("oracle", "coarse")
        assert (c.stride, c.blur_radius, c.sigma) == (8, 6, 0.0)
        f = SegBackendSpec.parse("oracle", "fine")
        assert (f.stride, f.blur_radius, f.sigma) == (1, 1, 0.0)

    def test_overrides(self):
        s = SegBackendSpec.parse("oracle:sigma=0.05,blur=2,stride=4", "fine")
        assert (s.sigma, s.blur_radius, s.stride) == (0.05, 2, 4)

    def test_file_backend(self):
        s = SegBackendSpec.parse("file:/some/dir", "coarse")
        assert s.kind == "file"
        assert s.map_dir == "/some/dir"

    def test_bad_grammar(self):
        with pytest.raises(ContractError):
            SegBackendSpec.parse("magic", "fine")
        with pytest.raises(ContractError):
            SegBackendSpec.parse("oracle:zap=1", "fine")
        with pytest.raises(ContractError):
            SegBackendSpec.parse("oracle:sigma", "fine")

    def test_tag_distinguishes_settings(self):
        a = SegBackendSpec.parse("oracle:sigma=0.1", "fine").tag
        b = SegBackendSpec.parse("oracle:sigma=0.2", "fine").tag
        assert a != b


class TestGroundTruthRendering:
    def test_empty_annotation_all_bg(self):
        lm = render_groundtruth(scene(), (8, 8), labels2())
        npt.assert_array_equal(lm, 0)

    def test_object_pixel_count(self):
        ann = scene(objects=[block_object(2, 3, 5, 7)])
        lm = render_groundtruth(ann, (16, 16), labels2())
        assert (lm == labels2().index_of("obj_a")).sum() == 12

    def test_paint_order_object_over_face(self):
        ann = scene(face=BBox(0, 0, 8, 8), objects=[block_object(4, 4, 8, 8)])
        ls = labels2()
        lm = render_groundtruth(ann, (16, 16), ls)
        assert lm[5, 5] == ls.index_of("obj_a")
        assert lm[1, 1] == ls.face

    def test_hands_over_face(self):
        ls = labels2()
        ann = scene(face=BBox(0, 0, 8, 8), hands=[BBox(0, 0, 4, 4)])
        lm = render_groundtruth(ann, (16, 16), ls)
        assert lm[2, 2] == ls.hand
        assert lm[6, 6] == ls.face

    def test_offscreen_parts_clipped(self):
        ann = scene(objects=[block_object(-3, -3, 3, 3)])
        lm = render_groundtruth(ann, (8, 8), labels2())
        assert (lm == labels2().index_of("obj_a")).sum() == 9

    def test_unknown_label_rejected(self):
        ann = scene(objects=[block_object(0, 0, 2, 2, label="obj_zz")])
        with pytest.raises(ContractError):
            render_groundtruth(ann, (8, 8), labels2())


class TestClipAnnotation:
    def test_shifts_into_window_frame(self):
        ann = scene(
            face=BBox(2, 2, 6, 6),
            hands=[BBox(0, 0, 2, 2)],
            objects=[block_object(4, 4, 8, 8)],
        )
        local = clip_annotation(ann, BBox(4, 4, 12, 12))
        assert local.objects[0].bbox == BBox(0, 0, 4, 4)
        assert local.face == BBox(0, 0, 2, 2)  # clipped tail of the face
        assert local.hands == ()  # fully outside

    def test_drops_empty_objects(self):
        ann = scene(objects=[block_object(0, 0, 3, 3)])
        local = clip_annotation(ann, BBox(8, 8, 16, 16))
        assert local.objects == ()

    def test_object_mask_cropped_not_resized(self):
        mask = np.zeros((4, 4), dtype=bool)
        mask[np.arange(4), np.arange(4)] = True  # diagonal
        obj = ObjectAnnotation(label="obj_a", bbox=BBox(2, 2, 6, 6), mask=mask)
        local = clip_annotation(scene(objects=[obj]), BBox(3, 3, 8, 8))
        lm = render_groundtruth(local, (5, 5), labels2())
        idx = labels2().index_of("obj_a")
        expect = np.zeros((5, 5), dtype=bool)
        expect[np.arange(3), np.arange(3)] = True
        npt.assert_array_equal(lm == idx, expect)


class TestOracleBackend:
    def test_noiseless_is_one_hot(self):
        ls = labels2()
        ann = scene(face=BBox(1, 1, 5, 5), objects=[block_object(8, 8, 12, 12)])
        spec = SegBackendSpec(kind="oracle", sigma=0.0, blur_radius=0, stride=1)
        pm = OracleBackend(spec, ls).segment(blank_image(), ann, WindowKey("img0"))
        lm = render_groundtruth(ann, (16, 16), ls)
        one_hot = np.zeros((16, 16, len(ls)), dtype=np.float32)
        np.put_along_axis(one_hot, lm[:, :, None], 1.0, axis=2)
        npt.assert_array_equal(pm.data, one_hot)

    def test_blur_matches_loop_oracle(self):
        ls = labels2()
        ann = scene(objects=[block_object(3, 3, 8, 9)])
        spec = SegBackendSpec(kind="oracle", sigma=0.0, blur_radius=2, stride=1)
        pm = OracleBackend(spec, ls).segment(blank_image(12, 12), ann, WindowKey("a"))
        lm = render_groundtruth(ann, (12, 12), ls)
        for c in range(len(ls)):
            plane = (lm == c).astype(np.float64)
            npt.assert_allclose(
                pm.data[:, :, c], box_blur_loop(plane, 2), atol=1e-6
            )

    def test_stride_matches_loop_oracle(self):
        ls = labels2()
        ann = scene(objects=[block_object(3, 3, 9, 9)])
        spec = SegBackendSpec(kind="oracle", sigma=0.0, blur_radius=0, stride=4)
        pm = OracleBackend(spec, ls).segment(blank_image(12, 12), ann, WindowKey("a"))
        lm = render_groundtruth(ann, (12, 12), ls)
        for c in range(len(ls)):
            plane = (lm == c).astype(np.float64)
            npt.assert_allclose(
                pm.data[:, :, c], block_mean_loop(plane, 4), atol=1e-6
            )

    def test_stride_handles_ragged_edge(self):
        ls = labels2()
        ann = scene(objects=[block_object(0, 0, 5, 5)])
        spec = SegBackendSpec(kind="oracle", sigma=0.0, blur_radius=0, stride=4)
        # 10 is not a multiple of 4: edge blocks are smaller but still averaged
        pm = OracleBackend(spec, ls).segment(blank_image(10, 10), ann, WindowKey("a"))
        lm = render_groundtruth(ann, (10, 10), ls)
        for c in range(len(ls)):
            plane = (lm == c).astype(np.float64)
            npt.assert_allclose(
                pm.data[:, :, c], block_mean_loop(plane, 4), atol=1e-6
            )

    def test_noise_reproducible_per_key(self):
        ls = labels2()
        ann = scene(objects=[block_object(4, 4, 10, 10)])
        spec = SegBackendSpec(kind="oracle", sigma=0.1, blur_radius=1, stride=2)
        be = OracleBackend(spec, ls, seed=7)
        a = be.segment(blank_image(), ann, WindowKey("img0"))
        b = OracleBackend(spec, ls, seed=7).segment(blank_image(), ann, WindowKey("img0"))
        assert a.data.tobytes() == b.data.tobytes()

    def test_noise_differs_across_keys_and_seeds(self):
        ls = labels2()
        ann = scene(objects=[block_object(4, 4, 10, 10)])
        spec = SegBackendSpec(kind="oracle", sigma=0.1, blur_radius=1, stride=2)
        base = OracleBackend(spec, ls, seed=7).segment(
            blank_image(), ann, WindowKey("img0")
        )
        other_img = OracleBackend(spec, ls, seed=7).segment(
            blank_image(), ann, WindowKey("img1")
        )
        other_seed = OracleBackend(spec, ls, seed=8).segment(
            blank_image(), ann, WindowKey("img0")
        )
        assert base.data.tobytes() != other_img.data.tobytes()
        assert base.data.tobytes() != other_seed.data.tobytes()

    def test_sums_conserved_under_degradation(self):
        ls = labels2()
        ann = scene(face=BBox(0, 0, 6, 6), objects=[block_object(8, 8, 14, 14)])
        rng = np.random.default_rng(13)
        for _ in range(10):
            spec = SegBackendSpec(
                kind="oracle",
                sigma=float(rng.uniform(0, 0.2)),
                blur_radius=int(rng.integers(0, 4)),
                stride=int(rng.integers(1, 5)),
            )
            pm = OracleBackend(spec, ls, seed=3).segment(
                blank_image(), ann, WindowKey("img0")
            )
            sums = pm.data.sum(axis=2, dtype=np.float64)
            npt.assert_allclose(sums, 1.0, atol=1e-6)

    def test_window_renders_clipped_annotation(self):
        ls = labels2()
        ann = scene(objects=[block_object(4, 4, 8, 8)])
        spec = SegBackendSpec(kind="oracle", sigma=0.0, blur_radius=0, stride=1)
        win = BBox(2, 2, 10, 10)
        crop = ImageU8(np.zeros((8, 8, 3), dtype=np.uint8))
        pm = OracleBackend(spec, ls).segment(crop, ann, WindowKey("img0", win))
        idx = ls.index_of("obj_a")
        expect = np.zeros((8, 8), dtype=bool)
        expect[2:6, 2:6] = True
        npt.assert_array_equal(pm.data[:, :, idx] == 1.0, expect)

    def test_window_upscales_to_crop_dims(self):
        ls = labels2()
        ann = scene(objects=[block_object(4, 4, 8, 8)])
        spec = SegBackendSpec(kind="oracle", sigma=0.0, blur_radius=0, stride=1)
        win = BBox(2, 2, 10, 10)
        crop = ImageU8(np.zeros((16, 16, 3), dtype=np.uint8))
        pm = OracleBackend(spec, ls).segment(crop, ann, WindowKey("img0", win))
        idx = ls.index_of("obj_a")
        # nearest upscale of the 8x8 window render: object doubles in size
        assert pm.dims == (16, 16)
        assert (pm.data[:, :, idx] == 1.0).sum() == 64

    def test_annotation_required(self):
        spec = SegBackendSpec(kind="oracle")
        with pytest.raises(ContractError):
            OracleBackend(spec, labels2()).segment(blank_image(), None, WindowKey("x"))


class TestFileBackend:
    def make_map(self, rng, ls, h=16, w=16):
        raw = rng.random((h, w, len(ls))) + 1e-3
        raw /= raw.sum(axis=2, keepdims=True)
        from actionseg.core import ProbMap

        return ProbMap(raw.astype(np.float32), ls)

    def test_round_trip_bit_identical(self, tmp_path):
        ls = labels2()
        pm = self.make_map(np.random.default_rng(4), ls)
        key = WindowKey("img0")
        write_fpm(tmp_path / key.filename, pm)
        spec = SegBackendSpec(kind="file", map_dir=str(tmp_path))
        out = FileBackend(spec, ls).segment(blank_image(), None, key)
        assert out.data.tobytes() == pm.data.tobytes()

    def test_missing_map_names_key_and_path(self, tmp_path):
        spec = SegBackendSpec(kind="file", map_dir=str(tmp_path))
        with pytest.raises(DataError, match="img9") as err:
            FileBackend(spec, labels2()).segment(blank_image(), None, WindowKey("img9"))
        assert str(tmp_path) in str(err.value)

    def test_label_mismatch(self, tmp_path):
        ls = labels2()
        pm = self.make_map(np.random.default_rng(5), ls)
        key = WindowKey("img0")
        write_fpm(tmp_path / key.filename, pm)
        other = LabelSet.with_objects(["obj_z"])
        spec = SegBackendSpec(kind="file", map_dir=str(tmp_path))
        with pytest.raises(DataError, match="label"):
            FileBackend(spec, other).segment(blank_image(), None, key)

    def test_dims_mismatch(self, tmp_path):
        ls = labels2()
        pm = self.make_map(np.random.default_rng(6), ls, h=8, w=8)
        key = WindowKey("img0")
        write_fpm(tmp_path / key.filename, pm)
        spec = SegBackendSpec(kind="file", map_dir=str(tmp_path))
        with pytest.raises(DataError, match="stored map"):
            FileBackend(spec, ls).segment(blank_image(16, 16), None, key)

    def test_lazy_label_adoption(self, tmp_path):
        ls = labels2()
        pm = self.make_map(np.random.default_rng(7), ls)
        key = WindowKey("img0")
        write_fpm(tmp_path / key.filename, pm)
        spec = SegBackendSpec(kind="file", map_dir=str(tmp_path))
        be = FileBackend(spec, labels=None)
        be.segment(blank_image(), None, key)
        assert be.labels.names == ls.names


class TestRecordingBackend:
    def test_passthrough_and_replay(self, tmp_path):
        ls = labels2()
        ann = scene(objects=[block_object(4, 4, 10, 10)])
        spec = SegBackendSpec(kind="oracle", sigma=0.05, blur_radius=1, stride=2)
        rec = RecordingBackend(OracleBackend(spec, ls, seed=1), tmp_path)
        key = WindowKey("img0")
        live = rec.segment(blank_image(), ann, key)
        replay_spec = SegBackendSpec(kind="file", map_dir=str(tmp_path))
        replay = FileBackend(replay_spec, ls).segment(blank_image(), None, key)
        assert replay.data.tobytes() == live.data.tobytes()

    def test_window_keys_get_distinct_files(self, tmp_path):
        ls = labels2()
        ann = scene(objects=[block_object(4, 4, 10, 10)])
        spec = SegBackendSpec(kind="oracle", sigma=0.0, blur_radius=0, stride=1)
        rec = RecordingBackend(OracleBackend(spec, ls), tmp_path)
        rec.segment(blank_image(), ann, WindowKey("img0"))
        rec.segment(
            ImageU8(np.zeros((8, 8, 3), dtype=np.uint8)),
            ann,
            WindowKey("img0", BBox(0, 0, 8, 8)),
        )
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["img0__0_0_8_8.fpm", "img0__full.fpm"]


class TestMakeBackend:
    def test_oracle_needs_labels(self):
        with pytest.raises(ContractError):
            make_backend(SegBackendSpec(kind="oracle"), None)

    def test_kinds(self, tmp_path):
        assert isinstance(
            make_backend(SegBackendSpec(kind="oracle"), labels2()), OracleBackend
        )
        assert isinstance(
            make_backend(SegBackendSpec(kind="file", map_dir=str(tmp_path)), None),
            FileBackend,
        )
