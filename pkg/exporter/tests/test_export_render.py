"""Annotation rendering: parity with the pipeline's own maps, and error paths."""

import json

import numpy as np
import pytest

px = pytest.importorskip("probexport")

from probexport import (
    ExportError,
    annotation_to_fpm,
    load_annotation,
    paint_labelmap,
    parse_annotation,
    render_probability,
)
from samples import LABELS, encode_runs, random_annotation

from actionseg.backends import SegBackendSpec, WindowKey, make_backend
from actionseg.core import ImageU8, LabelSet
from actionseg.dataset import annotation_from_dict


def pipeline_map(ann_dict, dims, sigma=0.0, blur=0, stride=1, seed=0):
    """The map the pipeline itself would produce for one full image."""
    spec = SegBackendSpec(kind="oracle", sigma=sigma, blur_radius=blur, stride=stride)
    backend = make_backend(spec, LabelSet(LABELS), seed=seed)
    image = ImageU8(np.zeros((dims[0], dims[1], 3), dtype=np.uint8))
    ann = annotation_from_dict(ann_dict)
    return backend.segment(image, ann, WindowKey(ann.image_id))


def overlap_annotation():
    # Face, hand, and a cup mask stacked on the same pixels.
    return {
        "asv": 1,
        "id": "scene_overlap",
        "class": "cup",
        "face": [2, 2, 12, 12],
        "hands": [[6, 6, 16, 16]],
        "objects": [
            {
                "label": "cup",
                "bbox": [8, 8, 14, 14],
                "mask_rle": encode_runs(np.ones((6, 6), dtype=bool)),
            }
        ],
    }


class TestCleanRender:
    def test_matches_pipeline_onehot(self):
        rng = np.random.default_rng(10)
        for t in range(10):
            dims = (int(rng.integers(8, 40)), int(rng.integers(8, 40)))
            d = random_annotation(rng, dims, f"scene_{t:05d}")
            values = render_probability(parse_annotation(d), dims, LABELS)
            theirs = pipeline_map(d, dims)
            assert values.tobytes() == theirs.data.tobytes()

    def test_onehot_encodes_painted_labels(self):
        rng = np.random.default_rng(11)
        dims = (24, 30)
        d = random_annotation(rng, dims, "scene_x")
        ann = parse_annotation(d)
        values = render_probability(ann, dims, LABELS)
        assert np.array_equal(values.argmax(axis=2), paint_labelmap(ann, dims, LABELS))
        assert set(np.unique(values)) <= {0.0, 1.0}

    def test_empty_annotation_is_all_background(self):
        d = {
            "asv": 1,
            "id": "scene_empty",
            "class": "cup",
            "face": None,
            "hands": [],
            "objects": [],
        }
        values = render_probability(parse_annotation(d), (9, 9), LABELS)
        assert np.all(values[:, :, 0] == 1.0)
        assert np.all(values[:, :, 1:] == 0.0)

    def test_objects_overpaint_hands_and_face(self):
        d = overlap_annotation()
        values = render_probability(parse_annotation(d), (20, 20), LABELS)
        labelmap = values.argmax(axis=2)
        assert labelmap[10, 10] == LABELS.index("cup")  # object on top
        assert labelmap[7, 7] == LABELS.index("hand")  # hand over face
        assert labelmap[3, 3] == LABELS.index("face")
        theirs = pipeline_map(d, (20, 20))
        assert values.tobytes() == theirs.data.tobytes()

    def test_mask_clipped_at_image_edge(self):
        mask = np.ones((5, 8), dtype=bool)
        d = {
            "asv": 1,
            "id": "scene_edge",
            "class": "cup",
            "face": None,
            "hands": [],
            "objects": [
                {"label": "cup", "bbox": [-3, 6, 5, 11], "mask_rle": encode_runs(mask)}
            ],
        }
        values = render_probability(parse_annotation(d), (10, 10), LABELS)
        assert np.all(values[6:10, 0:5, LABELS.index("cup")] == 1.0)
        theirs = pipeline_map(d, (10, 10))
        assert values.tobytes() == theirs.data.tobytes()


class TestDegradedRender:
    def test_blur_parity_and_conservation(self):
        rng = np.random.default_rng(12)
        dims = (33, 27)
        d = random_annotation(rng, dims, "scene_blur")
        values = render_probability(parse_annotation(d), dims, LABELS, blur=3)
        theirs = pipeline_map(d, dims, blur=3)
        assert values.tobytes() == theirs.data.tobytes()
        off = np.abs(values.sum(axis=2, dtype=np.float64) - 1.0)
        assert float(off.max()) <= 1e-6

    def test_stride_blocks_are_constant(self):
        rng = np.random.default_rng(13)
        dims = (21, 18)
        d = random_annotation(rng, dims, "scene_stride")
        values = render_probability(parse_annotation(d), dims, LABELS, stride=4)
        for y in range(0, dims[0], 4):
            for x in range(0, dims[1], 4):
                block = values[y : y + 4, x : x + 4]
                assert np.all(block == block[0, 0])
        theirs = pipeline_map(d, dims, stride=4)
        assert values.tobytes() == theirs.data.tobytes()

    def test_noise_stream_parity_at_coarse_defaults(self):
        rng = np.random.default_rng(14)
        dims = (40, 40)
        d = random_annotation(rng, dims, "scene_noise")
        kw = dict(blur=6, sigma=0.05, stride=8, seed=7)
        values = render_probability(parse_annotation(d), dims, LABELS, **kw)
        theirs = pipeline_map(d, dims, **kw)
        assert values.tobytes() == theirs.data.tobytes()

    def test_noise_keyed_by_seed_image_and_window(self):
        rng = np.random.default_rng(15)
        dims = (16, 16)
        d = random_annotation(rng, dims, "scene_keys")
        ann = parse_annotation(d)
        base = render_probability(ann, dims, LABELS, sigma=0.05, seed=7)
        again = render_probability(ann, dims, LABELS, sigma=0.05, seed=7)
        assert base.tobytes() == again.tobytes()
        other_seed = render_probability(ann, dims, LABELS, sigma=0.05, seed=8)
        assert base.tobytes() != other_seed.tobytes()
        other_window = render_probability(
            ann, dims, LABELS, sigma=0.05, seed=7, window="0_0_8_8"
        )
        assert base.tobytes() != other_window.tobytes()

    @pytest.mark.parametrize("kw", [{"blur": -1}, {"stride": 0}, {"sigma": -0.1}])
    def test_rejects_bad_knobs(self, kw):
        d = overlap_annotation()
        with pytest.raises(ExportError):
            render_probability(parse_annotation(d), (20, 20), LABELS, **kw)


class TestAnnotationParsing:
    def test_rejects_unknown_schema_version(self):
        d = overlap_annotation()
        d["asv"] = 2
        with pytest.raises(ExportError, match="schema version"):
            parse_annotation(d)

    @pytest.mark.parametrize("missing", ["id", "class", "hands", "objects"])
    def test_rejects_missing_field(self, missing):
        d = overlap_annotation()
        del d[missing]
        with pytest.raises(ExportError, match=missing):
            parse_annotation(d)

    def test_rejects_empty_box(self):
        d = overlap_annotation()
        d["face"] = [5, 5, 5, 9]
        with pytest.raises(ExportError, match="face box"):
            parse_annotation(d)

    def test_rejects_run_total_mismatch(self):
        d = overlap_annotation()
        d["objects"][0]["mask_rle"] = [3, 4]
        with pytest.raises(ExportError, match="36"):
            parse_annotation(d)

    def test_rejects_negative_run(self):
        d = overlap_annotation()
        d["objects"][0]["mask_rle"] = [40, -4, 0]
        with pytest.raises(ExportError, match="negative"):
            parse_annotation(d)

    def test_rejects_object_label_outside_set(self):
        d = overlap_annotation()
        d["objects"][0]["label"] = "spoon"
        with pytest.raises(ExportError, match="spoon"):
            render_probability(parse_annotation(d), (20, 20), LABELS)

    def test_malformed_json_names_byte(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"asv": 1,,}')
        with pytest.raises(ExportError, match="byte"):
            load_annotation(path)

    def test_load_annotation_round_trip(self, tmp_path):
        d = overlap_annotation()
        path = tmp_path / "ann.json"
        path.write_text(json.dumps(d))
        ann = load_annotation(path)
        assert ann.image_id == "scene_overlap"
        assert ann.objects[0].mask.shape == (6, 6)


class TestAnnotationToFpm:
    def test_written_file_loads_in_pipeline(self, tmp_path):
        from actionseg.dataset import read_fpm

        rng = np.random.default_rng(16)
        dims = (18, 22)
        d = random_annotation(rng, dims, "scene_file")
        out = tmp_path / "scene_file__full.fpm"
        values = annotation_to_fpm(d, dims, LABELS, out, blur=2, sigma=0.03, seed=5)
        pmap = read_fpm(out)
        assert pmap.labels.names == LABELS
        assert pmap.data.tobytes() == values.tobytes()

    def test_dict_and_path_inputs_agree(self, tmp_path):
        rng = np.random.default_rng(17)
        dims = (14, 14)
        d = random_annotation(rng, dims, "scene_inputs")
        ann_path = tmp_path / "a.json"
        ann_path.write_text(json.dumps(d))
        out_a = tmp_path / "a.fpm"
        out_b = tmp_path / "b.fpm"
        annotation_to_fpm(d, dims, LABELS, out_a, sigma=0.02, seed=3)
        annotation_to_fpm(ann_path, dims, LABELS, out_b, sigma=0.02, seed=3)
        assert out_a.read_bytes() == out_b.read_bytes()
