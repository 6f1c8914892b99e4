import numpy as np
import pytest

from fgiqa.data import (
    ATTRIBUTES,
    AnnotationRecord,
    CameraParameters,
    DataError,
    DatasetManifest,
    ImageSample,
    ManifestError,
    MOSRecord,
    PairPreference,
    SampleRecord,
    load_image,
    load_manifest,
    save_image,
    save_manifest,
    split_scenes,
)

from conftest import make_annotation, make_sample


class TestCameraParameters:
    def test_round_trip_tuple(self, params_mid):
        assert CameraParameters.from_sequence(params_mid.as_tuple()) == params_mid

    @pytest.mark.parametrize("field", ["aperture", "shutter", "iso", "white_balance"])
    def test_physical_fields_must_be_positive(self, params_mid, field):
        values = dict(zip(("aperture", "shutter", "iso", "white_balance",
                          "contrast", "saturation", "sharpness"), params_mid.as_tuple()))
        values[field] = 0.0
        with pytest.raises(DataError):
            CameraParameters(**values)

    def test_device_scale_fields_may_be_negative(self, params_mid):
        t = list(params_mid.as_tuple())
        t[4] = -10.0  # contrast on a signed device scale
        CameraParameters.from_sequence(t)

    def test_non_finite_rejected(self, params_mid):
        t = list(params_mid.as_tuple())
        t[5] = float("nan")
        with pytest.raises(DataError):
            CameraParameters.from_sequence(t)

    def test_wrong_arity_rejected(self):
        with pytest.raises(DataError):
            CameraParameters.from_sequence([1.0, 2.0])


class TestSampleRecord:
    def test_zero_area_box_dropped_with_warning(self):
        with pytest.warns(UserWarning):
            rec = make_sample("x", human_boxes=((10.0, 10.0, 10.0, 40.0),))
        assert rec.human_boxes == ()

    def test_box_clipped_to_image(self):
        rec = make_sample("x", human_boxes=((-5.0, -5.0, 200.0, 50.0),))
        assert rec.human_boxes == ((0.0, 0.0, 96.0, 50.0),)

    def test_non_positive_size_rejected(self):
        with pytest.raises(DataError):
            make_sample("x", width=0)


class TestImageSample:
    def test_valid(self):
        img = ImageSample("i", "s", np.zeros((8, 8, 3)), human_boxes=((0, 0, 4, 4),))
        assert img.width == 8 and img.height == 8

    def test_pixels_out_of_range_rejected(self):
        with pytest.raises(DataError):
            ImageSample("i", "s", np.full((4, 4, 3), 1.5))

    def test_non_finite_pixels_rejected(self):
        px = np.zeros((4, 4, 3))
        px[0, 0, 0] = np.inf
        with pytest.raises(DataError):
            ImageSample("i", "s", px)

    def test_wrong_shape_rejected(self):
        with pytest.raises(DataError):
            ImageSample("i", "s", np.zeros((4, 4)))

    def test_box_outside_image_rejected(self):
        with pytest.raises(DataError):
            ImageSample("i", "s", np.zeros((4, 4, 3)), human_boxes=((0, 0, 8, 8),))


class TestAnnotationRecord:
    def test_missing_attribute_rejected(self):
        scores = {a: 3 for a in ATTRIBUTES if a != "noise"}
        with pytest.raises(DataError):
            AnnotationRecord("a", "i", scores)

    @pytest.mark.parametrize("bad", [0, 6, 2.5])
    def test_non_integral_or_out_of_range_rejected(self, bad):
        scores = {a: 3 for a in ATTRIBUTES}
        scores["overall"] = bad
        with pytest.raises(DataError):
            AnnotationRecord("a", "i", scores)


class TestMOSRecord:
    def test_mos_out_of_range_rejected(self):
        with pytest.raises(DataError):
            MOSRecord("i", {a: 6.0 for a in ATTRIBUTES}, {a: 0.0 for a in ATTRIBUTES}, 1)

    def test_negative_variance_rejected(self):
        with pytest.raises(DataError):
            MOSRecord("i", {a: 3.0 for a in ATTRIBUTES}, {a: -1.0 for a in ATTRIBUTES}, 1)


class TestPairPreference:
    def test_same_image_rejected(self):
        with pytest.raises(DataError):
            PairPreference("s", "x", "x", {a: 1.0 for a in ATTRIBUTES}, True)

    def test_fine_pair_allows_fractional_labels(self):
        labels = {a: 1.0 for a in ATTRIBUTES}
        labels["overall"] = 0.25
        PairPreference("s", "x", "y", labels, fine_grained=True)

    def test_coarse_pair_rejects_fractional_labels(self):
        labels = {a: 1.0 for a in ATTRIBUTES}
        labels["overall"] = 0.25
        with pytest.raises(DataError):
            PairPreference("s", "x", "y", labels, fine_grained=False)

    def test_coarse_pair_allows_ties_on_secondary_attributes(self):
        labels = {a: 0.5 for a in ATTRIBUTES}
        labels["overall"] = 1.0
        PairPreference("s", "x", "y", labels, fine_grained=False)


class TestManifest:
    def test_dangling_annotation_rejected(self):
        with pytest.raises(ManifestError):
            DatasetManifest(samples=[], annotations=[make_annotation("a", "ghost", 3)])

    def test_duplicate_image_id_rejected(self):
        with pytest.raises(DataError):
            DatasetManifest(samples=[make_sample("x"), make_sample("x")])

    def test_split_must_reference_known_scene(self):
        with pytest.raises(DataError):
            DatasetManifest(samples=[make_sample("x")], split={"ghost": "train"})

    def test_round_trip(self, tiny_manifest, tmp_path):
        path = tmp_path / "m.jsonl"
        save_manifest(tiny_manifest, path)
        loaded = load_manifest(path)
        assert loaded.split == tiny_manifest.split
        assert [s.image_id for s in loaded.samples] == [s.image_id for s in tiny_manifest.samples]
        assert loaded.samples == tiny_manifest.samples
        assert loaded.annotations == tiny_manifest.annotations

    def test_round_trip_with_params_and_boxes(self, tmp_path, params_mid):
        m = DatasetManifest(
            samples=[
                make_sample("x", human_boxes=((1.0, 2.0, 3.0, 4.0),), params=params_mid)
            ]
        )
        path = tmp_path / "m.jsonl"
        save_manifest(m, path)
        assert load_manifest(path).samples == m.samples

    def test_empty_file_loads_empty_manifest(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text("")
        m = load_manifest(path)
        assert m.samples == [] and m.annotations == [] and m.split == {}

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "nope.jsonl")

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"kind": "sample"}\n')
        with pytest.raises(ManifestError, match=":1:"):
            load_manifest(path)

    def test_conflicting_split_rejected(self, tmp_path, tiny_manifest):
        path = tmp_path / "m.jsonl"
        save_manifest(tiny_manifest, path)
        with path.open("a") as fh:
            fh.write('{"kind": "split", "scene_id": "sceneA", "subset": "test"}\n')
        with pytest.raises(ManifestError):
            load_manifest(path)

    def test_unknown_kind_rejected(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"kind": "mystery"}\n')
        with pytest.raises(ManifestError):
            load_manifest(path)


class TestSplitScenes:
    @staticmethod
    def _manifest(n_scenes: int) -> DatasetManifest:
        return DatasetManifest(
            samples=[make_sample(f"i{k}", f"scene{k}") for k in range(n_scenes)]
        )

    def test_large_split_counts(self):
        m = split_scenes(self._manifest(555), 451 / 555, seed=0)
        assert sum(v == "train" for v in m.split.values()) == 451
        assert sum(v == "test" for v in m.split.values()) == 104

    def test_two_scenes_half(self):
        m = split_scenes(self._manifest(2), 0.5, seed=3)
        assert sorted(m.split.values()) == ["test", "train"]

    def test_deterministic(self):
        a = split_scenes(self._manifest(20), 0.7, seed=9).split
        b = split_scenes(self._manifest(20), 0.7, seed=9).split
        assert a == b

    def test_disjoint_and_complete(self):
        m = split_scenes(self._manifest(17), 0.6, seed=1)
        assert set(m.split) == {f"scene{k}" for k in range(17)}

    def test_extreme_fraction_keeps_both_subsets(self):
        m = split_scenes(self._manifest(5), 0.999, seed=0)
        assert sum(v == "test" for v in m.split.values()) == 1

    def test_invalid_fraction_rejected(self):
        with pytest.raises(DataError):
            split_scenes(self._manifest(4), 1.0, seed=0)


class TestImageIO:
    def test_round_trip_quantized(self, tmp_path):
        rng = np.random.default_rng(0)
        px = rng.random((16, 16, 3))
        path = tmp_path / "img.png"
        save_image(px, path)
        rec = make_sample("x", path="img.png", width=16, height=16)
        loaded = load_image(rec, tmp_path)
        assert np.abs(loaded.pixels - px).max() <= 0.5 / 255.0 + 1e-12

    def test_missing_image_file_raises(self, tmp_path):
        rec = make_sample("x", path="absent.png")
        with pytest.raises(DataError):
            load_image(rec, tmp_path)
