import pytest

from fgiqa.data import DataError
from fgiqa.config import load_flat, ranges_from_flat, train_config_from_flat
from fgiqa.params import default_ranges
from fgiqa.training import TrainConfig


class TestLoadFlat:
    def test_parses_keys_comments_and_blanks(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text(
            "# a comment\n"
            "epochs = 3\n"
            "\n"
            "learning_rate_max = 0.001  # trailing comment\n"
        )
        assert load_flat(path) == {"epochs": "3", "learning_rate_max": "0.001"}

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(DataError):
            load_flat(tmp_path / "none.txt")

    def test_line_without_equals_rejected(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("epochs 3\n")
        with pytest.raises(DataError, match=":1:"):
            load_flat(path)


class TestTrainConfigFromFlat:
    def test_empty_flat_gives_defaults(self):
        assert train_config_from_flat({}) == TrainConfig()

    def test_typed_overrides(self):
        cfg = train_config_from_flat(
            {
                "epochs": "7",
                "learning_rate_max": "0.01",
                "use_gcpf": "true",
                "backbone.channels": "32",
                "backbone.depth": "3",
            }
        )
        assert cfg.epochs == 7
        assert cfg.learning_rate_max == 0.01
        assert cfg.use_gcpf is True
        assert cfg.backbone.channels == 32 and cfg.backbone.depth == 3

    def test_every_field_settable(self):
        flat = {
            "learning_rate_max": "0.005",
            "schedule": "cosine",
            "batch_size": "32",
            "epochs": "2",
            "resize": "128",
            "crop": "96",
            "lambda_reg": "0.5",
            "lambda_rank": "1.5",
            "seed": "9",
            "use_gcpf": "yes",
            "node_dim": "64",
            "weight_decay": "0.1",
            "cosine_floor": "0.02",
            "val_fraction": "0.2",
            "backbone.channels": "16",
            "backbone.depth": "2",
            "backbone.weights_path": "",
        }
        cfg = train_config_from_flat(flat)
        assert cfg.batch_size == 32 and cfg.node_dim == 64 and cfg.seed == 9
        assert cfg.lambda_rank == 1.5 and cfg.val_fraction == 0.2
        assert cfg.backbone.weights_path is None

    def test_bad_boolean_rejected(self):
        with pytest.raises(DataError):
            train_config_from_flat({"use_gcpf": "maybe"})

    def test_unknown_key_rejected(self):
        with pytest.raises(DataError, match="unknown config key"):
            train_config_from_flat({"learning_rate": "0.001"})

    def test_range_entries_ignored_here(self):
        cfg = train_config_from_flat({"iso.min": "200", "iso.max": "3200"})
        assert cfg == TrainConfig()


class TestRangesFromFlat:
    def test_defaults_when_absent(self):
        assert ranges_from_flat({}) == default_ranges()

    def test_partial_override_keeps_other_bound(self):
        ranges = ranges_from_flat({"iso.min": "200"})
        assert ranges["iso"].lo == 200.0
        assert ranges["iso"].hi == default_ranges()["iso"].hi
        assert ranges["iso"].log_scale

    def test_full_override(self):
        ranges = ranges_from_flat({"contrast.min": "10", "contrast.max": "90"})
        assert ranges["contrast"].lo == 10.0 and ranges["contrast"].hi == 90.0
        assert not ranges["contrast"].log_scale

    def test_invalid_bounds_rejected(self):
        with pytest.raises(DataError):
            ranges_from_flat({"contrast.min": "90", "contrast.max": "10"})
