"""Unit tests for config text, metrics files, and the checkpoint container."""

import numpy as np
import pytest

from spssl.autodiff import Tensor
from spssl.io import (MetricsWriter, apply_overrides, config_hash, dump_config,
                      load_checkpoint, parse_config_text, read_metrics,
                      save_checkpoint)


class TestConfigText:
    def test_parse_types_and_comments(self):
        text = """
        # a comment line
        epochs = 50
        base_lr = 1.5e-4   # trailing comment
        objective = "masked"
        hflip = true
        name = bare-string
        """
        cfg = parse_config_text(text)
        assert cfg == {"epochs": 50, "base_lr": 1.5e-4, "objective": "masked",
                       "hflip": True, "name": "bare-string"}

    def test_missing_equals_rejected(self):
        with pytest.raises(ValueError):
            parse_config_text("epochs 50\n")

    def test_dump_parse_roundtrip(self):
        cfg = {"a": 1, "b.c": 2.5, "d": "text", "e": [1, 2], "f": True}
        assert parse_config_text(dump_config(cfg)) == cfg

    def test_dump_is_sorted_and_stable(self):
        a = dump_config({"b": 1, "a": 2})
        b = dump_config({"a": 2, "b": 1})
        assert a == b
        assert a.index("a =") < a.index("b =")


class TestOverrides:
    def test_typed_overrides(self):
        out = apply_overrides({"epochs": 50}, ["epochs=10", "sp.lambda_p=0.0"])
        assert out == {"epochs": 10, "sp.lambda_p": 0.0}

    def test_original_untouched(self):
        cfg = {"epochs": 50}
        apply_overrides(cfg, ["epochs=10"])
        assert cfg["epochs"] == 50

    def test_malformed_override_rejected(self):
        with pytest.raises(ValueError):
            apply_overrides({}, ["epochs"])


class TestConfigHash:
    def test_stable_and_sensitive(self):
        cfg = {"a": 1, "b": 2}
        assert config_hash(cfg) == config_hash(dict(cfg))
        assert config_hash(cfg) != config_hash({"a": 1, "b": 3})
        assert len(config_hash(cfg)) == 16


class TestMetrics:
    def test_write_read_roundtrip_with_sidecar(self, tmp_path):
        path = tmp_path / "metrics.csv"
        with MetricsWriter(path, ["step", "loss"]) as writer:
            writer.write({"step": 0, "loss": 0.5})
            writer.write({"step": 1, "loss": 0.25})
        cols = read_metrics(path)
        np.testing.assert_array_equal(cols["step"], [0, 1])
        np.testing.assert_array_equal(cols["loss"], [0.5, 0.25])
        times = (tmp_path / "metrics.csv.times").read_text().splitlines()
        assert len(times) == 2

    def test_primary_file_has_no_timestamps(self, tmp_path):
        path = tmp_path / "metrics.csv"
        with MetricsWriter(path, ["step"]) as writer:
            writer.write({"step": 3})
        assert path.read_text() == "step\n3\n"


class TestCheckpoint:
    def test_roundtrip_preserves_values_dtypes_shapes(self, tmp_path):
        path = tmp_path / "ck.spck"
        tensors = {
            "w": Tensor(np.arange(6, dtype=np.float32).reshape(2, 3)),
            "raw": np.array([1.5, -2.5], dtype=np.float64),
            "idx": np.arange(4, dtype=np.int64),
        }
        save_checkpoint(path, tensors, step=7, cfg_hash="abc", extra={"note": 1})
        arrays, manifest = load_checkpoint(path)
        assert manifest["step"] == 7
        assert manifest["config_hash"] == "abc"
        assert manifest["extra"] == {"note": 1}
        for name in tensors:
            want = tensors[name].data if isinstance(tensors[name], Tensor) else tensors[name]
            np.testing.assert_array_equal(arrays[name], want)
            assert arrays[name].dtype == want.dtype

    def test_repeat_write_byte_identical(self, tmp_path):
        tensors = {"w": np.ones((3, 3), dtype=np.float32)}
        save_checkpoint(tmp_path / "a", tensors, 0, "h")
        save_checkpoint(tmp_path / "b", tensors, 0, "h")
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError):
            load_checkpoint(path)
