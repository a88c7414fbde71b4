import io as stdio
import math

import numpy as np
import pytest

from glth import io, nn
from glth.dictionary import ActiveSet
from glth.pruning import RunRecord


def _records():
    return [
        RunRecord(0, 100, 0.0, 0.9, 0.85, 1.25),
        RunRecord(1, 80, 0.2, 0.875, 0.8, 0.1 + 0.2),
        RunRecord(2, 64, 0.36, 0.7, 0.65, float("nan")),
    ]


class TestCheckpoint:
    def test_round_trip_is_lossless(self, tmp_path):
        spec = nn.mlp((2, 2, 3), hidden=(5,), classes=4)
        w = nn.init_params(spec, 11)
        io.write_checkpoint(tmp_path / "w0.ckpt", w)
        back = io.read_checkpoint(tmp_path / "w0.ckpt")
        np.testing.assert_array_equal(back.values, w.values)
        assert back.layout == w.layout

    def test_file_size_matches_layout(self, tmp_path):
        spec = nn.mlp((1, 1, 4), hidden=(3,), classes=2)
        w = nn.init_params(spec, 0)
        io.write_checkpoint(tmp_path / "w.ckpt", w)
        raw = (tmp_path / "w.ckpt").read_bytes()
        assert raw[:8] == io.MAGIC
        assert raw.endswith(w.values.astype("<f4").tobytes())

    def test_rejects_values_float32_cannot_hold(self, tmp_path):
        spec = nn.mlp((1, 1, 4), hidden=(3,), classes=2)
        w = nn.init_params(spec, 0)
        w = nn.ParamVector(w.values + 1e-12, w.layout)
        with pytest.raises(ValueError, match="float32"):
            io.write_checkpoint(tmp_path / "w.ckpt", w)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.ckpt").write_bytes(b"NOTACKPT" + bytes(40))
        with pytest.raises(ValueError, match="magic"):
            io.read_checkpoint(tmp_path / "x.ckpt")

    def test_truncated(self, tmp_path):
        spec = nn.mlp((1, 1, 4), hidden=(3,), classes=2)
        io.write_checkpoint(tmp_path / "w.ckpt", nn.init_params(spec, 0))
        raw = (tmp_path / "w.ckpt").read_bytes()
        (tmp_path / "w.ckpt").write_bytes(raw[:-4])
        with pytest.raises(ValueError, match="float32 values"):
            io.read_checkpoint(tmp_path / "w.ckpt")


class TestRecordsCsv:
    def test_schema(self):
        buf = stdio.StringIO()
        io.write_records(buf, _records())
        lines = buf.getvalue().splitlines()
        assert lines[0] == "# glth-records v1"
        assert lines[1] == "round,active_count,compression_ratio,train_acc,test_acc,residual"
        assert lines[3].split(",")[-1] == repr(0.1 + 0.2)
        assert lines[4].split(",")[-1] == "nan"

    def test_round_trip_exact(self, tmp_path):
        io.write_records(tmp_path / "r.csv", _records())
        back = io.read_records(tmp_path / "r.csv")
        for a, b in zip(back, _records()):
            assert a.round == b.round and a.active_count == b.active_count
            assert a.compression_ratio == b.compression_ratio
            assert a.test_accuracy == b.test_accuracy
            assert a.sparsify_residual == b.sparsify_residual or (
                math.isnan(a.sparsify_residual) and math.isnan(b.sparsify_residual))

    def test_missing_version_line(self, tmp_path):
        (tmp_path / "r.csv").write_text("round,active_count\n")
        with pytest.raises(ValueError, match="row 1"):
            io.read_records(tmp_path / "r.csv")

    def test_bad_row_is_named(self, tmp_path):
        io.write_records(tmp_path / "r.csv", _records())
        text = (tmp_path / "r.csv").read_text().splitlines()
        text[3] = text[3].replace("80", "eighty", 1)
        (tmp_path / "r.csv").write_text("\n".join(text) + "\n")
        with pytest.raises(ValueError, match="row 4"):
            io.read_records(tmp_path / "r.csv")

    def test_short_row_is_named(self, tmp_path):
        io.write_records(tmp_path / "r.csv", _records())
        with open(tmp_path / "r.csv", "a") as fh:
            fh.write("3,50,0.5\n")
        with pytest.raises(ValueError, match="row 6: expected 6 fields"):
            io.read_records(tmp_path / "r.csv")


def test_active_set_file_round_trip(tmp_path):
    act = ActiveSet(10, [7, 0, 3])
    io.write_active_set(tmp_path / "a.txt", act)
    assert (tmp_path / "a.txt").read_text() == "dim=10\n0\n3\n7\n"
    assert io.read_active_set(tmp_path / "a.txt") == act
