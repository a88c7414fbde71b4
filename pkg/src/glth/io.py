"""On-disk formats: parameter checkpoints, run-record CSV, active-set files."""

from __future__ import annotations

import csv
import io
import math
import struct
from pathlib import Path

import numpy as np

from .dictionary import ActiveSet
from .nn import ParamVector, Segment
from .pruning import RunRecord

__all__ = [
    "MAGIC",
    "CSV_VERSION_LINE",
    "CSV_COLUMNS",
    "write_checkpoint",
    "read_checkpoint",
    "write_records",
    "read_records",
    "write_active_set",
    "read_active_set",
]

MAGIC = b"GLTCKPT1"
_KINDS = {"weight": 0, "bias": 1}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}

CSV_VERSION_LINE = "# glth-records v1"
CSV_COLUMNS = ("round", "active_count", "compression_ratio", "train_acc", "test_acc", "residual")


def write_checkpoint(path, w: ParamVector):
    """Little-endian: magic, u64 d, u32 segment count, segment table, d float32 values."""
    values = np.asarray(w.values)
    if not np.array_equal(values.astype(np.float32).astype(values.dtype), values):
        raise ValueError("parameters are not exactly representable as float32")
    out = [MAGIC, struct.pack("<QI", values.size, len(w.layout))]
    for seg in w.layout:
        out.append(struct.pack("<IBQI", seg.layer, _KINDS[seg.kind], seg.offset, len(seg.shape)))
        out.append(struct.pack(f"<{len(seg.shape)}Q", *seg.shape))
    out.append(values.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(out))


def read_checkpoint(path):
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path}: bad magic {buf[:8]!r}")
    d, nseg = struct.unpack_from("<QI", buf, 8)
    pos = 20
    layout = []
    for _ in range(nseg):
        layer, kind, offset, ndim = struct.unpack_from("<IBQI", buf, pos)
        pos += struct.calcsize("<IBQI")
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        layout.append(Segment(layer, _KIND_NAMES[kind], offset, tuple(shape)))
    if len(buf) - pos != 4 * d:
        raise ValueError(f"{path}: expected {d} float32 values, found {(len(buf) - pos) / 4}")
    values = np.frombuffer(buf, dtype="<f4", count=d, offset=pos).astype(np.float64)
    total = layout[-1].stop if layout else 0
    if total != d:
        raise ValueError(f"{path}: layout covers {total} entries but d={d}")
    return ParamVector(values, tuple(layout))


def _fmt(x):
    return "nan" if math.isnan(x) else repr(float(x))


def write_records(path_or_file, records):
    """Write records with a version comment line and a fixed header."""
    buf = io.StringIO()
    buf.write(CSV_VERSION_LINE + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow([
            r.round, r.active_count, _fmt(r.compression_ratio),
            _fmt(r.train_accuracy), _fmt(r.test_accuracy), _fmt(r.sparsify_residual),
        ])
    if hasattr(path_or_file, "write"):
        path_or_file.write(buf.getvalue())
    else:
        Path(path_or_file).write_text(buf.getvalue())


def read_records(path):
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CSV_VERSION_LINE:
        raise ValueError(f"{path}: row 1: missing '{CSV_VERSION_LINE}' line")
    rows = list(csv.reader(lines[1:]))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"{path}: row 2: header must be {','.join(CSV_COLUMNS)}")
    records = []
    for lineno, row in enumerate(rows[1:], start=3):
        try:
            if len(row) != len(CSV_COLUMNS):
                raise ValueError(f"expected {len(CSV_COLUMNS)} fields, got {len(row)}")
            records.append(RunRecord(int(row[0]), int(row[1]), float(row[2]), float(row[3]),
                                     float(row[4]), float(row[5])))
        except ValueError as exc:
            raise ValueError(f"{path}: row {lineno}: {exc}") from None
    return records


def write_active_set(path, active: ActiveSet):
    Path(path).write_text(active.to_text())


def read_active_set(path):
    return ActiveSet.from_text(Path(path).read_text())
