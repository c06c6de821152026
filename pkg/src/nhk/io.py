"""Lossless file formats for rasters, counts and metric reports.

Float rasters use a small binary container::

    b"F32M" | version:u8 | channels:u32le | height:u32le | width:u32le | payload

The payload is channel-major, row-major little-endian float32, so the header
is 17 bytes and a file holds exactly ``17 + 4*C*H*W`` bytes.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .metrics import MetricsReport
from .raster import NUCLEUS_CLASSES, HoverField, as_class_image, as_label_image, as_rgb_image

MAGIC = b"F32M"
VERSION = 1
_HEADER = struct.Struct("<4sBIII")
MAX_PNG_ID = 65535
COUNT_HEADER = ["image", *NUCLEUS_CLASSES]
REPORT_CSV_HEADER = ["method", "mPQ_plus", "R2"]


class FormatError(ValueError):
    """A file is malformed or holds values its format does not allow."""


# PNG rasters

def write_label_png(path, m) -> None:
    m = as_label_image(m)
    if m.size and m.max() > MAX_PNG_ID:
        raise FormatError(f"instance id {int(m.max())} exceeds the 16-bit PNG maximum {MAX_PNG_ID}")
    Image.fromarray(m.astype(np.uint16)).save(path, format="PNG")


def _open_png(path) -> Image.Image:
    try:
        im = Image.open(path)
        im.load()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise FormatError(f"{path}: cannot parse PNG ({exc})") from exc
    if im.format != "PNG":
        raise FormatError(f"{path}: not a PNG file")
    return im


def read_label_png(path) -> np.ndarray:
    im = _open_png(path)
    if im.mode not in ("I;16", "I", "L"):
        raise FormatError(f"{path}: expected grayscale label PNG, got mode {im.mode}")
    return np.asarray(im).astype(np.int32)


def write_class_png(path, c) -> None:
    Image.fromarray(as_class_image(c)).save(path, format="PNG")


def read_class_png(path) -> np.ndarray:
    im = _open_png(path)
    if im.mode != "L":
        raise FormatError(f"{path}: expected 8-bit grayscale class PNG, got mode {im.mode}")
    try:
        return as_class_image(np.asarray(im))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_rgb_png(path, img) -> None:
    Image.fromarray(as_rgb_image(img)).save(path, format="PNG")


def read_rgb_png(path) -> np.ndarray:
    im = _open_png(path)
    if im.mode != "RGB":
        raise FormatError(f"{path}: expected RGB PNG, got mode {im.mode}")
    return np.asarray(im).copy()


# float maps

def encode_float_map(a) -> bytes:
    a = np.asarray(a)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"float map must be (C, H, W), got {a.shape}")
    data = a.astype("<f4")
    if not np.all(np.isfinite(data)):
        raise FormatError("float map values must be finite")
    return _HEADER.pack(MAGIC, VERSION, *data.shape) + data.tobytes(order="C")


def decode_float_map(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, c, h, w = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    expected = 4 * c * h * w
    payload = blob[_HEADER.size:]
    if len(payload) < expected:
        raise FormatError("truncated payload")
    if len(payload) > expected:
        raise FormatError("trailing bytes after payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(c, h, w)
    if not np.all(np.isfinite(data)):
        raise FormatError("float map contains NaN or Inf")
    return data.astype(np.float32)


def write_float_map(path, a) -> None:
    Path(path).write_bytes(encode_float_map(a))


def read_float_map(path) -> np.ndarray:
    try:
        return decode_float_map(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_hover(path, hv: HoverField) -> None:
    write_float_map(path, hv.stack())


def read_hover(path) -> HoverField:
    a = read_float_map(path)
    if a.shape[0] != 2:
        raise FormatError(f"{path}: hover file needs 2 channels, has {a.shape[0]}")
    return HoverField(a[0], a[1])


def write_probabilities(path, p) -> None:
    """Store a channel-last ``(H, W, C)`` stack."""
    p = np.asarray(p)
    if p.ndim != 3:
        raise ValueError(f"probability stack must be (H, W, C), got {p.shape}")
    write_float_map(path, np.moveaxis(p, -1, 0))


def read_probabilities(path) -> np.ndarray:
    return np.moveaxis(read_float_map(path), 0, -1)


# tables

def write_instance_classes(path, classes: dict[int, int], sizes: dict[int, int] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["instance", "class", "pixels"])
        for i in sorted(classes):
            writer.writerow([i, classes[i], "" if sizes is None else sizes.get(i, "")])


def read_instance_classes(path) -> dict[int, int]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"instance", "class"} <= set(reader.fieldnames):
            raise FormatError(f"{path}: header must contain instance,class")
        out = {}
        for row in reader:
            try:
                i, k = int(row["instance"]), int(row["class"])
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{path}: bad row {row}") from exc
            if i <= 0 or not 1 <= k <= len(NUCLEUS_CLASSES):
                raise FormatError(f"{path}: invalid instance/class {i},{k}")
            out[i] = k
    return out


def write_counts(path, names: list[str], counts) -> None:
    counts = np.asarray(counts)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COUNT_HEADER)
        for name, row in zip(names, counts):
            writer.writerow([name, *(int(x) for x in row)])


def read_counts(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != COUNT_HEADER:
            raise FormatError(f"{path}: expected header {','.join(COUNT_HEADER)}")
        names, rows = [], []
        for row in reader:
            if len(row) != len(COUNT_HEADER):
                raise FormatError(f"{path}: row has {len(row)} fields")
            try:
                values = [int(x) for x in row[1:]]
            except ValueError as exc:
                raise FormatError(f"{path}: non-integer count in {row}") from exc
            if min(values) < 0:
                raise FormatError(f"{path}: negative count in {row}")
            names.append(row[0])
            rows.append(values)
    return names, np.array(rows, dtype=np.int64).reshape(-1, len(NUCLEUS_CLASSES))


# reports

def _fmt(x) -> str:
    return "" if x is None else f"{x:.5f}"


def report_csv(report: MetricsReport, method: str = "ours") -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_CSV_HEADER)
    writer.writerow([method, _fmt(report.mpq_plus), _fmt(report.r2_mean)])
    return buf.getvalue()


def write_report(json_path, report: MetricsReport, method: str = "ours") -> Path:
    """Write the JSON report and a one-row summary CSV next to it; returns the CSV path."""
    json_path = Path(json_path)
    json_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    csv_path = json_path.with_suffix(".csv")
    csv_path.write_text(report_csv(report, method))
    return csv_path


def read_report(json_path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(json_path).read_text()))
