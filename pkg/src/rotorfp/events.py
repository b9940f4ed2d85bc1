"""Event data model, stream I/O, temporal windowing and per-pixel grouping.

Events live in numpy structured arrays with ``EVENT_DTYPE`` so that a
window of a hundred thousand events never turns into Python objects.
``Event`` is the scalar view used at API edges and in tests.

Two on-disk formats are supported:

* CSV, header ``t_us,x,y,p``; ``p`` in {-1, 0, 1} with 0 meaning negative.
* EVB, little-endian binary: magic ``EVB1``, u16 width, u16 height,
  u64 record count, then packed records ``{u64 t_us, u16 x, u16 y, i8 p}``.
"""

from __future__ import annotations

import io
import json
import math
import os
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from rotorfp.errors import ContractViolation, FormatError, ValidationError

DEFAULT_WINDOW_US = 33_333

EVENT_DTYPE = np.dtype([("t", "<i8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])

EVB_MAGIC = b"EVB1"
_EVB_HEADER = struct.Struct("<4sHHQ")
_EVB_RECORD = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")], align=False
)
CSV_HEADER = "t_us,x,y,p"

# pixel key used for ordering; x < 2**16 so y * 2**16 + x sorts like y * width + x
_ROW_STRIDE = 1 << 16


class Event(NamedTuple):
    x: int
    y: int
    p: int
    t: int


@dataclass(frozen=True)
class SensorGeometry:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"invalid sensor geometry {self.width}x{self.height}")
        if self.width > 0xFFFF or self.height > 0xFFFF:
            raise ValidationError("sensor geometry exceeds u16 coordinate range")

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    @classmethod
    def parse(cls, text: str) -> "SensorGeometry":
        """Parse ``"WIDTHxHEIGHT"``."""
        try:
            w, h = text.lower().split("x")
            return cls(int(w), int(h))
        except ValueError as exc:
            raise ValidationError(f"bad geometry {text!r}, expected WIDTHxHEIGHT") from exc


def make_events(t, x, y, p) -> np.ndarray:
    """Build an event array, mapping polarity encodings {0, 1} / {-1, 1} to {-1, +1}."""
    t = np.asarray(t, dtype=np.int64)
    n = t.shape[0]
    out = np.empty(n, dtype=EVENT_DTYPE)
    out["t"] = t
    out["x"] = np.asarray(x)
    out["y"] = np.asarray(y)
    p = np.asarray(p)
    if np.any((p != -1) & (p != 0) & (p != 1)):
        raise ValidationError("polarity must be one of -1, 0, 1")
    out["p"] = np.where(p > 0, 1, -1)
    return out


def events_from_list(events: Iterable[Event]) -> np.ndarray:
    events = list(events)
    if not events:
        return np.empty(0, dtype=EVENT_DTYPE)
    x, y, p, t = zip(*events)
    return make_events(t, x, y, p)


def iter_events(arr: np.ndarray) -> Iterator[Event]:
    for t, x, y, p in arr.tolist():
        yield Event(x, y, p, t)


def validate_events(events: np.ndarray, geometry: SensorGeometry) -> None:
    if events.size == 0:
        return
    if np.any(events["t"] < 0):
        raise ValidationError("negative timestamp")
    bad = (events["x"] >= geometry.width) | (events["y"] >= geometry.height)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        e = events[i]
        raise ValidationError(
            f"event {i} at ({e['x']}, {e['y']}) outside {geometry.width}x{geometry.height} sensor"
        )


def _order_timestamps(events: np.ndarray, slack_us: int) -> np.ndarray:
    if events.size < 2:
        return events
    t = events["t"]
    # largest backwards step relative to the running maximum
    back = np.maximum.accumulate(t) - t
    worst = int(back.max())
    if worst > slack_us:
        i = int(np.argmax(back))
        raise ValidationError(
            f"timestamp at record {i} goes back {worst} us (allowed slack {slack_us} us)"
        )
    if worst > 0:
        events = events[np.argsort(t, kind="stable")]
    return events


# ---------------------------------------------------------------- parsing

def _read_bytes(source) -> bytes:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return fh.read()
    return source.read()


def _parse_csv(data: bytes) -> np.ndarray:
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise FormatError("CSV input is not ASCII", exc.start) from exc
    ts, xs, ys, ps = [], [], [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        if lineno == 1 and line.replace(" ", "") == CSV_HEADER:
            continue
        if len(fields) != 4:
            raise FormatError(f"expected 4 fields, got {len(fields)}", line=lineno)
        try:
            t, x, y, p = (int(f) for f in fields)
        except ValueError:
            raise FormatError(f"non-integer field in {line!r}", line=lineno) from None
        if p not in (-1, 0, 1):
            raise FormatError(f"polarity {p} not in {{-1, 0, 1}}", line=lineno)
        if t < 0 or x < 0 or y < 0:
            raise FormatError("negative field", line=lineno)
        if x > 0xFFFF or y > 0xFFFF:
            raise FormatError("coordinate exceeds u16 range", line=lineno)
        ts.append(t)
        xs.append(x)
        ys.append(y)
        ps.append(p)
    return make_events(ts, xs, ys, ps)


def _parse_evb(data: bytes) -> tuple[SensorGeometry, np.ndarray]:
    if len(data) < _EVB_HEADER.size:
        raise FormatError("truncated EVB header", len(data))
    magic, width, height, count = _EVB_HEADER.unpack_from(data, 0)
    if magic != EVB_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {EVB_MAGIC!r}", 0)
    body = len(data) - _EVB_HEADER.size
    need = count * _EVB_RECORD.itemsize
    if body < need:
        whole = body // _EVB_RECORD.itemsize
        raise FormatError(
            f"truncated EVB body: header declares {count} records, found {whole}",
            _EVB_HEADER.size + whole * _EVB_RECORD.itemsize,
        )
    if body > need:
        raise FormatError("trailing bytes after EVB records", _EVB_HEADER.size + need)
    try:
        geometry = SensorGeometry(width, height)
    except ValidationError as exc:
        raise FormatError(str(exc), 4) from exc
    rec = np.frombuffer(data, dtype=_EVB_RECORD, count=count, offset=_EVB_HEADER.size)
    bad = (rec["p"] != 1) & (rec["p"] != -1)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        off = _EVB_HEADER.size + i * _EVB_RECORD.itemsize + 12
        raise FormatError(f"polarity {rec['p'][i]} not in {{-1, +1}}", off)
    if np.any(rec["t"] > np.iinfo(np.int64).max):
        raise FormatError("timestamp overflows int64")
    out = np.empty(count, dtype=EVENT_DTYPE)
    for name in ("t", "x", "y", "p"):
        out[name] = rec[name]
    return geometry, out


def parse_events(
    source,
    fmt: str,
    geometry: SensorGeometry | None = None,
    slack_us: int = 0,
) -> tuple[SensorGeometry, np.ndarray]:
    """Parse an event stream.

    Parameters
    ----------
    source : bytes, path or binary file object
    fmt : {"csv", "evb"}
    geometry : SensorGeometry
        Required for CSV; for EVB the header geometry is used.
    slack_us : int
        Largest tolerated backwards jump in timestamps. Out-of-order events
        within the slack are re-sorted, anything larger is rejected.

    Returns
    -------
    (SensorGeometry, ndarray of EVENT_DTYPE) sorted by non-decreasing ``t``.
    """
    data = _read_bytes(source)
    if fmt == "csv":
        if geometry is None:
            raise ContractViolation("CSV input needs an explicit sensor geometry")
        events = _parse_csv(data)
    elif fmt == "evb":
        geometry, events = _parse_evb(data)
    else:
        raise ContractViolation(f"unknown event format {fmt!r}")
    validate_events(events, geometry)
    return geometry, _order_timestamps(events, slack_us)


def serialize_events(events: np.ndarray, geometry: SensorGeometry, fmt: str) -> bytes:
    validate_events(events, geometry)
    if np.any((events["p"] != 1) & (events["p"] != -1)):
        raise ValidationError("polarity must be -1 or +1")
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for t, x, y, p in events.tolist():
            buf.write(f"{t},{x},{y},{p}\n")
        return buf.getvalue().encode("ascii")
    if fmt == "evb":
        rec = np.empty(events.shape[0], dtype=_EVB_RECORD)
        for name in ("t", "x", "y", "p"):
            rec[name] = events[name]
        header = _EVB_HEADER.pack(EVB_MAGIC, geometry.width, geometry.height, rec.shape[0])
        return header + rec.tobytes()
    raise ContractViolation(f"unknown event format {fmt!r}")


def guess_format(path) -> str:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".csv":
        return "csv"
    if ext == ".evb":
        return "evb"
    raise ContractViolation(f"cannot infer event format from {path!r}")


def read_events(path, fmt: str | None = None, geometry: SensorGeometry | None = None,
                slack_us: int = 0) -> tuple[SensorGeometry, np.ndarray]:
    return parse_events(path, fmt or guess_format(path), geometry, slack_us)


def write_events(path, events: np.ndarray, geometry: SensorGeometry,
                 fmt: str | None = None) -> None:
    data = serialize_events(events, geometry, fmt or guess_format(path))
    with open(path, "wb") as fh:
        fh.write(data)


# ---------------------------------------------------------------- windows

@dataclass
class EventWindow:
    """Events in ``[t_start, t_start + t_len)`` ordered by (pixel, t)."""

    index: int
    t_start: int
    t_len: int
    events: np.ndarray
    partial: bool = False

    def __len__(self) -> int:
        return self.events.shape[0]


@dataclass
class PixelGroup:
    pixel: tuple[int, int]
    polarities: np.ndarray
    phases: np.ndarray


def pixel_sort(events: np.ndarray) -> np.ndarray:
    """Stable sort of time-ordered events by pixel (row-major)."""
    key = events["y"].astype(np.int64) * _ROW_STRIDE + events["x"]
    return events[np.argsort(key, kind="stable")]


def window_events(events: np.ndarray, t_len: int = DEFAULT_WINDOW_US,
                  t_end: int | None = None) -> list[EventWindow]:
    """Split a time-ordered stream into absolute-time windows of ``t_len`` us.

    Window ``i`` covers ``[i * t_len, (i + 1) * t_len)``. Only windows holding
    at least one event are returned. The window containing the end of the
    recording (``t_end``, default one past the last event) is flagged
    ``partial`` when the recording stops before the window does.
    """
    if t_len < 1:
        raise ContractViolation("t_len must be >= 1 us")
    if events.size == 0:
        return []
    t = events["t"]
    if np.any(np.diff(t) < 0):
        raise ContractViolation("events must be sorted by timestamp")
    if t[0] < 0:
        raise ContractViolation("negative timestamp")
    if t_end is None:
        t_end = int(t[-1]) + 1
    widx = t // t_len
    starts = np.flatnonzero(np.r_[True, widx[1:] != widx[:-1]])
    stops = np.r_[starts[1:], t.shape[0]]
    windows = []
    for a, b in zip(starts.tolist(), stops.tolist()):
        i = int(widx[a])
        windows.append(EventWindow(
            index=i,
            t_start=i * t_len,
            t_len=t_len,
            events=pixel_sort(events[a:b]),
            partial=t_end < (i + 1) * t_len,
        ))
    return windows


def normalize_timestamps(t, t_start: int, t_len: int) -> np.ndarray:
    """Affine map of ``[t_start, t_start + t_len)`` onto ``[-pi, pi)``."""
    t = np.asarray(t, dtype=np.int64)
    rel = t - t_start
    if rel.size and (rel.min() < 0 or rel.max() >= t_len):
        raise ContractViolation("timestamp outside its window")
    return -math.pi + (2.0 * math.pi) * (rel.astype(np.float64) / t_len)


def group_csr(window: EventWindow, n_min: int):
    """Compressed per-pixel layout of a window.

    Returns ``(x, y, offsets, polarities, phases)`` where pixel ``i`` owns
    ``polarities[offsets[i]:offsets[i + 1]]``. Pixels with fewer than
    ``n_min`` events are dropped.
    """
    ev = window.events
    if ev.size == 0:
        empty_i = np.empty(0, dtype=np.int64)
        return empty_i, empty_i, np.zeros(1, dtype=np.int64), np.empty(0), np.empty(0)
    key = ev["y"].astype(np.int64) * _ROW_STRIDE + ev["x"]
    bounds = np.flatnonzero(np.r_[True, key[1:] != key[:-1], True])
    counts = np.diff(bounds)
    keep = counts >= n_min
    starts = bounds[:-1][keep]
    counts = counts[keep]
    if starts.size == 0:
        empty_i = np.empty(0, dtype=np.int64)
        return empty_i, empty_i, np.zeros(1, dtype=np.int64), np.empty(0), np.empty(0)
    # gather the surviving runs contiguously, touching only the needed columns
    offsets = np.zeros(starts.size + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    t_col = ev["t"]
    p_col = ev["p"]
    if offsets[-1] == ev.shape[0]:
        t_sel, p_sel = t_col, p_col
    else:
        idx = np.repeat(starts - offsets[:-1], counts) + np.arange(offsets[-1])
        t_sel, p_sel = t_col[idx], p_col[idx]
    phases = normalize_timestamps(t_sel, window.t_start, window.t_len)
    pol = p_sel.astype(np.float64)
    x = ev["x"][starts].astype(np.int64)
    y = ev["y"][starts].astype(np.int64)
    return x, y, offsets, pol, phases


def group_by_pixel(window: EventWindow, n_min: int) -> list[PixelGroup]:
    x, y, offsets, pol, phases = group_csr(window, n_min)
    return [
        PixelGroup((int(x[i]), int(y[i])), pol[offsets[i]:offsets[i + 1]].astype(np.int8),
                   phases[offsets[i]:offsets[i + 1]])
        for i in range(x.shape[0])
    ]


# ---------------------------------------------------------------- box JSON-lines

def write_boxes_jsonl(path_or_fh, frames: Sequence[tuple[int, Sequence]]) -> None:
    """Write ``(window_index, boxes)`` pairs, one JSON object per line."""
    lines = []
    for index, boxes in frames:
        lines.append(json.dumps({
            "window": int(index),
            "boxes": [
                {"x_min": b.x_min, "y_min": b.y_min, "x_max": b.x_max, "y_max": b.y_max}
                for b in boxes
            ],
        }))
    text = "\n".join(lines) + ("\n" if lines else "")
    if hasattr(path_or_fh, "write"):
        path_or_fh.write(text)
    else:
        with open(path_or_fh, "w") as fh:
            fh.write(text)


def read_boxes_jsonl(path_or_fh) -> dict[int, list]:
    """Read a box JSON-lines file into ``{window_index: [Box, ...]}``."""
    from rotorfp.segmentation import Box

    if hasattr(path_or_fh, "read"):
        text = path_or_fh.read()
    else:
        with open(path_or_fh) as fh:
            text = fh.read()
    frames: dict[int, list] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            boxes = [Box(int(b["x_min"]), int(b["y_min"]), int(b["x_max"]), int(b["y_max"]))
                     for b in obj["boxes"]]
            frames.setdefault(int(obj["window"]), []).extend(boxes)
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"bad box record: {exc}", line=lineno) from exc
    return frames
