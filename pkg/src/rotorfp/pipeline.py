"""Per-window detection: events to pixel spectra to rotor mask to boxes."""

from __future__ import annotations

import re
import time
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numba
import numpy as np

from rotorfp import _kernels
from rotorfp.errors import ContractViolation, RotorFPError, ValidationError
from rotorfp.events import (DEFAULT_WINDOW_US, EVENT_DTYPE, EventWindow, SensorGeometry, group_csr,
                            window_events)
from rotorfp.fingerprint import DetectorParams
from rotorfp.segmentation import Box, segment_pixels
from rotorfp.spectral import bin_hz_for

BACKGROUND = 128
OVERLAY = (255, 0, 0)
_STEP = 32  # gray levels per net event in rendered frames


@dataclass
class Detection:
    """Result of one window.

    ``rotor_x``, ``rotor_y`` and ``rotor_omega`` list the rotor pixels
    before box merging, in row-major order. ``freq_map`` is the same data
    as a ``{(x, y): f_hz}`` mapping.
    """

    window_index: int
    boxes: list[Box]
    latency_ms: float
    rotor_x: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    rotor_y: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    rotor_omega: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    bin_hz: float = 1e6 / DEFAULT_WINDOW_US

    @cached_property
    def freq_map(self) -> dict[tuple[int, int], float]:
        return {(int(x), int(y)): float(w) * self.bin_hz
                for x, y, w in zip(self.rotor_x, self.rotor_y, self.rotor_omega)}

    def mask(self, geometry: SensorGeometry) -> np.ndarray:
        m = np.zeros((geometry.height, geometry.width), dtype=bool)
        m[self.rotor_y, self.rotor_x] = True
        return m


@dataclass(frozen=True)
class PixelVerdicts:
    """Classification of every pixel that passed the event-count gate."""

    x: np.ndarray
    y: np.ndarray
    is_rotor: np.ndarray
    omega: np.ndarray
    snr: np.ndarray
    sf: np.ndarray


def _n_chunks(n_pixels: int) -> int:
    # a few chunks per thread evens out pixels with very different event counts
    return max(1, min(n_pixels, 4 * numba.get_num_threads()))


def classify_window(window: EventWindow, params: DetectorParams) -> PixelVerdicts:
    """Spectrum and verdict for every pixel holding at least ``n_min`` events."""
    x, y, offsets, pol, phases = group_csr(window, params.n_min)
    n = x.shape[0]
    is_rotor = np.zeros(n, dtype=np.bool_)
    omega = np.full(n, -1, dtype=np.int64)
    snr = np.full(n, np.nan)
    sf = np.full(n, np.nan)
    if n:
        with warnings.catch_warnings():
            # numba reports an old TBB once, then falls back to another threading layer
            warnings.filterwarnings("ignore", message=".*TBB.*")
            _kernels.detect_pixels(offsets, pol, phases, params.K, params.tau_sf,
                                   params.tau_comb, params.M, params.delta_k, params.h_min,
                                   params.omega_min, _n_chunks(n), is_rotor, omega, snr, sf)
    return PixelVerdicts(x, y, is_rotor, omega, snr, sf)


def detect_window(window: EventWindow, geometry: SensorGeometry,
                  params: DetectorParams = DetectorParams()) -> Detection:
    """Detect rotors in one window.

    ``latency_ms`` covers grouping, spectra, classification and
    segmentation, measured with a monotonic clock.
    """
    t0 = time.perf_counter()
    v = classify_window(window, params)
    rx, ry, rw = v.x[v.is_rotor], v.y[v.is_rotor], v.omega[v.is_rotor]
    if rx.size and (rx.max() >= geometry.width or ry.max() >= geometry.height):
        raise ValidationError("event outside sensor geometry")
    boxes = segment_pixels(rx, ry, params.A_min, params.alpha)
    latency_ms = (time.perf_counter() - t0) * 1e3
    return Detection(window.index, boxes, latency_ms, rx, ry, rw, bin_hz_for(window.t_len))


def _empty_window(index: int, t_len: int) -> EventWindow:
    return EventWindow(index, index * t_len, t_len, np.empty(0, dtype=EVENT_DTYPE))


def iter_windows(events: np.ndarray, t_len: int = DEFAULT_WINDOW_US,
                 t_end: int | None = None) -> Iterable[EventWindow]:
    """Every window from 0 through the last one, empty ones included."""
    windows = window_events(events, t_len, t_end)
    last = windows[-1].index if windows else -1
    if t_end is not None and t_end > 0:
        last = max(last, (t_end - 1) // t_len)
    by_index = {w.index: w for w in windows}
    for i in range(last + 1):
        w = by_index.get(i)
        yield w if w is not None else _empty_window(i, t_len)


def detect_stream(stream, geometry: SensorGeometry, params: DetectorParams = DetectorParams(),
                  t_len: int = DEFAULT_WINDOW_US, t_end: int | None = None):
    """Run :func:`detect_window` over a stream, in window order.

    ``stream`` is either a time-ordered event array or an iterable of
    :class:`EventWindow`. Returns ``(detections, latency_stats)``; the
    stats are ``None`` for a stream without windows.
    """
    from rotorfp.evaluation import latency_summary

    windows = iter_windows(stream, t_len, t_end) if isinstance(stream, np.ndarray) else stream
    detections = []
    for w in windows:
        try:
            detections.append(detect_window(w, geometry, params))
        except RotorFPError as exc:
            raise type(exc)(f"window {w.index}: {exc}") from exc
    stats = latency_summary([d.latency_ms for d in detections]) if detections else None
    return detections, stats


def render_frame(window: EventWindow, detection: Detection | None,
                 geometry: SensorGeometry) -> np.ndarray:
    """RGB frame (height, width, 3) of net event polarity with boxes outlined."""
    acc = np.zeros((geometry.height, geometry.width), dtype=np.int64)
    ev = window.events
    if ev.size:
        np.add.at(acc, (ev["y"].astype(np.int64), ev["x"].astype(np.int64)),
                  ev["p"].astype(np.int64))
    gray = np.clip(BACKGROUND + _STEP * acc, 0, 255).astype(np.uint8)
    img = np.repeat(gray[:, :, None], 3, axis=2)
    for b in (detection.boxes if detection is not None else ()):
        x0, x1 = max(b.x_min, 0), min(b.x_max, geometry.width - 1)
        y0, y1 = max(b.y_min, 0), min(b.y_max, geometry.height - 1)
        if x0 > x1 or y0 > y1:
            continue
        img[y0, x0:x1 + 1] = OVERLAY
        img[y1, x0:x1 + 1] = OVERLAY
        img[y0:y1 + 1, x0] = OVERLAY
        img[y0:y1 + 1, x1] = OVERLAY
    return img


def write_ppm(path, img: np.ndarray) -> None:
    """Binary PPM (P6), 8 bits per channel."""
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ContractViolation("expected a (height, width, 3) uint8 image")
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+255\s", data)
    if m is None:
        raise ValidationError(f"{path}: not an 8-bit binary PPM")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=m.end()).reshape(h, w, 3)
