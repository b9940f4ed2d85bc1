"""Synthetic event scenes built from the blade occlusion pulse-train model.

A rotor pixel sees the background blocked for a fraction ``duty`` of every
blade-pass period. The blade arriving darkens the pixel (one ``-1`` event)
and the blade leaving brightens it again (one ``+1`` event). Each pixel of
a rotor disc is phase-shifted by its blade sweep angle, so neighbouring
pixels fire at staggered times.

Noise is spatially and temporally uniform with random polarity. Clutter is
a set of dark bars of irregular width sliding across the sensor, giving
each pixel a few edge events with no periodic structure.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from rotorfp.errors import ValidationError
from rotorfp.events import DEFAULT_WINDOW_US, EVENT_DTYPE, SensorGeometry
from rotorfp.segmentation import Box, enclosing


# ---------------------------------------------------------------- analytic model

def pulse_train_coefficients(duty: float, n: int) -> complex:
    """Fourier coefficient ``c_n = duty * sinc(n * duty) * exp(-i pi n duty)``.

    ``sinc`` is the normalised one, ``sin(pi x) / (pi x)`` with ``sinc(0) = 1``.
    """
    _check_duty(duty)
    return complex(duty * np.sinc(n * duty) * np.exp(-1j * math.pi * n * duty))


def harmonic_power(duty: float, n: int) -> float:
    """``|c_n|^2 = (sin(pi n duty) / (pi n))^2`` for harmonic ``n >= 1``."""
    _check_duty(duty)
    if n < 1:
        raise ValidationError("harmonic index must be >= 1")
    return (math.sin(math.pi * n * duty) / (math.pi * n)) ** 2


def _check_duty(duty):
    if not 0.0 < duty < 1.0:
        raise ValidationError(f"duty cycle must lie in (0, 1), got {duty}")


def gen_rotor_pixel_events(f_bpf: float, duty: float, phase_frac: float, t0: int, t1: int,
                           events_per_edge: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Edge events of one occluded pixel inside ``[t0, t1)``.

    Occlusion ``k`` starts at ``round((k + phase_frac) * T)`` and lasts
    ``round(duty * T)`` microseconds, with ``T = 1e6 / f_bpf``. Every edge
    emits ``events_per_edge`` events of the same polarity 1 us apart.
    Returns ``(t, p)`` with strictly increasing ``t``.
    """
    _check_duty(duty)
    if f_bpf <= 0:
        raise ValidationError("f_bpf must be positive")
    if not 0.0 <= phase_frac < 1.0:
        raise ValidationError("phase_frac must lie in [0, 1)")
    if events_per_edge < 1:
        raise ValidationError("events_per_edge must be >= 1")
    if t1 <= t0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int8)
    T = 1e6 / f_bpf
    hold = int(round(duty * T))
    if hold < events_per_edge or math.floor(T) - hold < events_per_edge:
        raise ValidationError("edges too close together for the requested events per edge")
    k0 = math.floor(t0 / T - phase_frac) - 1
    k1 = math.ceil(t1 / T - phase_frac) + 1
    on = np.rint((np.arange(k0, k1 + 1) + phase_frac) * T).astype(np.int64)
    off = on + hold
    burst = np.arange(events_per_edge, dtype=np.int64)
    t = np.stack([on[:, None] + burst, off[:, None] + burst], axis=1).ravel()
    p = np.repeat(np.array([-1, 1], dtype=np.int8), events_per_edge)
    p = np.tile(p, on.shape[0])
    keep = (t >= t0) & (t < t1)
    return t[keep], p[keep]


# ---------------------------------------------------------------- scene description

@dataclass(frozen=True)
class RotorSpec:
    """A spinning rotor seen face-on as a disc of pixels.

    Rotors sharing a ``group`` label belong to one airframe and get one
    ground-truth box enclosing all their discs.
    """

    center: tuple[float, float]
    radius: float
    f_bpf: float
    duty: float = 0.2
    blades: int = 2
    phase0: float = 0.0
    group: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if self.radius < 1:
            raise ValidationError("rotor radius must be >= 1")
        _check_duty(self.duty)
        if self.f_bpf <= 0:
            raise ValidationError("f_bpf must be positive")
        if self.blades < 1:
            raise ValidationError("blades must be >= 1")

    def pixels(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer pixels within ``radius`` of the center, row-major."""
        cx, cy = self.center
        r = self.radius
        xs = np.arange(math.ceil(cx - r), math.floor(cx + r) + 1)
        ys = np.arange(math.ceil(cy - r), math.floor(cy + r) + 1)
        gx, gy = np.meshgrid(xs, ys)
        inside = (gx - cx) ** 2 + (gy - cy) ** 2 <= r * r
        return gx[inside], gy[inside]

    def box(self) -> Box:
        x, y = self.pixels()
        return Box(int(x.min()), int(y.min()), int(x.max()), int(y.max()))

    def phase_fracs(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Blade sweep phase of each pixel as a fraction of a blade-pass period."""
        theta = np.arctan2(y - self.center[1], x - self.center[0])
        frac = np.mod(self.blades * (theta - self.phase0), 2 * math.pi) / (2 * math.pi)
        # mod can return exactly 1.0 after rounding
        return np.where(frac >= 1.0, 0.0, frac)


@dataclass(frozen=True)
class ClutterSpec:
    """Dark vertical bars sliding along +x at ``velocity`` px/s.

    ``n_bars`` bars with widths and gaps drawn uniformly from
    ``[1, extent]`` start left of ``x0``. Each pixel a bar edge crosses
    emits one event, ``-1`` for a leading edge and ``+1`` for a trailing one.
    """

    velocity: float
    extent: int = 8
    n_bars: int = 1
    x0: float = 0.0
    y_min: int = 0
    y_max: int | None = None

    def __post_init__(self):
        if self.velocity <= 0:
            raise ValidationError("clutter velocity must be positive")
        if self.extent < 1 or self.n_bars < 1:
            raise ValidationError("clutter extent and n_bars must be >= 1")


@dataclass(frozen=True)
class SceneSpec:
    geometry: SensorGeometry
    duration_us: int
    rotors: tuple[RotorSpec, ...] = ()
    noise_rate: float = 0.0
    clutter: ClutterSpec | None = None
    seed: int = 0
    events_per_edge: int = 1
    window_us: int = DEFAULT_WINDOW_US
    jitter_us: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "rotors", tuple(self.rotors))
        if self.duration_us < 1:
            raise ValidationError("duration_us must be >= 1")
        if self.noise_rate < 0:
            raise ValidationError("noise_rate must be >= 0")
        if self.window_us < 1:
            raise ValidationError("window_us must be >= 1")
        if self.events_per_edge < 1:
            raise ValidationError("events_per_edge must be >= 1")
        if self.jitter_us < 0:
            raise ValidationError("jitter_us must be >= 0")
        W, H = self.geometry.width, self.geometry.height
        for r in self.rotors:
            cx, cy = r.center
            if cx - r.radius < 0 or cy - r.radius < 0 or cx + r.radius > W - 1 or cy + r.radius > H - 1:
                raise ValidationError(f"rotor disc at {r.center} r={r.radius} leaves the {W}x{H} sensor")

    @property
    def n_windows(self) -> int:
        return -(-self.duration_us // self.window_us)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["rotors"] = [asdict(r) for r in self.rotors]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SceneSpec":
        data = dict(data)
        try:
            geo = data.pop("geometry")
            geometry = SensorGeometry.parse(geo) if isinstance(geo, str) else SensorGeometry(**geo)
            rotors = [RotorSpec(**r) for r in data.pop("rotors", [])]
            clutter = data.pop("clutter", None)
            clutter = ClutterSpec(**clutter) if clutter is not None else None
            return cls(geometry=geometry, rotors=rotors, clutter=clutter, **data)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"bad scene description: {exc}") from None

    @classmethod
    def load(cls, path) -> "SceneSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------- generation

def _rotor_events(spec: SceneSpec, rotor: RotorSpec):
    xs, ys = rotor.pixels()
    fracs = rotor.phase_fracs(xs, ys)
    parts_t, parts_x, parts_y, parts_p = [], [], [], []
    for x, y, frac in zip(xs.tolist(), ys.tolist(), fracs.tolist()):
        t, p = gen_rotor_pixel_events(rotor.f_bpf, rotor.duty, frac, 0, spec.duration_us,
                                      spec.events_per_edge)
        parts_t.append(t)
        parts_p.append(p)
        parts_x.append(np.full(t.shape[0], x, dtype=np.int64))
        parts_y.append(np.full(t.shape[0], y, dtype=np.int64))
    return parts_t, parts_x, parts_y, parts_p


def _noise_events(spec: SceneSpec, rng: np.random.Generator):
    g = spec.geometry
    lam = spec.noise_rate * g.n_pixels * spec.duration_us * 1e-6
    n = int(rng.poisson(lam)) if lam > 0 else 0
    t = rng.integers(0, spec.duration_us, n)
    x = rng.integers(0, g.width, n)
    y = rng.integers(0, g.height, n)
    p = rng.choice(np.array([-1, 1], dtype=np.int8), n)
    return t, x, y, p


def _clutter_events(spec: SceneSpec, rng: np.random.Generator):
    c = spec.clutter
    g = spec.geometry
    y_max = g.height - 1 if c.y_max is None else min(c.y_max, g.height - 1)
    rows = np.arange(max(c.y_min, 0), y_max + 1)
    # bar edges as offsets behind the front of the first bar
    sizes = rng.integers(1, c.extent + 1, 2 * c.n_bars - 1)
    lead = np.concatenate([[0], np.cumsum(sizes)])
    edges = c.x0 - lead.astype(np.float64)
    pol = np.tile(np.array([-1, 1], dtype=np.int8), c.n_bars)
    ts, xs, ps = [], [], []
    cols = np.arange(g.width, dtype=np.float64)
    for e0, p in zip(edges, pol):
        # edge at x = e0 + v t reaches column c at t = (c - e0) / v
        t = np.rint((cols - e0) / c.velocity * 1e6).astype(np.int64)
        ok = (t >= 0) & (t < spec.duration_us)
        ts.append(t[ok])
        xs.append(cols[ok].astype(np.int64))
        ps.append(np.full(int(ok.sum()), p, dtype=np.int8))
    t = np.concatenate(ts)
    x = np.concatenate(xs)
    p = np.concatenate(ps)
    n_rows = rows.shape[0]
    return (np.repeat(t, n_rows), np.repeat(x, n_rows), np.tile(rows, t.shape[0]),
            np.repeat(p, n_rows))


def gen_scene(spec: SceneSpec):
    """Render a scene to events plus per-window ground truth.

    Returns ``(geometry, events, truth)`` where ``events`` is a time-ordered
    ``EVENT_DTYPE`` array and ``truth`` lists ``(window_index, boxes)`` for
    every window of the recording. Output is a pure function of ``spec``.
    """
    rng = np.random.default_rng(spec.seed)
    ts, xs, ys, ps = [], [], [], []
    for rotor in spec.rotors:
        t, x, y, p = _rotor_events(spec, rotor)
        ts += t
        xs += x
        ys += y
        ps += p
    if spec.noise_rate > 0:
        t, x, y, p = _noise_events(spec, rng)
        ts.append(t), xs.append(x), ys.append(y), ps.append(p)
    if spec.clutter is not None:
        t, x, y, p = _clutter_events(spec, rng)
        ts.append(t), xs.append(x), ys.append(y), ps.append(p)

    if ts:
        t = np.concatenate(ts).astype(np.int64)
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        p = np.concatenate(ps).astype(np.int8)
    else:
        t = x = y = np.empty(0, dtype=np.int64)
        p = np.empty(0, dtype=np.int8)
    if spec.jitter_us > 0 and t.size:
        t = t + np.rint(rng.normal(0.0, spec.jitter_us, t.shape[0])).astype(np.int64)
        keep = (t >= 0) & (t < spec.duration_us)
        t, x, y, p = t[keep], x[keep], y[keep], p[keep]

    order = np.lexsort((x, y, t))
    events = np.empty(t.shape[0], dtype=EVENT_DTYPE)
    events["t"] = t[order]
    events["x"] = x[order]
    events["y"] = y[order]
    events["p"] = p[order]
    return spec.geometry, events, ground_truth(spec)


def ground_truth(spec: SceneSpec) -> list[tuple[int, list[Box]]]:
    """One box per rotor, or per rotor group, in every window."""
    named: dict[str, list[Box]] = {}
    boxes: list[Box] = []
    for r in spec.rotors:
        if r.group is None:
            boxes.append(r.box())
        else:
            named.setdefault(r.group, []).append(r.box())
    boxes += [enclosing(v) for v in named.values()]
    boxes.sort(key=lambda b: (b.y_min, b.x_min, b.y_max, b.x_max))
    return [(i, list(boxes)) for i in range(spec.n_windows)]
