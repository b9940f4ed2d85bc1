"""Rotor / non-rotor classification of a single pixel's power spectrum.

A pixel is a rotor pixel when its spectrum is not flat (flatness at most
``tau_sf``) and some candidate fundamental ``omega`` carries a harmonic comb
whose mean peak power stands at least ``tau_comb`` times above the median
power of the bins outside the comb.

Harmonic window ``m`` of candidate ``omega`` spans bins
``[m*omega - delta_k, m*omega + delta_k]``. A window is in band when its
upper edge is at most ``K - 1``; its lower edge is clipped at bin 1 because
the DC bin never takes part in the analysis.
"""

from __future__ import annotations

import json
import threading
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Mapping

import numpy as np

from rotorfp import _kernels
from rotorfp.errors import ContractViolation, ValidationError
from rotorfp.spectral import PowerSpectrum

_INT_FIELDS = ("M", "delta_k", "h_min", "n_min", "A_min", "K", "omega_min")


@dataclass(frozen=True)
class DetectorParams:
    tau_sf: float = 0.89
    tau_comb: float = 1.5
    M: int = 4
    delta_k: int = 3
    h_min: int = 4
    n_min: int = 6
    A_min: int = 147
    alpha: float = 19.05
    K: int = 512
    omega_min: int = 2

    def __post_init__(self):
        for name in _INT_FIELDS:
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v:
                raise ValidationError(f"{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        for name in ("tau_sf", "tau_comb", "alpha"):
            object.__setattr__(self, name, float(getattr(self, name)))
        problems = []
        if not 0.0 < self.tau_sf <= 1.0:
            problems.append("tau_sf must lie in (0, 1]")
        if self.tau_comb < 1.0:
            problems.append("tau_comb must be >= 1")
        if not self.M >= self.h_min >= 2:
            problems.append("need M >= h_min >= 2")
        if self.delta_k < 0:
            problems.append("delta_k must be >= 0")
        if self.n_min < 2:
            problems.append("n_min must be >= 2")
        if self.A_min < 1:
            problems.append("A_min must be >= 1")
        if self.alpha <= 0:
            problems.append("alpha must be > 0")
        if self.K < 2:
            problems.append("K must be >= 2")
        if not 1 <= self.omega_min < self.K:
            problems.append("need 1 <= omega_min < K")
        if problems:
            raise ValidationError("; ".join(problems))

    # -- serialisation -------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DetectorParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "DetectorParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def with_overrides(self, assignments) -> "DetectorParams":
        """Apply ``key=value`` strings, e.g. from repeated ``--set`` options."""
        changes = {}
        names = {f.name for f in fields(self)}
        for item in assignments:
            key, sep, value = item.partition("=")
            key = key.strip()
            if not sep or key not in names:
                raise ValidationError(f"bad override {item!r}")
            try:
                changes[key] = int(value) if key in _INT_FIELDS else float(value)
            except ValueError:
                raise ValidationError(f"bad value in override {item!r}") from None
        return replace(self, **changes)


@dataclass(frozen=True)
class PixelVerdict:
    is_rotor: bool
    omega: int | None
    f_hz: float | None
    snr: float
    sf: float


def _power(P) -> np.ndarray:
    arr = P.P if isinstance(P, PowerSpectrum) else P
    return np.ascontiguousarray(arr, dtype=np.float64)


def harmonic_windows(omega: int, params: DetectorParams) -> tuple[list[tuple[int, int]], int]:
    """Inclusive bin ranges of the in-band harmonic windows and their count."""
    K = params.K
    if not 1 <= omega < K:
        raise ContractViolation(f"omega must lie in [1, {K - 1}]")
    windows = []
    for m in range(1, params.M + 1):
        hi = m * omega + params.delta_k
        if hi > K - 1:
            break
        windows.append((max(1, m * omega - params.delta_k), hi))
    return windows, len(windows)


def comb_score(P, omega: int, params: DetectorParams) -> float | None:
    """Mean of the per-window maxima; ``None`` when too few harmonics are in band."""
    P = _power(P)
    windows, mv = harmonic_windows(omega, params)
    if mv < params.h_min:
        return None
    total = 0.0
    for lo, hi in windows:
        total += float(P[lo:hi + 1].max())
    return total / mv


def median_baseline(P, windows) -> float | None:
    """Median power of bins 1..K-1 outside ``windows``; ``None`` if nothing is left."""
    P = _power(P)
    keep = np.ones(P.shape[0], dtype=bool)
    keep[0] = False
    for lo, hi in windows:
        keep[lo:hi + 1] = False
    if not keep.any():
        return None
    return float(np.median(P[keep]))


def rotor_snr(P, omega: int, params: DetectorParams) -> float | None:
    P = _power(P)
    N = comb_score(P, omega, params)
    if N is None:
        return None
    windows, _ = harmonic_windows(omega, params)
    base = median_baseline(P, windows)
    if base is None:
        return None
    eps_b = float(_kernels.band_floor(P, P.shape[0]))
    return N / max(base, eps_b)


class _Scratch:
    """Reusable work buffers for repeated single-pixel classification."""

    def __init__(self, K: int):
        self.K = K
        self.smax = np.empty(K)
        self.mark = np.zeros(K, dtype=np.int64)
        self.pos = np.empty(K, dtype=np.int64)
        self.band = np.empty(K)
        self.rm = np.zeros(K, dtype=np.int64)
        self.order = np.empty(K, dtype=np.int64)
        self.score = np.empty(K)


_local = threading.local()


def _get_scratch(K: int) -> _Scratch:
    cache = getattr(_local, "scratch", None)
    if cache is None:
        cache = _local.scratch = {}
    s = cache.get(K)
    if s is None:
        s = cache[K] = _Scratch(K)
    return s


def classify_pixel(P, params: DetectorParams = DetectorParams()) -> PixelVerdict:
    """Flatness gate followed by the comb sweep over ``omega_min..K-1``.

    Ties in SNR go to the smallest ``omega``.
    """
    bin_hz = P.bin_hz if isinstance(P, PowerSpectrum) else None
    arr = _power(P)
    if arr.shape[0] != params.K:
        raise ContractViolation(f"spectrum has {arr.shape[0]} bins, params expect K={params.K}")
    s = _get_scratch(params.K)
    is_rotor, omega, snr, sf = _kernels.classify_into(
        arr, params.K, params.tau_sf, params.tau_comb, params.M, params.delta_k,
        params.h_min, params.omega_min, s.smax, s.mark, s.pos, s.band, s.rm, s.order, s.score)
    if not is_rotor:
        return PixelVerdict(False, None, None, float(snr), float(sf))
    f_hz = omega * bin_hz if bin_hz is not None else None
    return PixelVerdict(True, int(omega), f_hz, float(snr), float(sf))
