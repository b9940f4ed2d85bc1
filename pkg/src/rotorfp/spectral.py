"""Per-pixel non-uniform DFT, power spectrum and spectral flatness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rotorfp import _kernels
from rotorfp.errors import ContractViolation

DEFAULT_K = 512


@dataclass(frozen=True)
class ComplexSpectrum:
    re: np.ndarray
    im: np.ndarray

    @property
    def K(self) -> int:
        return self.re.shape[0]

    def as_complex(self) -> np.ndarray:
        return self.re + 1j * self.im


@dataclass(frozen=True)
class PowerSpectrum:
    """``P[k]`` is the power at ``k`` cycles per window, i.e. ``k * bin_hz`` Hz."""

    P: np.ndarray
    bin_hz: float = 1e6 / 33_333

    @property
    def K(self) -> int:
        return self.P.shape[0]

    def freqs(self) -> np.ndarray:
        return np.arange(self.K) * self.bin_hz


def bin_hz_for(t_len_us: int) -> float:
    return 1e6 / t_len_us


def _check_inputs(polarities, phases, K):
    pol = np.ascontiguousarray(polarities, dtype=np.float64)
    ph = np.ascontiguousarray(phases, dtype=np.float64)
    if pol.ndim != 1 or pol.shape != ph.shape:
        raise ContractViolation("polarities and phases must be 1-D and equal length")
    if pol.size == 0:
        raise ContractViolation("NDFT needs at least one event")
    if K < 2:
        raise ContractViolation("K must be >= 2")
    return pol, ph


def ndft(polarities, phases, K: int = DEFAULT_K) -> ComplexSpectrum:
    """Direct non-uniform DFT, ``F_k = sum_j p_j exp(i k t_j)``, k = 0..K-1."""
    pol, ph = _check_inputs(polarities, phases, K)
    re = np.empty(K)
    im = np.empty(K)
    _kernels.ndft_into(pol, ph, K, re, im, np.empty(_kernels.SCRATCH), np.empty(_kernels.SCRATCH))
    return ComplexSpectrum(re, im)


def ndft_direct(polarities, phases, K: int = DEFAULT_K) -> np.ndarray:
    """Reference sum with one independently evaluated exponential per (k, event) pair.

    No recurrences or tables, so it shares no rounding behaviour with ``ndft``.
    """
    pol, ph = _check_inputs(polarities, phases, K)
    k = np.arange(K, dtype=np.float64)[:, None]
    return np.exp(1j * (k * ph[None, :])) @ pol


def power_spectrum(F: ComplexSpectrum, bin_hz: float = 1e6 / 33_333) -> PowerSpectrum:
    P = np.empty(F.K)
    _kernels.power_into(F.re, F.im, F.K, P)
    return PowerSpectrum(P, bin_hz)


def spectral_flatness(P) -> float:
    """Flatness of bins 1..K-1 (DC excluded) with a relative epsilon floor.

    Returns a value in (0, 1]; 1 for a perfectly flat spectrum, near 0 for a
    single tone.
    """
    arr = np.ascontiguousarray(P.P if isinstance(P, PowerSpectrum) else P, dtype=np.float64)
    if arr.shape[0] < 2:
        raise ContractViolation("K must be >= 2")
    return float(_kernels.flatness(arr, arr.shape[0], _kernels.band_floor(arr, arr.shape[0])))
