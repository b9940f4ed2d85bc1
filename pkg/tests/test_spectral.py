import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rotorfp.errors import ContractViolation
from rotorfp.spectral import (ComplexSpectrum, PowerSpectrum, bin_hz_for, ndft, ndft_direct,
                              power_spectrum, spectral_flatness)


def loop_ndft(pol, ph, K):
    """Plain double loop, the textbook definition."""
    out = []
    for k in range(K):
        re = im = 0.0
        for p, t in zip(pol, ph):
            re += p * math.cos(k * t)
            im += p * math.sin(k * t)
        out.append(complex(re, im))
    return np.array(out)


def test_single_event_at_zero_phase():
    F = ndft([1], [0.0], 4)
    assert np.allclose(F.as_complex(), [1, 1, 1, 1], atol=1e-15)


def test_opposite_events_quarter_phases():
    P = power_spectrum(ndft([1, -1], [-math.pi / 2, math.pi / 2], 4)).P
    assert np.allclose(P, [0, 4, 0, 4], atol=1e-12)
    F = ndft([1, -1], [-math.pi / 2, math.pi / 2], 4).as_complex()
    assert np.allclose(F, -2j * np.sin(np.arange(4) * math.pi / 2), atol=1e-12)


def test_coherent_sum():
    P = power_spectrum(ndft([1, 1, 1], [math.pi / 2] * 3, 3)).P
    assert np.allclose(P, 9.0, rtol=1e-12)


def test_power_of_components():
    F = ComplexSpectrum(np.array([1.0, 0.0]), np.array([0.0, -2.0]))
    assert power_spectrum(F).P.tolist() == [1.0, 4.0]


def test_ndft_rejects_empty_and_mismatch():
    with pytest.raises(ContractViolation):
        ndft([], [], 8)
    with pytest.raises(ContractViolation):
        ndft([1, 1], [0.0], 8)
    with pytest.raises(ContractViolation):
        ndft([1], [0.0], 1)


def test_bin_width():
    assert bin_hz_for(33333) == pytest.approx(30.0003, abs=1e-4)
    spec = PowerSpectrum(np.ones(4), bin_hz_for(1000))
    assert spec.freqs().tolist() == [0.0, 1000.0, 2000.0, 3000.0]


def random_events(rng, M):
    pol = rng.choice([-1.0, 1.0], M)
    ph = np.sort(rng.uniform(-math.pi, math.pi, M))
    return pol, ph


@pytest.mark.parametrize("M,K", [(1, 2), (3, 5), (17, 64), (40, 512), (200, 1024), (131, 777)])
def test_matches_double_loop(M, K):
    rng = np.random.default_rng(M * 1000 + K)
    pol, ph = random_events(rng, M)
    ref = loop_ndft(pol, ph, K)
    got = ndft(pol, ph, K).as_complex()
    scale = max(1.0, np.abs(ref).max())
    assert np.abs(got - ref).max() <= 1e-9 * scale
    assert np.abs(ndft_direct(pol, ph, K) - ref).max() <= 1e-9 * scale


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 80), st.integers(1, 80), st.integers(2, 300), st.integers(0, 2**32 - 1))
def test_linearity(ma, mb, K, seed):
    rng = np.random.default_rng(seed)
    pa, ta = random_events(rng, ma)
    pb, tb = random_events(rng, mb)
    whole = ndft(np.r_[pa, pb], np.r_[ta, tb], K).as_complex()
    parts = ndft(pa, ta, K).as_complex() + ndft(pb, tb, K).as_complex()
    assert np.allclose(whole, parts, rtol=0, atol=1e-9 * (ma + mb))


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 200), st.integers(2, 64), st.integers(0, 2**32 - 1))
def test_dc_bin_is_real(M, K, seed):
    pol, ph = random_events(np.random.default_rng(seed), M)
    F = ndft(pol, ph, K)
    assert abs(F.im[0]) <= 1e-12 * M
    assert F.re[0] == pytest.approx(pol.sum())


# ---------------------------------------------------------------- flatness

def test_flatness_examples():
    assert spectral_flatness([99.0, 1, 1, 1, 1]) == pytest.approx(1.0, abs=1e-12)
    sf = spectral_flatness([0.0, 4, 1, 1, 1])
    assert sf == pytest.approx(4 ** 0.25 / 1.75, rel=1e-9)
    assert sf == pytest.approx(0.8081, abs=1e-4)
    assert spectral_flatness([0.0, 1, 0, 0, 0]) < 1e-6


def test_flatness_ignores_dc():
    # DC only enters through the epsilon floor, which it does not raise here
    a = spectral_flatness([0.0, 2, 3, 5])
    b = spectral_flatness([4.0, 2, 3, 5])
    assert a == b
    assert spectral_flatness([1e5, 2, 3, 5]) == pytest.approx(a, abs=1e-6)


def test_flatness_all_zero_is_one():
    assert spectral_flatness(np.zeros(8)) == pytest.approx(1.0)


@settings(max_examples=150)
@given(st.lists(st.floats(1.0, 1e6), min_size=2, max_size=128), st.floats(1e-3, 1e3))
def test_flatness_scale_invariant(P, c):
    P = np.array(P)
    sf = spectral_flatness(P)
    assert 0.0 < sf <= 1.0 + 1e-12
    assert abs(spectral_flatness(c * P) - sf) <= 1e-6


@settings(max_examples=150)
@given(st.lists(st.floats(0.0, 1e6), min_size=2, max_size=600))
def test_flatness_matches_formula(P):
    P = np.array(P)
    band = P[1:]
    eps = 1e-12 * max(1.0, P.max())
    ref = math.exp(np.mean(np.log(band + eps))) / np.mean(band + eps)
    assert spectral_flatness(P) == pytest.approx(ref, rel=1e-9, abs=1e-300)
