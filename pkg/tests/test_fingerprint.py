import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from rotorfp.errors import ContractViolation, ValidationError
from rotorfp.fingerprint import (DetectorParams, classify_pixel, comb_score, harmonic_windows,
                                 median_baseline, rotor_snr)
from rotorfp.spectral import PowerSpectrum, spectral_flatness

DEFAULT = DetectorParams()


def comb(K=512, bins=(5, 10, 15, 20), height=10.0):
    P = np.ones(K)
    P[list(bins)] = height
    return P


def brute_force(P, params):
    """Exhaustive sweep straight from the definitions, no shared code."""
    K = len(P)
    eps = 1e-12 * max(1.0, float(np.max(P)))
    scored = []
    for w in range(params.omega_min, K):
        wins = []
        for m in range(1, params.M + 1):
            if m * w + params.delta_k > K - 1:
                break
            wins.append(range(max(1, m * w - params.delta_k), m * w + params.delta_k + 1))
        if len(wins) < params.h_min:
            continue
        N = sum(max(P[k] for k in r) for r in wins) / len(wins)
        covered = {k for r in wins for k in r}
        rest = [P[k] for k in range(1, K) if k not in covered]
        if not rest:
            continue
        scored.append((w, N / max(float(np.median(rest)), eps)))
    if not scored:
        return -math.inf, None
    # near-equal SNRs are ties and go to the smallest candidate
    top = max(snr for _, snr in scored)
    return next((snr, w) for w, snr in scored if snr >= top * (1 - 1e-9))


# ---------------------------------------------------------------- parameters

def test_defaults_are_table_values():
    p = DEFAULT
    assert (p.tau_sf, p.tau_comb, p.M, p.delta_k, p.h_min, p.n_min, p.A_min, p.alpha) == \
        (0.89, 1.5, 4, 3, 4, 6, 147, 19.05)
    assert (p.K, p.omega_min) == (512, 2)


@pytest.mark.parametrize("bad", [
    {"tau_sf": 0.0}, {"tau_sf": 1.1}, {"tau_comb": 0.5}, {"M": 3}, {"h_min": 1, "M": 4},
    {"delta_k": -1}, {"n_min": 1}, {"A_min": 0}, {"alpha": 0.0}, {"omega_min": 512},
    {"M": 4.5},
])
def test_invalid_params(bad):
    with pytest.raises(ValidationError):
        replace(DEFAULT, **bad)


def test_params_json_and_overrides(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(DEFAULT.to_json())
    assert DetectorParams.load(path) == DEFAULT
    assert set(json.loads(DEFAULT.to_json())) == {
        "tau_sf", "tau_comb", "M", "delta_k", "h_min", "n_min", "A_min", "alpha", "K", "omega_min"}
    p = DEFAULT.with_overrides(["tau_sf=0.5", "tau_comb=6", "M=5"])
    assert (p.tau_sf, p.tau_comb, p.M) == (0.5, 6.0, 5)
    with pytest.raises(ValidationError):
        DEFAULT.with_overrides(["bogus=1"])
    with pytest.raises(ValidationError):
        DEFAULT.with_overrides(["M=four"])
    with pytest.raises(ValidationError):
        DetectorParams.from_dict({"tau": 1})


# ---------------------------------------------------------------- windows and scores

def test_harmonic_windows_in_band():
    p = replace(DEFAULT, delta_k=0)
    assert harmonic_windows(5, p) == ([(5, 5), (10, 10), (15, 15), (20, 20)], 4)


def test_harmonic_windows_edge_of_band():
    wins, mv = harmonic_windows(200, DEFAULT)
    assert wins == [(197, 203), (397, 403)] and mv == 2
    _, mv = harmonic_windows(300, DEFAULT)
    assert mv == 1 < DEFAULT.h_min


def test_harmonic_windows_bad_omega():
    with pytest.raises(ContractViolation):
        harmonic_windows(0, DEFAULT)


def test_comb_score_examples():
    P = comb()
    assert comb_score(P, 5, replace(DEFAULT, delta_k=0)) == 10.0
    assert comb_score(P, 5, replace(DEFAULT, delta_k=1)) == 10.0
    assert comb_score(np.full(512, 3.5), 17, DEFAULT) == 3.5
    assert comb_score(P, 300, DEFAULT) is None


def test_median_baseline_examples():
    P = np.array([0.0, 1, 2, 3, 10, 3, 2, 1])
    assert median_baseline(P, [(4, 4)]) == 2.0
    assert median_baseline(np.full(8, 7.0), [(2, 3)]) == 7.0
    assert median_baseline(np.array([0.0, 5, 9]), [(2, 2)]) == 5.0
    assert median_baseline(np.array([0.0, 5, 9]), [(1, 2)]) is None


def test_rotor_snr_examples():
    p = replace(DEFAULT, delta_k=0)
    assert rotor_snr(comb(), 5, p) == pytest.approx(10.0)
    assert rotor_snr(np.full(512, 2.0), 7, p) == pytest.approx(1.0)
    assert rotor_snr(np.zeros(512), 7, p) == 0.0


# ---------------------------------------------------------------- classification

def test_flat_spectrum_rejected():
    P = np.ones(512)
    assert spectral_flatness(P) == pytest.approx(1.0)
    v = classify_pixel(P, DEFAULT)
    assert not v.is_rotor and v.omega is None and math.isnan(v.snr)


def test_comb_spectrum_detected():
    # four 10x peaks over a unit floor are too few to pull flatness under 0.89
    P = comb()
    assert spectral_flatness(P) > DEFAULT.tau_sf
    assert not classify_pixel(P, DEFAULT).is_rotor
    p = replace(DEFAULT, delta_k=0, tau_sf=1.0)
    v = classify_pixel(PowerSpectrum(P, 30.0), p)
    assert v.is_rotor and v.omega == 5 and v.snr == pytest.approx(10.0)
    assert v.f_hz == pytest.approx(150.0)


def test_threshold_is_inclusive():
    P = comb()
    snr, _ = brute_force(P, replace(DEFAULT, tau_sf=1.0))
    assert classify_pixel(P, replace(DEFAULT, tau_sf=1.0, tau_comb=snr)).is_rotor
    assert not classify_pixel(P, replace(DEFAULT, tau_sf=1.0, tau_comb=snr * (1 + 1e-12))).is_rotor


def test_smallest_omega_wins_ties():
    # a constant spectrum scores SNR 1 at every candidate
    v = classify_pixel(np.full(64, 4.0), replace(DEFAULT, K=64, tau_sf=1.0, tau_comb=1.0))
    assert v.is_rotor and v.omega == DEFAULT.omega_min


def test_wrong_length_spectrum():
    with pytest.raises(ContractViolation):
        classify_pixel(np.ones(100), DEFAULT)


spectra = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s))


def random_spectrum(rng, K):
    kind = rng.integers(4)
    if kind == 0:
        P = rng.exponential(1.0, K)
    elif kind == 1:
        P = rng.exponential(1.0, K)
        w = int(rng.integers(2, K // 4))
        for m in range(1, 9):
            if m * w < K:
                P[m * w] += rng.uniform(2, 40)
    elif kind == 2:
        P = rng.integers(0, 4, K).astype(float)  # many exact ties
    else:
        P = np.ones(K)
        P[rng.integers(1, K, 6)] = 50.0
    return P


param_strategy = st.builds(
    lambda M, h, dk, om: DetectorParams(tau_sf=1.0, tau_comb=1.0, M=M, h_min=min(h, M),
                                        delta_k=dk, omega_min=om, K=96),
    st.integers(2, 10), st.integers(2, 10), st.integers(0, 4), st.integers(1, 20))


@settings(max_examples=300, deadline=None)
@given(spectra, param_strategy)
def test_sweep_matches_brute_force(rng, params):
    P = random_spectrum(rng, params.K)
    snr, w = brute_force(P, params)
    v = classify_pixel(P, params)
    if w is None:
        assert not v.is_rotor and math.isnan(v.snr)
    elif snr >= params.tau_comb:
        assert v.is_rotor and v.omega == w and v.snr == snr
    else:
        assert not v.is_rotor and v.snr == snr


@settings(max_examples=100, deadline=None)
@given(spectra, st.floats(1e-3, 1e3))
def test_decision_scale_invariant(rng, c):
    P = random_spectrum(rng, 512) + 0.01
    p = replace(DEFAULT, tau_sf=0.95)
    a, b = classify_pixel(P, p), classify_pixel(c * P, p)
    assert a.is_rotor == b.is_rotor and a.omega == b.omega


@settings(max_examples=100, deadline=None)
@given(spectra, st.floats(1.0, 20.0), st.floats(1.0, 20.0), st.floats(0.3, 1.0), st.floats(0.3, 1.0))
def test_thresholds_monotone(rng, c1, c2, s1, s2):
    P = random_spectrum(rng, 512)
    lo_c, hi_c = sorted((c1, c2))
    hi_s, lo_s = sorted((s1, s2), reverse=True)
    strict = classify_pixel(P, replace(DEFAULT, tau_comb=hi_c, tau_sf=lo_s))
    loose = classify_pixel(P, replace(DEFAULT, tau_comb=lo_c, tau_sf=hi_s))
    assert not strict.is_rotor or loose.is_rotor


@settings(max_examples=30, deadline=None)
@given(spectra)
def test_repeatable(rng):
    P = random_spectrum(rng, 512)
    a, b = classify_pixel(P, DEFAULT), classify_pixel(P.copy(), DEFAULT)
    assert (a.is_rotor, a.omega, a.sf) == (b.is_rotor, b.omega, b.sf)
    assert a.snr == b.snr or (math.isnan(a.snr) and math.isnan(b.snr))


@settings(max_examples=200, deadline=None)
@given(st.integers(3, 30), st.integers(3, 30))
def test_second_comb_barely_moves_snr(w1, w2):
    p = replace(DEFAULT, delta_k=0)
    b1 = {m * w1 for m in range(1, 5)}
    b2 = {m * w2 for m in range(1, 5)}
    assume(not b1 & b2)
    assume(max(b1 | b2) <= p.K - 1)
    one = comb(bins=sorted(b1))
    both = comb(bins=sorted(b1 | b2))
    assert rotor_snr(both, w1, p) >= 0.8 * rotor_snr(one, w1, p)
