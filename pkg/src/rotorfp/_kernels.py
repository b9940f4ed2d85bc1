"""Compiled per-pixel kernels.

Everything on the per-window hot path lives here so the public wrappers in
``spectral`` and ``fingerprint`` and the batched pipeline run the very same
machine code; results never depend on which entry point was used.
"""

from __future__ import annotations

import warnings

import numpy as np

with warnings.catch_warnings():
    # numba probes for TBB at import time and warns when the system copy is old;
    # the OpenMP or workqueue layer is used instead either way
    warnings.filterwarnings("ignore", message=".*TBB.*")
    import numba as nb

# inner table length of the two-level twiddle scheme, exp(i k t) = A[k // TABLE] * B[k % TABLE]
TABLE = 32
LANES = 4
SCRATCH = LANES * TABLE
# bins per partial product in the geometric mean; 16 factors of >= 1e-12 stay above 1e-192
_LOG_BLOCK = 16
_EPS_REL = 1e-12
# SNRs this close (relative) count as tied, so rounding in sums never decides the argmax
TIE_REL = 1e-9


@nb.njit(cache=True, fastmath=True)
def ndft_into(pol, phases, K, out_re, out_im, tab_re, tab_im):
    """F_k = sum_j pol_j * exp(i k phase_j) for k < K, written into out_re / out_im.

    Events go four at a time so the table recurrences run as independent
    chains and every output update folds in four terms. ``tab_re`` and
    ``tab_im`` are scratch of length ``LANES * TABLE``.
    """
    for k in range(K):
        out_re[k] = 0.0
        out_im[k] = 0.0
    n = pol.shape[0]
    nblk = (K + TABLE - 1) // TABLE
    T1 = TABLE
    T2 = 2 * TABLE
    T3 = 3 * TABLE
    for j in range(0, n, LANES):
        # missing lanes of the last group get zero weight
        w0 = pol[j]
        t0 = phases[j]
        w1 = pol[j + 1] if j + 1 < n else 0.0
        t1 = phases[j + 1] if j + 1 < n else 0.0
        w2 = pol[j + 2] if j + 2 < n else 0.0
        t2 = phases[j + 2] if j + 2 < n else 0.0
        w3 = pol[j + 3] if j + 3 < n else 0.0
        t3 = phases[j + 3] if j + 3 < n else 0.0
        c0 = np.cos(t0)
        d0 = np.sin(t0)
        c1 = np.cos(t1)
        d1 = np.sin(t1)
        c2 = np.cos(t2)
        d2 = np.sin(t2)
        c3 = np.cos(t3)
        d3 = np.sin(t3)
        x0r = 1.0
        x0i = 0.0
        x1r = 1.0
        x1i = 0.0
        x2r = 1.0
        x2i = 0.0
        x3r = 1.0
        x3i = 0.0
        for b in range(TABLE):
            tab_re[b] = x0r
            tab_im[b] = x0i
            tab_re[T1 + b] = x1r
            tab_im[T1 + b] = x1i
            tab_re[T2 + b] = x2r
            tab_im[T2 + b] = x2i
            tab_re[T3 + b] = x3r
            tab_im[T3 + b] = x3i
            a = x0r * c0 - x0i * d0
            x0i = x0r * d0 + x0i * c0
            x0r = a
            a = x1r * c1 - x1i * d1
            x1i = x1r * d1 + x1i * c1
            x1r = a
            a = x2r * c2 - x2i * d2
            x2i = x2r * d2 + x2i * c2
            x2r = a
            a = x3r * c3 - x3i * d3
            x3i = x3r * d3 + x3i * c3
            x3r = a
        # the recurrence ends on the coarse step exp(i TABLE t); weights ride on it
        s0r = x0r
        s0i = x0i
        s1r = x1r
        s1i = x1i
        s2r = x2r
        s2i = x2i
        s3r = x3r
        s3i = x3i
        a0r = w0
        a0i = 0.0
        a1r = w1
        a1i = 0.0
        a2r = w2
        a2i = 0.0
        a3r = w3
        a3i = 0.0
        for blk in range(nblk):
            base = blk * TABLE
            m = min(TABLE, K - base)
            for b in range(m):
                out_re[base + b] += (a0r * tab_re[b] - a0i * tab_im[b]
                                     + a1r * tab_re[T1 + b] - a1i * tab_im[T1 + b]
                                     + a2r * tab_re[T2 + b] - a2i * tab_im[T2 + b]
                                     + a3r * tab_re[T3 + b] - a3i * tab_im[T3 + b])
                out_im[base + b] += (a0r * tab_im[b] + a0i * tab_re[b]
                                     + a1r * tab_im[T1 + b] + a1i * tab_re[T1 + b]
                                     + a2r * tab_im[T2 + b] + a2i * tab_re[T2 + b]
                                     + a3r * tab_im[T3 + b] + a3i * tab_re[T3 + b])
            a = a0r * s0r - a0i * s0i
            a0i = a0r * s0i + a0i * s0r
            a0r = a
            a = a1r * s1r - a1i * s1i
            a1i = a1r * s1i + a1i * s1r
            a1r = a
            a = a2r * s2r - a2i * s2i
            a2i = a2r * s2i + a2i * s2r
            a2r = a
            a = a3r * s3r - a3i * s3i
            a3i = a3r * s3i + a3i * s3r
            a3r = a


@nb.njit(cache=True)
def power_into(re, im, K, out):
    for k in range(K):
        out[k] = re[k] * re[k] + im[k] * im[k]


@nb.njit(cache=True, fastmath=True)
def band_floor(P, K):
    """1e-12 * max(1, max_k P_k), DC included."""
    m = 1.0
    for k in range(K):
        if P[k] > m:
            m = P[k]
    return _EPS_REL * m


@nb.njit(cache=True, fastmath=True)
def flatness(P, K, eps):
    """Geometric over arithmetic mean of P_k + eps on bins 1..K-1."""
    top = 0.0
    total = 0.0
    for k in range(1, K):
        v = P[k] + eps
        total += v
        if v > top:
            top = v
    n = K - 1
    scale = 1.0 / top
    logsum = 0.0
    # four independent product chains, each renormalised by a log every block
    step = 4 * _LOG_BLOCK
    k = 1
    while k + step <= K:
        p0 = 1.0
        p1 = 1.0
        p2 = 1.0
        p3 = 1.0
        for b in range(k, k + step, 4):
            p0 *= (P[b] + eps) * scale
            p1 *= (P[b + 1] + eps) * scale
            p2 *= (P[b + 2] + eps) * scale
            p3 *= (P[b + 3] + eps) * scale
        logsum += np.log(p0) + np.log(p1) + np.log(p2) + np.log(p3)
        k += step
    while k < K:
        prod = 1.0
        end = min(K, k + _LOG_BLOCK)
        for b in range(k, end):
            prod *= (P[b] + eps) * scale
        logsum += np.log(prod)
        k = end
    gmean = np.exp(logsum / n) * top
    return gmean / (total / n)


@nb.njit(cache=True)
def n_valid(omega, M, dk, K):
    m = 0
    while m < M and (m + 1) * omega + dk <= K - 1:
        m += 1
    return m


@nb.njit(cache=True)
def _partition(a, lo, hi):
    mid = (lo + hi) // 2
    # median of three ends up in a[hi] as the pivot
    if a[mid] < a[lo]:
        a[lo], a[mid] = a[mid], a[lo]
    if a[hi] < a[lo]:
        a[lo], a[hi] = a[hi], a[lo]
    if a[mid] < a[hi]:
        a[mid], a[hi] = a[hi], a[mid]
    pivot = a[hi]
    s = lo
    # branchless Lomuto step: a[lo..s-1] < pivot <= a[s..i-1]
    for i in range(lo, hi):
        x = a[i]
        a[i] = a[s]
        a[s] = x
        s += x < pivot
    a[s], a[hi] = a[hi], a[s]
    return s


@nb.njit(cache=True)
def _select(a, lo, hi, r):
    """Quickselect: reorder a[lo..hi] in place so a[r] is its rank-r value."""
    while lo < hi:
        s = _partition(a, lo, hi)
        if s == r:
            return a[r]
        if r < s:
            hi = s - 1
        else:
            lo = s + 1
    return a[r]


@nb.njit(cache=True)
def _select2(a, lo, hi, r1, r2):
    """Like ``_select`` for two ranks r1 <= r2 at once; returns (a[r1], a[r2])."""
    while lo < hi:
        s = _partition(a, lo, hi)
        if r2 < s:
            hi = s - 1
        elif r1 > s:
            lo = s + 1
        else:
            if r1 < s:
                _select(a, lo, s - 1, r1)
            if r2 > s:
                _select(a, s + 1, hi, r2)
            break
    return a[r1], a[r2]


@nb.njit(cache=True, fastmath=True)
def window_max(P, K, dk, out):
    """out[c] = max(P[max(1, c - dk) .. c + dk]) for 1 <= c < K - dk."""
    width = 2 * dk + 1
    # after each doubling step out[k] = max(P[k .. k + span - 1])
    if width >= 2:
        for k in range(K - 1):
            a = P[k]
            b = P[k + 1]
            out[k] = a if a > b else b
        out[K - 1] = P[K - 1]
        span = 2
    else:
        for k in range(K):
            out[k] = P[k]
        span = 1
    while 2 * span <= width:
        for k in range(K - span):
            a = out[k]
            b = out[k + span]
            out[k] = a if a > b else b
        span *= 2
    # two overlapping spans cover any width
    rest = width - span
    for k in range(K - width + 1):
        a = out[k]
        b = out[k + rest]
        out[k] = a if a > b else b
    # shift so the window is centred, clipping the low edge at bin 1
    for c in range(K - dk - 1, 0, -1):
        lo = c - dk
        if lo >= 1:
            out[c] = out[lo]
        else:
            v = P[1]
            for k in range(2, c + dk + 1):
                if P[k] > v:
                    v = P[k]
            out[c] = v


@nb.njit(cache=True)
def _sort_band(band, slot, nb_):
    # insertion sort by value; equal values keep bin order
    for i in range(1, nb_):
        v = band[i]
        k = slot[i]
        j = i - 1
        while j >= 0 and band[j] > v:
            band[j + 1] = band[j]
            slot[j + 1] = slot[j]
            j -= 1
        band[j + 1] = v
        slot[j + 1] = k


@nb.njit(cache=True)
def comb_sweep(P, K, eps_b, M, dk, h_min, omega_min, smax, mark, pos, band, rm, order, score):
    """Best median-normalised comb SNR over candidate fundamentals.

    Returns ``(snr, omega)``; ``omega`` is -1 when no candidate has enough
    in-band harmonics. The winner is the smallest omega whose SNR is within
    ``TIE_REL`` of the maximum. Work arrays are length-K scratch buffers
    supplied by the caller.

    Candidates are scored exactly in order of decreasing comb mean. The
    complement median can never fall below the order statistic ``lo_r``
    of bins 1..K-1, so once ``N / P(lo_r)`` drops below the tie threshold
    of the best SNR found, no remaining candidate can win.
    """
    n = K - 1
    window_max(P, K, dk, smax)

    # ranks a complement median can reach: removing h <= R bins moves the
    # median of the remaining n - h bins to a rank in [lo_r, hi_r]
    R = M * (2 * dk + 1)
    if R > n - 1:
        R = n - 1
    lo_r = (n - R - 1) // 2
    if lo_r < 0:
        lo_r = 0
    hi_r = n // 2 + R
    if hi_r > n - 1:
        hi_r = n - 1
    for q in range(n):
        score[q] = P[q + 1]
    v_lo, v_hi = _select2(score, 0, n - 1, lo_r, hi_r)

    # band: every bin valued in [v_lo, v_hi], sorted; pos maps bin -> slot
    below = 0
    nb_ = 0
    for k in range(1, K):
        v = P[k]
        if v < v_lo:
            below += 1
            pos[k] = -2
        elif v > v_hi:
            pos[k] = -3
        else:
            pos[k] = 0
            band[nb_] = v
            order[nb_] = k
            nb_ += 1
    if nb_ <= 64:
        _sort_band(band, order, nb_)
    else:
        perm = np.argsort(band[:nb_], kind="mergesort")
        sorted_vals = band[:nb_][perm]
        sorted_bins = order[:nb_][perm]
        band[:nb_] = sorted_vals
        order[:nb_] = sorted_bins
    for q in range(nb_):
        pos[order[q]] = q
        rm[q] = 0

    last = omega_min - 1
    for omega in range(omega_min, K):
        mv = n_valid(omega, M, dk, K)
        if mv < h_min:
            # n_valid only shrinks as omega grows
            break
        s = 0.0
        for m in range(1, mv + 1):
            s += smax[m * omega]
        score[omega] = s / mv
        last = omega

    # smax is no longer read; it now holds the SNR of every scored candidate
    for w in range(omega_min, last + 1):
        smax[w] = -1.0
    bound_den = v_lo if v_lo > eps_b else eps_b
    best = -1.0
    # bin 0 is never marked, so mark[0] carries the stamp between calls
    # and mark needs no reset
    stamp = mark[0]
    while True:
        omega = -1
        N = -1.0
        for w in range(omega_min, last + 1):
            if score[w] > N:
                N = score[w]
                omega = w
        if omega < 0 or N / bound_den < best * (1.0 - TIE_REL):
            break
        score[omega] = -1.0  # visited
        mv = n_valid(omega, M, dk, K)
        stamp += 1
        h = 0
        b = 0
        for m in range(1, mv + 1):
            lo = m * omega - dk
            if lo < 1:
                lo = 1
            for k in range(lo, m * omega + dk + 1):
                if mark[k] != stamp:
                    mark[k] = stamp
                    h += 1
                    code = pos[k]
                    if code == -2:
                        b += 1
                    elif code >= 0:
                        rm[code] = stamp
        nc = n - h
        if nc <= 0:
            continue
        ja = (nc - 1) // 2
        jb = nc // 2
        target = ja - (below - b)
        cnt = -1
        va = 0.0
        vb = 0.0
        found = 0
        for q in range(nb_):
            if rm[q] != stamp:
                cnt += 1
                if cnt == target:
                    va = band[q]
                    found = 1
                    if jb == ja:
                        vb = va
                        break
                elif cnt == target + 1:
                    vb = band[q]
                    break
        if found == 0:
            continue
        med = va if ja == jb else (va + vb) / 2.0
        den = med if med > eps_b else eps_b
        snr = N / den
        smax[omega] = snr
        if snr > best:
            best = snr
    mark[0] = stamp
    if best < 0.0:
        return -1.0, -1
    cut = best * (1.0 - TIE_REL)
    for w in range(omega_min, last + 1):
        if smax[w] >= cut:
            return smax[w], w
    return best, -1


@nb.njit(cache=True)
def classify_into(P, K, tau_sf, tau_comb, M, dk, h_min, omega_min,
                  smax, mark, pos, band, rm, order, score):
    """Returns (is_rotor, omega, snr, sf); snr is NaN when the comb never ran."""
    eps = band_floor(P, K)
    sf = flatness(P, K, eps)
    if sf > tau_sf:
        return False, -1, np.nan, sf
    snr, omega = comb_sweep(P, K, eps, M, dk, h_min, omega_min, smax, mark, pos, band, rm,
                            order, score)
    if omega < 0:
        return False, -1, np.nan, sf
    if snr >= tau_comb:
        return True, omega, snr, sf
    return False, -1, snr, sf


@nb.njit(cache=True)
def _detect_chunk(lo, hi, offsets, pol, phases, K, tau_sf, tau_comb, M, dk, h_min,
                  omega_min, is_rotor, omega, snr, sf):
    re = np.empty(K)
    im = np.empty(K)
    tre = np.empty(SCRATCH)
    tim = np.empty(SCRATCH)
    P = np.empty(K)
    smax = np.empty(K)
    mark = np.zeros(K, dtype=np.int64)
    pos = np.empty(K, dtype=np.int64)
    band = np.empty(K)
    rm = np.zeros(K, dtype=np.int64)
    order = np.empty(K, dtype=np.int64)
    score = np.empty(K)
    for i in range(lo, hi):
        a = offsets[i]
        b = offsets[i + 1]
        ndft_into(pol[a:b], phases[a:b], K, re, im, tre, tim)
        power_into(re, im, K, P)
        r, w, s, f = classify_into(P, K, tau_sf, tau_comb, M, dk, h_min, omega_min,
                                   smax, mark, pos, band, rm, order, score)
        is_rotor[i] = r
        omega[i] = w
        snr[i] = s
        sf[i] = f


@nb.njit(cache=True, parallel=True)
def detect_pixels(offsets, pol, phases, K, tau_sf, tau_comb, M, dk, h_min, omega_min,
                  n_chunks, is_rotor, omega, snr, sf):
    n = offsets.shape[0] - 1
    step = (n + n_chunks - 1) // n_chunks
    for c in nb.prange(n_chunks):
        lo = c * step
        hi = min(n, lo + step)
        if lo < hi:
            _detect_chunk(lo, hi, offsets, pol, phases, K, tau_sf, tau_comb, M, dk,
                          h_min, omega_min, is_rotor, omega, snr, sf)
