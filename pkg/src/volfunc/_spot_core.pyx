# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled backend for the sliding-window estimator kernels.

Mirrors the contract of ``_spot_numpy`` (see that module for the full
docstrings): ``bar_hat_series`` computes the paired pre-averaged vector
and noise-correction matrix series with direct C loops, and
``cir_jump_path`` runs the square-root-diffusion Euler recurrence.

The arithmetic is ordered exactly as in the numpy backend's scalar
fallback so that paths agree bitwise; the series sums differ from the
FFT-based numpy results only at float roundoff.
"""

from libc.math cimport sqrt

import numpy as np

cimport numpy as cnp

cnp.import_array()


def bar_hat_series(
    const double[:, ::1] D,
    const double[::1] weights,
    const double[::1] dw2,
    double inv_sqrt_psi,
    double half_inv_psi,
):
    cdef Py_ssize_t n1 = D.shape[0]
    cdef Py_ssize_t d = D.shape[1]
    cdef Py_ssize_t l = dw2.shape[0]
    cdef Py_ssize_t m = n1 - l + 1
    if m < 1:
        raise ValueError(f"increment count {n1} too small for window {l}")
    if weights.shape[0] != l - 1:
        raise ValueError("weights must have length one less than dw2")
    bars_arr = np.zeros((m, d))
    hats_arr = np.zeros((m, d, d))
    cdef double[:, ::1] bars = bars_arr
    cdef double[:, :, ::1] hats = hats_arr
    cdef Py_ssize_t j, a, r, s
    cdef double wa, acc
    with nogil:
        for j in range(m):
            for r in range(d):
                acc = 0.0
                for a in range(l - 1):
                    acc += weights[a] * D[j + a, r]
                bars[j, r] = inv_sqrt_psi * acc
            for r in range(d):
                for s in range(r + 1):
                    acc = 0.0
                    for a in range(l):
                        acc += dw2[a] * D[j + a, r] * D[j + a, s]
                    acc *= half_inv_psi
                    hats[j, r, s] = acc
                    if s != r:
                        hats[j, s, r] = acc
    return bars_arr, hats_arr


def cir_jump_path(
    double c0,
    double mean_reversion,
    double level,
    double vol_of_vol,
    double dt,
    const double[::1] dB,
    const double[::1] jump_mult,
):
    cdef Py_ssize_t steps = dB.shape[0]
    if jump_mult.shape[0] != steps:
        raise ValueError("dB and jump_mult must have equal length")
    out_arr = np.empty(steps + 1)
    cdef double[::1] out = out_arr
    cdef double cur = c0
    cdef double drift_a = mean_reversion * level * dt
    cdef double drift_b = mean_reversion * dt
    cdef double root, nxt, jump
    cdef Py_ssize_t i
    out[0] = cur
    with nogil:
        for i in range(steps):
            root = sqrt(cur) if cur > 0.0 else 0.0
            nxt = cur + drift_a - drift_b * cur + vol_of_vol * root * dB[i]
            jump = jump_mult[i]
            if jump != 0.0:
                root = sqrt(nxt) if nxt > 0.0 else 0.0
                nxt = nxt + root * jump
            if nxt < 0.0:
                nxt = 0.0
            out[i + 1] = nxt
            cur = nxt
    return out_arr
