"""Pure-numpy backend for the sliding-window estimator kernels.

Same contract as the compiled backend in ``_spot_core``:

* ``bar_hat_series`` turns the increment array into the paired series of
  pre-averaged vectors ("bars") and noise-correction matrices ("hats")
  at every window start where both exist,
* ``cir_jump_path`` runs the square-root-diffusion Euler recurrence with
  multiplicative jumps.

Here the window sums are FFT convolutions and the Euler recurrence is a
plain Python loop; the compiled backend replaces both with tight C
loops.  Results agree to float roundoff.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.signal import fftconvolve


def bar_hat_series(
    D: np.ndarray,
    weights: np.ndarray,
    dw2: np.ndarray,
    inv_sqrt_psi: float,
    half_inv_psi: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Paired bar/hat series over all feasible window starts.

    Parameters
    ----------
    D : ndarray, shape (n-1, d)
        Increment array.
    weights : ndarray, shape (l-1,)
        Kernel weights ``phi(h/l)`` for ``h = 1 .. l-1``.
    dw2 : ndarray, shape (l,)
        Squared weight differences ``(phi((h+1)/l) - phi(h/l))**2`` for
        ``h = 0 .. l-1`` with the zero-padding convention at both ends.
    inv_sqrt_psi, half_inv_psi : float
        Normalizers ``psi**(-1/2)`` and ``(2 psi)**(-1)``.

    Returns
    -------
    bars : ndarray, shape (m, d)
        ``bars[j] = inv_sqrt_psi * sum_a weights[a] * D[j + a]``.
    hats : ndarray, shape (m, d, d)
        ``hats[j] = half_inv_psi * sum_a dw2[a] * outer(D[j+a], D[j+a])``
    where ``m = (n-1) - l + 1`` is the count of positions where both the
    bar and the (one-longer) hat window fit.
    """
    D = np.ascontiguousarray(D, dtype=float)
    n1, d = D.shape
    l = int(dw2.shape[0])
    m = n1 - l + 1
    if m < 1:
        raise ValueError(f"increment count {n1} too small for window {l}")
    w_rev = np.ascontiguousarray(weights[::-1], dtype=float)[:, None]
    bars = fftconvolve(D, w_rev, mode="valid", axes=0)[:m]
    bars = inv_sqrt_psi * bars
    dw2_rev = np.ascontiguousarray(dw2[::-1], dtype=float)[:, None]
    hats = np.empty((m, d, d))
    for r in range(d):
        for s in range(r + 1):
            prod = (D[:, r] * D[:, s])[:, None]
            conv = fftconvolve(prod, dw2_rev, mode="valid", axes=0)[:, 0]
            hats[:, r, s] = half_inv_psi * conv
            if s != r:
                hats[:, s, r] = hats[:, r, s]
    return np.ascontiguousarray(bars), hats


def cir_jump_path(
    c0: float,
    mean_reversion: float,
    level: float,
    vol_of_vol: float,
    dt: float,
    dB: np.ndarray,
    jump_mult: np.ndarray,
) -> np.ndarray:
    """Euler path of a square-root diffusion with multiplicative jumps.

    Per step: diffusion update with full truncation (``sqrt(max(c,0))``),
    then a jump ``c += sqrt(max(c,0)) * jump_mult[i]`` using the
    post-diffusion value, then clipping at zero.

    Returns the path of length ``len(dB) + 1`` including the start value.
    """
    steps = int(dB.shape[0])
    if jump_mult.shape[0] != steps:
        raise ValueError("dB and jump_mult must have equal length")
    out = np.empty(steps + 1)
    cur = float(c0)
    out[0] = cur
    drift_a = mean_reversion * level * dt
    drift_b = mean_reversion * dt
    for i in range(steps):
        root = math.sqrt(cur) if cur > 0.0 else 0.0
        nxt = cur + drift_a - drift_b * cur + vol_of_vol * root * dB[i]
        jump = jump_mult[i]
        if jump != 0.0:
            root = math.sqrt(nxt) if nxt > 0.0 else 0.0
            nxt = nxt + root * jump
        if nxt < 0.0:
            nxt = 0.0
        out[i + 1] = nxt
        cur = nxt
    return out
