"""Windowed spot covariance estimation from noisy, regularly sampled paths.

This module turns raw observations into block-wise estimates of the
latent spot covariance matrix and of the observation-noise covariance:

* ``bar_increment`` — weighted moving average of increments over a short
  window ("bar"), which tames additive observation noise,
* ``hat_increment`` — matching quadratic form ("hat") whose expectation
  captures the noise contribution left in the bar's outer product,
* ``spot_cov`` — jump-truncated, noise-corrected local covariance over a
  block of consecutive windows,
* ``spot_noise`` — local noise covariance from raw squared increments,
* ``pilot_scale`` — coarse per-component variance level used to set
  truncation thresholds,
* ``psd_project`` — Frobenius projection onto the positive semidefinite
  cone,
* ``spot_series`` — the block-wise series of all of the above over a
  full sample,
* ``validate_tuning`` — window/threshold construction with admissibility
  checks on the rate exponents.

Scaling conventions
-------------------
With window length ``l_n``, weights ``w_h = phi(h/l_n)`` and
``psi_n = sum_h w_h**2``, the bar of a process ``U`` at window start
``i`` (1-based) is

    bar(U)_i = psi_n**(-1/2) * sum_{h=1}^{l_n-1} w_h * (U_{i+h-1} - U_{i+h-2})

so that for a diffusion with spot variance ``c`` and additive noise of
variance ``gamma``, ``Var(bar) = c*delta_n + (sum_h dw_h**2/psi_n)*gamma``
with ``dw_h = w_{h+1} - w_h`` (zero-padded).  The hat at ``i`` is

    hat(U)_i = (2*psi_n)**(-1) * sum_{h=0}^{l_n-1} dw_h**2 * dU_{i+h} dU_{i+h}^T

whose expectation matches the noise term of the bar's outer product, so
``outer(bar) - hat`` is an (almost) noise-free local variance summand.
"""
from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import _spot_backend
from .errors import InsufficientDataError, NumericalError, ValidationError
from .kernel_moments import KernelMoments
from .sampling_core import ObservationSet

__all__ = [
    "TuningParams",
    "SpotSeries",
    "validate_tuning",
    "bar_increment",
    "hat_increment",
    "spot_cov",
    "spot_noise",
    "pilot_scale",
    "psd_project",
    "spot_series",
    "component_alphas_from_pilot",
]

TRUNCATION_MODES = ("global-norm", "per-component")
PSD_MODES = ("off", "project")

# Relative size below which a negative eigenvalue is treated as roundoff:
# psd_project still clips it to zero but does not raise the "projected"
# flag, so that re-projecting an already-projected matrix is a no-op.
_PSD_FLAG_RTOL = 1e-12


@dataclasses.dataclass(frozen=True)
class TuningParams:
    """Window lengths and truncation threshold for spot estimation.

    Parameters
    ----------
    delta_n : float
        Sampling step.
    theta, varrho, alpha : float
        Scale constants for the smoothing window, the block length and
        the truncation threshold.  ``alpha = numpy.inf`` disables
        truncation.
    kappa, rho : float
        Rate exponents of the block length (``k_n ~ delta_n**-kappa``)
        and the threshold (``nu_n = alpha * delta_n**rho``).
    nu : float
        Assumed jump-activity index in ``[0, 1)``; only enters through
        the admissible windows for ``kappa`` and ``rho``.
    theta_prime : float
        Scale constant of the noise-estimation window ``m_n``.
    l_n, k_n, m_n : int
        Derived window lengths: smoothing window, block length and
        noise window.
    nu_n : float
        Truncation threshold ``alpha * delta_n**rho``.
    truncation_mode : {"global-norm", "per-component"}
        Whether the truncation indicator compares the Euclidean norm of
        the bar against ``nu_n`` or each component against its own
        threshold ``per_component_alphas[r] * delta_n**rho``.
    per_component_alphas : ndarray or None
        Component-wise threshold scales; required when
        ``truncation_mode="per-component"`` is used on data.

    Notes
    -----
    Use :func:`validate_tuning` to construct instances from the scale
    constants; direct construction re-checks the admissibility windows

        kappa in (max(2/3, (2 + nu)/4), 3/4),
        rho   in [1/4 + (1 - kappa)/(2 - nu), 1/2),

    and the integer constraints ``k_n > l_n >= 2``, ``m_n >= 1``.
    """

    delta_n: float
    theta: float
    varrho: float
    alpha: float
    kappa: float
    rho: float
    nu: float
    theta_prime: float
    l_n: int
    k_n: int
    m_n: int
    nu_n: float
    truncation_mode: str = "global-norm"
    per_component_alphas: np.ndarray | None = None

    def __post_init__(self) -> None:
        for name in ("delta_n", "theta", "varrho", "theta_prime"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(f"{name} must be finite and > 0, got {value!r}")
        if not self.alpha > 0:  # inf allowed: disables truncation
            raise ValidationError(f"alpha must be > 0 (inf allowed), got {self.alpha!r}")
        if not 0.0 <= self.nu < 1.0:
            raise ValidationError(
                f"nu = {self.nu!r} violates nu in [0, 1): for nu >= 1 the exponent "
                "windows are empty (rho >= 1/4 + (1-kappa)/(2-nu) would force kappa >= 3/4)"
            )
        kappa_lo = max(2.0 / 3.0, (2.0 + self.nu) / 4.0)
        if not kappa_lo < self.kappa < 0.75:
            raise ValidationError(
                f"kappa = {self.kappa!r} violates max(2/3, (2+nu)/4) = {kappa_lo:.6g} "
                "< kappa < 3/4"
            )
        rho_lo = 0.25 + (1.0 - self.kappa) / (2.0 - self.nu)
        if not rho_lo <= self.rho < 0.5:
            raise ValidationError(
                f"rho = {self.rho!r} violates 1/4 + (1-kappa)/(2-nu) = {rho_lo:.6g} "
                "<= rho < 1/2"
            )
        for name in ("l_n", "k_n", "m_n"):
            if not isinstance(getattr(self, name), int):
                raise ValidationError(f"{name} must be an int, got {getattr(self, name)!r}")
        if self.l_n < 2:
            raise ValidationError(
                f"smoothing window l_n = {self.l_n} violates l_n >= 2; "
                "increase theta or sample faster"
            )
        if self.k_n <= self.l_n:
            raise ValidationError(
                f"block length k_n = {self.k_n} violates k_n > l_n = {self.l_n}; "
                "increase varrho or kappa"
            )
        if self.m_n < 1:
            raise ValidationError(
                f"noise window m_n = {self.m_n} violates m_n >= 1; increase theta_prime"
            )
        if not self.nu_n > 0:
            raise ValidationError(f"nu_n must be > 0, got {self.nu_n!r}")
        if self.truncation_mode not in TRUNCATION_MODES:
            raise ValidationError(
                f"unknown truncation_mode {self.truncation_mode!r}: expected one of "
                f"{TRUNCATION_MODES}"
            )
        if self.per_component_alphas is not None:
            alphas = np.ascontiguousarray(self.per_component_alphas, dtype=float)
            if alphas.ndim != 1 or alphas.size == 0:
                raise ValidationError("per_component_alphas must be a non-empty 1-D vector")
            if not np.all(np.isfinite(alphas) & (alphas > 0)):
                raise ValidationError("per_component_alphas must be finite and > 0")
            alphas.flags.writeable = False
            object.__setattr__(self, "per_component_alphas", alphas)

    def component_thresholds(self, d: int) -> np.ndarray:
        """Per-component thresholds ``alpha_r * delta_n**rho`` for dimension ``d``."""
        if self.per_component_alphas is None:
            raise ValidationError(
                "truncation_mode='per-component' requires per_component_alphas; "
                "derive them with component_alphas_from_pilot or pass them to validate_tuning"
            )
        if self.per_component_alphas.shape[0] != d:
            raise ValidationError(
                f"per_component_alphas has length {self.per_component_alphas.shape[0]} "
                f"but the observations have d = {d} components"
            )
        return self.per_component_alphas * self.delta_n**self.rho


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def validate_tuning(
    delta_n: float,
    theta: float,
    varrho: float,
    alpha: float,
    kappa: float,
    rho: float,
    nu: float = 0.5,
    theta_prime: float | None = None,
    *,
    floor_mode: bool = False,
    truncation_mode: str = "global-norm",
    per_component_alphas: np.ndarray | None = None,
) -> TuningParams:
    """Derive window lengths and threshold from scale constants.

    The integer windows are

        l_n = round(theta * delta_n**(-1/2)),
        k_n = round(varrho * delta_n**(-kappa)),
        m_n = floor(theta_prime * delta_n**(-1/2)),

    with rounding half-up, and the threshold is
    ``nu_n = alpha * delta_n**rho``.  With ``floor_mode=True`` the
    ``l_n`` and ``k_n`` formulas use the floor instead, which reproduces
    window tables quoted as ``floor(delta_n**-kappa)`` when the scale
    constants are 1.

    Parameters
    ----------
    delta_n : float
        Sampling step, > 0.
    theta, varrho, alpha : float
        Positive scale constants (``alpha`` may be ``numpy.inf`` to
        disable truncation).
    kappa, rho : float
        Rate exponents; admissibility windows are checked (see
        :class:`TuningParams`).
    nu : float, optional
        Jump-activity index in ``[0, 1)``; default 0.5 keeps the common
        choice ``kappa=0.69, rho=0.47`` admissible while covering
        finite-activity jumps.
    theta_prime : float, optional
        Noise-window scale; defaults to ``theta``.
    floor_mode : bool, optional
        Use floor instead of round-half-up for ``l_n`` and ``k_n``.
    truncation_mode : {"global-norm", "per-component"}, optional
    per_component_alphas : array_like, optional
        Component-wise threshold scales for per-component mode.

    Returns
    -------
    TuningParams

    Raises
    ------
    ValidationError
        If any scale is non-positive, an exponent falls outside its
        admissibility window, or the derived integers violate
        ``k_n > l_n >= 2`` or ``m_n >= 1``.  The message names the
        violated inequality.

    Examples
    --------
    >>> tp = validate_tuning(1 / 23400, 1.0, 1.0, 5.0, 0.69, 0.47)
    >>> (tp.l_n, tp.k_n, tp.m_n)
    (153, 1035, 152)
    >>> tp_floor = validate_tuning(1 / 23400, 1.0, 1.0, 5.0, 0.69, 0.47, floor_mode=True)
    >>> (tp_floor.l_n, tp_floor.k_n)
    (152, 1034)
    """
    for name, value in (("delta_n", delta_n), ("theta", theta), ("varrho", varrho)):
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            raise ValidationError(f"{name} must be finite and > 0, got {value!r}")
    if theta_prime is None:
        theta_prime = theta
    if not (math.isfinite(theta_prime) and theta_prime > 0):
        raise ValidationError(f"theta_prime must be finite and > 0, got {theta_prime!r}")
    if not alpha > 0:
        raise ValidationError(f"alpha must be > 0 (inf allowed), got {alpha!r}")
    shrink = math.floor if floor_mode else _round_half_up
    root = delta_n**-0.5
    l_n = int(shrink(theta * root))
    k_n = int(shrink(varrho * delta_n**-kappa))
    m_n = int(math.floor(theta_prime * root))
    nu_n = alpha * delta_n**rho
    return TuningParams(
        delta_n=float(delta_n),
        theta=float(theta),
        varrho=float(varrho),
        alpha=float(alpha),
        kappa=float(kappa),
        rho=float(rho),
        nu=float(nu),
        theta_prime=float(theta_prime),
        l_n=l_n,
        k_n=k_n,
        m_n=m_n,
        nu_n=nu_n,
        truncation_mode=truncation_mode,
        per_component_alphas=per_component_alphas,
    )


def component_alphas_from_pilot(alpha: float, pilot_sigma2: np.ndarray) -> np.ndarray:
    """Spread a pooled threshold scale over components by pilot volatility.

    Returns ``alpha * sigma_r / sigma_pooled`` where ``sigma_r`` is the
    square root of the per-component pilot variance and ``sigma_pooled``
    the root of their mean, so that components with higher volatility
    get proportionally wider truncation thresholds.

    Parameters
    ----------
    alpha : float
        Pooled threshold scale, > 0.
    pilot_sigma2 : ndarray, shape (d,)
        Per-component pilot variances, e.g. from :func:`pilot_scale`.

    Returns
    -------
    ndarray, shape (d,)

    Raises
    ------
    ValidationError
        If any pilot variance is non-positive (no scale information).
    """
    if not alpha > 0:
        raise ValidationError(f"alpha must be > 0, got {alpha!r}")
    sigma2 = np.asarray(pilot_sigma2, dtype=float)
    if sigma2.ndim != 1 or sigma2.size == 0:
        raise ValidationError("pilot_sigma2 must be a non-empty 1-D vector")
    if not np.all(np.isfinite(sigma2) & (sigma2 > 0)):
        raise ValidationError(
            "pilot_sigma2 must be strictly positive in every component to derive "
            "per-component thresholds; got " + np.array_str(sigma2)
        )
    pooled = math.sqrt(float(np.mean(sigma2)))
    return alpha * np.sqrt(sigma2) / pooled


def _discrete_pieces(km: KernelMoments) -> tuple[int, np.ndarray, np.ndarray, float, float]:
    """Window length, weights, squared weight differences and normalizers."""
    km.require_discrete()
    l_n = int(km.l_n)
    weights = np.ascontiguousarray(km.weights, dtype=float)
    padded = np.concatenate(([0.0], weights, [0.0]))
    dw2 = np.ascontiguousarray(np.diff(padded) ** 2)
    psi_n = float(km.psi_n)
    return l_n, weights, dw2, psi_n**-0.5, 0.5 / psi_n


def _check_km_matches(km: KernelMoments, tp: TuningParams) -> None:
    km.require_discrete()
    if int(km.l_n) != tp.l_n:
        raise ValidationError(
            f"kernel moments were discretized at l_n = {km.l_n} but the tuning "
            f"parameters have l_n = {tp.l_n}; rebuild one of them"
        )


def bar_increment(obs: ObservationSet, i: int, km: KernelMoments) -> np.ndarray:
    """Pre-averaged increment (bar) at window start ``i`` (1-based).

    Computes ``psi_n**(-1/2) * sum_{h=1}^{l_n-1} w_h (Y_{i+h-1} - Y_{i+h-2})``
    over rows ``i-1 .. i+l_n-2`` of the observation array.

    Parameters
    ----------
    obs : ObservationSet
    i : int
        Window start, ``1 <= i`` and ``i + l_n - 1 < n``.
    km : KernelMoments
        Discretized moments carrying the window weights.

    Returns
    -------
    ndarray, shape (d,)

    Raises
    ------
    ValidationError
        If the window overruns the sample end.

    Examples
    --------
    With ``l_n = 2`` the bar reduces to the raw increment because the
    single weight 0.5 cancels against ``psi_n**(-1/2) = 2``:

    >>> import numpy as np
    >>> from volfunc.kernel_moments import default_kernel, discrete_weights
    >>> from volfunc.sampling_core import RegularGrid, ObservationSet
    >>> km = discrete_weights(default_kernel(), 2)
    >>> obs = ObservationSet(RegularGrid(0.5, 4), np.array([0.0, 1.0, 3.0, 2.0]))
    >>> bar_increment(obs, 1, km)
    array([1.])
    """
    l_n, weights, _, inv_sqrt_psi, _ = _discrete_pieces(km)
    n = obs.n
    if not (1 <= i and i + l_n - 1 < n):
        raise ValidationError(
            f"window start i = {i} out of range: require 1 <= i and "
            f"i + l_n - 1 < n with l_n = {l_n}, n = {n}"
        )
    rows = obs.values[i - 1 : i + l_n - 1]
    increments = np.diff(rows, axis=0)
    return inv_sqrt_psi * (weights @ increments)


def hat_increment(obs: ObservationSet, i: int, km: KernelMoments) -> np.ndarray:
    """Noise-correction matrix (hat) at window start ``i`` (1-based).

    Computes ``(2 psi_n)**(-1) * sum_{h=0}^{l_n-1} dw_h**2 *
    dY_{i+h} dY_{i+h}^T`` with ``dw_h = w_{h+1} - w_h`` and the
    zero-padding convention ``w_0 = w_{l_n} = 0``.  Symmetric positive
    semidefinite by construction.

    Parameters
    ----------
    obs : ObservationSet
    i : int
        Window start, ``1 <= i`` and ``i + l_n - 1 < n``.
    km : KernelMoments

    Returns
    -------
    ndarray, shape (d, d)

    Raises
    ------
    ValidationError
        If the window overruns the sample end.

    Examples
    --------
    With ``l_n = 2`` both squared weight differences are 0.25 and the
    normalizer is ``1/(2*0.25)``, so the hat averages two squared
    increments with weight one half each:

    >>> import numpy as np
    >>> from volfunc.kernel_moments import default_kernel, discrete_weights
    >>> from volfunc.sampling_core import RegularGrid, ObservationSet
    >>> km = discrete_weights(default_kernel(), 2)
    >>> obs = ObservationSet(RegularGrid(0.5, 4), np.array([0.0, 1.0, 3.0, 2.0]))
    >>> hat_increment(obs, 1, km)  # 0.5*1**2 + 0.5*2**2
    array([[2.5]])
    """
    l_n, _, dw2, _, half_inv_psi = _discrete_pieces(km)
    n = obs.n
    if not (1 <= i and i + l_n - 1 < n):
        raise ValidationError(
            f"window start i = {i} out of range: require 1 <= i and "
            f"i + l_n - 1 < n with l_n = {l_n}, n = {n}"
        )
    rows = obs.values[i - 1 : i + l_n]
    increments = np.diff(rows, axis=0)
    return half_inv_psi * np.einsum("a,ar,as->rs", dw2, increments, increments)


def _truncation_mask(bars: np.ndarray, tp: TuningParams, d: int) -> np.ndarray:
    """Boolean keep-mask for an array of bars, shape (m,)."""
    if tp.truncation_mode == "per-component":
        thresholds = tp.component_thresholds(d)
        return np.all(np.abs(bars) <= thresholds[None, :], axis=1)
    if not math.isfinite(tp.nu_n):
        return np.ones(bars.shape[0], dtype=bool)
    norms_sq = np.einsum("jr,jr->j", bars, bars)
    return norms_sq <= tp.nu_n**2


def spot_cov(
    obs: ObservationSet,
    block_start: int,
    tp: TuningParams,
    km: KernelMoments,
    *,
    noise_correction: bool = True,
    engine: str | None = None,
) -> tuple[np.ndarray, float]:
    """Truncated, noise-corrected spot covariance over one block.

    Averages ``outer(bar) * indicator - hat`` over the ``k_n - l_n + 1``
    window starts inside the block beginning at observation index
    ``block_start``, normalized by ``(k_n - l_n) * delta_n``:

        c_hat = ((k_n-l_n) delta_n)**(-1) *
                sum_{h=1}^{k_n-l_n+1} ( bar_{i+h} bar_{i+h}^T 1{keep} - hat_{i+h} )

    The indicator keeps a window when ``norm(bar) <= nu_n`` (global-norm
    mode) or ``|bar_r| <= alpha_r delta_n**rho`` for every component
    (per-component mode), which suppresses windows dominated by jumps.

    Parameters
    ----------
    obs : ObservationSet
    block_start : int
        Block start index ``i``, ``0 <= i`` and ``i + k_n < n``.
    tp : TuningParams
    km : KernelMoments
        Must be discretized at ``tp.l_n``.
    noise_correction : bool, optional
        Subtract the hat series (default).  Disabling is a test-only
        configuration for noiseless inputs.
    engine : {None, "compiled", "numpy"}, optional
        Computational backend; ``None`` picks the default.

    Returns
    -------
    c_hat : ndarray, shape (d, d)
        Symmetric (not necessarily PSD) local covariance estimate.
    truncated_fraction : float
        Share of window starts removed by the truncation indicator.

    Raises
    ------
    ValidationError
        Out-of-range block, mismatched ``km``, or missing per-component
        thresholds.
    """
    _check_km_matches(km, tp)
    l_n, weights, dw2, inv_sqrt_psi, half_inv_psi = _discrete_pieces(km)
    k_n = tp.k_n
    n = obs.n
    if not (0 <= block_start and block_start + k_n < n):
        raise ValidationError(
            f"block_start = {block_start} out of range: require 0 <= block_start and "
            f"block_start + k_n < n with k_n = {k_n}, n = {n}"
        )
    backend = _spot_backend.get_backend(engine)
    window = obs.values[block_start : block_start + k_n + 1]
    D = np.ascontiguousarray(np.diff(window, axis=0))
    bars, hats = backend.bar_hat_series(D, weights, dw2, inv_sqrt_psi, half_inv_psi)
    bars = np.asarray(bars)
    hats = np.asarray(hats)
    mask = _truncation_mask(bars, tp, obs.d)
    kept = bars[mask]
    outer_sum = np.einsum("jr,js->rs", kept, kept)
    total = outer_sum - hats.sum(axis=0) if noise_correction else outer_sum
    c_hat = total / ((k_n - l_n) * tp.delta_n)
    c_hat = 0.5 * (c_hat + c_hat.T)
    truncated_fraction = 1.0 - float(mask.mean())
    return c_hat, truncated_fraction


def spot_noise(obs: ObservationSet, block_start: int, tp: TuningParams) -> np.ndarray:
    """Local noise covariance from raw squared increments.

    Computes ``(2 m_n)**(-1) * sum_{h=1}^{m_n} dY_{i+h} dY_{i+h}^T`` at
    block start ``i``.  For observations contaminated by additive iid
    noise of covariance ``gamma``, a raw increment has covariance
    ``2*gamma + O(delta_n)``, so this estimates ``gamma``.

    Parameters
    ----------
    obs : ObservationSet
    block_start : int
        ``0 <= block_start`` and ``block_start + m_n < n``.
    tp : TuningParams

    Returns
    -------
    ndarray, shape (d, d)
        Symmetric PSD matrix.

    Raises
    ------
    ValidationError
        If the noise window overruns the sample end.
    """
    m_n = tp.m_n
    n = obs.n
    if not (0 <= block_start and block_start + m_n < n):
        raise ValidationError(
            f"block_start = {block_start} out of range: require 0 <= block_start and "
            f"block_start + m_n < n with m_n = {m_n}, n = {n}"
        )
    rows = obs.values[block_start : block_start + m_n + 1]
    increments = np.diff(rows, axis=0)
    return np.einsum("ar,as->rs", increments, increments) / (2.0 * m_n)


def pilot_scale(
    obs: ObservationSet, km: KernelMoments, l_n: int | None = None
) -> np.ndarray:
    """Coarse per-component variance level from non-overlapping bars.

    Uses bars at window starts spaced ``l_n`` apart (so consecutive bars
    share no increments) and the bipower identity
    ``E|X Y| = (2/pi) sigma**2`` for independent centered Gaussians of
    equal variance:

        sigma2_r = max(0, ( (pi/2) * mean_j |bar_r(j) bar_r(j+1)|
                            - mean_j hat_rr(j) ) / delta_n )

    The hat average removes the additive-noise contribution to
    ``Var(bar_r) = sigma_r**2 delta_n + noise``, leaving an estimate of
    the time-averaged spot variance that is robust to jumps (bipower)
    and to noise (hat correction).

    Parameters
    ----------
    obs : ObservationSet
    km : KernelMoments
        Discretized moments; supplies the window length and weights.
    l_n : int, optional
        Window length; must equal ``km.l_n`` when given (the weights are
        tied to the discretization length).

    Returns
    -------
    ndarray, shape (d,)
        Non-negative per-component variances.

    Raises
    ------
    InsufficientDataError
        If fewer than 3 non-overlapping windows fit.
    ValidationError
        If ``l_n`` disagrees with ``km.l_n``.
    """
    window, weights, dw2, inv_sqrt_psi, half_inv_psi = _discrete_pieces(km)
    if l_n is not None and int(l_n) != window:
        raise ValidationError(
            f"l_n = {l_n} disagrees with the discretization length km.l_n = {window}; "
            "rebuild the kernel moments at the desired window"
        )
    n = obs.n
    n_windows = (n - 1 - window) // window + 1 if n - 1 >= window else 0
    if n_windows < 3:
        raise InsufficientDataError(
            f"pilot scale needs at least 3 non-overlapping windows of length "
            f"l_n = {window}, but n = {n} admits only {n_windows}"
        )
    increments = np.diff(obs.values, axis=0)
    chunks = increments[: n_windows * window].reshape(n_windows, window, obs.d)
    bars = inv_sqrt_psi * np.einsum("a,jar->jr", weights, chunks[:, : window - 1, :])
    hat_diag = half_inv_psi * np.einsum("a,jar->jr", dw2, chunks**2)
    bipower = np.mean(np.abs(bars[:-1] * bars[1:]), axis=0)
    sigma2 = ((0.5 * math.pi) * bipower - hat_diag.mean(axis=0)) / obs.grid.delta_n
    return np.maximum(sigma2, 0.0)


def psd_project(matrix: np.ndarray) -> tuple[np.ndarray, bool]:
    """Frobenius projection onto the positive semidefinite cone.

    Symmetrizes the input, clips negative eigenvalues to zero and
    reassembles.  This is the nearest PSD matrix in Frobenius norm, so
    the projection is non-expansive: it never moves the estimate further
    from any PSD matrix than it already was.

    Parameters
    ----------
    matrix : ndarray, shape (d, d)
        Square matrix with finite entries; symmetrized as
        ``(A + A.T)/2`` before decomposing.

    Returns
    -------
    projected : ndarray, shape (d, d)
        Symmetric PSD matrix.
    clipped : bool
        True when a meaningfully negative eigenvalue (below
        ``-1e-12`` relative to the spectral radius) was clipped;
        negative parts attributable to roundoff are clipped silently so
        that projecting twice never flags the second pass.

    Raises
    ------
    ValidationError
        If the input is not a finite square matrix.
    NumericalError
        If the eigensolver fails to converge.

    Examples
    --------
    >>> import numpy as np
    >>> projected, clipped = psd_project(np.diag([1.0, -2.0]))
    >>> projected
    array([[1., 0.],
           [0., 0.]])
    >>> clipped
    True
    """
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValidationError("matrix entries must be finite")
    sym = 0.5 * (A + A.T)
    try:
        values, vectors = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed during PSD projection: {exc}") from exc
    scale = float(np.max(np.abs(values))) if values.size else 0.0
    clipped = bool(values[0] < -_PSD_FLAG_RTOL * scale) if values.size else False
    clipped_values = np.maximum(values, 0.0)
    projected = (vectors * clipped_values) @ vectors.T
    projected = 0.5 * (projected + projected.T)
    return projected, clipped


@dataclasses.dataclass(frozen=True)
class SpotSeries:
    """Block-wise spot covariance and noise estimates over a sample.

    Attributes
    ----------
    block_indices : ndarray of int, shape (N,)
        Block start indices ``i * k_n``.
    c_hat : ndarray, shape (N, d, d)
        Spot covariance estimates (symmetric; PSD when projected).
    gamma_hat : ndarray, shape (N, d, d)
        Noise covariance estimates (symmetric PSD).
    truncated_fraction : ndarray, shape (N,)
        Per-block share of truncated windows, in [0, 1].
    psd_projected : ndarray of bool, shape (N,)
        Per-block flag: the covariance estimate had a meaningfully
        negative eigenvalue clipped.
    """

    block_indices: np.ndarray
    c_hat: np.ndarray
    gamma_hat: np.ndarray
    truncated_fraction: np.ndarray
    psd_projected: np.ndarray

    def __post_init__(self) -> None:
        indices = np.ascontiguousarray(self.block_indices, dtype=np.int64)
        c_hat = np.ascontiguousarray(self.c_hat, dtype=float)
        gamma_hat = np.ascontiguousarray(self.gamma_hat, dtype=float)
        fraction = np.ascontiguousarray(self.truncated_fraction, dtype=float)
        projected = np.ascontiguousarray(self.psd_projected, dtype=bool)
        n_blocks = indices.shape[0]
        if n_blocks == 0:
            raise ValidationError("SpotSeries requires at least one block")
        if c_hat.ndim != 3 or c_hat.shape[0] != n_blocks or c_hat.shape[1] != c_hat.shape[2]:
            raise ValidationError(
                f"c_hat must have shape (N, d, d) with N = {n_blocks}, got {c_hat.shape}"
            )
        if gamma_hat.shape != c_hat.shape:
            raise ValidationError(
                f"gamma_hat shape {gamma_hat.shape} must match c_hat shape {c_hat.shape}"
            )
        if fraction.shape != (n_blocks,) or projected.shape != (n_blocks,):
            raise ValidationError(
                "truncated_fraction and psd_projected must have one entry per block"
            )
        if not (np.all(np.isfinite(c_hat)) and np.all(np.isfinite(gamma_hat))):
            raise ValidationError("spot estimates must be finite")
        if np.any((fraction < 0.0) | (fraction > 1.0)):
            raise ValidationError("truncated_fraction entries must lie in [0, 1]")
        for arr, name in (
            (indices, "block_indices"),
            (c_hat, "c_hat"),
            (gamma_hat, "gamma_hat"),
            (fraction, "truncated_fraction"),
            (projected, "psd_projected"),
        ):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_blocks(self) -> int:
        """Number of blocks."""
        return int(self.block_indices.shape[0])

    @property
    def d(self) -> int:
        """Component count."""
        return int(self.c_hat.shape[1])


def spot_series(
    obs: ObservationSet,
    tp: TuningParams,
    km: KernelMoments,
    *,
    psd_mode: str = "off",
    noise_correction: bool = True,
    engine: str | None = None,
) -> SpotSeries:
    """Spot covariance and noise estimates on non-overlapping blocks.

    Evaluates :func:`spot_cov` and :func:`spot_noise` at block starts
    ``i * k_n`` for ``i = 0 .. N-1`` where ``N = floor(n / k_n)``,
    dropping trailing blocks whose windows would overrun the sample
    (this happens only when ``k_n`` divides ``n``; the integrated
    estimator's finite-sample adjustment compensates for the dropped
    tail).  The bar/hat series over the whole sample is computed once
    and shared across blocks.

    Parameters
    ----------
    obs : ObservationSet
    tp : TuningParams
    km : KernelMoments
        Discretized at ``tp.l_n``.
    psd_mode : {"off", "project"}, optional
        Project each covariance estimate onto the PSD cone and record
        the per-block clipping flag.
    noise_correction : bool, optional
        Subtract the hat series inside each block (default).
    engine : {None, "compiled", "numpy"}, optional
        Computational backend.

    Returns
    -------
    SpotSeries

    Raises
    ------
    InsufficientDataError
        If ``n < k_n + l_n`` or no block fits.
    ValidationError
        Unknown ``psd_mode``, mismatched ``km``, or missing
        per-component thresholds.

    Notes
    -----
    Memory use is ``O(n d**2)`` for the shared hat series.  All block
    results are deterministic functions of the inputs and are emitted in
    block order.
    """
    if psd_mode not in PSD_MODES:
        raise ValidationError(f"unknown psd_mode {psd_mode!r}: expected one of {PSD_MODES}")
    _check_km_matches(km, tp)
    l_n, weights, dw2, inv_sqrt_psi, half_inv_psi = _discrete_pieces(km)
    k_n, m_n = tp.k_n, tp.m_n
    n, d = obs.n, obs.d
    if n < k_n + l_n:
        raise InsufficientDataError(
            f"n = {n} is too small for one block: require n >= k_n + l_n = {k_n + l_n}"
        )
    n_blocks = n // k_n
    while n_blocks > 0 and (
        (n_blocks - 1) * k_n + k_n >= n or (n_blocks - 1) * k_n + m_n >= n
    ):
        n_blocks -= 1
    if n_blocks == 0:
        raise InsufficientDataError(
            f"no complete block fits: n = {n}, k_n = {k_n}, m_n = {m_n}"
        )
    backend = _spot_backend.get_backend(engine)
    increments = np.ascontiguousarray(np.diff(obs.values, axis=0))
    bars, hats = backend.bar_hat_series(increments, weights, dw2, inv_sqrt_psi, half_inv_psi)
    bars = np.asarray(bars)
    hats = np.asarray(hats)
    mask = _truncation_mask(bars, tp, d)
    masked_bars = np.where(mask[:, None], bars, 0.0)
    per_block = k_n - l_n + 1
    block_indices = np.arange(n_blocks, dtype=np.int64) * k_n
    c_hat = np.empty((n_blocks, d, d))
    gamma_hat = np.empty((n_blocks, d, d))
    truncated = np.empty(n_blocks)
    projected_flags = np.zeros(n_blocks, dtype=bool)
    norm = (k_n - l_n) * tp.delta_n
    for b in range(n_blocks):
        start = b * k_n
        kept = masked_bars[start : start + per_block]
        outer_sum = np.einsum("jr,js->rs", kept, kept)
        if noise_correction:
            outer_sum = outer_sum - hats[start : start + per_block].sum(axis=0)
        block_c = outer_sum / norm
        block_c = 0.5 * (block_c + block_c.T)
        truncated[b] = 1.0 - float(mask[start : start + per_block].mean())
        noise_rows = increments[start : start + m_n]
        gamma_hat[b] = np.einsum("ar,as->rs", noise_rows, noise_rows) / (2.0 * m_n)
        if psd_mode == "project":
            block_c, flag = psd_project(block_c)
            projected_flags[b] = flag
        c_hat[b] = block_c
    return SpotSeries(
        block_indices=block_indices,
        c_hat=c_hat,
        gamma_hat=gamma_hat,
        truncated_fraction=truncated,
        psd_projected=projected_flags,
    )
