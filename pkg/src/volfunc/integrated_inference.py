"""Bias-corrected integrated volatility functionals with feasible inference.

Turns the block-wise spot estimates of :mod:`volfunc.preaveraging_spot`
into estimates of the integral ``S(g)_t = int_0^t g(c_s) ds`` for a smooth
matrix functional ``g``, together with a plug-in asymptotic covariance and
per-component confidence intervals.

Notes
-----
With spot estimates ``c_hat_i`` and noise estimates ``gamma_hat_i`` on
non-overlapping blocks of ``k_n`` observation steps, the integrated
estimator is

.. math::

    \\widehat S(g)_t = k_n \\Delta_n \\sum_{i=0}^{N-1}
        \\bigl[ g(\\widehat c_{i k_n}) - B(g)_{i k_n} \\bigr] \\cdot a^n_t,

where ``a^n_t = t / (N k_n \\Delta_n) >= 1`` compensates for the dropped
tail of the sample and the de-biasing term

.. math::

    B(g)_i = \\frac{1}{2 k_n \\Delta_n^{1/2}}
        \\sum_{j,k,l,m} \\partial^2_{jk,lm} g(\\widehat c_i)\\,
        \\Xi(\\widehat c_i, \\widehat\\gamma_i)^{jk,lm}

removes the second-order (Jensen) bias caused by the sampling noise of
the spot estimate, whose per-block covariance is
``Xi / (k_n \\Delta_n^{1/2})``.  The asymptotic covariance of
``Delta_n^{-1/4} (S_hat - S)`` is estimated by

.. math::

    \\widehat V(g)_t = k_n \\Delta_n \\sum_{i} \\sum_{j,k,l,m}
        \\partial_{jk} g\\, \\partial_{lm} g^{\\mathsf T}\\,
        \\Xi(\\widehat c_i, \\widehat\\gamma_i)^{jk,lm},

and component ``r`` gets the interval
``S_hat_r +/- z_{(1+beta)/2} sqrt(Delta_n^{1/2} V_hat_rr)``.

Blocks whose spot estimate falls outside a functional's guard domain
(possible in finite samples after noise correction) are repaired by a
small ridge shift -- or an eigenvalue spread for gap guards -- and
counted in the report diagnostics rather than aborting the estimate.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .functional_calculus import Functional, xi_tensor
from .kernel_moments import KernelMoments
from .preaveraging_spot import (
    PSD_MODES,
    SpotSeries,
    TuningParams,
    psd_project,
    spot_cov,
    spot_noise,
    spot_series,
)
from .sampling_core import ObservationSet

__all__ = [
    "SCHEMA_VERSION",
    "InferenceOptions",
    "EstimateReport",
    "normal_quantile",
    "bias_term",
    "avar",
    "confidence_interval",
    "estimate",
    "estimate_from_spot",
]

SCHEMA_VERSION = "1"

#: Relative ridge sizes tried, in order, when a spot estimate violates a
#: functional's guard; see :func:`_repair_point`.
_RIDGE_LADDER = (1e-8, 1e-6, 1e-4, 1e-2, 1.0, 1e2)

# Acklam's rational approximation to the standard normal quantile.
_ACKLAM_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_ACKLAM_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_ACKLAM_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_ACKLAM_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)
_ACKLAM_P_LOW = 0.02425


def normal_quantile(p: float) -> float:
    """Standard normal quantile, accurate to ~1 ulp.

    Uses Acklam's rational approximation (|relative error| < 1.2e-8)
    followed by one Halley refinement step through :func:`math.erfc`,
    which brings the result to within a few ulps of the exact quantile.
    The routine is pure Python so results are bit-stable across
    platforms and library versions.

    Parameters
    ----------
    p : float
        Probability in (0, 1).

    Returns
    -------
    float

    Examples
    --------
    >>> round(normal_quantile(0.975), 9)
    1.959963985
    >>> normal_quantile(0.5)
    0.0
    """
    p = float(p)
    if not (0.0 < p < 1.0):
        raise ValidationError(f"quantile probability must be in (0, 1), got {p!r}")
    if p < _ACKLAM_P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        c0, c1, c2, c3, c4, c5 = _ACKLAM_C
        d0, d1, d2, d3 = _ACKLAM_D
        x = ((((((c0 * q + c1) * q + c2) * q + c3) * q + c4) * q + c5)
             / ((((d0 * q + d1) * q + d2) * q + d3) * q + 1.0))
    elif p > 1.0 - _ACKLAM_P_LOW:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        c0, c1, c2, c3, c4, c5 = _ACKLAM_C
        d0, d1, d2, d3 = _ACKLAM_D
        x = -((((((c0 * q + c1) * q + c2) * q + c3) * q + c4) * q + c5)
              / ((((d0 * q + d1) * q + d2) * q + d3) * q + 1.0))
    else:
        q = p - 0.5
        r = q * q
        a0, a1, a2, a3, a4, a5 = _ACKLAM_A
        b0, b1, b2, b3, b4 = _ACKLAM_B
        x = ((((((a0 * r + a1) * r + a2) * r + a3) * r + a4) * r + a5) * q
             / (((((b0 * r + b1) * r + b2) * r + b3) * r + b4) * r + 1.0))
    # One Halley step on F(x) - p = 0 using the complementary error
    # function; the residual is formed in whichever tail keeps full
    # relative precision (1 - p is exact for p >= 0.5).
    if p < 0.5:
        e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    else:
        e = (1.0 - p) - 0.5 * math.erfc(x / math.sqrt(2.0))
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@dataclass(frozen=True)
class InferenceOptions:
    """Knobs for :func:`estimate`.

    Attributes
    ----------
    level : float
        Confidence level ``beta`` in (0, 1) for the per-component
        intervals.  Default 0.95.
    psd_mode : {"off", "project"}
        Forwarded to :func:`~volfunc.preaveraging_spot.spot_series`.
    noise_correction : bool
        Forwarded to the spot estimator (subtract the hat-statistic).
    overlapping : bool
        Experimental: use spot estimates at every admissible start with
        ``Delta_n`` weights instead of non-overlapping ``k_n``-blocks.
        O(n k_n) work -- intended for small-sample experiments only.
    engine : str or None
        Spot backend override ("compiled" / "numpy" / None = best).
    """

    level: float = 0.95
    psd_mode: str = "off"
    noise_correction: bool = True
    overlapping: bool = False
    engine: str | None = None

    def __post_init__(self) -> None:
        if not (isinstance(self.level, (int, float)) and 0.0 < float(self.level) < 1.0):
            raise ValidationError(f"confidence level must be in (0, 1), got {self.level!r}")
        object.__setattr__(self, "level", float(self.level))
        if self.psd_mode not in PSD_MODES:
            raise ValidationError(
                f"psd_mode must be one of {PSD_MODES}, got {self.psd_mode!r}"
            )
        if not isinstance(self.overlapping, bool):
            raise ValidationError("overlapping must be a bool")
        if not isinstance(self.noise_correction, bool):
            raise ValidationError("noise_correction must be a bool")


@dataclass(frozen=True)
class EstimateReport:
    """Result of one integrated-functional estimation.

    Attributes
    ----------
    functional : str
        Registry name of the functional.
    functional_params : tuple of (str, value)
        Construction parameters of the functional.
    t : float
        Horizon covered by the sample (``n * delta_n``).
    level : float
        Confidence level of ``ci``.
    S_hat : ndarray, shape (r,)
        Bias-corrected integrated estimate.
    S_hat_raw : ndarray, shape (r,)
        Same sum without the de-biasing term.
    bias_total : ndarray, shape (r,)
        ``S_hat_raw - S_hat`` (the aggregated correction).
    V_hat : ndarray, shape (r, r)
        Plug-in asymptotic covariance (symmetric, diagonal >= 0).
    ci : ndarray, shape (r, 2)
        Per-component interval ``[lo, hi]``; always contains ``S_hat``.
    a_n_t : float
        Finite-sample adjustment ``t / (N k_n Delta_n) >= 1``.
    diagnostics : dict
        Keys ``n_blocks``, ``truncated_fraction_mean``,
        ``psd_projected``, ``guard_violations``, ``overlapping``.
    """

    functional: str
    functional_params: tuple
    t: float
    level: float
    S_hat: np.ndarray
    S_hat_raw: np.ndarray
    bias_total: np.ndarray
    V_hat: np.ndarray
    ci: np.ndarray
    a_n_t: float
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        s_hat = np.ascontiguousarray(self.S_hat, dtype=float)
        s_raw = np.ascontiguousarray(self.S_hat_raw, dtype=float)
        bias = np.ascontiguousarray(self.bias_total, dtype=float)
        v_hat = np.ascontiguousarray(self.V_hat, dtype=float)
        ci = np.ascontiguousarray(self.ci, dtype=float)
        r = s_hat.shape[0] if s_hat.ndim == 1 else -1
        if r < 1:
            raise ValidationError(f"S_hat must be a nonempty vector, got shape {s_hat.shape}")
        for name, arr in (("S_hat_raw", s_raw), ("bias_total", bias)):
            if arr.shape != (r,):
                raise ValidationError(f"{name} shape {arr.shape} must be ({r},)")
        if v_hat.shape != (r, r):
            raise ValidationError(f"V_hat shape {v_hat.shape} must be ({r}, {r})")
        if ci.shape != (r, 2):
            raise ValidationError(f"ci shape {ci.shape} must be ({r}, 2)")
        scale = float(np.abs(v_hat).max()) if v_hat.size else 0.0
        if not np.allclose(v_hat, v_hat.T, atol=1e-10 * max(scale, 1.0)):
            raise ValidationError("V_hat must be symmetric")
        if np.any(np.diag(v_hat) < -1e-12 * max(scale, 1.0)):
            raise ValidationError("V_hat diagonal must be nonnegative")
        slack = 1e-12 * (1.0 + np.abs(s_hat))
        if np.any(ci[:, 0] > s_hat + slack) or np.any(ci[:, 1] < s_hat - slack):
            raise ValidationError("ci must contain S_hat component-wise")
        if not (isinstance(self.a_n_t, (int, float)) and self.a_n_t >= 1.0 - 1e-12):
            raise ValidationError(f"a_n_t must be >= 1, got {self.a_n_t!r}")
        if not (isinstance(self.t, (int, float)) and self.t > 0):
            raise ValidationError(f"horizon t must be > 0, got {self.t!r}")
        for name, arr in (
            ("S_hat", s_hat),
            ("S_hat_raw", s_raw),
            ("bias_total", bias),
            ("V_hat", v_hat),
            ("ci", ci),
        ):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "level", float(self.level))
        object.__setattr__(self, "a_n_t", float(self.a_n_t))

    @property
    def r(self) -> int:
        """Output dimension of the functional."""
        return self.S_hat.shape[0]

    def to_json_dict(self) -> dict:
        """Plain-python dict following the documented report schema."""
        return {
            "schema_version": SCHEMA_VERSION,
            "functional": self.functional,
            "functional_params": {k: v for k, v in self.functional_params},
            "t": self.t,
            "level": self.level,
            "S_hat": self.S_hat.tolist(),
            "S_hat_raw": self.S_hat_raw.tolist(),
            "bias_total": self.bias_total.tolist(),
            "V_hat": self.V_hat.tolist(),
            "ci": self.ci.tolist(),
            "a_n_t": self.a_n_t,
            "diagnostics": dict(self.diagnostics),
        }

    def to_json(self, indent: int | None = 2) -> str:
        """Serialized JSON document."""
        return json.dumps(self.to_json_dict(), indent=indent, sort_keys=True)

    @staticmethod
    def csv_header(r: int) -> list[str]:
        """Column names of the one-line CSV row for ``r`` components."""
        head = [
            "functional",
            "t",
            "level",
            "a_n_t",
            "n_blocks",
            "guard_violations",
            "psd_projected",
            "truncated_fraction_mean",
        ]
        for i in range(r):
            head += [
                f"S_hat_{i}",
                f"S_hat_raw_{i}",
                f"bias_{i}",
                f"se_{i}",
                f"ci_lo_{i}",
                f"ci_hi_{i}",
            ]
        return head

    def to_csv_row(self) -> list:
        """Values aligned with :meth:`csv_header` for this report's ``r``."""
        diag = self.diagnostics
        row = [
            self.functional,
            self.t,
            self.level,
            self.a_n_t,
            diag.get("n_blocks", 0),
            diag.get("guard_violations", 0),
            diag.get("psd_projected", 0),
            diag.get("truncated_fraction_mean", float("nan")),
        ]
        se = np.sqrt(np.maximum(np.diag(self.V_hat), 0.0))
        for i in range(self.r):
            row += [
                float(self.S_hat[i]),
                float(self.S_hat_raw[i]),
                float(self.bias_total[i]),
                float(se[i]),
                float(self.ci[i, 0]),
                float(self.ci[i, 1]),
            ]
        return row


def _symmetric_input(c: np.ndarray, what: str) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValidationError(f"{what} must be a square matrix, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValidationError(f"{what} must be finite")
    return 0.5 * (c + c.T)


def _repair_point(f: Functional, c: np.ndarray) -> tuple[np.ndarray, bool]:
    """Nearest guard-satisfying evaluation point for a spot estimate.

    Returns ``(c, False)`` when ``c`` already satisfies the guard.
    Otherwise tries ridge shifts ``c + eps I`` over an escalating ladder
    of relative sizes; if those fail (spectral-gap guards are invariant
    under ridge shifts) the eigenvalues are spread apart to a minimum
    spacing and the matrix rebuilt.  Raises
    :class:`~volfunc.errors.NumericalError` if nothing works.
    """
    if f.domain_guard(c):
        return c, False
    d = c.shape[0]
    scale = max(abs(float(np.trace(c))) / d, float(np.linalg.norm(c)) / d, 1e-12)
    eye = np.eye(d)
    for rel in _RIDGE_LADDER:
        shifted = c + rel * scale * eye
        if f.domain_guard(shifted):
            return shifted, True
    # Ridge-invariant guards (eigenvalue gaps): spread the spectrum.
    w, vectors = np.linalg.eigh(c)
    spacing = 4.0 * max(1e-6 * abs(float(np.trace(c))) / d, 1e-12)
    for i in range(1, d):
        if w[i] < w[i - 1] + spacing:
            w[i] = w[i - 1] + spacing
    spread = (vectors * w) @ vectors.T
    spread = 0.5 * (spread + spread.T)
    if f.domain_guard(spread):
        return spread, True
    raise NumericalError(
        f"could not repair a spot estimate into the guard domain of "
        f"{f.name!r} ({f.guard_description})"
    )


def bias_term(
    c_hat: np.ndarray,
    gamma_hat: np.ndarray,
    f: Functional,
    tp: TuningParams,
    km: KernelMoments,
) -> np.ndarray:
    """De-biasing term ``B(g)`` for one block.

    Contracts the Hessian of ``g`` at ``c_hat`` with the sampling-noise
    covariance tensor ``Xi(c_hat, gamma_hat)`` and scales by
    ``1 / (2 k_n Delta_n^{1/2})``:

    .. math::

        B = \\frac{1}{2 k_n \\Delta_n^{1/2}}
            \\sum_{j,k,l,m} \\partial^2_{jk,lm} g(\\widehat c)\\,
            \\Xi^{jk,lm}.

    Parameters
    ----------
    c_hat, gamma_hat : ndarray, shape (d, d)
        Spot covariance and noise covariance estimates for the block.
        ``c_hat`` must satisfy the functional's guard (callers apply the
        repair policy first; see :func:`estimate`).
    f : Functional
    tp : TuningParams
    km : KernelMoments

    Returns
    -------
    ndarray, shape (r,)

    Raises
    ------
    GuardViolation
        If ``c_hat`` is outside the functional's guard domain.

    Examples
    --------
    A functional with zero Hessian is not corrected:

    >>> import numpy as np
    >>> from volfunc.functional_calculus import builtin
    >>> from volfunc.kernel_moments import continuous_moments, default_kernel
    >>> from volfunc.preaveraging_spot import validate_tuning
    >>> km = continuous_moments(default_kernel())
    >>> tp = validate_tuning(1 / 23400, 1.0, 1.0, 5.0, 0.69, 0.47)
    >>> bias_term(np.array([[0.04]]), np.array([[2.5e-5]]),
    ...           builtin("entry", j=0, k=0), tp, km)
    array([0.])
    """
    c_hat = _symmetric_input(c_hat, "c_hat")
    gamma_hat = _symmetric_input(gamma_hat, "gamma_hat")
    if gamma_hat.shape != c_hat.shape:
        raise ValidationError(
            f"gamma_hat shape {gamma_hat.shape} must match c_hat shape {c_hat.shape}"
        )
    f.check_guard(c_hat)
    hess = np.asarray(f.hessian(c_hat), dtype=float)
    xi = xi_tensor(c_hat, gamma_hat, tp.theta, km)
    contraction = np.einsum("ajklm,jklm->a", hess, xi.entries)
    return contraction / (2.0 * tp.k_n * math.sqrt(tp.delta_n))


def _block_terms(
    spot: SpotSeries,
    f: Functional,
    tp: TuningParams,
    km: KernelMoments,
    *,
    want_gradient: bool,
):
    """Per-block evaluations with the guard-repair policy applied.

    Returns ``(values, biases, gradients, xis, usable, guard_violations)``
    where ``usable`` marks blocks that entered the sums and
    ``guard_violations`` counts blocks that needed repair (or were
    dropped).  Lists are indexed by block.
    """
    n_blocks = spot.n_blocks
    values, biases, gradients, xis = [], [], [], []
    usable = np.ones(n_blocks, dtype=bool)
    guard_violations = 0
    for i in range(n_blocks):
        c_i = spot.c_hat[i]
        gamma_i = spot.gamma_hat[i]
        try:
            c_eval, repaired = _repair_point(f, c_i)
        except NumericalError:
            usable[i] = False
            guard_violations += 1
            values.append(None)
            biases.append(None)
            gradients.append(None)
            xis.append(None)
            continue
        if repaired:
            guard_violations += 1
        xi = xi_tensor(c_eval, gamma_i, tp.theta, km)
        values.append(np.asarray(f.value(c_eval), dtype=float))
        biases.append(bias_term(c_eval, gamma_i, f, tp, km))
        gradients.append(
            np.asarray(f.gradient(c_eval), dtype=float) if want_gradient else None
        )
        xis.append(xi)
    if not usable.any():
        raise NumericalError(
            f"all {n_blocks} blocks violate the guard of {f.name!r} beyond repair"
        )
    return values, biases, gradients, xis, usable, guard_violations


def avar(
    spot: SpotSeries,
    f: Functional,
    tp: TuningParams,
    km: KernelMoments,
) -> np.ndarray:
    """Plug-in asymptotic covariance ``V_hat(g)`` of the integrated estimate.

    .. math::

        \\widehat V(g) = k_n \\Delta_n \\sum_i
            \\sum_{j,k,l,m} \\partial_{jk} g(\\widehat c_i)\\,
            \\partial_{lm} g(\\widehat c_i)^{\\mathsf T}
            \\Xi(\\widehat c_i, \\widehat\\gamma_i)^{jk,lm}.

    The sum runs over the same blocks as the integrated estimator, with
    guard-violating blocks repaired or dropped under the same policy.
    The returned matrix is explicitly symmetrized; its diagonal is
    nonnegative whenever the spot inputs are PSD, because ``Xi`` has a
    PSD quadratic form.

    Parameters
    ----------
    spot : SpotSeries
    f : Functional
    tp : TuningParams
    km : KernelMoments

    Returns
    -------
    ndarray, shape (r, r)
    """
    _, _, gradients, xis, usable, _ = _block_terms(spot, f, tp, km, want_gradient=True)
    r = f.output_size(spot.d)
    v_hat = np.zeros((r, r))
    for i in np.flatnonzero(usable):
        grad = gradients[i]
        v_hat += np.einsum("ajk,blm,jklm->ab", grad, grad, xis[i].entries)
    v_hat *= tp.k_n * tp.delta_n
    return 0.5 * (v_hat + v_hat.T)


def confidence_interval(
    S_hat: np.ndarray,
    V_hat: np.ndarray,
    delta_n: float,
    level: float = 0.95,
) -> np.ndarray:
    """Per-component feasible confidence intervals.

    Component ``r`` gets ``S_hat_r +/- z * sqrt(Delta_n^{1/2} V_hat_rr)``
    with ``z = normal_quantile((1 + level) / 2)`` -- the studentization
    matching the feasible central limit theorem for the integrated
    estimator, whose error is ``O_p(Delta_n^{1/4})``.

    Parameters
    ----------
    S_hat : ndarray, shape (r,)
    V_hat : ndarray, shape (r, r)
        Must have nonnegative diagonal.
    delta_n : float
    level : float
        Confidence level in (0, 1).

    Returns
    -------
    ndarray, shape (r, 2)
        Rows ``[lo, hi]``.

    Raises
    ------
    NumericalError
        If a diagonal entry of ``V_hat`` is negative (broken asymptotic
        variance upstream).

    Examples
    --------
    >>> import numpy as np
    >>> ci = confidence_interval(np.array([1.0]), np.array([[0.0]]), 1e-4)
    >>> (ci[0, 0], ci[0, 1])
    (1.0, 1.0)
    """
    s_hat = np.atleast_1d(np.asarray(S_hat, dtype=float))
    v_hat = np.asarray(V_hat, dtype=float)
    if v_hat.ndim == 0:
        v_hat = v_hat.reshape(1, 1)
    r = s_hat.shape[0]
    if v_hat.shape != (r, r):
        raise ValidationError(f"V_hat shape {v_hat.shape} must be ({r}, {r})")
    if not (isinstance(delta_n, (int, float)) and delta_n > 0 and math.isfinite(delta_n)):
        raise ValidationError(f"delta_n must be finite and > 0, got {delta_n!r}")
    if not (0.0 < float(level) < 1.0):
        raise ValidationError(f"confidence level must be in (0, 1), got {level!r}")
    diag = np.diag(v_hat)
    if np.any(diag < 0):
        worst = float(diag.min())
        raise NumericalError(
            f"V_hat has a negative diagonal entry ({worst!r}); the asymptotic "
            "variance estimate upstream is broken"
        )
    z = normal_quantile(0.5 * (1.0 + float(level)))
    half = z * np.sqrt(math.sqrt(float(delta_n)) * diag)
    return np.column_stack([s_hat - half, s_hat + half])


def estimate_from_spot(
    spot: SpotSeries,
    f: Functional,
    tp: TuningParams,
    km: KernelMoments,
    t: float,
    options: InferenceOptions | None = None,
) -> EstimateReport:
    """Integrated estimate from an existing block-wise spot series.

    Separated from :func:`estimate` so Monte Carlo drivers can reuse one
    spot series across several functionals.  ``t`` is the horizon used
    for the finite-sample adjustment ``a_n_t = t / (N k_n Delta_n)``;
    pass ``obs.grid.t``.

    Skipped blocks (irreparable guard violations) are removed from both
    the sum and the ``a_n_t`` normalization, so the estimate stays a
    time-scaled average of the usable blocks.
    """
    if options is None:
        options = InferenceOptions()
    if not (isinstance(t, (int, float)) and t > 0 and math.isfinite(t)):
        raise ValidationError(f"horizon t must be finite and > 0, got {t!r}")
    values, biases, _, _, usable, guard_violations = _block_terms(
        spot, f, tp, km, want_gradient=False
    )
    r = f.output_size(spot.d)
    g_sum = np.zeros(r)
    b_sum = np.zeros(r)
    for i in np.flatnonzero(usable):
        g_sum += values[i]
        b_sum += biases[i]
    kd = tp.k_n * tp.delta_n
    n_usable = int(usable.sum())
    a_n_t = float(t) / (n_usable * kd)
    s_raw = kd * g_sum * a_n_t
    s_hat = kd * (g_sum - b_sum) * a_n_t
    v_hat = avar(spot, f, tp, km)
    ci = confidence_interval(s_hat, v_hat, tp.delta_n, options.level)
    diagnostics = {
        "n_blocks": n_usable,
        "truncated_fraction_mean": float(spot.truncated_fraction.mean()),
        "psd_projected": int(spot.psd_projected.sum()),
        "guard_violations": int(guard_violations),
        "overlapping": False,
    }
    return EstimateReport(
        functional=f.name,
        functional_params=f.params,
        t=float(t),
        level=options.level,
        S_hat=s_hat,
        S_hat_raw=s_raw,
        bias_total=s_raw - s_hat,
        V_hat=v_hat,
        ci=ci,
        a_n_t=a_n_t,
        diagnostics=diagnostics,
    )


def _estimate_overlapping(
    obs: ObservationSet,
    f: Functional,
    tp: TuningParams,
    km: KernelMoments,
    options: InferenceOptions,
) -> EstimateReport:
    """Experimental overlapping-window variant of :func:`estimate`.

    Evaluates the spot estimator at every admissible start ``i`` and
    replaces the block weight ``k_n Delta_n`` by ``Delta_n``.  Costs
    O(n k_n) spot evaluations in a Python loop -- use at small ``n``.
    """
    n = obs.grid.n
    d = obs.d
    last = n - 1 - max(tp.k_n, tp.m_n)
    if last < 0:
        raise ValidationError(
            f"sample of {n} observations is too short for overlapping windows "
            f"of k_n = {tp.k_n}, m_n = {tp.m_n}"
        )
    starts = np.arange(0, last + 1, dtype=np.int64)
    c_hat = np.empty((starts.size, d, d))
    gamma_hat = np.empty((starts.size, d, d))
    fractions = np.empty(starts.size)
    projected = np.zeros(starts.size, dtype=bool)
    for idx, start in enumerate(starts):
        c_i, frac = spot_cov(
            obs,
            int(start),
            tp,
            km,
            noise_correction=options.noise_correction,
            engine=options.engine,
        )
        if options.psd_mode == "project":
            c_i, clipped = psd_project(c_i)
            projected[idx] = clipped
        c_hat[idx] = c_i
        fractions[idx] = frac
        gamma_hat[idx] = spot_noise(obs, int(start), tp)
    spot = SpotSeries(
        block_indices=starts,
        c_hat=c_hat,
        gamma_hat=gamma_hat,
        truncated_fraction=fractions,
        psd_projected=projected,
    )
    values, biases, gradients, xis, usable, guard_violations = _block_terms(
        spot, f, tp, km, want_gradient=True
    )
    r = f.output_size(d)
    g_sum = np.zeros(r)
    b_sum = np.zeros(r)
    v_hat = np.zeros((r, r))
    for i in np.flatnonzero(usable):
        g_sum += values[i]
        b_sum += biases[i]
        v_hat += np.einsum("ajk,blm,jklm->ab", gradients[i], gradients[i], xis[i].entries)
    n_usable = int(usable.sum())
    t = obs.grid.t
    a_n_t = t / (n_usable * tp.delta_n)
    s_raw = tp.delta_n * g_sum * a_n_t
    s_hat = tp.delta_n * (g_sum - b_sum) * a_n_t
    v_hat = 0.5 * (v_hat + v_hat.T) * tp.delta_n
    ci = confidence_interval(s_hat, v_hat, tp.delta_n, options.level)
    diagnostics = {
        "n_blocks": n_usable,
        "truncated_fraction_mean": float(fractions.mean()),
        "psd_projected": int(projected.sum()),
        "guard_violations": int(guard_violations),
        "overlapping": True,
    }
    return EstimateReport(
        functional=f.name,
        functional_params=f.params,
        t=float(t),
        level=options.level,
        S_hat=s_hat,
        S_hat_raw=s_raw,
        bias_total=s_raw - s_hat,
        V_hat=v_hat,
        ci=ci,
        a_n_t=a_n_t,
        diagnostics=diagnostics,
    )


def estimate(
    obs: ObservationSet,
    f: Functional,
    tp: TuningParams,
    km: KernelMoments,
    options: InferenceOptions | None = None,
) -> EstimateReport:
    """Bias-corrected integrated functional estimate with inference.

    Runs the block-wise spot estimator over the sample, evaluates the
    functional and its de-biasing term on every block, aggregates with
    the finite-sample adjustment, and attaches the plug-in asymptotic
    covariance and confidence intervals.  See the module docstring for
    the formulas.

    Parameters
    ----------
    obs : ObservationSet
    f : Functional
    tp : TuningParams
        Must be built for ``obs.grid.delta_n``.
    km : KernelMoments
        Discrete moments matching ``tp.l_n``.
    options : InferenceOptions, optional

    Returns
    -------
    EstimateReport

    Raises
    ------
    InsufficientDataError
        If the sample supports no complete block.
    NumericalError
        If every block violates the functional's guard beyond repair.
    """
    if options is None:
        options = InferenceOptions()
    if abs(obs.grid.delta_n - tp.delta_n) > 1e-12 * tp.delta_n:
        raise ValidationError(
            f"tuning delta_n = {tp.delta_n!r} does not match the observation "
            f"grid delta_n = {obs.grid.delta_n!r}"
        )
    if options.overlapping:
        return _estimate_overlapping(obs, f, tp, km, options)
    spot = spot_series(
        obs,
        tp,
        km,
        psd_mode=options.psd_mode,
        noise_correction=options.noise_correction,
        engine=options.engine,
    )
    return estimate_from_spot(spot, f, tp, km, obs.grid.t, options)
