"""Smoothing kernels for pre-averaging and their moment constants.

The local moving averages used by the spot estimators weight consecutive
increments with a kernel ``phi`` supported on ``(0, 1)``.  Everything the
estimators need from ``phi`` is collected in :class:`KernelMoments`:

* the discrete weights ``phi(h / l_n)`` for a window of ``l_n`` samples
  together with their squared sum ``psi_n``, and
* the continuous constants ``phi0(0)``, ``phi1(0)``,
  ``Phi_lm = int_0^1 phi_l(s) phi_m(s) ds`` and
  ``Psi_lm = int_0^1 s phi_l(s) phi_m(s) ds`` for ``l, m in {0, 1}``,
  where::

      phi0(s) = int_s^1 phi(u) phi(u - s) du
      phi1(s) = int_s^1 phi'(u) phi'(u - s) du

The continuous constants weight the asymptotic-covariance tensor and the
de-biasing term of the integrated estimator; the discrete weights define
the moving averages themselves.

The default kernel is the triangular ``phi(s) = min(s, 1 - s)``, for
which all constants are known in closed form::

    phi0(0) = 1/12        Phi_00 = 151/80640     Psi_00 = 103/322560
    phi1(0) = 1           Phi_01 = 1/96          Psi_01 = 1/5760
                          Phi_11 = 1/6           Psi_11 = 1/24

User-supplied kernels go through a quadrature path (trapezoidal lag
correlations accelerated by FFT, refined once by Richardson
extrapolation) with an explicit convergence check.

Examples
--------
>>> km = discrete_weights(default_kernel(), 4)
>>> km.weights.tolist()
[0.25, 0.5, 0.25]
>>> km.psi_n
0.375
>>> round(km.phi0_at_0 * 12, 15)
1.0
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.signal import fftconvolve

from .errors import NumericalError, ValidationError

__all__ = [
    "Kernel",
    "KernelMoments",
    "default_kernel",
    "discrete_weights",
    "continuous_moments",
]

#: Default panel count for the quadrature path (power of two; refined by
#: halving/doubling for the convergence check).
DEFAULT_PANELS = 2**14

_MIN_PANELS = 1000
_CONVERGENCE_TOL = 1e-10
_ENDPOINT_TOL = 1e-12

_CONSTANT_NAMES = (
    "phi0_at_0",
    "phi1_at_0",
    "Phi_00",
    "Phi_01",
    "Phi_11",
    "Psi_00",
    "Psi_01",
    "Psi_11",
)


@dataclass(frozen=True)
class Kernel:
    """A pre-averaging weight function on ``[0, 1]``.

    Parameters
    ----------
    evaluate : callable
        Vectorized map from points in ``[0, 1]`` (ndarray) to kernel
        values.  Must vanish at 0 and 1 and have positive energy
        ``int_0^1 evaluate(s)^2 ds > 0``.
    description : str
        Human-readable label used in reports and the CLI.
    derivative : callable, optional
        Vectorized piecewise derivative of ``evaluate``.  When omitted,
        ``phi1`` is built from central finite differences with step
        ``1 / (8 * panels)``, which is less accurate near kinks.
    """

    evaluate: Callable[[np.ndarray], np.ndarray]
    description: str
    derivative: Callable[[np.ndarray], np.ndarray] | None = None


@dataclass(frozen=True)
class KernelMoments:
    """Discrete weights and continuous constants derived from a kernel.

    The continuous constants are always populated.  The discrete part
    (``l_n``, ``weights``, ``psi_n``) is populated by
    :func:`discrete_weights` and left ``None`` by
    :func:`continuous_moments`, which only computes constants.
    """

    phi0_at_0: float
    phi1_at_0: float
    Phi_00: float
    Phi_01: float
    Phi_11: float
    Psi_00: float
    Psi_01: float
    Psi_11: float
    l_n: int | None = None
    weights: np.ndarray | None = None
    psi_n: float | None = None

    def __post_init__(self):
        if self.weights is not None:
            self.weights.setflags(write=False)

    def require_discrete(self) -> None:
        """Raise unless the discrete part (weights, psi_n) is populated."""
        if self.l_n is None or self.weights is None or self.psi_n is None:
            raise ValidationError(
                "KernelMoments lacks the discrete part; build it with "
                "discrete_weights(kernel, l_n)"
            )


def _triangular(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return np.minimum(s, 1.0 - s)


def _triangular_derivative(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return np.where(s < 0.5, 1.0, -1.0)


_TRIANGULAR = Kernel(
    evaluate=_triangular,
    description="triangular min(s, 1-s)",
    derivative=_triangular_derivative,
)

# Closed-form constants for the triangular kernel, verified against the
# symbolic-integration oracle frozen in the test suite.
_TRIANGULAR_CONSTANTS = {
    "phi0_at_0": 1.0 / 12.0,
    "phi1_at_0": 1.0,
    "Phi_00": 151.0 / 80640.0,
    "Phi_01": 1.0 / 96.0,
    "Phi_11": 1.0 / 6.0,
    "Psi_00": 103.0 / 322560.0,
    "Psi_01": 1.0 / 5760.0,
    "Psi_11": 1.0 / 24.0,
}


def default_kernel() -> Kernel:
    """Return the triangular kernel ``phi(s) = min(s, 1 - s)``.

    The same instance is returned on every call, which lets the moment
    routines use exact closed-form constants for it.

    Examples
    --------
    >>> k = default_kernel()
    >>> float(k.evaluate(0.5)), float(k.evaluate(0.25))
    (0.5, 0.25)
    >>> float(k.evaluate(0.0)), float(k.evaluate(1.0))
    (0.0, 0.0)
    """
    return _TRIANGULAR


def _default_phi0(s: np.ndarray) -> np.ndarray:
    """Closed-form ``phi0`` for the triangular kernel (piecewise cubic)."""
    s = np.asarray(s, dtype=float)
    low = 0.5 * s**3 - 0.5 * s**2 + 1.0 / 12.0
    high = -(s**3) / 6.0 + 0.5 * s**2 - 0.5 * s + 1.0 / 6.0
    return np.where(s <= 0.5, low, high)


def _default_phi1(s: np.ndarray) -> np.ndarray:
    """Closed-form ``phi1`` for the triangular kernel (piecewise linear)."""
    s = np.asarray(s, dtype=float)
    return np.where(s <= 0.5, 1.0 - 3.0 * s, s - 1.0)


def _validate_kernel(kernel: Kernel, grid_points: int = 2048) -> None:
    """Check the support, energy, and regularity conditions numerically.

    Regularity is tested by comparing the largest finite-difference
    quotient on a grid with the one on a twice-finer grid: for a
    piecewise-Lipschitz kernel the maximum quotient stabilizes, while a
    jump discontinuity makes it grow proportionally to the grid size.
    """
    ends = np.asarray(kernel.evaluate(np.array([0.0, 1.0])), dtype=float)
    if not np.all(np.isfinite(ends)) or np.max(np.abs(ends)) > _ENDPOINT_TOL:
        raise ValidationError(
            f"kernel {kernel.description!r} must vanish at 0 and 1; "
            f"got {ends[0]:.3e} and {ends[1]:.3e}"
        )
    grid = np.linspace(0.0, 1.0, grid_points + 1)
    values = np.asarray(kernel.evaluate(grid), dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValidationError(f"kernel {kernel.description!r} returned non-finite values")
    energy = np.trapezoid(values**2, grid)
    if not energy > 1e-12:
        raise ValidationError(
            f"kernel {kernel.description!r} has zero energy: int phi^2 = {energy:.3e}"
        )
    fine = np.linspace(0.0, 1.0, 2 * grid_points + 1)
    fine_values = np.asarray(kernel.evaluate(fine), dtype=float)
    coarse_quot = np.max(np.abs(np.diff(values))) * grid_points
    fine_quot = np.max(np.abs(np.diff(fine_values))) * 2 * grid_points
    if fine_quot > 1.5 * coarse_quot + 1e-9:
        raise ValidationError(
            f"kernel {kernel.description!r} is not piecewise Lipschitz: "
            f"difference quotients grew from {coarse_quot:.3e} to {fine_quot:.3e} "
            "under grid refinement"
        )


def discrete_weights(
    kernel: Kernel, l_n: int, *, quadrature_panels: int = DEFAULT_PANELS
) -> KernelMoments:
    """Build the complete :class:`KernelMoments` for a window of ``l_n`` samples.

    The discrete weights are ``phi(h / l_n)`` for ``h = 1 .. l_n - 1`` and
    ``psi_n`` is their squared sum.  Continuous constants come from closed
    forms for the default kernel and from quadrature otherwise.

    Parameters
    ----------
    kernel : Kernel
        The pre-averaging kernel.
    l_n : int
        Window length in samples; must be at least 2.
    quadrature_panels : int, optional
        Panel count for the quadrature path (ignored for the default
        kernel, which uses closed forms).

    Examples
    --------
    >>> km = discrete_weights(default_kernel(), 2)
    >>> km.weights.tolist(), km.psi_n
    ([0.5], 0.25)
    """
    if not isinstance(l_n, (int, np.integer)) or isinstance(l_n, bool):
        raise ValidationError(f"l_n must be an integer, got {l_n!r}")
    if l_n < 2:
        raise ValidationError(f"window length l_n must be >= 2, got {l_n}")
    _validate_kernel(kernel)
    h = np.arange(1, l_n, dtype=float) / float(l_n)
    weights = np.asarray(kernel.evaluate(h), dtype=float).copy()
    psi_n = float(weights @ weights)
    if not psi_n > 0.0:
        raise ValidationError(
            f"kernel {kernel.description!r} gives psi_n = {psi_n:.3e} <= 0 at l_n = {l_n}"
        )
    constants = _constants_for(kernel, quadrature_panels)
    return KernelMoments(**constants, l_n=int(l_n), weights=weights, psi_n=psi_n)


def continuous_moments(
    kernel: Kernel, quadrature_panels: int = DEFAULT_PANELS
) -> KernelMoments:
    """Compute only the continuous constants of a kernel.

    Parameters
    ----------
    kernel : Kernel
        The pre-averaging kernel.
    quadrature_panels : int
        Number of quadrature panels; at least 1000.  The result is
        Richardson-refined and checked for convergence: if one further
        refinement moves any constant by more than ``1e-10`` a
        :class:`~volfunc.errors.NumericalError` is raised.

    Returns
    -------
    KernelMoments
        With the discrete part (``l_n``, ``weights``, ``psi_n``) left
        ``None``.

    Examples
    --------
    >>> km = continuous_moments(default_kernel())
    >>> round(km.Phi_11, 12)
    0.166666666667
    """
    if quadrature_panels < _MIN_PANELS:
        raise ValidationError(
            f"quadrature_panels must be >= {_MIN_PANELS}, got {quadrature_panels}"
        )
    _validate_kernel(kernel)
    return KernelMoments(**_constants_for(kernel, quadrature_panels))


def _constants_for(kernel: Kernel, panels: int) -> dict[str, float]:
    if kernel is _TRIANGULAR:
        return dict(_TRIANGULAR_CONSTANTS)
    if panels < _MIN_PANELS:
        raise ValidationError(
            f"quadrature_panels must be >= {_MIN_PANELS}, got {panels}"
        )
    return _quadrature_constants(kernel, panels)


def _derivative_samples(kernel: Kernel, u: np.ndarray, step: float) -> np.ndarray:
    """Sample the kernel derivative on the grid ``u``.

    An analytic derivative is probed at ``u - delta`` and ``u + delta``
    (``delta = step / 8``) and averaged, so that a sample landing exactly
    on a jump of the derivative picks up the midpoint value; this keeps
    the trapezoidal error expansion in even powers of the grid step.  The
    finite-difference fallback uses central quotients with the same probe
    offset and second-order one-sided quotients at the endpoints.
    """
    delta = step / 8.0
    if kernel.derivative is not None:
        lo = np.clip(u - delta, 0.0, 1.0)
        hi = np.clip(u + delta, 0.0, 1.0)
        return 0.5 * (
            np.asarray(kernel.derivative(lo), dtype=float)
            + np.asarray(kernel.derivative(hi), dtype=float)
        )
    values_hi = np.asarray(kernel.evaluate(np.clip(u + delta, 0.0, 1.0)), dtype=float)
    values_lo = np.asarray(kernel.evaluate(np.clip(u - delta, 0.0, 1.0)), dtype=float)
    out = (values_hi - values_lo) / (2.0 * delta)
    # Second-order one-sided quotients where the central stencil would
    # leave the domain.
    f = lambda x: float(np.asarray(kernel.evaluate(np.array([x])), dtype=float)[0])
    out[0] = (-3.0 * f(0.0) + 4.0 * f(delta) - f(2.0 * delta)) / (2.0 * delta)
    out[-1] = (3.0 * f(1.0) - 4.0 * f(1.0 - delta) + f(1.0 - 2.0 * delta)) / (2.0 * delta)
    return out


def _derivative_square_samples(kernel: Kernel, u: np.ndarray, step: float) -> np.ndarray:
    """Sample ``phi'(u)^2`` as the average of the two one-sided squares.

    Where the derivative jumps at a grid node this yields
    ``(phi'(u-)^2 + phi'(u+)^2) / 2``, the correct trapezoidal node value
    for the integrand of ``phi1(0)``; at smooth points the one-sided
    errors cancel to second order in the probe offset.
    """
    delta = step / 8.0
    if kernel.derivative is not None:
        lo = np.asarray(kernel.derivative(np.clip(u - delta, 0.0, 1.0)), dtype=float)
        hi = np.asarray(kernel.derivative(np.clip(u + delta, 0.0, 1.0)), dtype=float)
        return 0.5 * (lo**2 + hi**2)
    values = lambda x: np.asarray(kernel.evaluate(np.clip(x, 0.0, 1.0)), dtype=float)
    left = (values(u) - values(u - 2.0 * delta)) / (2.0 * delta)
    right = (values(u + 2.0 * delta) - values(u)) / (2.0 * delta)
    # One-sided stencils that would leave [0, 1] fall back to the other side.
    left[0] = right[0]
    right[-1] = left[-1]
    return 0.5 * (left**2 + right**2)


def _lag_correlation(
    samples: np.ndarray, step: float, square_samples: np.ndarray | None = None
) -> np.ndarray:
    """Trapezoidal approximation of ``int_s^1 f(u) f(u - s) du`` on the grid.

    ``samples`` holds ``f`` at ``u_i = i * step``; entry ``j`` of the
    result approximates the integral at ``s = j * step``.  The raw lag
    sums come from an FFT correlation; the two endpoint terms of each lag
    get the trapezoidal half weight.

    At lag 0 the integrand is ``f(u)^2``; when ``f`` jumps at a node, the
    correct trapezoidal node value is the average of the two one-sided
    *squares*, not the square of the averaged sample, so the caller may
    pass ``square_samples`` holding ``f(u)^2`` sampled that way and lag 0
    is integrated from those directly.
    """
    n = samples.size - 1
    lags = fftconvolve(samples, samples[::-1], mode="full")[n:]
    endpoint = 0.5 * (samples * samples[0] + samples[n] * samples[::-1])
    out = step * (lags - endpoint)
    if square_samples is not None:
        out[0] = step * (
            np.sum(square_samples) - 0.5 * (square_samples[0] + square_samples[-1])
        )
    return out


def _grid_constants(kernel: Kernel, panels: int) -> dict[str, float]:
    """All constants from a single uniform grid with ``panels`` panels."""
    step = 1.0 / panels
    u = np.arange(panels + 1, dtype=float) * step
    phi = np.asarray(kernel.evaluate(u), dtype=float)
    dphi = _derivative_samples(kernel, u, step)
    phi0 = _lag_correlation(phi, step)
    phi1 = _lag_correlation(dphi, step, _derivative_square_samples(kernel, u, step))

    def outer(a: np.ndarray, b: np.ndarray, weight: np.ndarray | None) -> float:
        integrand = a * b if weight is None else weight * a * b
        return step * (np.sum(integrand) - 0.5 * (integrand[0] + integrand[-1]))

    return {
        "phi0_at_0": float(phi0[0]),
        "phi1_at_0": float(phi1[0]),
        "Phi_00": outer(phi0, phi0, None),
        "Phi_01": outer(phi0, phi1, None),
        "Phi_11": outer(phi1, phi1, None),
        "Psi_00": outer(phi0, phi0, u),
        "Psi_01": outer(phi0, phi1, u),
        "Psi_11": outer(phi1, phi1, u),
    }


def _quadrature_constants(kernel: Kernel, panels: int) -> dict[str, float]:
    """Richardson-extrapolated constants with a convergence check.

    The trapezoidal error on this family of integrals expands in even
    powers of the step, so one Richardson step ``(4 T(h) - T(2h)) / 3``
    removes the leading term.  Stability is certified by comparing the
    extrapolations at (panels/2, panels) and (panels, 2*panels).
    """
    n1 = max(4 * ((panels // 2 + 3) // 4), 4)
    n2 = 2 * n1
    n3 = 4 * n1
    t1 = _grid_constants(kernel, n1)
    t2 = _grid_constants(kernel, n2)
    t3 = _grid_constants(kernel, n3)
    refined = {}
    worst = 0.0
    for name in _CONSTANT_NAMES:
        r12 = (4.0 * t2[name] - t1[name]) / 3.0
        r23 = (4.0 * t3[name] - t2[name]) / 3.0
        worst = max(worst, abs(r23 - r12))
        refined[name] = r23
    if worst > _CONVERGENCE_TOL:
        raise NumericalError(
            f"kernel-moment quadrature did not converge for {kernel.description!r}: "
            f"refinement still moves constants by {worst:.3e} "
            f"(tolerance {_CONVERGENCE_TOL:.0e}); the kernel may be too rough"
        )
    return refined


def _kernel_autocovariances(
    kernel: Kernel, panels: int = DEFAULT_PANELS
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Grid samples of ``(s, phi0(s), phi1(s))`` for diagnostics and tests."""
    n = max(4 * ((panels + 3) // 4), 4)
    step = 1.0 / n
    u = np.arange(n + 1, dtype=float) * step
    phi = np.asarray(kernel.evaluate(u), dtype=float)
    dphi = _derivative_samples(kernel, u, step)
    phi1 = _lag_correlation(dphi, step, _derivative_square_samples(kernel, u, step))
    return u, _lag_correlation(phi, step), phi1
