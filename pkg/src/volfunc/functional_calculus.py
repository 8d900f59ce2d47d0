"""Covariance tensors and smooth matrix functionals with derivatives.

Two ingredients of plug-in inference on spot covariance functionals live
here:

* the rank-4 tensors ``sigma_tensor``, ``theta_tensor`` and
  ``xi_tensor`` that describe the asymptotic covariance structure of
  windowed spot estimates under noise, and
* a registry of built-in C^3 functionals ``g`` (entries, powers, log,
  trigonometric transforms, regression slopes, eigenvalues and
  eigenvectors) carrying analytic gradients and Hessians, plus
  ``fd_verify`` which checks those derivatives against central finite
  differences.

Derivative convention
---------------------
Functionals are defined on symmetric matrices.  Derivatives use the
balanced extension: every occurrence of ``c[j, k]`` is read as
``(c[j, k] + c[k, j]) / 2``, so the gradient matrix ``G`` is symmetric
and satisfies ``sum_{jk} G[j, k] M[j, k] = d/dt g(c + t M)`` for every
symmetric direction ``M``; likewise the Hessian is symmetric in
``(j, k)``, in ``(l, m)`` and under pair swap, and
``sum_{jklm} H[j,k,l,m] M[j,k] M[l,m] = d^2/dt^2 g(c + t M)``.
"""
from __future__ import annotations

import dataclasses
import math
from typing import Callable

import numpy as np

from .errors import GuardViolation, NumericalError, ValidationError
from .kernel_moments import KernelMoments

__all__ = [
    "Tensor4",
    "Functional",
    "sigma_tensor",
    "theta_tensor",
    "xi_tensor",
    "builtin",
    "builtin_names",
    "fd_verify",
]

# Guard scale factors: a functional whose derivatives blow up on a
# boundary (singular regression block, eigenvalue crossing) refuses
# inputs within these relative margins instead of returning garbage.
INVERSION_GUARD_RTOL = 1e-8
GAP_GUARD_RTOL = 1e-6


def _as_symmetric(c: np.ndarray, *, what: str = "c") -> np.ndarray:
    matrix = np.asarray(c, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValidationError(f"{what} must be a square matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValidationError(f"{what} entries must be finite")
    scale = float(np.abs(matrix).max()) if matrix.size else 0.0
    if scale > 0 and float(np.abs(matrix - matrix.T).max()) > 1e-8 * scale:
        raise ValidationError(f"{what} must be symmetric (tolerance 1e-8 relative)")
    return 0.5 * (matrix + matrix.T)


@dataclasses.dataclass(frozen=True)
class Tensor4:
    """Rank-4 tensor on matrix space, indexed ``entries[j, k, l, m]``.

    Attributes
    ----------
    d : int
        Matrix dimension.
    entries : ndarray, shape (d, d, d, d)
        Read-only entries.
    """

    d: int
    entries: np.ndarray

    def __post_init__(self) -> None:
        entries = np.ascontiguousarray(self.entries, dtype=float)
        if entries.shape != (self.d,) * 4:
            raise ValidationError(
                f"entries must have shape {(self.d,) * 4}, got {entries.shape}"
            )
        if not np.all(np.isfinite(entries)):
            raise ValidationError("tensor entries must be finite")
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)

    def quadratic_form(self, A: np.ndarray) -> float:
        """``sum_{jklm} A[j,k] entries[j,k,l,m] A[l,m]``."""
        A = np.asarray(A, dtype=float)
        return float(np.einsum("jk,jklm,lm->", A, self.entries, A))

    def apply(self, A: np.ndarray) -> np.ndarray:
        """Contract the trailing index pair: ``sum_{lm} entries[.,.,l,m] A[l,m]``."""
        A = np.asarray(A, dtype=float)
        return np.einsum("jklm,lm->jk", self.entries, A)


def sigma_tensor(x: np.ndarray) -> Tensor4:
    """Quadratic covariance tensor ``x[j,l] x[k,m] + x[j,m] x[k,l]``.

    For a centered Gaussian matrix estimate with covariance ``x``, this
    is the covariance tensor of its outer-product fluctuations; as a
    quadratic form on symmetric ``A`` it equals ``2 trace(A x A x)``,
    which is nonnegative for PSD ``x``.

    Parameters
    ----------
    x : ndarray, shape (d, d)
        Symmetric matrix.

    Returns
    -------
    Tensor4

    Examples
    --------
    >>> sigma_tensor(np.array([[0.2]])).entries[0, 0, 0, 0]  # 2 c**2
    np.float64(0.08)
    """
    x = _as_symmetric(x, what="x")
    entries = np.einsum("jl,km->jklm", x, x) + np.einsum("jm,kl->jklm", x, x)
    return Tensor4(d=x.shape[0], entries=entries)


def theta_tensor(x: np.ndarray, z: np.ndarray) -> Tensor4:
    """Mixed covariance tensor of two symmetric matrices.

    ``x[j,l] z[k,m] + x[j,m] z[k,l] + x[k,m] z[j,l] + x[k,l] z[j,m]``;
    satisfies ``theta_tensor(x, x) = 2 * sigma_tensor(x)`` and, as a
    quadratic form on symmetric ``A``, equals ``4 trace(A x A z)``.

    Parameters
    ----------
    x, z : ndarray, shape (d, d)
        Symmetric matrices.

    Returns
    -------
    Tensor4
    """
    x = _as_symmetric(x, what="x")
    z = _as_symmetric(z, what="z")
    if z.shape != x.shape:
        raise ValidationError(f"x and z must share a shape, got {x.shape} and {z.shape}")
    entries = (
        np.einsum("jl,km->jklm", x, z)
        + np.einsum("jm,kl->jklm", x, z)
        + np.einsum("km,jl->jklm", x, z)
        + np.einsum("kl,jm->jklm", x, z)
    )
    return Tensor4(d=x.shape[0], entries=entries)


def xi_tensor(x: np.ndarray, z: np.ndarray, theta: float, km: KernelMoments) -> Tensor4:
    """Asymptotic covariance tensor of a noise-corrected spot estimate.

    Combines the pure-diffusion, mixed and pure-noise contributions with
    the kernel cross-moments:

        Xi = (2 theta / phi0(0)**2) * ( Phi_00 * Sigma(x)
             + (Phi_01 / theta**2) * Theta(x, z)
             + (Phi_11 / theta**4) * Sigma(z) )

    where ``x`` is the spot covariance, ``z`` the noise covariance and
    ``theta`` the smoothing-window scale (``l_n ~ theta / sqrt(delta_n)``).

    Parameters
    ----------
    x, z : ndarray, shape (d, d)
        Symmetric spot and noise covariance matrices.
    theta : float
        Window scale, > 0.
    km : KernelMoments
        Kernel constants (continuous moments suffice).

    Returns
    -------
    Tensor4

    Examples
    --------
    d=1 with the default kernel: the exact rational value is
    608221/350000000 for x=0.04, z=2.5e-5, theta=1.

    >>> from volfunc.kernel_moments import default_kernel, continuous_moments
    >>> km = continuous_moments(default_kernel())
    >>> t = xi_tensor(np.array([[0.04]]), np.array([[2.5e-5]]), 1.0, km)
    >>> round(t.entries[0, 0, 0, 0], 12)
    0.001737774286
    """
    if not (isinstance(theta, (int, float)) and math.isfinite(theta) and theta > 0):
        raise ValidationError(f"theta must be finite and > 0, got {theta!r}")
    phi0 = float(km.phi0_at_0)
    lead = 2.0 * theta / phi0**2
    sig_x = sigma_tensor(x)
    mixed = theta_tensor(x, z)
    sig_z = sigma_tensor(z)
    entries = lead * (
        float(km.Phi_00) * sig_x.entries
        + (float(km.Phi_01) / theta**2) * mixed.entries
        + (float(km.Phi_11) / theta**4) * sig_z.entries
    )
    return Tensor4(d=sig_x.d, entries=entries)


# ---------------------------------------------------------------------------
# Functionals


@dataclasses.dataclass(frozen=True)
class Functional:
    """A C^3 functional of a symmetric matrix with analytic derivatives.

    Attributes
    ----------
    name : str
        Registry name.
    params : tuple of (str, value)
        Construction parameters, for reporting.
    r : int or None
        Output dimension when it does not depend on the input dimension
        (``None`` for dimension-dependent outputs; see
        :meth:`output_size`).
    value : callable
        ``c (d, d) -> (r,)`` vector.
    gradient : callable
        ``c -> (r, d, d)``, symmetric in the matrix index pair.
    hessian : callable
        ``c -> (r, d, d, d, d)``, symmetric in each pair and under pair
        swap.
    domain_guard : callable
        ``c -> bool``; evaluation outside the guard raises
        :class:`~volfunc.errors.GuardViolation` from :func:`fd_verify`
        and triggers the skip policy in downstream inference.
    guard_description : str
        Human-readable guard condition.
    """

    name: str
    params: tuple
    r: int | None
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    domain_guard: Callable[[np.ndarray], bool]
    guard_description: str

    def output_size(self, d: int) -> int:
        """Output dimension for input dimension ``d``."""
        if self.r is not None:
            return self.r
        if self.name == "regression_beta":
            return d - 1
        if self.name == "eigenvector":
            return d
        raise ValidationError(f"cannot resolve output size for functional {self.name!r}")

    def check_guard(self, c: np.ndarray) -> None:
        """Raise :class:`GuardViolation` when ``c`` violates the guard."""
        if not self.domain_guard(c):
            raise GuardViolation(
                f"functional {self.name!r} guard violated: {self.guard_description}"
            )


def _sym_basis(d: int) -> list[tuple[int, int, np.ndarray, float]]:
    """Symmetric unit directions (u, v, S_uv, divisor)."""
    basis = []
    for u in range(d):
        for v in range(u, d):
            direction = np.zeros((d, d))
            direction[u, v] = 1.0
            direction[v, u] = 1.0
            basis.append((u, v, direction, 2.0 - float(u == v)))
    return basis


def _entry_gradient_matrix(d: int, j: int, k: int) -> np.ndarray:
    """Balanced gradient of ``c -> c[j, k]``: 1 on the diagonal, else 1/2."""
    grad = np.zeros((d, d))
    if j == k:
        grad[j, j] = 1.0
    else:
        grad[j, k] = 0.5
        grad[k, j] = 0.5
    return grad


def _require_index(value, name: str) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 0:
        raise ValidationError(f"{name} must be a nonnegative integer, got {value!r}")
    return int(value)


def _check_dim(c: np.ndarray, needed: int, name: str) -> None:
    if c.shape[0] <= needed:
        raise ValidationError(
            f"functional {name!r} needs index {needed} but c has dimension {c.shape[0]}"
        )


def _make_entry(j: int, k: int) -> Functional:
    def value(c):
        c = _as_symmetric(c)
        _check_dim(c, max(j, k), "entry")
        return np.array([c[j, k]])

    def gradient(c):
        c = _as_symmetric(c)
        _check_dim(c, max(j, k), "entry")
        return _entry_gradient_matrix(c.shape[0], j, k)[None]

    def hessian(c):
        c = _as_symmetric(c)
        _check_dim(c, max(j, k), "entry")
        d = c.shape[0]
        return np.zeros((1, d, d, d, d))

    return Functional(
        name="entry",
        params=(("j", j), ("k", k)),
        r=1,
        value=value,
        gradient=gradient,
        hessian=hessian,
        domain_guard=lambda c: True,
        guard_description="none",
    )


def _make_power_entry(j: int, k: int, l: int, m: int) -> Functional:
    top = max(j, k, l, m)

    def value(c):
        c = _as_symmetric(c)
        _check_dim(c, top, "power_entry")
        return np.array([c[j, k] * c[l, m]])

    def gradient(c):
        c = _as_symmetric(c)
        _check_dim(c, top, "power_entry")
        d = c.shape[0]
        A = _entry_gradient_matrix(d, j, k)
        B = _entry_gradient_matrix(d, l, m)
        return (c[l, m] * A + c[j, k] * B)[None]

    def hessian(c):
        c = _as_symmetric(c)
        _check_dim(c, top, "power_entry")
        d = c.shape[0]
        A = _entry_gradient_matrix(d, j, k)
        B = _entry_gradient_matrix(d, l, m)
        mixed = np.einsum("uv,pq->uvpq", A, B)
        return (mixed + mixed.transpose(2, 3, 0, 1))[None]

    return Functional(
        name="power_entry",
        params=(("j", j), ("k", k), ("l", l), ("m", m)),
        r=1,
        value=value,
        gradient=gradient,
        hessian=hessian,
        domain_guard=lambda c: True,
        guard_description="none",
    )


def _make_log_scalar() -> Functional:
    def value(c):
        c = _as_symmetric(c)
        return np.array([math.log(c[0, 0])])

    def gradient(c):
        c = _as_symmetric(c)
        d = c.shape[0]
        grad = np.zeros((1, d, d))
        grad[0, 0, 0] = 1.0 / c[0, 0]
        return grad

    def hessian(c):
        c = _as_symmetric(c)
        d = c.shape[0]
        hess = np.zeros((1, d, d, d, d))
        hess[0, 0, 0, 0, 0] = -1.0 / c[0, 0] ** 2
        return hess

    return Functional(
        name="log_scalar",
        params=(),
        r=1,
        value=value,
        gradient=gradient,
        hessian=hessian,
        domain_guard=lambda c: float(np.asarray(c)[0, 0]) > 0.0,
        guard_description="c[0, 0] > 0",
    )


def _make_square_scalar() -> Functional:
    def value(c):
        c = _as_symmetric(c)
        return np.array([c[0, 0] ** 2])

    def gradient(c):
        c = _as_symmetric(c)
        d = c.shape[0]
        grad = np.zeros((1, d, d))
        grad[0, 0, 0] = 2.0 * c[0, 0]
        return grad

    def hessian(c):
        c = _as_symmetric(c)
        d = c.shape[0]
        hess = np.zeros((1, d, d, d, d))
        hess[0, 0, 0, 0, 0] = 2.0
        return hess

    return Functional(
        name="square_scalar",
        params=(),
        r=1,
        value=value,
        gradient=gradient,
        hessian=hessian,
        domain_guard=lambda c: True,
        guard_description="none",
    )


def _make_laplace(w: float) -> Functional:
    if not (isinstance(w, (int, float)) and math.isfinite(w)):
        raise ValidationError(f"laplace parameter w must be finite, got {w!r}")
    w = float(w)

    def value(c):
        c = _as_symmetric(c)
        arg = w * c[0, 0]
        return np.array([math.cos(arg), math.sin(arg)])

    def gradient(c):
        c = _as_symmetric(c)
        d = c.shape[0]
        arg = w * c[0, 0]
        grad = np.zeros((2, d, d))
        grad[0, 0, 0] = -w * math.sin(arg)
        grad[1, 0, 0] = w * math.cos(arg)
        return grad

    def hessian(c):
        c = _as_symmetric(c)
        d = c.shape[0]
        arg = w * c[0, 0]
        hess = np.zeros((2, d, d, d, d))
        hess[0, 0, 0, 0, 0] = -(w**2) * math.cos(arg)
        hess[1, 0, 0, 0, 0] = -(w**2) * math.sin(arg)
        return hess

    return Functional(
        name="laplace",
        params=(("w", w),),
        r=2,
        value=value,
        gradient=gradient,
        hessian=hessian,
        domain_guard=lambda c: True,
        guard_description="none (derivatives bounded by |w|**2)",
    )


def _assemble_directional(
    c: np.ndarray,
    r: int,
    first: Callable[[np.ndarray], np.ndarray],
    second: Callable[[np.ndarray, np.ndarray], np.ndarray] | None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Dense gradient/Hessian arrays from directional derivative closures.

    ``first(M)`` and ``second(M, P)`` return the directional derivatives
    of the (r,)-valued functional along symmetric directions.  The dense
    arrays follow from evaluating along the symmetric unit basis and
    dividing by the double-counting factor ``2 - delta_{uv}``.
    """
    d = c.shape[0]
    basis = _sym_basis(d)
    grad = np.zeros((r, d, d))
    firsts = []
    for u, v, direction, divisor in basis:
        df = first(direction)
        firsts.append(df)
        grad[:, u, v] = df / divisor
        grad[:, v, u] = df / divisor
    if second is None:
        return grad, None
    hess = np.zeros((r, d, d, d, d))
    for a, (u, v, du, divisor_a) in enumerate(basis):
        for b, (p, q, dp, divisor_b) in enumerate(basis):
            if b < a:
                continue
            d2 = second(du, dp) / (divisor_a * divisor_b)
            hess[:, u, v, p, q] = d2
            hess[:, v, u, p, q] = d2
            hess[:, u, v, q, p] = d2
            hess[:, v, u, q, p] = d2
            hess[:, p, q, u, v] = d2
            hess[:, q, p, u, v] = d2
            hess[:, p, q, v, u] = d2
            hess[:, q, p, v, u] = d2
    return grad, hess


def _regression_guard(c: np.ndarray) -> bool:
    c = np.asarray(c, dtype=float)
    d = c.shape[0]
    if d < 2:
        return False
    block = 0.5 * (c[:-1, :-1] + c[:-1, :-1].T)
    eps = INVERSION_GUARD_RTOL * float(np.trace(block)) / (d - 1)
    try:
        lam_min = float(np.linalg.eigvalsh(block)[0])
    except np.linalg.LinAlgError:
        return False
    return lam_min > eps


def _make_regression_beta() -> Functional:
    guard_text = (
        "min eigenvalue of the regressor block c[:-1, :-1] exceeds "
        f"{INVERSION_GUARD_RTOL:g} * trace / (d - 1)"
    )

    def pieces(c):
        c = _as_symmetric(c)
        if c.shape[0] < 2:
            raise ValidationError("regression_beta needs dimension d >= 2")
        if not _regression_guard(c):
            raise GuardViolation(f"functional 'regression_beta' guard violated: {guard_text}")
        css = c[:-1, :-1]
        csz = c[:-1, -1]
        try:
            inverse = np.linalg.inv(css)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"regressor block inversion failed: {exc}") from exc
        beta = inverse @ csz
        return c, inverse, beta

    def value(c):
        _, _, beta = pieces(c)
        return beta

    def first_factory(inverse, beta):
        def first(M):
            return inverse @ (M[:-1, -1] - M[:-1, :-1] @ beta)

        return first

    def gradient(c):
        c, inverse, beta = pieces(c)
        grad, _ = _assemble_directional(c, beta.shape[0], first_factory(inverse, beta), None)
        return grad

    def hessian(c):
        c, inverse, beta = pieces(c)
        first = first_factory(inverse, beta)

        def second(M, P):
            dm, dp = first(M), first(P)
            return -inverse @ (P[:-1, :-1] @ dm + M[:-1, :-1] @ dp)

        _, hess = _assemble_directional(c, beta.shape[0], first, second)
        return hess

    return Functional(
        name="regression_beta",
        params=(),
        r=None,
        value=value,
        gradient=gradient,
        hessian=hessian,
        domain_guard=_regression_guard,
        guard_description=guard_text,
    )


def _ordered_eigh(c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Descending eigenvalues with sign-canonicalized eigenvectors.

    The sign rule makes each column's largest-magnitude entry positive,
    so repeated evaluations (and finite-difference stencils) agree.
    """
    try:
        values, vectors = np.linalg.eigh(c)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(values)[::-1]
    values = values[order]
    vectors = vectors[:, order]
    for col in range(vectors.shape[1]):
        pivot = int(np.argmax(np.abs(vectors[:, col])))
        if vectors[pivot, col] < 0:
            vectors[:, col] = -vectors[:, col]
    return values, vectors


def _gap_guard_factory(idx: int):
    def guard(c):
        c = np.asarray(c, dtype=float)
        d = c.shape[0]
        if idx >= d:
            return False
        if d == 1:
            return True  # no other eigenvalue to collide with
        try:
            values = np.sort(np.linalg.eigvalsh(0.5 * (c + c.T)))[::-1]
        except np.linalg.LinAlgError:
            return False
        eps = max(GAP_GUARD_RTOL * float(np.trace(c)) / d, 1e-300)
        gaps = np.abs(values[idx] - np.delete(values, idx))
        return float(gaps.min()) > eps

    return guard


def _eig_directional(c: np.ndarray, idx: int):
    """Directional first/second derivative closures for eigenpair ``idx``."""
    values, vectors = _ordered_eigh(c)
    lam = values[idx]
    v = vectors[:, idx]
    others = np.delete(np.arange(c.shape[0]), idx)
    V = vectors[:, others]  # (d, d-1)
    inv_gaps = 1.0 / (lam - values[others])  # guarded: no zero gaps

    def lam_first(M):
        return np.array([v @ M @ v])

    def lam_second(M, P):
        mj = V.T @ (M @ v)
        pj = V.T @ (P @ v)
        return np.array([2.0 * np.sum(mj * pj * inv_gaps)])

    def vec_first(M):
        coef = (V.T @ (M @ v)) * inv_gaps
        return V @ coef

    def vec_second(M, P):
        dm, dp = vec_first(M), vec_first(P)
        lm, lp = float(v @ M @ v), float(v @ P @ v)
        coef = (V.T @ (M @ dp) + V.T @ (P @ dm) - lm * (V.T @ dp) - lp * (V.T @ dm)) * inv_gaps
        return V @ coef - float(dm @ dp) * v

    return lam, v, lam_first, lam_second, vec_first, vec_second


def _make_eigen(idx: int, want_vector: bool) -> Functional:
    name = "eigenvector" if want_vector else "eigenvalue"
    guard = _gap_guard_factory(idx)
    guard_text = (
        f"spectral gap around eigenvalue {idx} (descending order) exceeds "
        f"{GAP_GUARD_RTOL:g} * trace / d"
    )

    def prepared(c):
        c = _as_symmetric(c)
        _check_dim(c, idx, name)
        if not guard(c):
            raise GuardViolation(f"functional {name!r} guard violated: {guard_text}")
        return c

    def value(c):
        c = prepared(c)
        lam, v, *_ = _eig_directional(c, idx)
        return v.copy() if want_vector else np.array([lam])

    def gradient(c):
        c = prepared(c)
        _, v, lam_first, _, vec_first, _ = _eig_directional(c, idx)
        r = c.shape[0] if want_vector else 1
        first = vec_first if want_vector else lam_first
        grad, _ = _assemble_directional(c, r, first, None)
        return grad

    def hessian(c):
        c = prepared(c)
        _, v, lam_first, lam_second, vec_first, vec_second = _eig_directional(c, idx)
        r = c.shape[0] if want_vector else 1
        first = vec_first if want_vector else lam_first
        second = vec_second if want_vector else lam_second
        _, hess = _assemble_directional(c, r, first, second)
        return hess

    return Functional(
        name=name,
        params=(("idx", idx),),
        r=None if want_vector else 1,
        value=value,
        gradient=gradient,
        hessian=hessian,
        domain_guard=guard,
        guard_description=guard_text,
    )


_BUILTINS: dict[str, Callable[..., Functional]] = {
    "entry": lambda j, k: _make_entry(_require_index(j, "j"), _require_index(k, "k")),
    "power_entry": lambda j, k, l, m: _make_power_entry(
        _require_index(j, "j"),
        _require_index(k, "k"),
        _require_index(l, "l"),
        _require_index(m, "m"),
    ),
    "log_scalar": _make_log_scalar,
    "square_scalar": _make_square_scalar,
    "laplace": lambda w: _make_laplace(w),
    "regression_beta": _make_regression_beta,
    "eigenvalue": lambda idx: _make_eigen(_require_index(idx, "idx"), False),
    "eigenvector": lambda idx: _make_eigen(_require_index(idx, "idx"), True),
}


def builtin_names() -> tuple[str, ...]:
    """Registry names accepted by :func:`builtin`."""
    return tuple(sorted(_BUILTINS))


def builtin(name: str, **params) -> Functional:
    """Construct a registry functional by name.

    Available functionals (``c`` denotes the symmetric input matrix):

    ==================  =========================================  ========
    name                definition                                 params
    ==================  =========================================  ========
    entry               ``c[j, k]``                                j, k
    power_entry         ``c[j, k] * c[l, m]``                      j, k, l, m
    log_scalar          ``log(c[0, 0])``                           —
    square_scalar       ``c[0, 0]**2``                             —
    laplace             ``(cos(w c[0, 0]), sin(w c[0, 0]))``       w
    regression_beta     ``c[:-1, :-1]^{-1} c[:-1, -1]``            —
    eigenvalue          ``idx``-th eigenvalue, descending          idx
    eigenvector         its sign-canonicalized eigenvector         idx
    ==================  =========================================  ========

    Parameters
    ----------
    name : str
        Registry name.
    **params
        Functional-specific parameters (see table).

    Returns
    -------
    Functional

    Raises
    ------
    ValidationError
        Unknown name, or missing/invalid parameters.

    Examples
    --------
    >>> f = builtin("square_scalar")
    >>> f.value(np.array([[0.2]]))[0]
    np.float64(0.04000000000000001)
    >>> builtin("laplace", w=2.0).r
    2
    """
    if name not in _BUILTINS:
        raise ValidationError(
            f"unknown functional {name!r}: expected one of {builtin_names()}"
        )
    try:
        return _BUILTINS[name](**params)
    except TypeError as exc:
        raise ValidationError(f"invalid parameters for functional {name!r}: {exc}") from exc


def fd_verify(f: Functional, c: np.ndarray, h: float | None = None) -> float:
    """Worst relative deviation of analytic derivatives from central differences.

    Gradients are checked with 2-point central differences along every
    symmetric unit direction and Hessians with 4-point mixed differences
    along every direction pair.  Both estimates are Richardson-combined
    from steps ``h`` and ``h / 2`` (``(4 E(h/2) - E(h)) / 3``), cancelling
    the leading h^2 truncation term; deviations are scaled by the largest
    entry of the corresponding analytic array (floored at 1e-8).

    Parameters
    ----------
    f : Functional
    c : ndarray, shape (d, d)
        Evaluation point, strictly inside the guard domain (all stencil
        points are guard-checked too).
    h : float, optional
        Base step; default ``1e-4 * (1 + ||c||_F)`` keeps the residual
        h^4 truncation and the second-difference roundoff both well below
        1e-6 in relative terms.

    Returns
    -------
    float
        Maximum relative deviation over gradient and Hessian entries.

    Raises
    ------
    GuardViolation
        If ``c`` or any stencil point violates the functional's guard.
    """
    c = _as_symmetric(c)
    f.check_guard(c)
    d = c.shape[0]
    if h is None:
        h = 1e-4 * (1.0 + float(np.linalg.norm(c)))
    elif not (math.isfinite(h) and h > 0):
        raise ValidationError(f"step h must be finite and > 0, got {h!r}")

    def evaluate(point):
        f.check_guard(point)
        return np.asarray(f.value(point), dtype=float)

    grad = np.asarray(f.gradient(c), dtype=float)
    hess = np.asarray(f.hessian(c), dtype=float)
    basis = _sym_basis(d)
    center = np.asarray(f.value(c), dtype=float)

    def estimate(step):
        fd_g = np.zeros_like(grad)
        fd_h = np.zeros_like(hess)
        plus_cache, minus_cache = [], []
        for u, v, direction, divisor in basis:
            up = evaluate(c + step * direction)
            down = evaluate(c - step * direction)
            plus_cache.append(up)
            minus_cache.append(down)
            fd_g[:, u, v] = (up - down) / (2.0 * step * divisor)
            fd_g[:, v, u] = fd_g[:, u, v]
        for a, (u, v, du, div_a) in enumerate(basis):
            for b, (p, q, dp, div_b) in enumerate(basis):
                if b < a:
                    continue
                if a == b:
                    second = (plus_cache[a] - 2.0 * center + minus_cache[a]) / (step * step)
                else:
                    pp = evaluate(c + step * du + step * dp)
                    pm = evaluate(c + step * du - step * dp)
                    mp = evaluate(c - step * du + step * dp)
                    mm = evaluate(c - step * du - step * dp)
                    second = (pp - pm - mp + mm) / (4.0 * step * step)
                d2 = second / (div_a * div_b)
                for (i1, j1) in ((u, v), (v, u)):
                    for (i2, j2) in ((p, q), (q, p)):
                        fd_h[:, i1, j1, i2, j2] = d2
                        fd_h[:, i2, j2, i1, j1] = d2
        return fd_g, fd_h

    coarse_g, coarse_h = estimate(h)
    fine_g, fine_h = estimate(0.5 * h)
    fd_grad = (4.0 * fine_g - coarse_g) / 3.0
    fd_hess = (4.0 * fine_h - coarse_h) / 3.0
    grad_scale = max(float(np.abs(grad).max()), float(np.abs(fd_grad).max()), 1e-8)
    hess_scale = max(float(np.abs(hess).max()), float(np.abs(fd_hess).max()), 1e-8)
    grad_err = float(np.abs(fd_grad - grad).max()) / grad_scale
    hess_err = float(np.abs(fd_hess - hess).max()) / hess_scale
    return max(grad_err, hess_err)
