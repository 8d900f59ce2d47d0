"""Tests for covariance tensors and functional derivatives.

Hand-derived oracle values
--------------------------
xi_tensor, d=1, default kernel, theta=1, x=0.04, z=2.5e-5: exact
rational arithmetic with Phi_00=151/80640, Phi_01=1/96, Phi_11=1/6 and
phi0(0)=1/12 gives

    Xi = 288 * (Phi00*2*x^2 + Phi01*4*x*z + Phi11*2*z^2)
       = 608221/350000000 = 1.7377742857142857e-3

(noise-free part alone: 0.0017257142857142857).

regression_beta at c=[[1, 0.3], [0.3, 1]] (beta = 0.3): the balanced
derivatives of b/a with a=c00, b=c01 are

    G = [[-b/a^2, 1/(2a)], [1/(2a), 0]] = [[-0.3, 0.5], [0.5, 0.0]]
    H[0,0,0,0] = 2b/a^3 = 0.6,   H[0,0,0,1] = -1/(2a^2) = -0.5

eigenvalue(0) at [[2, 1], [1, 2]]: lambda = 3, v = (1,1)/sqrt(2), so the
gradient is vv^T = 0.25-free [[.5,.5],[.5,.5]] and the Hessian entry
H[0,0,0,0] = 2*(v' S00 v_1)^2/(3-1) = 0.25 (v_1 = (1,-1)/sqrt(2)).
"""
from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from volfunc.errors import GuardViolation, ValidationError
from volfunc.functional_calculus import (
    Functional,
    Tensor4,
    builtin,
    builtin_names,
    fd_verify,
    sigma_tensor,
    theta_tensor,
    xi_tensor,
)
from volfunc.kernel_moments import continuous_moments, default_kernel

XI_D1_ORACLE = 608221 / 350000000  # exact rational, see module docstring
XI_D1_NOISEFREE = 0.0017257142857142857


def random_psd(rng: np.random.Generator, d: int, ridge: float = 0.1) -> np.ndarray:
    root = rng.standard_normal((d, d))
    return root @ root.T + ridge * np.eye(d)


def random_gapped(rng: np.random.Generator, d: int) -> np.ndarray:
    """PSD matrix with well-separated eigenvalues (gap >= 0.5)."""
    values = np.arange(d, 0, -1) + 0.3 * rng.random(d)
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return (q * values) @ q.T


def taylor_residual(f: Functional, c: np.ndarray, direction: np.ndarray, t: float) -> float:
    """|g(c + tM) - [g + t<G,M> + t^2/2 M:H:M]| (max over outputs)."""
    value = np.asarray(f.value(c), dtype=float)
    grad = np.asarray(f.gradient(c), dtype=float)
    hess = np.asarray(f.hessian(c), dtype=float)
    linear = np.einsum("ajk,jk->a", grad, direction)
    quad = np.einsum("ajklm,jk,lm->a", hess, direction, direction)
    model = value + t * linear + 0.5 * t * t * quad
    actual = np.asarray(f.value(c + t * direction), dtype=float)
    return float(np.abs(actual - model).max())


# ---------------------------------------------------------------------------
# tensors


def test_sigma_tensor_d1_collapse():
    t = sigma_tensor(np.array([[0.2]]))
    assert t.entries[0, 0, 0, 0] == pytest.approx(0.08, rel=1e-14)  # 2 c^2


def test_sigma_tensor_identity_entries():
    t = sigma_tensor(np.eye(2))
    assert t.entries[0, 0, 0, 0] == 2.0
    assert t.entries[0, 1, 0, 1] == 1.0
    assert t.entries[0, 0, 1, 1] == 0.0


def test_theta_tensor_d1_and_substitution():
    assert theta_tensor(np.array([[3.0]]), np.array([[5.0]])).entries[0, 0, 0, 0] == 60.0
    rng = np.random.default_rng(5)
    x = random_psd(rng, 3)
    np.testing.assert_allclose(
        theta_tensor(x, x).entries, 2.0 * sigma_tensor(x).entries, rtol=1e-13
    )


def test_tensor_entries_match_formula_exhaustive():
    # Exhaustive index check of both definitions for d <= 4.
    rng = np.random.default_rng(7)
    for d in (1, 2, 3, 4):
        x, z = random_psd(rng, d), random_psd(rng, d)
        sig = sigma_tensor(x).entries
        the = theta_tensor(x, z).entries
        for j, k, l, m in itertools.product(range(d), repeat=4):
            assert sig[j, k, l, m] == pytest.approx(
                x[j, l] * x[k, m] + x[j, m] * x[k, l], rel=1e-12, abs=1e-12
            )
            assert the[j, k, l, m] == pytest.approx(
                x[j, l] * z[k, m] + x[j, m] * z[k, l] + x[k, m] * z[j, l] + x[k, l] * z[j, m],
                rel=1e-12,
                abs=1e-12,
            )


def test_tensor_index_symmetries():
    rng = np.random.default_rng(11)
    km = continuous_moments(default_kernel())
    for d in (2, 3, 4):
        x, z = random_psd(rng, d), random_psd(rng, d)
        # Sigma is bit-symmetric (the two products just swap under j<->k);
        # Xi's Theta term re-orders a four-product sum, so compare to ulp-level
        # tolerance there.
        sig = sigma_tensor(x).entries
        np.testing.assert_array_equal(sig, sig.transpose(1, 0, 2, 3))
        np.testing.assert_array_equal(sig, sig.transpose(0, 1, 3, 2))
        xi = xi_tensor(x, z, 1.3, km).entries
        scale = float(np.abs(xi).max())
        for perm in ((1, 0, 2, 3), (0, 1, 3, 2), (2, 3, 0, 1)):
            np.testing.assert_allclose(xi, xi.transpose(perm), atol=1e-13 * scale)


def test_tensor_trace_identities():
    # A:Sigma(x):A = 2 tr(AxAx) and A:Theta(x,z):A = 4 tr(AxAz).
    rng = np.random.default_rng(13)
    for _ in range(50):
        d = int(rng.integers(1, 5))
        x, z = random_psd(rng, d), random_psd(rng, d)
        raw = rng.standard_normal((d, d))
        A = 0.5 * (raw + raw.T)
        sig_form = sigma_tensor(x).quadratic_form(A)
        the_form = theta_tensor(x, z).quadratic_form(A)
        assert sig_form == pytest.approx(2.0 * np.trace(A @ x @ A @ x), rel=1e-10)
        assert the_form == pytest.approx(4.0 * np.trace(A @ x @ A @ z), rel=1e-10)
        assert sig_form >= -1e-10
        assert the_form >= -1e-10


def test_xi_tensor_d1_frozen_value():
    km = continuous_moments(default_kernel())
    xi = xi_tensor(np.array([[0.04]]), np.array([[2.5e-5]]), 1.0, km)
    assert xi.entries[0, 0, 0, 0] == pytest.approx(XI_D1_ORACLE, rel=1e-12)
    noise_free = xi_tensor(np.array([[0.04]]), np.array([[0.0]]), 1.0, km)
    assert noise_free.entries[0, 0, 0, 0] == pytest.approx(XI_D1_NOISEFREE, rel=1e-12)


def test_xi_tensor_noise_scaling():
    # Doubling z multiplies the Sigma(z) term by 4 and the Theta term by 2.
    rng = np.random.default_rng(17)
    km = continuous_moments(default_kernel())
    x, z = random_psd(rng, 3), 1e-4 * random_psd(rng, 3)
    theta = 0.8
    base = xi_tensor(x, np.zeros((3, 3)), theta, km).entries
    with_z = xi_tensor(x, z, theta, km).entries
    with_2z = xi_tensor(x, 2.0 * z, theta, km).entries
    lead = 2.0 * theta / float(km.phi0_at_0) ** 2
    theta_term = lead * (float(km.Phi_01) / theta**2) * theta_tensor(x, z).entries
    sigma_term = lead * (float(km.Phi_11) / theta**4) * sigma_tensor(z).entries
    np.testing.assert_allclose(with_z, base + theta_term + sigma_term, rtol=1e-12)
    np.testing.assert_allclose(
        with_2z, base + 2.0 * theta_term + 4.0 * sigma_term, rtol=1e-11
    )


def test_xi_tensor_psd_quadratic_form():
    rng = np.random.default_rng(19)
    km = continuous_moments(default_kernel())
    x, z = random_psd(rng, 3), 1e-4 * random_psd(rng, 3)
    xi = xi_tensor(x, z, 1.0, km)
    for _ in range(1000):
        raw = rng.standard_normal((3, 3))
        A = 0.5 * (raw + raw.T)
        assert xi.quadratic_form(A) >= -1e-10


def test_xi_tensor_rejects_bad_theta():
    km = continuous_moments(default_kernel())
    with pytest.raises(ValidationError, match="theta"):
        xi_tensor(np.eye(2), np.eye(2), 0.0, km)


def test_tensor4_validation():
    with pytest.raises(ValidationError, match="shape"):
        Tensor4(d=2, entries=np.zeros((2, 2, 2)))
    t = sigma_tensor(np.eye(2))
    with pytest.raises(ValueError):
        t.entries[0, 0, 0, 0] = 1.0


# ---------------------------------------------------------------------------
# builtin registry: hand values


def test_square_scalar_hand_values():
    f = builtin("square_scalar")
    c = np.array([[0.2]])
    assert f.value(c)[0] == pytest.approx(0.04, rel=1e-14)
    assert f.gradient(c)[0, 0, 0] == pytest.approx(0.4, rel=1e-14)
    assert f.hessian(c)[0, 0, 0, 0, 0] == 2.0


def test_log_scalar_hand_values():
    f = builtin("log_scalar")
    c = np.array([[1.0]])
    assert f.value(c)[0] == 0.0
    assert f.gradient(c)[0, 0, 0] == 1.0
    assert f.hessian(c)[0, 0, 0, 0, 0] == -1.0
    with pytest.raises(GuardViolation, match="log_scalar"):
        f.check_guard(np.array([[-0.5]]))


def test_entry_gradient_halves_off_diagonal():
    f = builtin("entry", j=0, k=1)
    c = np.array([[1.0, 0.3], [0.3, 2.0]])
    assert f.value(c)[0] == pytest.approx(0.3)
    np.testing.assert_allclose(f.gradient(c)[0], [[0.0, 0.5], [0.5, 0.0]], atol=1e-15)
    assert np.all(f.hessian(c) == 0.0)
    diag = builtin("entry", j=1, k=1)
    np.testing.assert_allclose(diag.gradient(c)[0], [[0.0, 0.0], [0.0, 1.0]], atol=1e-15)


def test_power_entry_hand_values():
    f = builtin("power_entry", j=0, k=1, l=0, m=1)
    c = np.array([[1.0, 0.3], [0.3, 1.0]])
    assert f.value(c)[0] == pytest.approx(0.09, rel=1e-14)
    np.testing.assert_allclose(f.gradient(c)[0], [[0.0, 0.3], [0.3, 0.0]], atol=1e-15)
    hess = f.hessian(c)[0]
    assert hess[0, 1, 0, 1] == pytest.approx(0.5)
    assert hess[0, 1, 1, 0] == pytest.approx(0.5)
    assert hess[0, 0, 0, 0] == 0.0


def test_laplace_hand_values():
    f = builtin("laplace", w=2.0)
    c = np.array([[0.5]])
    np.testing.assert_allclose(f.value(c), [math.cos(1.0), math.sin(1.0)], rtol=1e-14)
    grad = f.gradient(c)
    assert grad[0, 0, 0] == pytest.approx(-2.0 * math.sin(1.0), rel=1e-14)
    assert grad[1, 0, 0] == pytest.approx(2.0 * math.cos(1.0), rel=1e-14)
    hess = f.hessian(c)
    assert hess[0, 0, 0, 0, 0] == pytest.approx(-4.0 * math.cos(1.0), rel=1e-14)


def test_laplace_hessian_bound():
    # Frobenius norm of the stacked Hessian is w^2 * sqrt(cos^2 + sin^2) = w^2,
    # within the documented w^2 * sqrt(2) bound, for every input.
    rng = np.random.default_rng(23)
    f = builtin("laplace", w=3.5)
    for _ in range(100):
        c = np.array([[10.0 * rng.standard_normal()]])
        assert np.linalg.norm(f.hessian(c)) <= 3.5**2 * math.sqrt(2.0) + 1e-12


def test_regression_beta_hand_values():
    f = builtin("regression_beta")
    c = np.array([[1.0, 0.3], [0.3, 1.0]])
    assert f.value(c)[0] == pytest.approx(0.3, rel=1e-14)
    np.testing.assert_allclose(f.gradient(c)[0], [[-0.3, 0.5], [0.5, 0.0]], atol=1e-13)
    hess = f.hessian(c)[0]
    assert hess[0, 0, 0, 0] == pytest.approx(0.6, rel=1e-12)
    assert hess[0, 0, 0, 1] == pytest.approx(-0.5, rel=1e-12)
    assert f.output_size(2) == 1
    assert f.output_size(4) == 3


def test_eigenvalue_hand_values():
    f = builtin("eigenvalue", idx=0)
    assert f.value(np.diag([2.0, 1.0]))[0] == 2.0
    np.testing.assert_allclose(
        f.gradient(np.diag([2.0, 1.0]))[0], [[1.0, 0.0], [0.0, 0.0]], atol=1e-13
    )
    c = np.array([[2.0, 1.0], [1.0, 2.0]])
    assert f.value(c)[0] == pytest.approx(3.0, rel=1e-14)
    np.testing.assert_allclose(f.gradient(c)[0], 0.5 * np.ones((2, 2)), atol=1e-13)
    assert f.hessian(c)[0, 0, 0, 0, 0] == pytest.approx(0.25, rel=1e-10)
    second = builtin("eigenvalue", idx=1)
    assert second.value(c)[0] == pytest.approx(1.0, rel=1e-14)


def test_eigenvector_sign_canonical():
    f = builtin("eigenvector", idx=0)
    v = f.value(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(v, [1.0, 0.0], atol=1e-14)
    # The sign rule survives a basis where eigh might flip signs.
    rng = np.random.default_rng(29)
    c = random_gapped(rng, 3)
    v1 = f.value(c)
    v2 = f.value(c.copy())
    np.testing.assert_array_equal(v1, v2)
    assert v1[np.argmax(np.abs(v1))] > 0


# ---------------------------------------------------------------------------
# Taylor-expansion oracle (independent of fd_verify)


def test_power_entry_taylor_exact():
    # Quadratic functional: the second-order model is exact.
    rng = np.random.default_rng(31)
    f = builtin("power_entry", j=0, k=1, l=1, m=1)
    c = random_psd(rng, 3)
    raw = rng.standard_normal((3, 3))
    direction = 0.5 * (raw + raw.T)
    assert taylor_residual(f, c, direction, 0.3) < 1e-12


@pytest.mark.parametrize(
    "name,params,dim",
    [
        ("log_scalar", {}, 1),
        ("laplace", {"w": 1.7}, 1),
        ("regression_beta", {}, 3),
        ("eigenvalue", {"idx": 1}, 3),
        ("eigenvector", {"idx": 0}, 3),
    ],
)
def test_taylor_third_order(name, params, dim):
    # The quadratic model's residual must shrink at the cubic rate: at
    # t=1e-2 below 1e-4 and at t=1e-3 below 1e-7 (coefficient < 100).
    rng = np.random.default_rng(abs(hash(name)) % 2**31)
    f = builtin(name, **params)
    c = random_gapped(rng, dim) if name.startswith("eigen") else random_psd(rng, dim, ridge=0.5)
    raw = rng.standard_normal((dim, dim))
    direction = 0.5 * (raw + raw.T)
    direction /= np.linalg.norm(direction)
    assert taylor_residual(f, c, direction, 1e-2) < 1e-4
    assert taylor_residual(f, c, direction, 1e-3) < 1e-7


# ---------------------------------------------------------------------------
# fd_verify


@pytest.mark.parametrize(
    "name,params,dim",
    [
        ("entry", {"j": 0, "k": 1}, 2),
        ("power_entry", {"j": 0, "k": 1, "l": 1, "m": 1}, 2),
        ("log_scalar", {}, 1),
        ("square_scalar", {}, 1),
        ("laplace", {"w": 2.2}, 1),
        ("regression_beta", {}, 2),
        ("regression_beta", {}, 4),
        ("eigenvalue", {"idx": 0}, 3),
        ("eigenvalue", {"idx": 2}, 3),
        ("eigenvector", {"idx": 1}, 3),
    ],
)
def test_fd_verify_all_builtins(name, params, dim):
    rng = np.random.default_rng(abs(hash((name, dim))) % 2**31)
    f = builtin(name, **params)
    for _ in range(10):
        c = random_gapped(rng, dim) if name.startswith("eigen") else random_psd(rng, dim, ridge=0.5)
        assert fd_verify(f, c) < 1e-6


def test_fd_verify_catches_wrong_gradient():
    good = builtin("square_scalar")
    bad = Functional(
        name="square_scalar_broken",
        params=(),
        r=1,
        value=good.value,
        gradient=lambda c: 1.1 * good.gradient(c),  # 10% error
        hessian=good.hessian,
        domain_guard=good.domain_guard,
        guard_description=good.guard_description,
    )
    assert fd_verify(bad, np.array([[0.5]])) > 1e-2


def test_fd_verify_guard_violation():
    f = builtin("regression_beta")
    # lambda_min(c[:-1,:-1]) = 0 is inside no guard.
    singular = np.array([[1.0, 1.0, 0.2], [1.0, 1.0, 0.1], [0.2, 0.1, 1.0]])
    with pytest.raises(GuardViolation, match="regression_beta"):
        fd_verify(f, singular)
    eig = builtin("eigenvalue", idx=0)
    with pytest.raises(GuardViolation, match="spectral gap"):
        fd_verify(eig, np.eye(3))


def test_gradient_hessian_symmetry():
    rng = np.random.default_rng(37)
    for name, params, dim in (
        ("regression_beta", {}, 3),
        ("eigenvector", {"idx": 0}, 3),
        ("eigenvalue", {"idx": 1}, 3),
    ):
        f = builtin(name, **params)
        c = random_gapped(rng, dim)
        grad = f.gradient(c)
        hess = f.hessian(c)
        np.testing.assert_allclose(grad, grad.transpose(0, 2, 1), atol=1e-12)
        np.testing.assert_allclose(hess, hess.transpose(0, 2, 1, 3, 4), atol=1e-12)
        np.testing.assert_allclose(hess, hess.transpose(0, 3, 4, 1, 2), atol=1e-12)


def test_builtin_registry_errors():
    with pytest.raises(ValidationError, match="unknown functional"):
        builtin("cubic_scalar")
    with pytest.raises(ValidationError, match="invalid parameters"):
        builtin("laplace")  # missing w
    with pytest.raises(ValidationError, match="finite"):
        builtin("laplace", w=np.inf)
    with pytest.raises(ValidationError, match="nonnegative"):
        builtin("eigenvalue", idx=-1)
    with pytest.raises(ValidationError, match="dimension"):
        builtin("eigenvalue", idx=3).value(np.eye(2))
    assert "regression_beta" in builtin_names()


def test_guard_epsilon_scales_with_trace():
    # regression guard: lambda_min must exceed 1e-8 * trace/(d-1); a block
    # with lambda_min at half that margin is rejected.
    f = builtin("regression_beta")
    trace_scale = 2.0
    eps = 1e-8 * trace_scale / 1
    lam_small = 0.5 * eps
    c = np.array([[trace_scale - lam_small, 0.0, 0.1], [0.0, lam_small, 0.0], [0.1, 0.0, 1.0]])
    # Move the tiny eigenvalue into the regressor block: use d=3 with S block 2x2.
    assert not f.domain_guard(c)
    with pytest.raises(GuardViolation):
        f.check_guard(c)
