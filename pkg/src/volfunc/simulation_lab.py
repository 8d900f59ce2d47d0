"""Synthetic path generation for estimator verification.

Scenarios
---------
``heston_jumps``
    Univariate jump-diffusion with mean-reverting stochastic volatility:

    .. math::

        dX_t &= b\\,dt + \\sqrt{c_t}\\,dW_t + dJ^X_t, \\\\
        dc_t &= \\kappa(\\bar c - c_t)\\,dt
                + \\eta\\sqrt{c_t}\\,dB_t + \\sqrt{c_{t-}}\\,dJ^c_t,

    with ``corr(dW, dB) = rho`` (leverage), compound-Poisson price jumps
    (``N(jump_mean, jump_sd^2)`` sizes), multiplicative volatility jumps
    (log-normal sizes), and i.i.d. Gaussian observation noise added to
    ``X``.  The default parameters are per-day quantities on a one-second
    grid (``delta_n = 1/23400`` day).
``constant_vol``
    Brownian motion with a fixed covariance matrix; supports drift,
    price jumps, and noise.  The workhorse for closed-form checks.
``regression_factor``
    Constant-covariance factor model: the last component is
    ``Z = beta' S + R`` for factors ``S`` with volatility ``sigma_s``
    and residual volatility ``sigma_r``, so the regression functional of
    the latent covariance equals ``beta`` at every instant.
``custom``
    A tag for bundles built programmatically; :func:`simulate` rejects it.

The Euler scheme uses full truncation (``sqrt(max(c, 0))``) so the
simulated covariance stays nonnegative even when the Feller condition
fails.  Each replication draws from four counter-based Philox streams
(brownian / price_jumps / vol_jumps / noise) keyed by
``(seed, replication, channel)``, so replications are reproducible and
independent regardless of execution order, and enlarging one channel's
consumption never perturbs another.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._spot_backend import get_backend
from .errors import ValidationError
from .functional_calculus import Functional
from .sampling_core import ObservationSet, PathBundle, RegularGrid, save_csv

__all__ = [
    "SCENARIO_KINDS",
    "ScenarioConfig",
    "channel_rng",
    "save_bundle",
    "simulate",
    "simulate_regression",
    "true_functional",
]

SCENARIO_KINDS = ("heston_jumps", "constant_vol", "regression_factor", "custom")

_CHANNELS = {"brownian": 0, "price_jumps": 1, "vol_jumps": 2, "noise": 3}


def channel_rng(seed: int, replication: int, channel: str) -> np.random.Generator:
    """Independent counter-based stream for one (seed, replication, channel).

    The Philox key packs the replication index and a channel id into the
    second 64-bit word, so streams never overlap across replications or
    channels under a fixed seed.

    Examples
    --------
    >>> a = channel_rng(7, 0, "noise").standard_normal(3)
    >>> b = channel_rng(7, 0, "noise").standard_normal(3)
    >>> bool((a == b).all())
    True
    """
    if channel not in _CHANNELS:
        raise ValidationError(
            f"unknown RNG channel {channel!r}; expected one of {sorted(_CHANNELS)}"
        )
    if not (0 <= replication < 2**56):
        raise ValidationError(f"replication must be in [0, 2^56), got {replication}")
    key = np.array(
        [np.uint64(seed % 2**64), np.uint64((replication << 8) | _CHANNELS[channel])],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class ScenarioConfig:
    """Parameters of a synthetic scenario.

    Quantities are per day: ``delta_n`` is a day fraction, intensities
    are expected jump counts per day, and drift / volatility parameters
    are daily.  ``n = round(days / delta_n)`` observations are produced.

    Attributes
    ----------
    kind : str
        One of :data:`SCENARIO_KINDS`.
    d : int
        Path dimension (``heston_jumps`` requires 1,
        ``regression_factor`` requires >= 2).
    delta_n : float
        Observation spacing in days (default one second).
    days : float
        Horizon.
    drift : float
        Price drift per day.
    mean_reversion, vol_level, vol_of_vol, leverage : float
        Volatility dynamics ``dc = mean_reversion (vol_level - c) dt
        + vol_of_vol sqrt(c) dB`` with ``corr(dW, dB) = leverage``.
    c0 : float or None
        Initial spot variance; defaults to ``vol_level``.
    constant_c : float or (d, d) array-like
        Covariance for ``constant_vol`` (scalar means ``c * I``).
    price_jump_intensity, price_jump_mean, price_jump_sd : float
        Compound-Poisson price jumps (intensity per day).
    vol_jump_intensity, vol_jump_log_mean, vol_jump_log_var : float
        Multiplicative volatility jumps: log sizes are
        ``N(vol_jump_log_mean, vol_jump_log_var)``.
    noise_sd : float or sequence
        Observation-noise standard deviation (scalar or per component).
    beta : float or sequence
        Regression loadings (length ``d - 1``) for ``regression_factor``.
    sigma_s, sigma_r : float
        Factor and residual volatilities for ``regression_factor``.
    seed, replication : int
        RNG stream selectors.
    sub_steps : int
        Euler sub-steps per observation interval (1 = step equals the
        observation spacing).
    """

    kind: str
    d: int = 1
    delta_n: float = 1.0 / 23400.0
    days: float = 1.0
    drift: float = 0.03
    mean_reversion: float = 6.0
    vol_level: float = 0.16
    vol_of_vol: float = 0.5
    leverage: float = -0.6
    c0: float | None = None
    constant_c: object = 0.04
    price_jump_intensity: float = 36.0
    price_jump_mean: float = -0.01
    price_jump_sd: float = 0.02
    vol_jump_intensity: float = 12.0
    vol_jump_log_mean: float = -5.0
    vol_jump_log_var: float = 0.8
    noise_sd: object = 0.005
    beta: object = 0.3
    sigma_s: float = 0.2
    sigma_r: float = 0.1
    seed: int = 0
    replication: int = 0
    sub_steps: int = 1

    def __post_init__(self) -> None:
        if self.kind not in SCENARIO_KINDS:
            raise ValidationError(
                f"kind must be one of {SCENARIO_KINDS}, got {self.kind!r}"
            )
        if not (isinstance(self.d, (int, np.integer)) and self.d >= 1):
            raise ValidationError(f"dimension d must be an integer >= 1, got {self.d!r}")
        if self.kind == "heston_jumps" and self.d != 1:
            raise ValidationError("heston_jumps is a univariate scenario (d = 1)")
        if self.kind == "regression_factor" and self.d < 2:
            raise ValidationError("regression_factor requires d >= 2")
        if not (self.delta_n > 0 and math.isfinite(self.delta_n)):
            raise ValidationError(f"delta_n must be finite and > 0, got {self.delta_n!r}")
        if not (self.days > 0 and math.isfinite(self.days)):
            raise ValidationError(f"days must be finite and > 0, got {self.days!r}")
        if self.n < 2:
            raise ValidationError(
                f"days / delta_n must give at least 2 observations, got {self.n}"
            )
        for name in ("price_jump_intensity", "vol_jump_intensity"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)!r}")
        if self.vol_level <= 0:
            raise ValidationError(f"vol_level must be > 0, got {self.vol_level!r}")
        if not -1.0 <= self.leverage <= 1.0:
            raise ValidationError(f"|leverage| must be <= 1, got {self.leverage!r}")
        if self.c0 is not None and self.c0 < 0:
            raise ValidationError(f"c0 must be >= 0, got {self.c0!r}")
        if self.vol_jump_log_var < 0:
            raise ValidationError(
                f"vol_jump_log_var must be >= 0, got {self.vol_jump_log_var!r}"
            )
        if not (isinstance(self.sub_steps, (int, np.integer)) and self.sub_steps >= 1):
            raise ValidationError(f"sub_steps must be an integer >= 1, got {self.sub_steps!r}")
        if np.any(np.atleast_1d(np.asarray(self.noise_sd, dtype=float)) < 0):
            raise ValidationError("noise_sd must be nonnegative")
        if self.sigma_s <= 0 or self.sigma_r < 0:
            raise ValidationError(
                f"sigma_s must be > 0 and sigma_r >= 0, got {self.sigma_s!r}, {self.sigma_r!r}"
            )
        if not (0 <= self.replication < 2**56):
            raise ValidationError(f"replication must be in [0, 2^56), got {self.replication!r}")

    @property
    def n(self) -> int:
        """Number of observations: ``round(days / delta_n)``."""
        return int(round(self.days / self.delta_n))

    def noise_vector(self) -> np.ndarray:
        """Per-component noise standard deviations, shape (d,)."""
        arr = np.atleast_1d(np.asarray(self.noise_sd, dtype=float))
        if arr.shape == (1,):
            arr = np.full(self.d, arr[0])
        if arr.shape != (self.d,):
            raise ValidationError(
                f"noise_sd must be a scalar or length-{self.d} sequence, got shape {arr.shape}"
            )
        return arr

    def beta_vector(self) -> np.ndarray:
        """Regression loadings, shape (d - 1,)."""
        arr = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if arr.shape == (1,) and self.d > 2:
            arr = np.full(self.d - 1, arr[0])
        if arr.shape != (self.d - 1,):
            raise ValidationError(
                f"beta must be a scalar or length-{self.d - 1} sequence, got shape {arr.shape}"
            )
        return arr

    def regression_cov(self) -> np.ndarray:
        """Latent covariance of the factor model.

        With ``S`` the first ``d - 1`` components (volatility
        ``sigma_s I``) and ``Z = beta' S + R``:

        ``c = [[sigma_s^2 I, sigma_s^2 beta], [sigma_s^2 beta',
        beta' beta sigma_s^2 + sigma_r^2]]``.

        Examples
        --------
        >>> cfg = ScenarioConfig(kind="regression_factor", d=2, beta=0.3)
        >>> cfg.regression_cov()
        array([[0.04  , 0.012 ],
               [0.012 , 0.0136]])
        """
        beta = self.beta_vector()
        ds = self.d - 1
        c = np.empty((self.d, self.d))
        c[:ds, :ds] = self.sigma_s**2 * np.eye(ds)
        c[:ds, ds] = self.sigma_s**2 * beta
        c[ds, :ds] = self.sigma_s**2 * beta
        c[ds, ds] = float(beta @ beta) * self.sigma_s**2 + self.sigma_r**2
        return c


def _compound_poisson(
    rng: np.random.Generator,
    steps: int,
    lam_per_step: float,
    draw,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Aggregate per-step jump sums for a compound-Poisson channel.

    Returns ``(per_step_sum, jump_steps, jump_sizes)`` where the last
    two list every individual jump (for bookkeeping).
    """
    totals = np.zeros(steps)
    if lam_per_step <= 0:
        return totals, np.empty(0, dtype=np.int64), np.empty(0)
    counts = rng.poisson(lam_per_step, steps)
    n_jumps = int(counts.sum())
    if n_jumps == 0:
        return totals, np.empty(0, dtype=np.int64), np.empty(0)
    sizes = draw(rng, n_jumps)
    step_of_jump = np.repeat(np.arange(steps, dtype=np.int64), counts)
    totals = np.bincount(step_of_jump, weights=sizes, minlength=steps)
    return totals, step_of_jump, sizes


def _observed_bundle(
    cfg: ScenarioConfig,
    latent_x_fine: np.ndarray,
    latent_c_fine: np.ndarray,
    jump_steps: np.ndarray,
    jump_sizes: np.ndarray,
) -> PathBundle:
    """Subsample fine-grid latents to the observation grid and add noise."""
    n, d, sub = cfg.n, cfg.d, cfg.sub_steps
    take = np.arange(n, dtype=np.int64) * sub
    latent_x = np.ascontiguousarray(latent_x_fine[take])
    latent_c = np.ascontiguousarray(latent_c_fine[take])
    noise_sd = cfg.noise_vector()
    noise_rng = channel_rng(cfg.seed, cfg.replication, "noise")
    values = latent_x + noise_sd * noise_rng.standard_normal((n, d))
    obs = ObservationSet(grid=RegularGrid(delta_n=cfg.delta_n, n=n), values=values)
    jump_times = []
    for step, size in zip(jump_steps, jump_sizes):
        index = int(step) // sub + 1
        vec = np.zeros(d)
        vec[0] = size
        jump_times.append((index, vec))
    return PathBundle(
        observations=obs,
        latent_x=latent_x,
        latent_c=latent_c,
        jump_times=jump_times,
        noise_sd=noise_sd,
    )


def _simulate_heston(cfg: ScenarioConfig) -> PathBundle:
    sub = cfg.sub_steps
    steps = (cfg.n - 1) * sub
    dt = cfg.delta_n / sub
    sqrt_dt = math.sqrt(dt)

    z = channel_rng(cfg.seed, cfg.replication, "brownian").standard_normal((steps, 2))
    dW = sqrt_dt * z[:, 0]
    rho = cfg.leverage
    dB = sqrt_dt * (rho * z[:, 0] + math.sqrt(1.0 - rho * rho) * z[:, 1])

    vol_rng = channel_rng(cfg.seed, cfg.replication, "vol_jumps")
    jump_mult, _, _ = _compound_poisson(
        vol_rng,
        steps,
        cfg.vol_jump_intensity * dt,
        lambda r, k: r.lognormal(cfg.vol_jump_log_mean, math.sqrt(cfg.vol_jump_log_var), k),
    )

    backend = get_backend(None)
    c0 = cfg.vol_level if cfg.c0 is None else float(cfg.c0)
    c_fine = backend.cir_jump_path(
        c0,
        cfg.mean_reversion,
        cfg.vol_level,
        cfg.vol_of_vol,
        dt,
        np.ascontiguousarray(dB),
        np.ascontiguousarray(jump_mult),
    )

    price_rng = channel_rng(cfg.seed, cfg.replication, "price_jumps")
    jx, jump_steps, jump_sizes = _compound_poisson(
        price_rng,
        steps,
        cfg.price_jump_intensity * dt,
        lambda r, k: r.normal(cfg.price_jump_mean, cfg.price_jump_sd, k),
    )

    increments = cfg.drift * dt + np.sqrt(np.maximum(c_fine[:-1], 0.0)) * dW + jx
    x_fine = np.concatenate([[0.0], np.cumsum(increments)])[:, None]
    c_fine_mat = c_fine[:, None, None]
    return _observed_bundle(cfg, x_fine, c_fine_mat, jump_steps, jump_sizes)


def _simulate_constant(cfg: ScenarioConfig, cov: np.ndarray) -> PathBundle:
    d = cfg.d
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        cov = float(cov) * np.eye(d)
    if cov.shape != (d, d):
        raise ValidationError(f"constant covariance must have shape ({d}, {d}), got {cov.shape}")
    cov = 0.5 * (cov + cov.T)
    try:
        root = np.linalg.cholesky(cov + 1e-300 * np.eye(d))
    except np.linalg.LinAlgError as exc:
        raise ValidationError("constant covariance must be positive semidefinite") from exc

    sub = cfg.sub_steps
    steps = (cfg.n - 1) * sub
    dt = cfg.delta_n / sub
    z = channel_rng(cfg.seed, cfg.replication, "brownian").standard_normal((steps, d))
    diffusion = math.sqrt(dt) * (z @ root.T)

    price_rng = channel_rng(cfg.seed, cfg.replication, "price_jumps")
    jx, jump_steps, jump_sizes = _compound_poisson(
        price_rng,
        steps,
        cfg.price_jump_intensity * dt,
        lambda r, k: r.normal(cfg.price_jump_mean, cfg.price_jump_sd, k),
    )

    increments = cfg.drift * dt + diffusion
    increments[:, 0] += jx
    x_fine = np.vstack([np.zeros((1, d)), np.cumsum(increments, axis=0)])
    c_fine = np.broadcast_to(cov, (steps + 1, d, d))
    return _observed_bundle(cfg, x_fine, c_fine, jump_steps, jump_sizes)


def simulate(cfg: ScenarioConfig) -> PathBundle:
    """Generate one path bundle for a scenario.

    Deterministic per ``(seed, replication)``: identical configurations
    produce bit-identical bundles.

    Parameters
    ----------
    cfg : ScenarioConfig

    Returns
    -------
    PathBundle

    Raises
    ------
    ValidationError
        For ``kind="custom"`` (custom bundles are assembled
        programmatically, not simulated).

    Examples
    --------
    >>> cfg = ScenarioConfig(kind="constant_vol", days=0.01, drift=0.0,
    ...                      price_jump_intensity=0.0, noise_sd=0.0)
    >>> bundle = simulate(cfg)
    >>> float(bundle.latent_c[0, 0, 0])
    0.04
    >>> bool((bundle.observations.values == bundle.latent_x).all())
    True
    """
    if cfg.kind == "heston_jumps":
        return _simulate_heston(cfg)
    if cfg.kind == "constant_vol":
        return _simulate_constant(cfg, np.asarray(cfg.constant_c, dtype=float))
    if cfg.kind == "regression_factor":
        return simulate_regression(cfg)
    raise ValidationError(
        "kind='custom' bundles are assembled programmatically; simulate() "
        "handles heston_jumps, constant_vol, and regression_factor"
    )


def simulate_regression(cfg: ScenarioConfig) -> PathBundle:
    """Generate a constant-covariance factor-model path.

    The latent covariance is :meth:`ScenarioConfig.regression_cov`, so
    the regression functional of the latent covariance equals ``beta``
    at every observation time.  No jumps are applied (the factor model
    is a continuous-covariance verification scenario).
    """
    if cfg.kind not in ("regression_factor", "custom"):
        raise ValidationError(
            f"simulate_regression expects kind='regression_factor', got {cfg.kind!r}"
        )
    if cfg.d < 2:
        raise ValidationError("regression_factor requires d >= 2")
    quiet = ScenarioConfig(
        **{
            **_config_dict(cfg),
            "kind": "constant_vol",
            "price_jump_intensity": 0.0,
        }
    )
    return _simulate_constant(quiet, cfg.regression_cov())


def _config_dict(cfg: ScenarioConfig) -> dict:
    return {name: getattr(cfg, name) for name in cfg.__dataclass_fields__}


def _vectorized_true_values(f: Functional, c: np.ndarray) -> np.ndarray | None:
    """Batch evaluation of common functionals along a latent path.

    Returns an (n, r) array, or None when no fast path exists (the
    caller falls back to a per-step loop).  Guard violations raise the
    same way the scalar path would.
    """
    n, d, _ = c.shape
    params = dict(f.params)
    if f.name == "entry":
        j, k = params["j"], params["k"]
        return 0.5 * (c[:, j, k] + c[:, k, j])[:, None]
    if f.name == "power_entry":
        j, k, l, m = params["j"], params["k"], params["l"], params["m"]
        return (
            0.25 * (c[:, j, k] + c[:, k, j]) * (c[:, l, m] + c[:, m, l])
        )[:, None]
    if f.name == "square_scalar":
        return (c[:, 0, 0] ** 2)[:, None]
    if f.name == "log_scalar":
        bad = np.flatnonzero(c[:, 0, 0] <= 0)
        if bad.size:
            f.check_guard(c[bad[0]])  # raises with the standard message
        return np.log(c[:, 0, 0])[:, None]
    if f.name == "laplace":
        w = params["w"]
        return np.column_stack([np.cos(w * c[:, 0, 0]), np.sin(w * c[:, 0, 0])])
    if f.name == "regression_beta":
        css = c[:, : d - 1, : d - 1]
        csz = c[:, : d - 1, d - 1]
        eigs = np.linalg.eigvalsh(css) if d > 2 else css.reshape(n, 1)
        traces = np.einsum("nii->n", css)
        bad = np.flatnonzero(eigs[:, 0] <= 1e-8 * traces / (d - 1))
        if bad.size:
            f.check_guard(c[bad[0]])
        return np.linalg.solve(css, csz[..., None])[..., 0]
    return None


def save_bundle(bundle: PathBundle, directory: str | Path) -> dict[str, Path]:
    """Write a bundle as a CSV set: observations, latents, and jumps.

    Creates ``observations.csv`` (``t,y1,...,yd``), ``latent_x.csv``
    (``t,x1,...,xd``), ``latent_c.csv`` (``t`` plus the upper triangle
    ``c_r_s`` for ``r <= s``), and ``jumps.csv`` (``index,size1,...``).
    Floats are shortest round-trip decimals, matching
    :func:`~volfunc.sampling_core.save_csv`.

    Returns
    -------
    dict
        Logical name -> written path.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n, d = bundle.latent_x.shape
    delta_n = bundle.observations.grid.delta_n
    paths = {"observations": directory / "observations.csv"}
    save_csv(bundle.observations, paths["observations"])

    times = [repr(i * delta_n) for i in range(n)]

    def write_table(name, header, columns):
        path = directory / name
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(",".join(header) + "\n")
            handle.write("\n".join(",".join(row) for row in zip(*columns)))
            if n:
                handle.write("\n")
        return path

    x_cols = [times] + [
        [repr(v) for v in bundle.latent_x[:, r].tolist()] for r in range(d)
    ]
    paths["latent_x"] = write_table(
        "latent_x.csv", ["t"] + [f"x{r + 1}" for r in range(d)], x_cols
    )

    tri = [(r, s) for r in range(d) for s in range(r, d)]
    c_cols = [times] + [
        [repr(v) for v in bundle.latent_c[:, r, s].tolist()] for r, s in tri
    ]
    paths["latent_c"] = write_table(
        "latent_c.csv", ["t"] + [f"c_{r + 1}_{s + 1}" for r, s in tri], c_cols
    )

    jump_path = directory / "jumps.csv"
    with open(jump_path, "w", encoding="utf-8") as handle:
        handle.write(",".join(["index"] + [f"size{r + 1}" for r in range(d)]) + "\n")
        for index, size in bundle.jump_times:
            handle.write(",".join([str(index)] + [repr(float(v)) for v in size]) + "\n")
    paths["jumps"] = jump_path
    return paths


def true_functional(bundle: PathBundle, f: Functional) -> np.ndarray:
    """Ground truth ``S(g)_t``: left Riemann sum of ``g`` over the latent path.

    .. math::

        S(g)_t \\approx \\Delta_n \\sum_{i=0}^{n-1} g(c_i)

    Parameters
    ----------
    bundle : PathBundle
    f : Functional

    Returns
    -------
    ndarray, shape (r,)

    Raises
    ------
    GuardViolation
        If any latent covariance violates the functional's guard (the
        scenario is misconfigured for this functional).

    Examples
    --------
    >>> from volfunc.functional_calculus import builtin
    >>> cfg = ScenarioConfig(kind="constant_vol", days=0.1)
    >>> s = true_functional(simulate(cfg), builtin("entry", j=0, k=0))
    >>> float(np.round(s[0], 12))  # t * c = 0.1 * 0.04
    0.004
    """
    c = bundle.latent_c
    n = c.shape[0]
    values = _vectorized_true_values(f, c)
    if values is None:
        r = f.output_size(c.shape[1])
        values = np.empty((n, r))
        for i in range(n):
            f.check_guard(c[i])
            values[i] = f.value(c[i])
    return bundle.observations.grid.delta_n * values.sum(axis=0)
