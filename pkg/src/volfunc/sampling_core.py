"""Data model for regularly sampled observations and CSV interchange.

The estimators operate on a d-dimensional path sampled every ``delta_n``
time units.  :class:`RegularGrid` carries the sampling geometry,
:class:`ObservationSet` the observed values, and :class:`PathBundle`
additionally the simulation latents (true price path, true spot
covariance, jump bookkeeping) used as ground truth in validation
studies.

CSV files use the schema ``t,y1,...,yd``.  Values are written as
shortest round-trip decimals, so ``load_csv(save_csv(x))`` reproduces
the array bit-exactly.  The time column is informative: the grid is
defined by ``delta_n``, and loading validates that the file's time
column is uniform and consistent with it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ValidationError

__all__ = [
    "RegularGrid",
    "ObservationSet",
    "PathBundle",
    "increments",
    "load_csv",
    "save_csv",
]

#: Hard cap on the cross-section size: the rank-4 tensors downstream are
#: dense with d**4 entries.
MAX_DIMENSION = 64

_SPACING_RTOL = 1e-9


@dataclass(frozen=True)
class RegularGrid:
    """Sampling geometry: ``n`` samples spaced ``delta_n`` time units apart.

    The horizon is ``t = n * delta_n`` (time units are the caller's
    convention; the simulation lab uses days).

    Examples
    --------
    >>> g = RegularGrid(delta_n=0.5, n=4)
    >>> g.t
    2.0
    """

    delta_n: float
    n: int
    t: float = field(init=False)

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and not isinstance(self.n, bool)):
            raise ValidationError(f"sample count n must be an integer, got {self.n!r}")
        if self.n < 1:
            raise ValidationError(f"sample count n must be >= 1, got {self.n}")
        if not (isinstance(self.delta_n, (int, float, np.floating)) and self.delta_n > 0):
            raise ValidationError(f"delta_n must be a positive number, got {self.delta_n!r}")
        if not math.isfinite(self.delta_n):
            raise ValidationError("delta_n must be finite")
        object.__setattr__(self, "delta_n", float(self.delta_n))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "t", self.n * self.delta_n)


@dataclass(frozen=True)
class ObservationSet:
    """An ``n x d`` array of observed values on a regular grid."""

    grid: RegularGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise ValidationError(
                f"values must be an (n, d) array, got shape {np.shape(self.values)}"
            )
        if values.shape[0] != self.grid.n:
            raise ValidationError(
                f"row count {values.shape[0]} does not match grid n = {self.grid.n}"
            )
        if values.shape[1] < 1 or values.shape[1] > MAX_DIMENSION:
            raise ValidationError(
                f"dimension d must be in [1, {MAX_DIMENSION}], got {values.shape[1]}"
            )
        if not np.all(np.isfinite(values)):
            bad = int(np.argwhere(~np.isfinite(values))[0, 0])
            raise ValidationError(f"non-finite observation value at row {bad + 1}")
        values = np.ascontiguousarray(values)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def d(self) -> int:
        """Cross-section dimension."""
        return int(self.values.shape[1])

    @property
    def n(self) -> int:
        """Sample count."""
        return int(self.values.shape[0])


@dataclass(frozen=True)
class PathBundle:
    """A simulated path with its latents.

    Parameters
    ----------
    observations : ObservationSet
        The noisy observed path ``Y``.
    latent_x : ndarray, shape (n, d)
        The latent price path ``X`` (before observation noise).
    latent_c : ndarray, shape (n, d, d)
        The latent spot covariance at each observation time; every slice
        must be symmetric positive semidefinite.
    jump_times : list of (int, ndarray)
        For each price jump, the index of the first observation whose
        value includes it, and the jump size vector.
    noise_sd : ndarray, shape (d,)
        Per-component standard deviation of the observation noise.
    """

    observations: ObservationSet
    latent_x: np.ndarray
    latent_c: np.ndarray
    jump_times: list[tuple[int, np.ndarray]]
    noise_sd: np.ndarray

    def __post_init__(self):
        n, d = self.observations.values.shape
        latent_x = np.ascontiguousarray(np.asarray(self.latent_x, dtype=float))
        latent_c = np.ascontiguousarray(np.asarray(self.latent_c, dtype=float))
        noise_sd = np.atleast_1d(np.asarray(self.noise_sd, dtype=float))
        if latent_x.shape != (n, d):
            raise ValidationError(
                f"latent_x must have shape {(n, d)}, got {latent_x.shape}"
            )
        if latent_c.shape != (n, d, d):
            raise ValidationError(
                f"latent_c must have shape {(n, d, d)}, got {latent_c.shape}"
            )
        if noise_sd.shape != (d,):
            raise ValidationError(f"noise_sd must have shape ({d},), got {noise_sd.shape}")
        if np.any(noise_sd < 0):
            raise ValidationError("noise_sd entries must be nonnegative")
        asym = np.max(np.abs(latent_c - np.transpose(latent_c, (0, 2, 1)))) if n else 0.0
        scale = max(float(np.max(np.abs(latent_c))), 1.0) if latent_c.size else 1.0
        if asym > 1e-10 * scale:
            raise ValidationError(f"latent_c slices are not symmetric (max asymmetry {asym:.3e})")
        if d == 1:
            min_eig = float(np.min(latent_c)) if latent_c.size else 0.0
        else:
            min_eig = float(np.min(np.linalg.eigvalsh(latent_c)))
        if min_eig < -1e-10 * scale:
            raise ValidationError(
                f"latent_c slices are not positive semidefinite (min eigenvalue {min_eig:.3e})"
            )
        for index, size in self.jump_times:
            if not 0 <= index < n:
                raise ValidationError(f"jump index {index} outside [0, {n})")
            if np.shape(size) != (d,):
                raise ValidationError(
                    f"jump size vector must have shape ({d},), got {np.shape(size)}"
                )
        for arr in (latent_x, latent_c, noise_sd):
            arr.setflags(write=False)
        object.__setattr__(self, "latent_x", latent_x)
        object.__setattr__(self, "latent_c", latent_c)
        object.__setattr__(self, "noise_sd", noise_sd)


def increments(values: np.ndarray | ObservationSet) -> np.ndarray:
    """First differences along the sample axis.

    Increment ``i`` (0-based entry ``i - 1`` of the result, for
    ``i = 1 .. n-1``) is ``U_i - U_{i-1}``; summing all increments
    telescopes to ``U_{n-1} - U_0``.

    Examples
    --------
    >>> increments(np.array([[0.0], [1.5], [1.0]])).ravel().tolist()
    [1.5, -0.5]
    """
    if isinstance(values, ObservationSet):
        values = values.values
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    return np.diff(values, axis=0)


def _expected_header(d: int) -> list[str]:
    return ["t"] + [f"y{r + 1}" for r in range(d)]


def load_csv(path: str | Path, delta_n: float) -> ObservationSet:
    """Load an observation set from a ``t,y1,...,yd`` CSV file.

    Parameters
    ----------
    path : str or Path
        File to read.
    delta_n : float
        Expected sample spacing; the file's time column must be uniform
        and match it to ``1e-9`` relative.

    Raises
    ------
    ValidationError
        On a missing file, malformed header, ragged or non-numeric rows
        (the message names the offending row), non-finite values, or
        non-uniform spacing.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    try:
        frame = pd.read_csv(path, header=0, float_precision="round_trip")
    except (ValueError, pd.errors.ParserError) as exc:
        # pandas names the offending line in its message, e.g.
        # "Expected 2 fields in line 5, saw 3"
        raise ValidationError(f"malformed CSV {path}: {exc}") from None
    columns = [str(c) for c in frame.columns]
    if len(columns) < 2 or columns != _expected_header(len(columns) - 1):
        raise ValidationError(
            f"bad CSV header in {path}: expected 't,y1,...,yd', got {','.join(columns)}"
        )
    try:
        data = frame.to_numpy(dtype=float)
    except (ValueError, TypeError):
        # Locate the first non-numeric cell so the error names its row.
        for name in columns:
            coerced = pd.to_numeric(frame[name], errors="coerce")
            newly_bad = coerced.isna() & frame[name].notna()
            if bool(newly_bad.any()):
                bad = int(np.argmax(newly_bad.to_numpy()))
                raise ValidationError(
                    f"non-numeric value in {path} at row {bad + 1}, "
                    f"column {name}: {frame[name].iloc[bad]!r}"
                ) from None
        raise ValidationError(f"non-numeric data in {path}") from None
    if data.shape[0] < 1:
        raise ValidationError(f"{path} contains no data rows")
    values = data[:, 1:]
    if not np.all(np.isfinite(values)):
        bad = int(np.argwhere(~np.isfinite(values))[0, 0])
        raise ValidationError(f"non-finite value in {path} at row {bad + 1}")
    times = data[:, 0]
    if not np.all(np.isfinite(times)):
        bad = int(np.argwhere(~np.isfinite(times))[0, 0])
        raise ValidationError(f"non-finite time in {path} at row {bad + 1}")
    if data.shape[0] > 1:
        spacings = np.diff(times)
        rel = np.abs(spacings - delta_n) / delta_n
        if float(np.max(rel)) > _SPACING_RTOL:
            bad = int(np.argmax(rel))
            raise ValidationError(
                f"non-uniform spacing in {path} at row {bad + 2}: "
                f"dt = {spacings[bad]!r}, expected {delta_n!r}"
            )
    grid = RegularGrid(delta_n=float(delta_n), n=int(data.shape[0]))
    return ObservationSet(grid=grid, values=values)


def save_csv(obs: ObservationSet, path: str | Path) -> None:
    """Write an observation set as ``t,y1,...,yd`` CSV.

    Floats are rendered as shortest round-trip decimals, so reloading
    reproduces the values bit-exactly.
    """
    path = Path(path)
    n, d = obs.values.shape
    delta_n = obs.grid.delta_n
    columns = [[repr(i * delta_n) for i in range(n)]]
    columns += [[repr(v) for v in obs.values[:, r].tolist()] for r in range(d)]
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(",".join(_expected_header(d)) + "\n")
        handle.write("\n".join(",".join(row) for row in zip(*columns)))
        handle.write("\n")
