"""Batch command-line surface: simulate, estimate, Monte Carlo, constants.

Commands
--------
``volfunc moments``
    Print the kernel constants (weight-function moments) as a table.
``volfunc simulate --config cfg.json --out DIR``
    Generate one scenario path and write it as a CSV set.
``volfunc estimate --config cfg.json [--out DIR]``
    Estimate the configured functionals on simulated or loaded data and
    emit the report JSON.
``volfunc montecarlo --config cfg.json --out DIR``
    Replicated study: per-replication CSV, standardized-error CSV
    (histogram-ready), and a summary JSON.

Configuration is a single JSON document; CLI flags override the
corresponding top-level keys.  Exit codes: 0 success, 1 numerical
failure, 2 configuration/validation failure.

Config schema (top-level keys)
------------------------------
``schema_version``
    Optional; must be "1" when present.
``kernel``
    Weight-function name: "triangular" (default) or "sine".
``scenario``
    :class:`~volfunc.simulation_lab.ScenarioConfig` fields.
``data``
    Alternative input for ``estimate``: ``{"path": CSV, "delta_n": x}``.
``tuning``
    ``theta, varrho, kappa, rho`` plus optional ``alpha`` (null = no
    truncation), ``alpha_pilot_multiple`` (data-driven threshold: alpha
    = multiple * pooled pilot sd * delta^(1/2 - rho)), ``nu``,
    ``theta_prime``, ``floor_mode``, ``truncation_mode``.
``functionals``
    List of ``{"name": registry-name, "params": {...}}``.
``options``
    :class:`~volfunc.integrated_inference.InferenceOptions` fields.
``mc``
    ``{"replications", "parallelism", "seed"}``.

Thread count resolution order: ``--threads`` flag, then the
``VOLFUNC_THREADS`` environment variable, then ``mc.parallelism``,
then 1.  Replications are distributed over a process pool; each owns
its RNG streams and results are reduced in replication order, so output
is bit-identical for any thread count.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from .errors import NumericalError, ValidationError
from .functional_calculus import Functional, builtin
from .integrated_inference import (
    SCHEMA_VERSION,
    EstimateReport,
    InferenceOptions,
    estimate_from_spot,
)
from .kernel_moments import (
    Kernel,
    KernelMoments,
    continuous_moments,
    default_kernel,
    discrete_weights,
)
from .preaveraging_spot import (
    TuningParams,
    component_alphas_from_pilot,
    pilot_scale,
    spot_series,
    validate_tuning,
)
from .sampling_core import ObservationSet, load_csv
from .simulation_lab import (
    ScenarioConfig,
    save_bundle,
    simulate,
    true_functional,
)

__all__ = [
    "HarnessConfig",
    "MCSummary",
    "main",
    "named_kernel",
    "resolve_threads",
    "run_montecarlo",
    "summarize_rows",
]

THREADS_ENV_VAR = "VOLFUNC_THREADS"

_TOP_LEVEL_KEYS = {
    "schema_version",
    "kernel",
    "scenario",
    "data",
    "tuning",
    "functionals",
    "options",
    "mc",
}

_TUNING_DEFAULTS = {
    "theta": 1.0,
    "varrho": 1.0,
    "alpha": None,
    "alpha_pilot_multiple": None,
    "kappa": None,
    "rho": None,
    "nu": 0.5,
    "theta_prime": None,
    "floor_mode": False,
    "truncation_mode": "global-norm",
}

#: CSV column order for per-replication rows.
MC_ROW_FIELDS = [
    "replication",
    "functional",
    "component",
    "estimate",
    "raw_estimate",
    "truth",
    "error",
    "raw_error",
    "se",
    "z",
    "ci_lo",
    "ci_hi",
    "covered",
    "width",
    "a_n_t",
    "guard_violations",
    "psd_projected",
    "truncated_fraction_mean",
]


def named_kernel(name: str) -> Kernel:
    """Resolve a weight-function name used in configs and ``moments``.

    "triangular" (alias "default") is the standard min(s, 1-s) window;
    "sine" is sin(pi s).
    """
    key = str(name).lower()
    if key in ("triangular", "default"):
        return default_kernel()
    if key == "sine":
        return Kernel(
            evaluate=lambda s: np.sin(np.pi * np.asarray(s)),
            description="sine",
            derivative=lambda s: np.pi * np.cos(np.pi * np.asarray(s)),
        )
    raise ValidationError(
        f"unknown kernel {name!r}; expected 'triangular' or 'sine'"
    )


def resolve_threads(flag: int | None, config_value: int | None) -> int:
    """Thread count: flag > VOLFUNC_THREADS env var > config > 1."""
    if flag is not None:
        value = int(flag)
    else:
        env = os.environ.get(THREADS_ENV_VAR)
        if env is not None and env != "":
            try:
                value = int(env)
            except ValueError:
                raise ValidationError(
                    f"{THREADS_ENV_VAR} must be an integer, got {env!r}"
                ) from None
        elif config_value is not None:
            value = int(config_value)
        else:
            value = 1
    if value < 1:
        raise ValidationError(f"thread count must be >= 1, got {value}")
    return value


@dataclass(frozen=True)
class MCSummary:
    """Aggregate of one functional component over all replications.

    Invariants: ``coverage`` in [0, 1] and ``rmse >= |mean_bias|``
    (automatic since rmse^2 = bias^2 + variance; validated anyway to
    catch aggregation bugs).
    """

    functional: str
    component: int
    mean_bias: float
    mean_raw_bias: float
    rmse: float
    coverage: float
    mean_width: float
    z_tail_fraction: float
    replications: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.coverage <= 1.0:
            raise ValidationError(f"coverage must be in [0, 1], got {self.coverage!r}")
        if not 0.0 <= self.z_tail_fraction <= 1.0:
            raise ValidationError(
                f"z_tail_fraction must be in [0, 1], got {self.z_tail_fraction!r}"
            )
        if self.rmse + 1e-12 * (1.0 + abs(self.mean_bias)) < abs(self.mean_bias):
            raise ValidationError(
                f"rmse ({self.rmse!r}) cannot be smaller than |mean bias| "
                f"({self.mean_bias!r})"
            )
        if self.replications < 1:
            raise ValidationError(f"replications must be >= 1, got {self.replications}")


def _functional_label(name: str, params: dict) -> str:
    if not params:
        return name
    inner = ",".join(f"{k}={params[k]}" for k in sorted(params))
    return f"{name}({inner})"


@dataclass(frozen=True)
class HarnessConfig:
    """Validated harness configuration (see the module docstring schema)."""

    kernel_name: str
    scenario: ScenarioConfig | None
    data_path: str | None
    data_delta_n: float | None
    tuning: dict
    functionals: tuple[Functional, ...]
    labels: tuple[str, ...]
    options: InferenceOptions
    replications: int
    parallelism: int
    seed: int

    @classmethod
    def from_dict(cls, doc: dict) -> "HarnessConfig":
        """Parse and fully validate a config document.

        All validation happens here -- commands only touch outputs after
        this returns.  Tuning windows are checked through
        ``validate_tuning`` immediately (with a placeholder threshold
        when the threshold is data-driven).
        """
        if not isinstance(doc, dict):
            raise ValidationError("config must be a JSON object")
        unknown = set(doc) - _TOP_LEVEL_KEYS
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        version = doc.get("schema_version", SCHEMA_VERSION)
        if str(version) != SCHEMA_VERSION:
            raise ValidationError(
                f"unsupported schema_version {version!r}; this build reads "
                f"{SCHEMA_VERSION!r}"
            )
        kernel_name = doc.get("kernel", "triangular")
        named_kernel(kernel_name)  # validate now

        scenario = None
        if "scenario" in doc:
            raw = doc["scenario"]
            if not isinstance(raw, dict) or "kind" not in raw:
                raise ValidationError("scenario must be an object with a 'kind' key")
            if raw.get("kind") == "custom":
                raise ValidationError(
                    "kind='custom' cannot be run from the CLI; use the library API"
                )
            known = set(ScenarioConfig.__dataclass_fields__)
            bad = set(raw) - known
            if bad:
                raise ValidationError(f"unknown scenario keys: {sorted(bad)}")
            scenario = ScenarioConfig(**raw)

        data_path = data_delta = None
        if "data" in doc:
            data = doc["data"]
            if (
                not isinstance(data, dict)
                or "path" not in data
                or "delta_n" not in data
            ):
                raise ValidationError("data must be {'path': ..., 'delta_n': ...}")
            data_path = str(data["path"])
            data_delta = float(data["delta_n"])
            if not (data_delta > 0 and math.isfinite(data_delta)):
                raise ValidationError(f"data.delta_n must be > 0, got {data['delta_n']!r}")
        if scenario is None and data_path is None:
            raise ValidationError("config needs a 'scenario' or a 'data' section")

        raw_tuning = doc.get("tuning")
        if not isinstance(raw_tuning, dict):
            raise ValidationError("config needs a 'tuning' object")
        bad = set(raw_tuning) - set(_TUNING_DEFAULTS)
        if bad:
            raise ValidationError(f"unknown tuning keys: {sorted(bad)}")
        tuning = {**_TUNING_DEFAULTS, **raw_tuning}
        for key in ("kappa", "rho"):
            if tuning[key] is None:
                raise ValidationError(f"tuning requires {key!r}")
        if tuning["alpha"] is not None and tuning["alpha_pilot_multiple"] is not None:
            raise ValidationError(
                "set either tuning.alpha or tuning.alpha_pilot_multiple, not both"
            )
        if tuning["alpha_pilot_multiple"] is not None:
            mult = float(tuning["alpha_pilot_multiple"])
            if not (mult > 0 and math.isfinite(mult)):
                raise ValidationError(
                    f"alpha_pilot_multiple must be finite and > 0, got {mult!r}"
                )
            tuning["alpha_pilot_multiple"] = mult
        # Validate the windows now with a placeholder threshold; the
        # data-driven threshold is recomputed per path.
        delta_n = scenario.delta_n if scenario is not None else data_delta
        placeholder = (
            float(tuning["alpha"]) if tuning["alpha"] is not None else math.inf
        )
        validate_tuning(
            delta_n,
            tuning["theta"],
            tuning["varrho"],
            placeholder,
            tuning["kappa"],
            tuning["rho"],
            tuning["nu"],
            tuning["theta_prime"],
            floor_mode=bool(tuning["floor_mode"]),
            truncation_mode=tuning["truncation_mode"],
        )

        raw_functionals = doc.get("functionals")
        if not isinstance(raw_functionals, list) or not raw_functionals:
            raise ValidationError("config needs a nonempty 'functionals' list")
        functionals, labels = [], []
        for item in raw_functionals:
            if not isinstance(item, dict) or "name" not in item:
                raise ValidationError(
                    "each functional must be an object with a 'name' key"
                )
            extra = set(item) - {"name", "params"}
            if extra:
                raise ValidationError(f"unknown functional keys: {sorted(extra)}")
            params = item.get("params", {})
            if not isinstance(params, dict):
                raise ValidationError("functional params must be an object")
            functionals.append(builtin(item["name"], **params))
            labels.append(_functional_label(item["name"], params))

        raw_options = doc.get("options", {})
        if not isinstance(raw_options, dict):
            raise ValidationError("options must be an object")
        bad = set(raw_options) - set(InferenceOptions.__dataclass_fields__)
        if bad:
            raise ValidationError(f"unknown options keys: {sorted(bad)}")
        options = InferenceOptions(**raw_options)

        mc = doc.get("mc", {})
        if not isinstance(mc, dict):
            raise ValidationError("mc must be an object")
        bad = set(mc) - {"replications", "parallelism", "seed"}
        if bad:
            raise ValidationError(f"unknown mc keys: {sorted(bad)}")
        replications = int(mc.get("replications", 100))
        parallelism = int(mc.get("parallelism", 1))
        seed = int(mc.get("seed", scenario.seed if scenario is not None else 0))
        if replications < 1:
            raise ValidationError(f"mc.replications must be >= 1, got {replications}")
        if parallelism < 1:
            raise ValidationError(f"mc.parallelism must be >= 1, got {parallelism}")
        if seed < 0:
            raise ValidationError(f"mc.seed must be >= 0, got {seed}")

        return cls(
            kernel_name=str(kernel_name),
            scenario=scenario,
            data_path=data_path,
            data_delta_n=data_delta,
            tuning=tuning,
            functionals=tuple(functionals),
            labels=tuple(labels),
            options=options,
            replications=replications,
            parallelism=parallelism,
            seed=seed,
        )

    def resolve_tuning(self, obs: ObservationSet) -> tuple[TuningParams, KernelMoments]:
        """Final tuning parameters and kernel moments for one sample.

        With ``alpha_pilot_multiple`` set, the truncation threshold is
        ``multiple * pooled pilot sd * delta^(1/2 - rho)``, which places
        ``nu_n`` at ``multiple`` standard deviations of a pre-averaged
        increment; in per-component mode the pooled threshold is split
        by component pilot volatilities.
        """
        t = self.tuning
        delta_n = obs.grid.delta_n
        kernel = named_kernel(self.kernel_name)

        def build(alpha, per_component):
            return validate_tuning(
                delta_n,
                t["theta"],
                t["varrho"],
                alpha,
                t["kappa"],
                t["rho"],
                t["nu"],
                t["theta_prime"],
                floor_mode=bool(t["floor_mode"]),
                truncation_mode=t["truncation_mode"],
                per_component_alphas=per_component,
            )

        if t["alpha_pilot_multiple"] is None:
            alpha = float(t["alpha"]) if t["alpha"] is not None else math.inf
            tp = build(alpha, None)
            return tp, discrete_weights(kernel, tp.l_n)
        probe = build(math.inf, None)
        km = discrete_weights(kernel, probe.l_n)
        sigma2 = pilot_scale(obs, km)
        pooled = math.sqrt(float(np.mean(sigma2)))
        if pooled <= 0.0:
            return probe, km  # flat path: nothing to truncate
        alpha = t["alpha_pilot_multiple"] * pooled * delta_n ** (0.5 - t["rho"])
        per_component = None
        if t["truncation_mode"] == "per-component":
            per_component = component_alphas_from_pilot(alpha, sigma2)
        return build(alpha, per_component), km

    def load_observations(self) -> ObservationSet:
        """Observations for ``estimate``: from the data file or one path."""
        if self.data_path is not None:
            return load_csv(self.data_path, self.data_delta_n)
        bundle = simulate(dataclasses.replace(self.scenario, seed=self.seed))
        return bundle.observations


def _replication_rows(cfg: HarnessConfig, rep: int) -> list[dict]:
    """All per-component result rows for one replication."""
    scenario = dataclasses.replace(cfg.scenario, replication=rep, seed=cfg.seed)
    bundle = simulate(scenario)
    obs = bundle.observations
    tp, km = cfg.resolve_tuning(obs)
    spot = spot_series(
        obs,
        tp,
        km,
        psd_mode=cfg.options.psd_mode,
        noise_correction=cfg.options.noise_correction,
    )
    rows = []
    for label, f in zip(cfg.labels, cfg.functionals):
        report = estimate_from_spot(spot, f, tp, km, obs.grid.t, cfg.options)
        truth = true_functional(bundle, f)
        se = np.sqrt(math.sqrt(tp.delta_n) * np.maximum(np.diag(report.V_hat), 0.0))
        for comp in range(report.r):
            error = float(report.S_hat[comp] - truth[comp])
            rows.append(
                {
                    "replication": rep,
                    "functional": label,
                    "component": comp,
                    "estimate": float(report.S_hat[comp]),
                    "raw_estimate": float(report.S_hat_raw[comp]),
                    "truth": float(truth[comp]),
                    "error": error,
                    "raw_error": float(report.S_hat_raw[comp] - truth[comp]),
                    "se": float(se[comp]),
                    "z": error / float(se[comp]) if se[comp] > 0 else float("nan"),
                    "ci_lo": float(report.ci[comp, 0]),
                    "ci_hi": float(report.ci[comp, 1]),
                    "covered": int(
                        report.ci[comp, 0] <= truth[comp] <= report.ci[comp, 1]
                    ),
                    "width": float(report.ci[comp, 1] - report.ci[comp, 0]),
                    "a_n_t": report.a_n_t,
                    "guard_violations": report.diagnostics["guard_violations"],
                    "psd_projected": report.diagnostics["psd_projected"],
                    "truncated_fraction_mean": report.diagnostics[
                        "truncated_fraction_mean"
                    ],
                }
            )
    return rows


def _mc_worker(payload: tuple[dict, int]) -> tuple[int, list[dict]]:
    doc, rep = payload
    cfg = HarnessConfig.from_dict(doc)
    return rep, _replication_rows(cfg, rep)


def summarize_rows(rows: list[dict], replications: int) -> list[MCSummary]:
    """Aggregate per-replication rows into per-component summaries."""
    keys = []
    for row in rows:
        key = (row["functional"], row["component"])
        if key not in keys:
            keys.append(key)
    summaries = []
    for label, comp in keys:
        sel = [r for r in rows if r["functional"] == label and r["component"] == comp]
        errors = np.array([r["error"] for r in sel])
        raw_errors = np.array([r["raw_error"] for r in sel])
        zs = np.array([r["z"] for r in sel])
        finite_z = zs[np.isfinite(zs)]
        tail = float(np.mean(np.abs(finite_z) > 1.96)) if finite_z.size else 0.0
        summaries.append(
            MCSummary(
                functional=label,
                component=comp,
                mean_bias=float(errors.mean()),
                mean_raw_bias=float(raw_errors.mean()),
                rmse=float(np.sqrt(np.mean(errors**2))),
                coverage=float(np.mean([r["covered"] for r in sel])),
                mean_width=float(np.mean([r["width"] for r in sel])),
                z_tail_fraction=tail,
                replications=replications,
            )
        )
    return summaries


def run_montecarlo(
    doc: dict,
    *,
    reps: int | None = None,
    threads: int | None = None,
) -> tuple[HarnessConfig, list[MCSummary], list[dict]]:
    """Run a replicated study from a config document.

    Replications map over a process pool (``threads`` workers); rows are
    reduced in replication order so results are identical for any
    thread count.  Returns the parsed config, per-component summaries,
    and the flat row list.
    """
    cfg = HarnessConfig.from_dict(doc)
    if cfg.scenario is None:
        raise ValidationError("montecarlo requires a 'scenario' section")
    total = cfg.replications if reps is None else int(reps)
    if total < 1:
        raise ValidationError(f"replications must be >= 1, got {total}")
    workers = cfg.parallelism if threads is None else int(threads)
    payloads = [(doc, rep) for rep in range(total)]
    if workers <= 1:
        results = [_mc_worker(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_mc_worker, payloads))
    results.sort(key=lambda pair: pair[0])
    rows = [row for _, chunk in results for row in chunk]
    return cfg, summarize_rows(rows, total), rows


def _write_rows_csv(rows: list[dict], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(",".join(MC_ROW_FIELDS) + "\n")
        for row in rows:
            handle.write(
                ",".join(
                    repr(row[k]) if isinstance(row[k], float) else str(row[k])
                    for k in MC_ROW_FIELDS
                )
                + "\n"
            )


def _write_z_csv(rows: list[dict], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("functional,component,replication,z\n")
        for row in rows:
            handle.write(
                f"{row['functional']},{row['component']},{row['replication']},"
                f"{row['z']!r}\n"
            )


def _load_config(config_path: str) -> dict:
    path = Path(config_path)
    if not path.exists():
        raise ValidationError(f"no such config file: {path}")
    try:
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from None


def _apply_overrides(doc: dict, seed: int | None, reps: int | None) -> dict:
    if seed is None and reps is None:
        return doc
    doc = json.loads(json.dumps(doc))  # deep copy
    mc = doc.setdefault("mc", {})
    if seed is not None:
        mc["seed"] = seed
    if reps is not None:
        mc["replications"] = reps
    return doc


def _run(work) -> None:
    """Map library exceptions to the documented exit codes."""
    try:
        work()
    except ValidationError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except NumericalError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


@click.group()
def main() -> None:
    """Estimate integrated volatility functionals from noisy tick data."""


@main.command("moments")
@click.option("--kernel", "kernel_name", default="triangular", show_default=True)
@click.option("--panels", type=int, default=None, help="Quadrature panel count.")
def cmd_moments(kernel_name: str, panels: int | None) -> None:
    """Print the weight-function constants used by the estimator."""

    def work() -> None:
        kernel = named_kernel(kernel_name)
        if panels is None:
            km = continuous_moments(kernel)
        else:
            km = continuous_moments(kernel, quadrature_panels=panels)
        click.echo(f"kernel: {kernel.description}")
        for name in (
            "phi0_at_0",
            "phi1_at_0",
            "Phi_00",
            "Phi_01",
            "Phi_11",
            "Psi_00",
            "Psi_01",
            "Psi_11",
        ):
            click.echo(f"{name:10s} {getattr(km, name)!r}")

    _run(work)


@main.command("simulate")
@click.option("--config", "config_path", required=True, type=str)
@click.option("--out", "out_dir", required=True, type=str)
@click.option("--seed", type=int, default=None)
def cmd_simulate(config_path: str, out_dir: str, seed: int | None) -> None:
    """Generate one scenario path and write its CSV set."""

    def work() -> None:
        doc = _apply_overrides(_load_config(config_path), seed, None)
        cfg = HarnessConfig.from_dict(doc)
        if cfg.scenario is None:
            raise ValidationError("simulate requires a 'scenario' section")
        bundle = simulate(dataclasses.replace(cfg.scenario, seed=cfg.seed))
        paths = save_bundle(bundle, out_dir)
        for name in sorted(paths):
            click.echo(f"{name}: {paths[name]}")

    _run(work)


@main.command("estimate")
@click.option("--config", "config_path", required=True, type=str)
@click.option("--out", "out_dir", default=None, type=str)
@click.option("--seed", type=int, default=None)
def cmd_estimate(config_path: str, out_dir: str | None, seed: int | None) -> None:
    """Estimate the configured functionals and emit report JSON."""

    def work() -> None:
        doc = _apply_overrides(_load_config(config_path), seed, None)
        cfg = HarnessConfig.from_dict(doc)
        obs = cfg.load_observations()
        tp, km = cfg.resolve_tuning(obs)
        spot = spot_series(
            obs,
            tp,
            km,
            psd_mode=cfg.options.psd_mode,
            noise_correction=cfg.options.noise_correction,
        )
        reports = [
            estimate_from_spot(spot, f, tp, km, obs.grid.t, cfg.options)
            for f in cfg.functionals
        ]
        out_doc = {
            "schema_version": SCHEMA_VERSION,
            "reports": [r.to_json_dict() for r in reports],
        }
        text = json.dumps(out_doc, indent=2, sort_keys=True)
        click.echo(text)
        if out_dir is not None:
            directory = Path(out_dir)
            directory.mkdir(parents=True, exist_ok=True)
            (directory / "estimate.json").write_text(text + "\n", encoding="utf-8")

    _run(work)


@main.command("montecarlo")
@click.option("--config", "config_path", required=True, type=str)
@click.option("--out", "out_dir", required=True, type=str)
@click.option("--seed", type=int, default=None)
@click.option("--reps", type=int, default=None)
@click.option("--threads", type=int, default=None)
def cmd_montecarlo(
    config_path: str,
    out_dir: str,
    seed: int | None,
    reps: int | None,
    threads: int | None,
) -> None:
    """Replicated study: summary JSON plus per-replication CSVs."""

    def work() -> None:
        doc = _apply_overrides(_load_config(config_path), seed, reps)
        cfg = HarnessConfig.from_dict(doc)  # full validation before any output
        workers = resolve_threads(threads, cfg.parallelism)
        _, summaries, rows = run_montecarlo(doc, threads=workers)
        directory = Path(out_dir)
        directory.mkdir(parents=True, exist_ok=True)
        summary_doc = {
            "schema_version": SCHEMA_VERSION,
            "replications": summaries[0].replications if summaries else 0,
            "summaries": [dataclasses.asdict(s) for s in summaries],
        }
        (directory / "summary.json").write_text(
            json.dumps(summary_doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        _write_rows_csv(rows, directory / "replications.csv")
        _write_z_csv(rows, directory / "standardized_errors.csv")
        for s in summaries:
            click.echo(
                f"{s.functional}[{s.component}]: bias={s.mean_bias:.3e} "
                f"rmse={s.rmse:.3e} coverage={s.coverage:.3f}"
            )

    _run(work)


if __name__ == "__main__":
    main()
