"""Tests for the command-line harness.

Small-scale configs: constant volatility c = 0.04, delta_n = 1/1000,
days = 0.5 (n = 500 observations), kappa = 0.69 so k_n = 117 and the
sample holds 4 disjoint blocks.  Truth for entry(0,0) on that scenario
is c * t = 0.02.  Monte Carlo runs use 4 replications; assertions are
about plumbing (schemas, determinism, thread invariance, exit codes),
not statistical quality.
"""
from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from volfunc.cli_harness import (
    MC_ROW_FIELDS,
    HarnessConfig,
    MCSummary,
    main,
    named_kernel,
    resolve_threads,
    run_montecarlo,
    summarize_rows,
)
from volfunc.errors import NumericalError, ValidationError
from volfunc.kernel_moments import continuous_moments, default_kernel
from volfunc.sampling_core import load_csv
from volfunc.simulation_lab import ScenarioConfig, save_bundle, simulate


def base_doc(**overrides) -> dict:
    """A quiet, fast config document; overrides patch top-level keys."""
    doc = {
        "schema_version": "1",
        "kernel": "triangular",
        "scenario": {
            "kind": "constant_vol",
            "d": 1,
            "delta_n": 1e-3,
            "days": 0.5,
            "constant_c": 0.04,
            "noise_sd": 0.0,
            "price_jump_intensity": 0.0,
            "seed": 7,
        },
        "tuning": {"theta": 1.0, "varrho": 1.0, "kappa": 0.69, "rho": 0.47},
        "functionals": [{"name": "entry", "params": {"j": 0, "k": 0}}],
        "options": {"level": 0.95},
        "mc": {"replications": 4, "parallelism": 1, "seed": 7},
    }
    doc.update(overrides)
    return doc


def write_doc(tmp_path: Path, doc: dict, name: str = "config.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


@pytest.fixture()
def runner() -> CliRunner:
    return CliRunner()


# ---------------------------------------------------------------- moments


def test_moments_prints_triangular_constants(runner):
    result = runner.invoke(main, ["moments"])
    assert result.exit_code == 0
    km = continuous_moments(default_kernel())
    lines = dict(
        line.split(None, 1) for line in result.output.splitlines()[1:] if line
    )
    for name in ("phi0_at_0", "Phi_00", "Psi_11"):
        assert float(lines[name]) == getattr(km, name)


def test_moments_sine_kernel(runner):
    result = runner.invoke(main, ["moments", "--kernel", "sine"])
    assert result.exit_code == 0
    assert "kernel: sine" in result.output
    # phi(1/2) = 1 for sine; its phi0(0) = integral of sin(pi s)^2 = 1/2.
    lines = dict(
        line.split(None, 1) for line in result.output.splitlines()[1:] if line
    )
    assert abs(float(lines["phi0_at_0"]) - 0.5) < 1e-9


def test_moments_unknown_kernel_exits_2(runner):
    result = runner.invoke(main, ["moments", "--kernel", "boxcar"])
    assert result.exit_code == 2
    assert "unknown kernel" in result.output


def test_moments_bad_panel_count_exits_2(runner):
    result = runner.invoke(main, ["moments", "--panels", "10"])
    assert result.exit_code == 2


# ---------------------------------------------------------------- threads


def test_resolve_threads_precedence(monkeypatch):
    monkeypatch.delenv("VOLFUNC_THREADS", raising=False)
    assert resolve_threads(None, None) == 1
    assert resolve_threads(None, 3) == 3
    monkeypatch.setenv("VOLFUNC_THREADS", "5")
    assert resolve_threads(None, 3) == 5  # env beats config
    assert resolve_threads(2, 3) == 2  # flag beats env


def test_resolve_threads_invalid(monkeypatch):
    monkeypatch.setenv("VOLFUNC_THREADS", "many")
    with pytest.raises(ValidationError, match="VOLFUNC_THREADS"):
        resolve_threads(None, None)
    monkeypatch.delenv("VOLFUNC_THREADS")
    with pytest.raises(ValidationError, match=">= 1"):
        resolve_threads(0, None)


# ---------------------------------------------------------------- simulate


def test_simulate_writes_csv_set(runner, tmp_path):
    cfg = write_doc(tmp_path, base_doc())
    out = tmp_path / "sim"
    result = runner.invoke(main, ["simulate", "--config", str(cfg), "--out", str(out)])
    assert result.exit_code == 0, result.output
    for name in ("observations.csv", "latent_x.csv", "latent_c.csv", "jumps.csv"):
        assert (out / name).exists()
    # n = 500 observations at times 0..(n-1)*delta -> 500 rows + header.
    assert len((out / "observations.csv").read_text().splitlines()) == 501
    assert len((out / "latent_x.csv").read_text().splitlines()) == 501
    # No jumps in the quiet scenario.
    assert len((out / "jumps.csv").read_text().splitlines()) == 1


def test_simulate_deterministic_and_seed_sensitive(runner, tmp_path):
    cfg = write_doc(tmp_path, base_doc())
    out_a, out_b, out_c = (tmp_path / k for k in ("a", "b", "c"))
    for out in (out_a, out_b):
        assert (
            runner.invoke(
                main, ["simulate", "--config", str(cfg), "--out", str(out)]
            ).exit_code
            == 0
        )
    assert (
        runner.invoke(
            main,
            ["simulate", "--config", str(cfg), "--out", str(out_c), "--seed", "11"],
        ).exit_code
        == 0
    )
    bytes_a = (out_a / "observations.csv").read_bytes()
    assert bytes_a == (out_b / "observations.csv").read_bytes()
    assert bytes_a != (out_c / "observations.csv").read_bytes()


def test_save_bundle_reload_roundtrip(tmp_path):
    scenario = ScenarioConfig(
        kind="heston_jumps", delta_n=1e-3, days=0.2, seed=3, noise_sd=0.002
    )
    bundle = simulate(scenario)
    paths = save_bundle(bundle, tmp_path / "dump")
    reloaded = load_csv(paths["observations"], scenario.delta_n)
    np.testing.assert_array_equal(reloaded.values, bundle.observations.values)
    n_jumps = len(bundle.jump_times)
    assert len(Path(paths["jumps"]).read_text().splitlines()) == n_jumps + 1
    latent_c_lines = Path(paths["latent_c"]).read_text().splitlines()
    assert latent_c_lines[0] == "t,c_1_1"
    assert len(latent_c_lines) == bundle.latent_c.shape[0] + 1


# ---------------------------------------------------------------- estimate


def test_estimate_stdout_schema_and_value(runner, tmp_path):
    cfg = write_doc(tmp_path, base_doc())
    result = runner.invoke(main, ["estimate", "--config", str(cfg)])
    assert result.exit_code == 0, result.output
    doc = json.loads(result.output)
    assert doc["schema_version"] == "1"
    assert len(doc["reports"]) == 1
    report = doc["reports"][0]
    assert report["functional"] == "entry"
    assert report["t"] == 0.5
    # Noiseless constant volatility: estimate near c * t = 0.02.  Four
    # blocks of k_n = 117 leave ~27% sampling sd, so this is a plumbing
    # bound on a fixed seed; statistical quality is tested elsewhere.
    assert abs(report["S_hat"][0] - 0.02) < 0.6 * 0.02
    lo, hi = report["ci"][0]
    assert lo < report["S_hat"][0] < hi


def test_estimate_out_file_matches_stdout(runner, tmp_path):
    cfg = write_doc(tmp_path, base_doc())
    out = tmp_path / "est"
    result = runner.invoke(
        main, ["estimate", "--config", str(cfg), "--out", str(out)]
    )
    assert result.exit_code == 0
    on_disk = (out / "estimate.json").read_text(encoding="utf-8")
    assert on_disk.strip() == result.output.strip()


def test_estimate_from_data_file_matches_scenario(runner, tmp_path):
    doc = base_doc()
    cfg = write_doc(tmp_path, doc)
    out = tmp_path / "sim"
    assert (
        runner.invoke(
            main, ["simulate", "--config", str(cfg), "--out", str(out)]
        ).exit_code
        == 0
    )
    from_scenario = runner.invoke(main, ["estimate", "--config", str(cfg)])

    data_doc = {k: v for k, v in doc.items() if k not in ("scenario", "mc")}
    data_doc["data"] = {
        "path": str(out / "observations.csv"),
        "delta_n": doc["scenario"]["delta_n"],
    }
    data_cfg = write_doc(tmp_path, data_doc, "data_config.json")
    from_file = runner.invoke(main, ["estimate", "--config", str(data_cfg)])
    assert from_file.exit_code == 0, from_file.output
    a = json.loads(from_scenario.output)["reports"][0]
    b = json.loads(from_file.output)["reports"][0]
    # repr round-trip CSV preserves every bit of the sample.
    assert a["S_hat"] == b["S_hat"]
    assert a["V_hat"] == b["V_hat"]


# -------------------------------------------------------------- montecarlo


def test_montecarlo_outputs_and_schema(runner, tmp_path):
    cfg = write_doc(tmp_path, base_doc())
    out = tmp_path / "mc"
    result = runner.invoke(main, ["montecarlo", "--config", str(cfg), "--out", str(out)])
    assert result.exit_code == 0, result.output
    summary = json.loads((out / "summary.json").read_text())
    assert summary["schema_version"] == "1"
    assert summary["replications"] == 4
    (entry,) = summary["summaries"]
    assert entry["functional"] == "entry(j=0,k=0)"
    assert entry["component"] == 0
    assert 0.0 <= entry["coverage"] <= 1.0
    assert entry["rmse"] >= abs(entry["mean_bias"])

    rep_lines = (out / "replications.csv").read_text().splitlines()
    assert rep_lines[0] == ",".join(MC_ROW_FIELDS)
    assert len(rep_lines) == 4 + 1  # one component per replication
    z_lines = (out / "standardized_errors.csv").read_text().splitlines()
    assert z_lines[0] == "functional,component,replication,z"
    assert len(z_lines) == 4 + 1
    zs = [float(line.split(",")[-1]) for line in z_lines[1:]]
    assert all(math.isfinite(z) for z in zs)


def test_montecarlo_thread_invariance(runner, tmp_path):
    cfg = write_doc(tmp_path, base_doc())
    out1, out2 = tmp_path / "t1", tmp_path / "t2"
    r1 = runner.invoke(
        main,
        ["montecarlo", "--config", str(cfg), "--out", str(out1), "--threads", "1"],
    )
    r2 = runner.invoke(
        main,
        ["montecarlo", "--config", str(cfg), "--out", str(out2), "--threads", "2"],
    )
    assert r1.exit_code == 0 and r2.exit_code == 0, r1.output + r2.output
    for name in ("summary.json", "replications.csv", "standardized_errors.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_montecarlo_env_threads_and_rerun_identical(runner, tmp_path):
    cfg = write_doc(tmp_path, base_doc())
    out1, out2 = tmp_path / "e1", tmp_path / "e2"
    r1 = runner.invoke(main, ["montecarlo", "--config", str(cfg), "--out", str(out1)])
    r2 = runner.invoke(
        main,
        ["montecarlo", "--config", str(cfg), "--out", str(out2)],
        env={"VOLFUNC_THREADS": "2"},
    )
    assert r1.exit_code == 0 and r2.exit_code == 0
    assert (out1 / "replications.csv").read_bytes() == (
        out2 / "replications.csv"
    ).read_bytes()


def test_montecarlo_env_threads_invalid_exits_2(runner, tmp_path):
    cfg = write_doc(tmp_path, base_doc())
    result = runner.invoke(
        main,
        ["montecarlo", "--config", str(cfg), "--out", str(tmp_path / "x")],
        env={"VOLFUNC_THREADS": "many"},
    )
    assert result.exit_code == 2
    assert not (tmp_path / "x").exists()


def test_montecarlo_seed_and_reps_flags(runner, tmp_path):
    cfg = write_doc(tmp_path, base_doc())
    out1, out2, out3 = tmp_path / "s1", tmp_path / "s2", tmp_path / "s3"
    assert (
        runner.invoke(
            main, ["montecarlo", "--config", str(cfg), "--out", str(out1)]
        ).exit_code
        == 0
    )
    assert (
        runner.invoke(
            main,
            ["montecarlo", "--config", str(cfg), "--out", str(out2), "--seed", "11"],
        ).exit_code
        == 0
    )
    assert (out1 / "replications.csv").read_bytes() != (
        out2 / "replications.csv"
    ).read_bytes()
    assert (
        runner.invoke(
            main,
            ["montecarlo", "--config", str(cfg), "--out", str(out3), "--reps", "2"],
        ).exit_code
        == 0
    )
    assert len((out3 / "replications.csv").read_text().splitlines()) == 2 + 1


def test_run_montecarlo_reduction_matches_components(tmp_path):
    doc = base_doc(
        functionals=[
            {"name": "entry", "params": {"j": 0, "k": 0}},
            {"name": "log_scalar"},
        ]
    )
    cfg, summaries, rows = run_montecarlo(doc, reps=3)
    assert cfg.replications == 4  # config value untouched by the reps override
    assert [s.functional for s in summaries] == ["entry(j=0,k=0)", "log_scalar"]
    assert len(rows) == 3 * 2
    assert [r["replication"] for r in rows] == [0, 0, 1, 1, 2, 2]
    by_hand = summarize_rows(rows, 3)
    assert by_hand == summaries


def test_montecarlo_exit_1_on_numerical_failure(runner, tmp_path, monkeypatch):
    import volfunc.cli_harness as ch

    def explode(scenario):
        raise NumericalError("synthetic breakdown")

    monkeypatch.setattr(ch, "simulate", explode)
    cfg = write_doc(tmp_path, base_doc())
    result = runner.invoke(
        main, ["montecarlo", "--config", str(cfg), "--out", str(tmp_path / "mc")]
    )
    assert result.exit_code == 1
    assert "synthetic breakdown" in result.output


# ------------------------------------------------------------ config errors


def bad_docs():
    yield "unknown-top-key", base_doc(extra_section={})
    yield "bad-schema-version", base_doc(schema_version="999")
    d = base_doc()
    d["scenario"]["kind"] = "custom"
    yield "custom-kind", d
    d = base_doc()
    d["tuning"]["kappa"] = 0.5  # outside the admissible window exponent range
    yield "bad-kappa", d
    d = base_doc()
    d["tuning"]["alpha"] = 5.0
    d["tuning"]["alpha_pilot_multiple"] = 3.0
    yield "alpha-conflict", d
    yield "unknown-functional", base_doc(functionals=[{"name": "entropy"}])
    yield "empty-functionals", base_doc(functionals=[])
    d = base_doc()
    del d["tuning"]["rho"]
    yield "missing-rho", d
    d = base_doc()
    del d["scenario"]
    yield "no-input-section", d
    yield "bad-options-key", base_doc(options={"level": 0.95, "style": "fancy"})
    yield "bad-reps", base_doc(mc={"replications": 0})


@pytest.mark.parametrize(
    "doc", [d for _, d in bad_docs()], ids=[name for name, _ in bad_docs()]
)
def test_invalid_configs_exit_2_without_outputs(runner, tmp_path, doc):
    cfg = write_doc(tmp_path, doc)
    out = tmp_path / "never"
    result = runner.invoke(main, ["montecarlo", "--config", str(cfg), "--out", str(out)])
    assert result.exit_code == 2, result.output
    assert result.output.startswith("error:")
    assert not out.exists()


def test_missing_config_file_exits_2(runner, tmp_path):
    result = runner.invoke(
        main,
        ["estimate", "--config", str(tmp_path / "absent.json")],
    )
    assert result.exit_code == 2
    assert "no such config file" in result.output


def test_non_json_config_exits_2(runner, tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    result = runner.invoke(main, ["estimate", "--config", str(path)])
    assert result.exit_code == 2
    assert "not valid JSON" in result.output


# ---------------------------------------------------------- config helpers


def test_named_kernel_alias():
    assert named_kernel("default").description == named_kernel("triangular").description


def test_pilot_alpha_resolution_scalar():
    doc = base_doc()
    doc["scenario"].update(noise_sd=0.002, price_jump_intensity=20.0, days=1.0)
    doc["tuning"]["alpha_pilot_multiple"] = 3.0
    cfg = HarnessConfig.from_dict(doc)
    obs = simulate(dataclasses.replace(cfg.scenario, seed=cfg.seed)).observations
    tp, km = cfg.resolve_tuning(obs)
    assert math.isfinite(tp.alpha) and tp.alpha > 0
    assert math.isfinite(tp.nu_n) and tp.nu_n > 0
    # The threshold scale should sit near multiple * sqrt(c) = 3 * 0.2.
    assert 0.3 < tp.alpha * obs.grid.delta_n ** (tp.rho - 0.5) < 1.2


def test_pilot_alpha_per_component():
    doc = base_doc()
    doc["scenario"].update(
        d=2, constant_c=[[0.04, 0.0], [0.0, 0.16]], days=1.0, noise_sd=0.001
    )
    doc["tuning"]["alpha_pilot_multiple"] = 3.0
    doc["tuning"]["truncation_mode"] = "per-component"
    cfg = HarnessConfig.from_dict(doc)
    obs = simulate(dataclasses.replace(cfg.scenario, seed=cfg.seed)).observations
    tp, km = cfg.resolve_tuning(obs)
    assert tp.per_component_alphas is not None
    a1, a2 = tp.per_component_alphas
    # Second component has 2x the volatility, so a wider threshold.
    assert a2 > 1.5 * a1


def test_fixed_alpha_passthrough():
    doc = base_doc()
    doc["tuning"]["alpha"] = 7.5
    cfg = HarnessConfig.from_dict(doc)
    obs = simulate(cfg.scenario).observations
    tp, _ = cfg.resolve_tuning(obs)
    assert tp.alpha == 7.5


def test_mcsummary_invariants():
    good = dict(
        functional="entry",
        component=0,
        mean_bias=0.1,
        mean_raw_bias=0.2,
        rmse=0.15,
        coverage=0.9,
        mean_width=1.0,
        z_tail_fraction=0.05,
        replications=10,
    )
    MCSummary(**good)
    with pytest.raises(ValidationError, match="coverage"):
        MCSummary(**{**good, "coverage": 1.5})
    with pytest.raises(ValidationError, match="rmse"):
        MCSummary(**{**good, "rmse": 0.05})


def test_summarize_rows_hand_values():
    def row(rep, err, raw, z, covered, width):
        return {
            "replication": rep,
            "functional": "f",
            "component": 0,
            "error": err,
            "raw_error": raw,
            "z": z,
            "covered": covered,
            "width": width,
        }

    rows = [
        row(0, 0.1, 0.2, 0.5, 1, 2.0),
        row(1, -0.1, 0.0, -2.5, 0, 4.0),
    ]
    (s,) = summarize_rows(rows, 2)
    assert s.mean_bias == pytest.approx(0.0)
    assert s.mean_raw_bias == pytest.approx(0.1)
    assert s.rmse == pytest.approx(0.1)
    assert s.coverage == 0.5
    assert s.mean_width == 3.0
    assert s.z_tail_fraction == 0.5  # exactly one |z| > 1.96
    assert s.replications == 2
