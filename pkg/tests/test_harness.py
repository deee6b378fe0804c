import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinbridge.errors import ConfigError, DomainError
from kinbridge.harness import cli
from kinbridge.harness.config import load_config, parse_config
from kinbridge.harness.runner import (bootstrap_median_ci, density_factor,
                                      nonincreasing_within_bands, point_seed, run_experiment)

ROOT = Path(__file__).resolve().parents[1]
SMOKE = ROOT / "configs" / "smoke.toml"


def _cfg(**extra):
    raw = {"seeds": [1, 2], "schedule": {"mu": [0.05, 0.025, 0.02]}}
    for key, value in extra.items():
        if isinstance(value, dict):
            raw.setdefault(key, {}).update(value)
        else:
            raw[key] = value
    return parse_config(raw)


def test_defaults_fill_every_section():
    cfg = _cfg()
    assert cfg.mode == "bridge" and cfg.threads == 1
    assert [p.n_particles for p in cfg.schedule.points] == [40, 160, 250]
    assert cfg.replicas == [4, 2, 2]


def test_all_problems_are_reported_together():
    with pytest.raises(ConfigError) as err:
        parse_config({"seeds": [1], "schedule": {"mu": [0.1]}, "potential": {"gamma": 2.0},
                      "mode": "nope", "bogus": 1})
    text = str(err.value)
    assert "potential violates hypothesis tail_exponent: gamma=2.0 (need gamma > 2)" in text
    assert "mode must be one of" in text
    assert "unknown top-level key 'bogus'" in text


def test_missing_required_keys():
    with pytest.raises(ConfigError) as err:
        parse_config({})
    assert {"seeds is required", "schedule.mu is required"} <= set(err.value.problems)


def test_hard_sphere_potential_needs_boltzmann_only_mode():
    with pytest.raises(ConfigError):
        _cfg(potential={"kind": "hard_sphere_limit"})
    cfg = _cfg(mode="boltzmann_only", potential={"kind": "hard_sphere_limit"},
               boltzmann={"kernel": "hard_sphere"})
    assert cfg.potential.kind == "hard_sphere_limit"


def test_resolved_config_round_trips():
    cfg = load_config(SMOKE)
    assert parse_config(cfg.to_dict()) == cfg
    moved = cfg.with_overrides(output_dir="elsewhere", threads=3)
    assert moved.equivalent(cfg) and moved != cfg


def test_seed_override_shifts_the_seed_list():
    cfg = load_config(SMOKE).with_overrides(seed=40)
    assert cfg.seeds == [40, 41, 42]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31), k=st.integers(0, 50))
def test_point_seeds_are_distinct_across_points_and_streams(seed, k):
    assert point_seed(seed, k) != point_seed(seed, k + 1)
    assert point_seed(seed, k, 0) != point_seed(seed, k, 1)
    assert point_seed(seed, k) == point_seed(seed, k)


@settings(max_examples=30, deadline=None)
@given(values=st.lists(st.floats(0, 10), min_size=3, max_size=40))
def test_bootstrap_interval_brackets_the_median(values):
    med, lo, hi = bootstrap_median_ci(values, 100, 0)
    assert lo <= med + 1e-12 and med <= hi + 1e-12
    assert min(values) <= lo and hi <= max(values)


def test_trend_rule():
    assert nonincreasing_within_bands([0.3, 0.32, 0.1], [0.2, 0.2, 0.05], [0.4, 0.4, 0.2])
    assert not nonincreasing_within_bands([0.1, 0.5], [0.05, 0.4], [0.2, 0.6])


def test_density_factor_without_confinement_is_one():
    cfg = _cfg(external={"kind": "none"}, initial={"velocity": "maxwellian"})
    assert density_factor(cfg) == pytest.approx(1.0, rel=1e-9)


def test_density_factor_of_blob_matches_monte_carlo():
    cfg = _cfg(initial={"spatial": "gaussian_blob", "blob_width": 0.1})
    rng = np.random.default_rng(0)
    q = rng.normal(size=(400000, 3)) * 0.1
    # V <rho(q)> with rho the normalized Gaussian density
    rho = (2 * math.pi * 0.01) ** -1.5 * np.exp(-0.5 * np.sum(q * q, axis=1) / 0.01)
    assert density_factor(cfg) == pytest.approx(cfg.external.volume * rho.mean(), rel=0.01)


def test_cli_dry_run_and_config_error(tmp_path, capsys):
    assert cli.main(["run", str(SMOKE), "--dry-run"]) == cli.EXIT_OK
    assert "point" in capsys.readouterr().out
    bad = tmp_path / "bad.toml"
    bad.write_text('seeds = [1]\n[schedule]\nmu = [0.1]\n[potential]\ngamma = 2.0\n')
    assert cli.main(["run", str(bad)]) == cli.EXIT_CONFIG
    assert "tail_exponent" in capsys.readouterr().err


def test_compare_needs_artifacts(tmp_path):
    assert cli.main(["compare", str(tmp_path)]) == cli.EXIT_RUNTIME


def test_point_failure_is_recorded_and_others_continue(tmp_path):
    # the overlap exclusion cannot pack the larger N of the later points
    cfg = _cfg(output_dir=str(tmp_path), initial={"exclusion_radius": 0.12},
               md={"dt_scale": 3.0}, bogolyubov={"enabled": False},
               boltzmann={"sensitivity": [], "bootstrap": 20})
    report = run_experiment(cfg)
    assert report.exit_code == 3
    assert report.points[0]["status"] == "ok"
    err = json.loads((tmp_path / "point_02" / "error.json").read_text())
    assert err["type"] == "PackingError"
    assert (tmp_path / "point_00" / "point.json").exists()
    assert cli.main(["run", str(SMOKE), "--out-dir", str(tmp_path / "x"), "--dry-run"]) == 0


def test_boltzmann_only_mode_writes_kinetic_artifacts(tmp_path):
    cfg = _cfg(mode="boltzmann_only", output_dir=str(tmp_path),
               boltzmann={"samples": 5000, "t_final": 1.0, "n_outputs": 3,
                          "sensitivity": [2.0]})
    report = run_experiment(cfg)
    assert report.complete
    for name in ("kinetic.csv", "final.json", "h_series.png", "chi_min_sensitivity.csv",
                 "point.json"):
        assert (tmp_path / "boltzmann" / name).exists()
    assert (tmp_path / "manifest.json").exists() and (tmp_path / "timing.json").exists()
