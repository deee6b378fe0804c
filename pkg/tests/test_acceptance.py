"""Acceptance criteria at their stated tolerances.

Each test records a verdict through ``record_criterion``; the terminal
summary prints one pass/fail line per criterion.  Criteria 8 and 9 share
one scaling sweep.
"""

import filecmp
import math
import time
from pathlib import Path

import numpy as np
import pytest

from kinbridge.boltzmann import (DiscreteVelocityGrid, InversePowerKernel, KineticConfig,
                                 PseudoMaxwellKernel, collision_operator, run_homogeneous,
                                 two_temperature_ensemble)
from kinbridge.harness.config import load_config
from kinbridge.harness.runner import grad_sweep, run_experiment
from kinbridge.nbody import (InitialLaw, advance, reverse_momenta, sample_initial, suggest_dt,
                             total_energy)
from kinbridge.potentials import ExternalPotential, PotentialSpec
from kinbridge.scattering import (CollisionGeometry, deflection_angle, hard_sphere_chi,
                                  hard_sphere_outcome, post_collision_momenta)

from oracles import brute_force_collision_operator, maxwell_moment_ode, trajectory_deflection

ROOT = Path(__file__).resolve().parents[1]
SPEC4 = PotentialSpec(gamma=4.0, amplitude=1.0, cutoff_radius=2.5)


def test_criterion_01_scattering_conservation(record_criterion):
    rng = np.random.default_rng(1)
    n = 100_000
    p = rng.normal(size=(n, 3)) * 1.5
    p1 = rng.normal(size=(n, 3)) * 1.5
    rho = rng.uniform(0.0, SPEC4.cutoff_radius, n)
    phi = rng.uniform(0.0, 2 * math.pi, n)
    t0 = time.perf_counter()
    worst_p = worst_e = 0.0
    for k in range(n):
        out = post_collision_momenta(p[k], p1[k], CollisionGeometry(rho[k], phi[k]), SPEC4)
        tot = p[k] + p1[k]
        scale = max(np.linalg.norm(p[k]) + np.linalg.norm(p1[k]), 1e-300)
        worst_p = max(worst_p, np.max(np.abs(out.p_out + out.p1_out - tot)) / scale)
        e0 = p[k] @ p[k] + p1[k] @ p1[k]
        e1 = out.p_out @ out.p_out + out.p1_out @ out.p1_out
        worst_e = max(worst_e, abs(e1 - e0) / e0)
    elapsed = time.perf_counter() - t0
    ok = worst_p <= 1e-12 and worst_e <= 1e-10 and elapsed <= 60
    record_criterion(1, "scattering conservation", ok,
                     f"momentum {worst_p:.1e} (<=1e-12), energy {worst_e:.1e} (<=1e-10), "
                     f"{elapsed:.0f}s")
    assert ok


def test_criterion_02_scattering_oracle(record_criterion):
    t0 = time.perf_counter()
    # analytic hard-sphere kernel
    d = 1.0
    x = np.linspace(0.0, 0.95, 96)
    p, p1 = np.array([0.8, -0.3, 0.5]), np.array([-0.4, 0.2, -0.6])
    hs = max(abs(hard_sphere_outcome(p, p1, CollisionGeometry(r * d, 0.3), d).deflection
                 - 2 * math.acos(r)) for r in x)
    # steep gamma = 12 law: compare with hard spheres of the head-on turning radius
    steep = PotentialSpec(gamma=12.0, amplitude=1.0, cutoff_radius=1.0)
    steep_err = 0.0
    for g in (0.1, 0.3):
        energy = 0.25 * g * g
        r0 = (steep.amplitude / (energy + steep.shift)) ** (1.0 / steep.gamma)
        chi = deflection_angle(x * r0, g, steep)
        steep_err = max(steep_err, float(np.max(np.abs(chi - hard_sphere_chi(x * r0, r0)))))
    # quadrature against brute-force trajectories on 50 (rho, g) points
    rng = np.random.default_rng(2)
    pts = np.column_stack([rng.uniform(0.0, 0.98 * SPEC4.cutoff_radius, 50),
                           np.exp(rng.uniform(math.log(0.3), math.log(4.0), 50))])
    ode_err = max(abs(deflection_angle(r, g, SPEC4)
                      - trajectory_deflection(r, g, SPEC4.gamma, SPEC4.amplitude,
                                              SPEC4.cutoff_radius)) for r, g in pts)
    elapsed = time.perf_counter() - t0
    ok = hs <= 1e-12 and steep_err <= 0.05 and ode_err <= 1e-5 and elapsed <= 300
    record_criterion(2, "scattering oracle", ok,
                     f"hard sphere {hs:.1e} (<=1e-12), gamma=12 {steep_err:.3f} rad (<=0.05), "
                     f"trajectory ODE {ode_err:.1e} (<=1e-5), {elapsed:.0f}s")
    assert ok


def test_criterion_03_reversibility(record_criterion):
    ext = ExternalPotential()
    mu = 0.02
    state = sample_initial(InitialLaw(), 64, 1, 3, SPEC4, ext, mu).replica(0)
    dt = suggest_dt(state.p, SPEC4, ext, mu, q=state.q)
    t0 = time.perf_counter()
    fwd = advance(state, 1000, dt, SPEC4, ext, mu)
    back = reverse_momenta(advance(reverse_momenta(fwd), 1000, dt, SPEC4, ext, mu))
    err = float(np.max(np.abs(back.q - state.q)))
    moved = float(np.max(np.abs(fwd.q - state.q)))
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-6 and elapsed <= 60
    record_criterion(3, "reversibility", ok,
                     f"max displacement {err:.1e} (<=1e-6) after moving {moved:.2f}, "
                     f"{elapsed:.1f}s")
    assert ok


def test_criterion_04_energy_conservation(record_criterion):
    ext = ExternalPotential()
    mu = 0.01
    state = sample_initial(InitialLaw(), 1000, 1, 4, SPEC4, ext, mu).replica(0)
    dt = suggest_dt(state.p, SPEC4, ext, mu, q=state.q)
    t0 = time.perf_counter()
    e0 = total_energy(state, SPEC4, ext, mu)
    end = advance(state, 10_000, dt, SPEC4, ext, mu)
    drift = abs(total_energy(end, SPEC4, ext, mu) - e0) / abs(e0)
    elapsed = time.perf_counter() - t0
    ok = drift <= 1e-5 and elapsed <= 300
    record_criterion(4, "energy conservation", ok,
                     f"relative drift {drift:.1e} (<=1e-5) over 1e4 steps, {elapsed:.1f}s")
    assert ok


def test_criterion_05_h_theorem(record_criterion):
    t0 = time.perf_counter()
    ve = two_temperature_ensemble(1.0, 1.6, 0.4, 100_000, seed=3)
    cfg = KineticConfig(density=1.0, mu=1.0, t_final=15.0, n_outputs=16, steps_per_output=20,
                        seed=4)
    rep = run_homogeneous(ve, InversePowerKernel(SPEC4), cfg)
    gap = abs(rep.H[-1] - rep.H_maxwellian) / rep.H_stderr[-1]
    elapsed = time.perf_counter() - t0
    ok = rep.monotone(2.0) and gap <= 3.0 and elapsed <= 300
    record_criterion(5, "H-theorem", ok,
                     f"monotone within 2 stderr: {rep.monotone(2.0)}, final gap {gap:.2f} "
                     f"stderr (<=3) after 15 mean free times, {elapsed:.0f}s")
    assert ok


def test_criterion_06_maxwell_moment_oracle(record_criterion):
    t0 = time.perf_counter()
    ve = two_temperature_ensemble(1.0, 1.6, 0.4, 400_000, seed=1)
    c = ve.samples - ve.samples.mean(axis=0)
    sigma0 = c.T @ c / len(c)
    m4_0 = float(np.mean(np.sum(c * c, axis=1) ** 2))
    cfg = KineticConfig(density=1.0, mu=1.0, t_final=3.0, n_outputs=4, steps_per_output=20,
                        seed=2)
    kernel = PseudoMaxwellKernel(1.0)
    rep = run_homogeneous(ve, kernel, cfg)
    # the run's own unit: mean free time 1/(n mu^2 kappa) = 1
    ref = maxwell_moment_ode(sigma0, m4_0, 1.0 / rep.mean_free_time, [1.0, 3.0])
    # fourth central moment from the logged excess kurtosis and energy
    m2 = 2.0 * rep.energy - np.sum(rep.momentum ** 2, axis=1)
    m4 = (rep.kurtosis + 1.0) * m2 ** 2 / 0.6
    err = [abs(m4[1] / ref[0] - 1.0), abs(m4[3] / ref[1] - 1.0)]
    elapsed = time.perf_counter() - t0
    ok = max(err) <= 0.02 and elapsed <= 300
    record_criterion(6, "Maxwell-kernel moment oracle", ok,
                     f"relative error t=1: {err[0]:.2%}, t=3: {err[1]:.2%} (<=2%), "
                     f"{elapsed:.0f}s")
    assert ok


def test_criterion_07_collision_integral_cross_check(record_criterion):
    t0 = time.perf_counter()
    grid = DiscreteVelocityGrid.maxwellian(9, 3.2, T=1.0, u=(0.2, -0.1, 0.0))
    rng = np.random.default_rng(7)
    grid.values = grid.values * (1.0 + 0.5 * rng.random(grid.values.shape))
    kernel = InversePowerKernel(SPEC4)
    fast = collision_operator(grid, kernel, 1.0, 1.0, check_tail=False)
    slow = brute_force_collision_operator(grid.values, grid.cutoff, kernel, 1.0, 1.0)
    probes = rng.choice(9 ** 3, size=10, replace=False)
    scale = float(np.max(np.abs(slow)))
    diff = float(np.max(np.abs(fast.values.ravel()[probes] - slow.ravel()[probes]))) / scale
    pts = grid.points()
    Q = fast.values.ravel()
    inv = max(abs(w @ Q) / fast.loss_scale
              for w in (np.ones(len(pts)), pts[:, 0], pts[:, 1], pts[:, 2],
                        np.sum(pts * pts, axis=1)))
    elapsed = time.perf_counter() - t0
    ok = diff <= 1e-10 and inv <= 1e-8 and elapsed <= 600
    record_criterion(7, "collision-integral cross-check", ok,
                     f"quadrature vs triple loop {diff:.1e} (<=1e-10) at 10 nodes, "
                     f"invariants {inv:.1e} (<=1e-8), {elapsed:.0f}s")
    assert ok


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    cfg = load_config(ROOT / "configs" / "grad_sweep.toml")
    out = tmp_path_factory.mktemp("grad_sweep")
    t0 = time.perf_counter()
    report = grad_sweep(cfg, out)
    return report, time.perf_counter() - t0


def test_criterion_08_molecular_chaos_trend(sweep, record_criterion):
    report, elapsed = sweep
    tr = report.trends
    med = tr.get("chaos_medians", [])
    ok = (report.complete and tr.get("chaos_nonincreasing", False)
          and tr.get("control_chaos_at_noise_floor", False) and elapsed <= 1800)
    record_criterion(8, "molecular-chaos trend", ok,
                     "medians " + ", ".join(f"{m:.3f}" for m in med)
                     + f"; non-increasing within bands: {tr.get('chaos_nonincreasing')}; "
                     f"control median |z| {max(tr.get('control_median_abs_z', [math.nan])):.2f}"
                     f" (<=1); sweep {elapsed / 60:.1f} min")
    assert ok


def test_criterion_09_bridge_comparison(sweep, record_criterion):
    report, elapsed = sweep
    tr = report.trends
    l1 = tr.get("l1", [])
    ok = report.complete and tr.get("l1_decreasing", False) and elapsed <= 1800
    record_criterion(9, "bridge comparison", ok,
                     "L1 at 2 mean free times " + ", ".join(f"{v:.4f}" for v in l1)
                     + f"; decreasing within bands: {tr.get('l1_decreasing')}; "
                     f"sweep {elapsed / 60:.1f} min")
    assert ok


def _tree(root: Path):
    return sorted(p.relative_to(root) for p in root.rglob("*")
                  if p.is_file() and p.name != "timing.json")


def test_criterion_10_determinism(tmp_path, record_criterion):
    cfg = load_config(ROOT / "configs" / "smoke.toml")
    t0 = time.perf_counter()
    run_experiment(cfg.with_overrides(output_dir=str(tmp_path / "a"), threads=1))
    run_experiment(cfg.with_overrides(output_dir=str(tmp_path / "b"), threads=2))
    elapsed = time.perf_counter() - t0
    a, b = tmp_path / "a", tmp_path / "b"
    files = _tree(a)
    same_list = files == _tree(b)
    differing = [str(f) for f in files if not filecmp.cmp(a / f, b / f, shallow=False)]
    ok = same_list and not differing and len(files) > 0 and elapsed <= 120
    record_criterion(10, "determinism", ok,
                     f"{len(files)} artifacts byte-identical across threads 1 and 2 "
                     f"(differing: {differing[:3]}), {elapsed:.0f}s")
    assert ok
