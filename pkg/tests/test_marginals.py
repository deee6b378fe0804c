import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinbridge.errors import DomainError, InvalidSpecError
from kinbridge.marginals import (Probe, RadialProfile, ScalingSchedule, SchedulePoint,
                                 TestFunctionSet, bogolyubov_from_counts, estimate_f1,
                                 factorized_window_reference, h_functional, h_radial,
                                 maxwellian_h, window_pairs)
from kinbridge.potentials import PotentialSpec

FREE = PotentialSpec(kind="free")


def test_f1_histogram_integrates_to_volume():
    rng = np.random.default_rng(0)
    q = rng.uniform(-0.5, 0.5, (2, 500, 3))
    p = rng.normal(size=(2, 500, 3))
    axes = [("qx", np.linspace(-0.5, 0.5, 11)), ("px", np.linspace(-8, 8, 33))]
    hist = estimate_f1(q, p, axes, 1.0)
    assert hist.integral() == pytest.approx(1.0)


def test_uniform_density_has_zero_h():
    rng = np.random.default_rng(1)
    q = rng.uniform(-0.5, 0.5, (4000, 3))
    axes = [("qx", np.array([-0.5, 0.5]))]
    assert h_functional(estimate_f1(q, q, axes, 1.0)).H == pytest.approx(0.0, abs=1e-12)


def test_radial_h_estimator_recovers_maxwellian_value():
    rng = np.random.default_rng(2)
    T = 0.7
    p = rng.normal(size=(200000, 3)) * math.sqrt(T)
    est = h_radial(p, 8.0)
    assert abs(est.H - maxwellian_h(T)) < 4 * est.stderr + 2e-3


def test_schedule_from_mu_has_the_required_monotonicity():
    sch = ScalingSchedule.from_mu([0.02, 0.01, 0.005], 0.1)
    dts = [p.delta_t for p in sch.points]
    taus = [p.delta_tau for p in sch.points]
    assert dts == sorted(dts, reverse=True) and taus == sorted(taus)
    assert [p.n_particles for p in sch.points] == [250, 1000, 4000]


def test_schedule_off_the_grad_line_is_rejected():
    with pytest.raises(InvalidSpecError):
        ScalingSchedule([SchedulePoint(100, 0.02, 0.05)], 0.1)


def test_unknown_test_function_is_rejected():
    with pytest.raises(DomainError):
        TestFunctionSet(("one", "poly:2,2,0"))
    with pytest.raises(DomainError):
        TestFunctionSet(("one", "nope"))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10000), radius=st.floats(0.02, 0.15))
def test_window_pairs_match_brute_force(seed, radius):
    rng = np.random.default_rng(seed)
    q = rng.uniform(-0.5, 0.5, (300, 3))
    probe = Probe((0.1, 0.0, -0.1), 0.3)
    i, j = window_pairs(q, radius, probe)
    d = np.linalg.norm(q[None] - q[:, None], axis=-1)
    in_probe = np.linalg.norm(q - np.array(probe.center), axis=1) < probe.radius
    want = {(a, b) for a in range(300) for b in range(300)
            if a != b and in_probe[a] and d[a, b] < radius}
    assert set(zip(i.tolist(), j.tolist())) == want


def test_factorized_reference_matches_brute_force_for_free_flight():
    rng = np.random.default_rng(4)
    M, N = 6, 120
    q0 = rng.uniform(-0.5, 0.5, (M * N, 3))
    p0 = rng.normal(size=(M * N, 3))
    rep = np.repeat(np.arange(M), N)
    dt, radius = 0.02, 0.12
    probe = Probe((0.0, 0.0, 0.0), 0.35)
    tests = TestFunctionSet(("one", "p2"))
    got, _ = factorized_window_reference(q0, p0, rep, dt, radius, probe, FREE, 0.05, 1.0,
                                         tests, None, partners=2)
    q1 = q0 + p0 * dt
    total = np.zeros(2)
    n_cross = 0
    block = rep // 3
    for a in range(M * N):
        other = (block == block[a]) & (rep != rep[a])
        n_cross += other.sum()
        if np.linalg.norm(q1[a]) >= probe.radius:
            continue
        sel = other & (np.linalg.norm(q1 - q1[a], axis=1) < radius)
        total += tests.evaluate(p0[sel]).sum(axis=1)
    assert np.allclose(got, total * N * (N - 1) / n_cross, rtol=1e-12)


def test_radial_profile_tracks_a_maxwellian_shell_histogram():
    from scipy.stats import maxwell
    edges = np.linspace(0.0, 6.0, 31)
    mass_in_shell = np.diff(maxwell.cdf(edges))
    prof = RadialProfile(edges, mass_in_shell / np.diff(edges))
    p = np.zeros((5, 3))
    p[:, 0] = [0.3, 0.9, 1.5, 2.2, 3.1]
    exact = (2 * np.pi) ** -1.5 * np.exp(-0.5 * p[:, 0] ** 2)
    # residual error is the curvature of ln f within a shell
    assert np.allclose(prof(p), exact, rtol=2e-2)


def test_bogolyubov_table_needs_a_shared_grid():
    edges = np.linspace(0, 5, 6)
    with pytest.raises(DomainError):
        bogolyubov_from_counts(edges, [np.ones(5), np.ones(4), np.ones(5)], [5, 4, 5], 0.1,
                               FREE, 1.0, 0.1)


def test_bogolyubov_fields_vanish_without_interaction():
    edges = np.linspace(0, 5, 6)
    c = [np.array([10, 40, 30, 15, 5])] * 3
    cmp = bogolyubov_from_counts(edges, c, [100] * 3, 0.1, FREE, 1.0, 0.1)
    assert np.all(cmp.bogolyubov == 0) and np.all(cmp.md_dfdt == 0)
    assert set(cmp.table()) == {"md_dfdt|bogolyubov", "md_dfdt|boltzmann",
                                "bogolyubov|boltzmann"}
