import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from kinbridge.boltzmann import (DiscreteVelocityGrid, HardSphereKernel, InversePowerKernel,
                                 KineticConfig, PseudoMaxwellKernel, VelocityEnsemble,
                                 collision_operator,
                                 dsmc_collision_step, maxwellian_ensemble, mean_free_time,
                                 moments, run_homogeneous, two_temperature_ensemble)
from kinbridge.errors import DomainError
from kinbridge.potentials import PotentialSpec
from kinbridge.scattering import deflection_angle


@pytest.fixture(scope="module")
def ip_kernel():
    return InversePowerKernel(PotentialSpec())


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1),
       kind=st.sampled_from(["hard_sphere", "pseudo_maxwell"]))
def test_dsmc_step_conserves_momentum_and_energy(seed, kind):
    kernel = HardSphereKernel(1.0) if kind == "hard_sphere" else PseudoMaxwellKernel(1.0)
    ve = two_temperature_ensemble(1.0, 1.6, 0.4, 20000, seed)
    rng = np.random.default_rng(seed)
    out, _ = dsmc_collision_step(ve, 0.002, kernel, 1.0, 1.0, rng)
    assert not np.array_equal(out.samples, ve.samples)
    assert np.allclose(out.samples.sum(0), ve.samples.sum(0), rtol=0, atol=1e-10)
    e0 = np.sum(ve.samples ** 2)
    assert np.sum(out.samples ** 2) == pytest.approx(e0, rel=1e-12)


def test_dsmc_rejects_too_large_steps():
    ve = maxwellian_ensemble(1.0, (0, 0, 0), 1.0, 500, 0)
    with pytest.raises(DomainError):
        dsmc_collision_step(ve, 10.0, PseudoMaxwellKernel(1.0), 1.0, 1.0,
                            np.random.default_rng(0))


def test_mean_free_time_pseudo_maxwell():
    ve = maxwellian_ensemble(2.0, (0, 0, 0), 1.0, 2000, 1)
    assert mean_free_time(ve, PseudoMaxwellKernel(0.5), 2.0, 0.3) == pytest.approx(
        1.0 / (2.0 * 0.09 * 0.5))


def test_mean_free_time_hard_sphere_maxwellian():
    T, d = 1.3, 0.8
    ve = maxwellian_ensemble(1.0, (0, 0, 0), T, 100000, 2)
    mean_g = math.sqrt(16.0 * T / math.pi)
    want = 1.0 / (math.pi * d * d * mean_g)
    assert mean_free_time(ve, HardSphereKernel(d), 1.0, 1.0) == pytest.approx(want, rel=0.01)


def test_transfer_cross_section_matches_direct_quadrature(ip_kernel):
    spec = ip_kernel.spec
    for g in (0.5, 2.0):
        direct, _ = quad(lambda r: 2 * math.pi * r * (1 - math.cos(deflection_angle(r, g, spec))),
                         0.0, spec.cutoff_radius, limit=200)
        assert ip_kernel.transfer_sigma_g(np.array([g]))[0] / g == pytest.approx(direct,
                                                                                rel=5e-3)


def test_quadrature_operator_annihilates_invariants():
    rng = np.random.default_rng(5)
    grid = DiscreteVelocityGrid(5, 4.0, rng.random((5, 5, 5)))
    res = collision_operator(grid, HardSphereKernel(1.0), 1.0, 1.0, check_tail=False)
    pts = grid.points()
    Q = res.values.ravel()
    for w in (np.ones(len(pts)), pts[:, 0], pts[:, 2], np.sum(pts ** 2, axis=1)):
        assert abs(w @ Q) <= 1e-12 * res.loss_scale


def test_quadrature_tail_check():
    grid = DiscreteVelocityGrid.maxwellian(5, 1.0)
    with pytest.raises(DomainError):
        collision_operator(grid, HardSphereKernel(1.0), 1.0, 1.0)


def test_maxwellian_is_stationary_under_dsmc():
    ve = maxwellian_ensemble(1.0, (0, 0, 0), 1.0, 40000, 3)
    cfg = KineticConfig(density=1.0, t_final=2.0, n_outputs=3, steps_per_output=10, seed=4)
    rep = run_homogeneous(ve, PseudoMaxwellKernel(1.0), cfg)
    assert np.all(np.abs(rep.H - rep.H[0]) <= 4 * rep.H_stderr + 2e-3)
    assert np.allclose(rep.energy, rep.energy[0], rtol=1e-12)


def test_two_temperature_relaxes_towards_maxwellian(ip_kernel):
    ve = two_temperature_ensemble(1.0, 1.6, 0.4, 20000, 5)
    cfg = KineticConfig(density=1.0, t_final=3.0, n_outputs=4, steps_per_output=10, seed=6)
    rep = run_homogeneous(ve, ip_kernel, cfg)
    assert rep.monotone()
    assert abs(rep.kurtosis[-1]) < 0.5 * abs(rep.kurtosis[0])
    m0, m1 = moments(ve), moments(VelocityEnsemble(rep.final, 1.0))
    assert m1.energy == pytest.approx(m0.energy, rel=1e-12)
