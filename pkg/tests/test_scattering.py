import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinbridge.errors import DegenerateCollisionError, DomainError
from kinbridge.potentials import PotentialSpec
from kinbridge.scattering import (CollisionGeometry, DeflectionTable, PhasePoint,
                                  deflection_angle, hard_sphere_chi, hard_sphere_outcome,
                                  pair_energy, pair_flow, post_collision_momenta,
                                  reversed_geometry, two_body_flow)

from oracles import trajectory_deflection

SPEC = PotentialSpec(gamma=4.0, amplitude=1.0, cutoff_radius=2.5)
vec = st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3)


@settings(max_examples=100, deadline=None)
@given(p=vec, p1=vec, rho=st.floats(0.0, 2.5), phi=st.floats(0.0, 2 * math.pi))
def test_collision_map_conserves_momentum_and_energy(p, p1, rho, phi):
    p, p1 = np.array(p), np.array(p1)
    if np.linalg.norm(p - p1) < 1e-3:
        return
    out = post_collision_momenta(p, p1, CollisionGeometry(rho, phi), SPEC)
    scale = np.linalg.norm(p) + np.linalg.norm(p1) + 1.0
    assert np.max(np.abs(out.p_out + out.p1_out - p - p1)) <= 1e-12 * scale
    e0 = p @ p + p1 @ p1
    e1 = out.p_out @ out.p_out + out.p1_out @ out.p1_out
    assert abs(e1 - e0) <= 1e-12 * max(e0, 1.0)


@settings(max_examples=50, deadline=None)
@given(p=vec, p1=vec, rho=st.floats(0.0, 2.4), phi=st.floats(0.0, 2 * math.pi))
def test_inverse_collision_restores_incoming_pair(p, p1, rho, phi):
    p, p1 = np.array(p), np.array(p1)
    if np.linalg.norm(p - p1) < 1e-2:
        return
    out = post_collision_momenta(p, p1, CollisionGeometry(rho, phi), SPEC)
    back = post_collision_momenta(out.p_out, out.p1_out, reversed_geometry(out, p, p1), SPEC)
    assert np.allclose(back.p_out, p, atol=1e-9)
    assert np.allclose(back.p1_out, p1, atol=1e-9)


def test_equal_momenta_are_degenerate():
    with pytest.raises(DegenerateCollisionError):
        post_collision_momenta(np.ones(3), np.ones(3), CollisionGeometry(0.5), SPEC)


def test_hard_sphere_reflection_matches_formula():
    d = 1.3
    p, p1 = np.array([1.0, 0.2, -0.4]), np.array([-0.5, 0.1, 0.3])
    for rho in np.linspace(0.0, 0.95 * d, 20):
        out = hard_sphere_outcome(p, p1, CollisionGeometry(rho, 0.7), d)
        assert out.deflection == pytest.approx(2 * math.acos(rho / d), abs=1e-12)


def test_hard_sphere_limit_kind_uses_the_analytic_law():
    spec = PotentialSpec(kind="hard_sphere_limit", cutoff_radius=2.0)
    rho = np.linspace(0.0, 1.9, 7)
    assert np.allclose(deflection_angle(rho, 1.0, spec), hard_sphere_chi(rho, 2.0))


def test_deflection_zero_outside_cutoff_and_pi_head_on():
    assert deflection_angle(2.6, 1.0, SPEC) == 0.0
    assert deflection_angle(0.0, 1.0, SPEC) == pytest.approx(math.pi, abs=1e-12)


def test_deflection_rejects_bad_arguments():
    with pytest.raises(DomainError):
        deflection_angle(-0.1, 1.0, SPEC)
    with pytest.raises(DomainError):
        deflection_angle(0.5, 0.0, SPEC)


@pytest.mark.parametrize("rho,g", [(0.3, 0.5), (1.0, 1.0), (1.8, 2.0), (2.3, 0.7)])
def test_deflection_quadrature_matches_trajectory_integration(rho, g):
    chi = deflection_angle(rho, g, SPEC)
    ref = trajectory_deflection(rho, g, SPEC.gamma, SPEC.amplitude, SPEC.cutoff_radius)
    assert chi == pytest.approx(ref, abs=1e-6)


@settings(max_examples=20, deadline=None)
@given(rho=st.floats(0.05, 2.4), g=st.floats(0.2, 4.0))
def test_pair_flow_conserves_energy(rho, g):
    mu = 0.01
    x1 = PhasePoint([0.0, 0.0, 0.0], [0.0, 0.0, 0.5 * g])
    x2 = PhasePoint([rho * mu, 0.0, 5.0 * mu], [0.0, 0.0, -0.5 * g])
    e0 = pair_energy(x1, x2, SPEC, mu)
    y1, y2 = two_body_flow(x1, x2, 20.0 * mu / g, SPEC, mu)
    assert pair_energy(y1, y2, SPEC, mu) == pytest.approx(e0, rel=1e-9)
    assert np.allclose(y1.p + y2.p, x1.p + x2.p, atol=1e-12)


def test_pair_flow_is_time_reversible():
    mu = 0.01
    rng = np.random.default_rng(3)
    q1 = rng.uniform(-0.02, 0.02, (20, 3))
    q2 = rng.uniform(-0.02, 0.02, (20, 3))
    p1, p2 = rng.normal(size=(20, 3)), rng.normal(size=(20, 3))
    a = pair_flow(q1, p1, q2, p2, 0.05, SPEC, mu)
    b = pair_flow(a[0], -a[1], a[2], -a[3], 0.05, SPEC, mu)
    assert np.allclose(b[0], q1, atol=1e-9) and np.allclose(-b[1], p1, atol=1e-9)


def test_deflection_table_interpolates_exact_values():
    table = DeflectionTable(SPEC, n_rho=128, n_g=32)
    g = 1.37
    rmax = float(np.interp(np.log(g), np.log(table.g), table.rho_max))
    rho = np.linspace(0.05, 0.9, 6) * rmax
    assert np.allclose(table(rho, np.full(6, g)), deflection_angle(rho, g, SPEC), atol=2e-2)
    assert deflection_angle(table._rho_max(g), g, SPEC) == pytest.approx(table.chi_min,
                                                                          rel=1e-6)
