import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinbridge.errors import DomainError, InvalidSpecError
from kinbridge.potentials import (ExternalPotential, PotentialSpec, phi_eval, phi_force,
                                  u_eval_grad, validate_spec)


def test_pair_energy_vanishes_at_and_beyond_cutoff():
    spec = PotentialSpec(gamma=4.0, amplitude=1.0, cutoff_radius=2.5)
    assert phi_eval(spec, 2.5) == 0.0
    assert phi_eval(spec, 3.0) == 0.0
    assert phi_eval(spec, 2.5 * (1 - 1e-9)) == pytest.approx(0.0, abs=1e-8)


@settings(max_examples=50, deadline=None)
@given(r=st.floats(0.3, 2.4), gamma=st.floats(2.5, 12.0))
def test_force_is_minus_energy_derivative(r, gamma):
    spec = PotentialSpec(gamma=gamma, amplitude=1.0, cutoff_radius=2.5)
    h = 1e-6 * r
    numeric = -(phi_eval(spec, r + h) - phi_eval(spec, r - h)) / (2 * h)
    assert phi_force(spec, r) == pytest.approx(numeric, rel=1e-6)


def test_free_control_has_no_interaction():
    spec = PotentialSpec(kind="free")
    assert not spec.interacting
    assert np.all(phi_eval(spec, np.array([0.1, 1.0])) == 0.0)
    assert validate_spec(spec).ok


def test_validation_names_the_failed_tail_hypothesis():
    report = validate_spec({"gamma": 2.0})
    assert not report.ok
    names = [name for name, _ in report.failures()]
    assert "tail_exponent" in names
    detail = dict(report.failures())["tail_exponent"]
    assert "gamma=2.0" in detail


def test_negative_amplitude_is_rejected():
    assert not validate_spec({"amplitude": -1.0}).ok


@settings(max_examples=40, deadline=None)
@given(q=st.lists(st.floats(-0.45, 0.45), min_size=3, max_size=3),
       kind=st.sampled_from(["power_wall", "harmonic"]))
def test_external_gradient_matches_finite_difference(q, kind):
    ext = ExternalPotential(kind=kind, stiffness=50.0, wall_exponent=20, domain_halfwidth=0.5)
    q = np.array(q)
    _, grad = u_eval_grad(ext, q)
    for d in range(3):
        e = np.zeros(3)
        e[d] = 1e-6
        num = (u_eval_grad(ext, q + e)[0] - u_eval_grad(ext, q - e)[0]) / 2e-6
        assert grad[d] == pytest.approx(num, rel=1e-5, abs=1e-6)


def test_position_outside_domain_raises():
    with pytest.raises(DomainError):
        u_eval_grad(ExternalPotential(), np.array([0.6, 0.0, 0.0]))


def test_odd_wall_exponent_is_rejected():
    with pytest.raises(InvalidSpecError):
        ExternalPotential(wall_exponent=21)


def test_scaled_amplitude_keeps_shape():
    spec = PotentialSpec(gamma=4.0, amplitude=2.0).scaled(0.25)
    assert spec.amplitude == 0.5 and spec.gamma == 4.0
    assert math.isclose(spec.shift, 0.5 * 2.5 ** -4)
