import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinbridge.errors import ConfinementError, DomainError
from kinbridge.nbody import (InitialLaw, SystemState, advance, compute_forces,
                             evolve_ensemble, read_snapshot, reverse_momenta, sample_initial,
                             suggest_dt, total_energy, write_snapshot)
from kinbridge.potentials import ExternalPotential, PotentialSpec

SPEC = PotentialSpec()
EXT = ExternalPotential()
MU = 0.02


def _ensemble(n=200, m=2, seed=1, law=None):
    return sample_initial(law or InitialLaw(), n, m, seed, SPEC, EXT, MU)


def test_cell_list_forces_match_all_pairs():
    q = _ensemble(300, 1).q[0]
    f1, e1 = compute_forces(q, SPEC, EXT, MU)
    f2, e2 = compute_forces(q, SPEC, EXT, MU, all_pairs=True)
    assert np.max(np.abs(f1 - f2)) <= 1e-10 * max(1.0, np.max(np.abs(f2)))
    assert e1 == pytest.approx(e2, rel=1e-12)


def test_pair_forces_sum_to_zero():
    q = _ensemble(300, 1).q[0]
    f, _ = compute_forces(q, SPEC, ExternalPotential(kind="none", domain_halfwidth=0.5), MU)
    assert np.max(np.abs(f.sum(axis=0))) <= 1e-9 * max(1.0, np.max(np.abs(f)))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_initial_samples_respect_domain_and_exclusion(seed):
    ens = _ensemble(150, 1, seed)
    q = ens.q[0]
    assert np.all(np.abs(q) < EXT.domain_halfwidth)
    r_ex = InitialLaw().default_exclusion(SPEC, MU)
    d = np.linalg.norm(q[:, None] - q[None], axis=-1) + np.eye(len(q))
    assert d.min() >= r_ex


def test_sampling_is_reproducible_per_seed():
    a, b, c = _ensemble(seed=5), _ensemble(seed=5), _ensemble(seed=6)
    assert np.array_equal(a.q, b.q) and np.array_equal(a.p, b.p)
    assert not np.array_equal(a.q, c.q)


def test_two_temperature_law_has_the_mixed_temperature():
    law = InitialLaw(velocity="two_temperature", temperatures=(1.6, 0.4))
    p = sample_initial(law, 500, 16, 3, SPEC, EXT, MU).p.reshape(-1, 3)
    assert np.mean(p * p) == pytest.approx(1.0, rel=0.03)


def test_verlet_conserves_energy_and_reverses():
    st0 = _ensemble(64, 1, 2).replica(0)
    dt = suggest_dt(st0.p, SPEC, EXT, MU, q=st0.q)
    e0 = total_energy(st0, SPEC, EXT, MU)
    fwd = advance(st0, 300, dt, SPEC, EXT, MU)
    assert abs(total_energy(fwd, SPEC, EXT, MU) - e0) <= 1e-5 * abs(e0)
    back = reverse_momenta(advance(reverse_momenta(fwd), 300, dt, SPEC, EXT, MU))
    assert np.max(np.abs(back.q - st0.q)) <= 1e-9


def test_step_through_the_wall_is_reported():
    st0 = SystemState(np.array([[0.49, 0.0, 0.0], [0.0, 0.0, 0.0]]),
                      np.array([[500.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    with pytest.raises(ConfinementError):
        advance(st0, 10, 0.01, SPEC, EXT, MU)


def test_ensemble_evolution_does_not_depend_on_threads():
    ens = _ensemble(100, 3, 4)
    a = evolve_ensemble(ens, 0.05, [0.02, 0.05], SPEC, EXT, threads=1)
    b = evolve_ensemble(ens, 0.05, [0.02, 0.05], SPEC, EXT, threads=3)
    for x, y in zip(a.q + a.p, b.q + b.p):
        assert np.array_equal(x, y)
    assert np.array_equal(a.energies, b.energies)


def test_unsorted_snapshot_times_are_rejected():
    with pytest.raises(DomainError):
        evolve_ensemble(_ensemble(20, 1), 0.1, [0.05, 0.02], SPEC, EXT)


def test_snapshot_round_trip(tmp_path):
    ens = _ensemble(50, 2, 7)
    write_snapshot(tmp_path / "snap.txt", ens)
    back = read_snapshot(tmp_path / "snap.txt")
    assert np.array_equal(back.q, ens.q) and np.array_equal(back.p, ens.p)
