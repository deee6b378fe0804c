"""Ensembles of N-particle Hamiltonian trajectories.

Each replica evolves under

    H = sum_i p_i^2 / 2m + sum_{i<j} Phi(|q_i - q_j| / mu) + sum_i U(q_i)

with velocity Verlet.  Pair forces come from a Verlet neighbour list built
with cell lists; the list holds all pairs within mu*(cutoff + skin) and is
rebuilt once any particle has moved more than half the skin.  Pair forces
are accumulated in a fixed order so every replica is bit-reproducible.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConfinementError, DomainError, IntegrationError, PackingError
from .potentials import ExternalPotential, PotentialSpec

NEIGHBOUR_SKIN = 1.0  # microscopic units
MAX_CELLS_PER_DIM = 256

SPATIAL_LAWS = ("uniform_in_G", "gaussian_blob")
VELOCITY_LAWS = ("maxwellian", "two_temperature", "shifted_maxwellian")


@dataclass
class SystemState:
    q: np.ndarray
    p: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.q = np.ascontiguousarray(self.q, dtype=float).reshape(-1, 3)
        self.p = np.ascontiguousarray(self.p, dtype=float).reshape(-1, 3)
        if self.q.shape != self.p.shape:
            raise DomainError("q and p must have the same shape")

    @property
    def n_particles(self) -> int:
        return self.q.shape[0]

    def copy(self) -> "SystemState":
        return SystemState(self.q.copy(), self.p.copy(), self.time)


@dataclass
class InitialLaw:
    """Single-particle law f1^0 and the overlap-exclusion radius.

    ``temperatures``/``weights`` are used by two_temperature; ``drift`` is
    the mean momentum of shifted_maxwellian.  ``exclusion_radius=None``
    selects the default 2 mu (C/T)^(1/gamma).
    """

    spatial: str = "uniform_in_G"
    velocity: str = "maxwellian"
    temperature: float = 1.0
    temperatures: tuple = (1.6, 0.4)
    weights: tuple = (0.5, 0.5)
    drift: tuple = (0.0, 0.0, 0.0)
    blob_width: float = 0.15
    exclusion_radius: float | None = None

    def __post_init__(self):
        if self.spatial not in SPATIAL_LAWS:
            raise DomainError(f"spatial law must be one of {SPATIAL_LAWS}")
        if self.velocity not in VELOCITY_LAWS:
            raise DomainError(f"velocity law must be one of {VELOCITY_LAWS}")
        temps = self.component_temperatures()
        if np.any(temps <= 0):
            raise DomainError("temperatures must be positive")
        if self.exclusion_radius is not None and self.exclusion_radius < 0:
            raise DomainError("exclusion radius must be non-negative")

    def component_temperatures(self) -> np.ndarray:
        if self.velocity == "two_temperature":
            return np.asarray(self.temperatures, dtype=float)
        return np.array([self.temperature], dtype=float)

    def component_weights(self) -> np.ndarray:
        if self.velocity == "two_temperature":
            w = np.asarray(self.weights, dtype=float)
            return w / w.sum()
        return np.array([1.0])

    def mean_temperature(self) -> float:
        return float(self.component_weights() @ self.component_temperatures())

    def default_exclusion(self, spec: PotentialSpec, mu: float) -> float:
        if not spec.interacting or spec.kind != "inverse_power":
            return 0.0
        t_hot = float(self.component_temperatures().max())
        return 2.0 * mu * (spec.amplitude / t_hot) ** (1.0 / spec.gamma)

    def to_dict(self) -> dict:
        return {
            "spatial": self.spatial, "velocity": self.velocity,
            "temperature": self.temperature, "temperatures": list(self.temperatures),
            "weights": list(self.weights), "drift": list(self.drift),
            "blob_width": self.blob_width, "exclusion_radius": self.exclusion_radius,
        }


@dataclass
class Ensemble:
    """M independent replicas of an N-particle system, shape (M, N, 3)."""

    q: np.ndarray
    p: np.ndarray
    time: float = 0.0
    seed: int = 0
    mu: float = 1.0
    mass: float = 1.0
    acceptance_rate: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def n_replicas(self) -> int:
        return self.q.shape[0]

    @property
    def n_particles(self) -> int:
        return self.q.shape[1]

    def replica(self, k: int) -> SystemState:
        return SystemState(self.q[k].copy(), self.p[k].copy(), self.time)

    def copy(self) -> "Ensemble":
        return Ensemble(self.q.copy(), self.p.copy(), self.time, self.seed, self.mu,
                        self.mass, self.acceptance_rate, dict(self.meta))


# --------------------------------------------------------------------------
# initial sampling

@njit(cache=True)
def _accept_with_exclusion(cand, placed, n_placed, target, r_ex):
    """Sequentially accept candidates farther than r_ex from placed points."""
    r2 = r_ex * r_ex
    tried = 0
    for c in range(cand.shape[0]):
        if n_placed >= target:
            break
        tried += 1
        ok = True
        for j in range(n_placed):
            d0 = cand[c, 0] - placed[j, 0]
            d1 = cand[c, 1] - placed[j, 1]
            d2 = cand[c, 2] - placed[j, 2]
            if d0 * d0 + d1 * d1 + d2 * d2 < r2:
                ok = False
                break
        if ok:
            placed[n_placed, 0] = cand[c, 0]
            placed[n_placed, 1] = cand[c, 1]
            placed[n_placed, 2] = cand[c, 2]
            n_placed += 1
    return n_placed, tried


def _external_energy(ext: ExternalPotential, q):
    if ext.kind == "none":
        return np.zeros(len(q))
    if ext.kind == "harmonic":
        return 0.5 * ext.stiffness * np.sum(q * q, axis=1)
    x = q / ext.domain_halfwidth
    return ext.stiffness * np.sum(x ** int(ext.wall_exponent), axis=1)


def _draw_positions(rng, law: InitialLaw, ext: ExternalPotential, temps):
    """One position per entry of ``temps``.

    uniform_in_G draws from exp(-U/T) restricted to G, at each particle's
    own temperature, so the collisionless state is stationary.
    gaussian_blob draws a centred Gaussian truncated to G.
    """
    L = ext.domain_halfwidth
    bounded = math.isfinite(L)
    if law.spatial == "uniform_in_G" and not bounded and ext.kind != "harmonic":
        raise DomainError("uniform_in_G needs a bounded domain or a harmonic trap")
    out = np.empty((len(temps), 3))
    for t_val in np.unique(temps):
        slots = np.flatnonzero(temps == t_val)
        filled = 0
        while filled < len(slots):
            batch = max(2 * (len(slots) - filled), 64)
            if law.spatial == "gaussian_blob":
                cand = rng.normal(0.0, law.blob_width, size=(batch, 3))
                keep = np.all(np.abs(cand) < L, axis=1) if bounded else np.ones(batch, bool)
            elif not bounded:
                cand = rng.normal(0.0, math.sqrt(t_val / ext.stiffness), size=(batch, 3))
                keep = np.ones(batch, bool)
            else:
                cand = rng.uniform(-L, L, size=(batch, 3))
                u = rng.random(batch)
                keep = u < np.exp(-_external_energy(ext, cand) / t_val)
            got = cand[keep][: len(slots) - filled]
            out[slots[filled:filled + len(got)]] = got
            filled += len(got)
    return out


def _draw_momenta(rng, law: InitialLaw, count, mass):
    temps_c = law.component_temperatures()
    if len(temps_c) > 1:
        comp = rng.choice(len(temps_c), size=count, p=law.component_weights())
    else:
        comp = np.zeros(count, dtype=int)
    temps = temps_c[comp]
    p = rng.normal(size=(count, 3)) * np.sqrt(mass * temps)[:, None]
    if law.velocity == "shifted_maxwellian":
        p = p + np.asarray(law.drift, dtype=float)
    return p, temps


def sample_initial(law: InitialLaw, n_particles: int, n_replicas: int, seed: int,
                   spec: PotentialSpec | None = None,
                   ext: ExternalPotential | None = None, mu: float = 1.0,
                   mass: float = 1.0) -> Ensemble:
    """I.i.d. draws from f1^0 in every replica, with overlap exclusion.

    Particles are placed one by one; a candidate closer than the exclusion
    radius to an already placed particle is redrawn.  Momentum and spatial
    draws use independent streams spawned from ``seed`` per replica.
    """
    if n_particles < 1 or n_replicas < 1:
        raise DomainError("particle and replica counts must be >= 1")
    spec = spec or PotentialSpec()
    ext = ext or ExternalPotential()
    r_ex = law.exclusion_radius
    if r_ex is None:
        r_ex = law.default_exclusion(spec, mu)
    children = np.random.SeedSequence(seed).spawn(n_replicas)
    q = np.empty((n_replicas, n_particles, 3))
    p = np.empty((n_replicas, n_particles, 3))
    total_tried = 0
    total_acc = 0
    for k, child in enumerate(children):
        rng = np.random.default_rng(child)
        pk, temps = _draw_momenta(rng, law, n_particles, mass)
        placed = np.empty((n_particles, 3))
        n_placed = 0
        tried = 0
        rounds = 0
        while n_placed < n_particles:
            rounds += 1
            need = n_particles - n_placed
            cand = _draw_positions(rng, law, ext, temps[n_placed:])
            if r_ex > 0:
                n_placed, t = _accept_with_exclusion(cand, placed, n_placed, n_particles,
                                                     float(r_ex))
                tried += t
            else:
                placed[n_placed:] = cand
                tried += need
                n_placed = n_particles
            if tried > 0 and rounds > 3 and n_placed / tried < 0.5:
                raise PackingError(
                    f"overlap exclusion acceptance {n_placed / tried:.2f} < 0.5 "
                    f"(N={n_particles}, radius={r_ex:g})")
        if n_placed / tried < 0.5:
            raise PackingError(
                f"overlap exclusion acceptance {n_placed / tried:.2f} < 0.5 "
                f"(N={n_particles}, radius={r_ex:g})")
        q[k] = placed
        p[k] = pk
        total_tried += tried
        total_acc += n_placed
    meta = {"law": law.to_dict(), "exclusion_radius": float(r_ex)}
    return Ensemble(q, p, 0.0, int(seed), float(mu), float(mass), total_acc / total_tried, meta)


# --------------------------------------------------------------------------
# forces

@njit(cache=True, nogil=True)
def _cell_setup(q, cell):
    n = q.shape[0]
    lo = np.empty(3)
    ncell = np.empty(3, dtype=np.int64)
    for d in range(3):
        mn = q[0, d]
        mx = q[0, d]
        for i in range(1, n):
            v = q[i, d]
            if v < mn:
                mn = v
            if v > mx:
                mx = v
        lo[d] = mn
        nc = int((mx - mn) / cell)
        if nc < 1:
            nc = 1
        if nc > MAX_CELLS_PER_DIM:
            nc = MAX_CELLS_PER_DIM
        ncell[d] = nc
    width = np.empty(3)
    for d in range(3):
        ext_d = 0.0
        for i in range(n):
            v = q[i, d] - lo[d]
            if v > ext_d:
                ext_d = v
        width[d] = max(ext_d / ncell[d], cell)
        # cells must be at least `cell` wide; recompute the count accordingly
        ncell[d] = max(1, min(ncell[d], int(ext_d / width[d]) + 1))
    cid = np.empty(n, dtype=np.int64)
    for i in range(n):
        c = 0
        for d in range(3):
            k = int((q[i, d] - lo[d]) / width[d])
            if k >= ncell[d]:
                k = ncell[d] - 1
            c = c * ncell[d] + k
        cid[i] = c
    total = ncell[0] * ncell[1] * ncell[2]
    start = np.zeros(total + 1, dtype=np.int64)
    for i in range(n):
        start[cid[i] + 1] += 1
    for c in range(total):
        start[c + 1] += start[c]
    fill = start[:-1].copy()
    members = np.empty(n, dtype=np.int64)
    for i in range(n):
        members[fill[cid[i]]] = i
        fill[cid[i]] += 1
    return ncell, cid, start, members


@njit(cache=True, nogil=True)
def _scan_pairs(q, r2, ncell, cid, start, members, pairs, fill):
    n = q.shape[0]
    count = 0
    for i in range(n):
        c = cid[i]
        cz = c % ncell[2]
        cy = (c // ncell[2]) % ncell[1]
        cx = c // (ncell[2] * ncell[1])
        for x in range(max(cx - 1, 0), min(cx + 2, ncell[0])):
            for y in range(max(cy - 1, 0), min(cy + 2, ncell[1])):
                for z in range(max(cz - 1, 0), min(cz + 2, ncell[2])):
                    cc = (x * ncell[1] + y) * ncell[2] + z
                    for m in range(start[cc], start[cc + 1]):
                        j = members[m]
                        if j <= i:
                            continue
                        d0 = q[j, 0] - q[i, 0]
                        d1 = q[j, 1] - q[i, 1]
                        d2 = q[j, 2] - q[i, 2]
                        if d0 * d0 + d1 * d1 + d2 * d2 < r2:
                            if fill:
                                pairs[count, 0] = i
                                pairs[count, 1] = j
                            count += 1
    return count


@njit(cache=True, nogil=True)
def _build_pairs(q, rlist):
    """All pairs (i < j) with |q_i - q_j| < rlist, in deterministic order."""
    if q.shape[0] < 2:
        return np.empty((0, 2), dtype=np.int64)
    ncell, cid, start, members = _cell_setup(q, rlist)
    r2 = rlist * rlist
    pairs = np.empty((0, 2), dtype=np.int64)
    npairs = _scan_pairs(q, r2, ncell, cid, start, members, pairs, False)
    pairs = np.empty((npairs, 2), dtype=np.int64)
    _scan_pairs(q, r2, ncell, cid, start, members, pairs, True)
    return pairs


@njit(cache=True, nogil=True)
def _pair_forces(q, pairs, mu, gamma, amp, rc, shift, forces):
    """Zero ``forces`` and add pair forces; return the pair energy."""
    for i in range(forces.shape[0]):
        forces[i, 0] = 0.0
        forces[i, 1] = 0.0
        forces[i, 2] = 0.0
    energy = 0.0
    rc2 = (rc * mu) ** 2
    for k in range(pairs.shape[0]):
        i = pairs[k, 0]
        j = pairs[k, 1]
        d0 = q[j, 0] - q[i, 0]
        d1 = q[j, 1] - q[i, 1]
        d2 = q[j, 2] - q[i, 2]
        r2 = d0 * d0 + d1 * d1 + d2 * d2
        if r2 >= rc2:
            continue
        s = math.sqrt(r2) / mu
        energy += amp * s ** (-gamma) - shift
        # |F| = f(s)/mu along the unit separation; divide once more by r
        fr = gamma * amp * s ** (-gamma - 1.0) / (mu * s * mu)
        f0 = fr * d0
        f1 = fr * d1
        f2 = fr * d2
        forces[j, 0] += f0
        forces[j, 1] += f1
        forces[j, 2] += f2
        forces[i, 0] -= f0
        forces[i, 1] -= f1
        forces[i, 2] -= f2
    return energy


@njit(cache=True, nogil=True)
def _external_forces(q, kind, stiffness, n_wall, L, forces):
    """Add -grad U to ``forces``; return (energy, escaped index or -1)."""
    energy = 0.0
    escaped = -1
    for i in range(q.shape[0]):
        for d in range(3):
            x = q[i, d]
            if kind != 0 and abs(x) >= L and escaped < 0:
                escaped = i
            if kind == 1:
                energy += 0.5 * stiffness * x * x
                forces[i, d] -= stiffness * x
            elif kind == 2:
                xr = x / L
                xn1 = xr ** (n_wall - 1)
                energy += stiffness * xn1 * xr
                forces[i, d] -= stiffness * n_wall * xn1 / L
    return energy, escaped


@njit(cache=True, nogil=True)
def _all_pairs_forces(q, mu, gamma, amp, rc, shift, forces):
    n = q.shape[0]
    pairs = np.empty((n * (n - 1) // 2, 2), dtype=np.int64)
    k = 0
    for i in range(n):
        for j in range(i + 1, n):
            pairs[k, 0] = i
            pairs[k, 1] = j
            k += 1
    return _pair_forces(q, pairs, mu, gamma, amp, rc, shift, forces)


def _params(spec: PotentialSpec):
    if spec.kind == "hard_sphere_limit":
        raise DomainError("hard_sphere_limit cannot drive molecular dynamics")
    if spec.kind == "free":
        return 4.0, 0.0, 0.0, 0.0
    return float(spec.gamma), float(spec.amplitude), float(spec.cutoff_radius), float(spec.shift)


def _ext_params(ext: ExternalPotential):
    L = ext.domain_halfwidth if ext.kind != "none" else math.inf
    return ext.code, float(ext.stiffness), int(ext.wall_exponent), float(L)


def compute_forces(q, spec: PotentialSpec, ext: ExternalPotential, mu: float,
                   all_pairs: bool = False):
    """Total forces and potential energy for one configuration."""
    q = np.ascontiguousarray(q, dtype=float)
    gamma, amp, rc, shift = _params(spec)
    forces = np.zeros_like(q)
    if amp > 0 and len(q) > 1:
        if all_pairs:
            e_pair = _all_pairs_forces(q, mu, gamma, amp, rc, shift, forces)
        else:
            pairs = _build_pairs(q, rc * mu)
            e_pair = _pair_forces(q, pairs, mu, gamma, amp, rc, shift, forces)
    else:
        e_pair = 0.0
    kind, k, nw, L = _ext_params(ext)
    e_ext, _ = _external_forces(q, kind, k, nw, L, forces)
    return forces, e_pair + e_ext


# --------------------------------------------------------------------------
# integration

@njit(cache=True, nogil=True)
def _advance(q, p, nsteps, dt, mass, mu, gamma, amp, rc, shift, kind, stiffness,
             n_wall, L, skin):
    """Velocity Verlet for ``nsteps`` steps in place.

    Returns (status, escaped particle, rebuilds); status 0 ok, 2 escape.
    """
    n = q.shape[0]
    forces = np.zeros((n, 3))
    interacting = amp > 0.0 and n > 1
    rlist = (rc + skin) * mu
    if interacting:
        pairs = _build_pairs(q, rlist)
    else:
        pairs = np.empty((0, 2), dtype=np.int64)
    q_ref = q.copy()
    half_skin2 = (0.5 * skin * mu) ** 2
    _pair_forces(q, pairs, mu, gamma, amp, rc, shift, forces)
    _, esc = _external_forces(q, kind, stiffness, n_wall, L, forces)
    if esc >= 0:
        return 2, esc, 0
    rebuilds = 0
    for step in range(nsteps):
        for i in range(n):
            for d in range(3):
                p[i, d] += 0.5 * dt * forces[i, d]
                q[i, d] += dt * p[i, d] / mass
        if interacting:
            need = False
            for i in range(n):
                d0 = q[i, 0] - q_ref[i, 0]
                d1 = q[i, 1] - q_ref[i, 1]
                d2 = q[i, 2] - q_ref[i, 2]
                if d0 * d0 + d1 * d1 + d2 * d2 > half_skin2:
                    need = True
                    break
            if need:
                pairs = _build_pairs(q, rlist)
                q_ref[:, :] = q
                rebuilds += 1
        _pair_forces(q, pairs, mu, gamma, amp, rc, shift, forces)
        _, esc = _external_forces(q, kind, stiffness, n_wall, L, forces)
        if esc >= 0:
            return 2, esc, rebuilds
        for i in range(n):
            for d in range(3):
                p[i, d] += 0.5 * dt * forces[i, d]
    return 0, -1, rebuilds


def _run(q, p, nsteps, dt, spec, ext, mu, mass):
    gamma, amp, rc, shift = _params(spec)
    kind, k, nw, L = _ext_params(ext)
    status, esc, _ = _advance(q, p, int(nsteps), float(dt), float(mass), float(mu), gamma,
                              amp, rc, shift, kind, k, nw, L, NEIGHBOUR_SKIN)
    if status == 2:
        raise ConfinementError(f"particle {esc} left the confining region")


def step(state: SystemState, dt: float, spec: PotentialSpec, ext: ExternalPotential,
         mu: float, mass: float = 1.0) -> SystemState:
    """One velocity-Verlet step; returns a new state."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    out = state.copy()
    _run(out.q, out.p, 1, dt, spec, ext, mu, mass)
    out.time = state.time + dt
    return out


def advance(state: SystemState, n_steps: int, dt: float, spec: PotentialSpec,
            ext: ExternalPotential, mu: float, mass: float = 1.0) -> SystemState:
    """``n_steps`` velocity-Verlet steps (signed dt allowed for reversal tests)."""
    out = state.copy()
    _run(out.q, out.p, n_steps, dt, spec, ext, mu, mass)
    out.time = state.time + n_steps * dt
    return out


def total_energy(state: SystemState, spec: PotentialSpec, ext: ExternalPotential,
                 mu: float, mass: float = 1.0) -> float:
    """Kinetic plus pair plus external energy."""
    _, pot = compute_forces(state.q, spec, ext, mu)
    return float(np.sum(state.p * state.p) / (2.0 * mass) + pot)


def reverse_momenta(state: SystemState) -> SystemState:
    return SystemState(state.q.copy(), -state.p, state.time)


def suggest_dt(p, spec: PotentialSpec, ext: ExternalPotential, mu: float,
               mass: float = 1.0, q=None) -> float:
    """min(0.01 mu/v_max, 0.05 x collision traversal time, wall period bound)."""
    p = np.asarray(p, dtype=float).reshape(-1, 3)
    v_max = float(np.sqrt(np.max(np.sum(p * p, axis=1)))) / mass
    v_max = max(v_max, 1e-12)
    dt = 0.01 * mu / v_max
    if spec.kind == "inverse_power":
        g_max = 2.0 * v_max
        e_max = 0.25 * mass * g_max * g_max
        r_min = (spec.amplitude / (e_max + spec.shift)) ** (1.0 / spec.gamma)
        dt = min(dt, 0.05 * mu * r_min / g_max)
    if ext.kind != "none":
        e_one = 0.5 * mass * v_max * v_max
        if q is not None:
            e_one += float(np.max(_external_energy(ext, np.asarray(q, float).reshape(-1, 3))))
        if ext.kind == "harmonic":
            curv = ext.stiffness
        else:
            n = int(ext.wall_exponent)
            x = min(1.0, (e_one / ext.stiffness) ** (1.0 / n))
            curv = ext.stiffness * n * (n - 1) * x ** (n - 2) / ext.domain_halfwidth ** 2
        if curv > 0:
            dt = min(dt, 0.05 / math.sqrt(curv / mass))
    return dt


@dataclass
class TrajectoryRecord:
    times: list
    q: list
    p: list
    energies: np.ndarray  # (n_snapshots, M)
    dt: float
    steps: list
    mu: float
    mass: float
    seed: int

    def snapshot(self, k: int) -> Ensemble:
        return Ensemble(self.q[k], self.p[k], self.times[k], self.seed, self.mu, self.mass)


def _replica_energy(q, p, spec, ext, mu, mass):
    return total_energy(SystemState(q, p), spec, ext, mu, mass)


def evolve_ensemble(ens: Ensemble, t_final: float, snapshot_times, spec: PotentialSpec,
                    ext: ExternalPotential, dt: float | None = None, threads: int = 1,
                    track_energy: bool = True) -> TrajectoryRecord:
    """Advance every replica and record snapshots.

    Each interval between consecutive snapshot times is split into a whole
    number of equal steps no longer than ``dt``.  Replicas are independent,
    so the result does not depend on ``threads``.
    """
    times = [float(t) for t in snapshot_times]
    if any(b < a for a, b in zip(times, times[1:])):
        raise DomainError("snapshot times must be sorted")
    if times and times[-1] > t_final + 1e-15 or any(t < ens.time for t in times):
        raise DomainError("snapshot times must lie in [t0, t_final]")
    if not times or times[-1] < t_final:
        times.append(float(t_final))
    mu, mass = ens.mu, ens.mass
    if dt is None:
        dt = min(suggest_dt(ens.p[k], spec, ext, mu, mass, ens.q[k])
                 for k in range(ens.n_replicas))
    q = ens.q.copy()
    p = ens.p.copy()
    M = ens.n_replicas
    energies = np.zeros((len(times), M))
    snaps_q, snaps_p, steps = [], [], []
    t_now = ens.time

    def run_one(k, n_steps, h):
        try:
            if n_steps > 0:
                _run(q[k], p[k], n_steps, h, spec, ext, mu, mass)
        except IntegrationError as exc:
            exc.replica = k
            raise
        if track_energy:
            return _replica_energy(q[k], p[k], spec, ext, mu, mass)
        return 0.0

    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        for s, t in enumerate(times):
            interval = t - t_now
            n_steps = int(math.ceil(interval / dt - 1e-9)) if interval > 0 else 0
            h = interval / n_steps if n_steps else 0.0
            results = list(pool.map(lambda k: run_one(k, n_steps, h), range(M)))
            energies[s] = results
            snaps_q.append(q.copy())
            snaps_p.append(p.copy())
            steps.append(n_steps)
            t_now = t
    return TrajectoryRecord(times, snaps_q, snaps_p, energies, float(dt), steps, mu, mass,
                            ens.seed)


# --------------------------------------------------------------------------
# snapshot text format

def write_snapshot(path, ens: Ensemble):
    """JSON header line, then one row per particle:
    replica index qx qy qz px py pz."""
    M, N = ens.n_replicas, ens.n_particles
    header = {"N": N, "M": M, "mu": ens.mu, "mass": ens.mass, "seed": ens.seed,
              "time": ens.time,
              "columns": ["replica", "index", "qx", "qy", "qz", "px", "py", "pz"]}
    rep = np.repeat(np.arange(M), N)
    idx = np.tile(np.arange(N), M)
    data = np.column_stack([ens.q.reshape(-1, 3), ens.p.reshape(-1, 3)])
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        for r, i, row in zip(rep, idx, data):
            fh.write(f"{r} {i} " + " ".join(f"{v:.17g}" for v in row) + "\n")


def read_snapshot(path) -> Ensemble:
    with open(path) as fh:
        header = json.loads(fh.readline()[2:])
    body = np.loadtxt(path, skiprows=1, ndmin=2)
    M, N = header["M"], header["N"]
    q = body[:, 2:5].reshape(M, N, 3)
    p = body[:, 5:8].reshape(M, N, 3)
    return Ensemble(q, p, header["time"], header["seed"], header["mu"], header["mass"])
