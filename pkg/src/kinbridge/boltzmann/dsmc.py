"""Direct simulation Monte Carlo for the Boltzmann equation.

Collisions follow Bird's no-time-counter scheme with a majorant W on
sigma(g) g.  Over a step dt the number of candidate pairs is Poisson with
mean N n mu^2 W dt / 2; each candidate is accepted with probability
sigma(g) g / W using the current momenta.  This is an exact thinning of
the pair-jump process, so the step size introduces no bias.

All random numbers are drawn from a numpy Generator before the compiled
collision loop runs, which keeps every run reproducible from its seed.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..errors import ConfinementError, DomainError
from ..marginals import h_grid, h_radial, maxwellian_h
from ..potentials import ExternalPotential, u_eval_grad
from ..scattering import _table_lookup
from .kernels import HARD_SPHERE, INVERSE_POWER, PSEUDO_MAXWELL, Kernel

MAX_COLLISIONS_PER_PARTICLE = 0.2


@dataclass
class VelocityEnsemble:
    """Momentum samples representing f1(p, t)/V of a homogeneous gas.

    ``density`` is the number density n entering the collision rate and
    ``weight`` the number of physical particles each sample stands for.
    """

    samples: np.ndarray
    density: float = 1.0
    weight: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=float).reshape(-1, 3)
        if len(self.samples) < 2:
            raise DomainError("a velocity ensemble needs at least two samples")
        if not self.weight > 0:
            raise DomainError("weight must be positive")
        if self.density < 0:
            raise DomainError("density must be non-negative")

    def __len__(self):
        return len(self.samples)

    def copy(self) -> "VelocityEnsemble":
        return VelocityEnsemble(self.samples.copy(), self.density, self.weight, self.mass)


@dataclass(frozen=True)
class Moments:
    density: float
    momentum: np.ndarray
    energy: float
    kurtosis: float


def maxwellian_ensemble(n: float, u, T: float, count: int, seed: int,
                        mass: float = 1.0) -> VelocityEnsemble:
    """Gaussian momenta with mean u and variance mT per component."""
    if not T > 0:
        raise DomainError("temperature must be positive")
    rng = np.random.default_rng(seed)
    p = np.asarray(u, float) + rng.normal(size=(count, 3)) * math.sqrt(mass * T)
    return VelocityEnsemble(p, n, 1.0, mass)


def two_temperature_ensemble(n: float, T1: float, T2: float, count: int, seed: int,
                             weights=(0.5, 0.5), mass: float = 1.0) -> VelocityEnsemble:
    """Mixture of two centred Maxwellians (an isotropic bimodal state)."""
    rng = np.random.default_rng(seed)
    w = np.asarray(weights, float) / np.sum(weights)
    comp = rng.random(count) < w[0]
    temps = np.where(comp, T1, T2)
    p = rng.normal(size=(count, 3)) * np.sqrt(mass * temps)[:, None]
    return VelocityEnsemble(p, n, 1.0, mass)


def excess_kurtosis(p) -> float:
    """(3/5) <|c|^4> / <|c|^2>^2 - 1 for c = p - <p>; zero for a Maxwellian."""
    p = np.asarray(p, float).reshape(-1, 3)
    c = p - p.mean(axis=0)
    c2 = np.sum(c * c, axis=1)
    m2 = c2.mean()
    return float(0.6 * np.mean(c2 * c2) / (m2 * m2) - 1.0)


def moments(obj, mass: float | None = None) -> Moments:
    """Density, momentum density, kinetic energy density, excess kurtosis.

    Accepts a VelocityEnsemble (densities scale with its ``density``) or a
    DiscreteVelocityGrid (quadrature over the grid).
    """
    from .quadrature import DiscreteVelocityGrid
    if isinstance(obj, DiscreteVelocityGrid):
        m = obj.mass if mass is None else mass
        pts = obj.points()
        w = obj.values.ravel() * obj.spacing ** 3
        n = float(w.sum())
        mom = (w[:, None] * pts).sum(axis=0)
        en = float(np.sum(w * np.sum(pts * pts, axis=1)) / (2.0 * m))
        u = mom / n
        c = pts - u
        c2 = np.sum(c * c, axis=1)
        m2 = np.sum(w * c2) / n
        kurt = float(0.6 * (np.sum(w * c2 * c2) / n) / (m2 * m2) - 1.0)
        return Moments(n, mom, en, kurt)
    m = obj.mass if mass is None else mass
    p = obj.samples
    n = obj.density
    mom = n * p.mean(axis=0)
    en = n * float(np.mean(np.sum(p * p, axis=1))) / (2.0 * m)
    kurt = excess_kurtosis(p) if len(p) > 1 and np.ptp(p) > 0 else 0.0
    return Moments(n, mom, en, kurt)


# --------------------------------------------------------------------------
# collision loop

@njit(cache=True, nogil=True)
def _sigma_g(g, code, diameter, kappa, gs, rho_max):
    if code == HARD_SPHERE:
        return math.pi * diameter * diameter * g
    if code == PSEUDO_MAXWELL:
        return kappa
    ng = gs.shape[0]
    lg = math.log(max(g, 1e-300))
    lg0 = math.log(gs[0])
    lg1 = math.log(gs[ng - 1])
    if lg <= lg0:
        r = rho_max[0]
    elif lg >= lg1:
        r = rho_max[ng - 1]
    else:
        pos = (lg - lg0) / (lg1 - lg0) * (ng - 1)
        j = min(int(pos), ng - 2)
        t = pos - j
        r = rho_max[j] * (1.0 - t) + rho_max[j + 1] * t
    return math.pi * r * r * g


@njit(cache=True, nogil=True)
def _deflect(g, u_rho, code, diameter, xs, gs, rho_max, chi_tab):
    """Deflection for a collision with impact parameter rho = R sqrt(u)."""
    if code == HARD_SPHERE:
        x = math.sqrt(u_rho)
        return 2.0 * math.acos(min(x, 1.0))
    if code == PSEUDO_MAXWELL:
        return math.acos(2.0 * u_rho - 1.0)
    ng = gs.shape[0]
    lg = math.log(max(g, 1e-300))
    lg0 = math.log(gs[0])
    lg1 = math.log(gs[ng - 1])
    if lg <= lg0:
        r = rho_max[0]
    elif lg >= lg1:
        r = rho_max[ng - 1]
    else:
        pos = (lg - lg0) / (lg1 - lg0) * (ng - 1)
        j = min(int(pos), ng - 2)
        t = pos - j
        r = rho_max[j] * (1.0 - t) + rho_max[j + 1] * t
    gq = min(max(g, gs[0]), gs[ng - 1])
    return _table_lookup(r * math.sqrt(u_rho) * (1.0 - 1e-15), gq, xs, gs, rho_max, chi_tab)


@njit(cache=True, nogil=True)
def _collide_pair(p, i, j, chi, phi):
    g0 = p[i, 0] - p[j, 0]
    g1 = p[i, 1] - p[j, 1]
    g2 = p[i, 2] - p[j, 2]
    gn = math.sqrt(g0 * g0 + g1 * g1 + g2 * g2)
    if gn == 0.0:
        return
    h0 = g0 / gn
    h1 = g1 / gn
    h2 = g2 / gn
    # axis least aligned with g
    a0 = 0.0
    a1 = 0.0
    a2 = 0.0
    if abs(h0) <= abs(h1) and abs(h0) <= abs(h2):
        a0 = 1.0
    elif abs(h1) <= abs(h2):
        a1 = 1.0
    else:
        a2 = 1.0
    e0 = h1 * a2 - h2 * a1
    e1 = h2 * a0 - h0 * a2
    e2 = h0 * a1 - h1 * a0
    en = math.sqrt(e0 * e0 + e1 * e1 + e2 * e2)
    e0 /= en
    e1 /= en
    e2 /= en
    f0 = h1 * e2 - h2 * e1
    f1 = h2 * e0 - h0 * e2
    f2 = h0 * e1 - h1 * e0
    c = math.cos(chi)
    s = math.sin(chi)
    cp = math.cos(phi)
    sp = math.sin(phi)
    b0 = cp * e0 + sp * f0
    b1 = cp * e1 + sp * f1
    b2 = cp * e2 + sp * f2
    o0 = gn * (c * h0 + s * b0)
    o1 = gn * (c * h1 + s * b1)
    o2 = gn * (c * h2 + s * b2)
    P0 = p[i, 0] + p[j, 0]
    P1 = p[i, 1] + p[j, 1]
    P2 = p[i, 2] + p[j, 2]
    p[i, 0] = 0.5 * (P0 + o0)
    p[i, 1] = 0.5 * (P1 + o1)
    p[i, 2] = 0.5 * (P2 + o2)
    p[j, 0] = 0.5 * (P0 - o0)
    p[j, 1] = 0.5 * (P1 - o1)
    p[j, 2] = 0.5 * (P2 - o2)


@njit(cache=True, nogil=True)
def _ntc_loop(p, mass, wmax, ci, cj, u_acc, u_rho, u_phi, code, diameter, kappa, xs, gs,
              rho_max, chi_tab):
    """Process candidate pairs in order.  Returns (collisions, overflow value).

    A positive overflow value is the first sigma*g found above the majorant;
    the caller then discards the step and retries with a larger majorant.
    """
    n_coll = 0
    for k in range(ci.shape[0]):
        i = ci[k]
        j = cj[k]
        g0 = p[i, 0] - p[j, 0]
        g1 = p[i, 1] - p[j, 1]
        g2 = p[i, 2] - p[j, 2]
        g = math.sqrt(g0 * g0 + g1 * g1 + g2 * g2) / mass
        w = _sigma_g(g, code, diameter, kappa, gs, rho_max)
        if w > wmax:
            return n_coll, w
        if u_acc[k] * wmax >= w:
            continue
        chi = _deflect(g, u_rho[k], code, diameter, xs, gs, rho_max, chi_tab)
        if chi <= 0.0:
            continue
        _collide_pair(p, i, j, chi, 2.0 * math.pi * u_phi[k])
        n_coll += 1
    return n_coll, 0.0


def initial_majorant(p, kernel: Kernel, mass: float = 1.0) -> float:
    """1.2 x max sigma(g) g over relative speeds up to twice the largest
    speed about the mean."""
    c = p - p.mean(axis=0)
    g_top = 2.0 * float(np.sqrt(np.max(np.sum(c * c, axis=1)))) / mass
    g = np.linspace(1e-6, max(g_top, 1e-6), 257)
    return 1.2 * float(np.max(kernel.sigma_g(g)))


@dataclass
class StepInfo:
    candidates: int
    collisions: int
    majorant: float
    retries: int


def dsmc_collision_step(ve: VelocityEnsemble, dt: float, kernel: Kernel, n: float,
                        mu: float, rng: np.random.Generator, majorant: float | None = None,
                        info: list | None = None) -> tuple[VelocityEnsemble, float]:
    """Collide the ensemble for time dt; returns (new ensemble, majorant).

    ``n`` is the number density, so a pair with relative speed g collides
    at rate n mu^2 sigma(g) g / (N - 1).  The returned majorant should be
    passed to the next call; it grows (with a warning) when exceeded.
    """
    p = ve.samples.copy()
    N = len(p)
    mass = ve.mass
    if majorant is None:
        majorant = initial_majorant(p, kernel, mass)
    rate = n * mu * mu
    if rate * majorant * dt > MAX_COLLISIONS_PER_PARTICLE:
        raise DomainError(
            f"dt too large: {rate * majorant * dt:.3g} expected candidates per particle "
            f"exceeds {MAX_COLLISIONS_PER_PARTICLE}")
    args = kernel.numba_args()
    retries = 0
    while True:
        lam = 0.5 * N * rate * majorant * dt
        n_cand = int(rng.poisson(lam)) if lam > 0 else 0
        ci = rng.integers(0, N, size=n_cand)
        cj = rng.integers(0, N - 1, size=n_cand)
        cj = cj + (cj >= ci)
        u = rng.random((3, n_cand))
        trial = p.copy()
        n_coll, over = _ntc_loop(trial, mass, majorant, ci, cj, u[0], u[1], u[2], *args)
        if over <= 0.0:
            break
        retries += 1
        new = 2.0 * majorant
        while new < over:
            new *= 2.0
        warnings.warn(f"collision majorant {majorant:.4g} exceeded by {over:.4g}; "
                      f"doubling to {new:.4g} and redoing the step", RuntimeWarning,
                      stacklevel=2)
        majorant = new
    if info is not None:
        info.append(StepInfo(n_cand, n_coll, majorant, retries))
    return VelocityEnsemble(trial, ve.density, ve.weight, mass), majorant


def mean_collision_rate(ve: VelocityEnsemble, kernel: Kernel, n: float, mu: float,
                        pairs: int = 200000) -> float:
    """n mu^2 <sigma(g) g> over pairs of the ensemble (deterministic pairing)."""
    p = ve.samples
    N = len(p)
    idx = np.arange(min(pairs, N * (N - 1)))
    i = idx % N
    shift = 1 + (idx // N) % (N - 1)
    j = (i + shift) % N
    g = np.linalg.norm(p[i] - p[j], axis=1) / ve.mass
    return float(n * mu * mu * np.mean(kernel.sigma_g(g)))


def mean_free_time(ve: VelocityEnsemble, kernel: Kernel, n: float, mu: float,
                   pairs: int = 200000) -> float:
    """1 / (n mu^2 <sigma_m(g) g>) with the momentum-transfer cross-section."""
    p = ve.samples
    N = len(p)
    idx = np.arange(min(pairs, N * (N - 1)))
    i = idx % N
    shift = 1 + (idx // N) % (N - 1)
    j = (i + shift) % N
    g = np.linalg.norm(p[i] - p[j], axis=1) / ve.mass
    rate = float(n * mu * mu * np.mean(kernel.transfer_sigma_g(g)))
    return 1.0 / rate if rate > 0 else math.inf


# --------------------------------------------------------------------------
# transport

def transport_step(q, p, dt: float, ext: ExternalPotential, mass: float = 1.0):
    """Kick-drift-kick free streaming in the external potential.

    Returns new (q, p).  Particles leaving the domain raise
    ConfinementError.
    """
    q = np.asarray(q, float).copy()
    p = np.asarray(p, float).copy()
    if ext.kind == "none":
        return q + p * dt / mass, p
    _, grad = u_eval_grad(ext, q)
    p -= 0.5 * dt * grad
    q += dt * p / mass
    if np.any(np.abs(q) >= ext.domain_halfwidth):
        raise ConfinementError("particle left the confining region during transport")
    _, grad = u_eval_grad(ext, q)
    p -= 0.5 * dt * grad
    return q, p


def cell_index(q, halfwidth: float, cells: int):
    k = np.floor((q + halfwidth) / (2.0 * halfwidth) * cells).astype(np.int64)
    k = np.clip(k, 0, cells - 1)
    return (k[:, 0] * cells + k[:, 1]) * cells + k[:, 2]


def collide_cells(q, p, dt, kernel, n_total, volume, mu, rng, halfwidth, cells,
                  majorants, mass=1.0):
    """Independent DSMC collisions within each spatial cell.

    The local number density of a cell is n_total/V times the ratio of its
    sample fraction to its volume fraction.  Cells are processed in index
    order from one stream, so the result depends only on the seed.
    """
    cid = cell_index(q, halfwidth, cells)
    order = np.argsort(cid, kind="stable")
    bounds = np.searchsorted(cid[order], np.arange(cells ** 3 + 1))
    p = p.copy()
    n_samples = len(p)
    cell_vol = volume / cells ** 3
    for c in range(cells ** 3):
        members = order[bounds[c]:bounds[c + 1]]
        if len(members) < 2:
            continue
        n_local = n_total * (len(members) / n_samples) * volume / cell_vol
        ve = VelocityEnsemble(p[members], n_local, 1.0, mass)
        out, majorants[c] = dsmc_collision_step(ve, dt, kernel, n_local, mu, rng,
                                                majorants.get(c))
        p[members] = out.samples
    return p


# --------------------------------------------------------------------------
# driver and report

@dataclass
class KineticConfig:
    """Settings of a homogeneous (or cell-resolved) kinetic run.

    Times are in units of the mean free time 1/(n mu^2 <sigma_m g>) of the
    initial state, sigma_m being the momentum-transfer cross-section, when ``time_unit='mean_free'``.
    """

    density: float = 1.0
    mu: float = 1.0
    t_final: float = 5.0
    n_outputs: int = 11
    steps_per_output: int = 20
    seed: int = 0
    time_unit: str = "mean_free"
    h_estimator: str = "radial"
    h_bins: int = 64
    h_width: float | None = None
    radial_bins: int = 200
    transport: bool = False
    external: ExternalPotential | None = None
    cells: int = 1


@dataclass
class KineticRunReport:
    times: np.ndarray
    H: np.ndarray
    H_stderr: np.ndarray
    density: np.ndarray
    momentum: np.ndarray
    energy: np.ndarray
    kurtosis: np.ndarray
    final: np.ndarray
    mean_free_time: float
    H_maxwellian: float
    meta: dict = field(default_factory=dict)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "H", "n", "px", "py", "pz", "E", "kurtosis", "H_stderr"])
            for k in range(len(self.times)):
                w.writerow([repr(float(x)) for x in (
                    self.times[k], self.H[k], self.density[k], *self.momentum[k],
                    self.energy[k], self.kurtosis[k], self.H_stderr[k])])

    def snapshot_json(self, path):
        with open(path, "w") as fh:
            json.dump({"t": float(self.times[-1]), "mean_free_time": self.mean_free_time,
                       "H_maxwellian": self.H_maxwellian,
                       "samples": [[float(v) for v in row] for row in self.final]},
                      fh, sort_keys=True)

    def monotone(self, slack: float = 2.0) -> bool:
        """H(t_{k+1}) <= H(t_k) + slack * stderr(H(t_{k+1})) for every k."""
        return bool(np.all(self.H[1:] <= self.H[:-1] + slack * self.H_stderr[1:]))


def entropy_of(p, cfg: KineticConfig, mass: float):
    p = np.asarray(p, float)
    c = p - p.mean(axis=0)
    if cfg.h_estimator == "radial":
        v_max = 1.25 * float(np.sqrt(np.max(np.sum(c * c, axis=1))))
        return h_radial(p, v_max, cfg.radial_bins, mass)
    width = cfg.h_width or 6.0 * float(np.sqrt(np.mean(c * c)))
    return h_grid(p, width, cfg.h_bins)


def _collide_substeps(p, dt, kernel, n, mu, rng, majorant, mass):
    """Collide for dt, split so each piece respects the per-step rate bound."""
    if majorant is None:
        majorant = initial_majorant(p, kernel, mass)
    ve = VelocityEnsemble(p, n, 1.0, mass)
    remaining = dt
    while remaining > 0:
        h_max = 0.999 * MAX_COLLISIONS_PER_PARTICLE / (n * mu * mu * majorant)
        pieces = max(1, math.ceil(remaining / h_max))
        h = remaining / pieces
        ve, majorant = dsmc_collision_step(ve, h, kernel, n, mu, rng, majorant)
        remaining = remaining - h if pieces > 1 else 0.0
    return ve.samples, majorant


def run_homogeneous(ve: VelocityEnsemble, kernel: Kernel, cfg: KineticConfig,
                    q=None) -> KineticRunReport:
    """Integrate the Boltzmann equation with DSMC and log H and moments.

    Without transport the gas is spatially homogeneous.  With ``cfg.transport``
    the positions ``q`` are advanced by Strang splitting (half transport,
    collisions per cell, half transport).
    """
    rng = np.random.default_rng(cfg.seed)
    mass = ve.mass
    n = cfg.density
    p = ve.samples.copy()
    tau = mean_free_time(ve, kernel, n, cfg.mu) if n > 0 else math.inf
    if not math.isfinite(tau):
        tau = 1.0
    unit = tau if cfg.time_unit == "mean_free" else 1.0
    t_final = cfg.t_final * unit
    out_times = np.linspace(0.0, t_final, cfg.n_outputs)
    ext = cfg.external or ExternalPotential(kind="none", domain_halfwidth=math.inf)
    if cfg.transport:
        if q is None:
            raise DomainError("transport needs positions")
        q = np.asarray(q, float).copy()
    rows_H, rows_se, rows_m = [], [], []

    def record(pp):
        est = entropy_of(pp, cfg, mass)
        rows_H.append(est.H)
        rows_se.append(est.stderr)
        rows_m.append(moments(VelocityEnsemble(pp, n if n > 0 else 1.0, 1.0, mass)))

    record(p)
    majorant = None
    majorants: dict = {}
    for k in range(1, cfg.n_outputs):
        dt = (out_times[k] - out_times[k - 1]) / cfg.steps_per_output
        for _ in range(cfg.steps_per_output):
            if cfg.transport:
                q, p = transport_step(q, p, 0.5 * dt, ext, mass)
            if n > 0:
                if cfg.transport and cfg.cells > 1:
                    p = collide_cells(q, p, dt, kernel, n, ext.volume, cfg.mu, rng,
                                      ext.domain_halfwidth, cfg.cells, majorants, mass)
                else:
                    p, majorant = _collide_substeps(p, dt, kernel, n, cfg.mu, rng, majorant,
                                                    mass)
            if cfg.transport:
                q, p = transport_step(q, p, 0.5 * dt, ext, mass)
        record(p)
    mom = np.array([m.momentum for m in rows_m])
    en = np.array([m.energy for m in rows_m])
    dens = np.array([m.density for m in rows_m])
    kurt = np.array([m.kurtosis for m in rows_m])
    c = p - p.mean(axis=0)
    T = float(np.mean(np.sum(c * c, axis=1))) / (3.0 * mass)
    return KineticRunReport(out_times, np.array(rows_H), np.array(rows_se), dens, mom, en,
                            kurt, p, tau, maxwellian_h(T, mass),
                            {"kernel": kernel.to_dict() if kernel is not None else None,
                             "samples": len(p)})
