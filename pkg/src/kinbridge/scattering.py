"""Two-body Hamiltonian flow and the asymptotic collision map.

Two identical particles of mass m interacting through Phi(|q2 - q1| / mu)
are split into centre-of-mass motion and relative motion.  The relative
coordinate is integrated in microscopic units, xi = (q2 - q1)/mu and
tau = t/mu, where the equation of motion

    d^2 xi / d tau^2 = (2/m) * f(|xi|) * xi/|xi|,   f = -dPhi/dr

does not depend on mu.  Outside the cutoff sphere the motion is a straight
line and is advanced in closed form; inside, an embedded Dormand-Prince
5(4) pair with tight tolerances is used and the cutoff crossing is located
by root finding so the force discontinuity is never stepped over.

Collision geometry follows the convention of the kinetic collision
integral: impact parameter rho = r/mu in the plane perpendicular to the
relative momentum g = p - p1, polar angle phi in that plane.  A repulsive
interaction turns g by the deflection angle chi towards the impact vector.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DegenerateCollisionError, DomainError, IntegrationError
from .potentials import PotentialSpec

GRAZING_CHI = 1e-6
DSMC_CHI_MIN = 1e-3

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.zeros((7, 7))
_A[1, :1] = [1 / 5]
_A[2, :2] = [3 / 40, 9 / 40]
_A[3, :3] = [44 / 45, -56 / 15, 32 / 9]
_A[4, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
_A[5, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
_A[6, :6] = [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]
_B = _A[6].copy()
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200,
               22 / 525, -1 / 40])


@dataclass(frozen=True)
class PhasePoint:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(3))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(3))
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.p))):
            raise DomainError("phase point has non-finite components")


@dataclass(frozen=True)
class CollisionGeometry:
    """Impact parameter (interaction-radius units) and polar angle.

    ``basis`` is an optional pair of orthonormal vectors spanning the plane
    perpendicular to the relative momentum; when omitted a deterministic
    basis is built from the relative momentum.
    """

    rho: float
    phi_angle: float = 0.0
    basis: tuple | None = None

    def __post_init__(self):
        if not self.rho >= 0:
            raise DomainError("impact parameter must be non-negative")


@dataclass(frozen=True)
class CollisionOutcome:
    p_out: np.ndarray
    p1_out: np.ndarray
    deflection: float
    geometry: CollisionGeometry | None = None


# --------------------------------------------------------------------------
# relative-motion integrator

@njit(cache=True, nogil=True)
def _accel(xi, out, gamma, amp, two_over_m):
    s2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]
    s = math.sqrt(s2)
    # f(s)/s with f = gamma*C*s^(-gamma-1)
    fs = two_over_m * gamma * amp * s ** (-gamma - 2.0)
    out[0] = fs * xi[0]
    out[1] = fs * xi[1]
    out[2] = fs * xi[2]


@njit(cache=True, nogil=True)
def _dp_step(y, h, ynew, err, k, tmp, A, B, E, gamma, amp, two_over_m):
    # y = (xi, w); dy/dtau = (w, a(xi))
    for st in range(7):
        for i in range(6):
            acc = y[i]
            for j in range(st):
                acc += h * A[st, j] * k[j, i]
            tmp[i] = acc
        k[st, 0] = tmp[3]
        k[st, 1] = tmp[4]
        k[st, 2] = tmp[5]
        _accel(tmp[:3], k[st, 3:], gamma, amp, two_over_m)
    for i in range(6):
        s5 = y[i]
        e = 0.0
        for st in range(7):
            s5 += h * B[st] * k[st, i]
            e += h * E[st] * k[st, i]
        ynew[i] = s5
        err[i] = e


@njit(cache=True, nogil=True)
def _norm3(v):
    return math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])


@njit(cache=True, nogil=True)
def _relative_flow_forward(y, tau, gamma, amp, rc, mass, rtol, atol, interacting):
    """Advance y = (xi, w) in place by tau >= 0.  Returns (status, closest)."""
    two_over_m = 2.0 / mass
    ynew = np.empty(6)
    err = np.empty(6)
    k = np.empty((7, 6))
    tmp = np.empty(6)
    A = _A
    B = _B
    E = _E
    remaining = tau
    closest = _norm3(y[:3])
    h = -1.0
    outside_final = False
    while remaining > 0.0:
        s = _norm3(y[:3])
        if s < closest:
            closest = s
        if (not interacting) or outside_final or s >= rc:
            radial = y[0] * y[3] + y[1] * y[4] + y[2] * y[5]
            ww = y[3] * y[3] + y[4] * y[4] + y[5] * y[5]
            t_hit = -1.0
            if interacting and (not outside_final) and radial < 0.0 and ww > 0.0:
                c = s * s - rc * rc
                disc = radial * radial - ww * c
                if disc >= 0.0:
                    sq = math.sqrt(disc)
                    # smaller root of ww t^2 + 2 radial t + c = 0, stable form
                    t_hit = c / (-radial + sq) if (-radial + sq) > 0 else 0.0
                    if t_hit < 0.0:
                        t_hit = 0.0
            if t_hit < 0.0 or t_hit >= remaining:
                for i in range(3):
                    y[i] += y[i + 3] * remaining
                # closest approach along the final free segment
                if ww > 0.0 and radial < 0.0:
                    tc = min(-radial / ww, remaining)
                    d = 0.0
                    for i in range(3):
                        xi_c = y[i] - y[i + 3] * (remaining - tc)
                        d += xi_c * xi_c
                    d = math.sqrt(d)
                    if d < closest:
                        closest = d
                return 0, closest
            for i in range(3):
                y[i] += y[i + 3] * t_hit
            remaining -= t_hit
            s = rc
        # inside the interaction sphere
        w = _norm3(y[3:])
        if h <= 0.0:
            a_scale = 2.0 * gamma * amp * s ** (-gamma - 1.0) / mass
            h = 0.02 * s / max(w, 1e-300)
            if a_scale > 0:
                h = min(h, 0.02 * math.sqrt(s / a_scale))
        if h > remaining:
            h = remaining
        while True:
            _dp_step(y, h, ynew, err, k, tmp, A, B, E, gamma, amp, two_over_m)
            en = 0.0
            for i in range(6):
                sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
                en += (err[i] / sc) ** 2
            en = math.sqrt(en / 6.0)
            if en <= 1.0:
                break
            h *= max(0.2, 0.9 * en ** (-0.2))
            if h < 1e-14 * (1.0 + tau):
                return 1, closest
        s_new = _norm3(ynew[:3])
        if s_new >= rc:
            # locate the exit time within [0, h] with Illinois regula falsi
            lo = 0.0
            hi = h
            f_lo = s * s - rc * rc
            f_hi = s_new * s_new - rc * rc
            side = 0
            he = h
            for _ in range(100):
                he = (lo * f_hi - hi * f_lo) / (f_hi - f_lo)
                if not (he > lo and he < hi):
                    he = 0.5 * (lo + hi)
                _dp_step(y, he, ynew, err, k, tmp, A, B, E, gamma, amp, two_over_m)
                sn = _norm3(ynew[:3])
                fm = sn * sn - rc * rc
                if abs(fm) <= 1e-15 * rc * rc or (hi - lo) <= 1e-16 * (1.0 + h):
                    break
                if fm < 0.0:
                    lo = he
                    f_lo = fm
                    if side == -1:
                        f_hi *= 0.5
                    side = -1
                else:
                    hi = he
                    f_hi = fm
                    if side == 1:
                        f_lo *= 0.5
                    side = 1
            for i in range(6):
                y[i] = ynew[i]
            remaining -= he
            outside_final = True
            continue
        for i in range(6):
            y[i] = ynew[i]
        if s_new < closest:
            closest = s_new
        remaining -= h
        h *= min(5.0, max(0.2, 0.9 * max(en, 1e-10) ** (-0.2)))
    return 0, closest


@njit(cache=True, nogil=True)
def _relative_flow(y, tau, gamma, amp, rc, mass, rtol, atol, interacting):
    if tau >= 0.0:
        return _relative_flow_forward(y, tau, gamma, amp, rc, mass, rtol, atol, interacting)
    # time reversal: flip velocity, go forward, flip back
    for i in range(3, 6):
        y[i] = -y[i]
    status, closest = _relative_flow_forward(y, -tau, gamma, amp, rc, mass, rtol, atol,
                                             interacting)
    for i in range(3, 6):
        y[i] = -y[i]
    return status, closest


@njit(cache=True, nogil=True)
def _pair_flow_batch(q1, p1, q2, p2, t, mu, gamma, amp, rc, mass, rtol, atol,
                     interacting, status, closest):
    """Flow pair n by t[n] (macroscopic time), in place."""
    y = np.empty(6)
    for n in range(q1.shape[0]):
        P0 = p1[n, 0] + p2[n, 0]
        P1 = p1[n, 1] + p2[n, 1]
        P2 = p1[n, 2] + p2[n, 2]
        for i in range(3):
            y[i] = (q2[n, i] - q1[n, i]) / mu
            y[i + 3] = (p2[n, i] - p1[n, i]) / mass
        st, cl = _relative_flow(y, t[n] / mu, gamma, amp, rc, mass, rtol, atol, interacting)
        status[n] = st
        closest[n] = cl
        Pv = (P0, P1, P2)
        for i in range(3):
            qc = 0.5 * (q1[n, i] + q2[n, i]) + Pv[i] * t[n] / (2.0 * mass)
            r = mu * y[i]
            q1[n, i] = qc - 0.5 * r
            q2[n, i] = qc + 0.5 * r
            p1[n, i] = 0.5 * Pv[i] - 0.5 * mass * y[i + 3]
            p2[n, i] = 0.5 * Pv[i] + 0.5 * mass * y[i + 3]


def _flow_params(spec: PotentialSpec):
    if spec.kind == "hard_sphere_limit":
        raise DomainError("hard_sphere_limit has no Hamiltonian flow; use hard_sphere_outcome")
    interacting = spec.kind == "inverse_power"
    return float(spec.gamma), float(spec.amplitude), float(spec.cutoff_radius), interacting


def pair_flow(q1, p1, q2, p2, t, spec: PotentialSpec, mu: float, mass: float = 1.0,
              rtol: float = 1e-12, atol: float = 1e-12):
    """Vectorised two-body flow for arrays of pairs (shape (n, 3) each).

    Returns new copies ``(q1, p1, q2, p2)`` advanced by time ``t`` (scalar
    or one per pair, may be negative) and the closest approach of each
    pair in microscopic units.
    """
    gamma, amp, rc, interacting = _flow_params(spec)
    arrs = [np.array(a, dtype=float, copy=True).reshape(-1, 3) for a in (q1, p1, q2, p2)]
    n = arrs[0].shape[0]
    status = np.zeros(n, dtype=np.int64)
    closest = np.zeros(n)
    times = np.ascontiguousarray(np.broadcast_to(np.asarray(t, dtype=float), (n,)))
    if not np.all(np.isfinite(times)):
        raise DomainError("flow time must be finite")
    _pair_flow_batch(arrs[0], arrs[1], arrs[2], arrs[3], times, float(mu), gamma, amp,
                     rc, float(mass), rtol, atol, interacting, status, closest)
    if np.any(status != 0):
        bad = int(np.argmax(status != 0))
        raise IntegrationError(
            f"step-size underflow in two-body flow (pair {bad})",
            closest_approach=float(closest[bad]))
    return arrs[0], arrs[1], arrs[2], arrs[3], closest


def two_body_flow(x1: PhasePoint, x2: PhasePoint, t: float, spec: PotentialSpec,
                  mu: float, mass: float = 1.0, rtol: float = 1e-12, atol: float = 1e-12):
    """Move the pair (x1, x2) along the flow of H0_2 for time t."""
    if np.array_equal(x1.q, x2.q):
        raise DomainError("coincident positions")
    if not math.isfinite(t):
        raise DomainError("flow time must be finite")
    q1, p1, q2, p2, _ = pair_flow(x1.q, x1.p, x2.q, x2.p, t, spec, mu, mass, rtol, atol)
    return PhasePoint(q1[0], p1[0]), PhasePoint(q2[0], p2[0])


def pair_energy(x1: PhasePoint, x2: PhasePoint, spec: PotentialSpec, mu: float,
                mass: float = 1.0) -> float:
    """H0_2 = p1^2/2m + p2^2/2m + Phi(|q1 - q2| / mu)."""
    from .potentials import phi_eval
    kin = (x1.p @ x1.p + x2.p @ x2.p) / (2.0 * mass)
    if spec.kind == "free":
        return float(kin)
    return float(kin + phi_eval(spec, np.linalg.norm(x2.q - x1.q) / mu))


# --------------------------------------------------------------------------
# deflection angle by quadrature

_GL_N = 96
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GL_N)


@njit(cache=True, nogil=True)
def _turning_point(rho, ratio, gamma, uc, shift_ratio):
    """Root u0 > uc of D(u) = 1 - rho^2 u^2 - ratio*u^gamma + shift_ratio."""
    lo = uc
    hi = max(2.0 * uc, 1.0)
    for _ in range(2000):
        d = 1.0 - rho * rho * hi * hi - ratio * hi ** gamma + shift_ratio
        if d < 0.0:
            break
        lo = hi
        hi *= 2.0
    u = 0.5 * (lo + hi)
    for _ in range(300):
        d = 1.0 - rho * rho * u * u - ratio * u ** gamma + shift_ratio
        if d > 0.0:
            lo = u
        else:
            hi = u
        dp = -2.0 * rho * rho * u - gamma * ratio * u ** (gamma - 1.0)
        un = u - d / dp
        if not (un > lo and un < hi):
            un = 0.5 * (lo + hi)
        if abs(un - u) <= 1e-15 * u or hi - lo <= 1e-15 * hi:
            u = un
            break
        u = un
    return u


@njit(cache=True, nogil=True)
def _chi_inverse_power(rho, energy, gamma, amp, rc, xs, ws):
    if rho >= rc:
        return 0.0
    if rho == 0.0:
        return math.pi
    uc = 1.0 / rc
    ratio = amp / energy
    shift_ratio = amp * rc ** (-gamma) / energy
    u0 = _turning_point(rho, ratio, gamma, uc, shift_ratio)
    du = u0 - uc
    # u = uc + du*sin(theta); D(u) = (u0-u) K(u) with K smooth and positive
    half = 0.25 * math.pi
    total = 0.0
    for n in range(xs.shape[0]):
        th = half * (xs[n] + 1.0)
        sn = math.sin(th)
        u = uc + du * sn
        x = u / u0
        lx = math.log(x)
        if lx == 0.0:
            dd = gamma
        else:
            dd = math.expm1(gamma * lx) / math.expm1(lx)
        K = rho * rho * (u0 + u) + ratio * u0 ** (gamma - 1.0) * dd
        total += ws[n] * math.sqrt(du * (1.0 + sn) / K)
    inner = half * total
    chi = math.pi - 2.0 * math.asin(rho / rc) - 2.0 * rho * inner
    if chi < 0.0:
        chi = 0.0
    return chi


@njit(cache=True, nogil=True)
def _chi_grid(rhos, gs, mass, gamma, amp, rc, xs, ws, out):
    for i in range(rhos.shape[0]):
        for j in range(gs.shape[0]):
            energy = 0.25 * mass * gs[j] * gs[j]
            out[i, j] = _chi_inverse_power(rhos[i], energy, gamma, amp, rc, xs, ws)


def deflection_angle(rho, g, spec: PotentialSpec, mass: float = 1.0):
    """Classical deflection angle chi(rho, g) in (0, pi], 0 outside range.

    ``g`` is the relative speed |p - p1| / m; the reduced one-body problem
    has mass m/2 and energy m g^2 / 4.  Broadcasts over array inputs.
    """
    rho_a = np.asarray(rho, dtype=float)
    g_a = np.asarray(g, dtype=float)
    if np.any(rho_a < 0):
        raise DomainError("impact parameter must be non-negative")
    if np.any(~(g_a > 0)):
        raise DomainError("relative speed must be positive")
    rho_b, g_b = np.broadcast_arrays(rho_a, g_a)
    if spec.kind == "free":
        out = np.zeros(rho_b.shape)
    elif spec.kind == "hard_sphere_limit":
        out = hard_sphere_chi(rho_b, spec.diameter)
    else:
        out = np.empty(rho_b.shape)
        flat_r = rho_b.ravel()
        flat_g = g_b.ravel()
        res = out.reshape(-1)
        for n in range(flat_r.size):
            res[n] = _chi_inverse_power(flat_r[n], 0.25 * mass * flat_g[n] ** 2,
                                        spec.gamma, spec.amplitude, spec.cutoff_radius,
                                        _GL_X, _GL_W)
    return float(out) if out.ndim == 0 else out


def hard_sphere_chi(rho, diameter):
    """chi = 2 arccos(rho/d) for rho < d, else 0."""
    x = np.clip(np.asarray(rho, dtype=float) / diameter, 0.0, 1.0)
    out = 2.0 * np.arccos(x)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# collision maps

def plane_basis(g):
    """Deterministic orthonormal pair perpendicular to ``g``."""
    g = np.asarray(g, dtype=float)
    gh = g / np.linalg.norm(g)
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(gh)))] = 1.0
    e1 = np.cross(gh, axis)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(gh, e1)
    return e1, e2


def _impact_direction(g, geom: CollisionGeometry):
    if geom.basis is None:
        e1, e2 = plane_basis(g)
    else:
        e1, e2 = (np.asarray(v, dtype=float) for v in geom.basis)
    return math.cos(geom.phi_angle) * e1 + math.sin(geom.phi_angle) * e2


def _rotate(p, p1, chi, b_hat):
    P = p + p1
    g = p - p1
    gn = np.linalg.norm(g)
    gh = g / gn
    g_out = gn * (math.cos(chi) * gh + math.sin(chi) * b_hat)
    return 0.5 * (P + g_out), 0.5 * (P - g_out)


def post_collision_momenta(p, p1, geom: CollisionGeometry, spec: PotentialSpec,
                           mass: float = 1.0) -> CollisionOutcome:
    """Asymptotic outgoing momenta for incoming (p, p1) and impact geometry."""
    p = np.asarray(p, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    g = p - p1
    gn = float(np.linalg.norm(g))
    if gn == 0.0:
        raise DegenerateCollisionError("equal momenta: relative velocity is zero")
    chi = deflection_angle(geom.rho, gn / mass, spec, mass)
    if chi < GRAZING_CHI:
        return CollisionOutcome(p.copy(), p1.copy(), 0.0, geom)
    b_hat = _impact_direction(g, geom)
    p_out, p1_out = _rotate(p, p1, chi, b_hat)
    return CollisionOutcome(p_out, p1_out, float(chi), geom)


def hard_sphere_outcome(p, p1, geom: CollisionGeometry, diameter: float) -> CollisionOutcome:
    """Specular reflection about the line of centres at contact."""
    p = np.asarray(p, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    g = p - p1
    gn = float(np.linalg.norm(g))
    if geom.rho >= diameter or gn == 0.0:
        return CollisionOutcome(p.copy(), p1.copy(), 0.0, geom)
    gh = g / gn
    b = geom.rho * _impact_direction(g, geom)
    contact = b - math.sqrt(diameter ** 2 - geom.rho ** 2) * gh
    n_hat = contact / np.linalg.norm(contact)
    g_out = g - 2.0 * (g @ n_hat) * n_hat
    P = p + p1
    chi = math.acos(max(-1.0, min(1.0, float(g_out @ g) / (gn * gn))))
    return CollisionOutcome(0.5 * (P + g_out), 0.5 * (P - g_out), chi, geom)


def reversed_geometry(outcome: CollisionOutcome, p, p1) -> CollisionGeometry:
    """Geometry of the inverse collision taking the outgoing pair back."""
    p = np.asarray(p, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    geom = outcome.geometry
    g = p - p1
    gh = g / np.linalg.norm(g)
    b_hat = _impact_direction(g, geom)
    chi = outcome.deflection
    g_out = outcome.p_out - outcome.p1_out
    gh_out = g_out / np.linalg.norm(g_out)
    if chi == 0.0:
        e1 = b_hat
    else:
        e1 = math.sin(chi) * gh - math.cos(chi) * b_hat
        e1 = e1 - (e1 @ gh_out) * gh_out
        e1 /= np.linalg.norm(e1)
    e2 = np.cross(gh_out, e1)
    return CollisionGeometry(geom.rho, 0.0, (e1, e2))


# --------------------------------------------------------------------------
# tabulated kernel

class DeflectionTable:
    """chi(rho, g) tabulated for DSMC sampling.

    Rows are the normalised impact parameter x = rho / rho_max(g) on a
    uniform grid; columns are relative speeds on a logarithmic grid.
    ``rho_max(g)`` is where the deflection drops to ``chi_min``; collisions
    beyond it are grazing and not performed.
    """

    def __init__(self, spec: PotentialSpec, mass: float = 1.0, n_rho: int = 256,
                 n_g: int = 64, g_range=(1e-2, 40.0), chi_min: float = DSMC_CHI_MIN):
        if spec.kind != "inverse_power":
            raise DomainError("tables are built for inverse_power potentials")
        self.spec = spec
        self.mass = mass
        self.chi_min = chi_min
        self.g = np.geomspace(g_range[0], g_range[1], n_g)
        self.x = np.linspace(0.0, 1.0, n_rho)
        self.rho_max = np.array([self._rho_max(gv) for gv in self.g])
        self.chi = np.empty((n_rho, n_g))
        for j, gv in enumerate(self.g):
            col = np.empty((n_rho, 1))
            _chi_grid(self.x * self.rho_max[j], np.array([gv]), mass, spec.gamma,
                      spec.amplitude, spec.cutoff_radius, _GL_X, _GL_W, col)
            self.chi[:, j] = col[:, 0]

    def _rho_max(self, g):
        spec = self.spec
        energy = 0.25 * self.mass * g * g
        lo, hi = 0.0, spec.cutoff_radius
        f = lambda r: _chi_inverse_power(r, energy, spec.gamma, spec.amplitude,
                                         spec.cutoff_radius, _GL_X, _GL_W) - self.chi_min
        if f(hi * (1 - 1e-12)) >= 0:
            return hi
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if f(mid) >= 0:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def sigma(self, g):
        """Total cross-section pi rho_max(g)^2 (interaction-radius units)."""
        return np.pi * np.interp(np.log(g), np.log(self.g), self.rho_max) ** 2

    def __call__(self, rho, g):
        return table_chi(np.asarray(rho, float), np.asarray(g, float), self.x, self.g,
                         self.rho_max, self.chi)

    def arrays(self):
        return self.x, self.g, self.rho_max, self.chi

    def dump_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rho", "g", "chi"])
            for j, gv in enumerate(self.g):
                for i, xv in enumerate(self.x):
                    w.writerow([repr(float(xv * self.rho_max[j])), repr(float(gv)),
                                repr(float(self.chi[i, j]))])


@njit(cache=True, nogil=True)
def _table_lookup(rho, g, xs, gs, rho_max, chi):
    ng = gs.shape[0]
    lg = math.log(g)
    lg0 = math.log(gs[0])
    lg1 = math.log(gs[ng - 1])
    if lg <= lg0:
        j = 0
        tg = 0.0
    elif lg >= lg1:
        j = ng - 2
        tg = 1.0
    else:
        pos = (lg - lg0) / (lg1 - lg0) * (ng - 1)
        j = min(int(pos), ng - 2)
        tg = pos - j
    rmax = rho_max[j] * (1.0 - tg) + rho_max[j + 1] * tg
    if rho >= rmax:
        return 0.0
    x = rho / rmax
    nx = xs.shape[0]
    posx = x * (nx - 1)
    i = min(int(posx), nx - 2)
    tx = posx - i
    c00 = chi[i, j]
    c10 = chi[i + 1, j]
    c01 = chi[i, j + 1]
    c11 = chi[i + 1, j + 1]
    return ((1 - tx) * (1 - tg) * c00 + tx * (1 - tg) * c10
            + (1 - tx) * tg * c01 + tx * tg * c11)


@njit(cache=True)
def _table_chi_vec(rho, g, xs, gs, rho_max, chi, out):
    for n in range(rho.shape[0]):
        out[n] = _table_lookup(rho[n], g[n], xs, gs, rho_max, chi)


def table_chi(rho, g, xs, gs, rho_max, chi):
    rho_b, g_b = np.broadcast_arrays(rho, g)
    out = np.empty(rho_b.size)
    _table_chi_vec(np.ascontiguousarray(rho_b.ravel()), np.ascontiguousarray(g_b.ravel()),
                   xs, gs, rho_max, chi, out)
    return out.reshape(rho_b.shape) if rho_b.ndim else float(out[0])
