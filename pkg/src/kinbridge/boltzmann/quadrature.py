"""Deterministic discrete-velocity quadrature of the collision integral.

    St f(p) = n mu^2 int dp1 int rho drho dphi (|p - p1|/m) [f' f1' - f f1]

is discretised over ordered pairs of grid nodes (p_i, p_j), Gauss-Legendre
nodes in the scattering variable and uniform azimuth nodes.  The outgoing
momenta generally fall between grid nodes; their mass is spread onto the
grid with trilinear weights plus a three-point second-difference
correction per axis that restores the kinetic energy exactly.  A
collision whose stencil leaves the grid is dropped with its loss term, so
mass, momentum and energy of the discrete operator vanish to round-off.

Plane basis for the azimuth: e1 = normalise(g_hat x a) with a the
coordinate axis least aligned with g (lowest index on ties),
e2 = g_hat x e1, and phi_l = 2 pi (l + 1/2) / n_phi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..errors import DomainError
from .kernels import Kernel

TAIL_TOLERANCE = 1e-6


@dataclass
class DiscreteVelocityGrid:
    """Cubic momentum grid with ``n`` nodes per axis spanning [-cutoff, cutoff]."""

    n: int
    cutoff: float
    values: np.ndarray
    mass: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.n, self.n, self.n)
        if np.any(self.values < 0):
            raise DomainError("grid values must be non-negative")
        if self.n < 3 or not self.cutoff > 0:
            raise DomainError("grid needs n >= 3 and a positive cutoff")

    @property
    def spacing(self) -> float:
        return 2.0 * self.cutoff / (self.n - 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.cutoff, self.cutoff, self.n)

    def points(self) -> np.ndarray:
        a = self.axis
        X, Y, Z = np.meshgrid(a, a, a, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def tail_fraction(self) -> float:
        v = self.values
        inner = v[1:-1, 1:-1, 1:-1].sum()
        total = v.sum()
        return float((total - inner) / total) if total > 0 else 0.0

    @classmethod
    def maxwellian(cls, n: int, cutoff: float, T: float = 1.0, u=(0.0, 0.0, 0.0),
                   density: float = 1.0, mass: float = 1.0) -> "DiscreteVelocityGrid":
        a = np.linspace(-cutoff, cutoff, n)
        X, Y, Z = np.meshgrid(a, a, a, indexing="ij")
        u = np.asarray(u, float)
        r2 = (X - u[0]) ** 2 + (Y - u[1]) ** 2 + (Z - u[2]) ** 2
        f = density * (2 * np.pi * mass * T) ** -1.5 * np.exp(-r2 / (2 * mass * T))
        return cls(n, cutoff, f, mass)


@njit(cache=True, nogil=True)
def _stencil(p, lo, h, n, idx, w):
    """Fill 15 (node, weight) entries projecting a unit mass at p.

    Returns False if the stencil does not fit inside the grid.
    """
    base = np.empty(3, dtype=np.int64)
    t = np.empty(3)
    cen = np.empty(3, dtype=np.int64)
    excess = 0.0
    for d in range(3):
        x = (p[d] - lo) / h
        b = int(math.floor(x))
        if b < 0 or b > n - 2:
            return False
        base[d] = b
        t[d] = x - b
        c = int(math.floor(x + 0.5))
        if c < 1 or c > n - 2:
            return False
        cen[d] = c
        excess += t[d] * (1.0 - t[d])
    k = 0
    for a in range(2):
        wa = t[0] if a else 1.0 - t[0]
        for b in range(2):
            wb = t[1] if b else 1.0 - t[1]
            for c in range(2):
                wc = t[2] if c else 1.0 - t[2]
                idx[k] = ((base[0] + a) * n + base[1] + b) * n + base[2] + c
                w[k] = wa * wb * wc
                k += 1
    delta = -excess / 6.0
    centre = (cen[0] * n + cen[1]) * n + cen[2]
    idx[k] = centre
    w[k] = -6.0 * delta
    k += 1
    stride = (n * n, n, 1)
    for d in range(3):
        idx[k] = centre + stride[d]
        w[k] = delta
        idx[k + 1] = centre - stride[d]
        w[k + 1] = delta
        k += 2
    return True


@njit(cache=True, nogil=True)
def _plane_basis(h0, h1, h2):
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
    return e0, e1, e2, h1 * e2 - h2 * e1, h2 * e0 - h0 * e2, h0 * e1 - h1 * e0


@njit(cache=True, nogil=True)
def _collision_operator(f, pts, n, lo, h, key_of, chi_nodes, rate_w, n_phi, pref, out):
    """Conservative discrete collision operator; ``out`` receives d f/dt."""
    m = pts.shape[0]
    idx1 = np.empty(15, dtype=np.int64)
    w1 = np.empty(15)
    idx2 = np.empty(15, dtype=np.int64)
    w2 = np.empty(15)
    p_out = np.empty(3)
    p1_out = np.empty(3)
    for k in range(m):
        out[k] = 0.0
    n_ang = chi_nodes.shape[1]
    dropped = 0
    for i in range(m):
        fi = f[i]
        if fi == 0.0:
            continue
        for j in range(m):
            if j == i:
                continue
            fj = f[j]
            if fj == 0.0:
                continue
            g0 = pts[i, 0] - pts[j, 0]
            g1 = pts[i, 1] - pts[j, 1]
            g2 = pts[i, 2] - pts[j, 2]
            gn = math.sqrt(g0 * g0 + g1 * g1 + g2 * g2)
            h0 = g0 / gn
            h1 = g1 / gn
            h2 = g2 / gn
            e0, e1, e2, f0, f1, f2 = _plane_basis(h0, h1, h2)
            key = key_of[i, j]
            P0 = pts[i, 0] + pts[j, 0]
            P1 = pts[i, 1] + pts[j, 1]
            P2 = pts[i, 2] + pts[j, 2]
            for a in range(n_ang):
                chi = chi_nodes[key, a]
                c = math.cos(chi)
                s = math.sin(chi)
                amount = pref * rate_w[key, a] / n_phi * fi * fj
                for l in range(n_phi):
                    phi = 2.0 * math.pi * (l + 0.5) / n_phi
                    cp = math.cos(phi)
                    sp = math.sin(phi)
                    o0 = gn * (c * h0 + s * (cp * e0 + sp * f0))
                    o1 = gn * (c * h1 + s * (cp * e1 + sp * f1))
                    o2 = gn * (c * h2 + s * (cp * e2 + sp * f2))
                    p_out[0] = 0.5 * (P0 + o0)
                    p_out[1] = 0.5 * (P1 + o1)
                    p_out[2] = 0.5 * (P2 + o2)
                    p1_out[0] = 0.5 * (P0 - o0)
                    p1_out[1] = 0.5 * (P1 - o1)
                    p1_out[2] = 0.5 * (P2 - o2)
                    if not _stencil(p_out, lo, h, n, idx1, w1):
                        dropped += 1
                        continue
                    if not _stencil(p1_out, lo, h, n, idx2, w2):
                        dropped += 1
                        continue
                    half = 0.5 * amount
                    for q in range(15):
                        out[idx1[q]] += half * w1[q]
                        out[idx2[q]] += half * w2[q]
                    out[i] -= half
                    out[j] -= half
    return dropped


def _angular_tables(grid: DiscreteVelocityGrid, kernel: Kernel, n_ang: int):
    n = grid.n
    ii = np.arange(n)
    I, J, K = np.meshgrid(ii, ii, ii, indexing="ij")
    ijk = np.column_stack([I.ravel(), J.ravel(), K.ravel()])
    d = ijk[:, None, :] - ijk[None, :, :]
    key_of = np.sum(d * d, axis=2).astype(np.int64)
    keys = np.unique(key_of)
    max_key = int(keys.max())
    chi_nodes = np.zeros((max_key + 1, n_ang))
    rate_w = np.zeros((max_key + 1, n_ang))
    h = grid.spacing
    for key in keys:
        if key == 0:
            continue
        g = h * math.sqrt(key) / grid.mass
        chi, w = kernel.angular_nodes(g, n_ang)
        chi_nodes[key] = chi
        rate_w[key] = w
    return key_of, chi_nodes, rate_w


@dataclass
class CollisionOperatorResult:
    values: np.ndarray  # d f / dt on the grid, shape (n, n, n)
    loss_scale: float  # sum over nodes of the loss-term magnitude
    dropped: int


def collision_operator(grid: DiscreteVelocityGrid, kernel: Kernel, n: float, mu: float,
                       n_angular: int = 8, n_phi: int = 8,
                       check_tail: bool = True) -> CollisionOperatorResult:
    """St f at every grid node."""
    if check_tail and grid.tail_fraction() > TAIL_TOLERANCE:
        raise DomainError(
            f"grid cutoff too small: {grid.tail_fraction():.2e} of the mass lies on the "
            "outer shell")
    key_of, chi_nodes, rate_w = _angular_tables(grid, kernel, n_angular)
    f = np.ascontiguousarray(grid.values.ravel())
    out = np.zeros_like(f)
    h = grid.spacing
    pref = n * mu * mu * h ** 3
    dropped = _collision_operator(f, grid.points(), grid.n, -grid.cutoff, h, key_of,
                                  chi_nodes, rate_w, n_phi, pref, out)
    # loss magnitude: sum_i f_i * n mu^2 sum_j f_j sigma g h^3
    total_rate = rate_w.sum(axis=1)[key_of]
    loss = pref * f * (total_rate @ f)
    return CollisionOperatorResult(out.reshape(grid.values.shape), float(np.sum(loss)),
                                   int(dropped))


def collision_integral_quadrature(grid: DiscreteVelocityGrid, p, kernel: Kernel, n: float,
                                  mu: float, n_angular: int = 8, n_phi: int = 8,
                                  check_tail: bool = True) -> float:
    """St f at the grid node located at momentum ``p``."""
    a = grid.axis
    p = np.asarray(p, float)
    k = np.rint((p + grid.cutoff) / grid.spacing).astype(int)
    if np.any(k < 0) or np.any(k >= grid.n) or np.max(np.abs(a[k] - p)) > 1e-9 * grid.spacing:
        raise DomainError("p must be a grid node")
    res = collision_operator(grid, kernel, n, mu, n_angular, n_phi, check_tail)
    return float(res.values[k[0], k[1], k[2]])
