"""Empirical one- and two-particle distribution functions.

Histograms are normalised so that f1 integrates to V over phase space and
f2 to V^2, i.e. f_s / V^s is a probability density.  Besides the
histograms this module provides the H-functional, the Grad scaling
schedule, the molecular-chaos residual and the Bogolyubov diagnostic.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DomainError, InvalidSpecError

AXIS_NAMES = ("qx", "qy", "qz", "px", "py", "pz")


# --------------------------------------------------------------------------
# histograms

@dataclass
class PhaseHistogram:
    """Dense histogram estimate of f_s on a product of 1-d bin grids.

    ``values`` holds density values (not counts): sum(values * cell volume)
    equals ``normalization`` (V^s) when no samples fall outside the grid.
    """

    axes: list  # list of (name, edges)
    counts: np.ndarray
    normalization: float
    sample_count: int
    out_of_range: int = 0

    def __post_init__(self):
        for name, edges in self.axes:
            if np.any(np.diff(edges) <= 0):
                raise DomainError(f"bin edges of {name} must be strictly increasing")
        if np.any(self.counts < 0):
            raise DomainError("histogram counts must be non-negative")

    @property
    def out_of_range_fraction(self) -> float:
        total = self.sample_count
        return self.out_of_range / total if total else 0.0

    @property
    def flagged(self) -> bool:
        return self.out_of_range_fraction > 0.01

    def cell_volume(self) -> np.ndarray:
        widths = [np.diff(e) for _, e in self.axes]
        vol = widths[0]
        for w in widths[1:]:
            vol = np.multiply.outer(vol, w)
        return vol

    @property
    def values(self) -> np.ndarray:
        return self.normalization * self.counts / (self.sample_count * self.cell_volume())

    def integral(self) -> float:
        return float(np.sum(self.values * self.cell_volume()))

    def marginal(self, keep) -> "PhaseHistogram":
        """Sum out every axis not named in ``keep``."""
        names = [n for n, _ in self.axes]
        drop = tuple(i for i, n in enumerate(names) if n not in keep)
        axes = [a for a in self.axes if a[0] in keep]
        return PhaseHistogram(axes, self.counts.sum(axis=drop), self.normalization,
                              self.sample_count, self.out_of_range)

    def coarsen(self, axis: int) -> "PhaseHistogram":
        """Merge adjacent bin pairs along ``axis`` (an odd trailing bin is kept)."""
        name, edges = self.axes[axis]
        c = np.moveaxis(self.counts, axis, 0)
        n = c.shape[0]
        merged = [c[i:i + 2].sum(axis=0) for i in range(0, n, 2)]
        new_edges = np.concatenate([edges[:-1:2], edges[-1:]])
        counts = np.moveaxis(np.stack(merged), 0, axis)
        axes = list(self.axes)
        axes[axis] = (name, new_edges)
        return PhaseHistogram(axes, counts, self.normalization, self.sample_count,
                              self.out_of_range)

    def to_json(self) -> str:
        return json.dumps({
            "axes": [{"name": n, "edges": [float(x) for x in e]} for n, e in self.axes],
            "shape": list(self.counts.shape),
            "counts": [float(x) for x in self.counts.ravel()],
            "normalization": self.normalization,
            "sample_count": int(self.sample_count),
            "out_of_range": int(self.out_of_range),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PhaseHistogram":
        d = json.loads(text)
        axes = [(a["name"], np.asarray(a["edges"], dtype=float)) for a in d["axes"]]
        counts = np.asarray(d["counts"], dtype=float).reshape(d["shape"])
        return cls(axes, counts, d["normalization"], d["sample_count"], d["out_of_range"])


def _histogram(data, axes, normalization, sample_count=None):
    edges = [np.asarray(e, dtype=float) for _, e in axes]
    counts, _ = np.histogramdd(data, bins=edges)
    inside = len(data) if len(data) == 0 else int(counts.sum())
    total = len(data) if sample_count is None else sample_count
    hist = PhaseHistogram([(n, np.asarray(e, float)) for n, e in axes], counts,
                          float(normalization), int(total), int(total - inside))
    if hist.flagged:
        warnings.warn(f"{hist.out_of_range_fraction:.2%} of samples fall outside the bins",
                      RuntimeWarning, stacklevel=3)
    return hist


def _phase_columns(q, p, names):
    cols = {"qx": q[:, 0], "qy": q[:, 1], "qz": q[:, 2],
            "px": p[:, 0], "py": p[:, 1], "pz": p[:, 2]}
    return np.column_stack([cols[n] for n in names])


def estimate_f1(q, p, axes, volume: float) -> PhaseHistogram:
    """f1 from every particle of every replica.

    ``q``, ``p`` have shape (..., 3); ``axes`` is a list of (name, edges)
    with names from qx, qy, qz, px, py, pz.  Axes not listed are integrated
    out, so the histogram is the corresponding projection of f1.
    """
    q = np.asarray(q, dtype=float).reshape(-1, 3)
    p = np.asarray(p, dtype=float).reshape(-1, 3)
    if len(q) == 0:
        raise DomainError("empty ensemble")
    names = [n for n, _ in axes]
    if any(n not in AXIS_NAMES for n in names):
        raise DomainError(f"axis names must be among {AXIS_NAMES}")
    return _histogram(_phase_columns(q, p, names), axes, volume)


def estimate_f2(q, p, axes, volume: float) -> PhaseHistogram:
    """f2 on a projection of pair space, over ordered pairs within replicas.

    Supported axis names: ``r`` (|q1 - q2|), ``p1x`` .. ``p2z``, ``p1n``,
    ``p2n`` (momentum magnitudes).  Both orderings of each pair are
    counted so the result is symmetric under particle exchange.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.ndim == 2:
        q = q[None]
        p = p[None]
    M, N, _ = q.shape
    if N < 2:
        raise DomainError("f2 needs at least two particles per replica")
    ii, jj = np.nonzero(~np.eye(N, dtype=bool))
    cols = []
    names = [n for n, _ in axes]
    for name in names:
        if name == "r":
            col = np.linalg.norm(q[:, jj] - q[:, ii], axis=-1)
        elif name in ("p1n", "p2n"):
            idx = ii if name == "p1n" else jj
            col = np.linalg.norm(p[:, idx], axis=-1)
        elif len(name) == 3 and name[0] == "p" and name[1] in "12" and name[2] in "xyz":
            idx = ii if name[1] == "1" else jj
            col = p[:, idx, "xyz".index(name[2])]
        else:
            raise DomainError(f"unsupported pair axis {name!r}")
        cols.append(col.ravel())
    return _histogram(np.column_stack(cols), axes, volume ** 2)


# --------------------------------------------------------------------------
# H-functional

@dataclass(frozen=True)
class EntropyEstimate:
    H: float
    stderr: float

    @property
    def S(self) -> float:
        return -self.H


def h_functional(hist: PhaseHistogram) -> EntropyEstimate:
    """Plug-in sum f ln f times cell volume, with 0 ln 0 = 0.

    f is the histogram density itself, so f = 1 on Omega_V gives H = 0.
    The standard error is the delta-method estimate std(ln f(X)) / sqrt(n).
    """
    vals = hist.values
    if np.any(vals < 0):
        raise DomainError("negative histogram value")
    vol = hist.cell_volume()
    pos = vals > 0
    logs = np.zeros_like(vals)
    logs[pos] = np.log(vals[pos])
    H = float(np.sum(vals * logs * vol))
    prob = vals * vol / hist.normalization
    mean = np.sum(prob * logs)
    var = float(np.sum(prob * (logs - mean) ** 2))
    return EntropyEstimate(H, math.sqrt(max(var, 0.0) / max(hist.sample_count, 1)))


def momentum_grid_edges(width: float, bins: int = 64, center=(0.0, 0.0, 0.0)):
    return [(n, np.linspace(c - width, c + width, bins + 1))
            for n, c in zip(("px", "py", "pz"), center)]


def h_grid(p, width: float, bins: int = 64) -> EntropyEstimate:
    """Plug-in H of the momentum density on a fixed cubic grid."""
    p = np.asarray(p, dtype=float).reshape(-1, 3)
    hist = _histogram(p, momentum_grid_edges(width, bins), 1.0)
    return h_functional(hist)


def h_radial(p, v_max: float, bins: int = 200, mass: float = 1.0,
             center=None) -> EntropyEstimate:
    """Plug-in H of an isotropic momentum density via its radial profile.

    For f(p) = h(|c|) / (4 pi |c|^2) with c = p - center,
    H = int h ln h d|c| - E[ln(4 pi |c|^2)].  The one-dimensional histogram
    of |c| has far smaller plug-in bias than a 3-d grid at the same sample
    size.  ``center`` defaults to the sample mean.
    """
    p = np.asarray(p, dtype=float).reshape(-1, 3)
    c = p - (p.mean(axis=0) if center is None else np.asarray(center, float))
    s = np.linalg.norm(c, axis=1)
    edges = np.linspace(0.0, v_max, bins + 1)
    counts, _ = np.histogram(s, bins=edges)
    n = len(s)
    width = np.diff(edges)
    h = counts / (n * width)
    pos = h > 0
    log_h = np.zeros_like(h)
    log_h[pos] = np.log(h[pos])
    idx = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, bins - 1)
    inside = s < v_max
    s_safe = np.where(s > 0, s, np.finfo(float).tiny)
    log_f = log_h[idx] - np.log(4.0 * np.pi * s_safe ** 2)
    log_f = np.where(inside, log_f, np.nan)
    H = float(np.nanmean(log_f))
    stderr = float(np.nanstd(log_f) / math.sqrt(np.count_nonzero(inside)))
    return EntropyEstimate(H, stderr)


def maxwellian_h(temperature: float, mass: float = 1.0, density: float = 1.0) -> float:
    """int f ln f for f = density * Gaussian(0, mT I)."""
    return density * (math.log(density) - 1.5 * math.log(2.0 * math.pi * math.e * mass
                                                        * temperature))


# --------------------------------------------------------------------------
# Grad scaling schedule

@dataclass(frozen=True)
class SchedulePoint:
    n_particles: int
    mu: float
    delta_t: float

    @property
    def delta_tau(self) -> float:
        return self.delta_t / self.mu


@dataclass
class ScalingSchedule:
    """Sequence of (N, mu, delta_t) along the Grad limit N mu^2 = const.

    ``mass_rescaling`` switches to m -> mu^2 m and C -> mu^2 C; it changes
    the physical units, not the relative dynamics.
    """

    points: list
    constant: float
    mass_rescaling: bool = False

    def __post_init__(self):
        self.points = [p if isinstance(p, SchedulePoint) else SchedulePoint(*p)
                       for p in self.points]
        problems = schedule_problems(self.points, self.constant)
        if problems:
            raise InvalidSpecError("; ".join(problems))

    @classmethod
    def from_mu(cls, mus, constant: float, dt_coefficient: float = 0.5,
                mass_rescaling: bool = False) -> "ScalingSchedule":
        """N = round(constant/mu^2) and delta_t = c sqrt(mu), which makes
        delta_t shrink and delta_t/mu grow as mu decreases."""
        pts = []
        for mu in mus:
            n = int(round(constant / mu ** 2))
            pts.append(SchedulePoint(n, float(mu), dt_coefficient * math.sqrt(mu)))
        return cls(pts, constant, mass_rescaling)

    def to_dict(self) -> dict:
        return {"points": [[p.n_particles, p.mu, p.delta_t] for p in self.points],
                "constant": self.constant, "mass_rescaling": self.mass_rescaling}


def schedule_problems(points, constant) -> list:
    problems = []
    if len(points) == 0:
        return ["schedule has no points"]
    for k, p in enumerate(points):
        if p.n_particles < 1 or not p.mu > 0 or not p.delta_t > 0:
            problems.append(f"schedule point {k} has non-positive entries")
            continue
        prod = p.n_particles * p.mu ** 2
        if abs(prod - constant) > 1e-12 * abs(constant):
            problems.append(
                f"schedule point {k}: N mu^2 = {prod!r} differs from the constant {constant!r}")
    for k in range(1, len(points)):
        a, b = points[k - 1], points[k]
        if not b.delta_t < a.delta_t:
            problems.append(f"delta_t must decrease along the schedule (point {k})")
        if not b.delta_tau > a.delta_tau:
            problems.append(f"delta_t/mu must increase along the schedule (point {k})")
    return problems


# --------------------------------------------------------------------------
# test functions

@dataclass
class TestFunctionSet:
    """Test functions phi(p2), scaled by the thermal momentum sqrt(mT).

    Members are named: ``one``, ``px`` (p_x / sqrt(mT)), ``p2``
    (|p|^2 / 3mT), ``bump`` (Gaussian of width sqrt(mT)/2 centred at
    (sqrt(mT), 0, 0)), and ``poly:<i>,<j>,<k>`` for monomials of degree
    at most 3.
    """

    __test__ = False  # not a pytest class

    members: tuple = ("one", "px", "p2", "bump")
    temperature: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        for m in self.members:
            self._parse(m)

    @staticmethod
    def _parse(name):
        if name in ("one", "px", "p2", "bump"):
            return name, None
        if name.startswith("poly:"):
            exps = tuple(int(x) for x in name[5:].split(","))
            if len(exps) != 3 or min(exps) < 0 or sum(exps) > 3:
                raise DomainError(f"bad monomial {name!r}")
            return "poly", exps
        raise DomainError(f"unknown test function {name!r}")

    def evaluate(self, p) -> np.ndarray:
        """Array of shape (n_members, n_samples)."""
        p = np.asarray(p, dtype=float).reshape(-1, 3)
        s = math.sqrt(self.mass * self.temperature)
        x = p / s
        rows = []
        for m in self.members:
            kind, exps = self._parse(m)
            if kind == "one":
                rows.append(np.ones(len(p)))
            elif kind == "px":
                rows.append(x[:, 0])
            elif kind == "p2":
                rows.append(np.sum(x * x, axis=1) / 3.0)
            elif kind == "bump":
                d = x - np.array([1.0, 0.0, 0.0])
                rows.append(np.exp(-2.0 * np.sum(d * d, axis=1)))
            else:
                rows.append(x[:, 0] ** exps[0] * x[:, 1] ** exps[1] * x[:, 2] ** exps[2])
        return np.array(rows)


# --------------------------------------------------------------------------
# molecular-chaos residual

@dataclass
class Probe:
    """Spatial probe: particle 1 must lie in the ball of ``radius`` at ``center``."""

    center: tuple
    radius: float
    name: str = ""


def default_probes(halfwidth: float, count: int = 8, radius_frac: float = 0.2):
    """Stratified probes in the bulk: the 8 octant centres at half the halfwidth
    (``count`` = 1 gives the single central probe)."""
    if count == 1:
        return [Probe((0.0, 0.0, 0.0), radius_frac * halfwidth, "centre")]
    out = []
    h = 0.5 * halfwidth
    for k, (sx, sy, sz) in enumerate(
            [(a, b, c) for a in (-1, 1) for b in (-1, 1) for c in (-1, 1)][:count]):
        out.append(Probe((sx * h, sy * h, sz * h), radius_frac * halfwidth, f"octant{k}"))
    return out


@dataclass
class ResidualRow:
    t: float
    probe: str
    test_function: str
    estimate: float
    stderr: float
    pairs: int
    defined: bool = True


@dataclass
class ChaosReport:
    rows: list
    sup: float
    sup_stderr: float

    def to_csv(self, path):
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "probe", "test_function", "estimate", "stderr", "pairs"])
            for r in self.rows:
                est = repr(r.estimate) if r.defined else "nan"
                se = repr(r.stderr) if r.defined else "nan"
                w.writerow([repr(r.t), r.probe, r.test_function, est, se, r.pairs])

    def by_test(self, probe=None) -> dict:
        return {r.test_function: r for r in self.rows
                if r.defined and (probe is None or r.probe == probe)}


MIN_PROBE_PAIRS = 100


@njit(cache=True)
def _close_pairs(q, radius, probe_c, probe_r, out_i, out_j):
    """Ordered pairs (i, j), i != j, |q_j - q_i| < radius, q_i in the probe ball."""
    n = q.shape[0]
    cnt = 0
    r2 = radius * radius
    pr2 = probe_r * probe_r
    for i in range(n):
        a0 = q[i, 0] - probe_c[0]
        a1 = q[i, 1] - probe_c[1]
        a2 = q[i, 2] - probe_c[2]
        if a0 * a0 + a1 * a1 + a2 * a2 >= pr2:
            continue
        for j in range(n):
            if j == i:
                continue
            d0 = q[j, 0] - q[i, 0]
            d1 = q[j, 1] - q[i, 1]
            d2 = q[j, 2] - q[i, 2]
            if d0 * d0 + d1 * d1 + d2 * d2 < r2:
                if cnt < out_i.shape[0]:
                    out_i[cnt] = i
                    out_j[cnt] = j
                cnt += 1
    return cnt


def window_pairs(q, radius, probe: Probe):
    """Ordered within-replica pairs with particle 1 in the probe and
    particle 2 within ``radius`` of it.  Returns (i, j) index arrays."""
    q = np.ascontiguousarray(q, dtype=float)
    cap = 1024
    while True:
        oi = np.empty(cap, dtype=np.int64)
        oj = np.empty(cap, dtype=np.int64)
        cnt = _close_pairs(q, float(radius), np.asarray(probe.center, float),
                           float(probe.radius), oi, oj)
        if cnt <= cap:
            return oi[:cnt], oj[:cnt]
        cap = cnt


def _cross_candidates(q1, q2, radius):
    """Index pairs (a, b) with |q2[b] - q1[a]| < radius via a KD-tree."""
    from scipy.spatial import cKDTree
    tree = cKDTree(q2)
    lists = tree.query_ball_point(q1, radius)
    a = np.repeat(np.arange(len(q1)), [len(x) for x in lists])
    b = np.concatenate([np.asarray(sorted(x), dtype=np.int64) for x in lists]) \
        if len(a) else np.empty(0, dtype=np.int64)
    return a, b.astype(np.int64)


def _one_body_flow(q0, p0, delta_t, ext, mu, mass):
    """Every particle flowed alone for delta_t in the external field."""
    from .nbody import _run, suggest_dt
    from .potentials import PotentialSpec
    q = np.ascontiguousarray(q0, dtype=float).copy()
    p = np.ascontiguousarray(p0, dtype=float).copy()
    if ext is None or ext.kind == "none":
        return q + p * delta_t / mass, p
    free = PotentialSpec(kind="free")
    h = suggest_dt(p, free, ext, mu, mass, q)
    n = max(1, int(math.ceil(delta_t / h)))
    _run(q, p, n, delta_t / n, free, ext, mu, mass)
    return q, p


def factorized_window_reference(q0, p0, replica_of, delta_t, radius, probe: Probe,
                                spec, mu, mass, tests: TestFunctionSet, ext=None,
                                partners: int = 8, rtol: float = 1e-10):
    """Exact window sum for the product of one-particle empirical measures.

    Pairs are drawn across different replicas of the pooled snapshot at
    t - delta_t, so they are independent.  Replicas are grouped in blocks of
    ``partners + 1`` consecutive replicas and only pairs inside a block are
    used.  Each pair is pushed forward for delta_t (the two-body flow if
    its straight-line path comes within the interaction range, otherwise
    each particle moves alone in the external field ``ext``) and the test
    functions are summed over pairs that end inside the probe window.  The
    sums are scaled to one replica, N(N-1) ordered pairs, divided by the
    number of ordered cross-replica pairs used.

    Returns (per-test sums scaled to one replica, number of contributing
    cross pairs).
    """
    from .scattering import pair_flow
    q0 = np.asarray(q0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    replica_of = np.asarray(replica_of)
    counts = np.bincount(replica_of)
    n_rep = len(counts)
    n_per = counts.max()
    block = min(int(partners) + 1, n_rep)
    if block < 2:
        raise DomainError("the factorized reference needs at least two replicas")
    # one-body positions after delta_t bound where a pair can end up
    q_free, p_free = _one_body_flow(q0, p0, delta_t, ext, mu, mass)
    c = np.asarray(probe.center, float)
    reach = probe.radius + radius
    near = np.linalg.norm(q_free - c, axis=1) < reach + 8 * radius
    block_of = replica_of // block
    aa, bb = [], []
    n_cross = 0.0
    for blk in range(int(block_of.max()) + 1):
        members = np.flatnonzero(block_of == blk)
        sizes = counts[blk * block:(blk + 1) * block].astype(float)
        n_cross += float(sizes.sum() ** 2 - np.sum(sizes ** 2))
        pool = members[near[members]]
        first = pool[np.linalg.norm(q_free[pool] - c, axis=1) < reach + 4 * radius]
        if len(first) == 0 or len(pool) == 0:
            continue
        a, b = _cross_candidates(q_free[first], q_free[pool], 4.0 * radius)
        aa.append(first[a])
        bb.append(pool[b])
    a = np.concatenate(aa) if aa else np.empty(0, dtype=np.int64)
    b = np.concatenate(bb) if bb else np.empty(0, dtype=np.int64)
    keep = replica_of[a] != replica_of[b]
    a, b = a[keep], b[keep]
    # closest approach of the straight-line relative path during [0, delta_t]
    dq = q0[b] - q0[a]
    dv = (p0[b] - p0[a]) / mass
    vv = np.sum(dv * dv, axis=1)
    tc = np.where(vv > 0, np.clip(-np.sum(dq * dv, axis=1) / np.where(vv > 0, vv, 1.0),
                                  0.0, delta_t), 0.0)
    closest = np.linalg.norm(dq + dv * tc[:, None], axis=1)
    interact = closest < mu * spec.cutoff_radius if spec.interacting else np.zeros(len(a), bool)
    q1 = q_free[a].copy()
    p1 = p_free[a].copy()
    q2 = q_free[b].copy()
    p2 = p_free[b].copy()
    if np.any(interact):
        idx = np.flatnonzero(interact)
        r1, s1, r2, s2, _ = pair_flow(q0[a[idx]], p0[a[idx]], q0[b[idx]], p0[b[idx]],
                                      delta_t, spec, mu, mass, rtol=rtol, atol=rtol)
        q1[idx], p1[idx], q2[idx], p2[idx] = r1, s1, r2, s2
    in_probe = np.linalg.norm(q1 - c, axis=1) < probe.radius
    in_window = np.linalg.norm(q2 - q1, axis=1) < radius
    sel = in_probe & in_window
    phi = tests.evaluate(p2[sel])
    scale = n_per * (n_per - 1) / n_cross
    return phi.sum(axis=1) * scale, int(sel.sum())


def chaos_residual(q_t, p_t, q_prev, p_prev, delta_t, tests: TestFunctionSet, spec, mu,
                   mass=1.0, probes=None, radius=None, t=0.0, reference=None, ext=None):
    """Weak-sense molecular-chaos defect at time t for one seed.

    ``q_t``/``p_t`` (M, N, 3) are the replicas at t and ``q_prev``/``p_prev``
    the same replicas at t - delta_t.  For each probe the statistic is

        A = (1/M) sum over replicas of sum_{pairs in window} phi(p2)

    which estimates the integral of f2 phi over the window; the reference
    replaces f2 by the flowed product of the empirical one-particle measure
    at t - delta_t (the backward two-body flow of f2 - f1 f1 tested against
    phi, with the flow moved onto the product term).  The residual is
    (A - A_ref) divided by the reference value for phi = 1 so that it is
    a relative defect.  ``reference`` may hold precomputed reference sums
    keyed by probe name.
    """
    q_t = np.asarray(q_t, float)
    p_t = np.asarray(p_t, float)
    M, N, _ = q_t.shape
    radius = mu * spec.cutoff_radius if radius is None else radius
    if probes is None:
        raise DomainError("probes must be given")
    rows = []
    sup, sup_se = 0.0, 0.0
    names = list(tests.members)
    q0 = np.asarray(q_prev, float).reshape(-1, 3)
    p0 = np.asarray(p_prev, float).reshape(-1, 3)
    rep = np.repeat(np.arange(M), N)
    for probe in probes:
        per_rep = np.zeros((len(names), M))
        n_pairs = 0
        for k in range(M):
            i, j = window_pairs(q_t[k], radius, probe)
            n_pairs += len(i)
            if len(i):
                per_rep[:, k] = tests.evaluate(p_t[k][j]).sum(axis=1)
        if reference is not None and probe.name in reference:
            ref, ref_pairs = reference[probe.name]
        else:
            ref, ref_pairs = factorized_window_reference(q0, p0, rep, delta_t, radius, probe,
                                                         spec, mu, mass, tests, ext)
        A = per_rep.mean(axis=1)
        A_se = per_rep.std(axis=1, ddof=1) / math.sqrt(M) if M > 1 else np.full(len(names), np.nan)
        if n_pairs < MIN_PROBE_PAIRS or ref[0] <= 0:
            for name in names:
                rows.append(ResidualRow(t, probe.name, name, math.nan, math.nan, n_pairs, False))
            continue
        denom = ref[0]
        for m, name in enumerate(names):
            est = (A[m] - ref[m]) / denom
            se = A_se[m] / denom
            rows.append(ResidualRow(t, probe.name, name, float(est), float(se), n_pairs))
            if abs(est) > sup:
                sup, sup_se = abs(est), se
    return ChaosReport(rows, float(sup), float(sup_se))


def empirical_window_sum(q, p, radius, probe: Probe, tests: TestFunctionSet):
    """Window sum of phi(p2) averaged over replicas (no reference)."""
    q = np.asarray(q, float)
    p = np.asarray(p, float)
    out = np.zeros(len(tests.members))
    for k in range(q.shape[0]):
        i, j = window_pairs(q[k], radius, probe)
        if len(i):
            out += tests.evaluate(p[k][j]).sum(axis=1)
    return out / q.shape[0]


# --------------------------------------------------------------------------
# radial speed profile and the Bogolyubov diagnostic

@dataclass
class RadialProfile:
    """Isotropic momentum density f(p) = h(|p|) / (4 pi |p|^2), density 1."""

    edges: np.ndarray
    h: np.ndarray

    @classmethod
    def from_samples(cls, p, v_max, bins=40):
        p = np.asarray(p, float).reshape(-1, 3)
        s = np.linalg.norm(p, axis=1)
        edges = np.linspace(0.0, v_max, bins + 1)
        counts, _ = np.histogram(s, bins=edges)
        h = counts / (len(s) * np.diff(edges))
        return cls(edges, h)

    def shell_density(self) -> np.ndarray:
        """f averaged over each spherical shell."""
        shell = 4.0 / 3.0 * np.pi * (self.edges[1:] ** 3 - self.edges[:-1] ** 3)
        return self.h * np.diff(self.edges) / shell

    def __call__(self, p) -> np.ndarray:
        """ln f interpolated linearly in |p|^2 between the shell-mean radii,
        which is exact for a Maxwellian up to the shell averaging."""
        p = np.asarray(p, float)
        s2 = np.sum(p * p, axis=-1)
        a, b = self.edges[:-1], self.edges[1:]
        node2 = 0.6 * (b ** 5 - a ** 5) / (b ** 3 - a ** 3)
        dens = self.shell_density()
        keep = dens > 0  # empty shells carry no shape information
        if not np.any(keep):
            return np.zeros(s2.shape)
        node2, logf = node2[keep], np.log(dens[keep])
        out = np.interp(s2, node2, logf)
        # extend the first segment towards p = 0
        if len(node2) > 1:
            slope = (logf[1] - logf[0]) / (node2[1] - node2[0])
            out = np.where(s2 < node2[0], logf[0] + slope * (s2 - node2[0]), out)
        return np.where(s2 < self.edges[-1] ** 2, np.exp(out), 0.0)


def _uniform_ball(rng, n, radius):
    u = rng.normal(size=(n, 3))
    u /= np.linalg.norm(u, axis=1)[:, None]
    return u * radius * rng.random(n)[:, None] ** (1.0 / 3.0)


def _sample_profile(rng, profile: RadialProfile, n):
    """Momenta distributed with the profile's density."""
    widths = np.diff(profile.edges)
    prob = profile.h * widths
    prob = prob / prob.sum()
    k = rng.choice(len(prob), size=n, p=prob)
    speed = profile.edges[k] + rng.random(n) * widths[k]
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return speed[:, None] * d


def precollision_momenta(xi, p1, p2, spec, mass=1.0):
    """Momenta a pair at relative position xi (microscopic units) had
    before entering the interaction sphere, by backward two-body flow."""
    from .potentials import phi_eval
    from .scattering import pair_flow
    rc = spec.cutoff_radius
    s = np.linalg.norm(xi, axis=1)
    w2 = np.sum(((p2 - p1) / mass) ** 2, axis=1)
    pot = np.where(s < rc, phi_eval(spec, np.minimum(s, rc)), 0.0) if spec.interacting \
        else np.zeros(len(s))
    w_inf = np.sqrt(w2 + 4.0 * pot / mass)
    tau = 20.0 * rc / np.maximum(w_inf, 1e-12)
    _, b1, _, b2, _ = pair_flow(np.zeros_like(xi), p1, xi, p2, -tau, spec, 1.0, mass)
    return b1, b2


def bogolyubov_interaction(profile: RadialProfile, p1_nodes, spec, density, mu,
                           mass=1.0, n_samples=4000, seed=0, fd_step=None):
    """Interaction term of the Bogolyubov equation at momenta ``p1_nodes``.

        I(p1) = n mu^2 int d^3xi d^3p2 f(|xi|) xi_hat . grad_p1 [g(P1) g(P2)]

    with f = -Phi' the radial force, xi = (q2 - q1)/mu and (P1, P2) the
    pre-collision momenta of the pair (xi, p1, p2).  xi is uniform in the
    interaction ball, p2 is drawn from g itself, and the p1 gradient uses
    central differences with common random numbers.  Returns (values,
    standard errors).
    """
    rng = np.random.default_rng(seed)
    p1_nodes = np.atleast_2d(np.asarray(p1_nodes, float))
    rc = spec.cutoff_radius
    ball = 4.0 / 3.0 * np.pi * rc ** 3
    h_fd = fd_step if fd_step is not None else 0.5 * float(np.diff(profile.edges)[0])
    xi = _uniform_ball(rng, n_samples, rc)
    s = np.linalg.norm(xi, axis=1)
    force = spec.gamma * spec.amplitude * s ** (-spec.gamma - 1.0)
    fxi = (force / s)[:, None] * xi
    p2 = _sample_profile(rng, profile, n_samples)
    g2 = profile(p2)
    weight = np.where(g2 > 0, ball / np.where(g2 > 0, g2, 1.0), 0.0)
    vals = np.zeros(len(p1_nodes))
    errs = np.zeros(len(p1_nodes))
    for n, p1 in enumerate(p1_nodes):
        grad_term = np.zeros(n_samples)
        for axis in range(3):
            diff = np.zeros(n_samples)
            for sign in (1.0, -1.0):
                p1s = np.tile(p1, (n_samples, 1))
                p1s[:, axis] += sign * h_fd
                b1, b2 = precollision_momenta(xi, p1s, p2, spec, mass)
                diff += sign * profile(b1) * profile(b2)
            grad_term += fxi[:, axis] * diff / (2.0 * h_fd)
        sample = density * mu ** 2 * grad_term * weight
        vals[n] = sample.mean()
        errs[n] = sample.std(ddof=1) / math.sqrt(n_samples)
    return vals, errs


def boltzmann_collision_term(profile: RadialProfile, p1_nodes, spec, density, mu,
                             mass=1.0, n_samples=4000, seed=0):
    """Monte Carlo estimate of St g at ``p1_nodes`` for the same profile g.

    Impact parameters are uniform on the disc of radius r_cut and the
    deflection is the exact asymptotic one.  Returns (values, stderr).
    """
    from .scattering import deflection_angle
    rng = np.random.default_rng(seed)
    p1_nodes = np.atleast_2d(np.asarray(p1_nodes, float))
    rc = spec.cutoff_radius
    p2 = _sample_profile(rng, profile, n_samples)
    g2 = profile(p2)
    rho = rc * np.sqrt(rng.random(n_samples))
    phi = 2.0 * np.pi * rng.random(n_samples)
    vals = np.zeros(len(p1_nodes))
    errs = np.zeros(len(p1_nodes))
    for n, p1 in enumerate(p1_nodes):
        g = p1 - p2
        gn = np.linalg.norm(g, axis=1)
        ok = (gn > 0) & (g2 > 0)
        chi = np.zeros(n_samples)
        chi[ok] = deflection_angle(rho[ok], gn[ok] / mass, spec, mass)
        gh = g / np.where(gn > 0, gn, 1.0)[:, None]
        axis = np.zeros((n_samples, 3))
        axis[np.arange(n_samples), np.argmin(np.abs(gh), axis=1)] = 1.0
        e1 = np.cross(gh, axis)
        e1 /= np.maximum(np.linalg.norm(e1, axis=1), 1e-300)[:, None]
        e2 = np.cross(gh, e1)
        b = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2
        g_out = gn[:, None] * (np.cos(chi)[:, None] * gh + np.sin(chi)[:, None] * b)
        P = p1 + p2
        p1o = 0.5 * (P + g_out)
        p2o = 0.5 * (P - g_out)
        gain_loss = profile(p1o) * profile(p2o) - profile(np.tile(p1, (n_samples, 1))) * g2
        sample = np.where(ok, density * mu ** 2 * np.pi * rc ** 2 * (gn / mass) * gain_loss
                          / np.where(g2 > 0, g2, 1.0), 0.0)
        vals[n] = sample.mean()
        errs[n] = sample.std(ddof=1) / math.sqrt(n_samples)
    return vals, errs


def transport_rhs(hist: PhaseHistogram, ext=None, mass: float = 1.0) -> np.ndarray:
    """-(p/m) df/dq + U'(q) df/dp on a (qx, px) histogram.

    Central differences in the interior, one-sided at the edges.  With a
    separable confinement the projection of the full transport operator
    onto (qx, px) is exact.
    """
    names = [n for n, _ in hist.axes]
    if names != ["qx", "px"]:
        raise DomainError("transport_rhs needs a (qx, px) histogram")
    f = hist.values
    (_, qe), (_, pe) = hist.axes
    if len(qe) < 4 or len(pe) < 4:
        raise DomainError("grid too coarse for finite differences (need >= 3 bins per axis)")
    qc = 0.5 * (qe[1:] + qe[:-1])
    pc = 0.5 * (pe[1:] + pe[:-1])
    dfdq = np.gradient(f, qc, axis=0)
    dfdp = np.gradient(f, pc, axis=1)
    out = -(pc[None, :] / mass) * dfdq
    if ext is not None and ext.kind != "none":
        from .potentials import u_eval_grad
        q3 = np.zeros((len(qc), 3))
        q3[:, 0] = qc
        _, grad = u_eval_grad(ext, q3)
        out = out + grad[:, 0][:, None] * dfdp
    return out


def check_time_resolution(p_max, mass, dt_snap, bin_width):
    """CFL-style check: a particle must cross less than one bin between the
    snapshots used for a finite-difference time derivative."""
    if p_max / mass * dt_snap > bin_width:
        raise DomainError(
            f"grid too coarse for the finite-difference derivative: "
            f"v_max*dt = {p_max / mass * dt_snap:.3g} exceeds bin width {bin_width:.3g}")


@dataclass
class BogolyubovComparison:
    speeds: np.ndarray
    md_dfdt: np.ndarray
    md_stderr: np.ndarray
    bogolyubov: np.ndarray
    bogolyubov_stderr: np.ndarray
    boltzmann: np.ndarray
    boltzmann_stderr: np.ndarray

    def l1(self, a: str, b: str) -> float:
        """L1 distance of two fields, weighted by the shell volume 4 pi v^2 dv."""
        x = getattr(self, a)
        y = getattr(self, b)
        dv = np.gradient(self.speeds)
        return float(np.sum(np.abs(x - y) * 4.0 * np.pi * self.speeds ** 2 * dv))

    def table(self):
        keys = ("md_dfdt", "bogolyubov", "boltzmann")
        return {f"{a}|{b}": self.l1(a, b) for i, a in enumerate(keys) for b in keys[i + 1:]}


def bogolyubov_rhs(p_before, p_now, p_after, dt_snap, spec, density, mu, mass=1.0,
                   v_max=None, bins=12, n_samples=4000, seed=0, q_bin_width=None):
    """Three estimates of df1/dt for a spatially homogeneous isotropic state.

    * MD: centred finite difference of the shell-averaged momentum density
      between the snapshots ``p_before`` and ``p_after`` (2 dt_snap apart).
    * Bogolyubov: interaction term evaluated on the profile of ``p_now``.
    * Boltzmann: St g for the same profile.

    The fields live on speed-shell centres.  ``q_bin_width`` enables the
    CFL-style check against the spatial grid of the f1 estimate.
    """
    p_now = np.asarray(p_now, float).reshape(-1, 3)
    if v_max is None:
        v_max = float(np.quantile(np.linalg.norm(p_now, axis=1), 0.999))
    if q_bin_width is not None:
        check_time_resolution(v_max, mass, dt_snap, q_bin_width)
    edges = np.linspace(0.0, v_max, bins + 1)
    counts = [np.histogram(np.linalg.norm(np.asarray(x, float).reshape(-1, 3), axis=1),
                           bins=edges)[0] for x in (p_before, p_now, p_after)]
    sizes = [len(np.asarray(x).reshape(-1, 3)) for x in (p_before, p_now, p_after)]
    return bogolyubov_from_counts(edges, counts, sizes, dt_snap, spec, density, mu, mass,
                                  n_samples, seed)


def bogolyubov_from_counts(edges, counts, sizes, dt_snap, spec, density, mu, mass=1.0,
                           n_samples=4000, seed=0):
    """``bogolyubov_rhs`` on speed histograms (before, now, after) sharing
    ``edges``; ``sizes`` are the total sample counts behind each histogram."""
    edges = np.asarray(edges, float)
    c_b, c_n, c_a = (np.asarray(c, float) for c in counts)
    n_b, n_n, n_a = (int(x) for x in sizes)
    if not (len(c_b) == len(c_n) == len(c_a) == len(edges) - 1):
        raise DomainError("speed histograms do not share the bin grid")
    width = np.diff(edges)
    prof_b = RadialProfile(edges, c_b / (n_b * width))
    prof_n = RadialProfile(edges, c_n / (n_n * width))
    prof_a = RadialProfile(edges, c_a / (n_a * width))
    dens_b = prof_b.shell_density()
    dens_a = prof_a.shell_density()
    md = (dens_a - dens_b) / (2.0 * dt_snap)
    # binomial error of each shell count
    shell = 4.0 / 3.0 * np.pi * (edges[1:] ** 3 - edges[:-1] ** 3)
    var_b = dens_b * (1 - dens_b * shell) / (n_b * shell)
    var_a = dens_a * (1 - dens_a * shell) / (n_a * shell)
    md_se = np.sqrt(np.maximum(var_a + var_b, 0.0)) / (2.0 * dt_snap)
    centres = 0.5 * (edges[1:] + edges[:-1])
    nodes = np.zeros((len(centres), 3))
    nodes[:, 0] = centres
    if spec.interacting:
        bog, bog_se = bogolyubov_interaction(prof_n, nodes, spec, density, mu, mass,
                                             n_samples, seed)
        bol, bol_se = boltzmann_collision_term(prof_n, nodes, spec, density, mu, mass,
                                               n_samples, seed + 1)
    else:
        bog = bog_se = bol = bol_se = np.zeros(len(centres))
    return BogolyubovComparison(centres, md, md_se, bog, bog_se, bol, bol_se)
