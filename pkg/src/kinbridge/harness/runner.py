"""Experiment execution: run modes, the Grad sweep and the Bogolyubov table.

Layout of an artifact directory::

    manifest.json            resolved config, versions, seeds, derived scales
    timing.json              wall-clock times (the only non-reproducible file)
    deflection_table.csv     rho, g, chi of the DSMC kernel (when tabulated)
    summary.csv              one row per schedule point
    sweep.json, trend.png    trend summary (grad_sweep only)
    point_KK/                per schedule point; control/ holds the Phi = 0 run

Every schedule point gets either point.json or error.json.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
import scipy
from scipy.integrate import trapezoid

from .. import __version__
from ..boltzmann import (HardSphereKernel, InversePowerKernel, KineticConfig,
                         PseudoMaxwellKernel, VelocityEnsemble, mean_free_time,
                         run_homogeneous)
from ..boltzmann.dsmc import entropy_of
from ..errors import DomainError, IntegrationError, KinbridgeError
from ..marginals import (MIN_PROBE_PAIRS, bogolyubov_from_counts, default_probes,
                         factorized_window_reference, window_pairs)
from ..nbody import _draw_momenta, evolve_ensemble, sample_initial, suggest_dt
from ..potentials import PotentialSpec
from . import figures
from .config import ExperimentConfig

H_GRID_POINTS = 9
NOISE_FLOOR_DRAWS = 50


# --------------------------------------------------------------------------
# small utilities

def point_seed(seed: int, point: int, stream: int = 0) -> int:
    """Independent 32-bit seed for (user seed, schedule point, stream)."""
    return int(np.random.SeedSequence([int(seed), int(point), int(stream)]).generate_state(1)[0])


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")


def bootstrap_median_ci(values, n_boot: int, seed: int, level: float = 0.95):
    """Median and percentile bootstrap interval of the median."""
    v = np.asarray(values, float)
    v = v[np.isfinite(v)]
    if len(v) == 0:
        return math.nan, math.nan, math.nan
    rng = np.random.default_rng(seed)
    meds = np.median(v[rng.integers(0, len(v), size=(n_boot, len(v)))], axis=1)
    a = 0.5 * (1.0 - level)
    return float(np.median(v)), float(np.quantile(meds, a)), float(np.quantile(meds, 1 - a))


def nonincreasing_within_bands(med, lo, hi) -> bool:
    """No significant increase: each band reaches down to the previous one."""
    med, lo, hi = (np.asarray(x, float) for x in (med, lo, hi))
    if np.any(~np.isfinite(med)):
        return False
    return bool(np.all(lo[1:] <= hi[:-1]))


# --------------------------------------------------------------------------
# physical scales shared by all schedule points

def density_factor(cfg: ExperimentConfig) -> float:
    """V * integral of the squared normalized spatial density.

    The collision rate of a particle is set by the density it sees, which
    is this factor times N / V.
    """
    ext, law = cfg.external, cfg.initial
    L = ext.domain_halfwidth
    if not math.isfinite(L):
        raise DomainError("the experiment needs a bounded domain")
    V = ext.volume
    if law.spatial == "gaussian_blob":
        return V * (4.0 * math.pi * law.blob_width ** 2) ** -1.5
    x = np.linspace(-L, L, 8001)
    if ext.kind == "power_wall":
        u = ext.stiffness * (x / L) ** int(ext.wall_exponent)
    elif ext.kind == "harmonic":
        u = 0.5 * ext.stiffness * x * x
    else:
        u = np.zeros_like(x)
    temps, weights = law.component_temperatures(), law.component_weights()
    if law.spatial == "uniform_in_G" and ext.kind != "none":
        rho = [np.exp(-u / T) for T in temps]
    else:
        rho = [np.ones_like(x) for _ in temps]
    rho = [r / trapezoid(r, x) for r in rho]
    total = 0.0
    for a, ra in zip(weights, rho):
        for b, rb in zip(weights, rho):
            total += a * b * trapezoid(ra * rb, x) ** 3
    return float(V * total)


_KERNELS: dict = {}


def build_kernel(cfg: ExperimentConfig, spec: PotentialSpec, mass: float,
                 chi_min: float | None = None):
    """DSMC kernel for the configured potential; None when Phi = 0."""
    if not spec.interacting:
        return None
    bz = cfg.section("boltzmann")
    kind = bz["kernel"]
    chi_min = bz["chi_min"] if chi_min is None else chi_min
    if kind == "hard_sphere":
        return HardSphereKernel(bz["diameter"])
    if kind == "pseudo_maxwell":
        return PseudoMaxwellKernel(bz["kappa"])
    key = (spec, float(mass), float(chi_min))
    if key not in _KERNELS:
        _KERNELS[key] = InversePowerKernel(spec, mass, chi_min=chi_min)
    return _KERNELS[key]


def reference_scales(cfg: ExperimentConfig) -> dict:
    """Density factor, n mu^2 and the mean free time of the initial law."""
    kappa = density_factor(cfg)
    n_mu2 = kappa * cfg.schedule.constant / cfg.external.volume
    kernel = build_kernel(cfg, cfg.potential, 1.0)
    tau = 1.0
    if kernel is not None:
        rng = np.random.default_rng(point_seed(cfg.seeds[0], 0, 11))
        p, _ = _draw_momenta(rng, cfg.initial, 20000, 1.0)
        tau = mean_free_time(VelocityEnsemble(p, n_mu2), kernel, n_mu2, 1.0)
    return {"density_factor": kappa, "n_mu2": n_mu2, "mean_free_time": tau,
            "time_unit": "mean_free" if kernel is not None else "physical"}


def point_physics(cfg: ExperimentConfig, k: int, control: bool = False):
    """(mu, mass, spec) at schedule point k; mass rescaling uses m -> mu^2 m
    together with C -> mu^2 C."""
    mu = cfg.schedule.points[k].mu
    spec = PotentialSpec(kind="free") if control else cfg.potential
    mass = 1.0
    if cfg.schedule.mass_rescaling:
        mass = mu * mu
        if spec.interacting:
            spec = spec.scaled(mu * mu)
    return mu, mass, spec


def speed_top(cfg: ExperimentConfig, mass: float) -> float:
    """Upper edge of the shared speed grid."""
    law = cfg.initial
    t_max = float(law.component_temperatures().max())
    drift = float(np.linalg.norm(law.drift)) if law.velocity == "shifted_maxwellian" else 0.0
    return 6.0 * math.sqrt(t_max / mass) + drift / mass


def _speed_counts(p, edges, mass):
    s = np.linalg.norm(np.asarray(p, float).reshape(-1, 3), axis=1) / mass
    c, _ = np.histogram(s, bins=edges)
    over = int(np.sum(s >= edges[-1]))
    return np.append(c, over).astype(np.int64)


def speed_l1(counts_a, counts_b) -> float:
    """L1 distance of two speed densities given as counts on a shared grid,
    overflow bin included."""
    a = np.asarray(counts_a, float)
    b = np.asarray(counts_b, float)
    a, b = a / a.sum(), b / b.sum()
    return float(np.sum(np.abs(a - b)))


# --------------------------------------------------------------------------
# one schedule point

@dataclass
class PointRun:
    records: list
    times: np.ndarray
    labels: dict  # name -> index into times
    acceptance: list


def _snapshot_plan(cfg: ExperimentConfig, k: int, tau: float, with_chaos: bool):
    delta_t = cfg.schedule.points[k].delta_t
    snap = cfg.section("snapshots")
    fd = cfg.section("bogolyubov")["fd_step"]
    t_b = snap["bridge_time"]
    named = {"bridge": t_b * tau, "fd_before": (t_b - fd) * tau, "fd_after": (t_b + fd) * tau}
    if named["fd_before"] <= 0:
        raise DomainError("bogolyubov.fd_step must be smaller than the bridge time")
    t_end = max(t_b + fd, max(snap["chaos_times"]))
    for j, t in enumerate(np.linspace(0.0, t_end, H_GRID_POINTS)):
        named[f"grid{j}"] = t * tau
    if with_chaos:
        for w, t in enumerate(snap["chaos_times"]):
            if t * tau - delta_t <= 0:
                raise DomainError(
                    f"chaos window {t} mean free times is shorter than delta_t={delta_t:g}")
            named[f"chaos{w}"] = t * tau
            named[f"chaos{w}_prev"] = t * tau - delta_t
    times = np.unique(np.array(list(named.values())))
    labels = {name: int(np.searchsorted(times, v)) for name, v in named.items()}
    return times, labels


def _run_md(cfg: ExperimentConfig, k: int, spec, mass, times, threads: int) -> list:
    pt = cfg.schedule.points[k]
    ext = cfg.external
    dt_scale = cfg.section("md")["dt_scale"]

    def one(seed):
        ens = sample_initial(cfg.initial, pt.n_particles, cfg.replicas[k], point_seed(seed, k),
                             spec, ext, pt.mu, mass)
        dt = dt_scale * min(suggest_dt(ens.p[r], spec, ext, pt.mu, mass, ens.q[r])
                            for r in range(ens.n_replicas))
        rec = evolve_ensemble(ens, float(times[-1]), list(times), spec, ext, dt=dt)
        return rec, ens.acceptance_rate

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        out = list(pool.map(one, cfg.seeds))
    return out


def _pooled(records, index, which):
    return np.concatenate([getattr(r, which)[index].reshape(-1, 3) for r in records])


def _chaos(cfg, k, run: PointRun, spec, mu, mass, scales):
    """Per-seed residuals aggregated over all chaos windows."""
    tests = cfg.tests
    tests = type(tests)(tests.members, cfg.initial.mean_temperature(), mass)
    names = list(tests.members)
    pr = cfg.section("probes")
    probes = default_probes(cfg.external.domain_halfwidth, pr["count"], pr["radius_frac"])
    radius = mu * spec.cutoff_radius if spec.interacting else mu * cfg.potential.cutoff_radius
    delta_t = cfg.schedule.points[k].delta_t
    n_windows = len(cfg.section("snapshots")["chaos_times"])
    recs = run.records
    S = len(recs)
    M, N = recs[0].q[0].shape[:2]
    units = {(s, pb.name): [] for s in range(S) for pb in probes}
    pairs = {(s, pb.name): 0 for s in range(S) for pb in probes}
    refs = {pb.name: [] for pb in probes}
    rep = np.repeat(np.arange(S * M), N)
    for w in range(n_windows):
        kt = run.labels[f"chaos{w}"]
        kp = run.labels[f"chaos{w}_prev"]
        q0 = _pooled(recs, kp, "q")
        p0 = _pooled(recs, kp, "p")
        for pb in probes:
            ref, _ = factorized_window_reference(q0, p0, rep, delta_t, radius, pb, spec, mu,
                                                 mass, tests, cfg.external)
            refs[pb.name].append(ref)
            for s, r in enumerate(recs):
                for m in range(M):
                    i, j = window_pairs(r.q[kt][m], radius, pb)
                    pairs[(s, pb.name)] += len(i)
                    val = tests.evaluate(r.p[kt][m][j]).sum(axis=1) if len(i) \
                        else np.zeros(len(names))
                    units[(s, pb.name)].append(val)
    rows, stat, zs = [], np.full(S, np.nan), []
    per_seed_est = np.full((S, len(names)), np.nan)
    per_seed_se = np.full((S, len(names)), np.nan)
    for pb in probes:
        ref = np.mean(refs[pb.name], axis=0)
        for s in range(S):
            U = np.array(units[(s, pb.name)])
            n_pairs = pairs[(s, pb.name)]
            defined = n_pairs >= MIN_PROBE_PAIRS and ref[0] > 0
            est = (U.mean(axis=0) - ref) / ref[0] if ref[0] > 0 else np.full(len(names), np.nan)
            se = U.std(axis=0, ddof=1) / math.sqrt(len(U)) / ref[0] if ref[0] > 0 \
                else np.full(len(names), np.nan)
            for m, name in enumerate(names):
                rows.append([cfg.seeds[s], pb.name, name, est[m] if defined else math.nan,
                             se[m] if defined else math.nan, n_pairs, defined])
            if defined:
                sup = float(np.max(np.abs(est)))
                stat[s] = sup if not np.isfinite(stat[s]) else max(stat[s], sup)
                with np.errstate(divide="ignore", invalid="ignore"):
                    zs.extend(np.abs(est[1:] / se[1:]).tolist())
                if pb is probes[0]:
                    per_seed_est[s], per_seed_se[s] = est, se
    boot = cfg.section("boltzmann")["bootstrap"]
    med, lo, hi = bootstrap_median_ci(stat, 5 * boot, point_seed(cfg.seeds[0], k, 21))
    zs = np.asarray(zs, float)
    zs = zs[np.isfinite(zs)]
    summary = {"median": med, "ci_low": lo, "ci_high": hi, "per_seed": stat.tolist(),
               "undefined_seeds": int(np.sum(~np.isfinite(stat))),
               "median_abs_z": float(np.median(zs)) if len(zs) else math.nan,
               "windows": n_windows, "radius": radius, "delta_t": delta_t,
               "probes": [pb.name for pb in probes]}
    return rows, summary, (names, per_seed_est, per_seed_se)


def _bridge(cfg, k, run: PointRun, spec, mu, mass, scales, kernel, out: Path):
    """Matched Boltzmann solve, L1 with bootstrap bands and chi_min sensitivity."""
    bz = cfg.section("boltzmann")
    tau = scales["mean_free_time"]
    t_b = cfg.section("snapshots")["bridge_time"]
    recs = run.records
    p0 = _pooled(recs, 0, "p")
    n_eff = scales["n_mu2"] / (mu * mu)
    n_out = bz["n_outputs"]
    steps = max(1, math.ceil(bz["steps_per_mean_free"] * t_b / (n_out - 1)))

    def solve(kern, seed_stream=1):
        ve = VelocityEnsemble(np.tile(p0, (bz["replication"], 1)), n_eff, 1.0, mass)
        kc = KineticConfig(density=n_eff if kern is not None else 0.0, mu=mu,
                           t_final=t_b * tau, n_outputs=n_out, steps_per_output=steps,
                           seed=point_seed(cfg.seeds[0], k, seed_stream), time_unit="physical")
        return run_homogeneous(ve, kern, kc)

    report = solve(kernel)
    report.to_csv(out / "boltzmann.csv")
    edges = np.linspace(0.0, speed_top(cfg, mass), bz["speed_bins"] + 1)
    ib = run.labels["bridge"]
    md_counts = np.array([_speed_counts(r.p[ib], edges, mass) for r in recs])
    bz_counts = _speed_counts(report.final, edges, mass)
    l1 = speed_l1(md_counts.sum(axis=0), bz_counts)
    # how far f1 itself moved since t = 0, the scale the discrepancy is judged against
    l1_relaxation = speed_l1(md_counts.sum(axis=0), _speed_counts(p0, edges, mass))
    rng = np.random.default_rng(point_seed(cfg.seeds[0], k, 31))
    S = len(recs)
    boots = np.array([speed_l1(md_counts[rng.integers(0, S, S)].sum(axis=0), bz_counts)
                      for _ in range(bz["bootstrap"])])
    # L1 between independent samples of the same sizes from the Boltzmann law
    prob = bz_counts / bz_counts.sum()
    n_md, n_bz = int(md_counts.sum()), int(bz_counts.sum())
    floor = np.array([speed_l1(rng.multinomial(n_md, prob), rng.multinomial(n_bz, prob))
                      for _ in range(NOISE_FLOOR_DRAWS)])
    # basic bootstrap interval: resampling inflates L1, so percentile bands
    # sit above the estimate
    bridge = {"l1": l1, "ci_low": max(0.0, 2 * l1 - float(np.quantile(boots, 0.975))),
              "ci_high": 2 * l1 - float(np.quantile(boots, 0.025)), "l1_relaxation": l1_relaxation,
              "noise_floor": float(floor.mean()), "noise_floor_sd": float(floor.std(ddof=1)),
              "l1_excess": l1 - float(floor.mean()),
              "md_samples": n_md, "boltzmann_samples": n_bz, "bridge_time": t_b}
    width = np.diff(edges)
    _write_csv(out / "bridge.csv", ["speed_lo", "speed_hi", "md_density", "boltzmann_density"],
               [[edges[b], edges[b + 1], md_counts.sum(axis=0)[b] / n_md / width[b],
                 bz_counts[b] / n_bz / width[b]] for b in range(len(width))])
    figures.plot_speed_distributions(
        out / "speed_distribution.png", edges,
        {"MD": md_counts.sum(axis=0)[:-1] / n_md / width,
         "Boltzmann": bz_counts[:-1] / n_bz / width}, f"t = {t_b:g} mean free times")

    sens_rows = []
    if isinstance(kernel, InversePowerKernel):
        sens_rows.append([1.0, kernel.chi_min, report.H[-1], 0.0])
        for factor in bz["sensitivity"]:
            kern = build_kernel(cfg, spec, mass, kernel.chi_min * factor)
            rep_f = solve(kern)
            sens_rows.append([factor, kern.chi_min, rep_f.H[-1],
                              speed_l1(_speed_counts(rep_f.final, edges, mass), bz_counts)])
        _write_csv(out / "chi_min_sensitivity.csv", ["factor", "chi_min", "H_final", "l1_vs_base"],
                   sens_rows)
    bridge["chi_min_sensitivity"] = [dict(zip(("factor", "chi_min", "H_final", "l1_vs_base"), r))
                                     for r in sens_rows]
    return report, bridge


def _md_h_series(cfg, run: PointRun, mass, tau):
    kc = KineticConfig()
    rows = []
    for name in sorted((n for n in run.labels if n.startswith("grid")), key=lambda n: int(n[4:])):
        i = run.labels[name]
        est = entropy_of(_pooled(run.records, i, "p"), kc, mass)
        rows.append([run.times[i] / tau, est.H, est.stderr])
    return np.array(rows)


def _write_f1(cfg, run: PointRun, mass, tau, out: Path):
    """Pooled speed histograms at every snapshot; the three Bogolyubov
    snapshots are also stored on the coarser Bogolyubov grid."""
    bz = cfg.section("boltzmann")
    top = speed_top(cfg, mass)
    edges = np.linspace(0.0, top, bz["speed_bins"] + 1)
    hist = []
    for i, t in enumerate(run.times):
        p = _pooled(run.records, i, "p")
        hist.append({"t": t / tau, "counts": _speed_counts(p, edges, mass), "samples": len(p)})
    bg = cfg.section("bogolyubov")
    b_edges = np.linspace(0.0, top, bg["bins"] + 1)
    trio = {}
    for name in ("fd_before", "bridge", "fd_after"):
        p = _pooled(run.records, run.labels[name], "p")
        c = _speed_counts(p, b_edges, mass)
        trio[name] = {"t": run.times[run.labels[name]] / tau, "counts": c[:-1],
                      "samples": len(p)}
    _write_json(out / "f1_speed.json", {"edges": edges, "last_bin": "overflow",
                                        "snapshots": hist,
                                        "bogolyubov": {"edges": b_edges, **trio}})


def run_point(cfg: ExperimentConfig, k: int, scales: dict, out: Path, control: bool = False,
              threads: int = 1) -> dict:
    """MD ensemble, chaos residuals and (bridge mode) the matched Boltzmann
    comparison for schedule point k.  Writes its artifacts into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    pt = cfg.schedule.points[k]
    mu, mass, spec = point_physics(cfg, k, control)
    tau = scales["mean_free_time"]
    n_total = len(cfg.seeds) * cfg.replicas[k]
    with_chaos = n_total >= 2
    times, labels = _snapshot_plan(cfg, k, tau, with_chaos)
    results = _run_md(cfg, k, spec, mass, times, threads)
    run = PointRun([r for r, _ in results], times, labels, [a for _, a in results])
    record = {"point": k, "status": "ok", "control": control, "mu": mu, "n_particles":
              pt.n_particles, "delta_t": pt.delta_t, "replicas": cfg.replicas[k], "mass": mass,
              "density": scales["n_mu2"] / (mu * mu), "potential": spec.to_dict(),
              "mean_free_time": tau,
              "md_dt": [r.dt for r in run.records], "acceptance": run.acceptance}

    # energy bookkeeping
    e_rows, drift = [], 0.0
    for s, r in zip(cfg.seeds, run.records):
        e0 = r.energies[0]
        for i, t in enumerate(times):
            for m in range(len(e0)):
                rel = (r.energies[i, m] - e0[m]) / abs(e0[m])
                drift = max(drift, abs(rel))
                e_rows.append([t / tau, s, m, r.energies[i, m], rel])
    _write_csv(out / "md_energy.csv", ["t", "seed", "replica", "E", "relative_drift"], e_rows)
    record["energy_drift_max"] = drift

    h_md = _md_h_series(cfg, run, mass, tau)
    _write_csv(out / "md_h_series.csv", ["t", "H", "H_stderr"], h_md.tolist())
    _write_f1(cfg, run, mass, tau, out)

    if with_chaos:
        rows, chaos, (names, est, se) = _chaos(cfg, k, run, spec, mu, mass, scales)
        _write_csv(out / "chaos.csv", ["seed", "probe", "test_function", "estimate", "stderr",
                                       "pairs", "defined"], rows)
        figures.plot_chaos(out / "chaos_residual.png", names, est, se, f"mu = {mu:g}")
        record["chaos"] = chaos

    series = {"MD": (h_md[:, 0], h_md[:, 1], h_md[:, 2])}
    if cfg.mode == "bridge":
        kernel = build_kernel(cfg, spec, mass)
        report, bridge = _bridge(cfg, k, run, spec, mu, mass, scales, kernel, out)
        record["bridge"] = bridge
        record["H_boltzmann_final"] = float(report.H[-1])
        series["Boltzmann"] = (report.times / tau, report.H, report.H_stderr)
        bg = cfg.section("bogolyubov")
        if bg["enabled"] and not control:
            record["bogolyubov"] = compare_point(out, record, bg["samples"])
    record["H_md_final"] = float(h_md[-1, 1])
    figures.plot_h_series(out / "h_series.png", series, f"mu = {mu:g}")
    _write_json(out / "point.json", record)
    return record


# --------------------------------------------------------------------------
# Bogolyubov comparison

def compare_point(point_dir, record: dict | None = None, samples: int = 4000) -> dict:
    """Bogolyubov table for one point directory; writes bogolyubov.csv."""
    point_dir = Path(point_dir)
    if record is None:
        with open(point_dir / "point.json") as fh:
            record = json.load(fh)
    f1_path = point_dir / "f1_speed.json"
    if not f1_path.exists():
        raise DomainError(f"{f1_path} is missing; compare needs a bridge artifact directory")
    with open(f1_path) as fh:
        f1 = json.load(fh)
    bg = f1["bogolyubov"]
    edges = np.asarray(bg["edges"], float)
    trio = [bg[n] for n in ("fd_before", "bridge", "fd_after")]
    if any(len(x["counts"]) != len(edges) - 1 for x in trio):
        raise DomainError("Bogolyubov snapshots do not share the bin grid")
    spec = PotentialSpec(**record["potential"])
    tau = record["mean_free_time"]
    dt_snap = (trio[2]["t"] - trio[1]["t"]) * tau
    cmp = bogolyubov_from_counts(edges, [x["counts"] for x in trio],
                                 [x["samples"] for x in trio], dt_snap, spec,
                                 record["density"], record["mu"], record["mass"],
                                 n_samples=samples, seed=int(record["point"]) + 1)
    rows = [[cmp.speeds[b], cmp.md_dfdt[b], cmp.md_stderr[b], cmp.bogolyubov[b],
             cmp.bogolyubov_stderr[b], cmp.boltzmann[b], cmp.boltzmann_stderr[b]]
            for b in range(len(cmp.speeds))]
    _write_csv(point_dir / "bogolyubov.csv",
               ["speed", "md_dfdt", "md_stderr", "bogolyubov", "bogolyubov_stderr",
                "boltzmann", "boltzmann_stderr"], rows)
    figures.plot_bogolyubov(point_dir / "bogolyubov.png", cmp.speeds,
                            {"MD finite difference": (cmp.md_dfdt, cmp.md_stderr),
                             "Bogolyubov": (cmp.bogolyubov, cmp.bogolyubov_stderr),
                             "Boltzmann": (cmp.boltzmann, cmp.boltzmann_stderr)})
    return {"l1": cmp.table(), "t": trio[1]["t"]}


def compare_bogolyubov(artifact_dir) -> list:
    """Recompute the Bogolyubov table of every point of a bridge run.

    Returns rows (point, mu, pair of fields, L1 discrepancy), also written
    to comparison.csv.
    """
    root = Path(artifact_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DomainError(f"{root} is not an artifact directory (no manifest.json)")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest["config"]["mode"] != "bridge":
        raise DomainError("compare needs the artifacts of a bridge run")
    samples = manifest["config"]["bogolyubov"]["samples"]
    rows = []
    for pdir in sorted(root.glob("point_*")):
        if not (pdir / "point.json").exists():
            continue
        with open(pdir / "point.json") as fh:
            record = json.load(fh)
        table = compare_point(pdir, record, samples)
        for pair, value in sorted(table["l1"].items()):
            rows.append([record["point"], record["mu"], pair, value])
    if not rows:
        raise DomainError(f"no completed points under {root}")
    _write_csv(root / "comparison.csv", ["point", "mu", "fields", "l1"], rows)
    return rows


# --------------------------------------------------------------------------
# run modes

@dataclass
class SweepReport:
    out_dir: Path
    points: list
    control: list = field(default_factory=list)
    trends: dict = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return all(p.get("status") == "ok" for p in self.points + self.control)

    @property
    def exit_code(self) -> int:
        return 0 if self.complete else 3


def _manifest(cfg: ExperimentConfig, scales: dict) -> dict:
    return {"config": cfg.manifest_dict(), "seeds": cfg.seeds, "derived": scales,
            "versions": {"kinbridge": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "numba": numba.__version__,
                         "python": platform.python_version()}}


def _error_record(k, exc, control=False) -> dict:
    rec = {"point": k, "status": "error", "control": control, "type": type(exc).__name__,
           "message": str(exc)}
    if isinstance(exc, IntegrationError):
        rec["replica"] = exc.replica
        rec["closest_approach"] = exc.closest_approach
    return rec


def _summary_rows(points, control):
    ctrl = {c["point"]: c for c in control}
    rows = []
    for p in points:
        k = p["point"]
        ch = p.get("chaos", {})
        br = p.get("bridge", {})
        cc = ctrl.get(k, {})
        rows.append([k, p.get("mu"), p.get("n_particles"), p.get("delta_t"), p.get("replicas"),
                     p["status"], ch.get("median"), ch.get("ci_low"), ch.get("ci_high"),
                     br.get("l1"), br.get("ci_low"), br.get("ci_high"), br.get("noise_floor"),
                     br.get("l1_excess"),
                     cc.get("chaos", {}).get("median"), cc.get("chaos", {}).get("median_abs_z"),
                     cc.get("bridge", {}).get("l1"), cc.get("bridge", {}).get("noise_floor"),
                     p.get("bogolyubov", {}).get("l1", {}).get("bogolyubov|boltzmann")])
    header = ["point", "mu", "n_particles", "delta_t", "replicas", "status", "chaos_median",
              "chaos_ci_low", "chaos_ci_high", "l1", "l1_ci_low", "l1_ci_high", "l1_noise_floor",
              "l1_excess",
              "control_chaos_median", "control_median_abs_z", "control_l1",
              "control_noise_floor", "bogolyubov_vs_boltzmann_l1"]
    return header, [[("" if v is None else v) for v in r] for r in rows]


def _boltzmann_only(cfg: ExperimentConfig, scales: dict, out: Path) -> dict:
    bz = cfg.section("boltzmann")
    mu, mass, spec = point_physics(cfg, 0)
    n = scales["n_mu2"] / (mu * mu)
    rng = np.random.default_rng(point_seed(cfg.seeds[0], 0, 41))
    p, _ = _draw_momenta(rng, cfg.initial, bz["samples"], mass)
    kernel = build_kernel(cfg, spec, mass)
    tau = scales["mean_free_time"]
    steps = max(1, math.ceil(bz["steps_per_mean_free"] * bz["t_final"] / (bz["n_outputs"] - 1)))

    def solve(kern):
        kc = KineticConfig(density=n if kern is not None else 0.0, mu=mu,
                           t_final=bz["t_final"] * tau, n_outputs=bz["n_outputs"],
                           steps_per_output=steps, seed=point_seed(cfg.seeds[0], 0, 42),
                           time_unit="physical")
        return run_homogeneous(VelocityEnsemble(p, n, 1.0, mass), kern, kc)

    out.mkdir(parents=True, exist_ok=True)
    report = solve(kernel)
    report.to_csv(out / "kinetic.csv")
    report.snapshot_json(out / "final.json")
    figures.plot_h_series(out / "h_series.png",
                          {"Boltzmann": (report.times / tau, report.H, report.H_stderr)})
    record = {"point": 0, "status": "ok", "H": report.H.tolist(),
              "H_maxwellian": report.H_maxwellian, "monotone": report.monotone(),
              "mean_free_time": tau}
    if isinstance(kernel, InversePowerKernel):
        rows = [[1.0, kernel.chi_min, report.H[-1]]]
        for factor in bz["sensitivity"]:
            kern = build_kernel(cfg, spec, mass, kernel.chi_min * factor)
            rows.append([factor, kern.chi_min, solve(kern).H[-1]])
        _write_csv(out / "chi_min_sensitivity.csv", ["factor", "chi_min", "H_final"], rows)
    _write_json(out / "point.json", record)
    return record


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int | None = None,
                   sweep: bool = False) -> SweepReport:
    """Execute the configured mode at every schedule point.

    Point failures are recorded in error.json and do not stop the other
    points.  ``sweep`` adds the trend summary (sweep.json, trend.png).
    """
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    threads = cfg.threads if threads is None else threads
    timing = {"threads": threads, "points": {}}
    t_start = time.perf_counter()
    scales = reference_scales(cfg)
    _write_json(out / "manifest.json", _manifest(cfg, scales))
    kernel = build_kernel(cfg, cfg.potential, 1.0)
    if cfg.mode != "nbody_only" and isinstance(kernel, InversePowerKernel):
        kernel.table.dump_csv(out / "deflection_table.csv")

    report = SweepReport(out, [])
    if cfg.mode == "boltzmann_only":
        t0 = time.perf_counter()
        try:
            report.points.append(_boltzmann_only(cfg, scales, out / "boltzmann"))
        except KinbridgeError as exc:
            rec = _error_record(0, exc)
            _write_json(out / "boltzmann" / "error.json", rec)
            report.points.append(rec)
        timing["points"]["boltzmann"] = time.perf_counter() - t0
    else:
        runs = [(False, report.points)]
        if cfg.data["control"]:
            runs.append((True, report.control))
        for k in range(len(cfg.schedule.points)):
            for control, sink in runs:
                pdir = out / f"point_{k:02d}" / ("control" if control else "")
                t0 = time.perf_counter()
                try:
                    rec = run_point(cfg, k, scales, pdir, control, threads)
                except KinbridgeError as exc:
                    pdir.mkdir(parents=True, exist_ok=True)
                    rec = _error_record(k, exc, control)
                    _write_json(pdir / "error.json", rec)
                sink.append(rec)
                timing["points"][f"{k}{'_control' if control else ''}"] = \
                    time.perf_counter() - t0
        header, rows = _summary_rows(report.points, report.control)
        _write_csv(out / "summary.csv", header, rows)
        if sweep:
            report.trends = _trends(cfg, report)
            _write_json(out / "sweep.json", {"trends": report.trends,
                                             "complete": report.complete,
                                             "points": report.points,
                                             "control": report.control})
            ok = [p for p in report.points if p["status"] == "ok"]
            if ok:
                panels = {"median |chaos residual|": tuple(
                    [p["chaos"][key] for p in ok] for key in ("median", "ci_low", "ci_high"))}
                if cfg.mode == "bridge":
                    panels["L1(MD, Boltzmann)"] = tuple(
                        [p["bridge"][key] for p in ok] for key in ("l1", "ci_low", "ci_high"))
                figures.plot_trend(out / "trend.png", [p["mu"] for p in ok], panels)
    timing["total"] = time.perf_counter() - t_start
    _write_json(out / "timing.json", timing)
    return report


def _trends(cfg: ExperimentConfig, report: SweepReport) -> dict:
    pts = report.points
    ok = all(p["status"] == "ok" for p in pts)
    trends: dict = {"complete": report.complete}
    if ok and all("chaos" in p for p in pts):
        med = [p["chaos"]["median"] for p in pts]
        trends["chaos_medians"] = med
        trends["chaos_nonincreasing"] = nonincreasing_within_bands(
            med, [p["chaos"]["ci_low"] for p in pts], [p["chaos"]["ci_high"] for p in pts])
    if ok and all("bridge" in p for p in pts):
        l1 = [p["bridge"]["l1"] for p in pts]
        trends["l1"] = l1
        trends["l1_excess"] = [p["bridge"]["l1_excess"] for p in pts]
        trends["l1_decreasing"] = bool(
            nonincreasing_within_bands(l1, [p["bridge"]["ci_low"] for p in pts],
                                       [p["bridge"]["ci_high"] for p in pts])
            and l1[-1] < l1[0])
        trends["l1_point_estimates_decreasing"] = bool(np.all(np.diff(l1) < 0))
        bog = [p.get("bogolyubov", {}).get("l1", {}).get("bogolyubov|boltzmann") for p in pts]
        trends["bogolyubov_vs_boltzmann_l1"] = bog
    if report.control:
        ctrl_ok = all(c["status"] == "ok" for c in report.control)
        if ctrl_ok:
            z = [c.get("chaos", {}).get("median_abs_z", math.nan) for c in report.control]
            trends["control_median_abs_z"] = z
            trends["control_chaos_at_noise_floor"] = bool(np.all(np.asarray(z) <= 1.0))
            if all("bridge" in c for c in report.control):
                excess = [(c["bridge"]["l1"] - c["bridge"]["noise_floor"])
                          / c["bridge"]["noise_floor_sd"] for c in report.control]
                trends["control_l1_excess_sd"] = excess
                trends["control_l1_at_noise_floor"] = bool(np.all(np.asarray(excess) <= 3.0))
        else:
            trends["control_chaos_at_noise_floor"] = False
    return trends


def grad_sweep(cfg: ExperimentConfig, out_dir=None, threads: int | None = None) -> SweepReport:
    """The scaling sweep: needs bridge mode and at least three schedule points."""
    if cfg.mode != "bridge":
        raise DomainError("grad_sweep needs mode = 'bridge'")
    if len(cfg.schedule.points) < 3:
        raise DomainError("grad_sweep needs at least three schedule points")
    return run_experiment(cfg, out_dir, threads, sweep=True)
