"""Experiment configuration: TOML schema, validation and manifest echo.

Every key has a default except ``seeds`` and ``schedule.mu``.  Validation
collects all problems before raising, and ``ExperimentConfig.to_dict``
returns the fully resolved configuration so that parsing it again gives an
equal config (this is what manifest.json stores).
"""

from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass

from ..errors import ConfigError, KinbridgeError
from ..marginals import ScalingSchedule, SchedulePoint, TestFunctionSet, schedule_problems
from ..nbody import InitialLaw
from ..potentials import ExternalPotential, PotentialSpec, validate_spec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MODES = ("nbody_only", "boltzmann_only", "bridge")
KERNELS = ("inverse_power", "hard_sphere", "pseudo_maxwell")
# keys that change where or how fast a run executes but not its results
EXECUTION_KEYS = ("output_dir", "threads")

# section -> key -> (types, default); a default of REQUIRED must be given,
# OPTIONAL keys are resolved from other values when absent.
REQUIRED = object()
OPTIONAL = object()
_NUM = (int, float)

SCHEMA = {
    "": {
        "mode": (str, "bridge"),
        "seeds": (list, REQUIRED),
        "output_dir": (str, "artifacts"),
        "threads": (int, 1),
        "control": (bool, False),
    },
    "potential": {
        "gamma": (_NUM, 4.0),
        "amplitude": (_NUM, 1.0),
        "cutoff_radius": (_NUM, 2.5),
        "kind": (str, "inverse_power"),
    },
    "external": {
        "kind": (str, "power_wall"),
        "stiffness": (_NUM, 50.0),
        "wall_exponent": (_NUM, 20),
        "domain_halfwidth": (_NUM, 0.5),
    },
    "initial": {
        "spatial": (str, "uniform_in_G"),
        "velocity": (str, "two_temperature"),
        "temperature": (_NUM, 1.0),
        "temperatures": (list, [1.6, 0.4]),
        "weights": (list, [0.5, 0.5]),
        "drift": (list, [0.0, 0.0, 0.0]),
        "blob_width": (_NUM, 0.15),
        "exclusion_radius": (_NUM, OPTIONAL),
    },
    "schedule": {
        "constant": (_NUM, 0.1),
        "mu": (list, REQUIRED),
        "n_particles": (list, OPTIONAL),
        "delta_t": (list, OPTIONAL),
        "dt_coefficient": (_NUM, 0.5),
        "replicas": (list, OPTIONAL),
        "replicas_first": (int, 4),
        "mass_rescaling": (bool, False),
    },
    "snapshots": {
        "chaos_times": (list, [1 / 3, 2 / 3, 1.0, 4 / 3, 5 / 3, 2.0]),
        "bridge_time": (_NUM, 2.0),
    },
    "probes": {
        "count": (int, 1),
        "radius_frac": (_NUM, 0.8),
    },
    "tests": {
        "members": (list, ["one", "px", "p2", "bump"]),
    },
    "md": {
        "dt_scale": (_NUM, 1.0),
    },
    "boltzmann": {
        "kernel": (str, "inverse_power"),
        "chi_min": (_NUM, 1e-3),
        "replication": (int, 4),
        "steps_per_mean_free": (int, 20),
        "speed_bins": (int, 40),
        "kappa": (_NUM, 1.0),
        "diameter": (_NUM, 1.0),
        "sensitivity": (list, [0.5, 2.0]),
        "samples": (int, 100000),
        "t_final": (_NUM, 5.0),
        "n_outputs": (int, 11),
        "bootstrap": (int, 200),
    },
    "bogolyubov": {
        "enabled": (bool, True),
        "fd_step": (_NUM, 0.25),
        "samples": (int, 4000),
        "bins": (int, 12),
    },
}


def _type_ok(value, types) -> bool:
    if isinstance(value, bool):
        return types is bool or (isinstance(types, tuple) and bool in types)
    return isinstance(value, types)


def _resolve(raw: dict, problems: list) -> dict:
    """Fill defaults, check types and report unknown sections or keys."""
    out = {}
    for section in raw:
        if section not in SCHEMA and not isinstance(raw[section], dict):
            continue
        if section not in SCHEMA:
            problems.append(f"unknown section [{section}]")
    for key, value in raw.items():
        if not isinstance(value, dict) and key not in SCHEMA[""]:
            problems.append(f"unknown top-level key {key!r}")
    for section, keys in SCHEMA.items():
        given = raw if section == "" else raw.get(section, {})
        if not isinstance(given, dict):
            problems.append(f"[{section}] must be a table")
            given = {}
        if section:
            for key in given:
                if key not in keys:
                    problems.append(f"unknown key {section}.{key}")
        resolved = {}
        for key, (types, default) in keys.items():
            name = f"{section}.{key}" if section else key
            if key in given:
                value = given[key]
                if not _type_ok(value, types):
                    problems.append(f"{name} has the wrong type ({type(value).__name__})")
                    continue
                resolved[key] = float(value) if types is _NUM else copy.deepcopy(value)
            elif default is REQUIRED:
                problems.append(f"{name} is required")
            elif default is not OPTIONAL:
                resolved[key] = copy.deepcopy(default)
        if section:
            out[section] = resolved
        else:
            out.update(resolved)
    return out


def _check_numbers(name, values, problems, positive=True, integer=False):
    if not isinstance(values, list) or not values:
        problems.append(f"{name} must be a non-empty list")
        return False
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            problems.append(f"{name} must contain numbers")
            return False
        if integer and v != int(v):
            problems.append(f"{name} must contain integers")
            return False
        if positive and not v > 0:
            problems.append(f"{name} entries must be positive")
            return False
    return True


@dataclass
class ExperimentConfig:
    """Validated experiment description; build with ``parse_config``."""

    data: dict
    potential: PotentialSpec
    external: ExternalPotential
    initial: InitialLaw
    schedule: ScalingSchedule
    replicas: list
    tests: TestFunctionSet

    @property
    def mode(self) -> str:
        return self.data["mode"]

    @property
    def seeds(self) -> list:
        return list(self.data["seeds"])

    @property
    def output_dir(self) -> str:
        return self.data["output_dir"]

    @property
    def threads(self) -> int:
        return self.data["threads"]

    def section(self, name: str) -> dict:
        return self.data[name]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def manifest_dict(self) -> dict:
        """Resolved configuration without the execution-only keys."""
        d = self.to_dict()
        for key in EXECUTION_KEYS:
            d.pop(key, None)
        return d

    def equivalent(self, other: "ExperimentConfig") -> bool:
        """Equal up to the execution-only keys."""
        return self.manifest_dict() == other.manifest_dict()

    def with_overrides(self, seed=None, output_dir=None, threads=None) -> "ExperimentConfig":
        """Copy with command-line overrides; ``seed`` replaces the seed list by
        ``seed, seed + 1, ...`` of the same length."""
        d = self.to_dict()
        if seed is not None:
            d["seeds"] = [int(seed) + k for k in range(len(d["seeds"]))]
        if output_dir is not None:
            d["output_dir"] = str(output_dir)
        if threads is not None:
            d["threads"] = int(threads)
        return parse_config(d)

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.data == other.data


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a raw mapping; raises ConfigError listing every problem."""
    problems: list = []
    d = _resolve(raw, problems)

    if "mode" in d and d["mode"] not in MODES:
        problems.append(f"mode must be one of {MODES}, got {d['mode']!r}")
    if "seeds" in d:
        if _check_numbers("seeds", d["seeds"], problems, positive=False, integer=True):
            d["seeds"] = [int(s) for s in d["seeds"]]
            if any(s < 0 for s in d["seeds"]):
                problems.append("seeds must be non-negative")
            if len(set(d["seeds"])) != len(d["seeds"]):
                problems.append("seeds must be distinct")
    if d.get("threads", 1) < 1:
        problems.append("threads must be >= 1")

    potential = None
    pot = d["potential"]
    report = validate_spec(pot)
    for name, detail in report.failures():
        problems.append(f"potential violates hypothesis {name}: {detail}")
    if report.ok:
        try:
            potential = PotentialSpec(**pot)
        except KinbridgeError as exc:
            problems.append(str(exc))

    external = None
    ext = dict(d["external"])
    try:
        external = ExternalPotential(**ext)
    except KinbridgeError as exc:
        problems.append(str(exc))

    initial = None
    ini = d["initial"]
    lists_ok = all(_check_numbers(f"initial.{k}", ini[k], problems, positive=(k != "drift"))
                   for k in ("temperatures", "weights", "drift"))
    if lists_ok:
        if len(ini["drift"]) != 3:
            problems.append("initial.drift must have three components")
        elif len(ini["temperatures"]) != len(ini["weights"]):
            problems.append("initial.temperatures and initial.weights differ in length")
        else:
            try:
                initial = InitialLaw(ini["spatial"], ini["velocity"], ini["temperature"],
                                     tuple(ini["temperatures"]), tuple(ini["weights"]),
                                     tuple(ini["drift"]), ini["blob_width"],
                                     ini.get("exclusion_radius"))
            except KinbridgeError as exc:
                problems.append(str(exc))

    schedule, replicas = None, []
    sch = d["schedule"]
    if "mu" in sch and _check_numbers("schedule.mu", sch["mu"], problems):
        mus = [float(m) for m in sch["mu"]]
        c = sch["constant"]
        n_list = sch.get("n_particles")
        if n_list is None:
            n_list = [int(round(c / m ** 2)) for m in mus]
            sch["n_particles"] = n_list
        dt_list = sch.get("delta_t")
        if dt_list is None:
            dt_list = [sch["dt_coefficient"] * math.sqrt(m) for m in mus]
            sch["delta_t"] = dt_list
        rep = sch.get("replicas")
        if rep is None:
            rep = [max(1, int(round(sch["replicas_first"] * m / mus[0]))) for m in mus]
            sch["replicas"] = rep
        ok = (_check_numbers("schedule.n_particles", n_list, problems, integer=True)
              and _check_numbers("schedule.delta_t", dt_list, problems)
              and _check_numbers("schedule.replicas", rep, problems, integer=True))
        if ok and not (len(n_list) == len(dt_list) == len(rep) == len(mus)):
            problems.append("schedule lists must all have the same length")
            ok = False
        if ok:
            pts = [SchedulePoint(int(n), m, float(t)) for n, m, t in zip(n_list, mus, dt_list)]
            sp = schedule_problems(pts, c)
            problems.extend(sp)
            if not sp:
                schedule = ScalingSchedule(pts, c, sch["mass_rescaling"])
                replicas = [int(r) for r in rep]
            sch["n_particles"] = [int(n) for n in n_list]
            sch["replicas"] = [int(r) for r in rep]
            sch["delta_t"] = [float(t) for t in dt_list]
        if schedule is not None and d.get("mode") == "bridge" and d.get("seeds"):
            if any(len(d["seeds"]) * r < 2 for r in replicas):
                problems.append("bridge mode needs at least two replicas in total per point")

    snap = d["snapshots"]
    if _check_numbers("snapshots.chaos_times", snap["chaos_times"], problems):
        snap["chaos_times"] = sorted(float(t) for t in snap["chaos_times"])
    if not snap["bridge_time"] > 0:
        problems.append("snapshots.bridge_time must be positive")

    pr = d["probes"]
    if pr["count"] not in (1, 2, 3, 4, 5, 6, 7, 8):
        problems.append("probes.count must be between 1 and 8")
    if not 0 < pr["radius_frac"] <= 1:
        problems.append("probes.radius_frac must lie in (0, 1]")

    tests = None
    members = d["tests"]["members"]
    try:
        tests = TestFunctionSet(tuple(members))
    except KinbridgeError as exc:
        problems.append(str(exc))
    if members and members[0] != "one":
        problems.append("tests.members must start with 'one' (it normalizes the residual)")

    if not d["md"]["dt_scale"] > 0:
        problems.append("md.dt_scale must be positive")

    bz = d["boltzmann"]
    if bz["kernel"] not in KERNELS:
        problems.append(f"boltzmann.kernel must be one of {KERNELS}")
    for key in ("chi_min", "kappa", "diameter", "t_final"):
        if not bz[key] > 0:
            problems.append(f"boltzmann.{key} must be positive")
    for key in ("replication", "steps_per_mean_free", "speed_bins", "samples", "bootstrap"):
        if bz[key] < 1:
            problems.append(f"boltzmann.{key} must be >= 1")
    if bz["n_outputs"] < 2:
        problems.append("boltzmann.n_outputs must be >= 2")
    if bz["sensitivity"]:
        _check_numbers("boltzmann.sensitivity", bz["sensitivity"], problems)

    bg = d["bogolyubov"]
    if not bg["fd_step"] > 0:
        problems.append("bogolyubov.fd_step must be positive")
    if bg["samples"] < 2 or bg["bins"] < 3:
        problems.append("bogolyubov.samples must be >= 2 and bogolyubov.bins >= 3")

    if potential is not None:
        mode = d.get("mode")
        if potential.kind == "hard_sphere_limit" and mode != "boltzmann_only":
            problems.append("the hard_sphere_limit potential has no MD dynamics; "
                            "use mode = 'boltzmann_only'")
        if (potential.kind == "hard_sphere_limit" and bz["kernel"] == "inverse_power"
                and mode == "boltzmann_only"):
            problems.append("boltzmann.kernel = 'inverse_power' needs an inverse_power potential")
    if external is not None and not math.isfinite(external.domain_halfwidth):
        problems.append("external.domain_halfwidth must be finite")

    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(d, potential, external, initial, schedule, replicas, tests)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from exc
    return parse_config(raw)
