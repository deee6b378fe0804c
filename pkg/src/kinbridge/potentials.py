"""Pair interaction and external confinement.

The pair potential is an inverse power law

    Phi(r) = C * r**(-gamma)

in microscopic units (r measured in interaction radii), shifted and
truncated at ``cutoff_radius`` so the energy is continuous.  Particles in
the N-body system interact through Phi(|q_i - q_j| / mu).

The external potential U(q) confines the gas to the box G = [-L, L]^3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Mapping

import numpy as np

from .errors import DomainError, InvalidSpecError

POTENTIAL_KINDS = ("inverse_power", "hard_sphere_limit", "free")
EXTERNAL_KINDS = ("none", "harmonic", "power_wall")


@dataclass(frozen=True)
class PotentialSpec:
    """Repulsive pair potential.

    ``kind='hard_sphere_limit'`` is analytic only: the sphere diameter is
    ``cutoff_radius`` and no force is defined.  ``kind='free'`` is the
    Phi = 0 control used to separate interaction effects from sampling
    noise.
    """

    gamma: float = 4.0
    amplitude: float = 1.0
    cutoff_radius: float = 2.5
    kind: str = "inverse_power"

    def __post_init__(self):
        problems = _structural_problems(self.gamma, self.amplitude,
                                        self.cutoff_radius, self.kind)
        if problems:
            raise InvalidSpecError("; ".join(problems))

    @property
    def diameter(self) -> float:
        return self.cutoff_radius

    @property
    def interacting(self) -> bool:
        return self.kind != "free"

    @property
    def shift(self) -> float:
        if self.kind != "inverse_power":
            return 0.0
        return self.amplitude * self.cutoff_radius ** (-self.gamma)

    def scaled(self, factor: float) -> "PotentialSpec":
        """Same shape with the amplitude multiplied by ``factor``."""
        return PotentialSpec(self.gamma, self.amplitude * factor,
                             self.cutoff_radius, self.kind)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _structural_problems(gamma, amplitude, cutoff_radius, kind):
    problems = []
    if kind not in POTENTIAL_KINDS:
        problems.append(f"potential.kind must be one of {POTENTIAL_KINDS}, got {kind!r}")
        return problems
    if not cutoff_radius > 0:
        problems.append("potential.cutoff_radius must be positive")
    if kind == "inverse_power":
        if not gamma > 2:
            problems.append(
                f"potential.gamma={gamma} violates the tail hypothesis gamma > 2")
        if not amplitude > 0:
            problems.append(
                f"potential.amplitude={amplitude} is not repulsive "
                "(Phi must decrease monotonically)")
    return problems


@dataclass(frozen=True)
class ExternalPotential:
    """Confining one-body potential.

    power_wall:  U(q) = stiffness * sum_d (q_d / L)**wall_exponent
    harmonic:    U(q) = stiffness * |q|^2 / 2
    none:        U = 0

    ``domain_halfwidth`` is L; G is the open box (-L, L)^3.
    """

    kind: str = "power_wall"
    stiffness: float = 50.0
    wall_exponent: float = 20.0
    domain_halfwidth: float = 0.5

    def __post_init__(self):
        if self.kind not in EXTERNAL_KINDS:
            raise InvalidSpecError(f"external.kind must be one of {EXTERNAL_KINDS}")
        if self.kind == "power_wall":
            n = self.wall_exponent
            if n < 2 or n != int(n) or int(n) % 2:
                raise InvalidSpecError("external.wall_exponent must be an even integer >= 2")
            if not self.stiffness > 0:
                raise InvalidSpecError("external.stiffness must be positive")
        if not self.domain_halfwidth > 0:
            raise InvalidSpecError("external.domain_halfwidth must be positive")

    @property
    def volume(self) -> float:
        return (2.0 * self.domain_halfwidth) ** 3

    @property
    def code(self) -> int:
        return EXTERNAL_KINDS.index(self.kind)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _check_radius(r):
    r = np.asarray(r, dtype=float)
    if np.any(~(r > 0)):
        raise DomainError("pair distance must be positive")
    return r


def phi_eval(spec: PotentialSpec, r):
    """Shifted-truncated pair energy at microscopic distance ``r``."""
    r = _check_radius(r)
    if spec.kind == "free":
        out = np.zeros_like(r)
    elif spec.kind == "hard_sphere_limit":
        raise DomainError("hard_sphere_limit has no finite energy; use the analytic kernel")
    else:
        raw = spec.amplitude * r ** (-spec.gamma)
        out = np.where(r < spec.cutoff_radius, raw - spec.shift, 0.0)
    return out if out.ndim else float(out)


def phi_force(spec: PotentialSpec, r):
    """Radial force -dPhi/dr; positive means repulsive."""
    r = _check_radius(r)
    if spec.kind == "free":
        out = np.zeros_like(r)
    elif spec.kind == "hard_sphere_limit":
        raise DomainError("hard_sphere_limit has no force; use the analytic kernel")
    else:
        raw = spec.gamma * spec.amplitude * r ** (-spec.gamma - 1.0)
        out = np.where(r < spec.cutoff_radius, raw, 0.0)
    return out if out.ndim else float(out)


def u_eval_grad(ext: ExternalPotential, q):
    """Return (U(q), grad U(q)).  Accepts one position or an (n, 3) array."""
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    q2 = np.atleast_2d(q)
    L = ext.domain_halfwidth
    if ext.kind != "none" or math.isfinite(L):
        if np.any(np.abs(q2) >= L):
            raise DomainError("position outside the confining region G")
    if ext.kind == "none":
        u = np.zeros(len(q2))
        g = np.zeros_like(q2)
    elif ext.kind == "harmonic":
        u = 0.5 * ext.stiffness * np.sum(q2 * q2, axis=1)
        g = ext.stiffness * q2
    else:
        n = int(ext.wall_exponent)
        x = q2 / L
        u = ext.stiffness * np.sum(x ** n, axis=1)
        g = ext.stiffness * n * x ** (n - 1) / L
    if single:
        return float(u[0]), g[0]
    return u, g


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    def add(self, name, passed, detail=""):
        self.checks.append((name, bool(passed), detail))

    @property
    def ok(self) -> bool:
        return all(passed for _, passed, _ in self.checks)

    def failures(self):
        return [(name, detail) for name, passed, detail in self.checks if not passed]

    def __str__(self):
        return "\n".join(f"{'PASS' if p else 'FAIL'} {n}: {d}" for n, p, d in self.checks)


def validate_spec(spec: PotentialSpec | Mapping) -> ValidationReport:
    """Check the hypotheses the derivation places on Phi.

    Accepts a constructed spec or a raw mapping of its fields, so that
    configurations which would fail construction can still be reported on.
    """
    if isinstance(spec, PotentialSpec):
        params = spec.to_dict()
    else:
        params = {f.name: f.default for f in fields(PotentialSpec)}
        params.update(spec)
    gamma = float(params["gamma"])
    amp = float(params["amplitude"])
    rc = float(params["cutoff_radius"])
    kind = params["kind"]
    report = ValidationReport()
    if kind not in POTENTIAL_KINDS:
        report.add("kind", False, f"unknown kind {kind!r}")
        return report
    if kind == "free":
        report.add("control", True, "Phi = 0 control; interaction hypotheses not applicable")
        return report
    if kind == "hard_sphere_limit":
        report.add("diameter", rc > 0, f"diameter={rc}")
        return report

    report.add("tail_exponent", gamma > 2, f"gamma={gamma} (need gamma > 2)")
    report.add("cutoff_positive", rc > 0, f"cutoff_radius={rc}")
    if rc > 0:
        r = np.geomspace(0.01, rc, 200, endpoint=False)
        phi = amp * r ** (-gamma) - amp * rc ** (-gamma)
        monotone = bool(np.all(np.diff(phi) < 0)) and bool(np.all(phi > 0))
        report.add("monotone_repulsive", monotone and amp > 0,
                   f"amplitude={amp}; strictly decreasing and positive on (0.01, {rc})")
        # The tail condition r^gamma Phi -> C concerns the untruncated family.
        r_half = rc / 2.0
        tail = r_half ** gamma * amp * r_half ** (-gamma)
        rel = abs(tail - amp) / abs(amp) if amp != 0 else math.inf
        report.add("tail_limit", rel <= 0.01 and amp != 0,
                   f"r^gamma Phi(r) at r={r_half:g} is {tail:g}, C={amp:g}")
    return report
