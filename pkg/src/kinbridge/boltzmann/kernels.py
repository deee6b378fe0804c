"""Collision kernels for the particle and quadrature solvers.

A kernel fixes the total cross-section sigma(g) (impact-parameter units,
so the physical cross-section is mu^2 sigma) and the deflection law.  The
collision rate of a pair with relative speed g is n mu^2 sigma(g) g.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import DomainError
from ..potentials import PotentialSpec
from ..scattering import DSMC_CHI_MIN, DeflectionTable, deflection_angle, hard_sphere_chi

HARD_SPHERE = 0
INVERSE_POWER = 1
PSEUDO_MAXWELL = 2


class Kernel:
    code = -1
    name = ""

    def sigma_g(self, g):
        raise NotImplementedError

    def transfer_sigma_g(self, g):
        """Momentum-transfer cross-section times g, int (1 - cos chi) dsigma g.

        Independent of any grazing cutoff; it sets the mean free time."""
        return self.sigma_g(g)

    def numba_args(self):
        """(code, diameter, kappa, x grid, g grid, rho_max, chi table)."""
        empty1 = np.zeros(2)
        empty2 = np.zeros((2, 2))
        return self.code, 0.0, 0.0, empty1, empty1, empty1, empty2

    def angular_nodes(self, g, n_nodes):
        """Quadrature nodes over the scattering angle for relative speed g.

        Returns (chi, rate weights) such that sum(rate weights) is the
        collision rate sigma(g) g per unit n mu^2; the azimuth is handled
        separately by the caller.
        """
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.name}


class HardSphereKernel(Kernel):
    code = HARD_SPHERE
    name = "hard_sphere"

    def __init__(self, diameter: float = 1.0):
        if not diameter > 0:
            raise DomainError("diameter must be positive")
        self.diameter = float(diameter)

    def sigma_g(self, g):
        return math.pi * self.diameter ** 2 * np.asarray(g, float)

    def numba_args(self):
        code, _, k, x, gg, r, c = super().numba_args()
        return code, self.diameter, k, x, gg, r, c

    def angular_nodes(self, g, n_nodes):
        x, w = np.polynomial.legendre.leggauss(n_nodes)
        rho = 0.5 * self.diameter * (x + 1.0)
        wr = 0.5 * self.diameter * w * rho * 2.0 * math.pi
        return hard_sphere_chi(rho, self.diameter), wr * g

    def to_dict(self):
        return {"kind": self.name, "diameter": self.diameter}


class InversePowerKernel(Kernel):
    """Tabulated deflection for the inverse-power potential.

    Grazing collisions with chi < chi_min are not performed; the total
    cross-section is pi rho_max(g)^2.
    """

    code = INVERSE_POWER
    name = "inverse_power"

    def __init__(self, spec: PotentialSpec | None = None, mass: float = 1.0,
                 g_range=(1e-2, 40.0), chi_min: float = DSMC_CHI_MIN, n_rho: int = 256,
                 n_g: int = 64):
        self.spec = spec or PotentialSpec()
        self.mass = mass
        self.chi_min = chi_min
        self.table = DeflectionTable(self.spec, mass, n_rho, n_g, g_range, chi_min)
        self._transfer = None

    def sigma_g(self, g):
        g = np.asarray(g, float)
        return self.table.sigma(np.maximum(g, 1e-300)) * g

    def transfer_sigma_g(self, g):
        g = np.asarray(g, float)
        if self._transfer is None:
            gs = self.table.g
            x, w = np.polynomial.legendre.leggauss(96)
            rc = self.spec.cutoff_radius
            rho = 0.5 * rc * (x + 1.0)
            wr = 0.5 * rc * w * rho * 2.0 * math.pi
            sm = np.array([np.sum(wr * (1.0 - np.cos(deflection_angle(rho, gg, self.spec,
                                                                      self.mass))))
                           for gg in gs])
            self._transfer = (np.log(gs), np.log(sm))
        lg, ls = self._transfer
        gc = np.clip(np.maximum(g, 1e-300), math.exp(lg[0]), math.exp(lg[-1]))
        return np.exp(np.interp(np.log(gc), lg, ls)) * g

    def numba_args(self):
        x, gs, rmax, chi = self.table.arrays()
        return self.code, 0.0, 0.0, x, gs, rmax, chi

    def angular_nodes(self, g, n_nodes):
        rc = self.spec.cutoff_radius
        x, w = np.polynomial.legendre.leggauss(n_nodes)
        rho = 0.5 * rc * (x + 1.0)
        wr = 0.5 * rc * w * rho * 2.0 * math.pi
        return deflection_angle(rho, g, self.spec, self.mass), wr * g

    def to_dict(self):
        return {"kind": self.name, "potential": self.spec.to_dict(), "chi_min": self.chi_min,
                "mass": self.mass}


class PseudoMaxwellKernel(Kernel):
    """Rate independent of g (sigma g = kappa), isotropic scattering."""

    code = PSEUDO_MAXWELL
    name = "pseudo_maxwell"

    def __init__(self, kappa: float = 1.0):
        if not kappa > 0:
            raise DomainError("kappa must be positive")
        self.kappa = float(kappa)

    def sigma_g(self, g):
        return np.full(np.shape(g), self.kappa)

    def numba_args(self):
        code, d, _, x, gg, r, c = super().numba_args()
        return code, d, self.kappa, x, gg, r, c

    def angular_nodes(self, g, n_nodes):
        x, w = np.polynomial.legendre.leggauss(n_nodes)
        return np.arccos(x), 0.5 * w * self.kappa

    def to_dict(self):
        return {"kind": self.name, "kappa": self.kappa}


def make_kernel(kind: str, **params) -> Kernel:
    if kind == "hard_sphere":
        return HardSphereKernel(params.get("diameter", 1.0))
    if kind == "inverse_power":
        spec = params.get("spec") or PotentialSpec(**params.get("potential", {}))
        return InversePowerKernel(spec, params.get("mass", 1.0),
                                  params.get("g_range", (1e-2, 40.0)),
                                  params.get("chi_min", DSMC_CHI_MIN))
    if kind == "pseudo_maxwell":
        return PseudoMaxwellKernel(params.get("kappa", 1.0))
    raise DomainError(f"unknown kernel {kind!r}")
