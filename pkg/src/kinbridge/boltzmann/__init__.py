"""Boltzmann-equation solvers: DSMC particles and discrete-velocity quadrature."""

from .dsmc import (KineticConfig, KineticRunReport, Moments, VelocityEnsemble,
                   dsmc_collision_step, excess_kurtosis, initial_majorant,
                   maxwellian_ensemble, mean_collision_rate, mean_free_time, moments, run_homogeneous,
                   transport_step, two_temperature_ensemble)
from .kernels import (HardSphereKernel, InversePowerKernel, Kernel, PseudoMaxwellKernel,
                      make_kernel)
from .quadrature import (DiscreteVelocityGrid, collision_integral_quadrature,
                         collision_operator)

__all__ = [
    "KineticConfig", "KineticRunReport", "Moments", "VelocityEnsemble",
    "dsmc_collision_step", "excess_kurtosis", "initial_majorant", "maxwellian_ensemble",
    "mean_collision_rate", "mean_free_time", "moments", "run_homogeneous", "transport_step",
    "two_temperature_ensemble", "HardSphereKernel", "InversePowerKernel", "Kernel",
    "PseudoMaxwellKernel", "make_kernel", "DiscreteVelocityGrid",
    "collision_integral_quadrature", "collision_operator",
]
