"""Homogenization toolkit for two-component thermo-poro-elastic media.

Periodic cell problems, effective coefficient assembly, a homogenized
double-porosity/double-temperature time stepper, resolved micro-scale
simulation with imperfect hydraulic/thermal interface contact, and
scale-convergence verification.

Submodules are imported explicitly (``from thermoporo import unit_cell``)
rather than re-exported here; keeping this module free of numpy imports
lets the command line pin thread counts before numerics load.
"""

__version__ = "0.1.0"

__all__ = [
    "cell_problems",
    "cli_io",
    "effective_coefficients",
    "errors",
    "fem_core",
    "macro_solver",
    "micro_dns",
    "params",
    "unit_cell",
    "verification",
]
