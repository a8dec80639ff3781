"""Lattice Gaussian free fields, Liouville quantum gravity measures and
KPZ scaling exponents.

Submodules:

``grid_field``      GFF sampling on lattice domains and the sparse Green oracle
``circle_average``  circle averages, radial ladders and conformal radius
``lqg_measure``     quantum area measures and their moment formulas
``quantum_boxes``   dyadic ``(mu, delta)`` tilings and neighborhood counts
``kpz``             the KPZ quadratic and the box-counting experiment
``stopping_time``   first passage of drifted Brownian motion
``rooted_measure``  rooted pairs and thick points
``boundary``        free and mixed boundary fields and the boundary measure
``cli``             command-line pipelines
"""

__version__ = "0.1.0"

from .grid_field import DomainSpec, Field, green_solve, sample_gff
from .kpz import kpz_forward, kpz_inverse
from .lqg_measure import QuantumMeasure, build_measure, build_measure_discrete
from .quantum_boxes import BoxTiling, build_tiling

__all__ = [
    "__version__",
    "DomainSpec",
    "Field",
    "sample_gff",
    "green_solve",
    "QuantumMeasure",
    "build_measure",
    "build_measure_discrete",
    "BoxTiling",
    "build_tiling",
    "kpz_forward",
    "kpz_inverse",
]
