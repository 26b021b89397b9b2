"""Riemannian geometry and geodesic flows on finite directed graphs."""
from .graph import DirectedGraph, GraphError, wedge_project
from .connection import (Connection, ConnectionCoeffs, GraphMetric, HermiticityError,
                         build_connection, qlc_residual, torsion_free_from_Q)
from .star import StarSolution, phase_scan_defect, solve_star, solve_star2_family
from .geodesic import (Blowup, GeodesicState, Measure, NegativeMeasureWarning, RealityLoss,
                       driving_force, evolve, velocity_rhs)
from .cayley import GroupSpec, cayley_graph, to_graph_connection
from .lattice import LatticeMeasure, LatticeMetric, evolve_lattice, qlc_z, scenario

__version__ = "0.1.0"
