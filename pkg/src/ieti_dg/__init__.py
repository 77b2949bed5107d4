"""IETI-DP solver for SIPG-coupled multi-patch isogeometric Poisson problems."""

from .assembly import (choose_penalty, discretize, assemble_local,
                       assemble_parameter_matrices, build_edge_projection)
from .driver import ExperimentConfig, emit_report, run_experiment, scaling_study
from .geometry import (MultiPatch, parse_layout, quarter_annulus_multipatch,
                       unit_square_multipatch)
from .ieti import VARIANTS, solve_ieti
from .krylov import SolveReport, SolverError, minres, pcg

__version__ = "0.1.0"

__all__ = ["choose_penalty", "discretize", "assemble_local", "assemble_parameter_matrices",
           "build_edge_projection", "ExperimentConfig", "emit_report", "run_experiment",
           "scaling_study", "MultiPatch", "parse_layout", "quarter_annulus_multipatch",
           "unit_square_multipatch", "VARIANTS", "solve_ieti", "SolveReport",
           "SolverError", "minres", "pcg"]
