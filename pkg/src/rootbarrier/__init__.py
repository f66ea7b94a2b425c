"""Root barriers for the Skorokhod embedding problem of one-dimensional diffusions."""

__version__ = "0.1.0"

from .barrier import INF, Barrier, continuity_modulus, paste_barriers, read_barrier_csv, region_at_least, regularize, write_barrier_csv
from .diffusion import DiffusionSpec, EmpiricalLaw, density_sup_bound, simulate_paths, simulate_stopped, transition_density, validate_assumptions
from .measure import Measure, convex_order, dirac, discrete, embedding_interval, gaussian, mixture_measure, potential, tent, uniform
from .solver import EmbeddingProblem, SolveGrid, ValueSurface, extract_barrier, residual_report, solve
from .verify import CorridorSpec, VerificationReport, build_counterexample, ks_distance, theorem_suite
