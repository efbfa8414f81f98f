"""Monte Carlo solvers for path-dependent forward-backward SDEs.

The main entry points are :func:`solve_picard` (Picard-type iteration),
:func:`solve_implicit` (implicit backward reference scheme) and
:func:`evaluate_ppde` (value of the associated path-dependent PDE).
"""
from .coefficients import (CoefficientSet, ReferenceSolution, check_lipschitz,
                           check_non_anticipative, problem_zoo, register_problem,
                           registered_problems)
from .condexp import (FeatureMap, RegressionSurface, fit_regression, nested_estimate,
                      weighted_nested_estimate)
from .euler import PathBatch, simulate, simulate_batch, strong_error
from .pathcore import DiscretePath, PathError, StoppedView, TimeGrid, concat, d_infinity
from .picard import (SchemeConfig, SchemeIterate, SolveResult, evaluate_ppde,
                     picard_step, solve_implicit, solve_picard)
from .sampling import SampleKey, sample_increments, suffix_key

__version__ = "0.1.0"
