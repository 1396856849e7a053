"""Rate allocation over fading Gaussian multiple-access channels.

Capacity regions are polymatroids; utilities are maximized over them by
gradient projection with an approximate projection, by conditional
gradient, or per slot along a Markov fading path.
"""
from ._accel import backend
from .bounds import (TrackingParameters, average_case_parameters, estimate_utility_constants,
                     gap_bound_curvature, gap_bound_variation, opt_distance_bound, r_epsilon,
                     worst_case_parameters)
from .channel import FadingProcess, UserChain, geometric_chain, sample_path, step_statistics
from .policies import (approximate_policy_run, greedy_run, greedy_step, improved_policy_run,
                       queue_policy_run)
from .power_control import boundary_point, find_lambda, section4_solve, tse_rate_power_step
from .projection import approximate_project, rate_split_check
from .region import (AveragedRegion, GaussianMacRegion, awgn_capacity, feasibility_report,
                     linear_maximize)
from .solvers import (StepsizeRule, brute_force_optimum, conditional_gradient_solve,
                      gradient_projection_solve, safe_stepsize)
from .utility import UtilityModel

__version__ = "0.1.0"
