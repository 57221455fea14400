"""
Lasso diffusion: the sticky gradient-flow inclusion of the lasso, its
small-noise SDE, the sample-path rate functional, Laplace limits of
exponential moments and the Gibbs invariant measure.
"""
from .exceptions import (ApproximationError, ConvergenceError, DomainError, InputError, LassoLDPError,
                         NumericalError)
from .problem import (LassoResult, Problem, branch_drift, drift, kkt_residual, lasso_objective, lasso_solve,
                      residual_gradient, soft_threshold, sticking_set)
from .paths import ControlPath, ForcingPath, PiecewisePath, Trajectory
from .inclusion import (ForcedModel, exact_piecewise_flow, flow_integrate, forced_flow_integrate, limit_point,
                        occupation_fractions)
from .sde import (EnsembleResult, SdeConfig, SimulationSpec, empirical_occupation, ensemble, replica_seed,
                  simulate, simulate_batch, simulate_controlled, simulate_forced)
from .rate import (L0_closed, L0_oracle, L1, L2, Ltilde, MollifyInfo, RateBreakdown, RescaledPath,
                   discrete_rate, l0_value, mollify, rate_functional, sup_distance, time_rescale)
from .ldp import (CostFunctional, FeedbackControl, LDPReport, controlled_cost, laplace_estimate, ldp_report,
                  variational_infimum)
from .invariant import (DecayReport, GibbsMoments, GibbsSpec, LangevinMoments, adaptive_simpson,
                        integrated_autocorr_time, langevin_moments, log_density_unnorm, poincare_constant, potential,
                        quadrature_moments_1d, variance_decay_check)

__version__ = "0.1.0"
