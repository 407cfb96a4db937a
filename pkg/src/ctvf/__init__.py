"""Model-based continuous-time value function approximation in RKHSs."""

from .ct_learners import ctgp_fit, ctkf_init, ctkf_update, hjb_residual
from .dt_learners import DtDerivedKernel, GptdPath, dtkf_init, dtkf_update, gptd_fit, gptd_via_hr
from .kernels import DerivedKernel, Dictionary, GaussianKernel, QuadraticKernel
from .lqr import LqrSystem, lqr_framework_check, lqr_value_analytic
from .model import ClosedLoop, CostModel, Policy, SdeModel, mountain_car_env, pendulum_env, rollout
from .numeric import RngStream, factor_spd, solve_lyapunov, solve_spd
from .policy_opt import BarrierSpec, CertifiedPolicy, QpProblem, feasible_width, greedy_update, solve_qp

__version__ = "0.1.0"
