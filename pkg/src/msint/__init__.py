"""Multiscale integrators for stiff oscillatory ODEs: DNS, MSHMM, FLAVORS and variable-step VSHMM."""

from .kernel_schedule import (
    KERNELS,
    Kernel,
    SchedulePlan,
    build_schedule,
    get_kernel,
    pointwise_h,
    theta,
    theta_inverse,
    validate_kernel,
)
from .multiscale import (
    METHODS,
    ConfigError,
    CostReport,
    MethodConfig,
    Trajectory,
    cost_model,
    dns_integrate,
    effective_epsilon,
    flavors_cycle,
    flavors_integrate,
    integrate,
    mshmm_integrate,
    mshmm_step,
    validate_params,
    vshmm_integrate,
)
from .steppers import NumericFailure, euler_step, get_stepper, rk2_step, rk4_step
from .systems import (
    BENCHMARKS,
    PartitionedSystem,
    ReferenceSolution,
    SingularStateError,
    SlowMap,
    SplitSystem,
    averaged_reference,
    dns_reference,
    get_benchmark,
)

__version__ = "0.1.0"
