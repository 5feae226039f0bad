"""Continuous-time recurrent equilibrium networks with contraction and
incremental-IQC dissipativity guaranteed by construction."""

from .core import (Activation, Certificate, Dims, ExplicitParams, SupplyRate,
                   gamma_form, storage, supply_eval, supply_rate_for)
from .dynamics import lipschitz_bound, make_output, make_rhs, solve_w, vector_field
from .gradients import (LossReport, ModelSpec, SampledExperiment, adam_init,
                        adam_step, explicit_and_cert, grad_fd, grad_reverse,
                        mse_loss, random_free)
from .integrators import SolverConfig, Trajectory, integrate, order_probe
from .parametrization import (DirectParamsC, DirectParamsIQC, cayley_contract,
                              contractive_from_direct, explicit_from_general,
                              iqc_from_direct)
from .verification import (assemble_contractivity_lmi, assemble_iqc_lmi,
                           certified_rate, empirical_contraction,
                           empirical_dissipation, pd_check)

__version__ = "0.1.0"
