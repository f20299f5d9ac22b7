"""Evidence synthesis with balancing weights.

Estimate treatment effects for a chosen target population by reweighting
individual-level or aggregate study data, with dual certificates for
infeasible targets, design-stage diagnostics, and a simulation lab.
"""

__version__ = "0.1.0"

from .errors import Infeasible, MetabalanceError  # noqa: F401
from .model import (AdDataset, EstimateReport, IdDataset,  # noqa: F401
                    TargetProfile, read_ad_csv, read_id_csv,
                    target_profile_from_means)
from .basis import build_basis_spec, evaluate_basis, identity_spec  # noqa: F401
from .solver import (BalanceProblem, WeightSolution,  # noqa: F401
                     solve_balancing_weights)
from .estimators import (estimate_ad, estimate_id,  # noqa: F401
                         estimate_one_stage_ols, estimate_two_stage)
