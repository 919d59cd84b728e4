"""Model order reduction for bilinear control systems.

Balanced truncation, singular-perturbation and H2-optimal (B-IRKA)
reduction, with Fokker-Planck and Lindblad benchmark generators.
"""

__version__ = "0.1.0"

from .balancing import compute_balancing, reduce_sp, truncate_bt, verify_stability
from .birka import birka_iterate, wilson_residuals
from .gramians import gramians, h2_error, h2_error_projected, h2_norm
from .system import (BilinearSystem, ReducedModel, discount_shift, project_out_null,
                     scale_controls, shift_to_standard_form, stationary_state)

__all__ = [
    "BilinearSystem", "ReducedModel", "birka_iterate", "compute_balancing", "discount_shift",
    "gramians", "h2_error", "h2_error_projected", "h2_norm", "project_out_null",
    "reduce_sp", "scale_controls", "shift_to_standard_form", "stationary_state", "truncate_bt",
    "verify_stability", "wilson_residuals",
]
