"""Hot kernels, dispatched to numba loops or numpy vectorized code.

The backend is fixed at import time by ``PSTRATA_BACKEND`` (see
:mod:`pstrata._backend`).  Both implementations share one signature per
kernel and are cross-checked in the test suite.
"""
from .._backend import BACKEND

if BACKEND == "numba":
    from . import _numba as impl
else:
    from . import _numpy as impl

loglik_membership = impl.loglik_membership
loglik_disc = impl.loglik_disc
loglik_outcome = impl.loglik_outcome
augment_treated = impl.augment_treated
augment_control = impl.augment_control
nd_effect = impl.nd_effect
ace_d_curve = impl.ace_d_curve
ace_d_mc = impl.ace_d_mc
dce_nd_curve = impl.dce_nd_curve
dce_d_surface = impl.dce_d_surface
upper_gamma_scaled = impl.upper_gamma_scaled

# outcome group bitmask: treated ND, treated D, control ND, control D
GROUP_ND1, GROUP_D1, GROUP_ND0, GROUP_D0 = 1, 2, 4, 8
ALL_GROUPS = 15

__all__ = [
    "BACKEND", "loglik_membership", "loglik_disc", "loglik_outcome",
    "augment_treated", "augment_control", "nd_effect", "ace_d_curve",
    "ace_d_mc", "dce_nd_curve", "dce_d_surface", "upper_gamma_scaled",
    "GROUP_ND1", "GROUP_D1", "GROUP_ND0", "GROUP_D0", "ALL_GROUPS",
]
