"""Coupled particle filters and the algorithms built on them.

Subpackages by capability:

* :mod:`coupledsmc.rngs`       -- splittable counter-based random streams.
* :mod:`coupledsmc.models`     -- state-space models as functions of noise blocks.
* :mod:`coupledsmc.resampling` -- coupled resampling schemes.
* :mod:`coupledsmc.filters`    -- bootstrap / conditional filters and couplings.
* :mod:`coupledsmc.smoothing`  -- unbiased smoothing by coupled chains.
* :mod:`coupledsmc.inference`  -- finite-difference scores and correlated PMMH.
* :mod:`coupledsmc.oracle`     -- exact Kalman / enumeration references.
* :mod:`coupledsmc.harness`    -- experiment drivers behind the CLI.
"""

from .filters import (FilterTrace, ProcessNoise, bootstrap_pf, conditional_rerun,
                      coupled_bpf, coupled_cpf, cpf, draw_trajectory)
from .inference import (FDResult, McmcChain, correlated_pmmh, correlation_gain,
                        ess, fd_score)
from .models import get_model, load_observations, save_observations
from .resampling import (CouplingMatrix, StructuredCoupling, get_scheme,
                         hilbert_key, index_coupled_build, marginal_correction,
                         sinkhorn)
from .rngs import SeedKey, crn_shift, unit_normals
from .smoothing import (SmoothingEstimate, TruncationPolicy, aggregate,
                        m_truncated_estimate, unbiased_estimate)

__all__ = [
    "FilterTrace", "ProcessNoise", "bootstrap_pf", "conditional_rerun",
    "coupled_bpf", "coupled_cpf", "cpf", "draw_trajectory",
    "FDResult", "McmcChain", "correlated_pmmh", "correlation_gain", "ess",
    "fd_score", "get_model", "load_observations", "save_observations",
    "CouplingMatrix", "StructuredCoupling", "get_scheme", "hilbert_key",
    "index_coupled_build", "marginal_correction", "sinkhorn",
    "SeedKey", "crn_shift", "unit_normals",
    "SmoothingEstimate", "TruncationPolicy", "aggregate",
    "m_truncated_estimate", "unbiased_estimate",
]

__version__ = "0.1.0"
