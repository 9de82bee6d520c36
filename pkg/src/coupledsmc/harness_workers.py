"""Replicate jobs dispatched by the experiment drivers.

Top-level functions so they can cross process boundaries; each job is pure
and fully determined by (config, data, replicate index), which is what makes
harness output independent of the worker count.
"""

from __future__ import annotations

import numpy as np

from .filters import bootstrap_pf, conditional_rerun
from .inference import coupled_loglik_pair
from .rngs import SeedKey
from .smoothing import TruncationPolicy, unbiased_estimate


def _profile_replicate(job):
    """Chained conditional re-runs across the parameter grid, plus fresh runs."""
    config, obs, r = job
    obs = np.asarray(obs, dtype=float)
    model = config.build_model()
    scheme = config.build_scheme()
    rep = SeedKey(config.seed, replicate=r + 1)
    rows = []
    trace = None
    for idx, tval in enumerate(config.theta_grid):
        theta = np.full(model.d_theta, float(tval))
        gk = rep.fold(idx)
        if trace is None:
            ll, trace = bootstrap_pf(model, theta, obs, config.N, gk)
        else:
            ll, trace = conditional_rerun(trace, model, theta, obs, scheme, gk,
                                          reuse_resample_stream=True)
        ll_ind, _ = bootstrap_pf(model, theta, obs, config.N, rep.fold(100_000 + idx))
        rows.append((float(tval), ll, ll_ind))
    return rows


def _fd_replicate(job):
    """One coupled filter pair at theta -+ h; returns the two log-likelihoods."""
    config, obs, scheme_name, h, r = job
    obs = np.asarray(obs, dtype=float)
    model = config.build_model()
    scheme = config.build_scheme(scheme_name)
    theta = np.asarray(config.theta, dtype=float)
    minus, plus = theta.copy(), theta.copy()
    minus[0] -= h
    plus[0] += h
    key = SeedKey(config.seed, replicate=r + 1)
    ll_minus, ll_plus, _, _ = coupled_loglik_pair(model, minus, plus, obs, config.N,
                                                  scheme, key)
    return ll_minus, ll_plus


def _rg_replicate(job):
    """One coupled-smoother replicate under the configured truncation policy."""
    config, obs, r = job
    obs = np.asarray(obs, dtype=float)
    model = config.build_model()
    theta = np.asarray(config.theta, dtype=float)
    if config.p > 0:
        policy = TruncationPolicy.geometric(config.p)
    elif config.m > 0:
        policy = TruncationPolicy.fixed_m(config.m)
    else:
        policy = TruncationPolicy.none()
    return unbiased_estimate(model, theta, obs, config.N,
                             SeedKey(config.seed, replicate=r + 1),
                             h=config.h_fn, policy=policy,
                             rao_blackwell=config.rao_blackwell,
                             ancestor_sampling=config.ancestor_sampling,
                             max_iterations=config.max_iterations,
                             scheme=config.scheme)
