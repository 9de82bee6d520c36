"""Bootstrap, coupled bootstrap, conditional and coupled conditional particle filters.

All filters resample at every step with multinomial margins (the coupled
schemes' margins), carry weights in log space, and consume noise through
:class:`ProcessNoise` bundles so that two runs can share or shift their
process-generating variables.  A completed run is captured in a
:class:`FilterTrace`, which stores everything needed to re-run a second
filter conditionally on the first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import StateSpaceModel
from .resampling import CouplingScheme, multinomial_sample, _inverse_cdf
from .rngs import SeedKey, crn_shift, uniforms, unit_normals

_LOG2PI = np.log(2.0 * np.pi)


class FilterError(ValueError):
    pass


def _logsumexp(a: np.ndarray) -> float:
    m = a.max()
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.exp(a - m).sum()))


@dataclass
class ProcessNoise:
    """Standard-normal blocks feeding initialization and propagation.

    ``u_init`` has shape (N, init_noise_dim) and ``u_prop`` has shape
    (T, N, prop_noise_dim).  Blocks are keyed per time step, so any one of
    them can be regenerated without the others.
    """

    u_init: np.ndarray
    u_prop: np.ndarray

    @classmethod
    def draw(cls, model: StateSpaceModel, T: int, N: int, key: SeedKey,
             role: str = "propagate") -> "ProcessNoise":
        d0, dp = model.init_noise_dim, model.prop_noise_dim
        init_role = "init" if role == "propagate" else role
        u_init = unit_normals(key.at(time=0, role=init_role), N * d0).reshape(N, d0)
        u_prop = np.empty((T, N, dp))
        for t in range(1, T + 1):
            u_prop[t - 1] = unit_normals(key.at(time=t, role=role), N * dp).reshape(N, dp)
        return cls(u_init, u_prop)

    def shifted(self, rho: float, key: SeedKey) -> "ProcessNoise":
        """Autoregressive refresh of every block, with fresh normals from the
        mcmc-role streams of ``key`` (so filter streams are never reused)."""
        N, d0 = self.u_init.shape
        T, _, dp = self.u_prop.shape
        xi_init = unit_normals(key.at(time=0, role="mcmc"), N * d0).reshape(N, d0)
        u_init = crn_shift(self.u_init, rho, xi_init)
        u_prop = np.empty_like(self.u_prop)
        for t in range(1, T + 1):
            xi = unit_normals(key.at(time=t, role="mcmc"), N * dp).reshape(N, dp)
            u_prop[t - 1] = crn_shift(self.u_prop[t - 1], rho, xi)
        return ProcessNoise(u_init, u_prop)


@dataclass
class FilterTrace:
    """Complete record of one particle filter run.

    ``ancestors[t]`` are the indices used to move from time t to t+1.
    ``log_weights`` are normalized in log space at every time.  The base
    ``key`` locates the run's resampling streams, so a conditional re-run can
    regenerate any of its uniforms.
    """

    states: np.ndarray            # (T+1, N, d_x)
    log_weights: np.ndarray       # (T+1, N)
    ancestors: np.ndarray         # (T, N)
    loglik_increments: np.ndarray  # (T,)
    noise: ProcessNoise
    key: SeedKey
    theta: np.ndarray
    degenerate: bool = False

    @property
    def loglik(self) -> float:
        return float(self.loglik_increments.sum())

    @property
    def n_particles(self) -> int:
        return self.states.shape[1]

    @property
    def horizon(self) -> int:
        return self.ancestors.shape[0]

    def weights(self, t: int) -> np.ndarray:
        return np.exp(self.log_weights[t])


def _normalize_log_weights(lg: np.ndarray):
    """Returns (normalized log-weights, log-mean increment, degenerate flag)."""
    norm = _logsumexp(lg)
    if not np.isfinite(norm):
        n = lg.shape[0]
        return np.full(n, -np.log(n)), -np.inf, True
    return lg - norm, norm - np.log(lg.shape[0]), False


def bootstrap_pf(model: StateSpaceModel, theta, y, N: int, key: SeedKey,
                 noise: ProcessNoise | None = None):
    """Bootstrap particle filter; returns ``(loglik, trace)``.

    The log-likelihood estimate accumulates log(mean g(y_t | x_t^k)) in log
    space.  If every particle has zero measurement density at some step the
    estimate is -inf and the trace is flagged degenerate.
    """
    theta = model.validate_theta(theta)
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    T = y.shape[0]
    if N < 1:
        raise FilterError("N must be at least 1")
    if noise is None:
        noise = ProcessNoise.draw(model, T, N, key)

    states = np.zeros((T + 1, N, model.d_x))
    log_weights = np.zeros((T + 1, N))
    ancestors = np.zeros((T, N), dtype=np.int64)
    increments = np.full(T, -np.inf)

    states[0] = np.atleast_2d(model.init_state(noise.u_init, theta))
    logw = np.full(N, -np.log(N))
    log_weights[0] = logw
    degenerate = False
    for t in range(1, T + 1):
        a = multinomial_sample(np.exp(logw), N, key.at(time=t - 1, role="resample"))
        ancestors[t - 1] = a
        x = np.atleast_2d(model.propagate(states[t - 1][a], noise.u_prop[t - 1], theta, t))
        states[t] = x
        lg = np.atleast_1d(model.log_measurement(y[t - 1], x, theta, t))
        logw, inc, bad = _normalize_log_weights(lg)
        log_weights[t] = logw
        increments[t - 1] = inc
        if bad:
            degenerate = True
            break
    trace = FilterTrace(states, log_weights, ancestors, increments, noise, key,
                        theta, degenerate)
    return trace.loglik, trace


def lineage(trace: FilterTrace, b: int) -> np.ndarray:
    """Trajectory of final-time particle ``b`` through the ancestor lists."""
    T = trace.horizon
    idx = b
    path = np.empty((T + 1, trace.states.shape[2]))
    path[T] = trace.states[T, idx]
    for t in range(T - 1, -1, -1):
        idx = trace.ancestors[t][idx]
        path[t] = trace.states[t, idx]
    return path


def all_paths(trace: FilterTrace) -> np.ndarray:
    """Surviving trajectories of all final-time particles, shape (N, T+1, d_x)."""
    T, N = trace.horizon, trace.n_particles
    out = np.empty((T + 1, N, trace.states.shape[2]))
    idx = np.arange(N)
    out[T] = trace.states[T]
    for t in range(T - 1, -1, -1):
        idx = trace.ancestors[t][idx]
        out[t] = trace.states[t][idx]
    return np.swapaxes(out, 0, 1)


def draw_trajectory(trace: FilterTrace, key: SeedKey) -> np.ndarray:
    """Draw one trajectory with final-time probabilities w_T."""
    b = int(_inverse_cdf(trace.weights(trace.horizon), uniforms(key, 1))[0])
    return lineage(trace, b)


def replay_loglik_increments(trace: FilterTrace, model: StateSpaceModel, y) -> np.ndarray:
    """Recompute the per-step log-likelihood increments from the stored states."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    T = trace.horizon
    out = np.full(T, -np.inf)
    for t in range(1, T + 1):
        lg = np.atleast_1d(model.log_measurement(y[t - 1], trace.states[t], trace.theta, t))
        inc = _logsumexp(lg) - np.log(trace.n_particles)
        out[t - 1] = inc
        if not np.isfinite(inc):
            break
    return out


def coupled_bpf(model: StateSpaceModel, theta, theta_tilde, y, N: int,
                scheme: CouplingScheme, key: SeedKey,
                noise: ProcessNoise | None = None,
                noise_tilde: ProcessNoise | None = None):
    """Two bootstrap filters sharing noise blocks and jointly resampled.

    Returns ``(loglik, loglik_tilde, trace, trace_tilde)``.  Each margin is a
    valid bootstrap filter; the coupling only correlates the two runs.  By
    default the second system reuses the first's process-generating variables
    (common random numbers).
    """
    theta = model.validate_theta(theta)
    theta_tilde = model.validate_theta(theta_tilde)
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    T = y.shape[0]
    if noise is None:
        noise = ProcessNoise.draw(model, T, N, key)
    if noise_tilde is None:
        noise_tilde = noise

    shape = (T + 1, N, model.d_x)
    states, states_t = np.zeros(shape), np.zeros(shape)
    logw_all, logw_all_t = np.zeros((T + 1, N)), np.zeros((T + 1, N))
    anc, anc_t = np.zeros((T, N), dtype=np.int64), np.zeros((T, N), dtype=np.int64)
    inc, inc_t = np.full(T, -np.inf), np.full(T, -np.inf)

    states[0] = np.atleast_2d(model.init_state(noise.u_init, theta))
    states_t[0] = np.atleast_2d(model.init_state(noise_tilde.u_init, theta_tilde))
    logw = np.full(N, -np.log(N))
    logw_t = logw.copy()
    logw_all[0] = logw
    logw_all_t[0] = logw_t
    degenerate = degenerate_t = False
    for t in range(1, T + 1):
        if degenerate or degenerate_t:
            break
        pairs = scheme.joint(np.exp(logw), states[t - 1], np.exp(logw_t), states_t[t - 1],
                             key.at(time=t - 1, role="resample"), size=N)
        anc[t - 1], anc_t[t - 1] = pairs.a, pairs.a_tilde
        states[t] = np.atleast_2d(
            model.propagate(states[t - 1][pairs.a], noise.u_prop[t - 1], theta, t))
        states_t[t] = np.atleast_2d(
            model.propagate(states_t[t - 1][pairs.a_tilde], noise_tilde.u_prop[t - 1],
                            theta_tilde, t))
        lg = np.atleast_1d(model.log_measurement(y[t - 1], states[t], theta, t))
        lg_t = np.atleast_1d(model.log_measurement(y[t - 1], states_t[t], theta_tilde, t))
        logw, inc[t - 1], degenerate = _normalize_log_weights(lg)
        logw_t, inc_t[t - 1], degenerate_t = _normalize_log_weights(lg_t)
        logw_all[t], logw_all_t[t] = logw, logw_t
    trace = FilterTrace(states, logw_all, anc, inc, noise, key, theta, degenerate)
    trace_t = FilterTrace(states_t, logw_all_t, anc_t, inc_t, noise_tilde, key,
                          theta_tilde, degenerate_t)
    return trace.loglik, trace_t.loglik, trace, trace_t


def conditional_rerun(trace: FilterTrace, model: StateSpaceModel, theta_tilde, y,
                      scheme: CouplingScheme, key: SeedKey,
                      noise: ProcessNoise | None = None,
                      reuse_resample_stream: bool = False):
    """Run a second filter conditionally on a stored one.

    At every step the coupling is built from the stored system and the new
    one, and the new ancestors are drawn conditionally on the stored ones.
    ``noise`` defaults to the stored run's blocks (common random numbers);
    pass a shifted bundle for correlated MCMC moves.  With
    ``reuse_resample_stream`` the sorted scheme regenerates the stored run's
    resampling uniform instead of drawing a fresh one (profile chaining).

    Returns ``(loglik_tilde, trace_tilde)``; the margin of the new filter is
    a valid bootstrap particle filter.
    """
    theta_tilde = model.validate_theta(theta_tilde)
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    T, N = trace.horizon, trace.n_particles
    if y.shape[0] != T:
        raise FilterError("observation horizon does not match the trace")
    if noise is None:
        noise = trace.noise
    if noise.u_prop.shape != trace.noise.u_prop.shape:
        raise FilterError("noise blocks are shaped unlike the stored run")

    states_t = np.zeros((T + 1, N, model.d_x))
    logw_all_t = np.zeros((T + 1, N))
    anc_t = np.zeros((T, N), dtype=np.int64)
    inc_t = np.full(T, -np.inf)

    states_t[0] = np.atleast_2d(model.init_state(noise.u_init, theta_tilde))
    logw_t = np.full(N, -np.log(N))
    logw_all_t[0] = logw_t
    degenerate_t = False
    for t in range(1, T + 1):
        src = trace.key.at(time=t - 1, role="resample") if reuse_resample_stream else None
        at = scheme.conditional(trace.weights(t - 1), trace.states[t - 1],
                                np.exp(logw_t), states_t[t - 1],
                                trace.ancestors[t - 1],
                                key.at(time=t - 1, role="resample"),
                                src_resample_key=src)
        anc_t[t - 1] = at
        states_t[t] = np.atleast_2d(
            model.propagate(states_t[t - 1][at], noise.u_prop[t - 1], theta_tilde, t))
        lg_t = np.atleast_1d(model.log_measurement(y[t - 1], states_t[t], theta_tilde, t))
        logw_t, inc_t[t - 1], degenerate_t = _normalize_log_weights(lg_t)
        logw_all_t[t] = logw_t
        if degenerate_t:
            break
    # When reusing the stored run's resampling streams, the new trace keeps
    # pointing at them, so a chain of re-runs shares one uniform stream.
    trace_key = trace.key if reuse_resample_stream else key
    trace_t = FilterTrace(states_t, logw_all_t, anc_t, inc_t, noise, trace_key,
                          theta_tilde, degenerate_t)
    return trace_t.loglik, trace_t


def _ancestor_sampling_draw(logw, states, ref_next, model, theta, t, u):
    law = logw + np.atleast_1d(model.log_transition(states, ref_next, theta, t))
    norm = _logsumexp(law)
    if not np.isfinite(norm):
        return states.shape[0] - 1
    return int(_inverse_cdf(np.exp(law - norm), u)[0])


def cpf(model: StateSpaceModel, theta, y, N: int, ref: np.ndarray, key: SeedKey,
        ancestor_sampling: bool = False, noise: ProcessNoise | None = None,
        return_trace: bool = False):
    """Conditional particle filter: one sweep given a reference trajectory.

    The last particle slot is pinned to ``ref`` at every time, so the
    reference is always among the produced trajectories; the returned
    trajectory is drawn with the final weights and followed back through the
    ancestor lists.  With ``ancestor_sampling`` the pinned slot's ancestor is
    redrawn proportionally to w_{t-1}^k f(ref_t | x_{t-1}^k) instead of being
    fixed, which requires a tractable transition density.
    """
    theta = model.validate_theta(theta)
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    T = y.shape[0]
    ref = np.asarray(ref, dtype=np.float64).reshape(T + 1, model.d_x)
    if N < 1:
        raise FilterError("N must be at least 1")
    if ancestor_sampling and not model.has_transition_density:
        raise FilterError("ancestor sampling requires a transition density")
    if noise is None:
        noise = ProcessNoise.draw(model, T, N, key)

    states = np.zeros((T + 1, N, model.d_x))
    log_weights = np.zeros((T + 1, N))
    ancestors = np.zeros((T, N), dtype=np.int64)
    increments = np.full(T, -np.inf)

    states[0] = np.atleast_2d(model.init_state(noise.u_init, theta))
    states[0, N - 1] = ref[0]
    logw = np.full(N, -np.log(N))
    log_weights[0] = logw
    degenerate = False
    for t in range(1, T + 1):
        rk = key.at(time=t - 1, role="resample")
        a = np.empty(N, dtype=np.int64)
        if N > 1:
            a[:N - 1] = multinomial_sample(np.exp(logw), N - 1, rk)
        if ancestor_sampling:
            a[N - 1] = _ancestor_sampling_draw(logw, states[t - 1], ref[t], model,
                                               theta, t, uniforms(rk.at(particle=1), 1))
        else:
            a[N - 1] = N - 1
        ancestors[t - 1] = a
        states[t] = np.atleast_2d(model.propagate(states[t - 1][a], noise.u_prop[t - 1],
                                                  theta, t))
        states[t, N - 1] = ref[t]
        lg = np.atleast_1d(model.log_measurement(y[t - 1], states[t], theta, t))
        logw, increments[t - 1], degenerate = _normalize_log_weights(lg)
        log_weights[t] = logw
        if degenerate:
            break
    trace = FilterTrace(states, log_weights, ancestors, increments, noise, key,
                        theta, degenerate)
    if degenerate:
        path = ref.copy()
    else:
        path = draw_trajectory(trace, key.at(time=T, role="resample"))
    return (path, trace) if return_trace else path


def coupled_cpf(model: StateSpaceModel, theta, y, N: int, ref: np.ndarray,
                ref_tilde: np.ndarray, scheme: CouplingScheme, key: SeedKey,
                ancestor_sampling: bool = False, noise: ProcessNoise | None = None,
                return_traces: bool = False):
    """One sweep of two conditional particle filters coupled through ``scheme``.

    Both sides share the process-generating variables and pin their reference
    at the last slot; ancestor pairs for the free slots are drawn jointly, as
    is the final pair of trajectory indices.  Equal references therefore
    return equal trajectories.  Ancestor-sampling draws use one shared
    uniform per step so that identical systems stay identical.
    """
    theta = model.validate_theta(theta)
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    T = y.shape[0]
    ref = np.asarray(ref, dtype=np.float64).reshape(T + 1, model.d_x)
    ref_tilde = np.asarray(ref_tilde, dtype=np.float64).reshape(T + 1, model.d_x)
    if N < 2:
        raise FilterError("coupled conditional filter needs N >= 2")
    if ancestor_sampling and not model.has_transition_density:
        raise FilterError("ancestor sampling requires a transition density")
    if noise is None:
        noise = ProcessNoise.draw(model, T, N, key)

    shape = (T + 1, N, model.d_x)
    states, states_t = np.zeros(shape), np.zeros(shape)
    logw_all, logw_all_t = np.zeros((T + 1, N)), np.zeros((T + 1, N))
    anc, anc_t = np.zeros((T, N), dtype=np.int64), np.zeros((T, N), dtype=np.int64)
    inc, inc_t = np.full(T, -np.inf), np.full(T, -np.inf)

    init = np.atleast_2d(model.init_state(noise.u_init, theta))
    states[0], states_t[0] = init, init.copy()
    states[0, N - 1] = ref[0]
    states_t[0, N - 1] = ref_tilde[0]
    logw = np.full(N, -np.log(N))
    logw_t = logw.copy()
    logw_all[0], logw_all_t[0] = logw, logw_t
    degenerate = degenerate_t = False
    for t in range(1, T + 1):
        rk = key.at(time=t - 1, role="resample")
        pairs = scheme.joint(np.exp(logw), states[t - 1], np.exp(logw_t), states_t[t - 1],
                             rk, size=N - 1)
        a = np.empty(N, dtype=np.int64)
        at = np.empty(N, dtype=np.int64)
        a[:N - 1], at[:N - 1] = pairs.a, pairs.a_tilde
        if ancestor_sampling:
            u_as = uniforms(rk.at(particle=1), 1)
            a[N - 1] = _ancestor_sampling_draw(logw, states[t - 1], ref[t], model,
                                               theta, t, u_as)
            at[N - 1] = _ancestor_sampling_draw(logw_t, states_t[t - 1], ref_tilde[t],
                                                model, theta, t, u_as)
        else:
            a[N - 1] = N - 1
            at[N - 1] = N - 1
        anc[t - 1], anc_t[t - 1] = a, at
        states[t] = np.atleast_2d(model.propagate(states[t - 1][a], noise.u_prop[t - 1],
                                                  theta, t))
        states_t[t] = np.atleast_2d(model.propagate(states_t[t - 1][at],
                                                    noise.u_prop[t - 1], theta, t))
        states[t, N - 1] = ref[t]
        states_t[t, N - 1] = ref_tilde[t]
        lg = np.atleast_1d(model.log_measurement(y[t - 1], states[t], theta, t))
        lg_t = np.atleast_1d(model.log_measurement(y[t - 1], states_t[t], theta, t))
        logw, inc[t - 1], degenerate = _normalize_log_weights(lg)
        logw_t, inc_t[t - 1], degenerate_t = _normalize_log_weights(lg_t)
        logw_all[t], logw_all_t[t] = logw, logw_t
        if degenerate or degenerate_t:
            break
    trace = FilterTrace(states, logw_all, anc, inc, noise, key, theta, degenerate)
    trace_t = FilterTrace(states_t, logw_all_t, anc_t, inc_t, noise, key, theta,
                          degenerate_t)
    if degenerate or degenerate_t:
        path, path_t = ref.copy(), ref_tilde.copy()
    else:
        final = scheme.joint(np.exp(logw), states[T], np.exp(logw_t), states_t[T],
                             key.at(time=T, role="resample"), size=1)
        path = lineage(trace, int(final.a[0]))
        path_t = lineage(trace_t, int(final.a_tilde[0]))
    if return_traces:
        return path, path_t, trace, trace_t
    return path, path_t
