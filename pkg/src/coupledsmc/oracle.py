"""Exact references used to validate the Monte Carlo machinery.

Kalman filtering/smoothing for linear-Gaussian models (with a direct
joint-Gaussian evaluation as an independent cross-check), grid posteriors for
one-dimensional parameters, and brute-force enumeration of coupled resampling
on tiny instances.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.stats import multivariate_normal

_LOG2PI = np.log(2.0 * np.pi)


@dataclass
class LinearGaussianSpec:
    """x_0 ~ N(m0, P0), x_t = A x_{t-1} + N(0, Q), y_t = C x_t + N(0, R_cov).

    Observation rows of all-NaN are treated as missing (no update at that
    time), which covers models observed only at selected steps.
    """

    A: np.ndarray
    Q: np.ndarray
    C: np.ndarray
    R_cov: np.ndarray
    m0: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.R_cov = np.atleast_2d(np.asarray(self.R_cov, dtype=float))
        self.m0 = np.atleast_1d(np.asarray(self.m0, dtype=float))
        self.P0 = np.atleast_2d(np.asarray(self.P0, dtype=float))
        for name in ("Q", "R_cov", "P0"):
            mat = getattr(self, name)
            if not np.allclose(mat, mat.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if np.min(np.linalg.eigvalsh(mat)) < -1e-10:
                raise ValueError(f"{name} must be positive semi-definite")

    @property
    def d_x(self) -> int:
        return self.A.shape[0]

    @property
    def d_y(self) -> int:
        return self.C.shape[0]


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def kalman_filter(spec: LinearGaussianSpec, y: np.ndarray):
    """Prediction-update recursion with Joseph-form covariance updates.

    Returns ``(loglik, filtered_means, filtered_covs, pred_means, pred_covs)``
    where index t of the filtered arrays is the posterior at time t (t=0 is
    the prior, there being no observation at time zero).
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    T = y.shape[0]
    d_x, d_y = spec.d_x, spec.d_y
    if y.shape[1] != d_y:
        raise ValueError("observation dimension mismatch")
    A, Q, C, R = spec.A, spec.Q, spec.C, spec.R_cov
    eye = np.eye(d_x)

    means = np.zeros((T + 1, d_x))
    covs = np.zeros((T + 1, d_x, d_x))
    pred_means = np.zeros((T + 1, d_x))
    pred_covs = np.zeros((T + 1, d_x, d_x))
    means[0], covs[0] = spec.m0, spec.P0
    pred_means[0], pred_covs[0] = spec.m0, spec.P0

    loglik = 0.0
    m, P = spec.m0.copy(), spec.P0.copy()
    for t in range(1, T + 1):
        m = A @ m
        P = _symmetrize(A @ P @ A.T + Q)
        pred_means[t], pred_covs[t] = m, P
        if np.all(np.isnan(y[t - 1])):
            means[t], covs[t] = m, P
            continue
        S = _symmetrize(C @ P @ C.T + R)
        if np.min(np.linalg.eigvalsh(S)) <= 0:
            raise ValueError("innovation covariance is not positive definite")
        innov = y[t - 1] - C @ m
        sol = np.linalg.solve(S, innov)
        sign, logdet = np.linalg.slogdet(S)
        loglik += -0.5 * (d_y * _LOG2PI + logdet + innov @ sol)
        K = P @ C.T @ np.linalg.inv(S)
        m = m + K @ innov
        IKC = eye - K @ C
        P = _symmetrize(IKC @ P @ IKC.T + K @ R @ K.T)
        means[t], covs[t] = m, P
    return loglik, means, covs, pred_means, pred_covs


def kalman_loglik(spec: LinearGaussianSpec, y: np.ndarray):
    """Exact log-likelihood plus the filtering means and covariances."""
    loglik, means, covs, _, _ = kalman_filter(spec, y)
    return loglik, means, covs


def kalman_smoother(spec: LinearGaussianSpec, y: np.ndarray):
    """Rauch-Tung-Striebel backward pass; returns smoothing means and covariances."""
    _, means, covs, pred_means, pred_covs = kalman_filter(spec, y)
    T = len(means) - 1
    sm = means.copy()
    sc = covs.copy()
    for t in range(T - 1, -1, -1):
        G = covs[t] @ spec.A.T @ np.linalg.inv(pred_covs[t + 1])
        sm[t] = means[t] + G @ (sm[t + 1] - pred_means[t + 1])
        sc[t] = _symmetrize(covs[t] + G @ (sc[t + 1] - pred_covs[t + 1]) @ G.T)
    return sm, sc


def _joint_state_moments(spec: LinearGaussianSpec, T: int):
    """Mean and covariance of the stacked state vector (x_0, ..., x_T)."""
    d = spec.d_x
    marg = [spec.P0]
    mean = [spec.m0]
    for _ in range(T):
        mean.append(spec.A @ mean[-1])
        marg.append(_symmetrize(spec.A @ marg[-1] @ spec.A.T + spec.Q))
    cov = np.zeros(((T + 1) * d, (T + 1) * d))
    for s in range(T + 1):
        block = marg[s]
        cov[s * d:(s + 1) * d, s * d:(s + 1) * d] = block
        prop = block
        for t in range(s + 1, T + 1):
            prop = prop @ spec.A.T
            cov[s * d:(s + 1) * d, t * d:(t + 1) * d] = prop
            cov[t * d:(t + 1) * d, s * d:(s + 1) * d] = prop.T
    return np.concatenate(mean), cov


def _observed_rows(y: np.ndarray):
    return [t for t in range(y.shape[0]) if not np.all(np.isnan(y[t]))]


def joint_gaussian_loglik(spec: LinearGaussianSpec, y: np.ndarray) -> float:
    """Log-likelihood via one multivariate-normal evaluation on (y_1, ..., y_T).

    Independent of the Kalman recursion; intended for small T only.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    T = y.shape[0]
    d_x, d_y = spec.d_x, spec.d_y
    mean_x, cov_x = _joint_state_moments(spec, T)
    obs = _observed_rows(y)
    Cfull = np.zeros((len(obs) * d_y, (T + 1) * d_x))
    Rfull = np.zeros((len(obs) * d_y, len(obs) * d_y))
    for row, t in enumerate(obs):
        Cfull[row * d_y:(row + 1) * d_y, (t + 1) * d_x:(t + 2) * d_x] = spec.C
        Rfull[row * d_y:(row + 1) * d_y, row * d_y:(row + 1) * d_y] = spec.R_cov
    mean_y = Cfull @ mean_x
    cov_y = _symmetrize(Cfull @ cov_x @ Cfull.T + Rfull)
    yv = np.concatenate([y[t] for t in obs])
    return float(multivariate_normal(mean=mean_y, cov=cov_y).logpdf(yv))


def joint_gaussian_smoother_means(spec: LinearGaussianSpec, y: np.ndarray) -> np.ndarray:
    """Smoothing means by conditioning the joint Gaussian of states on data."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    T = y.shape[0]
    d_x, d_y = spec.d_x, spec.d_y
    mean_x, cov_x = _joint_state_moments(spec, T)
    obs = _observed_rows(y)
    Cfull = np.zeros((len(obs) * d_y, (T + 1) * d_x))
    Rfull = np.zeros((len(obs) * d_y, len(obs) * d_y))
    for row, t in enumerate(obs):
        Cfull[row * d_y:(row + 1) * d_y, (t + 1) * d_x:(t + 2) * d_x] = spec.C
        Rfull[row * d_y:(row + 1) * d_y, row * d_y:(row + 1) * d_y] = spec.R_cov
    mean_y = Cfull @ mean_x
    cov_y = Cfull @ cov_x @ Cfull.T + Rfull
    cross = cov_x @ Cfull.T
    yv = np.concatenate([y[t] for t in obs])
    cond = mean_x + cross @ np.linalg.solve(cov_y, yv - mean_y)
    return cond.reshape(T + 1, d_x)


def grid_posterior(loglik_fn, log_prior, grid: np.ndarray) -> np.ndarray:
    """Normalized posterior masses on a 1-d grid, with trapezoid quadrature weights.

    ``loglik_fn`` and ``log_prior`` are callables of the scalar parameter.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a non-empty 1-d array")
    logpost = np.array([loglik_fn(t) + log_prior(t) for t in grid])
    if np.all(np.isneginf(logpost)):
        raise ValueError("posterior is zero everywhere on the grid")
    if grid.size == 1:
        return np.array([1.0])
    quad = np.zeros_like(grid)
    quad[1:] += 0.5 * np.diff(grid)
    quad[:-1] += 0.5 * np.diff(grid)
    logmass = logpost + np.log(quad)
    logmass -= np.max(logmass[np.isfinite(logmass)])
    mass = np.exp(logmass)
    return mass / mass.sum()


def grid_moments(grid: np.ndarray, masses: np.ndarray) -> tuple[float, float]:
    """Posterior mean and standard deviation from grid masses."""
    grid = np.asarray(grid, dtype=float)
    mean = float(masses @ grid)
    var = float(masses @ (grid - mean) ** 2)
    return mean, np.sqrt(var)


def enumerate_coupling(P: np.ndarray) -> dict:
    """Exact joint law over all ancestor-vector pairs under i.i.d.-per-slot sampling.

    Returns a dict mapping ``(a, a_tilde)`` (two length-N index tuples) to the
    probability of drawing that pair of vectors, where each slot k draws an
    index pair from the matrix ``P`` independently.  Intended for N <= 3.
    """
    P = np.asarray(P, dtype=float)
    N = P.shape[0]
    if N > 3:
        raise ValueError("enumeration is intended for N <= 3")
    law = {}
    vectors = list(itertools.product(range(N), repeat=N))
    for a in vectors:
        for at in vectors:
            prob = 1.0
            for k in range(N):
                prob *= P[a[k], at[k]]
            law[(a, at)] = prob
    return law


def coupling_vector_marginals(law: dict, N: int):
    """Marginal laws of each ancestor vector, from an enumerated joint law."""
    marg_a: dict = {}
    marg_at: dict = {}
    for (a, at), p in law.items():
        marg_a[a] = marg_a.get(a, 0.0) + p
        marg_at[at] = marg_at.get(at, 0.0) + p
    return marg_a, marg_at


def detailed_balance_violation(P_fwd: np.ndarray, P_swapped: np.ndarray) -> float:
    """Max violation of r(a) c(a_tilde | a) = r(a_tilde) c(a | a_tilde), enumerated.

    For matrix couplings the product r(a) c(a_tilde | a) equals the product of
    matrix entries along the two ancestor vectors, so the condition holds
    exactly when the coupling built from the swapped systems is the transpose.
    ``P_fwd`` is the coupling of (system, system~); ``P_swapped`` the coupling
    of (system~, system).  Intended for N <= 3.
    """
    law_fwd = enumerate_coupling(P_fwd)
    law_swp = enumerate_coupling(P_swapped)
    return max(abs(law_fwd[(a, at)] - law_swp[(at, a)]) for (a, at) in law_fwd)


def sorted_joint_law(x, x_tilde, w, w_tilde, order: int = 16) -> dict:
    """Exact joint ancestor-vector law of sorted resampling with a shared uniform.

    The ancestor vectors are piecewise-constant functions of the single
    stratified uniform u0, so the joint law is enumerated from the
    breakpoints where any stratified point crosses either sorted CDF.
    Intended for tiny N.
    """
    from .resampling import _hilbert_order, _inverse_cdf, _shared_bbox, check_weights

    w = check_weights(w, "w")
    w_tilde = check_weights(w_tilde, "w_tilde")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x_tilde = np.atleast_2d(np.asarray(x_tilde, dtype=float))
    N = w.size
    bbox = _shared_bbox(x, x_tilde)
    perm = _hilbert_order(x, bbox, order)
    perm_t = _hilbert_order(x_tilde, bbox, order)
    cuts = {0.0, 1.0}
    for cdf in (np.cumsum(w[perm]), np.cumsum(w_tilde[perm_t])):
        for c in cdf[:-1]:
            for k in range(N):
                u0 = N * float(c) - k
                if 0.0 < u0 < 1.0:
                    cuts.add(u0)
    grid = np.array(sorted(cuts))
    law: dict = {}
    for lo, hi in zip(grid[:-1], grid[1:]):
        u0 = 0.5 * (lo + hi)
        u = (np.arange(N) + u0) / N
        a = tuple(int(v) for v in perm[_inverse_cdf(w[perm], u)])
        at = tuple(int(v) for v in perm_t[_inverse_cdf(w_tilde[perm_t], u)])
        law[(a, at)] = law.get((a, at), 0.0) + (hi - lo)
    return law


def as_linear_gaussian(model, theta, y):
    """Map a linear-Gaussian state-space model to its exact-filtering form.

    Returns ``(spec, y_oracle)`` where missing observation times are NaN rows,
    or None when the model has no linear-Gaussian representation.
    """
    from .models import HiddenAR, UnlikelyObs

    y = np.atleast_2d(np.asarray(y, dtype=float))
    if isinstance(model, HiddenAR):
        d = model.d_x
        spec = LinearGaussianSpec(A=model.transition_matrix(theta), Q=np.eye(d),
                                  C=np.eye(d), R_cov=np.eye(d),
                                  m0=np.zeros(d), P0=np.eye(d))
        return spec, y
    if isinstance(model, UnlikelyObs):
        spec = LinearGaussianSpec(A=[[model.eta]], Q=[[model.tau**2]], C=[[1.0]],
                                  R_cov=[[model.sigma**2]], m0=[0.0],
                                  P0=[[model.tau0**2]])
        y_oracle = y.astype(float).copy()
        y_oracle[: model.horizon - 1] = np.nan
        return spec, y_oracle
    return None


def max_trace_coupling(w: np.ndarray, w_tilde: np.ndarray) -> float:
    """Maximum trace over all couplings of ``w`` and ``w_tilde`` via linear programming."""
    w = np.asarray(w, dtype=float)
    w_tilde = np.asarray(w_tilde, dtype=float)
    N = w.size
    c = np.zeros(N * N)
    c[:: N + 1] = -1.0  # maximize the trace
    A_eq = np.zeros((2 * N, N * N))
    for i in range(N):
        A_eq[i, i * N:(i + 1) * N] = 1.0  # row sums
        A_eq[N + i, i::N] = 1.0  # column sums
    b_eq = np.concatenate([w, w_tilde])
    res = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"linear program failed: {res.message}")
    return -res.fun
