"""Coupled resampling: joint ancestor distributions with prescribed marginals.

A coupling of two weight vectors w and w_tilde is an N x N probability matrix
whose row sums equal w and whose column sums equal w_tilde.  Drawing ancestor
pairs from such a matrix resamples both particle systems at once while keeping
each margin a valid resampling step.  This module builds and samples the four
couplings used throughout the package:

* independent        -- the product coupling w w_tilde^T,
* index-coupled      -- the maximal-trace coupling, factored so sampling is O(N),
* sorted             -- Hilbert-sort both clouds, invert both sorted CDFs at
                        common stratified uniforms,
* transport          -- entropy-regularized optimal transport (Sinkhorn) plus
                        an exact marginal correction, optionally symmetrized.

A "naive-systematic" baseline (per-system systematic resampling sharing one
uniform) is provided for meeting-time comparisons only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .rngs import SeedKey, uniforms

WEIGHT_SUM_TOL = 1e-12
MARGINAL_TOL = 1e-9

SCHEME_NAMES = ("independent", "sorted", "index-coupled", "transport", "transport-symmetrized")


class CouplingError(ValueError):
    """Invalid weights, incompatible inputs, or an unusable transport plan."""


def check_weights(w, name: str = "w") -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise CouplingError(f"{name} must be a non-empty vector")
    if np.any(w < 0) or not np.isfinite(w).all():
        raise CouplingError(f"{name} must have non-negative finite entries")
    if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
        raise CouplingError(f"{name} must sum to one (got {w.sum()!r})")
    return w


@dataclass
class CouplingMatrix:
    """Dense joint ancestor distribution with validated marginals."""

    P: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        self.row_marginal = check_weights(self.row_marginal, "row_marginal")
        self.col_marginal = check_weights(self.col_marginal, "col_marginal")
        if np.any(self.P < 0):
            raise CouplingError("coupling matrix entries must be non-negative")
        if np.max(np.abs(self.P.sum(axis=1) - self.row_marginal)) > MARGINAL_TOL:
            raise CouplingError("row sums do not match the row marginal")
        if np.max(np.abs(self.P.sum(axis=0) - self.col_marginal)) > MARGINAL_TOL:
            raise CouplingError("column sums do not match the column marginal")

    @property
    def n(self) -> int:
        return self.P.shape[0]


@dataclass
class StructuredCoupling:
    """Maximal-trace coupling alpha * diag(mu) + (1 - alpha) * r r_tilde^T.

    The factored form supports O(N) sampling; ``densify`` materializes the
    matrix for tests and enumeration.
    """

    alpha: float
    mu: np.ndarray
    r: np.ndarray
    r_tilde: np.ndarray

    @property
    def n(self) -> int:
        return self.mu.size

    def densify(self) -> np.ndarray:
        P = (1.0 - self.alpha) * np.outer(self.r, self.r_tilde)
        P[np.diag_indices(self.n)] += self.alpha * self.mu
        return P

    def row_marginal(self) -> np.ndarray:
        return self.alpha * self.mu + (1.0 - self.alpha) * self.r

    def col_marginal(self) -> np.ndarray:
        return self.alpha * self.mu + (1.0 - self.alpha) * self.r_tilde


@dataclass
class AncestorPairs:
    a: np.ndarray
    a_tilde: np.ndarray


def _inverse_cdf(w: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(w)
    cdf[-1] = max(cdf[-1], 1.0)
    return np.minimum(np.searchsorted(cdf, u, side="right"), w.size - 1)


def multinomial_sample(w: np.ndarray, size: int, key: SeedKey) -> np.ndarray:
    """``size`` i.i.d. indices with probabilities ``w``."""
    return _inverse_cdf(w, uniforms(key, size))


def independent_coupling_sample(w, w_tilde, key: SeedKey, size: int | None = None) -> AncestorPairs:
    """a ~ multinomial(w) and a_tilde ~ multinomial(w_tilde), independent."""
    w = check_weights(w, "w")
    w_tilde = check_weights(w_tilde, "w_tilde")
    size = w.size if size is None else size
    u = uniforms(key, 2 * size)
    return AncestorPairs(_inverse_cdf(w, u[:size]), _inverse_cdf(w_tilde, u[size:]))


def index_coupled_build(w, w_tilde) -> StructuredCoupling:
    """Factored maximal-trace coupling of ``w`` and ``w_tilde``.

    nu = min(w, w_tilde) elementwise, alpha = sum(nu), mu = nu / alpha and the
    residuals are r = (w - nu) / (1 - alpha), r_tilde = (w_tilde - nu) / (1 - alpha).
    Equal weight vectors give alpha = 1 exactly (diagonal coupling).
    """
    w = check_weights(w, "w")
    w_tilde = check_weights(w_tilde, "w_tilde")
    if w.size != w_tilde.size:
        raise CouplingError("weight vectors must have equal length")
    n = w.size
    if np.array_equal(w, w_tilde):
        return StructuredCoupling(1.0, w.copy(), np.zeros(n), np.zeros(n))
    nu = np.minimum(w, w_tilde)
    alpha = float(nu.sum())
    if alpha <= 0.0:
        return StructuredCoupling(0.0, np.zeros(n), w.copy(), w_tilde.copy())
    mu = nu / alpha
    r = np.maximum(w - nu, 0.0) / (1.0 - alpha)
    r_tilde = np.maximum(w_tilde - nu, 0.0) / (1.0 - alpha)
    return StructuredCoupling(alpha, mu, r, r_tilde)


def index_coupled_sample(coupling: StructuredCoupling, size: int, key: SeedKey) -> AncestorPairs:
    """Draw ``size`` pairs from a structured coupling in O(size log N).

    Each slot flips an alpha-coin: heads draws one common index from mu,
    tails draws the two indices independently from the residuals.
    """
    u = uniforms(key, 4 * size)
    coins, u_common, u_r, u_rt = np.split(u, 4)
    common = coins < coupling.alpha
    a = np.empty(size, dtype=np.int64)
    at = np.empty(size, dtype=np.int64)
    if common.any():
        idx = _inverse_cdf(coupling.mu, u_common[common])
        a[common] = idx
        at[common] = idx
    rest = ~common
    if rest.any():
        a[rest] = _inverse_cdf(coupling.r, u_r[rest])
        at[rest] = _inverse_cdf(coupling.r_tilde, u_rt[rest])
    return AncestorPairs(a, at)


def hilbert_key(points, bbox, order: int = 16) -> np.ndarray:
    """Index of each point along the order-``order`` Hilbert curve of the bbox.

    ``points`` is (N, d) or (d,); ``bbox`` is a pair (mins, maxs) of length-d
    arrays.  Points are clamped into the box; a zero-width dimension is
    treated as width 1 centered on its value.  Requires order * d <= 62.
    For d = 1 the key is simply the discretized coordinate (monotone).
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    n, d = pts.shape
    if order < 1 or order * d > 62:
        raise CouplingError("need 1 <= order and order * d <= 62")
    lo = np.asarray(bbox[0], dtype=np.float64).reshape(d).copy()
    hi = np.asarray(bbox[1], dtype=np.float64).reshape(d).copy()
    width = hi - lo
    degenerate = width <= 0
    lo[degenerate] -= 0.5
    width[degenerate] = 1.0
    unit = np.clip((pts - lo) / width, 0.0, 1.0)
    m = (1 << order) - 1
    cells = np.minimum(np.floor(unit * (m + 1)), m).astype(np.uint64)
    if d == 1:
        keys = cells[:, 0]
        return keys[0] if single else keys

    # Skilling transform: rotate/reflect the coordinate bits in place, Gray
    # encode, then interleave the bits into a single index.
    X = np.ascontiguousarray(cells.T)
    M = 1 << (order - 1)
    Q = M
    while Q > 1:
        Pm = Q - 1
        for i in range(d):
            has = (X[i] & Q) != 0
            X[0] = np.where(has, X[0] ^ Pm, X[0])
            t = np.where(has, 0, (X[0] ^ X[i]) & Pm).astype(np.uint64)
            X[0] ^= t
            X[i] ^= t
        Q >>= 1
    for i in range(1, d):
        X[i] ^= X[i - 1]
    t = np.zeros(n, dtype=np.uint64)
    Q = M
    while Q > 1:
        t = np.where((X[d - 1] & Q) != 0, t ^ (Q - 1), t)
        Q >>= 1
    X ^= t
    keys = np.zeros(n, dtype=np.uint64)
    for q in range(order - 1, -1, -1):
        for i in range(d):
            keys = (keys << np.uint64(1)) | ((X[i] >> np.uint64(q)) & np.uint64(1))
    return keys[0] if single else keys


def _hilbert_order(x: np.ndarray, bbox, order: int) -> np.ndarray:
    keys = hilbert_key(x, bbox, order)
    # stable sort by (key, original index) for deterministic tie-breaking
    return np.argsort(keys, kind="stable")


def _shared_bbox(x: np.ndarray, x_tilde: np.ndarray):
    both = np.concatenate([x, x_tilde], axis=0)
    return both.min(axis=0), both.max(axis=0)


def _stratified_uniforms(size: int, u0: float) -> np.ndarray:
    return (np.arange(size) + u0) / size


def sorted_coupling_sample(x, x_tilde, w, w_tilde, key: SeedKey,
                           order: int = 16, size: int | None = None,
                           u0: float | None = None) -> AncestorPairs:
    """Sort both clouds along the Hilbert curve of their joint bounding box,
    then invert both sorted CDFs at the same stratified uniforms.

    Identical clouds and weights therefore return a == a_tilde exactly.
    """
    w = check_weights(w, "w")
    w_tilde = check_weights(w_tilde, "w_tilde")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x_tilde = np.atleast_2d(np.asarray(x_tilde, dtype=np.float64))
    if x.shape[0] != w.size or x_tilde.shape[0] != w_tilde.size:
        raise CouplingError("locations and weights must have matching lengths")
    size = w.size if size is None else size
    if u0 is None:
        u0 = float(uniforms(key, 1)[0])
    u = _stratified_uniforms(size, u0)
    bbox = _shared_bbox(x, x_tilde)
    perm = _hilbert_order(x, bbox, order)
    perm_t = _hilbert_order(x_tilde, bbox, order)
    a = perm[_inverse_cdf(w[perm], u)]
    at = perm_t[_inverse_cdf(w_tilde[perm_t], u)]
    return AncestorPairs(a, at)


def distance_matrix(x, x_tilde) -> np.ndarray:
    """Pairwise Euclidean distances, D[i, j] = ||x_i - x_tilde_j||."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x_tilde = np.atleast_2d(np.asarray(x_tilde, dtype=np.float64))
    if x.shape[1] != x_tilde.shape[1]:
        raise CouplingError("point clouds must share a dimension")
    return cdist(x, x_tilde)


def sinkhorn(D, w, w_tilde, epsilon: float, alpha_target: float = 0.95,
             max_iter: int = 1000):
    """Entropy-regularized transport plan between ``w`` and ``w_tilde``.

    Iterates u <- w / (K v), v <- w_tilde / (K^T u) with K = exp(-D / epsilon)
    (the row minimum of D / epsilon is subtracted before exponentiating; the
    shift is absorbed by u and leaves the plan unchanged).  After each sweep
    the achievable marginal-correction coefficient

        alpha = min_i min(w_i / u_i, w_tilde_i / u_tilde_i)

    is computed from the current plan's marginals; iteration stops once
    alpha >= alpha_target or after ``max_iter`` sweeps.  Returns
    ``(P_hat, alpha_achieved)``; the caller decides what to do when the target
    was not reached.
    """
    w = check_weights(w, "w")
    w_tilde = check_weights(w_tilde, "w_tilde")
    D = np.asarray(D, dtype=np.float64)
    if epsilon <= 0:
        raise CouplingError("epsilon must be positive")
    if not alpha_target < 1:
        raise CouplingError("alpha_target must be below one")
    scaled = D / epsilon
    scaled = scaled - scaled.min(axis=1, keepdims=True)
    K = np.exp(-scaled)
    if np.any(K.max(axis=0) == 0.0):
        raise CouplingError("kernel underflow: increase epsilon")
    all_positive = bool(np.all(w > 0.0) and np.all(w_tilde > 0.0))
    Kt = np.ascontiguousarray(K.T)
    v = np.ones_like(w_tilde)
    Kv = K @ v
    alpha = 0.0
    for _ in range(max_iter):
        if all_positive:
            # column marginal is exact after the v-update, so only rows enter alpha
            u = w / Kv
            v = w_tilde / (Kt @ u)
            Kv = K @ v
            alpha = min(1.0, float((w / (u * Kv)).min()))
        else:
            if np.any((Kv == 0.0) & (w > 0.0)):
                raise CouplingError("kernel underflow: increase epsilon")
            u = np.where(w > 0.0, w / np.where(Kv > 0.0, Kv, 1.0), 0.0)
            Ktu = Kt @ u
            if np.any((Ktu == 0.0) & (w_tilde > 0.0)):
                raise CouplingError("kernel underflow: increase epsilon")
            v = np.where(w_tilde > 0.0, w_tilde / np.where(Ktu > 0.0, Ktu, 1.0), 0.0)
            Kv = K @ v
            alpha = _correction_alpha(w, u * Kv, w_tilde, w_tilde)
        if alpha >= alpha_target:
            break
    P_hat = (K * u[:, None]) * v[None, :]
    return P_hat, float(alpha)


def _correction_alpha(w, u, w_tilde, u_tilde) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.where(u > 0.0, w / u, np.inf)
        r2 = np.where(u_tilde > 0.0, w_tilde / u_tilde, np.inf)
    return float(min(1.0, min(r1.min(), r2.min())))


def marginal_correction(P_hat, w, w_tilde) -> CouplingMatrix:
    """Mix an approximate plan with a product residual to restore exact marginals.

    With u, u_tilde the marginals of ``P_hat`` and alpha the largest value such
    that the residuals r = (w - alpha u) / (1 - alpha) and
    r_tilde = (w_tilde - alpha u_tilde) / (1 - alpha) stay non-negative, the
    matrix alpha * P_hat + (1 - alpha) * r r_tilde^T is a valid coupling.
    A zero-denominator ratio counts as +inf; alpha = 0 falls back to the
    product coupling.
    """
    w = check_weights(w, "w")
    w_tilde = check_weights(w_tilde, "w_tilde")
    P_hat = np.asarray(P_hat, dtype=np.float64)
    u = P_hat.sum(axis=1)
    ut = P_hat.sum(axis=0)
    alpha = _correction_alpha(w, u, w_tilde, ut)
    if alpha >= 1.0:
        # marginals already match (alpha = 1 forces u = w, ut = w_tilde)
        return CouplingMatrix(P_hat, w, w_tilde)
    if alpha <= 0.0:
        return CouplingMatrix(np.outer(w, w_tilde), w, w_tilde)
    r = np.maximum(w - alpha * u, 0.0) / (1.0 - alpha)
    rt = np.maximum(w_tilde - alpha * ut, 0.0) / (1.0 - alpha)
    r = r / r.sum()
    rt = rt / rt.sum()
    P = alpha * P_hat + (1.0 - alpha) * np.outer(r, rt)
    return CouplingMatrix(P, w, w_tilde)


def _transport_epsilon(D: np.ndarray, epsilon_frac: float) -> float:
    med = float(np.median(D))
    if med > 0.0:
        return epsilon_frac * med
    mean = float(np.mean(D))
    return epsilon_frac * mean if mean > 0.0 else 0.0


def transport_coupling(w, x, w_tilde, x_tilde, epsilon_frac: float = 0.05,
                       alpha_target: float = 0.95, max_iter: int = 1000) -> CouplingMatrix:
    """Sinkhorn plan with marginal correction; epsilon = epsilon_frac * median(D)."""
    D = distance_matrix(x, x_tilde)
    eps = _transport_epsilon(D, epsilon_frac)
    if eps <= 0.0:
        # all pairwise distances vanish: any coupling is optimal, use maximal trace
        dense = index_coupled_build(w, w_tilde).densify()
        return CouplingMatrix(dense, check_weights(w), check_weights(w_tilde))
    P_hat, _ = sinkhorn(D, w, w_tilde, eps, alpha_target=alpha_target, max_iter=max_iter)
    return marginal_correction(P_hat, w, w_tilde)


def symmetrized_transport(w, x, w_tilde, x_tilde, epsilon_frac: float = 0.05,
                          alpha_target: float = 0.95, max_iter: int = 1000) -> CouplingMatrix:
    """Average the corrected plan with the transpose of the swapped-order plan.

    The result is symmetric under exchanging the two systems, which is the
    property the conditional resampling step of the correlated MH sampler
    needs; Sinkhorn alone does not guarantee it.
    """
    first = transport_coupling(w, x, w_tilde, x_tilde, epsilon_frac, alpha_target, max_iter)
    second = transport_coupling(w_tilde, x_tilde, w, x, epsilon_frac, alpha_target, max_iter)
    P = 0.5 * (first.P + second.P.T)
    return CouplingMatrix(P, first.row_marginal, first.col_marginal)


def sample_pairs(P, size: int, key: SeedKey) -> AncestorPairs:
    """``size`` i.i.d. index pairs with joint law ``P`` (matrix or CouplingMatrix).

    One uniform drives each pair through the flattened CDF, so a diagonal
    matrix yields equal indices with probability one.
    """
    mat = P.P if isinstance(P, CouplingMatrix) else np.asarray(P, dtype=np.float64)
    n = mat.shape[0]
    if size == 0:
        empty = np.empty(0, dtype=np.int64)
        return AncestorPairs(empty, empty.copy())
    cdf = np.cumsum(mat.ravel())
    total = cdf[-1]
    if total <= 0:
        raise CouplingError("coupling matrix has zero mass")
    u = uniforms(key, size) * total
    flat = np.minimum(np.searchsorted(cdf, u, side="right"), n * n - 1)
    return AncestorPairs(flat // n, flat % n)


def conditional_sample(P, a, key: SeedKey) -> np.ndarray:
    """Sample a_tilde given ``a``: slot k draws from row a_k of ``P``, renormalized.

    O(N) for a StructuredCoupling, O(k N) dense.  Raises if a used row has
    zero mass (the ancestors are inconsistent with the coupling's marginals).
    """
    a = np.asarray(a, dtype=np.int64)
    size = a.size
    if isinstance(P, StructuredCoupling):
        row_mass = P.row_marginal()[a]
        if np.any(row_mass <= 0.0):
            raise CouplingError("conditioning ancestor has zero row mass")
        diag_prob = P.alpha * P.mu[a] / row_mass
        u = uniforms(key, 2 * size)
        coins, u_res = u[:size], u[size:]
        at = np.where(coins < diag_prob, a, _inverse_cdf_safe(P.r_tilde, u_res))
        return at.astype(np.int64)
    mat = P.P if isinstance(P, CouplingMatrix) else np.asarray(P, dtype=np.float64)
    rows = mat[a]
    mass = rows.sum(axis=1)
    if np.any(mass <= 0.0):
        raise CouplingError("conditioning ancestor has zero row mass")
    cdf = np.cumsum(rows, axis=1)
    u = uniforms(key, size) * mass
    at = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(at, mat.shape[0] - 1).astype(np.int64)


def _inverse_cdf_safe(w: np.ndarray, u: np.ndarray) -> np.ndarray:
    if w.sum() <= 0.0:
        # residual is empty (alpha = 1); these draws are never selected
        return np.zeros(u.size, dtype=np.int64)
    return _inverse_cdf(w / w.sum(), u)


# ---------------------------------------------------------------------------
# Scheme layer: a uniform interface over the couplings for the filters.
# ---------------------------------------------------------------------------

def _systems_identical(w, x, w_tilde, x_tilde) -> bool:
    return np.array_equal(w, w_tilde) and np.array_equal(x, x_tilde)


class CouplingScheme:
    """Joint and conditional ancestor sampling for one coupling family.

    ``joint`` draws ``size`` ancestor pairs for a pair of weighted clouds;
    ``conditional`` draws the second system's ancestors given the first's.
    When the two systems are bitwise identical every scheme reduces to the
    diagonal coupling, so coupled runs of identical systems stay identical.
    """

    name: str = ""
    supports_conditional = True

    def joint(self, w, x, w_tilde, x_tilde, key: SeedKey, size: int | None = None) -> AncestorPairs:
        raise NotImplementedError

    def conditional(self, w, x, w_tilde, x_tilde, a, key: SeedKey,
                    src_resample_key: SeedKey | None = None) -> np.ndarray:
        raise NotImplementedError


class IndependentScheme(CouplingScheme):
    name = "independent"

    def joint(self, w, x, w_tilde, x_tilde, key, size=None):
        size = len(w) if size is None else size
        if _systems_identical(w, x, w_tilde, x_tilde):
            a = multinomial_sample(w, size, key)
            return AncestorPairs(a, a.copy())
        return independent_coupling_sample(w, w_tilde, key, size=size)

    def conditional(self, w, x, w_tilde, x_tilde, a, key, src_resample_key=None):
        if _systems_identical(w, x, w_tilde, x_tilde):
            return np.asarray(a, dtype=np.int64).copy()
        return multinomial_sample(check_weights(w_tilde, "w_tilde"), len(a), key)


class IndexCoupledScheme(CouplingScheme):
    name = "index-coupled"

    def joint(self, w, x, w_tilde, x_tilde, key, size=None):
        size = len(w) if size is None else size
        coupling = index_coupled_build(w, w_tilde)
        return index_coupled_sample(coupling, size, key)

    def conditional(self, w, x, w_tilde, x_tilde, a, key, src_resample_key=None):
        coupling = index_coupled_build(w, w_tilde)
        return conditional_sample(coupling, a, key)


class SortedScheme(CouplingScheme):
    """Hilbert-sorted resampling with common stratified uniforms.

    The conditional form draws a fresh shared uniform by default (the second
    system's ancestors then do not depend on the first system's, which is the
    form whose detailed balance is immediate).  Passing ``src_resample_key``
    reuses the source filter's uniform instead, coupling a re-run to the
    stored run; chained likelihood profiles use that mode.
    """

    name = "sorted"

    def __init__(self, order: int = 16):
        self.order = order

    def _order(self, d: int) -> int:
        return max(1, min(self.order, 62 // d))

    def joint(self, w, x, w_tilde, x_tilde, key, size=None):
        d = np.atleast_2d(x).shape[1]
        return sorted_coupling_sample(x, x_tilde, w, w_tilde, key,
                                      order=self._order(d), size=size)

    def conditional(self, w, x, w_tilde, x_tilde, a, key, src_resample_key=None):
        # particle=2 substream: untouched by any filter's own resampling draws
        ukey = key if src_resample_key is None else src_resample_key
        u0 = float(uniforms(ukey.at(particle=2), 1)[0])
        w_tilde = check_weights(w_tilde, "w_tilde")
        xs = np.atleast_2d(np.asarray(x, dtype=np.float64))
        xt = np.atleast_2d(np.asarray(x_tilde, dtype=np.float64))
        perm_t = _hilbert_order(xt, _shared_bbox(xs, xt), self._order(xt.shape[1]))
        u = _stratified_uniforms(len(a), u0)
        return perm_t[_inverse_cdf(w_tilde[perm_t], u)]


class TransportScheme(CouplingScheme):
    name = "transport"

    def __init__(self, epsilon_frac: float = 0.05, alpha_target: float = 0.95,
                 max_iter: int = 1000, symmetrized: bool = False):
        self.epsilon_frac = epsilon_frac
        self.alpha_target = alpha_target
        self.max_iter = max_iter
        self.symmetrized = symmetrized
        if symmetrized:
            self.name = "transport-symmetrized"

    def matrix(self, w, x, w_tilde, x_tilde) -> CouplingMatrix:
        if _systems_identical(w, x, w_tilde, x_tilde):
            w = check_weights(w, "w")
            return CouplingMatrix(np.diag(w), w, w.copy())
        build = symmetrized_transport if self.symmetrized else transport_coupling
        return build(w, x, w_tilde, x_tilde, self.epsilon_frac, self.alpha_target, self.max_iter)

    def joint(self, w, x, w_tilde, x_tilde, key, size=None):
        size = len(w) if size is None else size
        return sample_pairs(self.matrix(w, x, w_tilde, x_tilde), size, key)

    def conditional(self, w, x, w_tilde, x_tilde, a, key, src_resample_key=None):
        return conditional_sample(self.matrix(w, x, w_tilde, x_tilde), a, key)


class NaiveSystematicScheme(CouplingScheme):
    """Systematic resampling on each system with one shared uniform; no sorting.

    Baseline for meeting-time comparisons only; it has no conditional form.
    """

    name = "naive-systematic"
    supports_conditional = False

    def joint(self, w, x, w_tilde, x_tilde, key, size=None):
        w = check_weights(w, "w")
        w_tilde = check_weights(w_tilde, "w_tilde")
        size = w.size if size is None else size
        u = _stratified_uniforms(size, float(uniforms(key, 1)[0]))
        return AncestorPairs(_inverse_cdf(w, u), _inverse_cdf(w_tilde, u))

    def conditional(self, w, x, w_tilde, x_tilde, a, key, src_resample_key=None):
        raise CouplingError("naive-systematic has no conditional form")


def get_scheme(name: str, *, epsilon_frac: float = 0.05, alpha_target: float = 0.95,
               max_iter: int = 1000, hilbert_order: int = 16) -> CouplingScheme:
    """Scheme registry; ``name`` is one of SCHEME_NAMES or "naive-systematic"."""
    if name == "independent":
        return IndependentScheme()
    if name == "index-coupled":
        return IndexCoupledScheme()
    if name == "sorted":
        return SortedScheme(order=hilbert_order)
    if name == "transport":
        return TransportScheme(epsilon_frac, alpha_target, max_iter, symmetrized=False)
    if name == "transport-symmetrized":
        return TransportScheme(epsilon_frac, alpha_target, max_iter, symmetrized=True)
    if name == "naive-systematic":
        return NaiveSystematicScheme()
    raise CouplingError(f"unknown scheme {name!r}")
