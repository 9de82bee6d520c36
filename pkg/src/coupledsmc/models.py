"""State-space models as deterministic functions of standard-normal noise blocks.

Every model factors its randomness out of the dynamics: the initial state is
``init_state(u, theta)`` and one transition is ``propagate(x, u, theta, t)``,
where ``u`` is a block of standard normals of a declared size.  Writing the
models this way is what allows two runs to share noise (common random
numbers) and a stored run to be regenerated block by block.

Four concrete models are provided, selectable by string id:

* ``hidden-ar``     -- d-dimensional hidden auto-regression with Gaussian noise,
* ``unlikely-obs``  -- scalar AR(1) observed only at the final time,
* ``growth``        -- the classic nonlinear growth model with quadratic
                       observation,
* ``plankton``      -- stochastic Lotka-Volterra prey/predator populations
                       integrated daily by fixed-step RK4, prey observed on the
                       log scale (intractable transition density).

All model functions are pure and vectorized over a leading particle axis:
states have shape (N, d_x) or (d_x,), noise blocks (N, dim) or (dim,).
"""

from __future__ import annotations

import numpy as np

from .rngs import SeedKey, unit_normals

_LOG2PI = np.log(2.0 * np.pi)


class ModelError(ValueError):
    """Dimension mismatches and domain violations."""


class ModelBlowUpError(FloatingPointError):
    """A model function produced a non-finite state."""


class UnsupportedModelError(RuntimeError):
    """Operation requires a capability the model does not have."""


def _as_states(x, d_x: int):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != d_x:
        raise ModelError(f"state dimension {x.shape[1]} != {d_x}")
    return x, single


def _as_block(u, dim: int, name: str = "u"):
    u = np.asarray(u, dtype=np.float64)
    single = u.ndim <= 1 and u.size == dim
    u = u.reshape(1, dim) if single else np.atleast_2d(u)
    if u.shape[1] != dim:
        raise ModelError(f"{name} block size {u.shape[1]} != {dim}")
    return u, single


def _maybe_squeeze(out, single: bool):
    return out[0] if single else out


class StateSpaceModel:
    """Contract shared by the concrete models.

    Attributes
    ----------
    d_x, d_y, d_theta : dimensions of state, observation and parameter.
    init_noise_dim, prop_noise_dim, obs_noise_dim : sizes of the noise blocks
        consumed by initialization, one propagation step, and one simulated
        observation.
    has_transition_density : whether ``log_transition`` is available.
    measurement_bound : optional upper bound on the measurement density
        (linear scale), when one exists.
    """

    model_id = ""
    d_x = 1
    d_y = 1
    d_theta = 0
    init_noise_dim = 1
    prop_noise_dim = 1
    has_transition_density = False
    measurement_bound: float | None = None

    @property
    def obs_noise_dim(self) -> int:
        return self.d_y

    @property
    def noise_dims(self) -> tuple[int, int]:
        return (self.init_noise_dim, self.prop_noise_dim)

    def validate_theta(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        if theta.shape != (self.d_theta,):
            raise ModelError(f"theta must have length {self.d_theta}")
        if not np.isfinite(theta).all():
            raise ModelError("theta entries must be finite")
        return theta

    def init_state(self, u, theta):
        raise NotImplementedError

    def propagate(self, x, u, theta, t: int):
        raise NotImplementedError

    def log_measurement(self, y, x, theta, t: int):
        raise NotImplementedError

    def log_transition(self, x, x_next, theta, t: int):
        raise UnsupportedModelError(f"{self.model_id} has no tractable transition density")

    def sample_observation(self, x, u, theta, t: int):
        raise NotImplementedError

    def simulate(self, theta, T: int, key: SeedKey, noise=None):
        """Simulate one latent path and its observations.

        Returns ``(states, obs)`` with shapes (T+1, d_x) and (T, d_y).
        ``noise`` may supply the blocks explicitly as a dict with keys
        ``init`` (init_noise_dim,), ``prop`` (T, prop_noise_dim) and ``obs``
        (T, obs_noise_dim); otherwise they are drawn from ``key``.
        """
        theta = self.validate_theta(theta)
        if T < 1:
            raise ModelError("T must be at least 1")
        if noise is None:
            u_init = unit_normals(key.at(time=0, role="init"), self.init_noise_dim)
            u_prop = np.stack([
                unit_normals(key.at(time=t, role="propagate"), self.prop_noise_dim)
                for t in range(1, T + 1)
            ])
            u_obs = np.stack([
                unit_normals(key.at(time=t, role="measure"), self.obs_noise_dim)
                for t in range(1, T + 1)
            ])
        else:
            u_init = np.asarray(noise["init"], dtype=np.float64)
            u_prop = np.asarray(noise["prop"], dtype=np.float64)
            u_obs = np.asarray(noise["obs"], dtype=np.float64)
        states = np.zeros((T + 1, self.d_x))
        obs = np.zeros((T, self.d_y))
        states[0] = self.init_state(u_init, theta)
        for t in range(1, T + 1):
            states[t] = self.propagate(states[t - 1], u_prop[t - 1], theta, t)
            obs[t - 1] = self.sample_observation(states[t], u_obs[t - 1], theta, t)
        if not np.isfinite(states).all():
            raise ModelBlowUpError("simulated state is not finite")
        return states, obs


def _gaussian_logpdf(resid, var):
    """Log density of independent N(0, var) coordinates, summed over the last axis."""
    d = resid.shape[-1]
    return -0.5 * (resid * resid).sum(axis=-1) / var - 0.5 * d * (_LOG2PI + np.log(var))


class HiddenAR(StateSpaceModel):
    """Hidden auto-regression: x_0 ~ N(0, I), x_t ~ N(A x_{t-1}, I), y_t ~ N(x_t, I).

    The transition matrix has entries A[i, j] = theta ** (|i - j| + 1) with a
    scalar parameter theta, so d_x = 1 reduces to x_t ~ N(theta x_{t-1}, 1).
    """

    model_id = "hidden-ar"
    d_theta = 1
    has_transition_density = True

    def __init__(self, d_x: int = 1):
        if d_x < 1:
            raise ModelError("d_x must be at least 1")
        self.d_x = d_x
        self.d_y = d_x
        self.init_noise_dim = d_x
        self.prop_noise_dim = d_x
        self.measurement_bound = (2.0 * np.pi) ** (-0.5 * d_x)

    def transition_matrix(self, theta) -> np.ndarray:
        theta = self.validate_theta(theta)
        idx = np.arange(self.d_x)
        return theta[0] ** (np.abs(idx[:, None] - idx[None, :]) + 1.0)

    def init_state(self, u, theta):
        u, single = _as_block(u, self.init_noise_dim)
        return _maybe_squeeze(u.copy(), single)

    def propagate(self, x, u, theta, t):
        x, sx = _as_states(x, self.d_x)
        u, su = _as_block(u, self.prop_noise_dim)
        A = self.transition_matrix(theta)
        return _maybe_squeeze(x @ A.T + u, sx and su)

    def log_measurement(self, y, x, theta, t):
        x, single = _as_states(x, self.d_x)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.size != self.d_y:
            raise ModelError("observation dimension mismatch")
        return _maybe_squeeze(_gaussian_logpdf(y[None, :] - x, 1.0), single)

    def log_transition(self, x, x_next, theta, t):
        x, single = _as_states(x, self.d_x)
        x_next = np.asarray(x_next, dtype=np.float64).reshape(-1)
        A = self.transition_matrix(theta)
        return _maybe_squeeze(_gaussian_logpdf(x_next[None, :] - x @ A.T, 1.0), single)

    def sample_observation(self, x, u, theta, t):
        return np.asarray(x, dtype=np.float64) + np.asarray(u, dtype=np.float64)


class UnlikelyObs(StateSpaceModel):
    """Scalar AR(1) observed only at the final time.

    x_0 ~ N(0, tau0^2), x_t = eta x_{t-1} + N(0, tau^2), and a single
    observation y_T ~ N(x_T, sigma^2).  The measurement density at t < T is
    the constant one, so ``log_measurement`` returns zero there.  The four
    scale constants are fixed class attributes; the model has no free
    parameter.
    """

    model_id = "unlikely-obs"
    d_theta = 0
    has_transition_density = True
    tau0 = 0.1
    eta = 0.9
    tau = 0.1
    sigma = 0.1

    def __init__(self, horizon: int = 10):
        if horizon < 1:
            raise ModelError("horizon must be at least 1")
        self.horizon = horizon
        self.measurement_bound = max(1.0, 1.0 / (self.sigma * np.sqrt(2.0 * np.pi)))

    def init_state(self, u, theta):
        u, single = _as_block(u, 1)
        return _maybe_squeeze(self.tau0 * u, single)

    def propagate(self, x, u, theta, t):
        x, sx = _as_states(x, 1)
        u, su = _as_block(u, 1)
        return _maybe_squeeze(self.eta * x + self.tau * u, sx and su)

    def log_measurement(self, y, x, theta, t):
        x, single = _as_states(x, 1)
        if t < self.horizon:
            return _maybe_squeeze(np.zeros(x.shape[0]), single)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        return _maybe_squeeze(_gaussian_logpdf(y[None, :] - x, self.sigma**2), single)

    def log_transition(self, x, x_next, theta, t):
        x, single = _as_states(x, 1)
        x_next = np.asarray(x_next, dtype=np.float64).reshape(-1)
        return _maybe_squeeze(_gaussian_logpdf(x_next[None, :] - self.eta * x, self.tau**2), single)

    def sample_observation(self, x, u, theta, t):
        if t < self.horizon:
            return np.zeros(1)
        return np.asarray(x, dtype=np.float64) + self.sigma * np.asarray(u, dtype=np.float64)


class Growth(StateSpaceModel):
    """Nonlinear growth model with time-dependent drift and quadratic observation.

    x_0 ~ N(0, 2),
    x_t = 0.5 x_{t-1} + 25 x_{t-1} / (1 + x_{t-1}^2) + 8 cos(1.2 (t-1)) + N(0, 1),
    y_t ~ N(x_t^2 / 20, 10).
    """

    model_id = "growth"
    d_theta = 0
    has_transition_density = True

    def __init__(self):
        self.measurement_bound = 1.0 / np.sqrt(2.0 * np.pi * 10.0)

    @staticmethod
    def _drift(x, t):
        return 0.5 * x + 25.0 * x / (1.0 + x * x) + 8.0 * np.cos(1.2 * (t - 1.0))

    def init_state(self, u, theta):
        u, single = _as_block(u, 1)
        return _maybe_squeeze(np.sqrt(2.0) * u, single)

    def propagate(self, x, u, theta, t):
        x, sx = _as_states(x, 1)
        u, su = _as_block(u, 1)
        return _maybe_squeeze(self._drift(x, t) + u, sx and su)

    def log_measurement(self, y, x, theta, t):
        x, single = _as_states(x, 1)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        return _maybe_squeeze(_gaussian_logpdf(y[None, :] - x * x / 20.0, 10.0), single)

    def log_transition(self, x, x_next, theta, t):
        x, single = _as_states(x, 1)
        x_next = np.asarray(x_next, dtype=np.float64).reshape(-1)
        return _maybe_squeeze(_gaussian_logpdf(x_next[None, :] - self._drift(x, t), 1.0), single)

    def sample_observation(self, x, u, theta, t):
        x = np.asarray(x, dtype=np.float64)
        return x * x / 20.0 + np.sqrt(10.0) * np.asarray(u, dtype=np.float64)


def lv_derivatives(p, z, alpha, theta):
    """Right-hand side of the prey/predator system.

    dp/dt = alpha p - c p z, dz/dt = e c p z - m_l z - m_q z^2
    with theta = (mu_alpha, sigma_alpha, c, e, m_l, m_q).
    """
    c, e, m_l, m_q = theta[2], theta[3], theta[4], theta[5]
    dp = alpha * p - c * p * z
    dz = e * c * p * z - m_l * z - m_q * z * z
    return dp, dz


def lv_rk4_step(p, z, alpha, theta, h: float):
    """One classical RK4 step of size ``h`` for the prey/predator system."""
    k1p, k1z = lv_derivatives(p, z, alpha, theta)
    k2p, k2z = lv_derivatives(p + 0.5 * h * k1p, z + 0.5 * h * k1z, alpha, theta)
    k3p, k3z = lv_derivatives(p + 0.5 * h * k2p, z + 0.5 * h * k2z, alpha, theta)
    k4p, k4z = lv_derivatives(p + h * k3p, z + h * k3z, alpha, theta)
    p_new = p + (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    z_new = z + (h / 6.0) * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
    return p_new, z_new


def plankton_step(p, z, alpha, theta, dt: float = 0.01):
    """Integrate the prey/predator system over one day with fixed RK4 substeps.

    ``alpha`` is held constant within the day.  ``dt`` is the substep size;
    the number of substeps is round(1 / dt).  Raises on non-finite output.
    """
    if dt <= 0:
        raise ModelError("dt must be positive")
    steps = max(1, int(round(1.0 / dt)))
    h = 1.0 / steps
    for _ in range(steps):
        p, z = lv_rk4_step(p, z, alpha, theta, h)
    if not (np.isfinite(p).all() and np.isfinite(z).all()):
        raise ModelBlowUpError("prey/predator integration blew up")
    return p, z


class Plankton(StateSpaceModel):
    """Stochastic Lotka-Volterra populations, prey observed on the log scale.

    State (p, z) > 0.  Initialization: log p_0 and log z_0 are N(log 2, 1),
    consuming two noise coordinates.  Each day draws a growth rate
    alpha ~ N(mu_alpha, sigma_alpha^2) (one coordinate) and integrates the
    system with fixed-step RK4 (substep 0.01 day), keeping common random
    numbers valid across coupled runs.  Observation: log y_t ~ N(log p_t,
    0.2^2); ``log_measurement`` is the density of the log-observation.  No
    tractable transition density.
    """

    model_id = "plankton"
    d_x = 2
    d_y = 1
    d_theta = 6
    init_noise_dim = 2
    prop_noise_dim = 1
    has_transition_density = False
    obs_sd = 0.2
    substep = 0.01

    def __init__(self):
        self.measurement_bound = 1.0 / (self.obs_sd * np.sqrt(2.0 * np.pi))

    def validate_theta(self, theta):
        theta = super().validate_theta(theta)
        if theta[1] <= 0:
            raise ModelError("sigma_alpha must be positive")
        if np.any(theta[2:] < 0):
            raise ModelError("rates c, e, m_l, m_q must be non-negative")
        return theta

    def init_state(self, u, theta):
        u, single = _as_block(u, 2)
        out = np.exp(np.log(2.0) + u)
        return _maybe_squeeze(out, single)

    def propagate(self, x, u, theta, t):
        theta = self.validate_theta(theta)
        x, sx = _as_states(x, 2)
        u, su = _as_block(u, 1)
        alpha = theta[0] + theta[1] * u[:, 0]
        p, z = plankton_step(x[:, 0], x[:, 1], alpha, theta, self.substep)
        return _maybe_squeeze(np.column_stack([p, z]), sx and su)

    def log_measurement(self, y, x, theta, t):
        x, single = _as_states(x, 2)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if np.any(y <= 0):
            raise ModelError("plankton observations must be positive")
        resid = np.log(y[None, :]) - np.log(x[:, :1])
        return _maybe_squeeze(_gaussian_logpdf(resid, self.obs_sd**2), single)

    def sample_observation(self, x, u, theta, t):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.exp(np.log(x[0, 0]) + self.obs_sd * np.asarray(u, dtype=np.float64))


MODEL_IDS = ("hidden-ar", "unlikely-obs", "growth", "plankton")


def get_model(model_id: str, **kwargs) -> StateSpaceModel:
    """Model registry; kwargs pass through to the constructor (e.g. d_x, horizon)."""
    if model_id == "hidden-ar":
        return HiddenAR(**kwargs)
    if model_id == "unlikely-obs":
        return UnlikelyObs(**kwargs)
    if model_id == "growth":
        return Growth(**kwargs)
    if model_id == "plankton":
        return Plankton(**kwargs)
    raise ModelError(f"unknown model id {model_id!r}")


def save_observations(path, y) -> None:
    """Write observations as CSV, one row per time step, columns y1..y_dy."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    header = ",".join(f"y{j + 1}" for j in range(y.shape[1]))
    np.savetxt(path, y, delimiter=",", header=header, comments="")


def load_observations(path) -> np.ndarray:
    """Read observations written by ``save_observations``."""
    y = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return np.asarray(y, dtype=np.float64)
