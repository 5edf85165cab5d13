"""SDE test problems in Stratonovich form.

States are arrays of shape (..., e) and noise increments (..., d).  Models are
immutable; every callable is vectorised over the leading axes.
"""

from dataclasses import dataclass
import csv
import math

import numpy as np

from .errors import ConfigurationError, DomainError

__all__ = [
    "SdeModel",
    "CirParams",
    "FhnParams",
    "UldParams",
    "LogisticPotential",
    "CommutativityReport",
    "additive_model",
    "oscillator_model",
    "linear_model",
    "cir_model",
    "fhn_model",
    "fhn_cubic_flow",
    "fhn_linear_flow",
    "fhn_phi_strang_half",
    "uld_model",
    "quadratic_grad",
    "logistic_value",
    "logistic_grad",
    "load_dataset",
    "noncommutative_model",
    "commutativity_check",
]


@dataclass(frozen=True)
class SdeModel:
    """dy = f(y) dt + g(y) o dW with optional exact sub-flows.

    ``diffusion(y)`` returns the (..., e, d) matrix g(y).  ``sigma`` is set for
    additive noise.  ``exact_diffusion_flow(y, dw)`` is the time-one flow of
    y' = g(y) dw.  ``ito_drift`` and ``milstein_coef`` (g'g for scalar noise)
    serve the Ito baselines.
    """
    name: str
    dim_state: int
    dim_noise: int
    drift: object
    diffusion: object
    exact_drift_flow: object = None
    exact_diffusion_flow: object = None
    sigma: object = None
    ito_drift: object = None
    milstein_coef: object = None
    domain: object = None
    commutative: bool = True
    params: object = None

    @property
    def e(self):
        return self.dim_state

    @property
    def d(self):
        return self.dim_noise

    @property
    def is_additive(self):
        return self.sigma is not None

    def diffusion_col(self, i, y):
        return self.diffusion(y)[..., :, i]

    def noise(self, y, dw):
        """g(y) dw."""
        if self.sigma is not None:
            return self.sigma.apply(dw)
        return np.einsum("...ij,...j->...i", self.diffusion(y), dw)

    def f_ito(self, y):
        return self.drift(y) if self.ito_drift is None else self.ito_drift(y)

    def in_domain(self, y):
        return True if self.domain is None else bool(np.all(self.domain(y)))


class _Sigma:
    """Constant diffusion matrix with a fast path for diagonal matrices."""

    def __init__(self, matrix):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        m = self.matrix
        self.diag = None
        if m.shape[0] == m.shape[1] and np.array_equal(m, np.diag(np.diag(m))):
            self.diag = np.diag(m).copy()
        self.scalar = None
        if self.diag is not None and np.all(self.diag == self.diag[0]):
            self.scalar = float(self.diag[0])

    def apply(self, dw):
        if self.scalar is not None:
            return dw if self.scalar == 1.0 else self.scalar * dw
        if self.diag is not None:
            return dw * self.diag
        return dw @ self.matrix.T


def additive_model(drift, sigma, name="additive", exact_drift_flow=None, params=None):
    """Generic additive-noise model dy = f(y) dt + sigma dW."""
    sig = _Sigma(sigma)
    e, d = sig.matrix.shape
    mat = sig.matrix

    def diffusion(y):
        return np.broadcast_to(mat, np.shape(y)[:-1] + mat.shape)

    return SdeModel(name, e, d, drift, diffusion, exact_drift_flow,
                    lambda y, dw: y + sig.apply(dw), sig, None, None, None, True, params)


def oscillator_model(sigma=1.0):
    """Scalar anharmonic oscillator dy = sin(y) dt + sigma dW."""
    return additive_model(np.sin, [[sigma]], name="oscillator")


def linear_model(lam=1.0, sigma=1.0, dim=1):
    """Ornstein-Uhlenbeck model dy = -lam y dt + sigma dW with exact drift flow."""
    return additive_model(lambda y: -lam * y, sigma * np.eye(dim), name="linear",
                          exact_drift_flow=lambda y, t: y * math.exp(-lam * t))


@dataclass(frozen=True)
class CirParams:
    a: float
    b: float
    sigma: float

    def __post_init__(self):
        if min(self.a, self.b, self.sigma) <= 0.0:
            raise ConfigurationError("CIR parameters a, b, sigma must be positive")
        if self.sigma ** 2 > 4.0 * self.a * self.b:
            raise ConfigurationError(
                f"CIR splitting needs sigma^2 <= 4ab, got sigma^2={self.sigma ** 2}, 4ab={4 * self.a * self.b}")

    @property
    def b_tilde(self):
        return self.b - self.sigma ** 2 / (4.0 * self.a)


def cir_model(p):
    """CIR model dy = a(b~ - y) dt + sigma sqrt(y) o dW on [0, inf)."""
    a, bt, s = p.a, p.b_tilde, p.sigma

    def drift(y):
        return a * (bt - y)

    def diffusion(y):
        return (s * np.sqrt(np.maximum(y, 0.0)))[..., None]

    def drift_flow(y, t):
        return y - (y - bt) * (-math.expm1(-a * t))

    def diffusion_flow(y, dw):
        r = np.sqrt(y) + 0.5 * s * dw
        return r * r

    def ito_drift(y):
        return a * (p.b - y)

    def milstein_coef(y):
        # g'(y) g(y) for g = sigma sqrt(y)
        return np.full_like(y, 0.5 * s * s)

    return SdeModel("cir", 1, 1, drift, diffusion, drift_flow, diffusion_flow, None,
                    ito_drift, milstein_coef, lambda y: y >= 0.0, True, p)


@dataclass(frozen=True)
class FhnParams:
    epsilon: float = 1.0
    gamma: float = 1.0
    beta: float = 1.0
    sigma1: float = 1.0
    sigma2: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ConfigurationError("FHN epsilon must be positive")


def fhn_cubic_flow(v, t, eps):
    """Exact time-t solution of v' = (v - v^3)/eps."""
    q = math.exp(-2.0 * t / eps)
    return v / np.sqrt(q + v * v * (1.0 - q))


def _fhn_exp_coeffs(p, t):
    """(c, s) with exp(tM) = e^{-t/2}[[c + s/2, -s/eps], [gamma s, c - s/2]]."""
    kappa = 4.0 * p.gamma / p.epsilon - 1.0
    if abs(kappa) <= 1e-12 * (1.0 + 4.0 * p.gamma / p.epsilon):
        return 1.0, t
    if kappa > 0.0:
        om = 0.5 * math.sqrt(kappa)
        return math.cos(om * t), math.sin(om * t) / om
    om = 0.5 * math.sqrt(-kappa)
    return math.cosh(om * t), math.sinh(om * t) / om


def fhn_exp_matrix(p, t):
    """exp(t [[0, -1/eps], [gamma, -1]]) in closed form."""
    c, s = _fhn_exp_coeffs(p, t)
    e = math.exp(-0.5 * t)
    return e * np.array([[c + 0.5 * s, -s / p.epsilon], [p.gamma * s, c - 0.5 * s]])


def fhn_linear_flow(v, u, t, p):
    m = fhn_exp_matrix(p, t)
    return m[0, 0] * v + m[0, 1] * u, m[1, 0] * v + m[1, 1] * u


def fhn_phi_strang_half(p, v, u, h):
    """Strang approximation of the FHN drift flow over time h/2."""
    q = h / 4.0
    v = fhn_cubic_flow(v, q, p.epsilon)
    u = u + p.beta * q
    v, u = fhn_linear_flow(v, u, h / 2.0, p)
    v = fhn_cubic_flow(v, q, p.epsilon)
    return v, u + p.beta * q


def fhn_model(p):
    """Stochastic FitzHugh-Nagumo model, state (v, u)."""

    def drift(y):
        v, u = y[..., 0], y[..., 1]
        return np.stack([(v - v ** 3 - u) / p.epsilon, p.gamma * v - u + p.beta], axis=-1)

    return additive_model(drift, np.diag([p.sigma1, p.sigma2]), name="fhn", params=p)


@dataclass(frozen=True)
class UldParams:
    u: float
    gamma_friction: float
    potential_grad: object
    dim: int = 1

    def __post_init__(self):
        if not self.gamma_friction > 0.0:
            raise ConfigurationError("friction must be positive")


def uld_model(p):
    """Underdamped Langevin dynamics; state (x, v) concatenated, shape (..., 2 dim)."""
    d = p.dim
    amp = math.sqrt(2.0 * p.gamma_friction * p.u)
    sigma = np.zeros((2 * d, d))
    sigma[d:, :] = amp * np.eye(d)

    def drift(y):
        x, v = y[..., :d], y[..., d:]
        return np.concatenate([v, -p.gamma_friction * v - p.u * p.potential_grad(x)], axis=-1)

    return additive_model(drift, sigma, name="uld", params=p)


def quadratic_grad(x):
    """Gradient of f(x) = |x|^2 / 2."""
    return x


@dataclass(frozen=True)
class LogisticPotential:
    features: np.ndarray
    labels: np.ndarray
    delta: float

    def __post_init__(self):
        if np.any((self.labels != 1.0) & (self.labels != -1.0)):
            raise DomainError("labels must be +1 or -1")

    @property
    def dim(self):
        return self.features.shape[1]


def logistic_value(pot, theta):
    z = -(theta @ pot.features.T) * pot.labels
    return pot.delta * np.sum(theta * theta, axis=-1) + np.sum(np.logaddexp(0.0, z), axis=-1)


def logistic_grad(pot, theta):
    """grad f(theta) = 2 delta theta - sum_i y_i x_i sigmoid(-y_i x_i.theta)."""
    theta = np.asarray(theta, dtype=float)
    g = 2.0 * pot.delta * theta
    if pot.features.shape[0] == 0:
        return g
    z = (theta @ pot.features.T) * pot.labels
    # sigmoid(-z) = exp(-logaddexp(0, z)), stable for either sign of z
    w = np.exp(-np.logaddexp(0.0, z)) * pot.labels
    return g - w @ pot.features


def load_dataset(csv_path, delta=0.05):
    """Read rows 'label, x_1, ..., x_d' with labels in {-1, +1}."""
    labels, rows = [], []
    with open(csv_path, newline="") as fh:
        for i, rec in enumerate(csv.reader(fh)):
            if not rec or rec[0].lstrip().startswith("#"):
                continue
            try:
                vals = [float(x) for x in rec]
            except ValueError:
                if i == 0 and not rows:
                    continue  # header
                raise DomainError(f"row {i}: non-numeric entry") from None
            if vals[0] not in (1.0, -1.0):
                raise DomainError(f"row {i}: label {vals[0]!r} is not +1 or -1")
            if rows and len(vals) - 1 != len(rows[0]):
                raise DomainError(f"row {i}: expected {len(rows[0])} features, got {len(vals) - 1}")
            labels.append(vals[0])
            rows.append(vals[1:])
    feats = np.array(rows, dtype=float) if rows else np.zeros((0, 0))
    return LogisticPotential(feats, np.array(labels, dtype=float), float(delta))


def noncommutative_model():
    """Two-noise test field g_1 = (y_2, 0), g_2 = (0, y_1); not commutative."""

    def diffusion(y):
        z = np.zeros(np.shape(y) + (2,))
        z[..., 0, 0] = y[..., 1]
        z[..., 1, 1] = y[..., 0]
        return z

    return SdeModel("noncommutative", 2, 2, lambda y: np.zeros_like(y), diffusion, commutative=False)


@dataclass(frozen=True)
class CommutativityReport:
    max_defect: float
    tol: float

    @property
    def passed(self):
        return self.max_defect <= self.tol


def commutativity_check(model, points, tol=1e-6, step=1e-6):
    """Largest |g_i'(y) g_j(y) - g_j'(y) g_i(y)| over points and pairs, by central differences."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    worst = 0.0
    d = model.dim_noise
    for y in pts:
        g = model.diffusion(y)
        for i in range(d):
            for j in range(i + 1, d):
                gi, gj = g[:, i], g[:, j]
                di_j = (model.diffusion_col(i, y + step * gj) - model.diffusion_col(i, y - step * gj)) / (2 * step)
                dj_i = (model.diffusion_col(j, y + step * gi) - model.diffusion_col(j, y - step * gi)) / (2 * step)
                worst = max(worst, float(np.max(np.abs(di_j - dj_i))))
    return CommutativityReport(worst, tol)
