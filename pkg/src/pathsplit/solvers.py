"""One-step schemes driven by Brownian step statistics.

Every step function takes a state array of shape (..., e) and a StepIncrement
whose arrays have shape (..., d), and returns the next state.
"""

from dataclasses import dataclass
from fractions import Fraction
import math

import numpy as np

from . import estimators as est
from .brownian import StepIncrement
from .errors import ConfigurationError, StepError
from .models import fhn_phi_strang_half
from .paths import PathKind, build_path

__all__ = [
    "OdeSubstepConfig",
    "SchemeSpec",
    "Scheme",
    "SCHEMES",
    "splitting_step",
    "cir_split_step",
    "cir_cond_moments",
    "cir_remainders",
    "shifted_euler_step",
    "shifted_ralston_step",
    "sra1_step",
    "euler_maruyama_step",
    "milstein_step",
    "tamed_euler_step",
    "srk_new_step",
    "fhn_split_step",
    "sort_step",
    "sort_coefficients",
    "simulate",
]

SQRT3 = math.sqrt(3.0)

# ---------------------------------------------------------------------------
# ODE sub-steps


@dataclass(frozen=True)
class OdeSubstepConfig:
    """Solvers for the ODE pieces of a splitting path.

    ``None`` means exact when the model provides the flow, otherwise Ralston2
    for drift pieces and Rk4 for diffusion pieces.
    """
    drift_solver: str = None        # "exact", "ralston2", "rk4"
    diffusion_solver: str = None    # "exact", "rk4"
    mixed_solver: str = "rk4"
    substeps: int = 1

    def resolve(self, model):
        drift = self.drift_solver or ("exact" if model.exact_drift_flow else "ralston2")
        diff = self.diffusion_solver or ("exact" if model.exact_diffusion_flow else "rk4")
        if drift not in ("exact", "ralston2", "rk4"):
            raise ConfigurationError(f"unknown drift solver {drift!r}")
        if diff not in ("exact", "rk4"):
            raise ConfigurationError(f"unknown diffusion solver {diff!r}")
        if self.mixed_solver != "rk4":
            raise ConfigurationError("mixed pieces are solved with rk4")
        if drift == "exact" and model.exact_drift_flow is None:
            raise ConfigurationError(f"model {model.name} has no exact drift flow")
        if diff == "exact" and model.exact_diffusion_flow is None:
            raise ConfigurationError(f"model {model.name} has no exact diffusion flow")
        return OdeSubstepConfig(drift, diff, "rk4", max(1, int(self.substeps)))


def _rk4(field_, y, n):
    dt = 1.0 / n
    for _ in range(n):
        k1 = field_(y)
        k2 = field_(y + 0.5 * dt * k1)
        k3 = field_(y + 0.5 * dt * k2)
        k4 = field_(y + dt * k3)
        y = y + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    return y


def _ralston(field_, y, n):
    dt = 1.0 / n
    for _ in range(n):
        k1 = field_(y)
        k2 = field_(y + (2.0 / 3.0) * dt * k1)
        y = y + dt * (0.25 * k1 + 0.75 * k2)
    return y


def splitting_step(model, path, y, cfg=None):
    """Solve the controlled ODE along each piece of the path in turn."""
    cfg = (cfg or OdeSubstepConfig()).resolve(model)
    for i, seg in enumerate(path.segments):
        if seg.dw is None:
            if seg.dtau == 0.0:
                continue
            if cfg.drift_solver == "exact":
                y = model.exact_drift_flow(y, seg.dtau)
            else:
                solve = _rk4 if cfg.drift_solver == "rk4" else _ralston
                t = seg.dtau
                y = solve(lambda z: model.drift(z) * t, y, cfg.substeps)
        elif seg.dtau == 0.0:
            if cfg.diffusion_solver == "exact":
                y = model.exact_diffusion_flow(y, seg.dw)
            else:
                dw = seg.dw
                y = _rk4(lambda z: model.noise(z, dw), y, cfg.substeps)
        else:
            t, dw = seg.dtau, seg.dw
            y = _rk4(lambda z: model.drift(z) * t + model.noise(z, dw), y, cfg.substeps)
        if not model.in_domain(y):
            raise StepError("state left the model domain", segment=i)
    return y


# ---------------------------------------------------------------------------
# CIR


def cir_split_step(p, y, inc):
    """High order Strang splitting for CIR driven by the HS1 path."""
    a, bt, s = p.a, p.b_tilde, p.sigma
    h = inc.h
    t1 = (3.0 - SQRT3) * h / 6.0
    t2 = SQRT3 * h / 3.0
    e1 = math.exp(-a * t1)
    e2 = math.exp(-a * t2)
    w, hh = inc.w[..., :1], inc.hst[..., :1]
    y = e1 * y + bt * (1.0 - e1)
    r = np.sqrt(y) + 0.5 * s * (0.5 * w + SQRT3 * hh)
    y = e2 * (r * r) + bt * (1.0 - e2)
    r = np.sqrt(y) + 0.5 * s * (0.5 * w - SQRT3 * hh)
    return e1 * (r * r) + bt * (1.0 - e1)


def _pair_powers(S, P, m):
    """p_j = r1^j + r2^j for the roots of x^2 - S x + P, j < m, as Fractions."""
    p = [Fraction(2), S]
    while len(p) < m:
        p.append(S * p[-1] - P * p[-2])
    return p


def _exp_pair(S, P, m):
    """Taylor coefficients of exp(-r1 x) + exp(-r2 x)."""
    p = _pair_powers(S, P, m)
    out, fact = [], Fraction(1)
    for j in range(m):
        if j:
            fact *= j
        out.append((-1) ** j * p[j] / fact)
    return out


def _exp1(r, m):
    """Taylor coefficients of exp(-r x)."""
    out, fact = [], Fraction(1)
    for j in range(m):
        if j:
            fact *= j
        out.append(Fraction(-r) ** j / fact)
    return out


def _shift(c, k):
    """Multiply a series by x^k."""
    return [Fraction(0)] * k + c[:len(c) - k]


def _combine(*terms):
    m = len(terms[0][1])
    return [sum((w * c[j] for w, c in terms), Fraction(0)) for j in range(m)]


_NT = 40
_NU = _exp_pair(Fraction(1), Fraction(1, 6), _NT)     # (3 +- sqrt 3)/6
_LAM = _exp_pair(Fraction(3), Fraction(13, 6), _NT)   # (9 +- sqrt 3)/6
_MU = _exp_pair(Fraction(2), Fraction(2, 3), _NT)     # (3 +- sqrt 3)/3
_E1 = _exp1(1, _NT)
_E2 = _exp1(2, _NT)
_ONE = [Fraction(1)] + [Fraction(0)] * (_NT - 1)
_ONE_MINUS_E1 = _combine((1, _ONE), (-1, _E1))
_ONE_MINUS_E1_SQ = _combine((1, _ONE), (-2, _E1), (1, _E2))

# Remainders as functions of x = a h:
#   FE = x/2 (e^{-nu1 x} + e^{-nu2 x}) - (1 - e^{-x})
#   F1 = x/2 (e^{-l1 x} + e^{-l2 x}) - (e^{-x} - e^{-2x})
#   F2 = x (e^{-m1 x} + e^{-m2 x} - e^{-l1 x} - e^{-l2 x}) - (1 - e^{-x})^2
#   F3 = x^2/2 (e^{-x} + (e^{-m1 x} + e^{-m2 x})/2) - (1 - e^{-x})^2
_FE = _combine((Fraction(1, 2), _shift(_NU, 1)), (-1, _ONE_MINUS_E1))
_F1 = _combine((Fraction(1, 2), _shift(_LAM, 1)), (-1, _E1), (1, _E2))
_F2 = _combine((1, _shift(_MU, 1)), (-1, _shift(_LAM, 1)), (-1, _ONE_MINUS_E1_SQ))
_F3 = _combine((Fraction(1, 2), _shift(_E1, 2)), (Fraction(1, 4), _shift(_MU, 2)),
               (-1, _ONE_MINUS_E1_SQ))
_SERIES = {name: [float(c) for c in coeffs] for name, coeffs in
           (("FE", _FE), ("F1", _F1), ("F2", _F2), ("F3", _F3))}
_SERIES_MAX_X = 0.5


def _closed(name, x):
    ex = math.exp
    r = SQRT3
    nu = ((3 + r) / 6, (3 - r) / 6)
    lam = ((9 + r) / 6, (9 - r) / 6)
    mu = ((3 + r) / 3, (3 - r) / 3)
    om = -math.expm1(-x)
    if name == "FE":
        return 0.5 * x * (ex(-nu[0] * x) + ex(-nu[1] * x)) - om
    if name == "F1":
        return 0.5 * x * (ex(-lam[0] * x) + ex(-lam[1] * x)) - (ex(-x) - ex(-2 * x))
    if name == "F2":
        return x * (ex(-mu[0] * x) + ex(-mu[1] * x) - ex(-lam[0] * x) - ex(-lam[1] * x)) - om * om
    return 0.5 * x * x * (ex(-x) + 0.5 * (ex(-mu[0] * x) + ex(-mu[1] * x))) - om * om


def _remainder_fn(name, x):
    if x <= _SERIES_MAX_X:
        acc = 0.0
        for c in reversed(_SERIES[name]):
            acc = acc * x + c
        return acc
    return _closed(name, x)


def cir_remainders(p, y, h):
    """(R^E, R^V): deviation of the scheme's one-step moments from the exact CIR moments."""
    a, s = p.a, p.sigma
    x = a * h
    re = s * s / (4.0 * a) * _remainder_fn("FE", x)
    rv = (s * s * y / a * _remainder_fn("F1", x)
          + p.b_tilde * s * s / (2.0 * a) * _remainder_fn("F2", x)
          + s ** 4 / (8.0 * a * a) * _remainder_fn("F3", x))
    return re, rv


def cir_cond_moments(p, y, h):
    """Conditional mean and variance of one cir_split_step from state y."""
    a, b, s = p.a, p.b, p.sigma
    e = math.exp(-a * h)
    om = -math.expm1(-a * h)
    re, rv = cir_remainders(p, y, h)
    mean = e * y + b * om + re
    var = s * s / a * (e - e * e) * y + b * s * s / (2.0 * a) * om * om + rv
    return mean, var


# ---------------------------------------------------------------------------
# Additive noise schemes


def _sig(model):
    if model.sigma is None:
        raise ConfigurationError(f"scheme needs an additive-noise model, got {model.name}")
    return model.sigma


def shifted_euler_step(model, y, inc):
    sig = _sig(model)
    h = inc.h
    return y + model.drift(y + sig.apply(0.5 * inc.w + inc.hst)) * h + sig.apply(inc.w)


def _shift_increments(inc, kind):
    if kind is PathKind.SO2:
        c = est.c_so2(est.ScalarStepStats.of(inc))
        return 0.5 * inc.w + inc.hst - 0.5 * c, c
    if kind is PathKind.SO1:
        rn = math.sqrt(inc.h) * inc.n
        return inc.hst + 0.5 * rn, inc.w - rn
    raise ConfigurationError(f"shifted Ralston uses the SO1 or SO2 path, not {kind.value}")


def shifted_ralston_step(model, y, inc, kind=PathKind.SO2):
    sig = _sig(model)
    h = inc.h
    c1, c2 = _shift_increments(inc, PathKind.parse(kind))
    yt = y + sig.apply(c1)
    f1 = model.drift(yt)
    f2 = model.drift(yt + (2.0 / 3.0) * (f1 * h + sig.apply(c2)))
    return y + (0.25 * h) * f1 + (0.75 * h) * f2 + sig.apply(inc.w)


def sra1_step(model, y, inc):
    sig = _sig(model)
    h = inc.h
    f0 = model.drift(y)
    f1 = model.drift(y + 0.75 * (f0 * h + sig.apply(inc.w + 2.0 * inc.hst)))
    return y + (h / 3.0) * f0 + (2.0 * h / 3.0) * f1 + sig.apply(inc.w)


def srk_new_step(model, y, inc):
    sig = _sig(model)
    h = inc.h
    yt = y + sig.apply(inc.hst)
    f1 = model.drift(yt)
    f2 = model.drift(yt + (5.0 / 6.0) * (f1 * h + sig.apply(inc.w)))
    return y + (0.4 * h) * f1 + (0.6 * h) * f2 + sig.apply(inc.w)


def _baseline_state(model, y):
    # full truncation: coefficients see max(y, 0) on the non-negative CIR domain
    return np.maximum(y, 0.0) if model.name == "cir" else y


def euler_maruyama_step(model, y, inc):
    """Euler-Maruyama on the Ito form of the model."""
    z = _baseline_state(model, y)
    return y + model.f_ito(z) * inc.h + model.noise(z, inc.w)


def milstein_step(model, y, inc):
    """Milstein for scalar noise; additive models reduce to Euler-Maruyama."""
    z = _baseline_state(model, y)
    out = y + model.f_ito(z) * inc.h + model.noise(z, inc.w)
    if model.milstein_coef is not None:
        if model.dim_noise != 1:
            raise ConfigurationError("milstein_step supports scalar noise only")
        out = out + 0.5 * model.milstein_coef(z) * (inc.w * inc.w - inc.h)
    return out


def tamed_euler_step(model, y, inc):
    z = _baseline_state(model, y)
    f = model.f_ito(z)
    norm = np.sqrt(np.sum(f * f, axis=-1, keepdims=True))
    return y + inc.h * f / (1.0 + inc.h * norm) + model.noise(z, inc.w)


# ---------------------------------------------------------------------------
# FitzHugh-Nagumo


def fhn_split_step(p, y, inc):
    """High order Strang splitting for FHN driven by the HS2 path."""
    h = inc.h
    s = np.array([p.sigma1, p.sigma2])
    c = est.c_hs2(est.ScalarStepStats.of(inc))
    y = y + s * (0.5 * inc.w + inc.hst - 0.5 * c)
    v, u = fhn_phi_strang_half(p, y[..., 0], y[..., 1], h)
    y = np.stack([v, u], axis=-1) + s * c
    v, u = fhn_phi_strang_half(p, y[..., 0], y[..., 1], h)
    return np.stack([v, u], axis=-1) + s * (0.5 * inc.w - inc.hst - 0.5 * c)


# ---------------------------------------------------------------------------
# Underdamped Langevin: SORT

_SERIES_SWITCH = 1e-4


def _phi1(z):
    """(1 - e^{-z}) / z."""
    if z < _SERIES_SWITCH:
        return 1.0 - z / 2.0 + z * z / 6.0 - z ** 3 / 24.0 + z ** 4 / 120.0
    return -math.expm1(-z) / z


def _phi2(z):
    """(e^{-z} + z - 1) / z^2."""
    if z < _SERIES_SWITCH:
        return 0.5 - z / 6.0 + z * z / 24.0 - z ** 3 / 120.0 + z ** 4 / 720.0
    return (math.expm1(-z) + z) / (z * z)


def sort_coefficients(gamma, h):
    """(1 - e^{-g t})/g and (e^{-g t} + g t - 1)/g^2 at t = h/2 and t = h."""
    hh = h / 2.0
    return {
        "a_half": hh * _phi1(gamma * hh),
        "b_half": hh * hh * _phi2(gamma * hh),
        "a_full": h * _phi1(gamma * h),
        "b_full": h * h * _phi2(gamma * h),
    }


def sort_step(p, y, inc, grad=None):
    """Shifted ODE with a third order Runge-Kutta method for ULD.

    Returns (y_next, grad_next); pass grad_next back in to reuse the final
    gradient evaluation.
    """
    if inc.k is None:
        raise ConfigurationError("SORT needs the space-time-time area K")
    d = p.dim
    x, v = y[..., :d], y[..., d:]
    g, u, h = p.gamma_friction, p.u, inc.h
    amp = math.sqrt(2.0 * g * u)
    co = sort_coefficients(g, h)
    e_full = math.exp(-g * h)
    e_half = math.exp(-0.5 * g * h)
    g0 = p.potential_grad(x) if grad is None else grad
    drive = amp * (inc.w - 12.0 * inc.k)
    v1 = v + amp * (inc.hst + 6.0 * inc.k)
    x1 = x + co["a_half"] * v1 - co["b_half"] * u * g0 + (co["b_half"] / h) * drive
    g1 = p.potential_grad(x1)
    x2 = (x + co["a_full"] * v1 - co["b_full"] * u * (g0 / 3.0 + 2.0 * g1 / 3.0)
          + (co["b_full"] / h) * drive)
    g2 = p.potential_grad(x2)
    v2 = (e_full * v1 - (h / 6.0) * e_full * u * g0 - (2.0 * h / 3.0) * e_half * u * g1
          - (h / 6.0) * u * g2 + (co["a_full"] / h) * drive)
    v_next = v2 - amp * (inc.hst - 6.0 * inc.k)
    return np.concatenate([x2, v_next], axis=-1), g2


# ---------------------------------------------------------------------------
# Scheme registry


@dataclass(frozen=True)
class SchemeSpec:
    """A named scheme plus its options (path kind, ODE sub-step solvers)."""
    name: str
    path_kind: object = None
    ode_cfg: OdeSubstepConfig = None

    def build(self, model):
        key = self.name.lower().replace("_", "-")
        if key not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.name!r}; choose from {sorted(SCHEMES)}")
        return SCHEMES[key](model, self)


class Scheme:
    """Stateful driver around a step function (state is usually just y)."""
    needs_k = False
    name = "scheme"

    def __init__(self, model, spec=None):
        self.model = model
        self.spec = spec
        self.check()

    def check(self):
        pass

    def init(self, y0):
        return np.asarray(y0, dtype=float)

    def step(self, state, inc):
        raise NotImplementedError

    def output(self, state):
        return state


def _require(model, cond, what):
    if not cond:
        raise ConfigurationError(f"{what} is not compatible with model {model.name!r}")


class PathSplitting(Scheme):
    name = "path-splitting"

    def check(self):
        self.kind = PathKind.parse(self.spec.path_kind if self.spec and self.spec.path_kind else "HS1")
        self.needs_k = self.kind is PathKind.SO4
        self.cfg = (self.spec.ode_cfg if self.spec and self.spec.ode_cfg else OdeSubstepConfig()).resolve(self.model)

    def step(self, y, inc):
        return splitting_step(self.model, build_path(self.kind, inc), y, self.cfg)


class CirSplitting(Scheme):
    name = "cir-splitting"

    def check(self):
        _require(self.model, self.model.name == "cir", self.name)

    def step(self, y, inc):
        return cir_split_step(self.model.params, y, inc)


def _additive(name, fn, **kw):
    class _S(Scheme):
        def check(self):
            _require(self.model, self.model.is_additive, name)

        def step(self, y, inc):
            return fn(self.model, y, inc, **kw)
    _S.name = name
    _S.__name__ = name.title().replace("-", "")
    return _S


class ShiftedRalston(Scheme):
    name = "shifted-ralston"

    def check(self):
        _require(self.model, self.model.is_additive, self.name)
        self.kind = PathKind.parse(self.spec.path_kind if self.spec and self.spec.path_kind else "SO2")
        if self.kind not in (PathKind.SO1, PathKind.SO2):
            raise ConfigurationError("shifted Ralston uses the SO1 or SO2 path")

    def step(self, y, inc):
        return shifted_ralston_step(self.model, y, inc, self.kind)


def _baseline(name, fn):
    class _S(Scheme):
        def step(self, y, inc):
            return fn(self.model, y, inc)
    _S.name = name
    _S.__name__ = name.title().replace("-", "")
    return _S


class FhnSplitting(Scheme):
    name = "fhn-splitting"

    def check(self):
        _require(self.model, self.model.name == "fhn", self.name)

    def step(self, y, inc):
        return fhn_split_step(self.model.params, y, inc)


class Sort(Scheme):
    name = "sort"
    needs_k = True

    def check(self):
        _require(self.model, self.model.name == "uld", self.name)

    def init(self, y0):
        y0 = np.asarray(y0, dtype=float)
        return (y0, None)

    def step(self, state, inc):
        y, grad = state
        return sort_step(self.model.params, y, inc, grad)

    def output(self, state):
        return state[0]


SCHEMES = {
    "path-splitting": PathSplitting,
    "cir-splitting": CirSplitting,
    "shifted-euler": _additive("shifted-euler", shifted_euler_step),
    "shifted-ralston": ShiftedRalston,
    "sra1": _additive("sra1", sra1_step),
    "srk-new": _additive("srk-new", srk_new_step),
    "euler-maruyama": _baseline("euler-maruyama", euler_maruyama_step),
    "milstein": _baseline("milstein", milstein_step),
    "tamed-euler": _baseline("tamed-euler", tamed_euler_step),
    "fhn-splitting": FhnSplitting,
    "sort": Sort,
}
SCHEMES["em"] = SCHEMES["euler-maruyama"]


def make_scheme(name, model, path_kind=None, ode_cfg=None):
    return SchemeSpec(name, path_kind, ode_cfg).build(model)


# ---------------------------------------------------------------------------


def simulate(model, scheme, y0, T, N, source, trajectory=False):
    """Run N steps of length T/N.

    ``source`` is either a StepIncrement whose first axis indexes steps or a
    callable ``source(k, h)`` returning the k-th increment.
    """
    if N < 1:
        raise ConfigurationError("N must be >= 1")
    if isinstance(scheme, (str, SchemeSpec)):
        scheme = (scheme if isinstance(scheme, SchemeSpec) else SchemeSpec(scheme)).build(model)
    h = T / N
    state = scheme.init(y0)
    traj = [scheme.output(state)] if trajectory else None
    for k in range(N):
        inc = source[k] if isinstance(source, StepIncrement) else source(k, h)
        if not math.isclose(inc.h, h, rel_tol=1e-12):
            raise ConfigurationError(f"increment {k} has length {inc.h}, expected {h}")
        try:
            state = scheme.step(state, inc)
        except StepError as exc:
            raise StepError(exc.message, exc.segment, k) from exc
        if trajectory:
            traj.append(scheme.output(state))
    out = scheme.output(state)
    return (out, np.stack(traj)) if trajectory else out
