"""Conditional-expectation estimators of Brownian integrals given (W, H, n).

Every function is vectorised: the fields of ``ScalarStepStats`` may be
scalars or broadcastable arrays, which is how the path constructors call them
per noise coordinate.
"""

from dataclasses import dataclass
import math

import numpy as np

from .errors import EstimatorError

__all__ = [
    "ScalarStepStats",
    "l_cond_mean",
    "l_cond_var",
    "int_w2_cond_mean",
    "k_cond_mean",
    "k_variance",
    "epsilon_sign",
    "c_hs2",
    "c_so2",
    "stt_target",
    "hs2_radicand",
    "so2_radicand",
]

SQRT_6PI = math.sqrt(6.0 * math.pi)
SQRT_24PI = math.sqrt(24.0 * math.pi)


@dataclass(frozen=True)
class ScalarStepStats:
    h: float
    w: object
    hst: object
    n: object

    @classmethod
    def of(cls, inc):
        """Per-coordinate statistics of a StepIncrement."""
        return cls(inc.h, inc.w, inc.hst, inc.n)


def l_cond_mean(s):
    """E[L | W, H, n] for the space-space-time Levy area L."""
    h, w, hst, n = s.h, s.w, s.hst, s.n
    return h * h / 30.0 + 0.6 * h * hst * hst - n * h ** 1.5 * w / (8.0 * SQRT_6PI)


def l_cond_var(s):
    """Var[L | W, H, n]."""
    h, w, hst, n = s.h, s.w, s.hst, s.n
    h3 = h ** 3
    v = (11.0 * h ** 4 / 25200.0
         + (1.0 / 720.0 - 1.0 / (384.0 * math.pi)) * h3 * w * w
         + h3 * hst * hst / 700.0
         - n * h ** 3.5 * w / (320.0 * SQRT_6PI))
    if np.any(np.asarray(v) < 0.0):
        raise EstimatorError(f"negative conditional variance {np.min(v)!r}")
    return v


def int_w2_cond_mean(s):
    """E[int_s^t W_{s,u}^2 du | W, H, n]."""
    h, w, hst = s.h, s.w, s.hst
    return h * w * w / 3.0 + h * w * hst + 2.0 * l_cond_mean(s)


def k_cond_mean(n, h):
    """E[K | n]."""
    return n * math.sqrt(h) / (8.0 * SQRT_6PI)


def k_variance(h):
    return h / 720.0


def epsilon_sign(s):
    """Sign used to pick the root in c_hs2 and c_so2 (sgn(0) = +1)."""
    x = s.w - 3.0 * math.sqrt(s.h) * s.n / SQRT_24PI
    return np.where(np.asarray(x) >= 0.0, 1.0, -1.0)


def hs2_radicand(s):
    h, w, hst, n = s.h, s.w, s.hst, s.n
    return w * w / 3.0 + 0.8 * hst * hst + 4.0 * h / 15.0 - n * math.sqrt(h) * w / SQRT_6PI


def so2_radicand(s):
    h, w, hst, n = s.h, s.w, s.hst, s.n
    return w * w + 2.4 * hst * hst + 0.8 * h - 3.0 * n * math.sqrt(h) * w / SQRT_6PI


def _signed_root(s, rad, name):
    rad = np.asarray(rad, dtype=float)
    if np.any(rad < 0.0):
        i = int(np.argmin(rad))
        raise EstimatorError(
            f"{name}: negative radicand {rad.flat[i]!r} at h={s.h!r}, "
            f"W={np.ravel(np.broadcast_to(s.w, rad.shape))[i]!r}, "
            f"H={np.ravel(np.broadcast_to(s.hst, rad.shape))[i]!r}, "
            f"n={np.ravel(np.broadcast_to(s.n, rad.shape))[i]!r}")
    out = epsilon_sign(s) * np.sqrt(rad)
    return out if out.ndim else float(out)


def c_hs2(s):
    """Middle spatial jump C of the high order Strang path."""
    return _signed_root(s, hs2_radicand(s), "c_hs2")


def c_so2(s):
    """Interior spatial increment C of the nonlinear shifted ODE path."""
    return _signed_root(s, so2_radicand(s), "c_so2")


def stt_target(s):
    """E[int_s^t (u - s) W_{s,u} du | W, H, n]."""
    h, w, hst, n = s.h, s.w, s.hst, s.n
    return h * h * w / 3.0 + h * h * hst / 2.0 - n * h ** 2.5 / (8.0 * SQRT_6PI)
