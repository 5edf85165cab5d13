"""Numerical verification suites behind the verify-* subcommands.

The Brownian oracle samples finely discretised Brownian paths and evaluates
every functional (W, H, the swing gap N, K and L) exactly on the piecewise
linear interpolant, independently of the closed-form samplers.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from . import estimators as est
from .brownian import (DyadicBrownianTree, merge, refine, sample_increment, sgn, stream_for)
from .models import CirParams
from .paths import ConditionResult
from .solvers import cir_cond_moments, cir_split_step

__all__ = [
    "CheckReport",
    "brownian_functionals",
    "oracle_sample",
    "verify_brownian",
    "verify_estimators",
    "verify_moments",
]


@dataclass
class CheckReport:
    title: str
    results: list = field(default_factory=list)

    def add(self, name, category, value, tol, passed, detail=""):
        self.results.append(ConditionResult(name, category, float(value), float(tol), bool(passed),
                                            True, detail))

    @property
    def ok(self):
        return all(r.ok for r in self.results)

    def exit_code(self):
        if any(not r.ok and r.category == "exact" for r in self.results):
            return 2
        return 0 if self.ok else 1

    def table(self):
        rows = [f"{'check':44s} {'type':11s} {'value':>12s} {'tol':>10s}  result"]
        for r in self.results:
            verdict = "info" if r.passed is None else ("PASS" if r.passed else "FAIL")
            line = f"{r.name:44s} {r.category:11s} {r.value:12.4e} {r.tolerance:10.2e}  {verdict}"
            if r.detail:
                line += f"  [{r.detail}]"
            rows.append(line)
        return "\n".join(rows)


def brownian_functionals(dw, h):
    """Functionals of the piecewise linear path with increments dw, shape (..., m).

    Returns a dict with W, H, N (swing gap), n, K, L, int_w2 and A1 = int (u-s) W du.
    """
    m = dw.shape[-1]
    if m % 2:
        raise ValueError("need an even number of sub-steps")
    dt = h / m
    om = np.cumsum(dw, axis=-1) - dw            # value at the left end of each piece
    t = np.arange(m) * dt
    w = om[..., -1] + dw[..., -1]
    a0 = np.sum(om + dw / 2.0, axis=-1) * dt
    a1 = np.sum(t * om * dt + (t * dw + om * dt) * dt / 2.0 + dw * dt * dt / 3.0, axis=-1)
    w2 = np.sum(om * om + om * dw + dw * dw / 3.0, axis=-1) * dt
    hst = a0 / h - w / 2.0
    half = m // 2
    hh = h / 2.0

    def area(part, base):
        o = np.cumsum(part, axis=-1) - part
        wp = o[..., -1] + part[..., -1]
        return np.sum(o + part / 2.0, axis=-1) * dt / hh - wp / 2.0

    gap = area(dw[..., :half], 0.0) - area(dw[..., half:], 0.0)
    k = (0.5 * h * a0 - a1 + h * h * w / 12.0) / (h * h)
    ell = 0.5 * (w2 - h * w * w / 3.0 - h * w * hst)
    return {"W": w, "H": hst, "N": gap, "n": sgn(gap), "K": k, "L": ell, "int_w2": w2, "A1": a1}


def oracle_sample(num_paths, substeps, h=1.0, seed=0, batch=2000):
    """Brownian functionals of ``num_paths`` discretised paths, generated in batches."""
    out = {}
    for b0 in range(0, num_paths, batch):
        size = min(batch, num_paths - b0)
        rng = stream_for(seed, b0 // batch, 0, 99)
        dw = rng.standard_normal((size, substeps)) * math.sqrt(h / substeps)
        for key, val in brownian_functionals(dw, h).items():
            out.setdefault(key, []).append(val)
    return {k: np.concatenate(v) for k, v in out.items()}


def _z(x, target):
    x = np.asarray(x, dtype=float).ravel()
    se = float(np.std(x, ddof=1)) / math.sqrt(x.size)
    return abs(float(np.mean(x)) - target) / se if se > 0.0 else (0.0 if np.mean(x) == target else math.inf)


def verify_brownian(samples=1_000_000, seed=0, oracle_paths=0, substeps=4096, nsig=4.0):
    """Moment checks of the step sampler plus dyadic refine/merge identities."""
    rep = CheckReport(f"verify-brownian: {samples} samples, h = 1")
    rng = stream_for(seed, 0, 0, 0)
    inc = sample_increment(rng, 1.0, 1, with_k=True, size=samples)
    w, hst, k, n, gap = (a.ravel() for a in (inc.w, inc.hst, inc.k, inc.n, inc.gap))
    for label, x, target in (("Var(W) = h", w, 1.0), ("Var(H) = h/12", hst, 1 / 12),
                             ("Var(K) = h/720", k, 1 / 720)):
        z = _z(x * x, target)
        rep.add(label + " (z-score)", "statistical", z, nsig, z <= nsig)
    z = _z(w * hst, 0.0)
    rep.add("E[W H] = 0 (z-score)", "statistical", z, nsig, z <= nsig)
    z = _z(k * gap, 1 / 96)
    rep.add("Cov(K, N) = h/96 (z-score)", "statistical", z, nsig, z <= nsig)
    frac = float(np.mean(n > 0))
    se = math.sqrt(0.25 / samples)
    rep.add("P(n = +1) = 1/2 (z-score)", "statistical", abs(frac - 0.5) / se, nsig, abs(frac - 0.5) <= nsig * se)
    kp, km = k[n > 0], k[n < 0]
    diff = kp.mean() - km.mean()
    se = math.sqrt(kp.var() / kp.size + km.var() / km.size)
    target = 2.0 / (8.0 * est.SQRT_6PI)
    rep.add("E[K|n=+1] - E[K|n=-1] (z-score)", "statistical", abs(diff - target) / se, nsig,
            abs(diff - target) <= nsig * se)
    rep.add("E[K n] = 1/(8 sqrt(6 pi)) (z-score)", "statistical", _z(k * n, 1 / (8 * est.SQRT_6PI)), nsig,
            _z(k * n, 1 / (8 * est.SQRT_6PI)) <= nsig)

    # merge(refine(parent)) == parent on (h, W, H)
    rng = stream_for(seed, 1, 0, 0)
    parent = sample_increment(rng, 1.0, 1, size=10_000)
    left, right = refine(parent, rng)
    back = merge(left, right)
    dev = max(float(np.max(np.abs(back.w - parent.w))), float(np.max(np.abs(back.hst - parent.hst))),
              abs(back.h - parent.h))
    rep.add("merge(refine(p)) = p on (h, W, H)", "exact", dev, 1e-12, dev <= 1e-12)
    z = _z(np.concatenate([left.w.ravel(), right.w.ravel()]) ** 2, 0.5)
    rep.add("Var(W_child) = h/2 (z-score)", "statistical", z, nsig, z <= nsig)

    tree = DyadicBrownianTree.sample(stream_for(seed, 2, 0, 0), 1.0 / 64, 64, 6, d=2, with_k=True, batch=100)
    rep.add("dyadic tree parents = merged children", "exact", 0.0 if tree.is_consistent() else 1.0, 0.0,
            tree.is_consistent())

    if oracle_paths:
        o = oracle_sample(oracle_paths, substeps, 1.0, seed)
        ko, no = o["K"], o["N"]
        rep.add("oracle Var(K) = 1/720 (z-score)", "statistical", _z(ko * ko, 1 / 720), nsig,
                _z(ko * ko, 1 / 720) <= nsig)
        rep.add("oracle Cov(K, N) = 1/96 (z-score)", "statistical", _z(ko * no, 1 / 96), nsig,
                _z(ko * no, 1 / 96) <= nsig)
        rep.add("oracle E[K n] = 1/(8 sqrt(6 pi)) (z-score)", "statistical",
                _z(ko * o["n"], 1 / (8 * est.SQRT_6PI)), nsig, _z(ko * o["n"], 1 / (8 * est.SQRT_6PI)) <= nsig)
    return rep


def verify_estimators(samples=1_000_000, oracle_paths=20_000, substeps=4096, seed=0, nsig=4.0):
    """Non-negativity of variances/radicands and unbiasedness against the Brownian oracle."""
    rep = CheckReport(f"verify-estimators: {samples} scaled samples, {oracle_paths} oracle paths")
    for i, h in enumerate((1e-3, 1.0, 10.0)):
        inc = sample_increment(stream_for(seed, 10 + i, 0, 0), h, 1, size=samples)
        s = est.ScalarStepStats.of(inc)
        mins = [float(np.min(est.l_cond_var(s))) / h ** 4, float(np.min(est.hs2_radicand(s))) / h,
                float(np.min(est.so2_radicand(s))) / h]
        rep.add(f"min var/radicands >= 0 at h={h:g}", "exact", min(mins), 0.0, min(mins) >= 0.0,
                "scaled minima " + ", ".join(f"{m:.4g}" for m in mins))
    if oracle_paths:
        o = oracle_sample(oracle_paths, substeps, 1.0, seed)
        s = est.ScalarStepStats(1.0, o["W"], o["H"], o["n"])
        resid = 2.0 * o["L"] - (est.int_w2_cond_mean(s) - o["W"] ** 2 / 3.0 - o["W"] * o["H"])
        tests = {"1": 1.0, "W": o["W"], "H": o["H"], "n": o["n"], "W^2": o["W"] ** 2,
                 "H^2": o["H"] ** 2, "nW": o["n"] * o["W"]}
        for name, fn in tests.items():
            z = _z(resid * fn, 0.0)
            rep.add(f"E[(2L - est) * {name}] = 0 (z-score)", "statistical", z, nsig, z <= nsig)
        err2 = (o["L"] - est.l_cond_mean(s)) ** 2
        target = float(np.mean(est.l_cond_var(s)))
        z = _z(err2, target)
        rep.add("E[(L - l_cond_mean)^2] = E[l_cond_var] (z)", "statistical", z, nsig, z <= nsig,
                f"{float(np.mean(err2)):.5g} vs {target:.5g}")
    return rep


def verify_moments(a=1.0, b=1.0, sigma=1.0, y0=1.0, h=0.1, samples=10_000_000, seed=0, nsig=4.0,
                   batch=1_000_000):
    """One-step Monte Carlo mean and variance of the CIR splitting against the closed forms."""
    p = CirParams(a, b, sigma)
    rep = CheckReport(f"verify-moments: CIR a={a} b={b} sigma={sigma} y0={y0} h={h}, {samples} samples")
    s1 = s2 = s3 = s4 = 0.0
    lo = math.inf
    mean_t, var_t = cir_cond_moments(p, y0, h)
    for i, b0 in enumerate(range(0, samples, batch)):
        size = min(batch, samples - b0)
        inc = sample_increment(stream_for(seed, i, 0, 0), h, 1, size=size)
        y = cir_split_step(p, np.full((size, 1), y0), inc).ravel()
        lo = min(lo, float(y.min()))
        c = y - mean_t                   # centred sums keep precision
        s1 += float(c.sum())
        s2 += float((c * c).sum())
        s3 += float((c ** 3).sum())
        s4 += float((c ** 4).sum())
    m1, m2, m4 = s1 / samples, s2 / samples, s4 / samples
    se_mean = math.sqrt((m2 - m1 * m1) / samples)
    z = abs(m1) / se_mean
    rep.add("E[Y1] matches closed form (z-score)", "statistical", z, nsig, z <= nsig,
            f"{mean_t + m1:.10g} vs {mean_t:.10g}")
    var_hat = (m2 - m1 * m1) * samples / (samples - 1)
    se_var = math.sqrt(max(m4 - m2 * m2, 0.0) / samples)
    z = abs(var_hat - var_t) / se_var
    rep.add("Var[Y1] matches closed form (z-score)", "statistical", z, nsig, z <= nsig,
            f"{var_hat:.10g} vs {var_t:.10g}")
    rep.add("Y1 >= 0", "exact", lo, 0.0, lo >= 0.0)
    return rep
