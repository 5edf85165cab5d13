"""Strong-error estimation with coupled coarse and fine Brownian paths.

For each Monte Carlo batch and each coarse step, the finest increments are
sampled first and merged upwards, so the coarse scheme sees exactly the
statistics of the Brownian path that drives the fine scheme.  Random streams
are keyed by (seed, batch, coarse step), which makes every result independent
of the number of worker threads.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
import json
import math
import os
import tempfile
import time

import numpy as np

from .brownian import merge_pairs, sample_increment, stream_for
from .errors import ConfigurationError
from .models import (CirParams, FhnParams, UldParams, cir_model, fhn_model, linear_model,
                     load_dataset, logistic_grad, oscillator_model, quadratic_grad, uld_model)
from .solvers import OdeSubstepConfig, SchemeSpec

__all__ = [
    "ExperimentConfig",
    "ErrorRow",
    "ErrorReport",
    "RatioRow",
    "RatioReport",
    "build_model",
    "coupled_moments",
    "strong_error",
    "convergence_study",
    "error_ratio_study",
    "fit_slope",
    "default_threads",
    "write_atomic",
]

THREADS_ENV = "PATHSPLIT_THREADS"


def default_threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass
class ExperimentConfig:
    model: str = "oscillator"
    model_params: dict = field(default_factory=dict)
    scheme: str = "shifted-ralston"
    scheme_b: str = None
    path_kind: str = None
    path_kind_b: str = None
    T: float = 1.0
    N: list = field(default_factory=lambda: [32, 64, 128, 256, 512, 1024])
    fine_factor: int = 16
    paths: int = 10_000
    seed: int = 0
    batch_size: int = 4096
    threads: int = None
    y0: list = None
    out: str = None
    format: str = "csv"
    tolerances: dict = field(default_factory=dict)
    test_mode: bool = False
    debug: bool = False

    def validate(self):
        ff = int(self.fine_factor)
        if ff < 1 or ff & (ff - 1):
            raise ConfigurationError(f"fine_factor must be a power of two, got {ff}")
        if ff < 16 and not self.test_mode:
            raise ConfigurationError("fine_factor must be at least 16 (fine step <= h/10)")
        if self.paths < 1 or self.batch_size < 1:
            raise ConfigurationError("paths and batch_size must be positive")
        if any(int(n) < 1 for n in self.N):
            raise ConfigurationError("step counts must be positive")
        if not self.T > 0.0:
            raise ConfigurationError("T must be positive")
        return self


# ---------------------------------------------------------------------------
# Models by name


def build_model(name, params=None):
    """Return (model, default initial state) for a named test problem."""
    p = dict(params or {})
    name = name.lower()
    if name == "oscillator":
        return oscillator_model(float(p.get("sigma", 1.0))), np.array([float(p.get("y0", 1.0))])
    if name == "linear":
        dim = int(p.get("dim", 1))
        m = linear_model(float(p.get("lam", 1.0)), float(p.get("sigma", 1.0)), dim)
        return m, np.full(dim, float(p.get("y0", 1.0)))
    if name == "cir":
        cp = CirParams(float(p.get("a", 1.0)), float(p.get("b", 1.0)), float(p.get("sigma", 1.0)))
        return cir_model(cp), np.array([float(p.get("y0", 1.0))])
    if name == "fhn":
        fp = FhnParams(float(p.get("epsilon", 1.0)), float(p.get("gamma", 1.0)), float(p.get("beta", 1.0)),
                       float(p.get("sigma1", 1.0)), float(p.get("sigma2", 1.0)))
        return fhn_model(fp), np.array([float(p.get("v0", 0.0)), float(p.get("u0", 0.0))])
    if name in ("uld", "uld-quadratic"):
        dim = int(p.get("dim", 2))
        up = UldParams(float(p.get("u", 1.0)), float(p.get("gamma", 2.0)), quadratic_grad, dim)
        y0 = np.concatenate([np.full(dim, float(p.get("x0", 1.0))), np.full(dim, float(p.get("v0", 0.0)))])
        return uld_model(up), y0
    if name == "uld-logistic":
        if "dataset" not in p:
            raise ConfigurationError("uld-logistic needs model.dataset = <csv path>")
        pot = load_dataset(p["dataset"], float(p.get("delta", 0.05)))
        dim = pot.dim
        up = UldParams(float(p.get("u", 1.0)), float(p.get("gamma", 2.0)),
                       lambda th: logistic_grad(pot, th), dim)
        rng = np.random.default_rng(int(p.get("init_seed", 0)))
        x0 = rng.normal(0.0, math.sqrt(float(p.get("prior_var", 10.0))), dim)
        return uld_model(up), np.concatenate([x0, np.zeros(dim)])
    raise ConfigurationError(f"unknown model {name!r}")


# ---------------------------------------------------------------------------
# Coupled simulation


def _seed_for_n(seed, n):
    return int(np.random.SeedSequence([int(seed), int(n)]).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _batch_moments(model, schemes, y0, h, n_steps, ff, seed, batch, size, debug):
    """Sums of q_k and q_k q_l over one batch, q_k = |Y_coarse - Y_fine|^2 for scheme k."""
    d = model.dim_noise
    depth = int(round(math.log2(ff)))
    with_k = any(s.needs_k for s in schemes)
    y = np.broadcast_to(np.asarray(y0, dtype=float), (size, model.dim_state)).copy()
    coarse = [s.init(y.copy()) for s in schemes]
    fine = [s.init(y.copy()) for s in schemes]
    for k in range(n_steps):
        rng = stream_for(seed, batch, k, 0)
        leaves = sample_increment(rng, h / ff, d, with_k, size=(ff, size))
        inc = leaves
        for _ in range(depth):
            inc = merge_pairs(inc, axis=0)
        inc = inc[0]
        if debug and not np.allclose(inc.w, leaves.w.sum(axis=0), rtol=0, atol=1e-12):
            raise AssertionError("coarse increment is not the sum of the fine increments")
        for i, s in enumerate(schemes):
            st = fine[i]
            for j in range(ff):
                st = s.step(st, leaves[j])
            fine[i] = st
            coarse[i] = s.step(coarse[i], inc)
    q = np.empty((len(schemes), size))
    for i, s in enumerate(schemes):
        diff = s.output(coarse[i]) - s.output(fine[i])
        q[i] = np.sum(diff * diff, axis=-1)
    return q.sum(axis=1), q @ q.T


@dataclass
class CoupledMoments:
    count: int
    s1: np.ndarray          # sum q_k
    s2: np.ndarray          # sum q_k q_l

    def mean(self):
        return self.s1 / self.count

    def cov(self):
        m = self.mean()
        c = self.s2 / self.count - np.outer(m, m)
        return c * self.count / max(self.count - 1, 1)


def coupled_moments(model, schemes, y0, T, N, fine_factor, paths, seed, batch_size=4096,
                    threads=None, debug=False):
    """Monte Carlo moments of squared coarse-fine endpoint differences for several schemes."""
    if fine_factor < 1 or fine_factor & (fine_factor - 1):
        raise ConfigurationError("fine_factor must be a power of two")
    threads = threads or default_threads()
    h = T / N
    sizes = [min(batch_size, paths - b0) for b0 in range(0, paths, batch_size)]

    def job(b):
        return _batch_moments(model, schemes, y0, h, N, fine_factor, seed, b, sizes[b], debug)

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, range(len(sizes))))
    else:
        parts = [job(b) for b in range(len(sizes))]
    k = len(schemes)
    s1, s2 = np.zeros(k), np.zeros((k, k))
    for a, b in parts:          # fixed batch order keeps sums bit-reproducible
        s1 = s1 + a
        s2 = s2 + b
    return CoupledMoments(paths, s1, s2)


def _schemes(cfg, model, which=("a",)):
    out = []
    for w in which:
        name = cfg.scheme if w == "a" else cfg.scheme_b
        kind = cfg.path_kind if w == "a" else cfg.path_kind_b
        if name is None:
            raise ConfigurationError("a second scheme is required")
        ode = OdeSubstepConfig(substeps=int(cfg.model_params.get("substeps", 1)))
        out.append(SchemeSpec(name, kind, ode).build(model))
    return out


def _s_and_se(mean, var, count):
    s = math.sqrt(max(mean, 0.0))
    if s == 0.0:
        return 0.0, 0.0
    return s, math.sqrt(max(var, 0.0) / count) / (2.0 * s)


def strong_error(cfg, N, seed=None):
    """(S_N, stderr) for cfg.scheme with a same-scheme fine reference."""
    cfg.validate()
    model, y0 = build_model(cfg.model, cfg.model_params)
    y0 = np.asarray(cfg.y0, dtype=float) if cfg.y0 is not None else y0
    sch = _schemes(cfg, model)
    mom = coupled_moments(model, sch, y0, cfg.T, int(N), int(cfg.fine_factor), int(cfg.paths),
                          _seed_for_n(cfg.seed, N) if seed is None else seed,
                          int(cfg.batch_size), cfg.threads, cfg.debug)
    return _s_and_se(mom.mean()[0], mom.cov()[0, 0], mom.count)


# ---------------------------------------------------------------------------
# Reports


@dataclass
class ErrorRow:
    N: int
    h: float
    S_N: float
    stderr: float
    M: int


@dataclass
class ErrorReport:
    rows: list
    slope: float = None
    residual: float = None
    excluded: list = field(default_factory=list)
    flag: str = ""
    metadata: dict = field(default_factory=dict)

    CSV_HEADER = ("N", "h", "S_N", "stderr", "M")

    def to_csv(self):
        lines = [",".join(self.CSV_HEADER)]
        for r in self.rows:
            lines.append(f"{r.N},{r.h!r},{r.S_N!r},{r.stderr!r},{r.M}")
        return "\n".join(lines) + "\n"

    def to_json(self):
        body = {"rows": [asdict(r) for r in self.rows], "slope": self.slope,
                "residual": self.residual, "excluded_N": self.excluded, "flag": self.flag,
                "metadata": self.metadata}
        return json.dumps(body, indent=2) + "\n"


def fit_slope(hs, ss, ses, noise_guard=0.1):
    """Least-squares slope of log2 S against log2 h.

    The largest h is dropped when its standard error exceeds ``noise_guard``
    times its estimate.  Returns (slope, rms residual, excluded h values, flag).
    """
    pts = [(h, s, e) for h, s, e in zip(hs, ss, ses)]
    excluded = []
    if pts:
        big = max(pts, key=lambda t: t[0])
        if big[1] > 0.0 and big[2] > noise_guard * big[1]:
            pts.remove(big)
            excluded.append(big[0])
    pos = [(h, s) for h, s, _ in pts if s > 0.0]
    if len(pos) < 3:
        flag = "zero-error" if all(s == 0.0 for _, s, _ in pts) else "too-few-points"
        return None, None, excluded, flag
    x = np.log2([h for h, _ in pos])
    y = np.log2([s for _, s in pos])
    coef = np.polyfit(x, y, 1)
    res = y - np.polyval(coef, x)
    return float(coef[0]), float(np.sqrt(np.mean(res * res))), excluded, ""


def convergence_study(cfg):
    """S_N for every N in cfg.N (independent seeds per N) and the fitted order."""
    cfg.validate()
    t0 = time.perf_counter()
    model, y0 = build_model(cfg.model, cfg.model_params)
    y0 = np.asarray(cfg.y0, dtype=float) if cfg.y0 is not None else y0
    sch = _schemes(cfg, model)
    rows = []
    for n in cfg.N:
        n = int(n)
        mom = coupled_moments(model, sch, y0, cfg.T, n, int(cfg.fine_factor), int(cfg.paths),
                              _seed_for_n(cfg.seed, n), int(cfg.batch_size), cfg.threads, cfg.debug)
        s, se = _s_and_se(mom.mean()[0], mom.cov()[0, 0], mom.count)
        rows.append(ErrorRow(n, cfg.T / n, s, se, int(cfg.paths)))
    slope, resid, excl, flag = (None, None, [], "too-few-points")
    if len(rows) >= 3:
        slope, resid, excl, flag = fit_slope([r.h for r in rows], [r.S_N for r in rows],
                                             [r.stderr for r in rows])
    meta = {"model": cfg.model, "model_params": cfg.model_params, "scheme": cfg.scheme,
            "path_kind": cfg.path_kind, "T": cfg.T, "fine_factor": cfg.fine_factor,
            "seed": cfg.seed, "batch_size": cfg.batch_size,
            "wall_time_s": time.perf_counter() - t0}
    return ErrorReport(rows, slope, resid, [int(round(cfg.T / h)) for h in excl], flag, meta)


@dataclass
class RatioRow:
    N: int
    h: float
    S_a: float
    stderr_a: float
    S_b: float
    stderr_b: float
    ratio: float
    ratio_stderr: float
    ci_low: float
    ci_high: float
    unstable: bool
    M: int


@dataclass
class RatioReport:
    scheme_a: str
    scheme_b: str
    rows: list
    metadata: dict = field(default_factory=dict)

    def to_csv(self):
        cols = list(RatioRow.__dataclass_fields__)
        lines = [",".join(cols)]
        for r in self.rows:
            vals = []
            for c in cols:
                v = getattr(r, c)
                vals.append(repr(v) if isinstance(v, float) else str(v))
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"

    def to_json(self):
        return json.dumps({"scheme_a": self.scheme_a, "scheme_b": self.scheme_b,
                           "rows": [asdict(r) for r in self.rows], "metadata": self.metadata},
                          indent=2) + "\n"


def ratio_from_moments(mom, i, j):
    """Ratio S_i / S_j with a delta-method standard error from paired samples."""
    m = mom.mean()
    c = mom.cov()
    M = mom.count
    sa, sea = _s_and_se(m[i], c[i, i], M)
    sb, seb = _s_and_se(m[j], c[j, j], M)
    if i == j:
        return sa, sea, sb, seb, 1.0, 0.0, False
    unstable = sb < 3.0 * seb or sb == 0.0
    if sb == 0.0:
        return sa, sea, sb, seb, math.nan, math.nan, True
    r = sa / sb
    if sa == 0.0:
        return sa, sea, sb, seb, 0.0, 0.0, unstable
    var_log = 0.25 * (c[i, i] / (m[i] ** 2) + c[j, j] / (m[j] ** 2) - 2.0 * c[i, j] / (m[i] * m[j])) / M
    se = r * math.sqrt(max(var_log, 0.0))
    return sa, sea, sb, seb, r, se, unstable


def error_ratio_study(cfg, scheme_a=None, scheme_b=None):
    """S_N(a) / S_N(b) per N with both schemes driven by the same Brownian paths."""
    cfg.validate()
    t0 = time.perf_counter()
    if scheme_a:
        cfg.scheme = scheme_a
    if scheme_b:
        cfg.scheme_b = scheme_b
    model, y0 = build_model(cfg.model, cfg.model_params)
    y0 = np.asarray(cfg.y0, dtype=float) if cfg.y0 is not None else y0
    sch = _schemes(cfg, model, ("a", "b"))
    rows = []
    for n in cfg.N:
        n = int(n)
        mom = coupled_moments(model, sch, y0, cfg.T, n, int(cfg.fine_factor), int(cfg.paths),
                              _seed_for_n(cfg.seed, n), int(cfg.batch_size), cfg.threads, cfg.debug)
        rows.append(_ratio_row(mom, 0, 1, n, cfg))
    meta = {"model": cfg.model, "T": cfg.T, "fine_factor": cfg.fine_factor, "seed": cfg.seed,
            "wall_time_s": time.perf_counter() - t0}
    return RatioReport(cfg.scheme, cfg.scheme_b, rows, meta)


def _ratio_row(mom, i, j, n, cfg, z=1.96):
    sa, sea, sb, seb, r, se, unstable = ratio_from_moments(mom, i, j)
    return RatioRow(n, cfg.T / n, sa, sea, sb, seb, r, se, r - z * se, r + z * se, unstable, mom.count)


def write_atomic(path, text):
    """Write text to path via a temporary file in the same directory and a rename."""
    path = os.path.abspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
