"""Brownian step statistics and dyadic refinement.

A step over [s, t] with h = t - s is summarised per noise coordinate by the
increment W, the space-time Levy area H, the swing n = sgn(N) where N is the
gap H_left - H_right between the two half-interval areas, and optionally the
space-time-time area K.  All arrays carry a trailing noise axis of length d;
any leading axes are batch (path) and step axes.
"""

from dataclasses import dataclass, replace
import csv
import math

import numpy as np

from .errors import ConfigurationError, DomainError

__all__ = [
    "StepIncrement",
    "DyadicBrownianTree",
    "sgn",
    "sample_increment",
    "sample_conditional_swing_gap",
    "refine",
    "merge",
    "merge_pairs",
    "stream_for",
    "dump_increments",
    "load_increments",
]

# Residual variance factor of K given the swing gap N: 1/720 - 1/768.
_K_RESIDUAL = 1.0 / 11520.0


def sgn(x):
    """Sign with sgn(0) = +1, returned as float64 +-1."""
    return np.where(np.asarray(x) >= 0.0, 1.0, -1.0)


@dataclass(frozen=True)
class StepIncrement:
    h: float
    w: np.ndarray
    hst: np.ndarray
    n: np.ndarray
    gap: np.ndarray = None
    k: np.ndarray = None

    def __post_init__(self):
        if not self.h > 0.0:
            raise DomainError(f"step length must be positive, got {self.h}")

    @property
    def d(self):
        return self.w.shape[-1]

    @property
    def shape(self):
        return self.w.shape

    @property
    def has_k(self):
        return self.k is not None

    def __getitem__(self, index):
        """Index the leading (batch/step) axes; the noise axis is kept."""
        if not isinstance(index, tuple):
            index = (index,)
        if not any(i is Ellipsis for i in index):
            index = index + (Ellipsis,)

        def pick(a):
            return None if a is None else a[index]

        return StepIncrement(self.h, pick(self.w), pick(self.hst), pick(self.n),
                             pick(self.gap), pick(self.k))

    def scaled(self, c):
        """Statistics of the same path observed with time rescaled by c > 0."""
        r = math.sqrt(c)
        return StepIncrement(self.h * c, self.w * r, self.hst * r, self.n,
                             None if self.gap is None else self.gap * r,
                             None if self.k is None else self.k * r)

    def without_k(self):
        return replace(self, k=None)

    def with_gap(self, rng):
        """Return a copy carrying a swing gap, sampled conditionally on n if absent."""
        if self.gap is not None:
            return self
        return replace(self, gap=sample_conditional_swing_gap(rng, self.n, self.h))


def _check_h(h):
    if not (isinstance(h, (int, float, np.floating)) and h > 0.0):
        raise DomainError(f"step length must be a positive number, got {h!r}")


def sample_increment(rng, h, d=1, with_k=False, size=()):
    """Draw (W, H, n) and optionally K for one step of length h.

    The returned arrays have shape ``size + (d,)``.
    """
    _check_h(h)
    if d < 1:
        raise DomainError(f"dimension must be >= 1, got {d}")
    if isinstance(size, int):
        size = (size,)
    shape = tuple(size) + (d,)
    z = rng.standard_normal((4 if with_k else 3,) + shape)
    sh = math.sqrt(h)
    w = z[0] * sh
    hst = z[1] * (sh / math.sqrt(12.0))
    gap = z[2] * (sh / math.sqrt(12.0))
    k = None
    if with_k:
        k = gap / 8.0 + z[3] * math.sqrt(h * _K_RESIDUAL)
    return StepIncrement(float(h), w, hst, sgn(gap), gap, k)


def sample_conditional_swing_gap(rng, n, h):
    """Swing gap N given its sign n: n|Z| with Z ~ N(0, h/12)."""
    _check_h(h)
    n = np.asarray(n, dtype=float)
    if np.any((n != 1.0) & (n != -1.0)):
        raise DomainError("swing values must be +1 or -1")
    z = np.abs(rng.standard_normal(n.shape)) * math.sqrt(h / 12.0)
    return n * z


def refine(parent, rng):
    """Split a step at its midpoint, returning (left, right).

    Uses the parent's swing gap; each child receives a fresh gap of its own.
    """
    if parent.k is not None:
        raise ConfigurationError(
            "refine is only defined for increments without K; generate the "
            "finest level first and merge upwards")
    parent = parent.with_gap(rng)
    h = parent.h
    z = rng.standard_normal((3,) + parent.shape)
    zz = z[0] * math.sqrt(h / 16.0)
    half = h / 2.0
    wl = parent.w / 2.0 + 1.5 * parent.hst + zz
    wr = parent.w / 2.0 - 1.5 * parent.hst - zz
    base = parent.hst / 4.0 - zz / 2.0
    hl = base + parent.gap / 2.0
    hr = base - parent.gap / 2.0
    s = math.sqrt(half / 12.0)
    gl = z[1] * s
    gr = z[2] * s
    return (StepIncrement(half, wl, hl, sgn(gl), gl),
            StepIncrement(half, wr, hr, sgn(gr), gr))


def merge(left, right):
    """Statistics of the union of two adjacent steps of equal length."""
    if left.h != right.h:
        raise DomainError(f"cannot merge steps of lengths {left.h} and {right.h}")
    w = left.w + right.w
    hst = 0.25 * (left.w - right.w) + 0.5 * (left.hst + right.hst)
    gap = left.hst - right.hst
    k = None
    if left.k is not None and right.k is not None:
        k = 0.125 * gap + 0.25 * (left.k + right.k)
    return StepIncrement(2.0 * left.h, w, hst, sgn(gap), gap, k)


def merge_pairs(inc, axis=-2):
    """Merge adjacent pairs of steps along ``axis`` (default: just before the noise axis)."""
    ax = axis % inc.w.ndim
    if ax == inc.w.ndim - 1:
        raise DomainError("cannot merge along the noise axis")
    m = inc.w.shape[ax]
    if m % 2:
        raise DomainError(f"need an even number of steps to merge, got {m}")
    lead = (slice(None),) * ax
    return merge(inc[lead + (slice(0, None, 2),)], inc[lead + (slice(1, None, 2),)])


def stream_for(seed, path_index, step_index, level):
    """Independent, reproducible generator keyed by (seed, path, step, level)."""
    key = [int(seed), int(path_index), int(step_index), int(level)]
    if min(key) < 0:
        raise DomainError("stream keys must be non-negative integers")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


@dataclass(frozen=True)
class DyadicBrownianTree:
    """Finest-level increments plus every coarser level obtained by merging.

    ``levels[0]`` holds the leaves; ``levels[j]`` has 2**-j as many steps.
    Steps run along ``axis``, by default the axis before the noise axis.
    """
    levels: tuple

    axis: int = -2

    @classmethod
    def from_leaves(cls, leaves, depth, axis=-2):
        levels = [leaves]
        for _ in range(depth):
            levels.append(merge_pairs(levels[-1], axis))
        return cls(tuple(levels), axis)

    @classmethod
    def sample(cls, rng, h_leaf, num_leaves, depth, d=1, with_k=False, batch=()):
        if isinstance(batch, int):
            batch = (batch,)
        if num_leaves % (1 << depth):
            raise DomainError("number of leaves must be divisible by 2**depth")
        leaves = sample_increment(rng, h_leaf, d, with_k, tuple(batch) + (num_leaves,))
        return cls.from_leaves(leaves, depth)

    @property
    def depth(self):
        return len(self.levels) - 1

    @property
    def leaves(self):
        return self.levels[0]

    def level(self, j):
        return self.levels[j]

    def is_consistent(self):
        """True when every stored parent equals the merge of its children bit for bit."""
        for child, parent in zip(self.levels[:-1], self.levels[1:]):
            again = merge_pairs(child, self.axis)
            for name in ("w", "hst", "n", "gap", "k"):
                a, b = getattr(again, name), getattr(parent, name)
                if (a is None) != (b is None):
                    return False
                if a is not None and not np.array_equal(a, b):
                    return False
            if again.h != parent.h:
                return False
        return True


def _columns(d, has_k):
    cols = ["path", "step", "h"]
    cols += [f"w_{i + 1}" for i in range(d)]
    cols += [f"hst_{i + 1}" for i in range(d)]
    if has_k:
        cols += [f"k_{i + 1}" for i in range(d)]
    cols += [f"n_{i + 1}" for i in range(d)]
    return cols


def _table(inc):
    """Rows (path, step, h, w..., hst..., k..., n...) from shape (paths, steps, d)."""
    w = inc.w
    if w.ndim == 2:
        w = w[None]
    paths, steps, d = w.shape
    parts = [inc.w, inc.hst] + ([inc.k] if inc.k is not None else []) + [inc.n]
    parts = [np.reshape(p, (paths, steps, d)) for p in parts]
    pi, si = np.meshgrid(np.arange(paths), np.arange(steps), indexing="ij")
    head = np.stack([pi, si, np.full((paths, steps), inc.h)], axis=-1).astype(float)
    return np.concatenate([head] + parts, axis=-1).reshape(paths * steps, -1)


def dump_increments(path, inc, fmt="csv"):
    """Write increments of shape (paths, steps, d) as CSV or raw little-endian float64."""
    table = _table(inc)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_columns(inc.d, inc.has_k))
            for row in table:
                writer.writerow([int(row[0]), int(row[1])] + [repr(float(x)) for x in row[2:]])
    elif fmt == "binary":
        table.astype("<f8").tofile(path)
    else:
        raise ConfigurationError(f"unknown dump format {fmt!r}")


def load_increments(path, d, has_k=False, fmt="csv", rng=None):
    """Read a dump back into a StepIncrement of shape (paths, steps, d).

    Swing gaps are not stored, so they are resampled conditionally on n when
    ``rng`` is given.
    """
    width = 3 + d * (4 if has_k else 3)
    if fmt == "csv":
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    elif fmt == "binary":
        table = np.fromfile(path, dtype="<f8")
        if table.size % width:
            raise DomainError("binary dump size does not match the column layout")
        table = table.reshape(-1, width)
    else:
        raise ConfigurationError(f"unknown dump format {fmt!r}")
    if table.shape[1] != width:
        raise DomainError(f"expected {width} columns, found {table.shape[1]}")
    paths = int(table[:, 0].max()) + 1
    steps = int(table[:, 1].max()) + 1
    h = float(table[0, 2])
    body = table[:, 3:].reshape(paths, steps, -1)
    w, hst = body[..., :d], body[..., d:2 * d]
    k = body[..., 2 * d:3 * d] if has_k else None
    n = body[..., -d:]
    inc = StepIncrement(h, w, hst, n, None, k)
    return inc.with_gap(rng) if rng is not None else inc
