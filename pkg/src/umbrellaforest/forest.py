"""Building directed spanning forests from the umbrella-length field.

Each site x carries, per axis i, the length of the largest umbrella whose
i-side passes through x; the parent direction is the axis whose protecting
umbrellas are smallest.  The supremum is truncated to vertices within an
l-infinity radius R (the field margin), which is the honest finite-window
version of the construction: the per-site probability that a farther vertex
would have dominated is bounded and reported, never ignored.

The kernel groups vertices by effective integer reach e = min(floor(L), R).
A vertex of reach e stamps its own length over the block of sites at
offsets {0} x [1, e]^(d-1) on each side.  Dense reach levels are swept with
separable trailing-window maximum filters; rare long reaches are painted
directly.  Both paths are exact and are cross-checked against brute
enumeration in the test suite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter1d

from . import rng
from .lattice import Box, Site, Window

FOREST_MAGIC = b"UMBA"
FOREST_VERSION = 1

UNCERTAIN_BIT = 0x80

# reach levels with at most this many vertices are painted site by site
_PAINT_COUNT_CUTOFF = 4096
# d=2 segment painting takes over above this reach
_SEGMENT_LEVEL_CUTOFF = 4


def _trailing_max(arr: np.ndarray, width: int, axis: int) -> np.ndarray:
    """out[x] = max over arr[x - width .. x - 1] along `axis`, -inf padded."""
    shifted = np.full_like(arr, -np.inf)
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    src[axis] = slice(0, arr.shape[axis] - 1)
    dst[axis] = slice(1, None)
    shifted[tuple(dst)] = arr[tuple(src)]
    return maximum_filter1d(shifted, size=width, axis=axis, mode="constant",
                            cval=-np.inf, origin=(width - 1) // 2)


def _paint_segments(out_flat: np.ndarray, starts: np.ndarray, lengths: np.ndarray,
                    values: np.ndarray):
    """max-paint contiguous flat segments [start, start+length) with values."""
    keep = lengths > 0
    starts, lengths, values = starts[keep], lengths[keep], values[keep]
    if starts.size == 0:
        return
    total = int(lengths.sum())
    step = np.ones(total, dtype=np.int64)
    step[0] = starts[0]
    ends = np.cumsum(lengths)[:-1]
    step[ends] = starts[1:] - (starts[:-1] + lengths[:-1] - 1)
    idx = np.cumsum(step)
    np.maximum.at(out_flat, idx, np.repeat(values, lengths))


def directed_supremum(values: np.ndarray, axis_i: int, reach_cap: int) -> np.ndarray:
    """Per-site sup of L(y) over vertices whose side `axis_i` covers the site.

    `values` is the length field over a box; vertex y covers x on side i
    when x - y is zero on axis i and lies in [1, min(floor(L(y)), cap)] on
    every other axis.  Orientation is the positive one; callers reflect the
    array for the opposite orientation.  Returns -inf where no in-box vertex
    covers a site.
    """
    d = values.ndim
    ax = axis_i - 1
    perp = [j for j in range(d) if j != ax]
    reach = np.minimum(np.floor(values).astype(np.int64), reach_cap)
    out = np.full_like(values, -np.inf)
    counts = np.bincount(reach.ravel().clip(min=0))

    paint_sites: list[tuple[np.ndarray, ...]] = []
    for level in range(1, counts.size):
        n_level = int(counts[level])
        if n_level == 0:
            continue
        if d == 2 and level > _SEGMENT_LEVEL_CUTOFF:
            paint_sites.append(np.nonzero(reach == level))
            continue
        if d > 2 and n_level <= _PAINT_COUNT_CUTOFF:
            paint_sites.append(np.nonzero(reach == level))
            continue
        masked = np.where(reach == level, values, -np.inf)
        for j in perp:
            masked = _trailing_max(masked, level, j)
        np.maximum(out, masked, out=out)

    if paint_sites:
        if d == 2:
            p = perp[0]
            # paint along a contiguous last axis
            if p == 1:
                canvas = out
            else:
                canvas = np.ascontiguousarray(out.T)
            m = canvas.shape[1]
            flat = canvas.reshape(-1)
            for where in paint_sites:
                rows, cols = (where if p == 1 else (where[1], where[0]))
                r = reach[where]
                lens = np.minimum(r, m - 1 - cols)
                starts = rows * m + cols + 1
                _paint_segments(flat, starts, lens, values[where])
            if p == 0:
                np.maximum(out, canvas.T, out=out)
        else:
            for where in paint_sites:
                coords = np.stack(where, axis=1)
                rs = reach[where]
                vs = values[where]
                for c, r, v in zip(coords, rs, vs):
                    sl = []
                    for j in range(d):
                        if j == ax:
                            sl.append(int(c[j]))
                        else:
                            sl.append(slice(c[j] + 1, min(c[j] + int(r) + 1, values.shape[j])))
                    block = out[tuple(sl)]
                    np.maximum(block, v, out=block)
    return out


def lambda_field(values: np.ndarray, zeta: int, reach_cap: int) -> np.ndarray:
    """All-axis truncated suprema, shape (d, *values.shape)."""
    d = values.ndim
    flip = tuple(slice(None, None, -1) for _ in range(d))
    work = values if zeta == 1 else np.ascontiguousarray(values[flip])
    out = np.empty((d,) + values.shape)
    for i in range(1, d + 1):
        lam = directed_supremum(work, i, reach_cap)
        if zeta == -1:
            lam = lam[flip]
        out[i - 1] = lam
    return out


@dataclass(frozen=True)
class Forest:
    """Parent directions over a window: a(x) = x + zeta * e_axis(x)."""

    window: Window
    zeta: int
    axis: np.ndarray        # int8 over window box, values 1..d
    uncertain: np.ndarray   # bool, truncation-tie flag
    radius: int             # truncation radius used for the suprema
    miss_bound: float       # analytic per-site, per-axis miss probability bound

    @property
    def dim(self) -> int:
        return self.window.dim

    @property
    def box(self) -> Box:
        return self.window.box

    def axis_at(self, x: Site) -> int:
        return int(self.axis[self.box.local(x)])

    def parent_of(self, x: Site) -> Site:
        j = self.axis_at(x)
        return tuple(c + (self.zeta if k == j - 1 else 0) for k, c in enumerate(x))


def miss_probability_bound(tail_weight: float, tail_start: int, dim: int, radius: int) -> float:
    """Upper bound on P[some vertex beyond radius R dominates a side supremum].

    A vertex at l-infinity distance n > R covering a fixed site needs
    L >= n; there are at most n^(d-1) - (n-1)^(d-1) <= (d-1) n^(d-2) such
    vertices per shell, each qualifying with probability tail_weight * n^-d.
    """
    if radius < tail_start:
        return 1.0
    total = 0.0
    n = radius + 1
    while n <= radius + 4096:
        shell = n ** (dim - 1) - (n - 1) ** (dim - 1)
        total += tail_weight * n ** (-dim) * shell
        n += 1
    total += tail_weight * (dim - 1) / (n - 1)  # integral bound for the rest
    return min(total, 1.0)


def lambda_at(field, x: Site, axis_i: int, radius: int, zeta: int = 1) -> tuple[float, bool]:
    """Scalar truncated supremum at one site, with its exactness flag.

    The flag is False when the radius-R neighborhood of x is not fully
    contained in the stored field box.  Window sites keep a True flag as
    long as R does not exceed the margin.
    """
    box = field.box
    if field.window.box.contains(x) and radius > field.window.margin:
        raise ValueError(
            f"radius {radius} exceeds margin {field.window.margin}; "
            f"regenerate the field with margin >= {radius}")
    exact = all(l <= c - radius and c + radius <= h
                for l, c, h in zip(box.lo, x, box.hi))
    d = box.dim
    best = -np.inf
    import itertools
    for offs in itertools.product(range(1, radius + 1), repeat=d - 1):
        delta = list(offs)
        delta.insert(axis_i - 1, 0)
        y = tuple(c - zeta * o for c, o in zip(x, delta))
        if not box.contains(y):
            continue
        L = field.value_at(y)
        if max(offs) <= L:
            best = max(best, L)
    return float(best), exact


def choose_direction(lams) -> tuple[int, bool]:
    """Axis of the smallest protecting umbrella; ties take the smallest axis.

    Ties have probability zero under the atomless law and can only arise
    from truncation; the tie flag marks the site as uncertain.
    """
    arr = np.asarray(lams, dtype=np.float64)
    j = int(np.argmin(arr))
    tie = bool(np.sum(arr == arr[j]) > 1)
    return j + 1, tie


def build_forest(field, zeta: int, radius: int | None = None) -> Forest:
    """Assign the parent axis at every window site.

    Requires the field margin to cover the truncation radius so that every
    window site sees its complete radius-R vertex neighborhood.
    """
    if zeta not in (1, -1):
        raise ValueError("orientation must be +1 or -1")
    p = field.params
    if radius is None:
        radius = p.window.margin
    if radius < 1:
        raise ValueError("truncation radius must be >= 1")
    if radius > p.window.margin:
        raise ValueError(f"radius {radius} exceeds margin {p.window.margin}; "
                         f"required margin {radius}")
    lam = lambda_field(field.values, zeta, radius)
    # cut the margin shell off, keeping the window box
    inner = tuple(slice(p.window.margin, p.window.margin + s) for s in p.window.shape)
    lam = lam[(slice(None),) + inner]
    axis = (np.argmin(lam, axis=0) + 1).astype(np.int8)
    low = np.min(lam, axis=0)
    uncertain = (np.sum(lam == low[None], axis=0) > 1)
    miss = miss_probability_bound(p.tail_weight, p.tail_start, p.dim, radius)
    axis.setflags(write=False)
    uncertain.setflags(write=False)
    return Forest(window=p.window, zeta=zeta, axis=axis, uncertain=uncertain,
                  radius=radius, miss_bound=miss)


def example1_forest(seed: int, window: Window, d: int) -> Forest:
    """Baseline forest: independent uniform parent axis at every site."""
    box = Box(window.lo, window.hi)
    grids = box.coordinate_grids()
    u = rng.uniform_vec(rng.stream("example1", seed), [g.ravel() for g in grids])
    axis = (np.minimum((u * d).astype(np.int64), d - 1) + 1).astype(np.int8).reshape(box.shape)
    uncertain = np.zeros(box.shape, dtype=bool)
    axis.setflags(write=False)
    uncertain.setflags(write=False)
    return Forest(window=window, zeta=1, axis=axis, uncertain=uncertain,
                  radius=0, miss_bound=0.0)


# ---------------------------------------------------------------------------
# binary dump
# ---------------------------------------------------------------------------

def write_forest(forest: Forest, path: str):
    box = forest.box
    with open(path, "wb") as f:
        f.write(FOREST_MAGIC)
        f.write(struct.pack("<IIb", FOREST_VERSION, forest.dim, forest.zeta))
        for l, h in zip(box.lo, box.hi):
            f.write(struct.pack("<qq", l, h))
        f.write(struct.pack("<IdI", forest.radius, forest.miss_bound, forest.window.margin))
        codes = forest.axis.astype(np.uint8) | (forest.uncertain.astype(np.uint8) << 7)
        f.write(codes.tobytes(order="C"))


def read_forest(path: str) -> Forest:
    with open(path, "rb") as f:
        if f.read(4) != FOREST_MAGIC:
            raise ValueError("bad forest dump magic")
        version, dim, zeta = struct.unpack("<IIb", f.read(9))
        if version != FOREST_VERSION:
            raise ValueError(f"unsupported forest dump version {version}")
        lo, hi = [], []
        for _ in range(dim):
            l, h = struct.unpack("<qq", f.read(16))
            lo.append(l)
            hi.append(h)
        radius, miss, margin = struct.unpack("<IdI", f.read(16))
        window = Window(tuple(lo), tuple(hi), margin)
        box = window.box
        codes = np.frombuffer(f.read(box.size), dtype=np.uint8).reshape(box.shape)
    axis = (codes & 0x7F).astype(np.int8)
    uncertain = (codes & UNCERTAIN_BIT) != 0
    axis.setflags(write=False)
    return Forest(window=window, zeta=int(zeta), axis=axis, uncertain=uncertain,
                  radius=int(radius), miss_bound=float(miss))
