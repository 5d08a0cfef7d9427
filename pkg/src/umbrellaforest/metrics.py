"""Forest measurements: branch depth h, insulation sup H, rays, tail curves.

Finite windows cannot see the whole lattice, so every per-site value carries
a status: EXACT, or AT_LEAST when the defining set may continue beyond a
window face.  Downstream estimators keep two censoring brackets instead of
pretending the window is the full lattice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forest import Forest
from .lattice import Box, Site, Window, l1_ball_offsets, sphere_count
from .stats import wilson_interval


@dataclass(frozen=True)
class StatusField:
    """Integer per-site value with an exactness flag (False = lower bound)."""

    window: Window
    zeta: int
    value: np.ndarray  # int32 over window box
    exact: np.ndarray  # bool

    @property
    def box(self) -> Box:
        return self.window.box

    def at(self, x: Site) -> tuple[int, bool]:
        loc = self.box.local(x)
        return int(self.value[loc]), bool(self.exact[loc])


def _diagonal_order(shape: tuple[int, ...], ascending: bool):
    """Flat site indices grouped by coordinate sum, in sweep order."""
    grids = np.indices(shape)
    sums = grids.sum(axis=0).ravel()
    order = np.argsort(sums, kind="stable")
    sorted_sums = sums[order]
    bounds = np.searchsorted(sorted_sums, np.arange(sorted_sums[-1] + 2))
    groups = [order[bounds[s]:bounds[s + 1]] for s in range(sorted_sums[-1] + 1)]
    if not ascending:
        groups = groups[::-1]
    return groups, grids.reshape(len(shape), -1)


def _strides(shape: tuple[int, ...]) -> list[int]:
    st = [1] * len(shape)
    for j in range(len(shape) - 2, -1, -1):
        st[j] = st[j + 1] * shape[j + 1]
    return st


def compute_h(forest: Forest) -> StatusField:
    """Longest progeny branch length at every window site.

    Sites are swept so that all in-window children of a site are finished
    before the site itself; h = 1 + max over children, 0 at childless sites.
    A site is censored (AT_LEAST) when it sits on the face that children
    enter from, or when any child is censored.
    """
    shape = forest.box.shape
    d = forest.dim
    zeta = forest.zeta
    groups, coords = _diagonal_order(shape, ascending=zeta == 1)
    strides = _strides(shape)
    axis_flat = forest.axis.ravel().astype(np.int16)
    h = np.zeros(len(axis_flat), dtype=np.int32)
    exact = np.ones(len(axis_flat), dtype=bool)

    for idx in groups:
        if idx.size == 0:
            continue
        best = np.zeros(idx.size, dtype=np.int32)
        ok = np.ones(idx.size, dtype=bool)
        for j in range(1, d + 1):
            cj = coords[j - 1, idx]
            if zeta == 1:
                valid = cj > 0
                child = idx - strides[j - 1]
            else:
                valid = cj < shape[j - 1] - 1
                child = idx + strides[j - 1]
            ok &= valid  # face sites: a child may exist outside the window
            child = np.where(valid, child, 0)
            is_child = valid & (axis_flat[child] == j)
            np.maximum(best, np.where(is_child, h[child] + 1, 0), out=best)
            ok &= ~(is_child & ~exact[child])
        h[idx] = best
        exact[idx] = ok
    h = h.reshape(shape)
    exact = exact.reshape(shape)
    h.setflags(write=False)
    exact.setflags(write=False)
    return StatusField(window=forest.window, zeta=zeta, value=h, exact=exact)


def _shifted(arr: np.ndarray, offset: tuple[int, ...], fill):
    """arr translated by `offset` (value at x comes from x - offset)."""
    out = np.full_like(arr, fill)
    src = []
    dst = []
    for o, s in zip(offset, arr.shape):
        if abs(o) >= s:
            return out
        if o >= 0:
            src.append(slice(0, s - o))
            dst.append(slice(o, s))
        else:
            src.append(slice(-o, s))
            dst.append(slice(0, s + o))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def compute_insulation_sup(h: StatusField, beta: float) -> StatusField:
    """H(x): the largest h(y) among sites y whose insulation ball covers x.

    Every y stamps its h value over the closed l1-ball of real radius
    h(y)^beta.  Radii are compared exactly: an integer offset belongs to the
    ball iff it is <= floor(h^beta).  Censoring: x inherits AT_LEAST from
    any censoring stamp that reaches it, and sites within reach of a window
    face are censored outright, since an unseen outside tree could stamp in.
    """
    if not 0 < beta < 1:
        raise ValueError("beta must be in (0, 1)")
    shape = h.box.shape
    d = h.window.dim
    hv = h.value
    radius = np.floor(np.power(np.maximum(hv, 0).astype(np.float64), beta)).astype(np.int64)
    out = np.full(shape, -1, dtype=np.int32)
    unc_reach = np.zeros(shape, dtype=bool)
    for r in np.unique(radius):
        mask = radius == r
        vals = np.where(mask, hv, -1).astype(np.int32)
        uncs = mask & ~h.exact
        for off in l1_ball_offsets(d, int(r)):
            np.maximum(out, _shifted(vals, off, -1), out=out)
            unc_reach |= _shifted(uncs, off, False)
    out = np.maximum(out, 0)

    max_h = int(hv.max()) if hv.size else 0
    band = max_h ** beta if max_h > 0 else 0.0
    face_dist = h.box.boundary_distance()
    exact = ~unc_reach & ~(face_dist < band)
    out.setflags(write=False)
    exact.setflags(write=False)
    return StatusField(window=h.window, zeta=h.zeta, value=out, exact=exact)


def ray(forest: Forest, x: Site, max_steps: int | None = None) -> list[Site]:
    """Ancestor chain from x, inclusive, until window exit or max_steps."""
    box = forest.box
    out = [x]
    cur = x
    while box.contains(cur):
        nxt = forest.parent_of(cur)
        if not box.contains(nxt):
            break
        out.append(nxt)
        cur = nxt
        if max_steps is not None and len(out) > max_steps:
            break
    return out


def interior_box(window: Window, buffer: int | None = None) -> Box:
    """Sampling region: the window shrunk to keep face effects at bay."""
    if buffer is None:
        buffer = min(window.shape) // 4
    return window.box.shrink(buffer)


def interior_mask(field: StatusField, buffer: int | None = None) -> np.ndarray:
    inner = interior_box(field.window, buffer)
    lo = field.box.local(inner.lo)
    sl = tuple(slice(l, l + s) for l, s in zip(lo, inner.shape))
    mask = np.zeros(field.box.shape, dtype=bool)
    mask[sl] = True
    return mask


@dataclass
class TailEstimate:
    """Censoring-bracketed survival counts of a depth field over replicas.

    For threshold n: the lower bracket treats every censored value below n
    as < n, the upper bracket as >= n.  The truth, were the window infinite,
    lies between them.
    """

    dim: int
    grid: list[int]
    count_lo: list[int]
    count_hi: list[int]
    total: int

    def rows(self):
        out = []
        for n, clo, chi in zip(self.grid, self.count_lo, self.count_hi):
            p_lo = clo / self.total
            p_hi = chi / self.total
            ci_lo = wilson_interval(clo, self.total)
            ci_hi = wilson_interval(chi, self.total)
            out.append({
                "n": n, "count_geq_lo": clo, "count_geq_hi": chi, "total": self.total,
                "p_lo": p_lo, "p_hi": p_hi,
                "ci_lo": ci_lo[0], "ci_hi": ci_hi[1],
                "n_pow_dm1_p_lo": n ** (self.dim - 1) * p_lo,
                "n_pow_dm1_p_hi": n ** (self.dim - 1) * p_hi,
            })
        return out

    def to_csv(self, path: str):
        cols = ["n", "count_geq_lo", "count_geq_hi", "total", "p_lo", "p_hi",
                "ci_lo", "ci_hi", "n_pow_dm1_p_lo", "n_pow_dm1_p_hi"]
        with open(path, "w") as f:
            f.write(",".join(cols) + "\n")
            for row in self.rows():
                f.write(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                                 for c in cols) + "\n")


def empty_tail(dim: int, grid: list[int]) -> TailEstimate:
    return TailEstimate(dim=dim, grid=list(grid),
                        count_lo=[0] * len(grid), count_hi=[0] * len(grid), total=0)


def accumulate_tail(est: TailEstimate, values: np.ndarray, exact: np.ndarray):
    """Merge one replica's samples into the running bracketed counts."""
    v = values.ravel()
    e = exact.ravel()
    if v.size == 0:
        raise ValueError("empty sample")
    est.total += v.size
    for k, n in enumerate(est.grid):
        geq = v >= n
        est.count_lo[k] += int(np.count_nonzero(geq))
        est.count_hi[k] += int(np.count_nonzero(geq | ~e))


def tail_estimate(dim: int, grid: list[int], samples) -> TailEstimate:
    """Pooled bracketed tail curve over an iterable of (values, exact) pairs."""
    est = empty_tail(dim, grid)
    got = False
    for values, exact in samples:
        accumulate_tail(est, values, exact)
        got = True
    if not got:
        raise ValueError("empty sample")
    return est


def ray_sphere_counts(forest: Forest, start: Site, n_max: int) -> list[int]:
    """#(ancestors of `start` at l1-distance n from it), n = 0..n_max.

    Directedness makes this exactly one per reachable n; the count drops to
    zero once the chain leaves the window.
    """
    chain = ray(forest, start, max_steps=n_max + 1)
    counts = [0] * (n_max + 1)
    for site in chain:
        dist = sum(abs(a - b) for a, b in zip(site, start))
        if dist <= n_max:
            counts[dist] += 1
    return counts
