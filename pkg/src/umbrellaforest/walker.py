"""Random walks in a fixed environment: trapping, drift, exit-time tails.

Replicas are simulated in one vectorized batch; each replica's step noise
is a counter-based 64-bit word keyed by (seed, replica, step), so traces
are reproducible individually and paired-seed couplings are exact.  A walk
that reaches the window safety buffer is truncated there and flagged: the
window cannot testify about anything beyond it, so truncated survivors are
censored observations, never fabricated ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import rng
from .lattice import Box, Site, all_directions
from .stats import wilson_interval


@dataclass(frozen=True)
class WalkConfig:
    start: Site
    horizon: int
    replicas: int
    seed: int
    buffer: int = 2

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.replicas < 1:
            raise ValueError("need at least one replica")


def row_thresholds(rows: np.ndarray) -> np.ndarray:
    """Cumulative float rows scaled against the 64-bit word range.

    The float comparison costs a per-step sampling bias below 2^-52 of the
    exact rational row, far under anything the estimators can resolve.
    """
    cum = np.cumsum(rows, axis=-1)
    th = cum * 2.0 ** 64
    th[..., -1] = 2.0 ** 64
    return th


def step(row_fractions: list[Fraction], word: int) -> int:
    """Direction index from one exact rational row and one 64-bit word.

    Integer comparison against exact cumulative thresholds: direction k is
    chosen when word falls in [floor(2^64 cum_{k-1}), floor(2^64 cum_k)).
    """
    acc = Fraction(0)
    for k, p in enumerate(row_fractions):
        acc += p
        if word < (acc.numerator << 64) // acc.denominator:
            return k
    return len(row_fractions) - 1


@dataclass
class WalkBatch:
    """Vectorized traces: exit bookkeeping plus the full drift history."""

    config: WalkConfig
    exit_step: np.ndarray       # int64, -1 = no exit observed
    truncated_at: np.ndarray    # int64, -1 = never hit the buffer
    effective_horizon: np.ndarray  # int64: horizon or truncation step
    proj: np.ndarray            # (replicas, horizon+1) signed drift projection
    positions: np.ndarray       # (replicas, d) final positions
    spine_visits: np.ndarray    # int64 steps spent on tracked spine sites

    def drift_at(self, n: np.ndarray) -> np.ndarray:
        """proj at per-replica step n, divided by n (NaN where unreached)."""
        k = np.arange(self.config.replicas)
        n = np.asarray(n, dtype=np.int64)
        ok = (n >= 1) & (n <= self.effective_horizon)
        vals = np.full(self.config.replicas, np.nan)
        vals[ok] = self.proj[k[ok], n[ok]] / n[ok]
        return vals

    def min_tail_drift(self) -> np.ndarray:
        """Per-replica min over n in [N'/2, N'] of proj_n / n; N' observed."""
        out = np.full(self.config.replicas, np.nan)
        for k in range(self.config.replicas):
            n1 = int(self.effective_horizon[k])
            if self.exit_step[k] >= 0 or n1 < 2:
                continue
            ns = np.arange(max(n1 // 2, 1), n1 + 1)
            out[k] = float(np.min(self.proj[k, ns] / ns))
        return out


def run_walks(env_rows: np.ndarray, box: Box, inside_mask: np.ndarray,
              config: WalkConfig, orientation_sign: int = 1,
              spine_mask: np.ndarray | None = None) -> WalkBatch:
    """Walk `replicas` chains for `horizon` steps in a per-site row field.

    env_rows: (*box.shape, 2d) float rows; inside_mask: the membership event
    being tracked (exit = first step landing outside it).  A walk that exits
    or hits the buffer freezes in place so batch arithmetic stays branch-free.
    """
    d = box.dim
    R = config.replicas
    dirs = all_directions(d)
    steps = np.array([dr.vector(d) for dr in dirs], dtype=np.int64)
    th = row_thresholds(env_rows.reshape(-1, 2 * d).astype(np.float64))
    inside_flat = inside_mask.ravel()
    spine_flat = spine_mask.ravel() if spine_mask is not None else None

    lo = np.asarray(box.lo, dtype=np.int64)
    hi = np.asarray(box.hi, dtype=np.int64)
    strides = np.array([int(np.prod(box.shape[j + 1:], dtype=np.int64))
                        for j in range(d)], dtype=np.int64)

    pos = np.tile(np.asarray(config.start, dtype=np.int64), (R, 1))
    active = np.ones(R, dtype=bool)
    exit_step = np.full(R, -1, dtype=np.int64)
    truncated_at = np.full(R, -1, dtype=np.int64)
    spine_visits = np.zeros(R, dtype=np.int64)
    replica_ids = np.arange(R, dtype=np.int64)
    proj = np.zeros((R, config.horizon + 1), dtype=np.float32)

    seed = rng.stream("walk", config.seed)
    start_sum = sum(config.start)
    for t in range(1, config.horizon + 1):
        if not active.any():
            proj[:, t:] = proj[:, t - 1][:, None]
            break
        flat = ((pos - lo) * strides).sum(axis=1)
        words = rng.u64_vec(seed, [replica_ids, np.full(R, t, dtype=np.int64)])
        pick = (words.astype(np.float64)[:, None] >= th[flat]).sum(axis=1)
        pos = np.where(active[:, None], pos + steps[pick], pos)

        flat = ((pos - lo) * strides).sum(axis=1).clip(0, inside_flat.size - 1)
        outside = active & ~inside_flat[flat]
        exit_step[outside] = t
        active &= ~outside

        near_edge = ((pos - lo < config.buffer) | (hi - pos < config.buffer)).any(axis=1)
        newly_trunc = active & near_edge
        truncated_at[newly_trunc] = t
        active &= ~near_edge

        if spine_flat is not None:
            spine_visits[active & spine_flat[flat]] += 1
        proj[:, t] = orientation_sign * (pos.sum(axis=1) - start_sum)

    effective = np.where(truncated_at >= 0, truncated_at, config.horizon)
    effective = np.where(exit_step >= 0, np.minimum(effective, exit_step), effective)
    return WalkBatch(config=config, exit_step=exit_step, truncated_at=truncated_at,
                     effective_horizon=effective, proj=proj,
                     positions=pos, spine_visits=spine_visits)


@dataclass
class TrapEstimate:
    """Survival (no exit observed) with its interval, drift quantiles, and
    the exit-time histogram.  Truncated-while-inside runs are censored
    survivors, reported separately; the pessimistic bracket books them as
    exits."""

    replicas: int
    survivors: int
    truncated: int
    ci: tuple[float, float]
    ci_pessimistic: tuple[float, float]
    exit_histogram: dict[int, int]
    drift_quantiles: dict[str, float]

    @property
    def survival_fraction(self) -> float:
        return self.survivors / self.replicas


def trap_probability(batch: WalkBatch) -> TrapEstimate:
    exit_step = batch.exit_step
    survivors = int(np.count_nonzero(exit_step < 0))
    truncated = int(np.count_nonzero((exit_step < 0) & (batch.truncated_at >= 0)))
    hist: dict[int, int] = {}
    for t in exit_step[exit_step >= 0]:
        hist[int(t)] = hist.get(int(t), 0) + 1
    drifts = batch.min_tail_drift()
    drifts = drifts[np.isfinite(drifts)]
    q = {}
    if drifts.size:
        for name, frac in (("p05", 0.05), ("p25", 0.25), ("p50", 0.5)):
            q[name] = float(np.quantile(drifts, frac))
    return TrapEstimate(
        replicas=batch.config.replicas, survivors=survivors, truncated=truncated,
        ci=wilson_interval(survivors, batch.config.replicas),
        ci_pessimistic=wilson_interval(survivors - truncated, batch.config.replicas),
        exit_histogram=hist, drift_quantiles=q)


def exit_tail_curve(exit_step: np.ndarray, grid: list[int]) -> list[dict]:
    """Empirical survival P[T > n] over a grid, with intervals."""
    total = exit_step.size
    out = []
    for n in grid:
        alive = int(np.count_nonzero((exit_step < 0) | (exit_step > n)))
        lo, hi = wilson_interval(alive, total)
        out.append({"n": n, "survive": alive / total, "ci_lo": lo, "ci_hi": hi})
    return out


def stretched_exp_slope(exit_step: np.ndarray, grid: list[int], beta: float) -> float:
    """Least-squares slope of log survival against n^beta.

    A negative slope is the qualitative stretched-exponential shape of tube
    exit-time tails; only the sign is diagnostic, never the constant.
    """
    xs, ys = [], []
    total = exit_step.size
    for n in grid:
        alive = int(np.count_nonzero((exit_step < 0) | (exit_step > n)))
        if alive > 0:
            xs.append(float(n) ** beta)
            ys.append(np.log(alive / total))
    if len(xs) < 2:
        raise ValueError("survival vanished too early for a slope")
    x = np.asarray(xs)
    y = np.asarray(ys)
    xm = x - x.mean()
    return float(np.dot(xm, y) / np.dot(xm, xm))


def walks_csv(batch: WalkBatch, path: str):
    n_half = batch.config.horizon // 2
    n_3q = (3 * batch.config.horizon) // 4
    d_half = batch.drift_at(np.minimum(n_half, batch.effective_horizon))
    d_3q = batch.drift_at(np.minimum(n_3q, batch.effective_horizon))
    d_full = batch.drift_at(batch.effective_horizon)
    with open(path, "w") as f:
        f.write("replica,survived,exit_step,drift_half,drift_3q,drift_full,truncated_flag\n")
        for k in range(batch.config.replicas):
            surv = 1 if batch.exit_step[k] < 0 else 0
            f.write(f"{k},{surv},{int(batch.exit_step[k])},"
                    f"{d_half[k]!r},{d_3q[k]!r},{d_full[k]!r},"
                    f"{1 if batch.truncated_at[k] >= 0 else 0}\n")
