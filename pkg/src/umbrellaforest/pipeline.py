"""End-to-end drivers: field -> forests -> pruning -> environment -> walks.

Each driver is a pure function of explicit parameters and a root seed; all
per-replica randomness is derived through named streams, so any stage can
be rerun in isolation and replicas can be farmed out to worker processes
without coordination.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from multiprocessing import get_context

import numpy as np

from . import rng
from .environment import (PatchedEnv, choose_horizon_factor, patch,
                          ray_environment)
from .fieldgen import LField, ModelParams, default_params, generate_field
from .forest import Forest, build_forest, example1_forest
from .lattice import Site, Window
from .metrics import (StatusField, TailEstimate, accumulate_tail,
                      compute_h, compute_insulation_sup, empty_tail,
                      interior_mask)
from .pruning import (IN, ChainResult, DisjointReport, Insulation,
                      check_disjoint, depth_decay_table, insulate,
                      prune_to_infinite, tilde_membership)
from .raygeom import (InsulationConstants, RayHandle, build_ray,
                      ellipticity_constant, solve_insulation_constants,
                      tube_geometry)
from .walker import TrapEstimate, WalkBatch, WalkConfig, run_walks, trap_probability


def derived_params(base: ModelParams, label: str, *keys: int) -> ModelParams:
    return replace(base, seed=rng.stream(label, base.seed, *keys))


# ---------------------------------------------------------------------------
# pruned pair of opposite forests
# ---------------------------------------------------------------------------

@dataclass
class PrunedPair:
    params: ModelParams
    fields: tuple[LField, LField]
    forests: tuple[Forest, Forest]
    depth: tuple[StatusField, StatusField]       # h per forest
    ins_sup: tuple[StatusField, StatusField]     # H per forest
    keep: tuple[np.ndarray, np.ndarray]          # tri-state keep layers
    chains: tuple[ChainResult, ChainResult]      # tri-state chain layers
    insulation: tuple[Insulation, Insulation]
    disjoint: DisjointReport

    def forest_of(self, index: int) -> Forest:
        return self.forests[index - 1]


def build_pruned_pair(params: ModelParams) -> PrunedPair:
    """Two independent opposite-orientation forests, pruned and insulated."""
    beta = params.beta
    if beta is None:
        raise ValueError("pruning requires beta")
    p1 = derived_params(params, "field", 1)
    p2 = derived_params(params, "field", 2)
    f1 = generate_field(p1)
    f2 = generate_field(p2)
    a1 = build_forest(f1, zeta=1)
    a2 = build_forest(f2, zeta=-1)
    h1 = compute_h(a1)
    h2 = compute_h(a2)
    H1 = compute_insulation_sup(h1, beta)
    H2 = compute_insulation_sup(h2, beta)
    keep1 = tilde_membership(h1, H2, beta)
    keep2 = tilde_membership(h2, H1, beta)
    chain1 = prune_to_infinite(a1, keep1)
    chain2 = prune_to_infinite(a2, keep2)
    ins1 = insulate(chain1, h1, a1, beta)
    ins2 = insulate(chain2, h2, a2, beta)
    report = check_disjoint(ins1.ball_layer, ins2.ball_layer, a1.box)
    return PrunedPair(params=params, fields=(f1, f2), forests=(a1, a2),
                      depth=(h1, h2), ins_sup=(H1, H2), keep=(keep1, keep2),
                      chains=(chain1, chain2), insulation=(ins1, ins2),
                      disjoint=report)


def select_rays(pair: PrunedPair, min_depth: int = 1,
                max_rays: int | None = None,
                max_per_forest: int | None = None) -> list[RayHandle]:
    """Ray handles for kept leaves with spines of at least `min_depth`.

    Sorted deepest-first; `max_per_forest` caps each orientation separately
    so neither side starves when the deepest spines cluster in one forest.
    """
    beta = pair.params.beta
    out: list[RayHandle] = []
    for i in (1, 2):
        forest = pair.forest_of(i)
        side: list[RayHandle] = []
        for leaf in pair.insulation[i - 1].leaf_sites:
            handle = build_ray(forest, leaf, beta, i)
            if handle.depth >= min_depth:
                side.append(handle)
        side.sort(key=lambda r: (-r.depth, r.leaf))
        if max_per_forest is not None:
            side = side[:max_per_forest]
        out.extend(side)
    out.sort(key=lambda r: (-r.depth, r.leaf))
    if max_rays is not None:
        out = out[:max_rays]
    return out


@dataclass
class BuiltEnvironment:
    pair: PrunedPair
    rays: list[RayHandle]
    env: PatchedEnv
    constants: InsulationConstants
    horizon_factor: float


def build_patched(pair: PrunedPair, rays: list[RayHandle] | None = None,
                  horizon_factor: float | None = None,
                  min_depth: int = 1, calibration_cap: int = 24,
                  n_max: int = 2048) -> BuiltEnvironment:
    """Calibrate the horizon factor (unless given) and patch the window."""
    params = pair.params
    consts = solve_insulation_constants(params.dim, params.beta)
    if rays is None:
        rays = select_rays(pair, min_depth=min_depth)
    if not rays:
        raise ValueError("no rays deep enough to build an environment")
    if horizon_factor is None:
        kappa = ellipticity_constant(params.dim)
        envs, pairs = [], []
        for ray in rays[:6]:
            env = ray_environment(ray)
            ei = len(envs)
            envs.append(env)
            ins = pair.ins_sup[ray.forest_index - 1]
            picked = 0
            for j in range(env.geom.size):
                s = tuple(map(int, env.geom.sites[j]))
                if not pair.params.window.box.contains(s):
                    continue
                hval, hexact = ins.at(s)
                if hexact and env.geom.u[j] >= 1:
                    pairs.append((ei, j, max(hval, 1)))
                    picked += 1
                    if picked >= calibration_cap:
                        break
        horizon_factor = choose_horizon_factor(
            envs, pairs, ellipticity_constant(params.dim),
            floor=max(consts.depth_factor, 1.0), n_max=n_max)
    certain_cover = (pair.insulation[0].ray_layer == IN) | \
        (pair.insulation[1].ray_layer == IN)
    env = patch(params.window, rays,
                {1: pair.ins_sup[0], 2: pair.ins_sup[1]},
                horizon_factor, certain_cover=certain_cover)
    return BuiltEnvironment(pair=pair, rays=rays, env=env,
                            constants=consts, horizon_factor=horizon_factor)


# ---------------------------------------------------------------------------
# tail experiments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TailJob:
    dim: int
    side: int
    margin: int
    seed: int
    grid: tuple[int, ...]
    kind: str = "umbrella"   # or "baseline"
    buffer: int | None = None


def _tail_replica(args: tuple[TailJob, int]):
    job, k = args
    window = Window.centered(job.side, job.dim, job.margin)
    seed = rng.stream("tails", job.seed, k)
    if job.kind == "baseline":
        forest = example1_forest(seed, Window.centered(job.side, job.dim, 0), job.dim)
    else:
        params = default_params(job.dim, window, seed)
        forest = build_forest(generate_field(params), zeta=1)
    h = compute_h(forest)
    mask = interior_mask(h, job.buffer)
    return h.value[mask], h.exact[mask]


def parallel_map(fn, items, threads: int):
    if threads <= 1:
        return [fn(it) for it in items]
    with get_context("fork").Pool(threads) as pool:
        return pool.map(fn, items, chunksize=1)


def tail_experiment(job: TailJob, replicas: int, threads: int = 1) -> TailEstimate:
    est = empty_tail(job.dim, list(job.grid))
    for values, exact in parallel_map(_tail_replica,
                                      [(job, k) for k in range(replicas)], threads):
        accumulate_tail(est, values, exact)
    return est


# ---------------------------------------------------------------------------
# pruning-depth decay experiment
# ---------------------------------------------------------------------------

def depth_decay_experiment(params: ModelParams, replicas: int, k_grid: list[int],
                           threads: int = 1) -> list[dict]:
    """Pooled frequency of keep-violations beyond depth k over replicas."""
    jobs = [(params, k, tuple(k_grid)) for k in range(replicas)]
    tables = parallel_map(_decay_replica, jobs, threads)
    out = []
    for idx, k in enumerate(k_grid):
        viol = sum(t[idx]["violations"] for t in tables)
        elig = sum(t[idx]["eligible"] for t in tables)
        out.append({"k": k, "violations": viol, "eligible": elig,
                    "freq": viol / elig if elig else float("nan")})
    return out


def _decay_replica(args):
    params, k, k_grid = args
    pair = build_pruned_pair(derived_params(params, "decay", k))
    rows = None
    for i in (1, 2):
        chain = pair.chains[i - 1]
        interior = interior_mask(pair.depth[i - 1])
        t = depth_decay_table(chain, interior, list(k_grid))
        if rows is None:
            rows = t
        else:
            for a, b in zip(rows, t):
                a["violations"] += b["violations"]
                a["eligible"] += b["eligible"]
    for a in rows:
        a["freq"] = a["violations"] / a["eligible"] if a["eligible"] else float("nan")
    return rows


# ---------------------------------------------------------------------------
# trapping experiment
# ---------------------------------------------------------------------------

@dataclass
class TrapRun:
    estimates: dict[str, TrapEstimate]
    batches: dict[str, WalkBatch]
    starts: dict[str, Site]


def trap_experiment(params: ModelParams, horizon: int, replicas: int,
                    u_min: int = 1, walk_seed: int | None = None,
                    built: BuiltEnvironment | None = None) -> TrapRun:
    """Deepest-ray starts for both orientations plus the uniform control."""
    if built is None:
        built = build_patched(build_pruned_pair(params))
    pair = built.pair
    env = built.env
    box = pair.forest_of(1).box
    walk_seed = params.seed if walk_seed is None else walk_seed

    estimates: dict[str, TrapEstimate] = {}
    batches: dict[str, WalkBatch] = {}
    starts: dict[str, Site] = {}
    for i in (1, 2):
        start = _best_trap_start(built, i, u_min)
        inside = pair.insulation[i - 1].ray_layer == IN
        sign = 1 if i == 1 else -1
        cfg = WalkConfig(start=start, horizon=horizon, replicas=replicas,
                         seed=rng.stream("trap", walk_seed, i))
        batch = run_walks(env.rows, box, inside, cfg, orientation_sign=sign)
        estimates[f"orient_{i}"] = trap_probability(batch)
        batches[f"orient_{i}"] = batch
        starts[f"orient_{i}"] = start

        if i == 1:
            uni = np.broadcast_to(np.full(2 * params.dim, 1.0 / (2 * params.dim)),
                                  box.shape + (2 * params.dim,)).copy()
            ccfg = WalkConfig(start=start, horizon=horizon, replicas=replicas,
                              seed=rng.stream("trap-control", walk_seed))
            cbatch = run_walks(uni, box, inside, ccfg, orientation_sign=sign)
            estimates["control"] = trap_probability(cbatch)
            batches["control"] = cbatch
            starts["control"] = start
    return TrapRun(estimates=estimates, batches=batches, starts=starts)


def _best_trap_start(built: BuiltEnvironment, forest_index: int, u_min: int,
                     tries: int = 6) -> Site:
    """Start with the longest runway: earliest u_min-insulated spine index
    on whichever of the deepest rays leaves the most spine above it."""
    from .raygeom import trap_start
    cands = [r for r in built.rays if r.forest_index == forest_index]
    if not cands:
        raise ValueError(f"no rays for orientation {forest_index}")
    cands.sort(key=lambda r: -r.depth)
    best, best_runway = None, -1
    for ray in cands[:tries]:
        try:
            site, n = trap_start(tube_geometry(ray), u_min)
        except ValueError:
            continue
        if ray.depth - n > best_runway:
            best, best_runway = site, ray.depth - n
    if best is None:
        raise ValueError(f"no spine site with insulation depth >= {u_min}; "
                         f"a deeper window is required")
    return best


# ---------------------------------------------------------------------------
# mixing samplers
# ---------------------------------------------------------------------------

def forest_direction_sampler(dim: int, shifts: list[int], margin: int, seed: int):
    """Replica sampler for the parent-direction indicator at shifted blocks.

    Each replica builds one thin strip forest and evaluates
    1{parent step at site = +e_1} at the origin and at s * e_1.
    """
    smax = max(shifts)
    pad = 2
    lo = (-pad,) + (-pad,) * (dim - 1)
    hi = (smax + pad,) + (pad,) * (dim - 1)

    def sampler(k: int):
        window = Window(lo, hi, margin)
        params = default_params(dim, window, rng.stream("mixing-forest", seed, k))
        forest = build_forest(generate_field(params), zeta=1)
        origin = tuple([0] * dim)
        f0 = 1.0 if forest.axis_at(origin) == 1 else 0.0
        fs = {}
        for s in shifts:
            site = (s,) + (0,) * (dim - 1)
            fs[s] = 1.0 if forest.axis_at(site) == 1 else 0.0
        return f0, fs

    return sampler


@dataclass(frozen=True)
class EnvMixingJob:
    """Growing-block coverage functional of the patched environment rows.

    Per shift s the block is the l1-ball of radius mu * s^nu (nu defaults
    to 1/(8 dim)); the functional is the indicator that the block contains
    a site with a non-uniform installed row, i.e. a certainly ray-covered
    site, which is measurable with respect to the rows on the block.
    """

    dim: int
    shifts: tuple[int, ...]
    margin: int
    seed: int
    mu: float = 6.0
    nu: float | None = None
    thickness: int | None = None

    def geometry(self):
        nu = self.nu if self.nu is not None else 1.0 / (8 * self.dim)
        smax = max(self.shifts)
        r_max = int(np.floor(self.mu * smax ** nu))
        t = self.thickness if self.thickness is not None else 4
        pad = t + r_max
        strip = Window((-pad,) * self.dim,
                       (smax + pad,) + (pad,) * (self.dim - 1), self.margin)
        from .lattice import l1_ball_offsets
        blocks = {}
        for s in self.shifts:
            r = int(np.floor(self.mu * s ** nu))
            offs = l1_ball_offsets(self.dim, r)
            origin = [tuple(o) for o in offs]
            shifted = [(s + o[0],) + tuple(o[1:]) for o in offs]
            blocks[s] = (origin, shifted)
        return strip, blocks


def _env_mixing_replica(args: tuple[EnvMixingJob, int]):
    job, k = args
    strip, blocks = job.geometry()
    params = default_params(job.dim, strip, rng.stream("mixing-env", job.seed, k))
    pair = build_pruned_pair(params)
    covered = (pair.insulation[0].ray_layer == IN) | \
        (pair.insulation[1].ray_layer == IN)
    box = pair.forest_of(1).box
    out = {}
    for s, (origin, shifted) in blocks.items():
        f = 1.0 if any(covered[box.local(site)] for site in origin) else 0.0
        g = 1.0 if any(covered[box.local(site)] for site in shifted) else 0.0
        out[s] = (f, g)
    return out


def environment_mixing_samples(job: EnvMixingJob, replicas: int,
                               threads: int = 1) -> list[dict]:
    return parallel_map(_env_mixing_replica,
                        [(job, k) for k in range(replicas)], threads)


def default_threads() -> int:
    n = os.cpu_count() or 1
    env = os.environ.get("UMBRELLAFOREST_THREADS")
    if env:
        return max(1, int(env))
    return min(2, n)


# ---------------------------------------------------------------------------
# brute-force oracle suite
# ---------------------------------------------------------------------------

def oracle_suite(max_box: int = 7, seed: int = 5, dims: tuple[int, ...] = (2, 3)) -> list[dict]:
    """Compare every fast kernel against direct enumeration on small boxes."""
    from . import oracles
    from .forest import lambda_field
    from .lattice import orthant_sphere_count, sphere_count
    from .fieldgen import length_from_uniform
    from .environment import exit_functionals, ray_environment
    from .raygeom import RayHandle, tube_geometry

    results = []

    def check(name, ok, detail=""):
        results.append({"name": name, "ok": bool(ok), "detail": detail})

    mismatch = 0
    for d in (2, 3, 4):
        for n in range(0, 13):
            if sphere_count(d, n) != oracles.sphere_count_brute(d, n):
                mismatch += 1
            if orthant_sphere_count(d, n) != oracles.orthant_sphere_count_brute(d, n):
                mismatch += 1
    check("sphere_counts", mismatch == 0, f"d<=4, n<=12, {mismatch} mismatches")

    for d in dims:
        side = min(max_box, 9 if d == 2 else 7)
        window = Window.centered(side, d, margin=0)
        box = window.field_box
        params = default_params(d, window, seed)
        grids = box.coordinate_grids()
        u = rng.uniform_vec(rng.stream("oracle", seed, d),
                            [g.ravel() for g in grids]).reshape(box.shape)
        vals = length_from_uniform(u, params)
        site_vals = oracles.enumerate_box_field(vals, box)
        bad = 0
        total = 0
        for zeta in (1, -1):
            lam = lambda_field(vals, zeta, 3 * side)
            for axis in range(1, d + 1):
                for x in box.sites():
                    got = lam[(axis - 1,) + box.local(x)]
                    want = oracles.lambda_brute(site_vals, x, axis, zeta)
                    total += 1
                    if not (np.isinf(got) and np.isinf(want)) and got != want:
                        bad += 1
        check(f"lambda_d{d}", bad == 0, f"{total} site-axis pairs, {bad} mismatches")

        forest = build_forest(generate_field(
            replace(params, window=Window.centered(side, d, 6))), zeta=1)
        h = compute_h(forest)
        parent = {}
        for x in forest.box.sites():
            p_site = forest.parent_of(x)
            if forest.box.contains(p_site):
                parent[x] = p_site
        bad = 0
        for x in forest.box.sites():
            if h.value[forest.box.local(x)] != oracles.h_brute(parent, x):
                bad += 1
        check(f"branch_depth_d{d}", bad == 0, f"{forest.box.size} sites, {bad} mismatches")

        beta = 0.3
        hv = {x: int(h.value[forest.box.local(x)]) for x in forest.box.sites()}
        ins = compute_insulation_sup(h, beta)
        bad = 0
        for x in forest.box.sites():
            if ins.value[forest.box.local(x)] != oracles.insulation_sup_brute(hv, x, beta):
                bad += 1
        check(f"insulation_sup_d{d}", bad == 0, f"{bad} mismatches")

    # straight synthetic ray: tube distance and DP vs enumeration
    d = 3
    depth = 40
    spine = np.zeros((depth + 1, d), dtype=np.int64)
    spine[:, 0] = np.arange(depth + 1)
    ray = RayHandle(leaf=(0, 0, 0), forest_index=1, zeta=1, beta=0.45, spine=spine)
    geom = tube_geometry(ray)
    member = {tuple(map(int, s)): True for s in geom.sites}
    bad = 0
    for j in range(0, geom.size, 3):
        x = tuple(map(int, geom.sites[j]))
        if not (5 <= x[0] <= depth - 6):
            continue
        want = oracles.tube_distance_brute(member, x, bound=10)
        if int(geom.u[j]) != want:
            bad += 1
    check("tube_distance", bad == 0, f"{bad} mismatches")

    env = ray_environment(ray, geom)
    inside = {tuple(map(int, s)): True for s in geom.sites}
    rows = {}
    for j in range(geom.size):
        x = tuple(map(int, geom.sites[j]))
        row = {}
        from .lattice import all_directions
        for dir_ in all_directions(d):
            y = tuple(a + o for a, o in zip(x, dir_.vector(d)))
            row[y] = env.rows_exact[j][dir_.index]
        rows[x] = row
    bad = 0
    for x in [(8, 0, 0), (10, 1, 0), (12, 0, -1)]:
        st = exit_functionals(env, x, horizon=4)
        p_want, e_want = oracles.exit_stats_brute(rows, inside, x, 4)
        if abs(st.exit_prob - float(p_want)) > 1e-12 or \
           abs(st.exit_mass - float(e_want)) > 1e-12:
            bad += 1
    check("exit_dp_horizon4", bad == 0, f"{bad} mismatches vs path enumeration")
    return results
