"""Command-line pipeline: validate | gen | forest | metrics | prune | env |
walk | tails | mixing | oracle | report.

Configuration is a flat key=value file plus command-line overrides; every
stage is a deterministic function of (config, seed) and records what it
wrote in the run manifest with content hashes, so reruns are byte-identical
and downstream stages can verify their inputs.

Exit codes: 0 ok, 1 invariant/integrity failure, 2 usage or config error,
3 resource budget exceeded.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import fieldgen, forest as forest_mod, pipeline, pruning, stats
from .environment import environment_manifest, supermartingale_residuals, write_environment
from .fieldgen import ModelParams, default_params, validate_params
from .lattice import Window, min_sphere_ratio
from .metrics import compute_h, compute_insulation_sup, interior_mask, tail_estimate
from .raygeom import ellipticity_constant, solve_insulation_constants
from .walker import walks_csv


class UsageError(Exception):
    pass


class InvariantFailure(Exception):
    pass


_DEFAULTS = {
    "seed": 1, "dim": 3, "window": 32, "margin": 10, "beta": None,
    "replicas": 32, "horizon": 2000, "threads": None, "out": "runs/out",
    "grid": None, "u_min": 1, "max_box": 7,
}


@dataclass
class RunConfig:
    seed: int
    dim: int
    window_side: int
    margin: int
    beta: float | None
    replicas: int
    horizon: int
    threads: int
    out: str
    grid: list[int] | None
    u_min: int
    max_box: int

    def params(self) -> ModelParams:
        window = Window.centered(self.window_side, self.dim, self.margin)
        return default_params(self.dim, window, self.seed, beta=self.beta)

    def hash(self) -> str:
        core = {"seed": self.seed, "dim": self.dim, "window": self.window_side,
                "margin": self.margin, "beta": self.beta}
        blob = json.dumps(core, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _parse_config_file(path: str) -> dict:
    out = {}
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"bad config line: {line!r}")
            key, value = (t.strip() for t in line.split("=", 1))
            out[key] = value
    return out


def _coerce(key: str, value):
    if value is None:
        return None
    if key in ("seed", "dim", "window", "margin", "replicas", "horizon",
               "threads", "u_min", "max_box"):
        return int(value)
    if key == "beta":
        return float(value)
    if key == "grid":
        return [int(t) for t in str(value).split(",")]
    return value


def build_config(args) -> RunConfig:
    raw = dict(_DEFAULTS)
    if args.config:
        for k, v in _parse_config_file(args.config).items():
            if k not in raw:
                raise UsageError(f"unknown config key {k!r}")
            raw[k] = v
    for k in raw:
        flag = getattr(args, k, None)
        if flag is not None:
            raw[k] = flag
    coerced = {k: _coerce(k, v) for k, v in raw.items()}
    threads = coerced["threads"] or pipeline.default_threads()
    return RunConfig(seed=coerced["seed"], dim=coerced["dim"],
                     window_side=coerced["window"], margin=coerced["margin"],
                     beta=coerced["beta"], replicas=coerced["replicas"],
                     horizon=coerced["horizon"], threads=threads,
                     out=str(coerced["out"]), grid=coerced["grid"],
                     u_min=coerced["u_min"], max_box=coerced["max_box"])


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest_path(cfg: RunConfig) -> str:
    return os.path.join(cfg.out, "manifest.json")


def _load_manifest(cfg: RunConfig) -> dict:
    path = _manifest_path(cfg)
    if os.path.exists(path):
        with open(path) as f:
            return json.load(f)
    return {"config_hash": cfg.hash(), "stages": {}}


def _record_stage(cfg: RunConfig, stage: str, artifacts: list[str]):
    man = _load_manifest(cfg)
    if man.get("config_hash") != cfg.hash():
        raise InvariantFailure("manifest belongs to a different config; "
                               "use a fresh --out directory")
    man["stages"][stage] = {
        "artifacts": {os.path.basename(a): _sha256(a) for a in artifacts}}
    with open(_manifest_path(cfg), "w") as f:
        json.dump(man, f, indent=1, sort_keys=True)


def _require_stage(cfg: RunConfig, stage: str) -> dict:
    man = _load_manifest(cfg)
    if stage not in man["stages"]:
        raise UsageError(f"stage {stage!r} has not run; run "
                         f"`umbrellaforest {stage}` first")
    for name, digest in man["stages"][stage]["artifacts"].items():
        path = os.path.join(cfg.out, name)
        if not os.path.exists(path):
            raise InvariantFailure(f"artifact {name} missing")
        if _sha256(path) != digest:
            raise InvariantFailure(f"artifact {name} fails its checksum")
    return man["stages"][stage]


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def stage_validate(cfg: RunConfig) -> int:
    params = cfg.params()
    bad = validate_params(params)
    consts = {
        "dim": params.dim,
        "tail_start": params.tail_start,
        "tail_weight": params.tail_weight,
        "orthant_ratio": params.orthant_ratio,
        "beta": params.beta,
        "ellipticity": str(ellipticity_constant(params.dim)),
        "min_sphere_ratio": str(min_sphere_ratio(params.dim)),
    }
    if params.dim >= 3 and params.beta is not None:
        ic = solve_insulation_constants(params.dim, params.beta)
        consts["insulation_gap"] = ic.gap
        consts["insulation_outer"] = ic.outer
        consts["depth_factor"] = ic.depth_factor
    for k, v in consts.items():
        print(f"{k} = {v}")
    if bad:
        for b in bad:
            print(f"violation: {b}", file=sys.stderr)
        return 1
    print("parameters valid")
    return 0


def stage_gen(cfg: RunConfig) -> int:
    params = cfg.params()
    os.makedirs(cfg.out, exist_ok=True)
    arts = []
    for i in (1, 2) if cfg.dim >= 3 else (1,):
        p = pipeline.derived_params(params, "field", i)
        field = fieldgen.generate_field(p)
        path = os.path.join(cfg.out, f"field_{i}.umbf")
        fieldgen.write_field(field, path)
        arts.append(path)
    _record_stage(cfg, "gen", arts)
    print(f"wrote {len(arts)} field dump(s) to {cfg.out}")
    return 0


def _load_fields(cfg: RunConfig):
    _require_stage(cfg, "gen")
    params = cfg.params()
    out = []
    for i in (1, 2) if cfg.dim >= 3 else (1,):
        p = pipeline.derived_params(params, "field", i)
        out.append(fieldgen.read_field(os.path.join(cfg.out, f"field_{i}.umbf"), p))
    return out


def stage_forest(cfg: RunConfig) -> int:
    fields = _load_fields(cfg)
    arts = []
    for i, field in enumerate(fields, start=1):
        zeta = 1 if i == 1 else -1
        f = forest_mod.build_forest(field, zeta=zeta)
        path = os.path.join(cfg.out, f"forest_{i}.umba")
        forest_mod.write_forest(f, path)
        arts.append(path)
        print(f"forest {i}: orientation {zeta}, truncation radius {f.radius}, "
              f"per-axis miss bound {f.miss_bound:.4g}")
    _record_stage(cfg, "forest", arts)
    return 0


def _load_forests(cfg: RunConfig):
    _require_stage(cfg, "forest")
    idx = (1, 2) if cfg.dim >= 3 else (1,)
    return [forest_mod.read_forest(os.path.join(cfg.out, f"forest_{i}.umba"))
            for i in idx]


def stage_metrics(cfg: RunConfig) -> int:
    forests = _load_forests(cfg)
    grid = cfg.grid or [2, 4, 8, 16]
    arts = []
    payload = {}
    beta = cfg.params().beta
    for i, f in enumerate(forests, start=1):
        h = compute_h(f)
        payload[f"h{i}_value"] = h.value
        payload[f"h{i}_exact"] = h.exact
        if cfg.dim >= 3 and beta is not None:
            H = compute_insulation_sup(h, beta)
            payload[f"H{i}_value"] = H.value
            payload[f"H{i}_exact"] = H.exact
        if i == 1:
            mask = interior_mask(h)
            est = tail_estimate(cfg.dim, grid, [(h.value[mask], h.exact[mask])])
            path = os.path.join(cfg.out, "tails.csv")
            est.to_csv(path)
            arts.append(path)
    npz = os.path.join(cfg.out, "metrics.npz")
    np.savez_compressed(npz, **payload)
    arts.append(npz)
    _record_stage(cfg, "metrics", arts)
    print(f"wrote metrics for {len(forests)} forest(s)")
    return 0


def stage_prune(cfg: RunConfig) -> int:
    if cfg.dim < 3:
        raise UsageError("pruning requires dim >= 3")
    _require_stage(cfg, "gen")
    pair = pipeline.build_pruned_pair(cfg.params())
    layers = {
        "keep_1": pair.keep[0], "keep_2": pair.keep[1],
        "chain_1": pair.chains[0].layer, "chain_2": pair.chains[1].layer,
        "ball_1": pair.insulation[0].ball_layer, "ball_2": pair.insulation[1].ball_layer,
        "ray_cover_1": pair.insulation[0].ray_layer,
        "ray_cover_2": pair.insulation[1].ray_layer,
    }
    mpath = os.path.join(cfg.out, "membership.json")
    pruning.write_membership(mpath, cfg.params().window, layers)
    summary = pruning.membership_summary(
        layers,
        {"forest_1": len(pair.insulation[0].leaf_sites),
         "forest_2": len(pair.insulation[1].leaf_sites)},
        len(pair.disjoint.certain_overlaps))
    spath = os.path.join(cfg.out, "membership_summary.json")
    with open(spath, "w") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
    _record_stage(cfg, "prune", [mpath, spath])
    print(f"leaves: {summary['leaf_counts']}, "
          f"unknown overlaps: {pair.disjoint.unknown_overlaps}")
    if not pair.disjoint.disjoint:
        print(f"certain insulation overlap at "
              f"{pair.disjoint.certain_overlaps[:5]}", file=sys.stderr)
        return 1
    return 0


def stage_env(cfg: RunConfig) -> int:
    if cfg.dim < 3:
        raise UsageError("the patched environment requires dim >= 3")
    _require_stage(cfg, "gen")
    pair = pipeline.build_pruned_pair(cfg.params())
    built = pipeline.build_patched(pair)
    env_path = os.path.join(cfg.out, "env.umbe")
    write_environment(built.env, env_path)
    man = environment_manifest(built.env, cfg.params().beta)
    man["residuals"] = supermartingale_residuals(built.env).__dict__.copy()
    man["residuals"]["witness"] = (list(man["residuals"]["witness"])
                                   if man["residuals"]["witness"] else None)
    man["residuals"]["worst"] = (None if man["residuals"]["eligible"] == 0
                                 else man["residuals"]["worst"])
    jpath = os.path.join(cfg.out, "env_manifest.json")
    with open(jpath, "w") as f:
        json.dump(man, f, indent=1, sort_keys=True)
    _record_stage(cfg, "env", [env_path, jpath])
    print(f"patched environment: horizon factor {built.horizon_factor:.4g}, "
          f"{int(np.count_nonzero(built.env.chosen >= 0))} covered sites")
    return 0


def stage_walk(cfg: RunConfig) -> int:
    if cfg.dim < 3:
        raise UsageError("trapping walks require dim >= 3")
    _require_stage(cfg, "env")
    run = pipeline.trap_experiment(cfg.params(), horizon=cfg.horizon,
                                   replicas=cfg.replicas, u_min=cfg.u_min)
    arts = []
    for name, batch in run.batches.items():
        path = os.path.join(cfg.out, f"walks_{name}.csv")
        walks_csv(batch, path)
        arts.append(path)
    summary = {name: {"survival": est.survival_fraction, "ci": list(est.ci),
                      "ci_pessimistic": list(est.ci_pessimistic),
                      "truncated": est.truncated,
                      "drift_quantiles": est.drift_quantiles,
                      "start": list(run.starts[name])}
               for name, est in run.estimates.items()}
    jpath = os.path.join(cfg.out, "walks_summary.json")
    with open(jpath, "w") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
    arts.append(jpath)
    _record_stage(cfg, "walk", arts)
    for name, est in run.estimates.items():
        print(f"{name}: survival {est.survival_fraction:.3f} "
              f"ci [{est.ci[0]:.3f}, {est.ci[1]:.3f}] truncated {est.truncated}")
    return 0


def stage_tails(cfg: RunConfig) -> int:
    grid = cfg.grid or ([8, 16, 32, 64] if cfg.dim == 2 else [4, 8, 16, 32])
    job = pipeline.TailJob(dim=cfg.dim, side=cfg.window_side, margin=cfg.margin,
                           seed=cfg.seed, grid=tuple(grid))
    est = pipeline.tail_experiment(job, cfg.replicas, threads=cfg.threads)
    path = os.path.join(cfg.out, "tails.csv")
    os.makedirs(cfg.out, exist_ok=True)
    est.to_csv(path)
    base_job = pipeline.TailJob(dim=cfg.dim, side=cfg.window_side, margin=0,
                                seed=cfg.seed, grid=tuple(grid), kind="baseline")
    base = pipeline.tail_experiment(base_job, cfg.replicas, threads=cfg.threads)
    bpath = os.path.join(cfg.out, "tails_baseline.csv")
    base.to_csv(bpath)
    _record_stage(cfg, "tails", [path, bpath])
    fit = stats.exponent_fit(est)
    bfit = stats.exponent_fit(base)
    print(f"umbrella slope (upper bracket): {fit['hi'][0]:.3f} +- {fit['hi'][1]:.3f}")
    print(f"baseline slope (upper bracket): {bfit['hi'][0]:.3f} +- {bfit['hi'][1]:.3f}")
    return 0


def stage_mixing(cfg: RunConfig) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    shifts = cfg.grid or [8, 16, 32, 64]
    rows = []
    if cfg.dim == 2:
        sampler = pipeline.forest_direction_sampler(2, shifts, cfg.margin, cfg.seed)
        rows += stats.mixing_covariance(sampler, cfg.replicas, shifts,
                                        target="forest", functional="step_is_e1",
                                        gamma=1.0)
    else:
        job = pipeline.EnvMixingJob(dim=cfg.dim, shifts=tuple(shifts),
                                    margin=cfg.margin, seed=cfg.seed)
        samples = pipeline.environment_mixing_samples(job, cfg.replicas,
                                                      threads=cfg.threads)
        rows += stats.mixing_covariance(lambda k: samples[k], cfg.replicas,
                                        shifts, target="environment",
                                        functional="block_covered",
                                        gamma=1.0 / 13.0)
    path = os.path.join(cfg.out, "mixing.csv")
    stats.mixing_to_csv(rows, path)
    _record_stage(cfg, "mixing", [path])
    for r in rows:
        print(f"|s|={r.s_l1}: cov {r.cov:+.5f} +- {r.ci:.5f}  "
              f"|s|^gamma |cov| = {r.s_pow_gamma_cov:.4f}")
    return 0


def stage_oracle(cfg: RunConfig) -> int:
    results = pipeline.oracle_suite(max_box=cfg.max_box, seed=cfg.seed)
    bad = 0
    for r in results:
        status = "ok" if r["ok"] else "MISMATCH"
        print(f"{r['name']}: {status} ({r['detail']})")
        bad += 0 if r["ok"] else 1
    return 1 if bad else 0


def stage_report(cfg: RunConfig) -> int:
    man = _load_manifest(cfg)
    params = cfg.params()
    consts = {"ellipticity": str(ellipticity_constant(params.dim)),
              "min_sphere_ratio": str(min_sphere_ratio(params.dim))}
    if params.dim >= 3 and params.beta:
        ic = solve_insulation_constants(params.dim, params.beta)
        consts.update(insulation_gap=ic.gap, insulation_outer=ic.outer,
                      depth_factor=ic.depth_factor)
    tails = {}
    tpath = os.path.join(cfg.out, "tails.csv")
    if os.path.exists(tpath):
        with open(tpath) as f:
            tails["tails_csv"] = f.read().splitlines()
    trapping = {}
    wpath = os.path.join(cfg.out, "walks_summary.json")
    if os.path.exists(wpath):
        with open(wpath) as f:
            trapping = json.load(f)
    mixing = []
    mpath = os.path.join(cfg.out, "mixing.csv")
    if os.path.exists(mpath):
        with open(mpath) as f:
            mixing = f.read().splitlines()
    doc = stats.assemble_report(
        params={"dim": params.dim, "window": cfg.window_side,
                "margin": cfg.margin, "beta": params.beta,
                "tail_start": params.tail_start, "tail_weight": params.tail_weight,
                "orthant_ratio": params.orthant_ratio},
        seeds={"root": cfg.seed},
        constants=consts, tails=tails, trapping=trapping, mixing=mixing,
        invariants={"stages_recorded": sorted(man["stages"])},
    )
    rpath = os.path.join(cfg.out, "report.json")
    with open(rpath, "w") as f:
        f.write(doc)
    stats.load_report(doc)
    _record_stage(cfg, "report", [rpath])
    print(f"wrote {rpath}")
    return 0


_STAGES = {
    "validate": stage_validate, "gen": stage_gen, "forest": stage_forest,
    "metrics": stage_metrics, "prune": stage_prune, "env": stage_env,
    "walk": stage_walk, "tails": stage_tails, "mixing": stage_mixing,
    "oracle": stage_oracle, "report": stage_report,
}


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="umbrellaforest",
        description="Directed spanning forests with short trees and the "
                    "trapping environments built from them.")
    ap.add_argument("stage", choices=sorted(_STAGES))
    ap.add_argument("--config", help="flat key=value config file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--dim", type=int)
    ap.add_argument("--window", type=int, help="window side length")
    ap.add_argument("--margin", type=int)
    ap.add_argument("--beta", type=float)
    ap.add_argument("--replicas", type=int)
    ap.add_argument("--horizon", type=int)
    ap.add_argument("--threads", type=int)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--grid", help="comma-separated n grid / shift list")
    ap.add_argument("--u-min", dest="u_min", type=int)
    ap.add_argument("--max-box", dest="max_box", type=int)
    return ap


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        cfg = build_config(args)
        os.makedirs(cfg.out, exist_ok=True)
        return _STAGES[args.stage](cfg)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except InvariantFailure as e:
        print(f"integrity error: {e}", file=sys.stderr)
        return 1
    except MemoryError as e:
        print(f"resource budget exceeded: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
