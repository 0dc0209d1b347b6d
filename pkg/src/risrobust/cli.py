"""Experiment orchestration: seeded runs, sweeps, figure recipes, validation.

Every run derives its RNG streams from (master seed, realization index,
purpose tag), so outputs do not depend on the sweep value being dispatched
or on the number of workers.
"""

import argparse
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
import math
import os
import sys
import zlib

import numpy as np

from . import __version__
from .robust_bounded import FCU, PCU, BoundedDesignParams, ao_bounded
from .robust_statistical import StatisticalDesignParams, ao_statistical
from .scenario import (SystemConfig, arrays_from_text, arrays_to_text, cascade, ChannelSet,
                       coerce_config_value, config_from_text, config_to_text, generate_channels,
                       parse_kv_text)
from .uncertainty import bounded_from_levels, statistical_from_levels
from .validate import (baseline_nonrobust, oracle_report_csv, oracle_suite, validate_solution)

ALGORITHMS = ("bcsie-pcu", "bcsie-fcu", "scsie-pcu", "scsie-fcu", "nonrobust")
EXPERIMENT_KEYS = ("algo", "omega_H", "omega_D", "epsilon", "seed", "realizations", "sweep",
                   "max_ao", "cap_dims", "trials", "samples", "label")
RESULTS_HEADER = "sweep_value,seed,algorithm,power_dbm,power_linear,ao_iters,min_rate,mean_outage,status"


@dataclass
class ExperimentSpec:
    algorithm: str = "scsie-pcu"
    config: SystemConfig = field(default_factory=SystemConfig)
    omega_H: float = 0.01
    omega_D: float = 0.0
    epsilon: float = 0.05
    sweep_key: str = None
    sweep_values: tuple = ()
    seed: int = 0
    realizations: int = 1
    max_ao: int = 30
    cap_dims: tuple = (8, 8, 3)
    trials: int = 10_000
    samples: int = 1000
    label: str = ""

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        if self.sweep_key is not None:
            if self.sweep_key not in _sweepable():
                raise ValueError(f"sweep key {self.sweep_key!r} is not a configuration key")
            if not self.sweep_values:
                raise ValueError("sweep needs at least one value")

    def points(self):
        return list(self.sweep_values) if self.sweep_key else [None]


def _sweepable():
    return {f.name for f in fields(SystemConfig)} | {"omega_H", "omega_D", "epsilon"}


def grid_shape(n):
    """Near-square (h, v) with h * v = n and h >= v."""
    v = int(math.isqrt(n))
    while n % v:
        v -= 1
    return n // v, v


def apply_caps(config, cap_dims):
    """Desk-scale caps on M, N and K; returns (config, capped flag)."""
    cM, cN = cap_dims[0], cap_dims[1]
    cK = cap_dims[2] if len(cap_dims) > 2 else None
    kw = {}
    if config.M > cM:
        kw["M_h"], kw["M_v"] = grid_shape(cM)
    if config.N > cN:
        kw["N_h"], kw["N_v"] = grid_shape(cN)
    if cK is not None and config.K > cK:
        kw["K"] = cK
    return (config.replace(**kw), True) if kw else (config, False)


def rng_stream(master, index, tag):
    return np.random.default_rng(np.random.SeedSequence([int(master), int(index),
                                                         zlib.crc32(tag.encode())]))


def scenario_of(algorithm):
    return FCU if algorithm.endswith("fcu") else PCU


def point_spec(spec, value):
    """Spec and config at one sweep point (caps applied)."""
    cfg = spec.config
    s = spec
    if spec.sweep_key is not None:
        if spec.sweep_key in ("omega_H", "omega_D", "epsilon"):
            s = replace(spec, **{spec.sweep_key: float(value)})
        else:
            cfg = cfg.replace(**{spec.sweep_key: value})
    cfg, capped = apply_caps(cfg, spec.cap_dims)
    return s, cfg, capped


def error_levels(s):
    """(omega_H, omega_D) used for design; PCU designs see no direct-link error."""
    wD = s.omega_D if scenario_of(s.algorithm) == FCU else 0.0
    return s.omega_H, wD


# one run -------------------------------------------------------------------

def run_one(spec, value, index):
    """Design and validate one (sweep value, realization); never raises."""
    s, cfg, capped = point_spec(spec, value)
    seed_idx = index
    ch = generate_channels(cfg, rng_stream(spec.seed, seed_idx, "channels"))
    algo_rng = rng_stream(spec.seed, seed_idx, "algorithm")
    wH, wD = error_levels(s)
    stat = statistical_from_levels(ch, wH, wD, s.epsilon)
    bnd = bounded_from_levels(ch, wH, wD, s.epsilon)
    out = dict(sweep_value=value, seed=seed_idx, algorithm=s.algorithm, config=cfg,
               capped=capped, spec=s, channels=ch)
    try:
        if s.algorithm.startswith("bcsie"):
            params = BoundedDesignParams(ao_max_iter=s.max_ao)
            sol = ao_bounded(ch, bnd, cfg.R_th, cfg.sigma2, params, scenario_of(s.algorithm),
                             algo_rng, algorithm=s.algorithm)
        elif s.algorithm.startswith("scsie"):
            params = StatisticalDesignParams(ao_max_iter=s.max_ao)
            sol = ao_statistical(ch, stat, cfg.R_th, cfg.sigma2, params, scenario_of(s.algorithm),
                                 algo_rng, algorithm=s.algorithm)
        else:
            sol = baseline_nonrobust(ch, cfg.R_th, cfg.sigma2, algo_rng,
                                     StatisticalDesignParams(ao_max_iter=s.max_ao))
    except Exception as exc:  # noqa: BLE001 - recorded per run, the sweep goes on
        out.update(solution=None, status=f"failed:{type(exc).__name__}", error=str(exc))
        return out
    # outage is always measured against the full statistical model of the levels
    true_stat = statistical_from_levels(ch, s.omega_H, s.omega_D, s.epsilon)
    vseed = int(rng_stream(spec.seed, seed_idx, "validate").integers(2 ** 63))
    rep = validate_solution(sol.W, sol.theta, ch, cfg.R_th, cfg.sigma2, statistical=true_stat,
                            bounded=bnd if s.algorithm.startswith("bcsie") else None,
                            trials=s.trials, samples=s.samples, seed=vseed)
    status = "converged" if sol.converged else "max-iter"
    if sol.status != "ok":
        status = sol.status
    out.update(solution=sol, report=rep, status=status, validate_seed=vseed)
    return out


def result_row(r):
    v = "" if r["sweep_value"] is None else _fmt(r["sweep_value"])
    sol = r.get("solution")
    if sol is None:
        return f"{v},{r['seed']},{r['algorithm']},nan,nan,0,nan,nan,{r['status']}"
    p = sol.power
    pdbm = 10 * math.log10(p) + 30 if p > 0 else -math.inf
    rep = r["report"]
    return (f"{v},{r['seed']},{r['algorithm']},{pdbm!r},{p!r},{sol.ao_iters},"
            f"{float(np.min(rep.nominal_rate))!r},{float(np.mean(rep.outage))!r},{r['status']}")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


# serialization -----------------------------------------------------------

def trace_to_csv(sol):
    cols = ["iter", "power_w_step", "power_theta_step", "ccp_iters", "status"]
    if sol.trace and "rank_ratio_max" in sol.trace[0]:
        cols += ["rank_ratio_max", "randomization_margin"]
    lines = [",".join(cols)]
    for row in sol.trace:
        lines.append(",".join(_fmt(row[c]) if isinstance(row[c], float) else str(row[c])
                              for c in cols))
    return "\n".join(lines) + "\n"


def solution_to_text(r):
    """Solution file: [meta], [config] and [arrays] sections."""
    sol, s = r["solution"], r["spec"]
    meta = {"algorithm": s.algorithm, "power": repr(sol.power), "status": r["status"],
            "converged": str(sol.converged), "ao_iters": str(sol.ao_iters),
            "sweep_value": "" if r["sweep_value"] is None else _fmt(r["sweep_value"]),
            "master_seed": str(s.seed), "realization": str(r["seed"]), "omega_H": repr(float(s.omega_H)),
            "omega_D": repr(float(s.omega_D)), "epsilon": repr(float(s.epsilon)),
            "validate_seed": str(r["validate_seed"]), "trials": str(s.trials),
            "samples": str(s.samples), "version": __version__}
    ch = r["channels"]
    arrays = {"W": sol.W, "theta": sol.theta.reshape(1, -1), "hD": ch.hD, "G": ch.G, "hR": ch.hR}
    parts = ["[meta]"] + [f"{k} = {v}" for k, v in meta.items()]
    parts += ["[config]", config_to_text(r["config"]).rstrip("\n"), "[arrays]",
              arrays_to_text(arrays, "solution and channel estimates").rstrip("\n")]
    return "\n".join(parts) + "\n"


def solution_from_text(text):
    sections = {}
    cur = None
    for line in text.splitlines():
        if line.strip() in ("[meta]", "[config]", "[arrays]"):
            cur = line.strip()[1:-1]
            sections[cur] = []
            continue
        if cur is None:
            if line.strip():
                raise ValueError("solution file must start with a [meta] section")
            continue
        sections[cur].append(line)
    for need in ("meta", "config", "arrays"):
        if need not in sections:
            raise ValueError(f"solution file lacks a [{need}] section")
    meta = parse_kv_text("\n".join(sections["meta"]))
    cfg, _ = config_from_text("\n".join(sections["config"]))
    a = arrays_from_text("\n".join(sections["arrays"]))
    H = np.stack([cascade(a["hR"][k], a["G"]) for k in range(a["hD"].shape[0])])
    ch = ChannelSet(a["hD"], a["G"], a["hR"], H)
    return meta, cfg, ch, a["W"], a["theta"].ravel()


def manifest_text(spec):
    extra = {"algo": spec.algorithm, "omega_H": float(spec.omega_H),
             "omega_D": float(spec.omega_D), "epsilon": float(spec.epsilon),
             "seed": spec.seed, "realizations": spec.realizations,
             "sweep": "" if spec.sweep_key is None else
             f"{spec.sweep_key}:" + "|".join(_fmt(v) for v in spec.sweep_values),
             "max_ao": spec.max_ao, "cap_dims": "|".join(str(c) for c in spec.cap_dims),
             "trials": spec.trials, "samples": spec.samples, "label": spec.label}
    text = config_to_text(spec.config, extra)
    return text + f"# code version {__version__}\n"


# runner ----------------------------------------------------------------------

def _task(args):
    spec, value, index = args
    r = run_one(spec, value, index)
    files = {}
    if r.get("solution") is not None:
        files["solution.txt"] = solution_to_text(r)
        files["trace.csv"] = trace_to_csv(r["solution"])
        files["report.csv"] = r["report"].to_csv()
    # drop heavy objects before crossing the process boundary
    return (r["sweep_value"], r["seed"]), result_row(r), files, r["status"]


def run(spec, out_dir, workers=1, log=None):
    """Run every (sweep value x realization); returns the results rows."""
    os.makedirs(out_dir, exist_ok=True)
    tasks = [(spec, v, i) for v in spec.points() for i in range(spec.realizations)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]
    order = {(v, i): n for n, (_, v, i) in enumerate(tasks)}
    results.sort(key=lambda r: order[r[0]])
    rows = [RESULTS_HEADER]
    for n, (key, row, files, status) in enumerate(results):
        rows.append(row)
        vi = spec.points().index(key[0])
        run_dir = os.path.join(out_dir, "runs", f"v{vi:02d}_s{key[1]:03d}")
        os.makedirs(run_dir, exist_ok=True)
        for name, text in files.items():
            with open(os.path.join(run_dir, name), "w") as fh:
                fh.write(text)
        if log is not None:
            log.write(f"{row}\n")
    with open(os.path.join(out_dir, "results.csv"), "w") as fh:
        fh.write("\n".join(rows) + "\n")
    with open(os.path.join(out_dir, "manifest.txt"), "w") as fh:
        fh.write(manifest_text(spec))
    return rows


# figure recipes ------------------------------------------------------------------

def _cfg(M, N, K, R=3.0):
    mh, mv = grid_shape(M)
    nh, nv = grid_shape(N)
    return SystemConfig(M_h=mh, M_v=mv, N_h=nh, N_v=nv, K=K, R_th=R)


def _fixed_v(n, v):
    if n % v:
        raise ValueError(f"{n} elements do not tile {v} rows")
    return n // v


def figure_recipes(name, cap_dims=(8, 8, 3)):
    """Prebuilt experiment specs for the figure setups, desk-scaled by cap_dims.

    Sweeps over array sizes grow the horizontal count at a fixed vertical
    count of 2, so sizes tile as 4, 6, 8 (capped) and nest within a seed.
    """
    cap = tuple(cap_dims)
    specs = []
    if name == "fig2":
        for algo, wH, wD in (("bcsie-pcu", 0.01, 0.0), ("scsie-pcu", 0.01, 0.0),
                             ("bcsie-fcu", 0.01, 0.02), ("scsie-fcu", 0.01, 0.02),
                             ("nonrobust", 0.01, 0.02)):
            specs.append(ExperimentSpec(algo, _cfg(3, 3, 3), wH, wD, realizations=10,
                                        cap_dims=cap, label=f"fig2-{algo}"))
    elif name == "fig4":
        for K in (2, 3):
            for algo in ALGORITHMS[:4]:
                wD = 0.02 if algo.endswith("fcu") else 0.0
                specs.append(ExperimentSpec(algo, _cfg(6, 6, K), 0.01, wD, sweep_key="R_th",
                                            sweep_values=(1.0, 2.0, 3.0, 4.0), realizations=10,
                                            cap_dims=cap, label=f"fig4-K{K}-{algo}"))
    elif name in ("fig6", "fig8"):
        algo = "scsie-pcu" if name == "fig6" else "scsie-fcu"
        levels = ([(w, 0.0) for w in (0.0, 0.03, 0.06, 0.1, 0.15)] if name == "fig6"
                  else [(0.0, 0.0)] + [(0.01, w) for w in (0.01, 0.02, 0.03, 0.04)])
        sizes = tuple(n for n in (4, 6, 8, 10, 12, 14, 16) if n <= min(cap[0], cap[1]))
        for wH, wD in levels:
            base = _cfg(6, 6, 3)
            specs.append(ExperimentSpec(algo, base.replace(N_v=2, N_h=3), wH, wD,
                                        sweep_key="N_h",
                                        sweep_values=tuple(_fixed_v(n, 2) for n in sizes),
                                        realizations=10, cap_dims=cap,
                                        label=f"{name}-N-wH{wH}-wD{wD}"))
            specs.append(ExperimentSpec(algo, base.replace(M_v=2, M_h=3), wH, wD,
                                        sweep_key="M_h",
                                        sweep_values=tuple(_fixed_v(n, 2) for n in sizes),
                                        realizations=10, cap_dims=cap,
                                        label=f"{name}-M-wH{wH}-wD{wD}"))
    elif name in ("fig7", "fig9"):
        algo = "scsie-pcu" if name == "fig7" else "scsie-fcu"
        levels = [(0.05, 0.0), (0.15, 0.0)] if name == "fig7" else [(0.01, 0.02)]
        for wH, wD in levels:
            for M, N in ((6, 6), (6, 8), (8, 6)):
                specs.append(ExperimentSpec(algo, _cfg(M, N, 3), wH, wD, sweep_key="epsilon",
                                            sweep_values=(0.01, 0.02, 0.05, 0.1, 0.2),
                                            realizations=10, cap_dims=cap,
                                            label=f"{name}-wH{wH}-M{M}-N{N}"))
    else:
        raise ValueError(f"unknown figure {name!r}; choose from fig2, fig4, fig6, fig7, fig8, fig9")
    return specs


# command line ------------------------------------------------------------------

def _parse_sweep(text):
    if "=" not in text:
        raise ValueError("sweep must look like KEY=V1,V2,...")
    key, vals = text.split("=", 1)
    key = key.strip()
    values = tuple(coerce_config_value(key, v) if key not in ("omega_H", "omega_D", "epsilon")
                   else float(v) for v in vals.split(",") if v.strip())
    return key, values


def _parse_caps(text):
    caps = tuple(int(x) for x in text.replace("|", ",").split(",") if x.strip())
    if len(caps) not in (2, 3) or min(caps) < 1:
        raise ValueError("cap-dims must be M,N or M,N,K with positive entries")
    return caps


def spec_from_args(args):
    cfg, rest = (SystemConfig(), {})
    if args.config:
        with open(args.config) as fh:
            cfg, rest = config_from_text(fh.read())
        unknown = set(rest) - set(EXPERIMENT_KEYS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kw = {"config": cfg}
    if "algo" in rest:
        kw["algorithm"] = rest["algo"]
    for k in ("omega_H", "omega_D", "epsilon"):
        if k in rest:
            kw[k] = float(rest[k])
    for k in ("seed", "realizations", "max_ao", "trials", "samples"):
        if k in rest:
            kw[k] = int(rest[k])
    if rest.get("sweep"):
        key, vals = rest["sweep"].split(":", 1)
        kw["sweep_key"], kw["sweep_values"] = _parse_sweep(key + "=" + vals.replace("|", ","))
    if "cap_dims" in rest:
        kw["cap_dims"] = _parse_caps(rest["cap_dims"])
    if rest.get("label"):
        kw["label"] = rest["label"]
    # flags win over file keys
    for flag, key in (("algo", "algorithm"), ("omega_H", "omega_H"), ("omega_D", "omega_D"),
                      ("epsilon", "epsilon"), ("seed", "seed"), ("realizations", "realizations"),
                      ("max_ao", "max_ao"), ("trials", "trials"), ("samples", "samples")):
        v = getattr(args, flag, None)
        if v is not None:
            kw[key] = v
    if getattr(args, "sweep", None):
        kw["sweep_key"], kw["sweep_values"] = _parse_sweep(args.sweep)
    if getattr(args, "cap_dims", None):
        kw["cap_dims"] = _parse_caps(args.cap_dims)
    return ExperimentSpec(**kw)


def _common(p):
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, help="master seed (u64)")
    p.add_argument("--realizations", type=int, help="channel realizations per sweep point")
    p.add_argument("--max-ao", dest="max_ao", type=int, help="AO iteration cap")
    p.add_argument("--cap-dims", dest="cap_dims", help="desk-scale caps M,N[,K] (default 8,8,3)")
    p.add_argument("--trials", type=int, help="Monte-Carlo outage draws per user")
    p.add_argument("--samples", type=int, help="worst-case ball samples per user")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")


def build_parser():
    ap = argparse.ArgumentParser(prog="risrobust", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="verb", required=True)
    p = sub.add_parser("run", help="run one experiment spec")
    p.add_argument("--config", help="key = value file (system and experiment keys)")
    p.add_argument("--algo", choices=ALGORITHMS)
    p.add_argument("--sweep", help="KEY=V1,V2,...")
    p.add_argument("--omega-H", dest="omega_H", type=float)
    p.add_argument("--omega-D", dest="omega_D", type=float)
    p.add_argument("--epsilon", type=float)
    _common(p)
    p = sub.add_parser("figure", help="run a prebuilt figure recipe")
    p.add_argument("name", choices=("fig2", "fig4", "fig6", "fig7", "fig8", "fig9"))
    _common(p)
    p = sub.add_parser("validate", help="re-validate a saved solution file")
    p.add_argument("path")
    p.add_argument("--trials", type=int, help="default: the stored run's")
    p.add_argument("--samples", type=int, help="default: the stored run's")
    p.add_argument("--seed", type=int, help="default: the stored run's validation seed")
    p.add_argument("--bounded", action="store_true", help="also sample the bounded balls")
    p.add_argument("--out", help="report CSV path (default: stdout)")
    p = sub.add_parser("oracle", help="run the brute-force oracle suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (default: stdout)")
    return ap


def validate_file(path, trials=None, seed=None, samples=None, bounded=False):
    """Re-validate a solution file; unset arguments fall back to the stored run's."""
    if trials is not None and trials < 1:
        raise ValueError("trials must be >= 1")
    with open(path) as fh:
        meta, cfg, ch, W, theta = solution_from_text(fh.read())
    trials = int(meta.get("trials", 10_000)) if trials is None else trials
    samples = int(meta.get("samples", 1000)) if samples is None else samples
    seed = int(meta.get("validate_seed", 0)) if seed is None else seed
    wH, wD, eps = float(meta["omega_H"]), float(meta["omega_D"]), float(meta["epsilon"])
    stat = statistical_from_levels(ch, wH, wD, eps)
    algo = meta.get("algorithm", "")
    wD_design = wD if algo.endswith("fcu") else 0.0
    bnd = bounded_from_levels(ch, wH, wD_design, eps) if (bounded or algo.startswith("bcsie")) else None
    return validate_solution(W, theta, ch, cfg.R_th, cfg.sigma2, statistical=stat, bounded=bnd,
                             trials=trials, samples=samples, seed=seed)


def _write(text, path):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "run":
            spec = spec_from_args(args)
            run(spec, args.out, args.workers, log=sys.stdout)
        elif args.verb == "figure":
            caps = _parse_caps(args.cap_dims) if args.cap_dims else (8, 8, 3)
            for spec in figure_recipes(args.name, caps):
                kw = {k: getattr(args, k) for k in ("seed", "realizations", "max_ao", "trials",
                                                    "samples") if getattr(args, k) is not None}
                spec = replace(spec, **kw)
                sys.stdout.write(f"# {spec.label}\n")
                run(spec, os.path.join(args.out, args.name, spec.label), args.workers,
                    log=sys.stdout)
        elif args.verb == "validate":
            rep = validate_file(args.path, args.trials, args.seed, args.samples, args.bounded)
            _write(rep.to_csv(), args.out)
        elif args.verb == "oracle":
            res = oracle_suite(args.seed)
            _write(oracle_report_csv(res), args.out)
            return 0 if all(r.passed for r in res) else 1
    except (ValueError, OSError) as exc:
        sys.stderr.write(f"risrobust: error: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
