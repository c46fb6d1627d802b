"""Command-line experiment runner.

    eigml run <config.json>        execute the configured sweep
    eigml validate <config.json>   check the config and exit
    eigml rates <config.json>      pilot-only mode: emit rate estimates

``run`` writes, under the configured output directory:
    results.json       one record per (tolerance, repetition); byte-stable
                       across reruns with the same config and seed
    run_meta.json      wall-clock times and environment (timestamps live
                       here, never in results.json)
    error_vs_tol.csv, level_decay.csv, work_vs_tol.csv, L_vs_tol.csv

Exit codes: 0 success, 2 invalid configuration, 3 resource limit hit,
1 any other failure.  EIGML_WORKERS sets the size of the worker pool for
the (tolerance x repetition) sweep; the default 1 runs in-process.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import RunConfig, build_problem
from .dlmc import dlmc_estimate
from .errors import ConfigError, EigmlError, ResourceLimitError
from .mldlmc import dlmcis_estimate, mldlmc_estimate, pilot_run
from .mldlsc import mldlsc_estimate
from .util import fit_loglog_slope

SCHEMA_VERSION = 1


def _task_seed(seed: int, tol_index: int, repetition: int) -> int:
    # disjoint per-task streams; keep well inside uint64
    return (seed * 1_000_003 + tol_index * 1009 + repetition) % (2**62)


def _run_single(cfg_dict: dict, tol_index: int, repetition: int) -> dict:
    cfg = RunConfig.from_dict(cfg_dict)
    model, prior, noise, reference = build_problem(cfg)
    tol = cfg.tol_list[tol_index]
    seed = _task_seed(cfg.seed, tol_index, repetition)
    opts = dict(cfg.estimator_options)
    is_eit = cfg.model["kind"] == "eit"
    map_gtol = float(opts.pop("map_gtol", 1e-3 if is_eit else 1e-8))
    # boundary-truncated proposals on the plate model make single-draw
    # inner loops collapse too often; a floor keeps rejections in budget
    m_floor = int(opts.pop("M_floor", 8 if is_eit else 1))
    if cfg.estimator == "mldlmc":
        res = mldlmc_estimate(
            model, tol, cfg.alpha, seed, prior, noise,
            max_level=min(cfg.max_level, model.max_level), map_gtol=map_gtol, M_floor=m_floor,
            **{k: v for k, v in opts.items() if k in ("pilot_levels", "pilot_samples", "M_policy")},
        )
    elif cfg.estimator == "dlmcis":
        res = dlmcis_estimate(
            model, tol, cfg.alpha, seed, prior, noise,
            max_level=min(cfg.max_level, model.max_level), map_gtol=map_gtol, M_floor=m_floor,
            **{k: v for k, v in opts.items() if k in ("pilot_levels", "pilot_samples")},
        )
    elif cfg.estimator == "dlmc":
        N = int(opts.get("N", max(16, int(np.ceil(4.0 / tol**2)))))
        M = int(opts.get("M", max(16, int(np.ceil(4.0 / tol)))))
        level = int(opts.get("level", 0))
        res = dlmc_estimate(model, level, N, M, use_is=False, seed=seed, prior=prior,
                            noise=noise, alpha=cfg.alpha, map_gtol=map_gtol)
    elif cfg.estimator == "mldlsc":
        res = mldlsc_estimate(
            model, tol, prior, noise,
            beta2_level=int(opts.get("beta2_level", 1)),
            max_level=min(cfg.max_level, model.max_level),
            max_work=float(opts.get("max_work", 1e9)),
            map_gtol=map_gtol,
        )
    else:  # pragma: no cover - guarded by validation
        raise ConfigError("estimator", f"unknown estimator {cfg.estimator}")
    record = res.to_dict(include_wall_time=False)
    record.update({
        "tol": tol,
        "tol_index": tol_index,
        "repetition": repetition,
        "estimator": cfg.estimator,
        "model": cfg.model["kind"],
        "reference": reference,
    })
    if reference is not None:
        record["abs_error"] = abs(res.value - reference)
    return {"record": record, "wall_time": res.wall_time}


def _level_of(record: dict) -> int:
    params = record.get("extra", {}).get("params")
    if params:
        return int(params["L"])
    levels = [r["level"] for r in record["per_level"] if r["N"] > 0] or [
        r["level"] for r in record["per_level"]
    ]
    return max(levels) if levels else 0


def _write_outputs(cfg: RunConfig, records: list, wall_times: dict) -> None:
    os.makedirs(cfg.output_dir, exist_ok=True)
    records = sorted(records, key=lambda r: (r["tol_index"], r["repetition"]))
    with open(os.path.join(cfg.output_dir, "results.json"), "w") as fh:
        json.dump({"schema_version": SCHEMA_VERSION, "results": records}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    meta = {
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "wall_times": {f"{k[0]}:{k[1]}": v for k, v in sorted(wall_times.items())},
        "total_wall_time": sum(wall_times.values()),
    }
    with open(os.path.join(cfg.output_dir, "run_meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")

    def open_csv(name):
        return open(os.path.join(cfg.output_dir, name), "w", newline="")

    with open_csv("error_vs_tol.csv") as fh:
        w = csv.writer(fh)
        w.writerow(["tol", "repetition", "value", "stat_error", "bias_est", "reference", "abs_error"])
        for r in records:
            w.writerow([
                r["tol"], r["repetition"], repr(r["value"]), repr(r["stat_error"]),
                "" if r["bias_est"] is None else repr(r["bias_est"]),
                "" if r.get("reference") is None else repr(r["reference"]),
                "" if "abs_error" not in r else repr(r["abs_error"]),
            ])
    with open_csv("level_decay.csv") as fh:
        w = csv.writer(fh)
        w.writerow(["tol", "repetition", "level", "N", "M", "E", "V", "work"])
        for r in records:
            for lv in r["per_level"]:
                w.writerow([
                    r["tol"], r["repetition"], lv["level"], lv["N"], lv["M"],
                    repr(lv["E"]), repr(lv["V"]), repr(lv["work"]),
                ])
    with open_csv("work_vs_tol.csv") as fh:
        w = csv.writer(fh)
        w.writerow(["tol", "repetition", "total_work"])
        for r in records:
            w.writerow([r["tol"], r["repetition"], repr(r["total_work"])])
    with open_csv("L_vs_tol.csv") as fh:
        w = csv.writer(fh)
        w.writerow(["tol", "repetition", "L"])
        for r in records:
            w.writerow([r["tol"], r["repetition"], _level_of(r)])


def cmd_run(cfg: RunConfig, cfg_dict: dict) -> int:
    tasks = [(i, r) for i in range(len(cfg.tol_list)) for r in range(cfg.repetitions)]
    workers = int(os.environ.get("EIGML_WORKERS", "1"))
    results = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {(i, r): pool.submit(_run_single, cfg_dict, i, r) for i, r in tasks}
            for key, fut in futures.items():
                results[key] = fut.result()
    else:
        for i, r in tasks:
            results[(i, r)] = _run_single(cfg_dict, i, r)
    records = [v["record"] for v in results.values()]
    wall_times = {k: v["wall_time"] for k, v in results.items()}
    _write_outputs(cfg, records, wall_times)
    print(f"wrote {len(records)} records to {cfg.output_dir}")
    return 0


def cmd_rates(cfg: RunConfig) -> int:
    model, prior, noise, _ = build_problem(cfg)
    opts = cfg.estimator_options
    is_eit = cfg.model["kind"] == "eit"
    map_gtol = float(opts.get("map_gtol", 1e-3 if is_eit else 1e-8))
    L_pilot = int(opts.get("pilot_levels", min(3, model.max_level)))
    N_pilot = int(opts.get("pilot_samples", 5))
    m_small = int(opts.get("pilot_m_small", 8 if is_eit else 1))
    m_large = int(opts.get("pilot_m_large", 40 if is_eit else 10))
    t_levels = []
    for ell in range(L_pilot + 1):
        theta = prior.mean
        t0 = time.perf_counter()
        model.evaluate(theta, ell)
        t_levels.append(time.perf_counter() - t0)
    try:
        hs = [model.hierarchy.h(ell) for ell in range(L_pilot + 1)]
        gamma_wall = -fit_loglog_slope(np.array(hs), np.array(t_levels))[0]
    except ValueError:
        gamma_wall = float("nan")
    pilot = pilot_run(
        model, L_pilot, N_pilot, cfg.seed, prior, noise,
        M_small=m_small, M_large=m_large, map_gtol=map_gtol,
    )
    out = {
        "C1": pilot.C1,
        "C1_single": pilot.C1_single,
        "C2": pilot.C2,
        "eta_w": pilot.eta_w,
        "eta_s": pilot.eta_s,
        "eta_s_data": pilot.eta_s_data,
        "C3": pilot.C3,
        "C4": pilot.C4,
        "gamma_configured": model.hierarchy.gamma,
        "gamma_wall_clock": gamma_wall,
        "V": list(pilot.V),
        "E": list(pilot.E),
    }
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "rates.json"), "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="eigml", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "validate", "rates"):
        p = sub.add_parser(name)
        p.add_argument("config", help="path to the JSON run configuration")
    args = parser.parse_args(argv)
    try:
        with open(args.config) as fh:
            cfg_dict = json.load(fh)
        cfg = RunConfig.from_dict(cfg_dict)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "validate":
            print("config ok")
            return 0
        if args.command == "run":
            return cmd_run(cfg, cfg_dict)
        if args.command == "rates":
            return cmd_rates(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ResourceLimitError as exc:
        print(f"error: resource limit: {exc}", file=sys.stderr)
        return 3
    except EigmlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
