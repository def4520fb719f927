"""Command-line surface: simulate, fit, sample, eval, account."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .core import (ConfigError, ParticleSystem, TemporalDataset, TimeGrid,
                   TrajDPError, derive_rng, load_config, validate_dataset)
from .eot import compose_plans, read_plans, write_plans
from .evaluate import (data_fit_value, hellinger_smoothed, w2_average,
                       write_metrics_csv)
from .mfld import read_checkpoint, run, write_checkpoint
from .privacy import PrivacyLedger, read_ledger, report_json, write_report
from .sampler import exact_chain, sample_trajectories, write_sampled
from .warmstart import (gaussian_init, materialize_particles,
                        private_cluster_init, private_mean_init,
                        read_warmstart, write_warmstart)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _parse_deltas(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    sim = cfg["simulate"]
    if sim is None:
        raise ConfigError("config has no [simulate] section")
    seed = args.seed if args.seed is not None else int(sim.get("seed", 0))
    rng = derive_rng(seed, (0, 0, 0, 0, 0))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    kind = sim.get("kind", "multimodal")
    T = int(sim.get("timesteps", 10))
    grid = TimeGrid.uniform(T)
    if kind == "multimodal":
        dataset, truth = data_mod.make_multimodal(
            int(sim.get("n_per_mode", 1000)), grid,
            float(sim.get("noise_var", 0.005)), rng)
    elif kind == "sde":
        d = int(sim.get("dim", 1))
        drift_name = sim.get("drift", "zero")
        if drift_name == "zero":
            drift = data_mod.zero_drift
        elif drift_name == "quadratic":
            drift = data_mod.quadratic_well(float(sim.get("a", 1.0)))
        else:
            raise ConfigError(f"unknown drift {drift_name!r}")
        x0 = sim.get("x0")
        if x0 is not None:
            init = data_mod.InitialLaw.point(np.asarray(x0, dtype=float))
        else:
            init = data_mod.InitialLaw.gaussian(np.zeros(d),
                                                float(sim.get("init_std", 0.1)))
        spec = data_mod.SdeSpec(drift, float(sim.get("tau_true", 1.0)), init, d)
        truth = data_mod.simulate_sde(spec, int(sim.get("n_paths", 1000)),
                                      grid, int(sim.get("steps_per_gap", 10)),
                                      rng)
        dataset = data_mod.marginalize(truth, grid, False)
    else:
        raise ConfigError(f"unknown simulate kind {kind!r}")

    data_mod.write_grid(out / "grid.json", grid)
    data_mod.write_dataset(out / "dataset.jsonl", dataset)
    data_mod.write_trajectories(out / "truth.jsonl", truth)
    print(f"wrote {out}/grid.json, dataset.jsonl, truth.jsonl")
    return EXIT_OK


def build_init(dataset: TemporalDataset, cfg: dict, seed: int,
               ledger: PrivacyLedger, warmstart_path=None):
    init = cfg["init"]
    run_cfg = cfg["run"]
    rng = derive_rng(seed, (0, 0, 0, 0, 3))
    m = run_cfg.particles
    d = dataset.dim
    if warmstart_path is not None:
        ws = read_warmstart(warmstart_path)
        ledger.extend(ws.ledger_entries)
        return materialize_particles(ws, m, init.jitter, rng), ws
    if init.mode in ("none", "gaussian"):
        return gaussian_init(dataset.grid, m, d, init.mean[:d]
                             if len(init.mean) >= d else init.mean[0],
                             init.std, rng), None
    if init.mode == "mean":
        ws = private_mean_init(dataset, run_cfg.radius, init.eps, init.delta,
                               rng)
    elif init.mode == "cluster":
        ws = private_cluster_init(dataset, init.k, run_cfg.radius, init.eps,
                                  init.delta, init.lloyd_iters, rng)
    else:
        raise ConfigError(f"unknown init mode {init.mode!r}")
    ledger.extend(ws.ledger_entries)
    return materialize_particles(ws, m, init.jitter, rng), ws


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    run_cfg = cfg["run"]
    if args.seed is not None:
        from dataclasses import replace
        run_cfg = replace(run_cfg, seed=args.seed)
        cfg = dict(cfg, run=run_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    grid = data_mod.read_grid(args.grid)
    dataset = data_mod.read_dataset(args.dataset, grid)
    validate_dataset(dataset, run_cfg.radius)

    ledger = PrivacyLedger()
    init_state, ws = build_init(dataset, cfg, run_cfg.seed, ledger,
                                args.warmstart)
    if ws is not None:
        write_warmstart(out / "warmstart.json", ws)

    result = run(dataset, run_cfg.phase_list(), run_cfg, init_state,
                 checkpoint_every=args.checkpoint_every,
                 checkpoint_path=out / "checkpoint.jsonl")
    ledger.extend(result.ledger_entries)

    write_checkpoint(out / "particles.jsonl", result.state,
                     {"seed": run_cfg.seed, "tau": result.final_tau})
    write_plans(out / "plans.json", result.plans,
                meta={"tau": result.final_tau, "seed": run_cfg.seed})
    deltas = _parse_deltas(args.delta) if args.delta else []
    write_report(out / "privacy_report.json", ledger, deltas)
    print(f"wrote {out}/particles.jsonl, plans.json, privacy_report.json")
    return EXIT_OK


def cmd_sample(args) -> int:
    particles, meta = read_checkpoint(args.particles)
    tau = float(meta.get("tau", 0.0))
    if args.plans_kind == "exact":
        chain = exact_chain(particles)
    else:
        plans, plan_meta = read_plans(args.plans)
        tau = float(plan_meta.get("tau", tau))
        chain = compose_plans(plans, tol=1e-6)
    if args.times == "grid":
        times = particles.grid.times
    else:
        times = np.asarray([float(v) for v in args.times.split(",")])
    trajs = sample_trajectories(chain, particles, args.n_paths, tau,
                                args.seed if args.seed is not None else 0)
    write_sampled(args.out, trajs, times)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    grid = data_mod.read_grid(args.grid)
    dataset = data_mod.read_dataset(args.dataset, grid)
    particles, _ = read_checkpoint(args.particles)
    rng = derive_rng(args.seed if args.seed is not None else 0,
                     (0, 0, 0, 0, 0))
    rows = []
    metrics = args.metric.split(",")
    if "w2" in metrics:
        avg, vals = w2_average(particles, dataset, rng=rng)
        for i, v in enumerate(vals):
            rows.append({"time_index": i, "metric": "w2", "value": v})
        rows.append({"time_index": "avg", "metric": "w2", "value": avg})
    if "df" in metrics:
        vals = [data_fit_value(particles.particles[i], dataset.snapshots[i],
                               args.sigma) for i in range(grid.T)]
        for i, v in enumerate(vals):
            rows.append({"time_index": i, "metric": "df", "value": v})
        rows.append({"time_index": "avg", "metric": "df",
                     "value": float(np.mean(vals))})
    if "hellinger" in metrics:
        d = dataset.dim
        if d > 3:
            raise ConfigError("hellinger metric supports d <= 3")
        all_pts = np.concatenate([*dataset.snapshots,
                                  particles.particles.reshape(-1, d)])
        axes = [np.arange(all_pts[:, j].min() - 3 * args.sigma,
                          all_pts[:, j].max() + 3 * args.sigma,
                          args.sigma / 2.0) for j in range(d)]
        vals = [hellinger_smoothed(particles.particles[i],
                                   dataset.snapshots[i], args.sigma, axes)
                for i in range(grid.T)]
        for i, v in enumerate(vals):
            rows.append({"time_index": i, "metric": "hellinger", "value": v})
        rows.append({"time_index": "avg", "metric": "hellinger",
                     "value": float(np.mean(vals))})
    write_metrics_csv(args.out, rows)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_account(args) -> int:
    deltas = _parse_deltas(args.delta) if args.delta else []
    if args.ledger:
        ledger = read_ledger(args.ledger)
    else:
        cfg = load_config(args.config)
        run_cfg = cfg["run"]
        from .mfld import LedgerEntry
        from .privacy import gdp_of_dpsgd
        ledger = PrivacyLedger()
        for p_idx, phase in enumerate(run_cfg.phase_list()):
            if phase.iterations > 0 and run_cfg.clip is not None:
                ledger.add(LedgerEntry(
                    label=f"mfld_phase_{p_idx}", kind="gdp",
                    mu=gdp_of_dpsgd(run_cfg.subsample_rate, phase.iterations,
                                    phase.tau)))
    doc = report_json(ledger, deltas)
    text = json.dumps(doc, sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dptraj")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="generate a benchmark dataset")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(fn=cmd_simulate)

    fp = sub.add_parser("fit", help="fit private particle marginals")
    fp.add_argument("--config", required=True)
    fp.add_argument("--dataset", required=True)
    fp.add_argument("--grid", required=True)
    fp.add_argument("--out", required=True)
    fp.add_argument("--seed", type=int)
    fp.add_argument("--warmstart", help="pre-computed warm-start JSON")
    fp.add_argument("--delta", help="comma list of deltas for the report")
    fp.add_argument("--checkpoint-every", type=int, default=None)
    fp.set_defaults(fn=cmd_fit)

    smp = sub.add_parser("sample", help="sample synthetic trajectories")
    smp.add_argument("--particles", required=True)
    smp.add_argument("--plans")
    smp.add_argument("--n-paths", type=int, default=50)
    smp.add_argument("--times", default="grid",
                     help='"grid" or comma list of times')
    smp.add_argument("--plans-kind", choices=["entropic", "exact"],
                     default="entropic")
    smp.add_argument("--seed", type=int)
    smp.add_argument("--out", required=True)
    smp.set_defaults(fn=cmd_sample)

    ep = sub.add_parser("eval", help="evaluate fitted particles")
    ep.add_argument("--dataset", required=True)
    ep.add_argument("--grid", required=True)
    ep.add_argument("--particles", required=True)
    ep.add_argument("--metric", default="w2",
                    help="comma list from {w2, df, hellinger}")
    ep.add_argument("--sigma", type=float, default=0.05)
    ep.add_argument("--seed", type=int)
    ep.add_argument("--out", required=True)
    ep.set_defaults(fn=cmd_eval)

    ap = sub.add_parser("account", help="privacy accounting report")
    ap.add_argument("--ledger")
    ap.add_argument("--config")
    ap.add_argument("--delta", help="comma list of deltas")
    ap.add_argument("--out")
    ap.set_defaults(fn=cmd_account)
    return p


def main(argv=None) -> int:
    os.environ.setdefault("DPTRAJ_THREADS", "1")  # results never depend on it
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "account" and not (args.ledger or args.config):
        print("account needs --ledger or --config", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"missing file: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrajDPError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
