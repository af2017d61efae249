"""Command-line entry point: train, report, interpolate, envs, validate.

Exit codes: 0 success, 2 invalid input (config, arguments, missing files),
3 failure while running (partial outputs are kept and the manifest says so).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import ConfigError, config_hash, dump_config, load_config
from .envs import ENVIRONMENTS, make_env
from .metrics import default_eu_weights, front_summary, non_dominated_mask, reference_point
from .neural import Checkpoint
from .orchestrator import VARIANTS, interpolation_sweep, run_experiment
from .policy import WeightConditionedPolicy
from .weightspace import decompose

log = logging.getLogger("moppo")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3


class InputError(Exception):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _num(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _cols(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{i + 1}" for i in range(n)]


# ---------------------------------------------------------------------------
# train


def _write_manifest(out: Path, manifest: dict) -> None:
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_run_outputs(out: Path, result) -> list[str]:
    """Write every CSV, checkpoint and figure of a finished run; returns file names."""
    from .plotting import plot_fronts, plot_hv_curves

    cfg = result.config
    m = result.archive.m
    K = len(result.subspaces)
    written = []

    def done(name):
        written.append(name)

    _write_csv(out / "stage_reports.csv",
               ["stage", "seed", "iteration", "hv", "eu", "sparsity", "n_front",
                "live_policies"] + [f"mean_return_k{k}" for k in range(K)],
               [[r.stage, r.seed, r.iteration, _num(r.hv), _num(r.eu), _num(r.sparsity),
                 r.n_front, r.live_policies] + [_num(x) for x in r.mean_returns]
                for r in result.reports])
    done("stage_reports.csv")
    _write_csv(out / "hv_curve.csv", ["stage", "seed", "iteration", "hv"],
               [[r.stage, r.seed, r.iteration, _num(r.hv)] for r in result.reports])
    done("hv_curve.csv")
    _write_csv(out / "archive.csv", ["stage", "seed", "k"] + _cols("w", m) + _cols("v", m),
               [[r.stage, r.seed, r.k] + [_num(x) for x in r.w] + [_num(x) for x in r.value]
                for r in result.archive.records])
    done("archive.csv")
    front_rows = []
    for s in cfg.seeds:
        for r in result.archive.ccs(seed=s):
            front_rows.append([_num(x) for x in r.value] + [r.k, s, r.stage]
                              + [_num(x) for x in r.w])
    _write_csv(out / "front.csv", _cols("v", m) + ["k", "seed", "stage"] + _cols("w", m),
               front_rows)
    done("front.csv")
    _write_csv(out / "selection_log.csv",
               ["stage", "seed", "k", "rank"] + _cols("w", m) + ["predicted_hv", "beta"]
               + _cols("sigma", m),
               [[r["stage"], r["seed"], r["k"], r["rank"]] + [_num(x) for x in r["w"]]
                + [_num(r["predicted_hv"]), _num(r["beta"])] + [_num(x) for x in r["sigma"]]
                for r in result.selection_log])
    done("selection_log.csv")
    _write_csv(out / "surrogate_data.csv", ["stage", "seed", "k", "j"] + _cols("w", m) + ["delta"],
               [[r["stage"], r["seed"], r["k"], r["j"]] + [_num(x) for x in r["w"]]
                + [_num(r["delta"])] for r in result.surrogate_log])
    done("surrogate_data.csv")
    _write_csv(out / "training_log.csv",
               ["iteration", "seed", "k", "mean_return", "actor_loss", "critic_loss",
                "clip_fraction"],
               [[r["iteration"], r["seed"], r["k"], _num(r["mean_return"]), _num(r["actor_loss"]),
                 _num(r["critic_loss"]), _num(r["clip_fraction"])]
                for r in sorted(result.training_log,
                                key=lambda r: (r["seed"], r["k"], r["iteration"]))])
    done("training_log.csv")
    pool_rows = []
    for stage, pools in sorted(result.pools.items()):
        for (s, k), ws in sorted(pools.items()):
            pool_rows += [[stage, s, k] + [_num(x) for x in w] for w in ws]
    _write_csv(out / "pools.csv", ["stage", "seed", "k"] + _cols("w", m), pool_rows)
    done("pools.csv")
    # wall-clock lives apart from the reports so those stay byte-reproducible
    _write_csv(out / "timing.csv", ["stage", "seconds"],
               [[z, f"{t:.3f}"] for z, t in enumerate(result.stage_seconds)])
    done("timing.csv")

    ck_dir = out / "checkpoints"
    ck_dir.mkdir(exist_ok=True)
    for t in result.trainers:
        name = f"policy_k{t.k}_seed{t.seed}.txt"
        t.policy.to_checkpoint(seed=t.seed, k=t.k, iterations=t.iterations,
                               stage=cfg.stages).save(ck_dir / name)
        done(f"checkpoints/{name}")

    stages = sorted({r.stage for r in result.reports})
    hv = np.array([[r.hv for r in result.reports if r.stage == z] for z in stages])
    plot_hv_curves({cfg.variant: (stages, hv.mean(1), hv.std(1))}, out / "hv_curve.png",
                   title=f"{cfg.variant} on {cfg.env}")
    done("hv_curve.png")
    env = make_env(cfg.env)
    plot_fronts({f"seed {s}": result.archive.points(seed=s) for s in cfg.seeds},
                out / "front.png", title=f"{cfg.variant} on {cfg.env}",
                true_front=env.true_ccs())
    done("front.png")
    return written


def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config, overrides=args.set or ())
        changes = {}
        if args.stages is not None:
            changes["stages"] = args.stages
        if args.seeds is not None:
            changes["seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
        if args.variant is not None:
            changes["variant"] = args.variant
        if changes:
            cfg = replace(cfg, **changes)
            cfg.validate()
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INPUT

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(cfg))
    digest = config_hash(cfg)
    workers = args.workers or min(len(cfg.seeds) * cfg.decomposition.K, os.cpu_count() or 1)
    manifest = {
        "run_id": f"{cfg.variant}-{cfg.env}-{digest[:10]}",
        "config_hash": digest, "variant": cfg.variant, "env": cfg.env,
        "seeds": list(cfg.seeds), "workers": workers, "started": _now(), "finished": None,
        "status": "running", "outputs": ["config.ini", "manifest.json"],
    }
    _write_manifest(out, manifest)

    def progress(z, total):
        log.info("stage %d/%d done", z, total)

    try:
        t0 = time.perf_counter()
        result = run_experiment(cfg, workers=workers, progress=progress)
        manifest["reference_point"] = [float(x) for x in result.reference]
        manifest["outputs"] += write_run_outputs(out, result)
        manifest["elapsed_seconds"] = round(time.perf_counter() - t0, 3)
    except Exception as exc:  # noqa: BLE001 - any failure marks the run as failed
        log.exception("run failed")
        manifest.update(status="failed", finished=_now(), error=f"{type(exc).__name__}: {exc}")
        _write_manifest(out, manifest)
        print(f"error: run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    manifest.update(status="completed", finished=_now())
    _write_manifest(out, manifest)
    print(f"run {manifest['run_id']} written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def load_run(run_dir) -> dict:
    """Manifest, stored config and archive rows of a completed run."""
    run_dir = Path(run_dir)
    try:
        with open(run_dir / "manifest.json") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"{run_dir}: missing or corrupt manifest ({exc})") from None
    if not isinstance(manifest, dict) or manifest.get("status") != "completed":
        raise InputError(f"{run_dir}: run is not marked completed")
    try:
        cfg = load_config(run_dir / "config.ini", environ={})
        rows = _read_csv(run_dir / "archive.csv")
    except (ConfigError, OSError) as exc:
        raise InputError(f"{run_dir}: {exc}") from None
    m = make_env(cfg.env).spec.m
    try:
        stage = np.array([int(r["stage"]) for r in rows], dtype=int)
        seed = np.array([int(r["seed"]) for r in rows], dtype=int)
        k = np.array([int(r["k"]) for r in rows], dtype=int)
        values = np.array([[float(r[f"v{j + 1}"]) for j in range(m)] for r in rows]).reshape(-1, m)
        ws = np.array([[float(r[f"w{j + 1}"]) for j in range(m)] for r in rows]).reshape(-1, m)
    except (KeyError, ValueError) as exc:
        raise InputError(f"{run_dir}: corrupt archive.csv ({exc})") from None
    return {"dir": run_dir, "manifest": manifest, "config": cfg, "m": m, "stage": stage,
            "seed": seed, "k": k, "values": values, "ws": ws}


def summarise_run(run: dict, ref) -> dict:
    """Per-seed metrics of the final cumulative archive against ``ref``."""
    eu_w = default_eu_weights(run["m"])
    per_seed = {}
    for s in run["config"].seeds:
        pts = run["values"][run["seed"] == s]
        per_seed[s] = front_summary(pts, ref, eu_w)
    out = {"per_seed": per_seed}
    for key in ("hv", "eu", "sparsity"):
        vals = np.array([v[key] for v in per_seed.values()])
        out[f"{key}_mean"], out[f"{key}_std"] = float(vals.mean()), float(vals.std())
    return out


def hv_by_stage(run: dict, ref):
    stages = sorted(set(run["stage"].tolist()))
    eu_w = default_eu_weights(run["m"])
    table = []
    for z in stages:
        row = []
        for s in run["config"].seeds:
            mask = (run["seed"] == s) & (run["stage"] <= z)
            row.append(front_summary(run["values"][mask], ref, eu_w)["hv"])
        table.append(row)
    table = np.array(table)
    return stages, table.mean(1), table.std(1)


def shared_reference(runs):
    """The runs' common fixed reference point if they all have one, else one from all points."""
    refs = {r["config"].reference_point for r in runs}
    if len(refs) == 1 and None not in refs:
        return np.array(next(iter(refs)), dtype=float)
    return reference_point(np.vstack([r["values"] for r in runs]))


def _labels(runs) -> list[str]:
    labels, seen = [], {}
    for r in runs:
        base = r["dir"].resolve().name
        seen[base] = seen.get(base, 0) + 1
        labels.append(base if seen[base] == 1 else f"{base}-{seen[base]}")
    return labels


def format_table(header, rows) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]

    def line(cells):
        return "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()

    return "\n".join([line(header), line(["-" * w for w in widths])] + [line(r) for r in rows]) + "\n"


def cmd_report(args) -> int:
    from .plotting import plot_fronts, plot_hv_curves

    try:
        runs = [load_run(d) for d in args.run_dirs]
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    envs = {r["config"].env for r in runs}
    if len(envs) > 1:
        print(f"error: runs mix environments ({', '.join(sorted(envs))})", file=sys.stderr)
        return EXIT_INPUT
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ref = shared_reference(runs)
    labels = _labels(runs)
    m = runs[0]["m"]

    csv_rows, text_rows, curves, fronts = [], [], {}, {}
    for label, run in zip(labels, runs):
        summ = summarise_run(run, ref)
        cfg = run["config"]
        csv_rows.append([label, cfg.variant, cfg.env, len(cfg.seeds)]
                        + [_num(summ[f"{k}_{s}"]) for k in ("hv", "eu", "sparsity")
                           for s in ("mean", "std")])
        text_rows.append([label, cfg.variant, len(cfg.seeds)]
                         + [f"{summ[f'{k}_mean']:.4f} ± {summ[f'{k}_std']:.4f}"
                            for k in ("hv", "eu", "sparsity")])
        curves[f"{label} ({cfg.variant})"] = hv_by_stage(run, ref)
        fronts[f"{label} ({cfg.variant})"] = run["values"]
        pf_dir = out / label
        pf_dir.mkdir(exist_ok=True)
        rows = []
        for s in cfg.seeds:
            mask = run["seed"] == s
            for i in np.flatnonzero(mask)[_front_index(run["values"][mask])]:
                rows.append([_num(x) for x in run["values"][i]] + [int(run["k"][i]), s,
                                                                   int(run["stage"][i])]
                            + [_num(x) for x in run["ws"][i]])
        _write_csv(pf_dir / "pf.csv", _cols("v", m) + ["k", "seed", "stage"] + _cols("w", m), rows)

    header = ["run", "variant", "env", "seeds", "hv_mean", "hv_std", "eu_mean", "eu_std",
              "sparsity_mean", "sparsity_std"]
    _write_csv(out / "comparison.csv", header, csv_rows)
    text = format_table(["run", "variant", "seeds", "HV", "EU", "sparsity"], text_rows)
    text += f"\nreference point: ({', '.join(f'{x:.6g}' for x in ref)})\n"
    (out / "comparison.txt").write_text(text)
    env = make_env(runs[0]["config"].env)
    plot_hv_curves(curves, out / "hv_curves.png", title=f"Hypervolume on {env.name}")
    plot_fronts(fronts, out / "fronts.png", title=f"Fronts on {env.name}",
                true_front=env.true_ccs())
    print(text, end="")
    return EXIT_OK


def _front_index(points) -> np.ndarray:
    if len(points) == 0:
        return np.zeros(0, dtype=int)
    return np.flatnonzero(non_dominated_mask(points))


# ---------------------------------------------------------------------------
# interpolate


def parse_counts(text: str) -> list[int]:
    try:
        counts = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InputError(f"counts must be integers, got {text!r}") from None
    if not counts or any(c < 1 for c in counts) or any(b <= a for a, b in zip(counts, counts[1:])):
        raise InputError(f"counts must be positive and strictly ascending, got {text!r}")
    return counts


def load_policies(run_dir: Path, cfg) -> dict:
    policies = {}
    missing = []
    for s in cfg.seeds:
        for k in range(cfg.decomposition.K):
            path = run_dir / "checkpoints" / f"policy_k{k}_seed{s}.txt"
            if not path.exists():
                missing.append(path.name)
                continue
            policies[(k, s)] = WeightConditionedPolicy.from_checkpoint(Checkpoint.load(path))
    if missing:
        raise InputError(f"missing checkpoints: {', '.join(missing[:5])}"
                         + (" ..." if len(missing) > 5 else ""))
    return policies


def cmd_interpolate(args) -> int:
    from .plotting import plot_interpolation

    run_dir = Path(args.run_dir)
    try:
        counts = parse_counts(args.counts)
        cfg = load_config(run_dir / "config.ini", environ={})
        policies = load_policies(run_dir, cfg)
    except (InputError, ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    env = make_env(cfg.env)
    ref = None if cfg.reference_point is None else np.asarray(cfg.reference_point, float)
    rows = interpolation_sweep(policies, decompose(cfg.decomposition), env, counts, ref=ref)
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    seeds = sorted(cfg.seeds)
    for key in ("hv", "sparsity"):
        _write_csv(out / f"{key}_vs_n.csv",
                   ["n", f"{key}_mean", f"{key}_std"] + [f"{key}_seed{s}" for s in seeds],
                   [[r["n"], _num(r[key]), _num(r[f"{key}_std"])]
                    + [_num(x) for x in r[f"{key}_per_seed"]] for r in rows])
        plot_interpolation(rows, out / f"{key}_vs_n.png", key=key,
                           label="HV" if key == "hv" else "sparsity")
    for r in rows:
        print(f"n={r['n']:<5d} hv={r['hv']:.6f}  sparsity={r['sparsity']:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# envs / validate


def cmd_envs(args) -> int:
    rows = []
    for name in sorted(ENVIRONMENTS):
        s = make_env(name).spec
        rows.append([name, s.m, s.state_dim, s.action_dim, s.horizon])
    print(format_table(["env", "objectives", "state_dim", "action_dim", "horizon"], rows), end="")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config, overrides=args.set or ())
    except (ConfigError, OSError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INPUT
    d = cfg.decomposition
    print(f"ok: variant={cfg.variant} env={cfg.env} K={d.K} M={d.M} N={d.N} "
          f"seeds={','.join(map(str, cfg.seeds))} hash={config_hash(cfg)}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="moppo", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run one experiment")
    t.add_argument("config")
    t.add_argument("-o", "--out", required=True, help="output directory")
    t.add_argument("--stages", type=int)
    t.add_argument("--seeds", help="comma-separated seeds")
    t.add_argument("--variant", choices=VARIANTS)
    t.add_argument("--workers", type=int, help="parallel trainer processes")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("report", help="compare completed runs")
    r.add_argument("run_dirs", nargs="+")
    r.add_argument("-o", "--out", default="report")
    r.set_defaults(func=cmd_report)

    i = sub.add_parser("interpolate", help="HV and sparsity against evaluation-grid size")
    i.add_argument("run_dir")
    i.add_argument("--counts", default="10,20,50")
    i.add_argument("-o", "--out", help="output directory (default: the run directory)")
    i.set_defaults(func=cmd_interpolate)

    e = sub.add_parser("envs", help="list environments")
    e.set_defaults(func=cmd_envs)

    v = sub.add_parser("validate", help="check a config file")
    v.add_argument("config")
    v.add_argument("--set", action="append", metavar="KEY=VALUE")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
