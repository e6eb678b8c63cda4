"""Operator-facing command line.

Subcommands: sample, compare, verify, ablate, dump-schedule, stub-critic.
Every output file starts with the resolved config (JSONL header line,
CSV comment line, JSON field); rasters carry it as a PNG tEXt chunk.
Exit codes: 2 usage, 1 runtime failure (partial outputs flushed), 0 ok.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

from .analysis import (ablation_harness, alignment_metrics, compare_methods,
                       verify_theorem1, verify_theorem2)
from .config import (METHODS, RunConfig, benchmark_config, default_config,
                     load_config)
from .critic import ROUND_MODES, RemoteCritic
from .denoiser import AnalyticDenoiser, RemoteDenoiser
from .render import render_preview
from .sampler import sample
from .schedule import build_schedule, schedule_rows


class UsageError(Exception):
    pass


def _resolved_config(args, base: RunConfig | None = None) -> RunConfig:
    cfg = base
    if cfg is None:
        try:
            cfg = load_config(args.config) if args.config else default_config()
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"invalid config {args.config}: {exc}") from exc
    overrides = {}
    for name in ("seed", "method"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if overrides:
        cfg = dataclasses.replace(cfg, sampler=dataclasses.replace(cfg.sampler, **overrides))
    return cfg


def _write_csv(path: str, cfg_obj: dict, fieldnames: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# config: " + json.dumps(cfg_obj, sort_keys=True) + "\n")
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _cmd_sample(args) -> int:
    cfg = _resolved_config(args)
    schedule = build_schedule(cfg.schedule.kind, cfg.schedule.T,
                              cfg.schedule.beta_start, cfg.schedule.beta_end)
    den = (RemoteDenoiser(args.denoiser_endpoint, schedule)
           if args.denoiser_endpoint else AnalyticDenoiser(cfg.world, schedule))
    kwargs = {"den": den, "schedule": schedule}
    if args.critic_endpoint and cfg.sampler.method == "ppad":
        kwargs["critic"] = RemoteCritic(args.critic_endpoint, cfg.world,
                                        rounds=args.rounds)
    with open(args.out, "w") as sink:
        try:
            final, trace = sample(cfg, trace_sink=sink, **kwargs)
        except Exception as exc:
            print(f"run aborted, partial trace flushed to {args.out}: {exc}",
                  file=sys.stderr)
            return 1
    metrics = alignment_metrics(final, cfg.prompt, cfg.world)
    stem = args.out[:-6] if args.out.endswith(".jsonl") else args.out
    with open(stem + ".final.json", "w") as fh:
        json.dump({"config": cfg.to_json(), "final": {"t": final.t, "x": final.x.tolist()},
                   "metrics": metrics,
                   "chain_digest": f"{trace.chain_digest():016x}"}, fh, sort_keys=True)
        fh.write("\n")
    if args.render:
        png = render_preview(final, cfg.world,
                             text={"config": json.dumps(cfg.to_json(), sort_keys=True)})
        with open(stem + ".png", "wb") as fh:
            fh.write(png)
    print(f"method={cfg.sampler.method} seed={cfg.sampler.seed} "
          f"success={metrics['success']} chain_digest={trace.chain_digest():016x}")
    return 0


def _cmd_compare(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            print(f"unknown method {m!r}", file=sys.stderr)
            return 2
    cfg = _resolved_config(args, benchmark_config() if args.config is None else None)
    workers = args.workers or int(os.environ.get("PPAD_WORKERS", "1"))
    rows = compare_methods(methods, args.runs, base_cfg=cfg, workers=workers)
    K = cfg.world.K
    fields = ["method", "seed", "success"] + [f"frac_{k}" for k in range(K)]
    _write_csv(args.out, cfg.to_json(), fields, rows)
    for m in methods:
        rate = sum(r["success"] for r in rows if r["method"] == m) / args.runs
        print(f"{m}: success_rate={rate:.3f} over {args.runs} runs")
    return 0


def _cmd_verify(args) -> int:
    schedule = build_schedule(T=args.T, beta_start=args.beta_start,
                              beta_end=args.beta_end)
    reports = []
    if args.theorem in (2, None):
        reports.append(verify_theorem2(schedule, default_config().world,
                                       trials=args.trials))
    if args.theorem in (1, None):
        deltas = [float(d) for d in args.delta.split(",")]
        for delta in deltas:
            for mode in ("constant-direction", "random-per-call"):
                reports.append(verify_theorem1(schedule, delta=delta,
                                               trials=args.trials1, mode=mode))
    payload = {"config": {"T": args.T, "beta_start": args.beta_start,
                          "beta_end": args.beta_end},
               "reports": [r.to_json() for r in reports]}
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
            fh.write("\n")
    ok = all(r.passed for r in reports)
    for r in reports:
        line = f"theorem {r.theorem}: pass={r.passed} trials={r.trials}"
        if r.theorem == 2:
            line += f" max_residual={r.max_residual:.3e}"
        else:
            line += (f" delta={r.summary['delta']} mode={r.summary['mode']}"
                     f" worst_e0={r.summary['worst_e0']:.4f}"
                     f" bound={r.summary['bound']:.4f}")
        print(line)
    return 0 if ok else 1


def _cmd_ablate(args) -> int:
    cfg = _resolved_config(args, benchmark_config() if args.config is None else None)
    rows = ablation_harness(cfg, runs=args.runs)
    _write_csv(args.out, cfg.to_json(),
               ["name", "sck", "lkg", "ppa", "runs", "success_rate"], rows)
    for row in rows:
        print(f"{row['name']}: success_rate={row['success_rate']:.3f}")
    full = next(r for r in rows if r["name"] == "full")
    return 0 if all(full["success_rate"] >= r["success_rate"] for r in rows) else 1


def _cmd_dump_schedule(args) -> int:
    schedule = build_schedule(T=args.T, beta_start=args.beta_start,
                              beta_end=args.beta_end)
    rows = [{k: ("" if v is None else v) for k, v in row.items()}
            for row in schedule_rows(schedule)]
    cfg_obj = {"kind": "linear", "T": args.T, "beta_start": args.beta_start,
               "beta_end": args.beta_end}
    fields = ["t", "beta", "alpha", "alpha_bar", "sigma", "snr", "gamma",
              "eta1", "eta2", "eta3", "eta4"]
    if args.out:
        _write_csv(args.out, cfg_obj, fields, rows)
    else:
        writer = csv.DictWriter(sys.stdout, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return 0


def _cmd_stub_critic(args) -> int:
    from .stubserver import serve_forever
    host, _, port = args.bind.partition(":")
    serve_forever(host or "127.0.0.1", int(port or 0), critic_score=args.score)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppad",
                                     description="critic-corrected diffusion sampling at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="run one seeded trajectory")
    p.add_argument("--config", default=None, help="config JSON path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--method", choices=METHODS, default=None)
    p.add_argument("--out", required=True, help="trace JSONL path")
    p.add_argument("--render", action="store_true", help="emit a PNG of the final batch")
    p.add_argument("--denoiser-endpoint",
                   default=os.environ.get("PPAD_DENOISER_ENDPOINT"),
                   help="remote /denoise base URL (default: analytic)")
    p.add_argument("--critic-endpoint",
                   default=os.environ.get("PPAD_CRITIC_ENDPOINT"),
                   help="remote /critic base URL (default: rule-based oracle)")
    p.add_argument("--rounds", choices=ROUND_MODES, default="1r",
                   help="critic exchange rounds when remote")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("compare", help="seeded success rates per method")
    p.add_argument("--config", default=None)
    p.add_argument("--methods", default="vanilla,zigzag,ppad")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("verify", help="numerical theorem verification")
    p.add_argument("--theorem", type=int, choices=(1, 2), default=None,
                   help="default: both")
    p.add_argument("--trials", type=int, default=1000, help="theorem 2 trials")
    p.add_argument("--trials1", type=int, default=100, help="theorem 1 trials per case")
    p.add_argument("--delta", default="0.01,0.1", help="error budgets, comma separated")
    p.add_argument("--T", type=int, default=50)
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.02)
    p.add_argument("--out", default=None, help="report JSON path")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("ablate", help="module ablation table")
    p.add_argument("--config", default=None)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--out", required=True, help="table CSV path")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("dump-schedule", help="per-timestep coefficient CSV")
    p.add_argument("--T", type=int, default=50)
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.02)
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.set_defaults(func=_cmd_dump_schedule)

    p = sub.add_parser("stub-critic", help="run the deterministic sidecar stub")
    p.add_argument("--bind", default="127.0.0.1:8787")
    p.add_argument("--score", type=float, default=None,
                   help="fixed critic score (default: always consistent)")
    p.set_defaults(func=_cmd_stub_critic)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
