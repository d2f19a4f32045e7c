"""Command-line interface.

Subcommands cover the whole desk-scale workflow: synthetic data generation,
viewport forecaster training/evaluation, bitrate agent training (with and
without the identifier guidance), agent evaluation, and plot emission.
All commands take --seed and write deterministic outputs.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import torch

from . import configio
from .agent import PpoConfig
from .forecasting import (
    ViewportForecaster,
    WindowedDataset,
    accuracy_by_family,
    load_forecaster,
    save_forecaster,
)
from .geometry import FieldOfView, TileGrid, load_viewport_traces, write_viewport_trace
from .orchestrator import (
    AgentPolicy,
    HeuristicPolicy,
    TrainingConfig,
    load_agent_checkpoint,
    run_ablation_no_repl,
    run_evaluation,
    run_training,
    save_agent_checkpoint,
    write_diagnostics_csv,
    write_eval_report_csv,
    write_identifier_diag_csv,
)
from .pipeline import build_viewport_plan, make_planned_envs
from .qoe import load_preference_csv, preference_pool
from .reporting import report_and_plot
from .simenv import (
    BitrateLadder,
    load_bandwidth_csv,
    load_manifest_csv,
    write_bandwidth_csv,
    write_manifest_csv,
)
from .traces import PatternFamily, gen_bandwidth_trace, gen_manifest, gen_viewport_traces


def _grid_from(cfg: dict, args) -> TileGrid:
    rows, cols = configio.parse_pair(getattr(args, "grid", None) or cfg.get("grid", "8x8"))
    width = configio.get_float(cfg, "width", 1920.0)
    height = configio.get_float(cfg, "height", 960.0)
    return TileGrid(int(rows), int(cols), width, height)


def _fov_from(cfg: dict, args=None) -> FieldOfView:
    raw = (getattr(args, "fov", None) if args is not None else None) \
        or cfg.get("fov", "0.33x0.33")
    w, h = configio.parse_pair(raw)
    return FieldOfView(w, h)


def _pool_from(cfg: dict, split: str):
    prefs_file = cfg.get("prefs_file")
    train, held_out = (load_preference_csv(prefs_file) if prefs_file
                       else preference_pool())
    return list(train) if split == "trained" else list(held_out)


def cmd_gen_traces(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True) if args.what == "viewport" else \
        out.parent.mkdir(parents=True, exist_ok=True)
    if args.what == "viewport":
        grid = TileGrid(video_width=args.width, video_height=args.height)
        if args.family == "focus":
            family = PatternFamily.focus(noise_scale=args.noise, reversion=args.reversion)
        else:
            family = PatternFamily.explore(drift_rate=args.drift, dwell_prob=args.dwell,
                                           noise_scale=args.noise)
        traces = gen_viewport_traces(family, args.users, args.duration, args.seed, grid,
                                     timestep_duration=args.timestep)
        for trace in traces:
            write_viewport_trace(out / f"{trace.user_id}.csv", trace, grid)
        print(f"wrote {len(traces)} viewport traces to {out}")
    elif args.what == "bandwidth":
        trace = gen_bandwidth_trace(args.profile, args.duration, args.seed,
                                    level_mbps=args.level, low_mbps=args.low,
                                    high_mbps=args.high, period_s=args.period,
                                    sigma=args.sigma)
        write_bandwidth_csv(out, trace)
        print(f"wrote bandwidth trace to {out}")
    else:  # manifest
        grid = TileGrid(video_width=args.width, video_height=args.height)
        ladder = BitrateLadder(configio.parse_ladder(args.ladder))
        manifest = gen_manifest(grid, args.chunks, ladder, args.seed,
                                chunk_duration=args.chunk_duration)
        write_manifest_csv(out, manifest)
        print(f"wrote manifest ({args.chunks} chunks) to {out}")
    return 0


def _forecaster_from_config(cfg: dict, seed: int) -> ViewportForecaster:
    return ViewportForecaster(
        m_heads=configio.get_int(cfg, "m_heads", 3),
        d_embed=configio.get_int(cfg, "d_embed", 512),
        n_attn_heads=configio.get_int(cfg, "n_attn_heads", 8),
        d_key=configio.get_int(cfg, "d_key", 64),
        d_value=configio.get_int(cfg, "d_value", 64),
        n_blocks=configio.get_int(cfg, "n_blocks", 2),
        history_len=configio.get_int(cfg, "history_len", 5),
        horizon=configio.get_int(cfg, "horizon", 5),
        ffn_width=int(cfg["ffn_width"]) if "ffn_width" in cfg else None,
        video_width=configio.get_float(cfg, "width", 1920.0),
        video_height=configio.get_float(cfg, "height", 960.0),
        learning_rate=configio.get_float(cfg, "learning_rate", 1e-4),
        batch_size=configio.get_int(cfg, "batch_size", 64),
        max_epochs=configio.get_int(cfg, "max_epochs", 50),
        patience=configio.get_int(cfg, "patience", 10),
        grad_clip=configio.get_float(cfg, "grad_clip", 1.0),
        val_fraction=configio.get_float(cfg, "val_fraction", 0.1),
        seed=seed,
    )


def cmd_train_vp(args) -> int:
    cfg = configio.load_kv_config(args.config) if args.config else {}
    forecaster = _forecaster_from_config(cfg, args.seed)
    grid = _grid_from(cfg, args)
    traces = load_viewport_traces(args.traces, grid)
    dataset = WindowedDataset.from_traces(traces, forecaster.history_len,
                                          forecaster.horizon,
                                          stride=configio.get_int(cfg, "stride", 0) or None)
    families = configio.get_str(cfg, "train_families")
    if families:
        dataset = dataset.subset([f.strip() for f in families.split(",")])
    forecaster.fit(dataset)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_forecaster(out, forecaster)
    losses_csv = out.with_suffix(out.suffix + ".losses.csv")
    with losses_csv.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, (tr, va) in enumerate(zip(forecaster.loss_log_, forecaster.val_log_)):
            writer.writerow([epoch, f"{tr:.9g}", f"{va:.9g}"])
    print(f"trained on {len(dataset)} windows; checkpoint at {out}, losses at {losses_csv}")
    return 0


def cmd_eval_vp(args) -> int:
    forecaster = load_forecaster(args.ckpt)
    cfg = {}
    grid = TileGrid(video_width=forecaster.video_width, video_height=forecaster.video_height)
    traces = load_viewport_traces(args.traces, grid)
    dataset = WindowedDataset.from_traces(traces, forecaster.history_len, forecaster.horizon)
    fov = _fov_from(cfg, args)
    curves = accuracy_by_family(forecaster, dataset, fov, grid)
    report = Path(args.report)
    report.parent.mkdir(parents=True, exist_ok=True)
    with report.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["family", "horizon_step", "mean_iou"])
        for family in sorted(curves):
            for step, value in enumerate(curves[family], start=1):
                writer.writerow([family, step, f"{value:.9g}"])
    print(f"wrote accuracy report to {report}")
    return 0


def _load_abr_inputs(args, cfg):
    ladder = BitrateLadder(configio.parse_ladder(cfg.get("ladder", "1,5,8,16,35")))
    grid = _grid_from(cfg, args)
    chunk_duration = configio.get_float(cfg, "chunk_duration", 1.0)
    manifests = [load_manifest_csv(p, ladder, grid, chunk_duration)
                 for p in sorted(Path(args.manifests).glob("*.csv"))]
    traces = [load_bandwidth_csv(p) for p in sorted(Path(args.bandwidth).glob("*.csv"))]
    if not manifests:
        raise SystemExit(f"no manifest CSVs found in {args.manifests}")
    if not traces:
        raise SystemExit(f"no bandwidth CSVs found in {args.bandwidth}")

    viewports_dir = getattr(args, "viewports", None) or cfg.get("viewports")
    if not viewports_dir:
        raise SystemExit("viewport traces are required: pass --viewports or set "
                         "'viewports' in the config file")
    vp_traces = load_viewport_traces(viewports_dir, grid)
    forecaster = None
    ckpt = getattr(args, "vp_ckpt", None)
    if ckpt:
        forecaster = load_forecaster(ckpt)
    fov = _fov_from(cfg, args)
    plans = [build_viewport_plan(t.trajectory, grid, fov, chunk_duration, forecaster)
             for t in vp_traces]
    envs = make_planned_envs(manifests, traces, plans,
                             buffer_cap=configio.get_float(cfg, "buffer_cap", 4.0),
                             scale=configio.get_float(cfg, "scale", 2.0),
                             k=configio.get_int(cfg, "k", 8))
    env_config = {
        "ladder": ",".join(str(r) for r in ladder.rungs),
        "buffer_cap": configio.get_float(cfg, "buffer_cap", 4.0),
        "scale": configio.get_float(cfg, "scale", 2.0),
        "k": configio.get_int(cfg, "k", 8),
        "chunk_duration": chunk_duration,
        "fov": cfg.get("fov", "0.33x0.33"),
    }
    return envs, env_config


def _training_config(args, cfg) -> TrainingConfig:
    alpha = args.alpha if args.alpha is not None else configio.get_float(cfg, "alpha", 0.5)
    ppo = PpoConfig(
        clip_epsilon=configio.get_float(cfg, "clip_epsilon", 0.2),
        entropy_coef=(args.entropy_coef if args.entropy_coef is not None
                      else configio.get_float(cfg, "entropy_coef", 0.02)),
        value_coef=configio.get_float(cfg, "value_coef", 0.5),
        discount=(args.discount if args.discount is not None
                  else configio.get_float(cfg, "discount", 0.95)),
        gae_lambda=configio.get_float(cfg, "gae_lambda", 0.95),
        epochs=configio.get_int(cfg, "ppo_epochs", 4),
        learning_rate=configio.get_float(cfg, "agent_lr", 5e-4),
    )
    return TrainingConfig(
        iterations=configio.get_int(cfg, "iterations", 200),
        pref_batch=configio.get_int(cfg, "pref_batch", 4),
        alpha=alpha,
        identifier_lr=configio.get_float(cfg, "identifier_lr", 1e-4),
        identifier_adaptive=configio.get_bool(cfg, "identifier_adaptive", True),
        ppo=ppo,
        seed=args.seed,
        single_pref_iterations=configio.get_bool(cfg, "single_pref_iterations", False),
    )


def cmd_train_abr(args, force_alpha_zero: bool = False) -> int:
    cfg = configio.load_kv_config(args.config) if args.config else {}
    envs, env_config = _load_abr_inputs(args, cfg)
    config = _training_config(args, cfg)
    if force_alpha_zero:
        from dataclasses import replace

        config = replace(config, alpha=0.0)
    pool = _pool_from(cfg, "trained")
    result = (run_ablation_no_repl if force_alpha_zero else run_training)(envs, pool, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = save_agent_checkpoint(out, result)
    torch.save(env_config, out / "env_config.pt")
    write_diagnostics_csv(out / "diagnostics.csv", result)
    write_identifier_diag_csv(out / "identifier_diag.csv", result)
    print(f"trained {config.iterations} iterations ({result.env_steps} env steps); "
          f"checkpoint at {path}")
    return 0


def cmd_eval_abr(args) -> int:
    cfg = configio.load_kv_config(args.config) if args.config else {}
    ckpt_dir = Path(args.ckpt)
    env_config_path = ckpt_dir / "env_config.pt"
    if env_config_path.exists():
        stored = torch.load(env_config_path, weights_only=False)
        for key, value in stored.items():
            cfg.setdefault(key, str(value))
    envs, _ = _load_abr_inputs(args, cfg)
    prefs = _pool_from(cfg, args.split)
    if args.policy == "heuristic":
        policy = HeuristicPolicy()
    else:
        policy_net, _, _ = load_agent_checkpoint(ckpt_dir)
        policy = AgentPolicy(policy_net, greedy=True)
    rows = run_evaluation(policy, envs, prefs)
    report = Path(args.report)
    report.parent.mkdir(parents=True, exist_ok=True)
    write_eval_report_csv(report, rows)
    print(f"wrote evaluation report ({len(rows)} rows) to {report}")
    return 0


def cmd_plot(args) -> int:
    report_and_plot(args.infile, args.out)
    print(f"wrote figure to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tilecast",
                                     description="tile-based 360 streaming toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-traces", help="generate synthetic inputs")
    gen_sub = gen.add_subparsers(dest="what", required=True)
    gv = gen_sub.add_parser("viewport")
    gv.add_argument("--family", choices=("focus", "explore"), required=True)
    gv.add_argument("--users", type=int, default=8)
    gv.add_argument("--duration", type=float, default=60.0)
    gv.add_argument("--seed", type=int, default=0)
    gv.add_argument("--out", required=True)
    gv.add_argument("--width", type=float, default=1920.0)
    gv.add_argument("--height", type=float, default=960.0)
    gv.add_argument("--timestep", type=float, default=0.2)
    gv.add_argument("--noise", type=float, default=0.01)
    gv.add_argument("--reversion", type=float, default=0.15)
    gv.add_argument("--drift", type=float, default=0.01)
    gv.add_argument("--dwell", type=float, default=0.1)
    gv.set_defaults(func=cmd_gen_traces)
    gb = gen_sub.add_parser("bandwidth")
    gb.add_argument("--profile", choices=("stable", "stepwise", "bursty"), required=True)
    gb.add_argument("--duration", type=float, default=120.0)
    gb.add_argument("--seed", type=int, default=0)
    gb.add_argument("--out", required=True)
    gb.add_argument("--level", type=float, default=10.0)
    gb.add_argument("--low", type=float, default=4.0)
    gb.add_argument("--high", type=float, default=8.0)
    gb.add_argument("--period", type=float, default=2.0)
    gb.add_argument("--sigma", type=float, default=0.35)
    gb.set_defaults(func=cmd_gen_traces)
    gm = gen_sub.add_parser("manifest")
    gm.add_argument("--chunks", type=int, default=32)
    gm.add_argument("--seed", type=int, default=0)
    gm.add_argument("--out", required=True)
    gm.add_argument("--ladder", default="1,5,8,16,35")
    gm.add_argument("--width", type=float, default=1920.0)
    gm.add_argument("--height", type=float, default=960.0)
    gm.add_argument("--chunk-duration", dest="chunk_duration", type=float, default=1.0)
    gm.set_defaults(func=cmd_gen_traces)

    tv = sub.add_parser("train-vp", help="train the viewport forecaster")
    tv.add_argument("--config", default=None)
    tv.add_argument("--traces", required=True)
    tv.add_argument("--seed", type=int, default=0)
    tv.add_argument("--out", required=True)
    tv.add_argument("--grid", default=None)
    tv.set_defaults(func=cmd_train_vp)

    ev = sub.add_parser("eval-vp", help="evaluate forecaster accuracy per family")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--traces", required=True)
    ev.add_argument("--report", required=True)
    ev.add_argument("--fov", default=None)
    ev.set_defaults(func=cmd_eval_vp)

    for name, force_zero in (("train-abr", False), ("ablate-no-repl", True)):
        ta = sub.add_parser(name, help="train the bitrate agent"
                            + (" without identifier guidance" if force_zero else ""))
        ta.add_argument("--config", default=None)
        ta.add_argument("--manifests", required=True)
        ta.add_argument("--bandwidth", required=True)
        ta.add_argument("--vp-ckpt", dest="vp_ckpt", default=None)
        ta.add_argument("--viewports", default=None)
        ta.add_argument("--seed", type=int, default=0)
        ta.add_argument("--out", required=True)
        ta.add_argument("--alpha", type=float, default=None)
        ta.add_argument("--entropy-coef", dest="entropy_coef", type=float, default=None)
        ta.add_argument("--discount", type=float, default=None)
        ta.add_argument("--grid", default=None)
        ta.add_argument("--fov", default=None)
        ta.set_defaults(func=cmd_train_abr, force_alpha_zero=force_zero)

    ea = sub.add_parser("eval-abr", help="evaluate a trained agent or the heuristic")
    ea.add_argument("--ckpt", required=True)
    ea.add_argument("--split", choices=("trained", "unseen"), required=True)
    ea.add_argument("--report", required=True)
    ea.add_argument("--config", default=None)
    ea.add_argument("--manifests", required=True)
    ea.add_argument("--bandwidth", required=True)
    ea.add_argument("--viewports", default=None)
    ea.add_argument("--vp-ckpt", dest="vp_ckpt", default=None)
    ea.add_argument("--policy", choices=("agent", "heuristic"), default="agent")
    ea.add_argument("--grid", default=None)
    ea.add_argument("--fov", default=None)
    ea.add_argument("--seed", type=int, default=0)
    ea.set_defaults(func=cmd_eval_abr)

    pl = sub.add_parser("plot", help="render a report CSV to a PNG")
    pl.add_argument("--in", dest="infile", required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    previous_threads = torch.get_num_threads()
    torch.set_num_threads(1)  # keeps repeated runs bit-identical
    try:
        if getattr(args, "force_alpha_zero", None):
            return cmd_train_abr(args, force_alpha_zero=True)
        return args.func(args)
    finally:
        torch.set_num_threads(previous_threads)


if __name__ == "__main__":
    sys.exit(main())
