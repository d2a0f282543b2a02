"""Command-line entry point.

Exit codes: 0 success, 1 bad input (config, arguments, missing files),
2 training aborted on a non-finite loss, 3 checkpoint does not fit the
configured networks.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ABLATIONS, Config, ConfigError, config_to_dict, default_config, dump_config, load_config
from .controllers import CONTROLLERS, CthpPdController
from .marl import FeatureSpec, TrainingDiverged, evaluate, learner_from_checkpoint, read_curve, train
from .metrics import EpisodeLog, summarize
from .nn import CheckpointError
from .plots import episode_plots, heatmap_svg, learning_curve_svg
from .topology import communication_heatmap, read_adjacency_csv, write_adjacency_csv

EXIT_OK, EXIT_INPUT, EXIT_NAN, EXIT_CHECKPOINT = 0, 1, 2, 3
MANIFEST = "manifest.json"


class InputError(Exception):
    pass


# -- helpers -----------------------------------------------------------------------


def _load_cfg(path: str | None) -> Config:
    if path is None:
        return default_config()
    if not Path(path).is_file():
        raise InputError(f"config file not found: {path}")
    return load_config(path)


def _parse_seeds(text: str | None, cfg: Config) -> list[int]:
    if text is None:
        return list(cfg.train.seeds)
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise InputError(f"--seed expects comma-separated integers, got {text!r}") from exc
    if not seeds:
        raise InputError("--seed is empty")
    return seeds


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, cfg: Config, seeds: list[int], argv: list[str], started: str,
                   checkpoints: dict[str, str]) -> Path:
    """One manifest per output directory; enough to replay the run."""
    data = {
        "tool": "dctmarl", "version": __version__, "command": argv, "seeds": seeds,
        "config": config_to_dict(cfg), "config_ini": dump_config(cfg),
        "checkpoints": checkpoints, "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    path = out / MANIFEST
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=list) + "\n", encoding="utf-8")
    return path


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# -- commands ------------------------------------------------------------------------


def cmd_train(args, argv) -> int:
    started = _now()
    cfg = _load_cfg(args.config)
    if args.total_steps is not None:
        cfg = cfg.replace(train={"total_steps": args.total_steps})
    if args.ablation is not None:
        cfg = cfg.replace(train={"ablation": args.ablation})
    seeds = _parse_seeds(args.seed, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoints, curves = {}, []
    for seed in seeds:
        try:
            res = train(cfg, seed, out)
        except TrainingDiverged as exc:
            print(f"error: {exc}; diagnostics in {exc.dump_path}", file=sys.stderr)
            write_manifest(out, cfg, seeds, argv, started, checkpoints)
            return EXIT_NAN
        checkpoints[res.checkpoint_path.name] = res.checkpoint_sha256
        c = read_curve(res.curve_path)
        curves.append((f"seed {seed}", c[:, 1:3] if len(c) else c))
        print(f"seed {seed}: {res.steps} steps, {len(res.curve)} episodes -> {res.curve_path}")
    learning_curve_svg(out / "learning_curve.svg", curves)
    write_manifest(out, cfg, seeds, argv, started, checkpoints)
    return EXIT_OK


def _write_eval_outputs(out: Path, cfg: Config, results, method: str) -> None:
    logs = []
    for k, (log, adj, delivered) in enumerate(results, start=1):
        log.write_csv(out / f"episode_{k}.csv")
        write_adjacency_csv(out / f"adjacency_{k}.csv", adj, delivered)
        logs.append(log)
    table = summarize(logs, np.array(cfg.metrics.stability_c).reshape(2, 2), method)
    table.write_csv(out / "metrics.csv")
    (out / "metrics.json").write_text(table.to_json() + "\n", encoding="utf-8")
    episode_plots(logs[0], out, "episode_1")
    adj = [a for _, a, _ in results if len(a)]
    if adj:
        heatmap_svg(out / "heatmap.svg", communication_heatmap(adj))


def _trained_controller(cfg: Config, checkpoint: str | None):
    if checkpoint is None:
        raise InputError("--checkpoint is required for the trained controller")
    if not Path(checkpoint).is_file():
        raise InputError(f"checkpoint not found: {checkpoint}")
    return learner_from_checkpoint(cfg, checkpoint).execution_mode(True)


def _run_policy(args, argv, controller_name: str) -> int:
    started = _now()
    cfg = _load_cfg(args.config)
    ablation = getattr(args, "ablation", None)
    if ablation is not None:
        cfg = cfg.replace(train={"ablation": ablation})
    if args.episodes < 1:
        raise InputError("--episodes must be >= 1")
    seed = args.seed if args.seed is not None else cfg.scenario.seed
    if controller_name == "trained":
        ctrl = _trained_controller(cfg, args.checkpoint)
        method = "DCT-MARL" if cfg.train.ablation == "none" else f"DCT-MARL ({cfg.train.ablation})"
    else:
        sc = cfg.scenario
        ctrl = CthpPdController(FeatureSpec.from_config(cfg), sc.u_min, sc.u_max)
        method = "CTHP-PD"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = evaluate(cfg, ctrl, args.episodes, seed)
    _write_eval_outputs(out, cfg, results, method)
    ck = {Path(args.checkpoint).name: _sha256(Path(args.checkpoint))} if controller_name == "trained" else {}
    write_manifest(out, cfg, [seed], argv, started, ck)
    print(f"{len(results)} episode(s) -> {out}")
    return EXIT_OK


def cmd_eval(args, argv) -> int:
    return _run_policy(args, argv, "trained")


def cmd_sim(args, argv) -> int:
    if args.controller not in CONTROLLERS:
        raise InputError(f"unknown controller {args.controller!r}; choose from {', '.join(CONTROLLERS)}")
    return _run_policy(args, argv, args.controller)


def write_heatmap_csv(path: Path, freq: np.ndarray) -> None:
    n = freq.shape[0]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sender"] + [f"receiver_{r}" for r in range(n)])
        for s in range(n):
            w.writerow([s] + ["N/A" if np.isnan(v) else repr(float(v)) for v in freq[s]])


def cmd_heatmap(args, argv) -> int:
    started = _now()
    logs = Path(args.logs)
    files = sorted(logs.rglob("adjacency*.csv")) if logs.is_dir() else []
    trajs = []
    for f in files:
        sel, _ = read_adjacency_csv(f)
        if len(sel):
            trajs.append(sel)
    if not trajs:
        raise InputError(f"no adjacency traces found under {logs}")
    sizes = {t.shape[1] for t in trajs}
    if len(sizes) != 1:
        raise InputError("adjacency traces cover different platoon sizes")
    freq = communication_heatmap(trajs)
    out = Path(args.out) if args.out else logs
    out.mkdir(parents=True, exist_ok=True)
    write_heatmap_csv(out / "heatmap.csv", freq)
    heatmap_svg(out / "heatmap.svg", freq)
    if args.out:
        write_manifest(out, default_config(), [], argv, started, {})
    print(f"heatmap over {len(trajs)} trace(s) -> {out / 'heatmap.csv'}")
    return EXIT_OK


def cmd_metrics(args, argv) -> int:
    started = _now()
    cfg = _load_cfg(args.config)
    logs_dir = Path(args.logs)
    files = sorted(logs_dir.glob("episode_*.csv")) if logs_dir.is_dir() else []
    if not files:
        raise InputError(f"no episode logs (episode_*.csv) under {logs_dir}")
    try:
        logs: list[EpisodeLog] = [EpisodeLog.read_csv(f, cfg.scenario) for f in files]
    except (ValueError, KeyError) as exc:
        raise InputError(str(exc)) from exc
    table = summarize(logs, np.array(cfg.metrics.stability_c).reshape(2, 2), args.method)
    out = Path(args.out) if args.out else logs_dir
    out.mkdir(parents=True, exist_ok=True)
    table.write_csv(out / "metrics.csv")
    (out / "metrics.json").write_text(table.to_json() + "\n", encoding="utf-8")
    if args.plots:
        for f, log in zip(files, logs):
            episode_plots(log, out, f.stem)
    if args.out:
        write_manifest(out, cfg, [], argv, started, {})
    print(table.to_json())
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dctmarl", description=__doc__.splitlines()[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog="exit codes: 0 ok, 1 input/config error, 2 non-finite loss, "
                                       "3 checkpoint/config mismatch")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train the platoon controllers, one run per seed")
    t.add_argument("--config", help="INI config file (defaults built in when omitted)")
    t.add_argument("--seed", help="seed or comma-separated seeds, e.g. 1,2,3 (default: train.seeds)")
    t.add_argument("--out", required=True, help="output directory for curves, logs, checkpoints")
    t.add_argument("--total-steps", type=int, help="override train.total_steps")
    t.add_argument("--ablation", choices=ABLATIONS, help="override train.ablation")
    t.set_defaults(func=cmd_train)

    def policy_flags(q):
        q.add_argument("--config", help="INI config file (defaults built in when omitted)")
        q.add_argument("--episodes", type=int, default=1, help="number of evaluation episodes (default 1)")
        q.add_argument("--seed", type=int, help="evaluation seed (default: scenario.seed)")
        q.add_argument("--out", required=True, help="output directory for logs, metrics and plots")

    e = sub.add_parser("eval", help="run deterministic episodes with a trained checkpoint")
    e.add_argument("--checkpoint", required=True, help="checkpoint file written by train")
    e.add_argument("--ablation", choices=ABLATIONS, default="none",
                   help="none | fixed-topology (use every delivered link) | no-delay-state "
                        "(zero previous command and delay features)")
    policy_flags(e)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sim", help="simulate episodes with a chosen controller")
    s.add_argument("--controller", default="cthp-pd", help=f"one of: {', '.join(CONTROLLERS)} (default cthp-pd)")
    s.add_argument("--checkpoint", help="checkpoint file (trained controller only)")
    policy_flags(s)
    s.set_defaults(func=cmd_sim)

    h = sub.add_parser("heatmap", help="aggregate adjacency traces into a link-frequency heatmap")
    h.add_argument("--logs", required=True, help="directory searched recursively for adjacency*.csv")
    h.add_argument("--out", help="output directory (default: the logs directory)")
    h.set_defaults(func=cmd_heatmap)

    m = sub.add_parser("metrics", help="string-stability and comfort tables from episode logs")
    m.add_argument("--logs", required=True, help="directory holding episode_*.csv logs")
    m.add_argument("--config", help="INI config with the scenario used for the logs")
    m.add_argument("--method", default="DCT-MARL", help="method label in the table (default DCT-MARL)")
    m.add_argument("--out", help="output directory (default: the logs directory)")
    m.add_argument("--plots", action="store_true", help="also write per-episode SVG figures")
    m.set_defaults(func=cmd_metrics)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.func(args, ["dctmarl"] + argv)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
