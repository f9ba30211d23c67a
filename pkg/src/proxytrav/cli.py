"""Command line interface.

Subcommands: gen-data, train, infer, eval, inspect-bank.  Exit codes:
0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .errors import ConfigError, DataError, NumericError
from .evaluation import (
    evaluate_dataset,
    evaluate_predictions,
    infer_scene,
    load_prediction,
    report_to_csv,
    report_to_text,
    save_prediction,
)
from .pointcloud import (
    KIND_EVAL,
    SyntheticSpec,
    generate_synthetic_scene,
    load_scene,
    save_scene,
)
from .trainer import MODE_SUPERVISED, load_config, train


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    p = _Parser(prog="proxytrav", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[], help="write a synthetic dataset")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--queries", type=int, default=20)
    g.add_argument("--supports", type=int, default=2)
    g.add_argument("--evals", type=int, default=4)
    g.add_argument("--n-points", type=int, default=4096)
    g.add_argument("--support-n-points", type=int, default=None,
                   help="point count for support scenes (default: --n-points)")
    g.add_argument("--extent", type=float, default=20.0)
    g.add_argument("--trees", type=int, default=4)
    g.add_argument("--rocks", type=int, default=3)
    g.add_argument("--bushes", type=int, default=3)
    g.add_argument("--walls", type=int, default=0)
    g.add_argument("--ground-styles", type=int, default=1)
    g.add_argument("--path-width", type=float, default=2.0)

    t = sub.add_parser("train", help="train on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", default=None, help="key=value config file")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")

    i = sub.add_parser("infer", help="write prediction files for scenes")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--out-dir", required=True)
    i.add_argument("--kind", default=KIND_EVAL, help="scene kind of the inputs")
    i.add_argument("scenes", nargs="+")

    e = sub.add_parser("eval", help="score predictions or a checkpoint")
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--pred-dir", default=None,
                   help="directory of <scene>.pred.txt files from infer")
    e.add_argument("--report", default=None, help="write the per-scene CSV here")
    e.add_argument("scenes", nargs="+", help="ground-truth eval scene files")

    b = sub.add_parser("inspect-bank", help="dump proxy memberships and geometry")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--cosines", default=None,
                   help="write the full proxy cosine matrix CSV here")
    return p


def _cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = args.seed * 1_000_000
    groups = (
        ("query", args.queries, 0, args.n_points),
        ("support", args.supports, 10_000,
         args.support_n_points or args.n_points),
        ("eval", args.evals, 20_000, args.n_points),
    )
    for name, count, offset, n_points in groups:
        for i in range(count):
            spec = SyntheticSpec(
                extent=args.extent,
                n_points=n_points,
                ground_styles=args.ground_styles,
                n_trees=args.trees,
                n_rocks=args.rocks,
                n_bushes=args.bushes,
                n_walls=args.walls,
                path_width=args.path_width,
                seed=base + offset + i,
            )
            query, support, eval_scene = generate_synthetic_scene(spec)
            scene = {"query": query, "support": support, "eval": eval_scene}[name]
            save_scene(scene, out / f"{name}_{i:02d}.txt")
    print(f"wrote {args.queries}+{args.supports}+{args.evals} scenes to {out}")
    return 0


def _cmd_train(args) -> int:
    overrides: dict[str, object] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        overrides[key.strip()] = val.strip()
    if args.config:
        config = load_config(args.config, overrides)
    else:
        from .trainer import config_from_dict

        config = config_from_dict(overrides)
    trainer, history = train(config, args.data, args.out)
    last = history[-1]
    line = f"epoch {last.epoch}: loss {last.loss_total:.4f}"
    if not np.isnan(last.miou_eval):
        line += f", mIoU {last.miou_eval:.4f}, tpe {last.tpe_eval:.4f}"
    print(line)
    print(f"artifacts in {args.out}")
    return 0


def _cmd_infer(args) -> int:
    model, bank, meta = load_checkpoint(args.checkpoint)
    mode = meta.get("mode", MODE_SUPERVISED)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for scene_path in args.scenes:
        scene = load_scene(scene_path, args.kind)
        pred = infer_scene(
            model, None if mode == MODE_SUPERVISED else bank, scene, mode
        )
        target = out / f"{Path(scene_path).stem}.pred.txt"
        save_prediction(target, scene.points, pred)
        print(f"{scene_path} -> {target}")
    return 0


def _cmd_eval(args) -> int:
    if (args.checkpoint is None) == (args.pred_dir is None):
        raise ConfigError("eval needs exactly one of --checkpoint or --pred-dir")
    scenes = [load_scene(p, KIND_EVAL) for p in args.scenes]
    if args.checkpoint:
        model, bank, meta = load_checkpoint(args.checkpoint)
        mode = meta.get("mode", MODE_SUPERVISED)
        report = evaluate_dataset(
            model, None if mode == MODE_SUPERVISED else bank, scenes, mode
        )
    else:
        preds = []
        for path, scene in zip(args.scenes, scenes):
            pred_path = Path(args.pred_dir) / f"{Path(path).stem}.pred.txt"
            pts, pred = load_prediction(pred_path)
            if pts.shape[0] != scene.n_points:
                raise DataError(
                    f"{pred_path}: {pts.shape[0]} points, scene has {scene.n_points}"
                )
            preds.append(pred)
        report = evaluate_predictions(preds, scenes)
    print(report_to_text(report))
    if args.report:
        report_to_csv(report, args.report)
        print(f"report written to {args.report}")
    return 0


def _cmd_inspect_bank(args) -> int:
    _, bank, meta = load_checkpoint(args.checkpoint)
    counts = bank.membership
    print(f"mode {meta.get('mode')!r}, {bank.n_proxies} proxies per class, "
          f"temperature {bank.temperature}")
    for cls, name in ((0, "negative"), (1, "positive")):
        cls_counts = counts[cls]
        empty = int((cls_counts == 0).sum())
        print(
            f"{name}: members min/median/max "
            f"{cls_counts.min()}/{int(np.median(cls_counts))}/{cls_counts.max()}"
            f", empty {empty}/{bank.n_proxies}"
        )
    flat = bank.proxies.reshape(-1, bank.dim)
    cos = flat @ flat.T
    off = cos[~np.eye(len(cos), dtype=bool)]
    print(f"proxy cosine off-diagonal: min {off.min():.4f} "
          f"mean {off.mean():.4f} max {off.max():.4f}")
    if args.cosines:
        header = ",".join(
            f"{'np'[c]}{k}" for c in (0, 1) for k in range(bank.n_proxies)
        )
        rows = [header]
        for row in cos:
            rows.append(",".join(repr(float(v)) for v in row))
        Path(args.cosines).write_text("\n".join(rows) + "\n")
        print(f"cosine matrix written to {args.cosines}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "inspect-bank": _cmd_inspect_bank,
}


def run(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse usage failures and --help
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())
