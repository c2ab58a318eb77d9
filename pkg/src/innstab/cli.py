"""Command line entry point: ``innstab <subcommand> ...``.

Outputs default to ``$INNSTAB_OUTPUT/<subcommand>`` (``./innstab-out`` when
the variable is unset).  Exit codes: 0 success, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, data, evaluation, experiment, interval, nn, render, training
from .config import ExperimentConfig, default_config, set_path
from .errors import ConfigError, NumericalError
from .operators import psnr

OUTPUT_ENV = "INNSTAB_OUTPUT"
EXIT_CONFIG, EXIT_NUMERICAL = 2, 3

log = logging.getLogger("innstab")


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "innstab-out"))


def _out_dir(args, default_name) -> Path:
    return Path(args.out) if args.out else output_root() / default_name


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args) -> ExperimentConfig:
    """Task defaults, then ``--config`` file, then ``--set`` overrides, then
    subcommand flags."""
    if getattr(args, "config", None):
        try:
            cfg = ExperimentConfig.from_json(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if getattr(args, "task", None) and args.task != cfg.task:
            raise ConfigError(f"--task {args.task} contradicts config task {cfg.task}")
    else:
        cfg = default_config(getattr(args, "task", None) or "denoise")
    apply_overrides(cfg, getattr(args, "set", None))
    return cfg


def apply_overrides(cfg, items):
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        set_path(cfg, key, _parse_value(value))


def _corpus(cfg, data_dir):
    if data_dir:
        if not (Path(data_dir) / "manifest.json").exists():
            raise ConfigError(f"no corpus at {data_dir}; create it with `innstab gen-data --out {data_dir}`")
        return data.load_corpus(data_dir)
    return data.generate_corpus(cfg)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    cfg = resolve_config(args).validate()
    out = _out_dir(args, "data")
    data.save_corpus(data.generate_corpus(cfg), cfg, out)
    print(f"corpus written to {out}")


def cmd_train(args):
    cfg = resolve_config(args)
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    cfg.validate()
    out = _out_dir(args, "train")
    corpus = _corpus(cfg, args.data)
    spec, params, rows = training.train_baseline(cfg, corpus["train"], corpus["val"],
                                                 experiment.run_seed(cfg, args.run, "train"))
    out.mkdir(parents=True, exist_ok=True)
    nn.save_checkpoint(out / "baseline.ckpt", spec, params, {"run": args.run})
    _write_json(out / "train_log.json", {"baseline": rows})
    experiment.write_manifest(out, cfg, command="train", run=args.run)
    print(f"best validation MSE {min(r['val_mse'] for r in rows):.6g}; checkpoint in {out}")


def _baseline(args, out):
    path = Path(args.checkpoint) if args.checkpoint else out / "baseline.ckpt"
    if not path.exists():
        raise ConfigError(f"missing checkpoint {path}; create it with `innstab train --out {path.parent}`")
    return nn.load_checkpoint(path)


def cmd_train_inn(args):
    cfg = resolve_config(args)
    if args.beta is not None:
        cfg.inn.beta = args.beta
    if args.k is not None:
        cfg.inn.k = args.k
    cfg.validate()
    out = _out_dir(args, "train")
    spec, params, _ = _baseline(args, out)
    corpus = _corpus(cfg, args.data)
    ip, rows = training.train_inn(cfg, spec, params, corpus["train"], corpus["val"],
                                  experiment.run_seed(cfg, args.run, "inn"))
    out.mkdir(parents=True, exist_ok=True)
    interval.save_interval_checkpoint(out / "inn.ckpt", spec, ip, {"run": args.run})
    _write_json(out / "inn_log.json", {"inn": rows})
    experiment.write_manifest(out, cfg, command="train-inn", run=args.run)
    print(f"validation coverage {rows[-1]['val_coverage']:.4f}; checkpoint in {out}" if rows else "no epochs run")


def cmd_train_probout(args):
    cfg = resolve_config(args).validate()
    out = _out_dir(args, "train")
    spec, params, _ = _baseline(args, out)
    corpus = _corpus(cfg, args.data)
    pspec, pparams, rows = training.train_probout(cfg, spec, params, corpus["train"], corpus["val"],
                                                  experiment.run_seed(cfg, args.run, "probout"))
    out.mkdir(parents=True, exist_ok=True)
    nn.save_checkpoint(out / "probout.ckpt", pspec, pparams, {"run": args.run})
    _write_json(out / "probout_log.json", {"probout": rows})
    experiment.write_manifest(out, cfg, command="train-probout", run=args.run)
    print(f"checkpoint in {out}")


def cmd_attack(args):
    cfg = resolve_config(args)
    if args.lam is not None:
        cfg.attack.lam = args.lam
    if args.patch is not None:
        cfg.attack.patch_size = args.patch
    if args.iters is not None:
        cfg.attack.max_iterations = args.iters
    cfg.validate()
    out = _out_dir(args, "attack")
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise ConfigError(f"missing checkpoint {ckpt}; create it with `innstab train --out {ckpt.parent}`")
    spec, params, _ = nn.load_checkpoint(ckpt)
    test = _corpus(cfg, args.data)["test"]
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for n in range(min(args.n, len(test))):
        sid = int(test.ids[n])
        x = test.inputs[n][..., None]
        seed = experiment.run_seed(cfg, args.seed, "attack", sid)
        res, target, mask = experiment.attack_sample(spec, params, x, cfg, seed)
        nn.save_tensors(out / f"sample_{sid}.tensors",
                        {"attack": {"x_tilde": x, "x_adv": res.x_adv, "target": target,
                                    "mask": mask.astype(np.float64)}},
                        {"kind": "attack", "sample_id": sid})
        with open(out / f"trace_{sid}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iterate", "objective"])
            w.writerows([i, repr(float(f))] for i, f in enumerate(res.trace))
        rows.append({"run": args.seed, "sample_id": sid, "network": "checkpoint", "initial": res.initial,
                     "final": res.final, "ratio": res.final / res.initial if res.initial > 0 else 0.0,
                     "iterations": len(res.trace) - 1, "psnr": psnr(res.x_adv, x)})
        print(f"sample {sid}: objective {res.initial:.4g} -> {res.final:.4g}")
    experiment.write_attack_csv(out / "attacks.csv", rows)
    experiment.write_manifest(out, cfg, command="attack", seed=args.seed, checkpoint=str(ckpt),
                              patch_size=experiment._attack_config(cfg, 0).patch_size,
                              target_noise_sigma=cfg.data.noise_sigma if cfg.task == "denoise" else None)


def cmd_ood(args):
    cfg = resolve_config(args)
    if args.mode:
        cfg.ood.mode = args.mode
    cfg.validate()
    out = _out_dir(args, "ood")
    test = _corpus(cfg, args.data)["test"]
    inputs, masks, ids = [], [], []
    for n in range(min(args.n, len(test))):
        sid = int(test.ids[n])
        x_ood, region = experiment.ood_input(cfg, test.clean[n], int(test.noise_seeds[n]),
                                             experiment.run_seed(cfg, args.seed, "ood", sid))
        inputs.append(x_ood)
        masks.append(region.astype(np.float64))
        ids.append(sid)
    out.mkdir(parents=True, exist_ok=True)
    nn.save_tensors(out / "ood.tensors", {"ood": {"input": np.stack(inputs), "mask": np.stack(masks),
                                                  "clean_input": test.inputs[:len(ids)]}},
                    {"kind": "ood", "sample_ids": ids})
    experiment.write_manifest(out, cfg, command="ood", seed=args.seed, sample_ids=ids, ood=vars(cfg.ood))
    print(f"{len(ids)} OoD inputs written to {out}")


def cmd_score(args):
    cfg = resolve_config(args)
    if args.n is not None:
        cfg.n_eval = args.n
    cfg.validate()
    out = _out_dir(args, "score")
    models = experiment.load_models(args.checkpoints, cfg.methods)
    test = _corpus(cfg, args.data)["test"]
    experiments = [args.experiment] if args.experiment else list(experiment.EXPERIMENTS)
    experiment.write_manifest(out, cfg, command="score", experiments=experiments, checkpoints=str(args.checkpoints))
    (out / "panels").mkdir(exist_ok=True)
    records, attack_rows = experiment.evaluate(cfg, models, test, args.run, experiments, out / "panels")
    rows = experiment.write_results(out, records, attack_rows)
    print(evaluation.format_table(rows))


def cmd_render(args):
    _, sections = nn.load_tensors(args.input)
    section = args.section or next(iter(sections))
    if section not in sections or args.tensor not in sections[section]:
        raise ConfigError(f"no tensor {section}/{args.tensor} in {args.input}")
    arr = sections[section][args.tensor]
    if args.index is not None:
        arr = arr[args.index]
    window = args.window if args.window else (float(arr.min()), float(arr.max()) if arr.max() > arr.min()
                                              else float(arr.min()) + 1.0)
    out = Path(args.out) if args.out else output_root() / "render" / f"{args.tensor}.pgm"
    out.parent.mkdir(parents=True, exist_ok=True)
    render.render_heatmap(arr, window, out)
    print(f"wrote {out} with window {tuple(window)}")


def cmd_reproduce(args):
    out = _out_dir(args, "table1")
    tasks = args.tasks or ["denoise", "ct"]
    configs = {}
    for task in tasks:
        cfg = default_config(task)
        apply_overrides(cfg, args.set)
        configs[task] = cfg.validate()
    rows = experiment.reproduce_table1(out, master_seed=args.seed, runs=args.runs, tasks=tasks, configs=configs)
    print(evaluation.format_table(rows))
    print(f"summary in {out / 'summary.json'}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="innstab", description="Interval networks as instability detectors.")
    p.add_argument("--version", action="version", version=f"innstab {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, task=True, data_arg=True):
        if task:
            sp.add_argument("--task", choices=["denoise", "ct"])
            sp.add_argument("--config", help="JSON experiment config")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
        if data_arg:
            sp.add_argument("--data", help="corpus directory from gen-data (default: regenerate from seeds)")
        sp.add_argument("--out")
        return sp

    common(sub.add_parser("gen-data", help="generate and store the synthetic corpus"), data_arg=False) \
        .set_defaults(func=cmd_gen_data)

    sp = common(sub.add_parser("train", help="train the baseline network"))
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--run", type=int, default=0)
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("train-inn", help="fit interval parameters around a trained baseline"))
    sp.add_argument("--checkpoint", help="baseline checkpoint (default: <out>/baseline.ckpt)")
    sp.add_argument("--beta", type=float)
    sp.add_argument("--k", type=int)
    sp.add_argument("--run", type=int, default=0)
    sp.set_defaults(func=cmd_train_inn)

    sp = common(sub.add_parser("train-probout", help="train the mean-and-variance head"))
    sp.add_argument("--checkpoint", help="baseline checkpoint (default: <out>/baseline.ckpt)")
    sp.add_argument("--run", type=int, default=0)
    sp.set_defaults(func=cmd_train_probout)

    sp = common(sub.add_parser("attack", help="adversarial inputs for test samples"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--patch", type=int)
    sp.add_argument("--iters", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-n", type=int, default=1, help="number of test samples")
    sp.set_defaults(func=cmd_attack)

    sp = common(sub.add_parser("ood", help="out-of-distribution inputs and masks"))
    sp.add_argument("--mode", choices=["saltpepper", "silhouette"])
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-n", type=int, default=10)
    sp.set_defaults(func=cmd_ood)

    sp = common(sub.add_parser("score", help="AdvDetect / ArtDetect on trained checkpoints"))
    sp.add_argument("--checkpoints", required=True, help="directory with baseline/inn/probout checkpoints")
    sp.add_argument("--experiment", choices=list(experiment.EXPERIMENTS))
    sp.add_argument("--run", type=int, default=0)
    sp.add_argument("-n", type=int)
    sp.set_defaults(func=cmd_score)

    sp = common(sub.add_parser("render", help="tensor to 8-bit PGM"), task=False, data_arg=False)
    sp.add_argument("input")
    sp.add_argument("--tensor", required=True)
    sp.add_argument("--section")
    sp.add_argument("--index", type=int)
    sp.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"))
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("reproduce-table1", help="full pipeline, both tasks, R runs")
    sp.add_argument("--seed", type=int, default=0, help="master seed")
    sp.add_argument("--runs", type=int, default=3)
    sp.add_argument("--tasks", nargs="+", choices=["denoise", "ct"])
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
