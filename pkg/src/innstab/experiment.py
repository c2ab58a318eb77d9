"""End-to-end AdvDetect / ArtDetect runs and the Table-1 style summary."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, attacks, data, evaluation, interval, nn, ood, operators, render, training, uq
from .config import ExperimentConfig, default_config, derive_seed
from .errors import ConfigError

log = logging.getLogger(__name__)

EXPERIMENTS = ("advdetect", "artdetect")


@dataclass
class Models:
    spec: nn.NetworkSpec
    params: dict
    ip: interval.IntervalParams | None = None
    pspec: nn.NetworkSpec | None = None
    pparams: dict | None = None


def write_manifest(out_dir, cfg: ExperimentConfig, **extra) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"version": __version__, "config": cfg.to_dict(), **extra}
    if cfg.task == "ct":
        doc.setdefault("input_scaling", {"offset": cfg.data.fbp_offset, "scale": cfg.data.fbp_scale})
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def run_seed(cfg: ExperimentConfig, run: int, *parts) -> int:
    return derive_seed(cfg.master_seed, cfg.task, "run", run, *parts)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train_models(cfg: ExperimentConfig, corpus, run: int, out_dir=None) -> Models:
    """Baseline, then INN and ProbOut on top of it; optionally checkpointed."""
    train, val = corpus["train"], corpus["val"]
    spec, params, base_log = training.train_baseline(cfg, train, val, run_seed(cfg, run, "train"))
    models = Models(spec, params)
    logs = {"baseline": base_log, "identity_val_mse": float(np.mean((val.inputs - val.clean) ** 2))}
    if "inn" in cfg.methods:
        models.ip, logs["inn"] = training.train_inn(cfg, spec, params, train, val, run_seed(cfg, run, "inn"))
        test = corpus["test"]
        if len(test):
            pred = training.inn_predict(spec, models.ip, test.inputs)
            logs["inn_test_coverage"] = interval.coverage(pred, test.clean[..., None])
    if "probout" in cfg.methods:
        models.pspec, models.pparams, logs["probout"] = training.train_probout(
            cfg, spec, params, train, val, run_seed(cfg, run, "probout"))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        nn.save_checkpoint(out / "baseline.ckpt", spec, params, {"run": run})
        if models.ip is not None:
            interval.save_interval_checkpoint(out / "inn.ckpt", spec, models.ip, {"run": run})
        if models.pparams is not None:
            nn.save_checkpoint(out / "probout.ckpt", models.pspec, models.pparams, {"run": run})
        (out / "train_log.json").write_text(json.dumps(logs, indent=1, sort_keys=True) + "\n")
    return models


# ---------------------------------------------------------------------------
# uncertainty per method
# ---------------------------------------------------------------------------

def reconstruct_with_uncertainty(method: str, models: Models, x, cfg: ExperimentConfig, seed: int):
    """``(reconstruction, uncertainty)`` for one ``(H, W, 1)`` input."""
    if method == "inn":
        pred = interval.inn_forward(models.spec, models.ip, x[None])
        return pred.central[0], interval.inn_uncertainty(pred)[0]
    if method == "mcdrop":
        rec = nn.forward(models.spec, models.params, x[None])[0]
        _, var = uq.mcdrop_uncertainty(models.spec, models.params, x, uq.McDropConfig(cfg.mcdrop.T, seed))
        return rec, var
    if method == "probout":
        mean, var = uq.probout_forward(models.pspec, models.pparams, x[None])
        return mean[0], var[0]
    raise ConfigError(f"unknown method {method!r}")


def _attack_config(cfg: ExperimentConfig, seed: int) -> attacks.AttackConfig:
    a = cfg.attack
    patch = a.patch_size if a.patch_size is not None else attacks.patch_size_for(cfg.task, cfg.data.image_size)
    return attacks.AttackConfig(lam=a.lam, patch_size=patch, max_iterations=a.max_iterations,
                                optimizer=a.optimizer, noise_sigma=cfg.data.noise_sigma, seed=seed)


def attack_sample(spec, params, x, cfg: ExperimentConfig, seed: int):
    """Build the task's adversarial target from ``Phi(x)`` and attack it."""
    acfg = _attack_config(cfg, seed)
    rec = nn.forward(spec, params, x[None])[0, ..., :1]
    make_target = attacks.adv_target_ct if cfg.task == "ct" else attacks.adv_target_denoise
    target, mask = make_target(rec, acfg)
    result = attacks.find_adversarial_input(spec, params, x, target, acfg)
    return result, target, mask


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def ood_input(cfg: ExperimentConfig, clean, noise_seed: int, seed: int):
    """Out-of-distribution network input and the mask of the changed region."""
    o = cfg.ood
    if o.mode == "saltpepper":
        noise = operators.NoiseModel(cfg.data.noise_sigma, noise_seed)
        (x_ood, _), region = ood.salt_pepper_half(clean, o.amount, seed=seed, noise=noise)
        if cfg.task == "ct":
            raise ConfigError("salt-and-pepper OoD inputs are defined for the denoising task only")
        return x_ood, region
    shape = ood.dove_mask(cfg.data.image_size, o.area_fraction)
    image, region = ood.insert_silhouette(clean, shape, o.intensity, seed=seed)
    if cfg.task == "ct":
        return data.ct_input(image[None], cfg)[0], region
    return data.denoise_input(image, cfg, noise_seed), region


def _methods_needing(cfg, network):
    if network == "baseline":
        return [m for m in cfg.methods if m in ("inn", "mcdrop")]
    return [m for m in cfg.methods if m == "probout"]


def run_advdetect(cfg: ExperimentConfig, models: Models, test: data.Split, run: int, panel_dir=None,
                  timings=None):
    """Attack each test input, then score every method.

    INN and MC dropout share the adversarial input found on the baseline;
    ProbOut is attacked on its own mean channel.  Returns
    ``(records, attack_rows)``.  Wall time spent in the optimiser is added
    to ``timings["attack_seconds"]`` when a dict is passed.
    """
    records, rows = [], []
    for n in range(cfg.n_eval):
        sid = int(test.ids[n])
        x = test.inputs[n][..., None]
        aseed = run_seed(cfg, run, "attack", sid)
        mseed = run_seed(cfg, run, "mcdrop", sid)
        nets = {"baseline": (models.spec, models.params)}
        if models.pparams is not None:
            nets["probout"] = (models.pspec, models.pparams)
        for network, (spec, params) in nets.items():
            methods = _methods_needing(cfg, network)
            if not methods:
                continue
            t0 = time.perf_counter()
            res, target, mask = attack_sample(spec, params, x, cfg, aseed)
            if timings is not None:
                timings["attack_seconds"] = timings.get("attack_seconds", 0.0) + time.perf_counter() - t0
            rows.append({"run": run, "sample_id": sid, "network": network, "initial": res.initial,
                         "final": res.final, "ratio": res.final / res.initial if res.initial > 0 else 0.0,
                         "iterations": len(res.trace) - 1, "psnr": operators.psnr(res.x_adv, x)})
            for method in methods:
                rec0, u0 = reconstruct_with_uncertainty(method, models, x, cfg, mseed)
                rec1, u1 = reconstruct_with_uncertainty(method, models, res.x_adv, cfg, mseed)
                rec = evaluation.DetectionRecord(sid, method, "advdetect", cfg.task, run, None,
                                                 u0, u1, rec0, rec1).score()
                records.append(rec)
                if panel_dir is not None and n < cfg.n_panels:
                    du = np.abs(rec0 - rec1)
                    strip = render.panel([x, res.x_adv, rec1, u1, du],
                                         [(0, 1), (0, 1), (0, 1), render.robust_window(u1), render.robust_window(du)])
                    render.write_pgm(Path(panel_dir) / f"advdetect_{method}_{sid}.pgm", strip)
        log.info("advdetect sample %d done", sid)
    return records, rows


def run_artdetect(cfg: ExperimentConfig, models: Models, test: data.Split, run: int, panel_dir=None):
    """Score uncertainty changes against the OoD region mask."""
    records = []
    for n in range(cfg.n_eval):
        sid = int(test.ids[n])
        x = test.inputs[n][..., None]
        x_ood, region = ood_input(cfg, test.clean[n], int(test.noise_seeds[n]), run_seed(cfg, run, "ood", sid))
        x_ood = x_ood[..., None]
        mseed = run_seed(cfg, run, "mcdrop", sid)
        for method in cfg.methods:
            _, u0 = reconstruct_with_uncertainty(method, models, x, cfg, mseed)
            rec1, u1 = reconstruct_with_uncertainty(method, models, x_ood, cfg, mseed)
            mask = region[..., None].astype(np.float64)
            records.append(evaluation.DetectionRecord(sid, method, "artdetect", cfg.task, run, None,
                                                      u0, u1, None, None, mask).score())
            if panel_dir is not None and n < cfg.n_panels:
                du = np.abs(u1 - u0)
                strip = render.panel([x, x_ood, rec1, u1, du, mask],
                                     [(0, 1), (0, 1), (0, 1), render.robust_window(u1), render.robust_window(du),
                                      (0, 1)])
                render.write_pgm(Path(panel_dir) / f"artdetect_{method}_{sid}.pgm", strip)
    return records


def write_attack_csv(path, rows) -> None:
    cols = ["run", "sample_id", "network", "initial", "final", "ratio", "iterations", "psnr"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in r.items()})


def read_attack_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (v if k == "network" else float(v) if "." in v or "e" in v or "inf" in v else int(v))
                 for k, v in row.items()} for row in csv.DictReader(fh)]


CHECKPOINTS = {"baseline": ("baseline.ckpt", "train"), "inn": ("inn.ckpt", "train-inn"),
               "probout": ("probout.ckpt", "train-probout")}


def load_models(ckpt_dir, methods) -> Models:
    """Checkpoints written by :func:`train_models` or the training commands."""
    d = Path(ckpt_dir)

    def need(name):
        fname, command = CHECKPOINTS[name]
        path = d / fname
        if not path.exists():
            raise ConfigError(f"missing checkpoint {path}; create it with `innstab {command} --out {d}`")
        return path

    spec, params, _ = nn.load_checkpoint(need("baseline"))
    models = Models(spec, params)
    if "inn" in methods:
        _, models.ip, _ = interval.load_interval_checkpoint(need("inn"))
    if "probout" in methods:
        models.pspec, models.pparams, _ = nn.load_checkpoint(need("probout"))
    return models


def evaluate(cfg: ExperimentConfig, models: Models, test, run: int, experiments=EXPERIMENTS, panel_dir=None,
             timings=None):
    records, attack_rows = [], []
    if "advdetect" in experiments:
        records, attack_rows = run_advdetect(cfg, models, test, run, panel_dir, timings)
    if "artdetect" in experiments:
        records += run_artdetect(cfg, models, test, run, panel_dir)
    return records, attack_rows


def write_results(out_dir, records, attack_rows, extra=None) -> list[dict]:
    out = Path(out_dir)
    evaluation.write_records_csv(out / "records.csv", records)
    if attack_rows:
        write_attack_csv(out / "attacks.csv", attack_rows)
    rows = evaluation.aggregate(records)
    evaluation.write_summary_json(out / "summary.json", rows, {"version": __version__, **(extra or {})})
    (out / "table.txt").write_text(evaluation.format_table(rows) + "\n")
    return rows


def run_experiment(cfg: ExperimentConfig, out_dir, experiments=EXPERIMENTS, corpus=None) -> list[dict]:
    """All runs of one task: train, attack, score, write outputs.

    Output layout: ``manifest.json``, ``records.csv``, ``attacks.csv``,
    ``summary.json``, ``table.txt``, ``timing.json``, ``run<r>/``
    checkpoints and training logs, ``panels/`` from the first run.  Wall
    times live in ``timing.json`` only, so the other files are reproducible
    byte for byte.
    """
    cfg.validate()
    unknown = set(experiments) - set(EXPERIMENTS)
    if unknown:
        raise ConfigError(f"unknown experiments {sorted(unknown)}")
    out = Path(out_dir)
    write_manifest(out, cfg, experiments=list(experiments))
    corpus = corpus or data.generate_corpus(cfg)
    panel_dir = out / "panels"
    panel_dir.mkdir(parents=True, exist_ok=True)
    records, attack_rows = [], []
    start = time.perf_counter()
    timings = {"train_seconds": 0.0, "attack_seconds": 0.0}
    for run in range(cfg.runs):
        log.info("%s run %d: training", cfg.task, run)
        t0 = time.perf_counter()
        models = train_models(cfg, corpus, run, out / f"run{run}")
        timings["train_seconds"] += time.perf_counter() - t0
        recs, rows = evaluate(cfg, models, corpus["test"], run, experiments, panel_dir if run == 0 else None,
                              timings)
        records += recs
        attack_rows += rows
    rows = write_results(out, records, attack_rows)
    timings["total_seconds"] = time.perf_counter() - start
    (out / "timing.json").write_text(json.dumps(timings, indent=1, sort_keys=True) + "\n")
    return rows


def reproduce_table1(out_root, master_seed: int = 0, runs: int = 3, tasks=("denoise", "ct"), configs=None):
    """Both tasks, ``runs`` retrainings each; combined summary in ``out_root``."""
    out = Path(out_root)
    rows = []
    resolved = {}
    start = time.perf_counter()
    for task in tasks:
        cfg = (configs or {}).get(task) or default_config(task)
        cfg.master_seed, cfg.runs = master_seed, runs
        resolved[task] = cfg.to_dict()
        rows += run_experiment(cfg, out / task)
    out.mkdir(parents=True, exist_ok=True)
    (out / "timing.json").write_text(json.dumps({"total_seconds": time.perf_counter() - start}) + "\n")
    (out / "manifest.json").write_text(json.dumps({"version": __version__, "configs": resolved},
                                                  indent=2, sort_keys=True) + "\n")
    evaluation.write_summary_json(out / "summary.json", rows, {"version": __version__, "master_seed": master_seed})
    (out / "table.txt").write_text(evaluation.format_table(rows) + "\n")
    return rows
