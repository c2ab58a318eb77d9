"""Training loops for the baseline network, its interval extension and the
ProbOut variant."""

from __future__ import annotations

import dataclasses
import logging

import numpy as np

from . import interval, nn, uq
from .config import ExperimentConfig
from .data import Split
from .errors import ConfigError, NumericalError

log = logging.getLogger(__name__)


def build_spec(cfg: ExperimentConfig) -> nn.NetworkSpec:
    """Architecture from the config.  For CT the residual path maps the
    rescaled input back to FBP intensities."""
    a = cfg.arch
    if a.kind == "denoise":
        spec = nn.denoising_net(depth=a.depth, channels=a.channels, dropout=a.dropout)
    elif a.kind == "unet":
        spec = nn.unet(base=a.channels, dropout=a.dropout)
    else:
        raise ConfigError(f"unknown architecture {a.kind!r}")
    if cfg.task == "ct":
        spec = dataclasses.replace(spec, skip_scale=cfg.data.fbp_scale, skip_offset=cfg.data.fbp_offset)
    return spec


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def predict(spec, params, inputs, batch_size=32):
    """Inference-mode outputs for ``(N, H, W)`` inputs, returned as ``(N, H, W, C)``."""
    outs = [nn.forward(spec, params, inputs[i:i + batch_size][..., None]) for i in range(0, len(inputs), batch_size)]
    return np.concatenate(outs) if outs else np.zeros((0, *inputs.shape[1:], spec.out_channels))


def mse(spec, params, split: Split) -> float:
    return float(np.mean((predict(spec, params, split.inputs)[..., 0] - split.clean) ** 2))


def train_baseline(cfg: ExperimentConfig, train: Split, val: Split, seed: int):
    """Adam on the summed squared error with dropout active.

    Keeps the parameters with the best validation MSE seen so far (the
    initialisation counts as epoch 0).  Returns ``(spec, params, log_rows)``.
    """
    spec = build_spec(cfg)
    rng = np.random.default_rng(seed)
    params = nn.init_params(spec, rng, last_scale=0.1)
    opt = nn.Adam(cfg.train.lr)
    best = nn.copy_params(params)
    best_val = mse(spec, params, val)
    rows = [{"epoch": 0, "train_loss": None, "val_mse": best_val}]
    for epoch in range(1, cfg.train.epochs + 1):
        losses = []
        for idx in _batches(len(train), cfg.train.batch_size, rng):
            x, y = train.batch(idx)
            out, tr = nn.forward(spec, params, x, dropout=rng, record=True)
            r = out - y
            loss = float(np.sum(r * r))
            if not np.isfinite(loss):
                raise NumericalError(f"training diverged in epoch {epoch}", state=best)
            grads, _ = nn.backward(spec, params, tr, 2 * r)
            params = opt.step(params, grads)
            losses.append(loss / len(idx))
        val_mse = mse(spec, params, val)
        rows.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_mse": val_mse})
        log.info("baseline epoch %d: train %.4g  val mse %.4g", epoch, rows[-1]["train_loss"], val_mse)
        if val_mse < best_val:
            best_val, best = val_mse, nn.copy_params(params)
    return spec, best, rows


def inn_predict(spec, ip, inputs, batch_size=32):
    preds = [interval.inn_forward(spec, ip, inputs[i:i + batch_size][..., None]) for i in range(0, len(inputs), batch_size)]
    return interval.IntervalPrediction(*(np.concatenate([getattr(p, f) for p in preds])
                                         for f in ("central", "lower", "upper")))


def train_inn(cfg: ExperimentConfig, spec, params, train: Split, val: Split, seed: int):
    """Fit lower/upper parameters around the frozen baseline.

    Returns ``(interval_params, log_rows)``; rows report validation coverage
    and mean interval width.
    """
    rng = np.random.default_rng(seed)
    ip = interval.interval_params(spec, params, cfg.inn.k)
    opt = nn.Adam(cfg.inn.lr)
    rows = []
    for epoch in range(1, cfg.inn.epochs + 1):
        losses = []
        for idx in _batches(len(train), cfg.inn.batch_size, rng):
            ip, loss = interval.inn_train_step(spec, ip, train.batch(idx), cfg.inn.beta, cfg.inn.lr, opt)
            losses.append(loss / len(idx))
        pred = inn_predict(spec, ip, val.inputs)
        cov = interval.coverage(pred, val.clean[..., None])
        width = float(np.mean(interval.inn_uncertainty(pred)))
        rows.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_coverage": cov, "val_width": width})
        log.info("inn epoch %d: loss %.4g  coverage %.3f  width %.4g", epoch, rows[-1]["train_loss"], cov, width)
    return ip, rows


def train_probout(cfg: ExperimentConfig, spec, params, train: Split, val: Split, seed: int):
    """Two-channel head initialised from the baseline, trained on the
    Gaussian log-likelihood loss with the baseline's dropout."""
    rng = np.random.default_rng(seed)
    pspec, pparams = uq.probout_init(spec, params)
    opt = nn.Adam(cfg.probout.lr)
    rows = []

    def val_loss(p):
        out = predict(pspec, p, val.inputs)
        mean, var = out[..., :1], uq.decode_variance(out[..., 1:])
        return uq.probout_loss(mean, var, val.clean[..., None]) / len(val)

    best, best_val = nn.copy_params(pparams), val_loss(pparams)
    rows.append({"epoch": 0, "train_loss": None, "val_loss": best_val})
    for epoch in range(1, cfg.probout.epochs + 1):
        losses = []
        for idx in _batches(len(train), cfg.probout.batch_size, rng):
            x, y = train.batch(idx)
            out, tr = nn.forward(pspec, pparams, x, dropout=rng, record=True)
            loss, g = uq.probout_head_grad(out, y)
            if not np.isfinite(loss):
                raise NumericalError(f"ProbOut training diverged in epoch {epoch}", state=best)
            grads, _ = nn.backward(pspec, pparams, tr, g)
            pparams = opt.step(pparams, grads)
            losses.append(loss / len(idx))
        v = val_loss(pparams)
        rows.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": v})
        log.info("probout epoch %d: train %.4g  val %.4g", epoch, rows[-1]["train_loss"], v)
        if v < best_val:
            best_val, best = v, nn.copy_params(pparams)
    return pspec, best, rows
