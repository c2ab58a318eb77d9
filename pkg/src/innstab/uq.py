"""Baseline uncertainty quantifiers: Monte-Carlo dropout and ProbOut."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError, ContractError, ShapeError

# softplus(SHIFT) == 1, so a raw variance channel of 0 decodes to variance 1
SHIFT = float(np.log(np.e - 1.0))


@dataclass
class McDropConfig:
    T: int = 16
    seed: int = 0
    chunk: int = 32  # passes evaluated per batched forward call

    def __post_init__(self):
        if self.T < 2:
            raise ConfigError(f"MC dropout needs T >= 2 passes, got {self.T}")


def pass_rng(seed: int, index: int, layer: int) -> np.random.Generator:
    """Independent stream per (pass, layer), independent of evaluation order."""
    return np.random.default_rng([seed, index, layer])


def mcdrop_samples(spec, params, x, cfg: McDropConfig) -> np.ndarray:
    """Stack of ``T`` stochastic forward passes for one input image.

    ``x`` has shape ``(H, W, C)`` (or ``(features,)``); the result has shape
    ``(T, *output_shape)``.
    """
    x = np.asarray(x, dtype=np.float64)
    shapes = nn.dropout_shapes(spec, (1, *x.shape))
    outs = []
    for start in range(0, cfg.T, cfg.chunk):
        idx = range(start, min(start + cfg.chunk, cfg.T))
        masks = {}
        for layer_i, shape in shapes.items():
            rate = spec.layers[layer_i].rate
            if rate <= 0:
                continue
            masks[layer_i] = np.concatenate(
                [pass_rng(cfg.seed, t, layer_i).random(shape) >= rate for t in idx]
            ).astype(np.float64)
        batch = np.broadcast_to(x, (len(idx), *x.shape))
        outs.append(nn.forward(spec, params, batch, dropout=masks))
    return np.concatenate(outs)


def sample_variance(samples: np.ndarray) -> np.ndarray:
    """``(sum s^2 - (sum s)^2 / T) / (T - 1)`` over the leading axis.

    The formula is applied to the passes shifted by the first one (the value
    is shift invariant); this tames the cancellation of the two sums and
    gives exactly zero when all passes agree.
    """
    T = samples.shape[0]
    if T < 2:
        raise ConfigError("sample variance needs at least two samples")
    d = samples - samples[0]
    s1 = d.sum(axis=0)
    s2 = np.einsum("t...,t...->...", d, d)
    return np.maximum((s2 - s1 * s1 / T) / (T - 1), 0.0)


def mcdrop_uncertainty(spec, params, x, cfg: McDropConfig):
    """Mean of the stochastic passes and their per-pixel sample variance."""
    samples = mcdrop_samples(spec, params, x, cfg)
    return samples.mean(axis=0), sample_variance(samples)


def decode_variance(raw: np.ndarray) -> np.ndarray:
    """Smooth, strictly increasing positive map with ``decode(0) == 1``."""
    z = raw + SHIFT
    return np.logaddexp(0.0, z)


def decode_variance_grad(raw: np.ndarray) -> np.ndarray:
    z = raw + SHIFT
    return 0.5 * (1.0 + np.tanh(0.5 * z))  # logistic sigmoid, overflow-free


def probout_forward(spec, params, x):
    """Split the two-channel head into ``(mean, variance)``.

    Channel 0 is the mean (the residual connection adds the input there);
    channel 1 is the raw variance, decoded to a positive value.
    """
    out = nn.forward(spec, params, x)
    if out.shape[-1] != 2:
        raise ShapeError(f"ProbOut head must emit 2 channels, got {out.shape[-1]}")
    return out[..., :1], decode_variance(out[..., 1:])


def probout_loss(mean, variance, target) -> float:
    return probout_loss_and_grad(mean, variance, target)[0]


def probout_loss_and_grad(mean, variance, target):
    """``sum((x - mean)^2 / var) + sum(log var)`` over all entries.

    Returns ``(loss, d/dmean, d/dvariance)``.
    """
    mean, variance, target = (np.asarray(a, float) for a in (mean, variance, target))
    if not mean.shape == variance.shape == target.shape:
        raise ShapeError(f"shape mismatch {mean.shape}, {variance.shape}, {target.shape}")
    if np.any(variance <= 0):
        raise ContractError("variance must be strictly positive")
    r = target - mean
    loss = np.sum(r * r / variance) + np.sum(np.log(variance))
    d_mean = -2 * r / variance
    d_var = -(r * r) / variance**2 + 1.0 / variance
    return float(loss), d_mean, d_var


def probout_head_grad(out, target):
    """Loss and gradient w.r.t. the raw two-channel network output."""
    mean, raw = out[..., :1], out[..., 1:]
    var = decode_variance(raw)
    loss, d_mean, d_var = probout_loss_and_grad(mean, var, target)
    return loss, np.concatenate([d_mean, d_var * decode_variance_grad(raw)], axis=-1)


def probout_init(spec: nn.NetworkSpec, params: nn.Params):
    """ProbOut network initialised from a trained single-output baseline.

    The mean channel copies the baseline head; the variance channel starts
    at zero weights and bias, i.e. unit variance everywhere.
    """
    pspec = nn.with_output_channels(spec, 2)
    pparams = nn.copy_params(params)
    last = spec.affine_indices()[-1]
    w, b = params[f"{last}.weight"], params[f"{last}.bias"]
    pparams[f"{last}.weight"] = np.concatenate([w, np.zeros_like(w)], axis=0)
    pparams[f"{last}.bias"] = np.concatenate([b, np.zeros_like(b)])
    return pspec, pparams
