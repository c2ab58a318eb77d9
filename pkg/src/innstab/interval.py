"""Interval neural networks.

Each parameter of the trailing ``k`` affine layers of a trained network gets
a lower and an upper value around the frozen central value.  Propagating
non-negative activation intervals through those layers with interval
arithmetic gives per-pixel output bounds; their width is the uncertainty
heatmap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ContractError, NumericalError, ShapeError
from .nn import AFFINE, AvgPool, Concat, Dropout, NetworkSpec, Params, ReLU, Save, Upsample

INPUT_TOL = 1e-9
EPS = np.finfo(np.float64).eps


def rounding_margin(mag, fan_in):
    """Outward widening that makes affine bounds hold in floating point.

    A dot product of ``n`` terms carries a rounding error of at most
    ``gamma_n * sum |w_i x_i|`` with ``gamma_n = n eps / (1 - n eps)``.  The
    interval evaluation and any plain forward pass with weights from the box
    each contribute one such error, both bounded through ``mag``, an upper
    bound on ``sum |w_i x_i| + |b|``.  The extra 1% absorbs the rounding of
    ``mag`` itself.  All other layers (ReLU, pooling, upsampling,
    concatenation, the residual add) are monotone in floating point and
    need no margin.
    """
    n = fan_in + 2
    gamma = n * EPS / (1 - n * EPS)
    return 2.02 * gamma * mag


@dataclass
class IntervalParams:
    lower: Params
    central: Params
    upper: Params
    interval_layers: tuple[int, ...] = field(default=())

    @property
    def entry(self) -> int:
        return min(self.interval_layers) if self.interval_layers else -1

    def trainable_keys(self) -> list[str]:
        return [f"{i}.{p}" for i in self.interval_layers for p in ("weight", "bias")]

    def check_order(self, atol: float = 0.0) -> bool:
        return all(
            np.all(self.lower[k] <= self.central[k] + atol) and np.all(self.central[k] <= self.upper[k] + atol)
            for k in self.central
        )

    def copy(self) -> "IntervalParams":
        return IntervalParams(
            nn.copy_params(self.lower), nn.copy_params(self.central), nn.copy_params(self.upper), self.interval_layers
        )


@dataclass
class IntervalPrediction:
    central: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def interval_params(spec: NetworkSpec, params: Params, k: int | None = None) -> IntervalParams:
    """Zero-width intervals on the last ``k`` affine layers (default: half)."""
    nn.check_params(spec, params)
    affine = spec.affine_indices()
    if k is None:
        k = max(1, len(affine) // 2)
    if not 1 <= k <= len(affine):
        raise ContractError(f"k must lie in [1, {len(affine)}], got {k}")
    central = nn.copy_params(params)
    return IntervalParams(nn.copy_params(params), central, nn.copy_params(params), tuple(affine[-k:]))


def interval_layer_forward(x_lo, x_hi, w_lo, w_hi, b_lo, b_hi, relu: bool = True):
    """One dense layer ``relu(W x + b)`` in interval arithmetic.

    Requires ``0 <= x_lo <= x_hi``; with a non-negative input interval the
    componentwise bounds are attained by pairing the positive part of
    ``w_lo`` with ``x_lo`` and its negative part with ``x_hi`` (mirrored for
    the upper bound).  Shapes follow ``x @ W.T`` with ``x`` of shape
    ``(..., in)``.
    """
    x_lo, x_hi = np.asarray(x_lo, float), np.asarray(x_hi, float)
    w_lo, w_hi = np.asarray(w_lo, float), np.asarray(w_hi, float)
    b_lo, b_hi = np.asarray(b_lo, float), np.asarray(b_hi, float)
    if np.any(x_lo < 0) or np.any(x_lo > x_hi):
        raise ContractError("input interval must satisfy 0 <= x_lo <= x_hi")
    if np.any(w_lo > w_hi) or np.any(b_lo > b_hi):
        raise ContractError("parameter intervals must satisfy lower <= upper")
    z_lo = x_lo @ np.maximum(w_lo, 0).T + x_hi @ np.minimum(w_lo, 0).T + b_lo
    z_hi = x_lo @ np.minimum(w_hi, 0).T + x_hi @ np.maximum(w_hi, 0).T + b_hi
    mag = x_hi @ np.maximum(np.abs(w_lo), np.abs(w_hi)).T + np.maximum(np.abs(b_lo), np.abs(b_hi))
    m = rounding_margin(mag, w_lo.shape[-1])
    z_lo, z_hi = z_lo - m, z_hi + m
    if relu:
        z_lo, z_hi = np.maximum(z_lo, 0), np.maximum(z_hi, 0)
    return z_lo, z_hi


def _cols(layer, x):
    if isinstance(layer, nn.Dense):
        return x, x.shape[:-1]
    k = layer.kernel
    cols, (b, ho, wo) = nn._im2col(x, k, layer.pad)
    return cols, (b, ho, wo)


def _matmul(cols, w, out_lead):
    cout = w.shape[0]
    wm = nn.weight_matrix(w) if w.ndim == 4 else w
    return (cols @ wm.T).reshape(*out_lead, cout)


def _wgrad(cols, g, shape):
    gm = g.reshape(-1, shape[0]).T @ cols
    return nn.weight_from_matrix(gm, shape) if len(shape) == 4 else gm


def _check_input(x):
    x = np.asarray(x, dtype=np.float64)
    if x.size and (x.min() < -INPUT_TOL or x.max() > 1 + INPUT_TOL):
        raise ContractError(f"INN input must lie in [0, 1]; got range [{x.min():.3g}, {x.max():.3g}]")
    return np.clip(x, 0.0, 1.0)


def interval_forward(spec: NetworkSpec, ip: IntervalParams, x: np.ndarray, record: bool = False):
    """Raw lower/upper bounds (and a trace for :func:`interval_backward`).

    Layers before the first interval layer run the ordinary forward pass
    with the central parameters; their output enters interval mode as a
    degenerate interval, which must be non-negative.
    """
    x = _check_input(x)
    entry = ip.entry
    stack = []
    trace = [] if record else None
    h = x
    lo = hi = None
    for i, layer in enumerate(spec.layers):
        if i < entry:
            if isinstance(layer, AFFINE):
                h, _ = nn.affine_forward(layer, h, ip.central[f"{i}.weight"], ip.central[f"{i}.bias"])
            elif isinstance(layer, ReLU):
                h = np.maximum(h, 0)
            elif isinstance(layer, AvgPool):
                h = nn.avgpool(h)
            elif isinstance(layer, Upsample):
                h = nn.upsample(h)
            elif isinstance(layer, Save):
                stack.append((h, h))
            elif isinstance(layer, Concat):
                s = stack.pop()[0]
                h = np.concatenate([h, s], axis=-1)
            continue
        if i == entry:
            if np.any(h < 0):
                raise ContractError(f"interval entry at layer {i} receives negative activations")
            lo = hi = h
        cache = None
        if isinstance(layer, AFFINE):
            if np.any(lo < 0):
                raise ContractError(f"layer {i}: interval input must be non-negative")
            key_w, key_b = f"{i}.weight", f"{i}.bias"
            w_lo, w_hi = ip.lower[key_w], ip.upper[key_w]
            cols_lo, lead = _cols(layer, lo)
            cols_hi = cols_lo if hi is lo else _cols(layer, hi)[0]
            new_lo = _matmul(cols_lo, np.maximum(w_lo, 0), lead) + _matmul(cols_hi, np.minimum(w_lo, 0), lead)
            new_hi = _matmul(cols_lo, np.minimum(w_hi, 0), lead) + _matmul(cols_hi, np.maximum(w_hi, 0), lead)
            new_lo += ip.lower[key_b]
            new_hi += ip.upper[key_b]
            # inputs are non-negative, so cols_hi bounds |x| elementwise
            w_abs = np.maximum(np.abs(w_lo), np.abs(w_hi))
            mag = _matmul(cols_hi, w_abs, lead) + np.maximum(np.abs(ip.lower[key_b]), np.abs(ip.upper[key_b]))
            m = rounding_margin(mag, cols_hi.shape[-1])
            new_lo -= m
            new_hi += m
            cache = (cols_lo, cols_hi, lo.shape)
            lo, hi = new_lo, new_hi
        elif isinstance(layer, ReLU):
            cache = (lo > 0, hi > 0)
            lo, hi = lo * cache[0], hi * cache[1]
        elif isinstance(layer, AvgPool):
            lo, hi = nn.avgpool(lo), nn.avgpool(hi)
        elif isinstance(layer, Upsample):
            lo, hi = nn.upsample(lo), nn.upsample(hi)
        elif isinstance(layer, Save):
            stack.append((lo, hi))
        elif isinstance(layer, Concat):
            s_lo, s_hi = stack.pop()
            cache = lo.shape[-1]
            lo = np.concatenate([lo, s_lo], axis=-1)
            hi = np.concatenate([hi, s_hi], axis=-1)
        elif isinstance(layer, Dropout):
            pass  # identity at inference and during interval training
        if record:
            trace.append((i, cache))
    if lo is None:  # no interval layers at all
        lo = hi = h
    if spec.residual:
        c = x.shape[-1]
        skip = spec.skip_scale * x + spec.skip_offset
        lo, hi = lo.copy(), hi.copy()
        lo[..., :c] += skip
        hi[..., :c] += skip
    return (lo, hi, trace) if record else (lo, hi)


def interval_backward(spec: NetworkSpec, ip: IntervalParams, trace, g_lo, g_hi) -> tuple[Params, Params]:
    """Gradients w.r.t. the lower and upper parameters of interval layers.

    The derivative of ``max(w, 0)`` is taken as 1 at ``w == 0`` (and that of
    ``min(w, 0)`` as 0), a fixed subgradient choice.
    """
    if trace is None:
        raise nn.UsageError("interval_backward needs the trace from interval_forward(..., record=True)")
    glo_w, ghi_w = {}, {}
    skip = []
    first = trace[0][0] if trace else None
    for i, cache in reversed(trace):
        layer = spec.layers[i]
        if isinstance(layer, AFFINE):
            cols_lo, cols_hi, in_shape = cache
            key_w, key_b = f"{i}.weight", f"{i}.bias"
            w_lo, w_hi = ip.lower[key_w], ip.upper[key_w]
            shape = w_lo.shape
            pos_lo = w_lo >= 0
            pos_hi = w_hi >= 0
            gw_lo_a = _wgrad(cols_lo, g_lo, shape)
            gw_lo_b = gw_lo_a if cols_hi is cols_lo else _wgrad(cols_hi, g_lo, shape)
            gw_hi_a = _wgrad(cols_lo, g_hi, shape)
            gw_hi_b = gw_hi_a if cols_hi is cols_lo else _wgrad(cols_hi, g_hi, shape)
            glo_w[key_w] = np.where(pos_lo, gw_lo_a, gw_lo_b)
            ghi_w[key_w] = np.where(pos_hi, gw_hi_b, gw_hi_a)
            glo_w[key_b] = nn.bias_grad(g_lo)
            ghi_w[key_b] = nn.bias_grad(g_hi)
            if i == first:
                break
            wl_pos, wl_neg = np.maximum(w_lo, 0), np.minimum(w_lo, 0)
            wh_pos, wh_neg = np.maximum(w_hi, 0), np.minimum(w_hi, 0)
            # lo_in feeds new_lo through wl_pos and new_hi through wh_neg; hi_in the converse.
            new_g_lo = nn.affine_grad_input(layer, g_lo, wl_pos, in_shape) + nn.affine_grad_input(
                layer, g_hi, wh_neg, in_shape
            )
            new_g_hi = nn.affine_grad_input(layer, g_lo, wl_neg, in_shape) + nn.affine_grad_input(
                layer, g_hi, wh_pos, in_shape
            )
            g_lo, g_hi = new_g_lo, new_g_hi
        elif isinstance(layer, ReLU):
            g_lo, g_hi = g_lo * cache[0], g_hi * cache[1]
        elif isinstance(layer, AvgPool):
            g_lo, g_hi = nn.avgpool_backward(g_lo), nn.avgpool_backward(g_hi)
        elif isinstance(layer, Upsample):
            g_lo, g_hi = nn.upsample_backward(g_lo), nn.upsample_backward(g_hi)
        elif isinstance(layer, Concat):
            c = cache
            skip.append((g_lo[..., c:], g_hi[..., c:]))
            g_lo, g_hi = g_lo[..., :c], g_hi[..., :c]
        elif isinstance(layer, Save):
            s_lo, s_hi = skip.pop()
            g_lo, g_hi = g_lo + s_lo, g_hi + s_hi
    return glo_w, ghi_w


def inn_forward(spec: NetworkSpec, ip: IntervalParams, x: np.ndarray) -> IntervalPrediction:
    """Central prediction with its interval bounds.

    Bounds are widened to include the central output where floating-point
    rounding would otherwise put it a few ulps outside.
    """
    x = _check_input(x)
    central = nn.forward(spec, ip.central, x)
    lo, hi = interval_forward(spec, ip, x)
    return IntervalPrediction(central, np.minimum(lo, central), np.maximum(hi, central))


def inn_uncertainty(pred: IntervalPrediction) -> np.ndarray:
    return np.maximum(pred.upper - pred.lower, 0.0)


def inn_loss(pred: IntervalPrediction, target: np.ndarray, beta: float) -> float:
    return inn_loss_and_grad(pred.lower, pred.upper, target, beta)[0]


def inn_loss_and_grad(lower, upper, target, beta):
    """Squared hinge on uncovered targets plus ``beta`` times the L1 width.

    Sums over all entries (pixels and batch).  Returns
    ``(loss, d/dlower, d/dupper)``.
    """
    if beta <= 0:
        raise ContractError("beta must be positive")
    lower, upper, target = (np.asarray(a, float) for a in (lower, upper, target))
    if not lower.shape == upper.shape == target.shape:
        raise ShapeError(f"shape mismatch {lower.shape}, {upper.shape}, {target.shape}")
    over = np.maximum(target - upper, 0)
    under = np.maximum(lower - target, 0)
    loss = np.sum(over**2) + np.sum(under**2) + beta * np.sum(upper - lower)
    return float(loss), 2 * under - beta, -2 * over + beta


def project(ip: IntervalParams) -> IntervalParams:
    """Clip so that lower <= central <= upper holds elementwise."""
    lower = {k: np.minimum(v, ip.central[k]) for k, v in ip.lower.items()}
    upper = {k: np.maximum(v, ip.central[k]) for k, v in ip.upper.items()}
    return IntervalParams(lower, ip.central, upper, ip.interval_layers)


def inn_train_step(spec, ip: IntervalParams, batch, beta: float, learning_rate: float, optimizer=None):
    """One gradient step on the lower/upper parameters, then projection.

    ``batch`` is a pair ``(x_tilde, x)`` of stacked arrays.  ``optimizer``
    is an :class:`nn.Adam` carrying moment estimates across calls; a fresh
    one is used when omitted.  Returns ``(new_params, loss)``.
    """
    x_tilde, target = batch
    lo, hi, trace = interval_forward(spec, ip, x_tilde, record=True)
    loss, g_lo, g_hi = inn_loss_and_grad(lo, hi, target, beta)
    if not np.isfinite(loss):
        raise NumericalError("INN loss is not finite", state=ip)
    if learning_rate == 0:
        return ip.copy(), loss
    grads_lo, grads_hi = interval_backward(spec, ip, trace, g_lo, g_hi)
    if optimizer is None:
        optimizer = nn.Adam(learning_rate)
    optimizer.lr = learning_rate
    packed = {f"lower/{k}": ip.lower[k] for k in grads_lo} | {f"upper/{k}": ip.upper[k] for k in grads_hi}
    grads = {f"lower/{k}": v for k, v in grads_lo.items()} | {f"upper/{k}": v for k, v in grads_hi.items()}
    stepped = optimizer.step(packed, grads)
    lower = dict(ip.lower)
    upper = dict(ip.upper)
    for k, v in stepped.items():
        side, key = k.split("/", 1)
        (lower if side == "lower" else upper)[key] = v
    return project(IntervalParams(lower, ip.central, upper, ip.interval_layers)), loss


def coverage(pred: IntervalPrediction, target: np.ndarray) -> float:
    """Fraction of target entries inside ``[lower, upper]``."""
    inside = (pred.lower <= target) & (target <= pred.upper)
    return float(np.mean(inside))


def save_interval_checkpoint(path, spec: NetworkSpec, ip: IntervalParams, extra: dict | None = None) -> None:
    keys = list(nn.param_shapes(spec))
    sections = {name: {k: getattr(ip, name)[k] for k in keys} for name in ("lower", "central", "upper")}
    header = {"kind": "interval", "spec": spec.to_dict(), "interval_layers": list(ip.interval_layers)}
    nn.save_tensors(path, sections, {**header, **(extra or {})})


def load_interval_checkpoint(path) -> tuple[NetworkSpec, IntervalParams, dict]:
    meta, sections = nn.load_tensors(path)
    if meta.get("kind") != "interval":
        raise nn.ConfigError(f"{path}: not an interval checkpoint")
    spec = NetworkSpec.from_dict(meta["spec"])
    ip = IntervalParams(sections["lower"], sections["central"], sections["upper"], tuple(meta["interval_layers"]))
    return spec, ip, meta
