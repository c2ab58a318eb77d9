"""Feed-forward layer sequences with reverse-mode gradients.

Activations are float64 arrays in channels-last layout: ``(batch, features)``
for dense stacks and ``(batch, height, width, channels)`` for images.  A
network is a :class:`NetworkSpec` (an ordered tuple of layer descriptors)
plus a flat parameter dict keyed ``"<layer index>.weight"`` /
``"<layer index>.bias"``.

U-Net style skips are expressed inside the sequence: :class:`Save` pushes
the current activation on a stack and :class:`Concat` pops it and joins it
along the channel axis.
"""

from __future__ import annotations

import json
import struct
import dataclasses
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import ClassVar

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, NumericalError, ShapeError, UsageError

Params = dict[str, np.ndarray]


# ---------------------------------------------------------------------------
# layer descriptors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int
    kind: ClassVar[str] = "dense"


@dataclass(frozen=True)
class Conv:
    channels_in: int
    channels_out: int
    kernel: int = 3
    padding: int | None = None  # None: kernel // 2, preserving spatial size
    kind: ClassVar[str] = "conv"

    @property
    def pad(self) -> int:
        return self.kernel // 2 if self.padding is None else self.padding


@dataclass(frozen=True)
class ReLU:
    kind: ClassVar[str] = "relu"


@dataclass(frozen=True)
class Dropout:
    rate: float
    kind: ClassVar[str] = "dropout"

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {self.rate}")


@dataclass(frozen=True)
class AvgPool:
    """2x2 average pooling."""

    kind: ClassVar[str] = "avgpool"


@dataclass(frozen=True)
class Upsample:
    """2x nearest-neighbour upsampling."""

    kind: ClassVar[str] = "upsample"


@dataclass(frozen=True)
class Save:
    kind: ClassVar[str] = "save"


@dataclass(frozen=True)
class Concat:
    kind: ClassVar[str] = "concat"


LAYER_TYPES = {cls.kind: cls for cls in (Dense, Conv, ReLU, Dropout, AvgPool, Upsample, Save, Concat)}
AFFINE = (Dense, Conv)


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer sequence.

    With ``residual=True`` the network input, mapped by
    ``skip_scale * x + skip_offset``, is added to the first ``in_channels``
    output channels, which is how the image-to-image nets learn a
    correction to ``x_tilde`` rather than the image itself.  The affine map
    undoes any rescaling applied to bring ``x_tilde`` into [0, 1].
    """

    layers: tuple = ()
    residual: bool = False
    name: str = ""
    skip_scale: float = 1.0
    skip_offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        self._check_composition()

    # Channel bookkeeping only; spatial sizes are checked at run time.
    def _check_composition(self):
        width = None
        stack = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                if width is not None and width != layer.in_features:
                    raise ShapeError(f"layer {i}: expects {layer.in_features} features, gets {width}")
                width = layer.out_features
            elif isinstance(layer, Conv):
                if width is not None and width != layer.channels_in:
                    raise ShapeError(f"layer {i}: expects {layer.channels_in} channels, gets {width}")
                width = layer.channels_out
            elif isinstance(layer, Save):
                stack.append(width)
            elif isinstance(layer, Concat):
                if not stack:
                    raise ShapeError(f"layer {i}: concat without a matching save")
                skip = stack.pop()
                width = None if width is None or skip is None else width + skip
        if stack:
            raise ShapeError("unmatched save layer")
        if self.residual and self.in_channels is not None and self.out_channels is not None:
            if self.out_channels < self.in_channels:
                raise ShapeError("residual network must emit at least as many channels as it reads")

    @property
    def in_channels(self) -> int | None:
        for layer in self.layers:
            if isinstance(layer, Dense):
                return layer.in_features
            if isinstance(layer, Conv):
                return layer.channels_in
        return None

    @property
    def out_channels(self) -> int | None:
        width = None
        stack = []
        for layer in self.layers:
            if isinstance(layer, Dense):
                width = layer.out_features
            elif isinstance(layer, Conv):
                width = layer.channels_out
            elif isinstance(layer, Save):
                stack.append(width)
            elif isinstance(layer, Concat):
                width = width + stack.pop()
        return width

    def affine_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, AFFINE)]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "residual": self.residual,
            "skip_scale": self.skip_scale,
            "skip_offset": self.skip_offset,
            "layers": [{"type": layer.kind, **asdict(layer)} for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        layers = []
        for entry in d["layers"]:
            entry = dict(entry)
            kind = entry.pop("type")
            if kind not in LAYER_TYPES:
                raise ConfigError(f"unknown layer type {kind!r}")
            layers.append(LAYER_TYPES[kind](**entry))
        return cls(tuple(layers), residual=d.get("residual", False), name=d.get("name", ""),
                   skip_scale=d.get("skip_scale", 1.0), skip_offset=d.get("skip_offset", 0.0))


def param_shapes(spec: NetworkSpec) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            shapes[f"{i}.weight"] = (layer.out_features, layer.in_features)
            shapes[f"{i}.bias"] = (layer.out_features,)
        elif isinstance(layer, Conv):
            shapes[f"{i}.weight"] = (layer.channels_out, layer.channels_in, layer.kernel, layer.kernel)
            shapes[f"{i}.bias"] = (layer.channels_out,)
    return shapes


def init_params(spec: NetworkSpec, rng: np.random.Generator, last_scale: float = 1.0) -> Params:
    """He-normal weights, zero biases.  ``last_scale`` shrinks the final
    affine layer, so a residual net starts close to the identity map."""
    params = {}
    last = spec.affine_indices()[-1] if spec.affine_indices() else None
    for key, shape in param_shapes(spec).items():
        idx = int(key.split(".")[0])
        if key.endswith(".bias"):
            params[key] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[1:]))
        w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        if idx == last:
            w *= last_scale
        params[key] = w
    return params


def check_params(spec: NetworkSpec, params: Params) -> None:
    for key, shape in param_shapes(spec).items():
        if key not in params:
            raise ShapeError(f"missing parameter {key}")
        if params[key].shape != shape:
            raise ShapeError(f"{key}: expected shape {shape}, got {params[key].shape}")


def copy_params(params: Params) -> Params:
    return {k: v.copy() for k, v in params.items()}


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def _im2col(x, k, pad):
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    ho, wo = xp.shape[1] - k + 1, xp.shape[2] - k + 1
    # (k, k, c) column order keeps channel runs contiguous in the copy
    cols = sliding_window_view(xp, (k, k), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
    return cols.reshape(b * ho * wo, k * k * c), (b, ho, wo)


def weight_matrix(weight):
    """``(cout, cin, k, k)`` kernel as a ``(cout, k*k*cin)`` matrix matching :func:`_im2col`."""
    return weight.transpose(0, 2, 3, 1).reshape(weight.shape[0], -1)


def weight_from_matrix(mat, weight_shape):
    cout, cin, k, _ = weight_shape
    return mat.reshape(cout, k, k, cin).transpose(0, 3, 1, 2)


def conv_forward(x, weight, bias=None, pad=1):
    """2-D cross-correlation. Returns ``(out, cols)``; ``cols`` is the
    im2col matrix needed by :func:`conv_backward`."""
    if x.ndim != 4 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"conv expects (B,H,W,{weight.shape[1]}) input, got {x.shape}")
    cout, _, k, _ = weight.shape
    cols, (b, ho, wo) = _im2col(x, k, pad)
    out = cols @ weight_matrix(weight).T
    if bias is not None:
        out += bias
    return out.reshape(b, ho, wo, cout), cols


def conv_grad_weight(cols, grad_out, weight_shape):
    cout = weight_shape[0]
    return weight_from_matrix(grad_out.reshape(-1, cout).T @ cols, weight_shape)


def conv_grad_input(grad_out, weight, input_shape, pad=1):
    """Input gradient as a full correlation with the flipped, transposed kernel."""
    k = weight.shape[-1]
    flipped = weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    gx, _ = conv_forward(grad_out, np.ascontiguousarray(flipped), None, k - 1 - pad)
    if gx.shape != tuple(input_shape):
        raise ShapeError(f"conv input gradient has shape {gx.shape}, expected {tuple(input_shape)}")
    return gx


def affine_forward(layer, x, weight, bias):
    """Dense or conv affine map; returns ``(out, cache)``."""
    if isinstance(layer, Dense):
        if x.ndim != 2 or x.shape[1] != layer.in_features:
            raise ShapeError(f"dense layer expects (B,{layer.in_features}), got {x.shape}")
        out = x @ weight.T
        if bias is not None:
            out = out + bias
        return out, x
    return conv_forward(x, weight, bias, layer.pad)


def affine_grad_weight(layer, cache, grad_out, weight_shape):
    if isinstance(layer, Dense):
        return grad_out.T @ cache
    return conv_grad_weight(cache, grad_out, weight_shape)


def affine_grad_input(layer, grad_out, weight, input_shape):
    if isinstance(layer, Dense):
        return grad_out @ weight
    return conv_grad_input(grad_out, weight, input_shape, layer.pad)


def bias_grad(grad_out):
    return grad_out.reshape(-1, grad_out.shape[-1]).sum(axis=0)


def avgpool(x):
    b, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool needs even spatial size, got {h}x{w}")
    return x.reshape(b, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def avgpool_backward(g):
    return np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25


def upsample(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def upsample_backward(g):
    b, h, w, c = g.shape
    return g.reshape(b, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


@dataclass
class Trace:
    """Per-layer caches recorded by :func:`forward` for :func:`backward`."""

    input_shape: tuple
    caches: list = field(default_factory=list)


def sample_dropout_masks(spec, shapes, rng):
    """Bernoulli keep-masks for every dropout layer with positive rate."""
    masks = {}
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Dropout) and layer.rate > 0:
            masks[i] = (rng.random(shapes[i]) >= layer.rate).astype(np.float64)
    return masks


def forward(spec: NetworkSpec, params: Params, x: np.ndarray, dropout=None, record: bool = False):
    """Run the layer sequence on a batch.

    ``dropout`` is ``None`` (inference: dropout layers are the identity), a
    dict mapping layer index to a binary keep-mask of the activation's
    shape, or a ``numpy.random.Generator`` from which masks are drawn.
    Kept activations are divided by the keep probability.

    Returns the output, or ``(output, Trace)`` when ``record`` is set.
    """
    x = np.asarray(x, dtype=np.float64)
    trace = Trace(x.shape) if record else None
    inp = x
    stack = []
    for i, layer in enumerate(spec.layers):
        cache = None
        if isinstance(layer, AFFINE):
            try:
                w, b = params[f"{i}.weight"], params[f"{i}.bias"]
            except KeyError as exc:
                raise ShapeError(f"missing parameter for layer {i}") from exc
            in_shape = x.shape
            x, cols = affine_forward(layer, x, w, b)
            cache = (cols, in_shape)
        elif isinstance(layer, ReLU):
            cache = x > 0
            x = x * cache
        elif isinstance(layer, Dropout):
            mask = None
            if layer.rate > 0 and dropout is not None:
                if isinstance(dropout, np.random.Generator):
                    mask = (dropout.random(x.shape) >= layer.rate).astype(np.float64)
                else:
                    mask = dropout.get(i)
                if mask is not None:
                    if mask.shape != x.shape:
                        raise ShapeError(f"dropout mask for layer {i} has shape {mask.shape}, activation {x.shape}")
                    mask = mask / (1.0 - layer.rate)
                    x = x * mask
            cache = mask
        elif isinstance(layer, AvgPool):
            x = avgpool(x)
        elif isinstance(layer, Upsample):
            x = upsample(x)
        elif isinstance(layer, Save):
            stack.append(x)
        elif isinstance(layer, Concat):
            skip = stack.pop()
            if skip.shape[:-1] != x.shape[:-1]:
                raise ShapeError(f"layer {i}: cannot concat {x.shape} with skip {skip.shape}")
            cache = x.shape[-1]
            x = np.concatenate([x, skip], axis=-1)
        if record:
            trace.caches.append(cache)
    if spec.residual:
        c = inp.shape[-1]
        if x.shape[:-1] != inp.shape[:-1] or x.shape[-1] < c:
            raise ShapeError(f"residual output {x.shape} incompatible with input {inp.shape}")
        x = x.copy()
        x[..., :c] += spec.skip_scale * inp + spec.skip_offset
    return (x, trace) if record else x


def backward(spec: NetworkSpec, params: Params, trace: Trace | None, grad_out: np.ndarray):
    """Gradients of ``sum(grad_out * forward(...))``.

    Returns ``(param_grads, input_grad)``; ``param_grads`` has the layout of
    ``params``.  ReLU uses subgradient 0 at the kink.
    """
    if trace is None or len(trace.caches) != len(spec.layers):
        raise UsageError("backward needs the Trace recorded by forward(..., record=True)")
    g = np.asarray(grad_out, dtype=np.float64)
    grads = {}
    skip_grads = []
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        cache = trace.caches[i]
        if isinstance(layer, AFFINE):
            cols, in_shape = cache
            w = params[f"{i}.weight"]
            grads[f"{i}.weight"] = affine_grad_weight(layer, cols, g, w.shape)
            grads[f"{i}.bias"] = bias_grad(g)
            g = affine_grad_input(layer, g, w, in_shape)
        elif isinstance(layer, ReLU):
            g = g * cache
        elif isinstance(layer, Dropout):
            if cache is not None:
                g = g * cache
        elif isinstance(layer, AvgPool):
            g = avgpool_backward(g)
        elif isinstance(layer, Upsample):
            g = upsample_backward(g)
        elif isinstance(layer, Concat):
            c = cache
            skip_grads.append(g[..., c:])
            g = g[..., :c]
        elif isinstance(layer, Save):
            g = g + skip_grads.pop()
    if spec.residual:
        c = trace.input_shape[-1]
        g = g + spec.skip_scale * np.asarray(grad_out)[..., :c]
    return grads, g


def dropout_shapes(spec: NetworkSpec, input_shape) -> dict[int, tuple]:
    """Activation shape seen by each dropout layer for a given input shape."""
    probe = np.zeros(input_shape)
    shapes = {}
    zero = {k: np.zeros(s) for k, s in param_shapes(spec).items()}
    # Shapes only depend on the layer sequence; run a zero forward once.
    x = probe
    stack = []
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, AFFINE):
            x, _ = affine_forward(layer, x, zero[f"{i}.weight"], None)
        elif isinstance(layer, AvgPool):
            x = avgpool(x)
        elif isinstance(layer, Upsample):
            x = upsample(x)
        elif isinstance(layer, Save):
            stack.append(x)
        elif isinstance(layer, Concat):
            x = np.concatenate([x, stack.pop()], axis=-1)
        elif isinstance(layer, Dropout):
            shapes[i] = x.shape
    return shapes


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


def _check_finite(grads):
    for k, v in grads.items():
        if not np.all(np.isfinite(v)):
            raise NumericalError(f"non-finite gradient in {k}")


def sgd_step(params: Params, grads: Params, learning_rate: float) -> Params:
    if learning_rate <= 0:
        raise ConfigError("learning rate must be positive")
    _check_finite(grads)
    return {k: v - learning_rate * grads[k] if k in grads else v.copy() for k, v in params.items()}


class Adam:
    """Adam with the usual bias correction.  State is keyed like the params."""

    def __init__(self, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if learning_rate < 0:
            raise ConfigError("learning rate must be non-negative")
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Params = {}
        self.v: Params = {}

    def step(self, params: Params, grads: Params) -> Params:
        _check_finite(grads)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        new = {}
        for k, p in params.items():
            if k not in grads:
                new[k] = p
                continue
            g = grads[k]
            m = self.m.get(k)
            if m is None:
                m = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            m = b1 * m + (1 - b1) * g
            v = b2 * self.v[k] + (1 - b2) * g * g
            self.m[k], self.v[k] = m, v
            new[k] = p - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return new


# ---------------------------------------------------------------------------
# checkpoint / tensor files
# ---------------------------------------------------------------------------

FORMAT_VERSION = 1
_MAGIC = b"INNSTAB\x00"


def save_tensors(path, sections: dict[str, dict[str, np.ndarray]], header: dict | None = None) -> None:
    """Write a JSON header followed by little-endian float64 payloads.

    Layout: 8-byte magic, uint64 header length, UTF-8 JSON header, then for
    each section in header order every tensor's raw data in header order.
    """
    meta = dict(header or {})
    meta["format_version"] = FORMAT_VERSION
    meta["sections"] = [
        {"name": name, "tensors": [{"name": k, "shape": list(np.shape(v))} for k, v in tensors.items()]}
        for name, tensors in sections.items()
    ]
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for tensors in sections.values():
            for v in tensors.values():
                fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_tensors(path) -> tuple[dict, dict[str, dict[str, np.ndarray]]]:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ConfigError(f"{path}: not a tensor file")
    (n,) = struct.unpack("<Q", raw[8:16])
    meta = json.loads(raw[16:16 + n])
    if meta.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported format version {meta.get('format_version')}")
    offset = 16 + n
    sections = {}
    for sec in meta["sections"]:
        tensors = {}
        for t in sec["tensors"]:
            count = int(np.prod(t["shape"])) if t["shape"] else 1
            arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(t["shape"])
            tensors[t["name"]] = arr.astype(np.float64)
            offset += 8 * count
        sections[sec["name"]] = tensors
    return meta, sections


def save_checkpoint(path, spec: NetworkSpec, params: Params, extra: dict | None = None) -> None:
    check_params(spec, params)
    ordered = {k: params[k] for k in param_shapes(spec)}
    save_tensors(path, {"params": ordered}, {"kind": "network", "spec": spec.to_dict(), **(extra or {})})


def load_checkpoint(path) -> tuple[NetworkSpec, Params, dict]:
    meta, sections = load_tensors(path)
    if "params" not in sections:
        raise ConfigError(f"{path}: not a network checkpoint")
    spec = NetworkSpec.from_dict(meta["spec"])
    params = sections["params"]
    check_params(spec, params)
    return spec, params, meta


# ---------------------------------------------------------------------------
# architectures
# ---------------------------------------------------------------------------


def denoising_net(depth: int = 6, channels: int = 32, dropout: float = 0.05, out_channels: int = 1) -> NetworkSpec:
    """Residual all-conv denoiser; dropout after every other hidden conv."""
    layers = [Conv(1, channels), ReLU()]
    for j in range(depth - 2):
        layers += [Conv(channels, channels), ReLU()]
        if j % 2 == 0 and dropout > 0:
            layers.append(Dropout(dropout))
    layers.append(Conv(channels, out_channels))
    return NetworkSpec(tuple(layers), residual=True, name="denoise")


def unet(base: int = 8, dropout: float = 0.7, out_channels: int = 1) -> NetworkSpec:
    """Three-scale encoder-decoder with concatenation skips; dropout after
    each down- and up-sampling step."""
    b1, b2, b3 = base, 2 * base, 4 * base
    drop = [Dropout(dropout)] if dropout > 0 else []
    layers = [
        Conv(1, b1), ReLU(), Conv(b1, b1), ReLU(), Save(),
        AvgPool(), *drop,
        Conv(b1, b2), ReLU(), Conv(b2, b2), ReLU(), Save(),
        AvgPool(), *drop,
        Conv(b2, b3), ReLU(), Conv(b3, b3), ReLU(),
        Upsample(), *drop, Concat(),
        Conv(b3 + b2, b2), ReLU(), Conv(b2, b2), ReLU(),
        Upsample(), *drop, Concat(),
        Conv(b2 + b1, b1), ReLU(), Conv(b1, b1), ReLU(),
        Conv(b1, out_channels),
    ]
    return NetworkSpec(tuple(layers), residual=True, name="unet")


def with_output_channels(spec: NetworkSpec, out_channels: int) -> NetworkSpec:
    """Copy of ``spec`` whose last affine layer emits ``out_channels``."""
    last = spec.affine_indices()[-1]
    layers = list(spec.layers)
    layer = layers[last]
    if isinstance(layer, Conv):
        layers[last] = Conv(layer.channels_in, out_channels, layer.kernel, layer.padding)
    else:
        layers[last] = Dense(layer.in_features, out_channels)
    return dataclasses.replace(spec, layers=tuple(layers))
