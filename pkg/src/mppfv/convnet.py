"""Minimal feed-forward convolutional engine with FC-to-conv rewriting.

Rewriting every fully-connected layer as an equivalent convolution lets one
forward pass per pyramid scale produce a whole grid of local descriptors,
each corresponding to a fixed-size input patch. The receptive-field
arithmetic here is what ties an output position back to that patch.

Tensors are plain (channels, height, width) float32 arrays throughout.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .descriptors import DescriptorSet
from .errors import ConfigurationError, InputError, NumericError

CONV, RELU, MAXPOOL, LRN, FC = "conv", "relu", "maxpool", "lrn", "fc"
_KIND_TAGS = {CONV: 0, RELU: 1, MAXPOOL: 2, LRN: 3, FC: 4}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}

_MAGIC = b"MPPN"
_VERSION = 1


@dataclass
class LayerSpec:
    """One layer of a NetworkSpec.

    conv    : out_channels, kernel_h/w, stride, pad, weight (oc, ic, kh, kw), bias (oc,)
    fc      : out_channels, weight (out, in), bias (out,)
    maxpool : kernel_h (== kernel_w), stride
    lrn     : lrn_size, lrn_alpha, lrn_beta, lrn_k (across channels; off by default)
    relu    : no fields

    weight may be None for geometry-only specs (shape and cost arithmetic
    work; forward() refuses to run them).
    """

    kind: str
    out_channels: int = 0
    kernel_h: int = 0
    kernel_w: int = 0
    stride: int = 1
    pad: int = 0
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None
    lrn_size: int = 5
    lrn_alpha: float = 1e-4
    lrn_beta: float = 0.75
    lrn_k: float = 2.0

    def __post_init__(self):
        if self.kind not in _KIND_TAGS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if self.kind in (CONV, MAXPOOL):
            if self.kernel_h < 1 or self.kernel_w < 1 or self.stride < 1:
                raise ConfigurationError(f"{self.kind}: kernel and stride must be >= 1")
        if self.weight is not None:
            self.weight = np.ascontiguousarray(self.weight, dtype=np.float32)
        if self.bias is not None:
            self.bias = np.ascontiguousarray(self.bias, dtype=np.float32)


def conv_layer(out_channels: int, kernel: int, stride: int = 1, pad: int = 0,
               weight: np.ndarray | None = None, bias: np.ndarray | None = None) -> LayerSpec:
    return LayerSpec(CONV, out_channels=out_channels, kernel_h=kernel, kernel_w=kernel,
                     stride=stride, pad=pad, weight=weight, bias=bias)


def relu_layer() -> LayerSpec:
    return LayerSpec(RELU)


def maxpool_layer(kernel: int, stride: int) -> LayerSpec:
    return LayerSpec(MAXPOOL, kernel_h=kernel, kernel_w=kernel, stride=stride)


def fc_layer(out_features: int, weight: np.ndarray | None = None,
             bias: np.ndarray | None = None) -> LayerSpec:
    return LayerSpec(FC, out_channels=out_features, weight=weight, bias=bias)


@dataclass
class NetworkSpec:
    """An ordered layer chain plus the input contract and target layer.

    standard_size is the fixed input edge the architecture was designed for;
    target_layer indexes the layer whose activations become descriptors.
    """

    layers: list[LayerSpec]
    standard_size: int
    in_channels: int
    target_layer: int
    converted: bool = False

    def __post_init__(self):
        if not self.layers:
            raise ConfigurationError("network has no layers")
        if not 0 <= self.target_layer < len(self.layers):
            raise ConfigurationError(
                f"target layer {self.target_layer} out of range 0..{len(self.layers) - 1}"
            )

    @property
    def has_fc(self) -> bool:
        return any(l.kind == FC for l in self.layers)

    def validate(self) -> None:
        """Check shape consistency and weight payloads at the standard size."""
        shape = (self.in_channels, self.standard_size, self.standard_size)
        for i, layer in enumerate(self.layers):
            if layer.kind == CONV and layer.weight is not None:
                expect = (layer.out_channels, shape[0], layer.kernel_h, layer.kernel_w)
                if layer.weight.shape != expect:
                    raise ConfigurationError(
                        f"layer {i} (conv): weight shape {layer.weight.shape}, expected {expect}"
                    )
            if layer.kind == FC and layer.weight is not None:
                n_in = shape[0] * shape[1] * shape[2]
                if layer.weight.shape != (layer.out_channels, n_in):
                    raise ConfigurationError(
                        f"layer {i} (fc): weight shape {layer.weight.shape}, "
                        f"expected {(layer.out_channels, n_in)}"
                    )
            shape = layer_output_shape(layer, shape, index=i)


def layer_output_shape(layer: LayerSpec, shape: tuple[int, int, int],
                       index: int | None = None) -> tuple[int, int, int]:
    """Stride/padding arithmetic for one layer; raises if the input is too small."""
    c, h, w = shape
    where = f"layer {index} ({layer.kind})" if index is not None else layer.kind
    if layer.kind == CONV:
        oh = (h + 2 * layer.pad - layer.kernel_h) // layer.stride + 1
        ow = (w + 2 * layer.pad - layer.kernel_w) // layer.stride + 1
        if oh < 1 or ow < 1:
            raise ConfigurationError(f"{where}: input {h}x{w} smaller than kernel")
        return (layer.out_channels, oh, ow)
    if layer.kind == MAXPOOL:
        oh = (h - layer.kernel_h) // layer.stride + 1
        ow = (w - layer.kernel_w) // layer.stride + 1
        if oh < 1 or ow < 1:
            raise ConfigurationError(f"{where}: input {h}x{w} smaller than pool window")
        return (c, oh, ow)
    if layer.kind == FC:
        return (layer.out_channels, 1, 1)
    return shape  # relu, lrn


def output_shape(net: NetworkSpec, input_edge: int, upto: int | None = None) -> tuple[int, int, int]:
    """Shape of the activation tensor at the target (or given) layer."""
    last = net.target_layer if upto is None else upto
    shape = (net.in_channels, input_edge, input_edge)
    for i, layer in enumerate(net.layers[: last + 1]):
        shape = layer_output_shape(layer, shape, index=i)
    return shape


def _lrn(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    c = x.shape[0]
    half = layer.lrn_size // 2
    sq = x.astype(np.float64) ** 2
    denom = np.empty_like(sq)
    for i in range(c):
        lo, hi = max(0, i - half), min(c, i + half + 1)
        denom[i] = sq[lo:hi].sum(axis=0)
    scale = (layer.lrn_k + (layer.lrn_alpha / layer.lrn_size) * denom) ** layer.lrn_beta
    return (x / scale).astype(np.float32)


class MacCounter:
    """Accumulates multiply-accumulate counts as exact machine-independent ints."""

    def __init__(self):
        self.total = 0

    def add(self, n: int) -> None:
        self.total += int(n)


def forward(net: NetworkSpec, x: np.ndarray, upto: int | None = None,
            counter: MacCounter | None = None) -> np.ndarray:
    """Run the layer chain up to and including the target layer.

    Raises ConfigurationError on channel/shape mismatches, InputError when
    the image is smaller than the standard size, and NumericError (naming
    the layer) if any intermediate value goes non-finite.
    """
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.ndim != 3:
        raise InputError(f"input must be (C, H, W), got shape {x.shape}")
    if x.shape[0] != net.in_channels:
        raise ConfigurationError(
            f"network expects {net.in_channels} input channels, tensor has {x.shape[0]}"
        )
    # No explicit standard-size floor here: receptive-field-sized crops can be
    # one pixel short of it and must still evaluate (the crop oracle relies on
    # this). The per-layer shape arithmetic rejects anything truly too small.
    last = net.target_layer if upto is None else upto
    for i, layer in enumerate(net.layers[: last + 1]):
        in_shape = x.shape
        if layer.kind == CONV:
            if layer.weight is None:
                raise ConfigurationError(f"layer {i} (conv) has no weights loaded")
            x = kernels.conv2d(x, layer.weight, layer.bias, layer.stride, layer.pad)
        elif layer.kind == RELU:
            x = np.maximum(x, np.float32(0.0))
        elif layer.kind == MAXPOOL:
            x = kernels.maxpool2d(x, layer.kernel_h, layer.stride)
        elif layer.kind == LRN:
            x = _lrn(x, layer)
        elif layer.kind == FC:
            if layer.weight is None:
                raise ConfigurationError(f"layer {i} (fc) has no weights loaded")
            flat = x.reshape(-1).astype(np.float64)
            if flat.shape[0] != layer.weight.shape[1]:
                raise ConfigurationError(
                    f"layer {i} (fc): expects {layer.weight.shape[1]} inputs, got {flat.shape[0]}"
                )
            out = layer.weight.astype(np.float64) @ flat + layer.bias.astype(np.float64)
            x = out.astype(np.float32).reshape(layer.out_channels, 1, 1)
        if counter is not None:
            counter.add(_layer_macs(layer, in_shape, x.shape))
        if not np.isfinite(x).all():
            raise NumericError(f"non-finite values after layer {i} ({layer.kind})")
    return x


def _layer_macs(layer: LayerSpec, in_shape, out_shape) -> int:
    if layer.kind == CONV:
        oc, oh, ow = out_shape
        return oc * oh * ow * in_shape[0] * layer.kernel_h * layer.kernel_w
    if layer.kind == FC:
        return layer.out_channels * in_shape[0] * in_shape[1] * in_shape[2]
    return 0


def mac_count(net: NetworkSpec, input_edge: int, upto: int | None = None) -> int:
    """Multiply-accumulates of one forward pass, from geometry alone."""
    last = net.target_layer if upto is None else upto
    shape = (net.in_channels, input_edge, input_edge)
    total = 0
    for i, layer in enumerate(net.layers[: last + 1]):
        out = layer_output_shape(layer, shape, index=i)
        total += _layer_macs(layer, shape, out)
        shape = out
    return total


def convert_fc_to_conv(net: NetworkSpec) -> NetworkSpec:
    """Rewrite every fully-connected layer as an equivalent convolution.

    The first FC layer becomes a convolution whose kernel equals its input
    spatial extent at the standard size; later FC layers become 1x1
    convolutions. At the standard input size the converted network computes
    exactly the same numbers, just shaped as a 1x1 map.
    """
    if not net.has_fc:
        return replace(net, converted=True)
    shape = (net.in_channels, net.standard_size, net.standard_size)
    new_layers: list[LayerSpec] = []
    for i, layer in enumerate(net.layers):
        if layer.kind == FC:
            c, h, w = shape
            if layer.weight is not None:
                if layer.weight.shape[1] != c * h * w:
                    raise ConfigurationError(
                        f"layer {i} (fc): weight expects {layer.weight.shape[1]} inputs but "
                        f"spatial extent at the standard size is {c}x{h}x{w}"
                    )
                weight = layer.weight.reshape(layer.out_channels, c, h, w)
            else:
                weight = None
            layer = LayerSpec(
                CONV, out_channels=layer.out_channels, kernel_h=h, kernel_w=w,
                stride=1, pad=0, weight=weight, bias=layer.bias,
            )
        new_layers.append(layer)
        shape = layer_output_shape(layer, shape, index=i)
    return NetworkSpec(new_layers, net.standard_size, net.in_channels,
                       net.target_layer, converted=True)


@dataclass(frozen=True)
class FieldGeometry:
    """Receptive-field arithmetic up to the target layer.

    Output position (i, j) looks at the input window starting at pixel
    (offset + stride * i, offset + stride * j) with side length `size`.
    offset is <= 0 and only nonzero when some layer pads.
    """

    size: int
    stride: int
    offset: int


def receptive_field(net: NetworkSpec, upto: int | None = None) -> FieldGeometry:
    last = net.target_layer if upto is None else upto
    size, stride, offset = 1, 1, 0
    for layer in net.layers[: last + 1]:
        if layer.kind in (CONV, MAXPOOL):
            size += (layer.kernel_h - 1) * stride
            offset -= layer.pad * stride
            stride *= layer.stride
        elif layer.kind == FC:
            raise ConfigurationError("receptive field undefined through an FC layer; convert first")
    return FieldGeometry(size, stride, offset)


def dense_activations(net: NetworkSpec, image: np.ndarray, scale: int,
                      num_scales: int | None = None,
                      counter: MacCounter | None = None) -> DescriptorSet:
    """One descriptor per output position of the converted network.

    Every descriptor is tagged with the normalized geometry of its source
    patch; windows that cross the image border (possible when inner layers
    pad) are clamped to [0, 1] for reporting.
    """
    if not net.converted and net.has_fc:
        raise ConfigurationError("network still has FC layers; call convert_fc_to_conv first")
    if image.shape[1] < net.standard_size or image.shape[2] < net.standard_size:
        raise InputError(
            f"image {image.shape[1]}x{image.shape[2]} below the standard size "
            f"{net.standard_size}"
        )
    act = forward(net, image, counter=counter)
    c, mh, mw = act.shape
    geom = receptive_field(net)
    ih, iw = image.shape[1], image.shape[2]
    long_edge = max(ih, iw)

    # (scale, row-major) ordering: vectors[i * mw + j] is output position (i, j).
    vectors = np.ascontiguousarray(act.reshape(c, mh * mw).T)

    ys = geom.offset + geom.stride * np.arange(mh, dtype=np.float64)
    xs = geom.offset + geom.stride * np.arange(mw, dtype=np.float64)
    cy = np.clip((ys + geom.size / 2.0) / ih, 0.0, 1.0)
    cx = np.clip((xs + geom.size / 2.0) / iw, 0.0, 1.0)
    centers = np.stack(
        [np.broadcast_to(cx, (mh, mw)).ravel(), np.repeat(cy, mw)], axis=1
    ).astype(np.float32)
    edge = min(geom.size / long_edge, 1.0)

    n = mh * mw
    return DescriptorSet(
        vectors=vectors,
        scales=np.full(n, scale, dtype=np.int32),
        centers=centers,
        edges=np.full(n, edge, dtype=np.float32),
        num_scales=num_scales if num_scales is not None else scale,
    )


# ---------------------------------------------------------------------------
# Construction helpers

def toy_network(seed: int = 0, standard: int = 32, channels: int = 1,
                conv_widths: tuple[int, int] = (8, 16), descriptor_dim: int = 24,
                pads: tuple[int, int] = (0, 0)) -> NetworkSpec:
    """Small seeded stand-in architecture: conv-relu-pool-conv-relu-fc-relu.

    With the default 32-pixel standard size the receptive field of the FC
    layer is 31 pixels at stride 4, so dense maps grow quickly with scale.
    """
    rng = np.random.default_rng(seed)
    w1, w2 = conv_widths

    def winit(*shape):
        fan_in = int(np.prod(shape[1:]))
        return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)

    layers = [
        conv_layer(w1, kernel=5, stride=2, pad=pads[0],
                   weight=winit(w1, channels, 5, 5),
                   bias=rng.standard_normal(w1).astype(np.float32) * 0.1),
        relu_layer(),
        maxpool_layer(kernel=2, stride=2),
        conv_layer(w2, kernel=3, stride=1, pad=pads[1],
                   weight=winit(w2, w1, 3, 3),
                   bias=rng.standard_normal(w2).astype(np.float32) * 0.1),
        relu_layer(),
    ]
    net_head = NetworkSpec(layers, standard, channels, target_layer=len(layers) - 1)
    c, h, w = output_shape(net_head, standard, upto=len(layers) - 1)
    layers.append(fc_layer(descriptor_dim,
                           weight=winit(descriptor_dim, c * h * w).reshape(descriptor_dim, c * h * w),
                           bias=rng.standard_normal(descriptor_dim).astype(np.float32) * 0.1))
    layers.append(relu_layer())
    net = NetworkSpec(layers, standard, channels, target_layer=len(layers) - 1)
    net.validate()
    return net


def reference_topology() -> NetworkSpec:
    """Geometry-only spec of the classic 227-input architecture.

    Weights are omitted (tens of millions of parameters); this exists for
    map-size and cost arithmetic, which only need layer geometry.
    """
    layers = [
        conv_layer(96, kernel=11, stride=4, pad=0),
        relu_layer(),
        maxpool_layer(kernel=3, stride=2),
        conv_layer(256, kernel=5, stride=1, pad=2),
        relu_layer(),
        maxpool_layer(kernel=3, stride=2),
        conv_layer(384, kernel=3, stride=1, pad=1),
        relu_layer(),
        conv_layer(384, kernel=3, stride=1, pad=1),
        relu_layer(),
        conv_layer(256, kernel=3, stride=1, pad=1),
        relu_layer(),
        maxpool_layer(kernel=3, stride=2),
        fc_layer(4096),
        relu_layer(),
        fc_layer(4096),
        relu_layer(),
    ]
    # Target the first FC layer, as in dense-descriptor extraction.
    return NetworkSpec(layers, standard_size=227, in_channels=3, target_layer=13)


# ---------------------------------------------------------------------------
# Serialization

def save_network(net: NetworkSpec, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIIIiB", _MAGIC, _VERSION, net.standard_size,
                             net.in_channels, net.target_layer, int(net.converted)))
        fh.write(struct.pack("<I", len(net.layers)))
        for layer in net.layers:
            fh.write(struct.pack("<B", _KIND_TAGS[layer.kind]))
            if layer.kind == CONV:
                if layer.weight is None:
                    raise ConfigurationError("cannot serialize a geometry-only conv layer")
                oc, ic, kh, kw = layer.weight.shape
                fh.write(struct.pack("<IIIIII", oc, ic, kh, kw, layer.stride, layer.pad))
                fh.write(layer.weight.astype("<f4").tobytes())
                fh.write(layer.bias.astype("<f4").tobytes())
            elif layer.kind == FC:
                if layer.weight is None:
                    raise ConfigurationError("cannot serialize a geometry-only fc layer")
                out, n_in = layer.weight.shape
                fh.write(struct.pack("<II", out, n_in))
                fh.write(layer.weight.astype("<f4").tobytes())
                fh.write(layer.bias.astype("<f4").tobytes())
            elif layer.kind == MAXPOOL:
                fh.write(struct.pack("<II", layer.kernel_h, layer.stride))
            elif layer.kind == LRN:
                fh.write(struct.pack("<Ifff", layer.lrn_size, layer.lrn_alpha,
                                     layer.lrn_beta, layer.lrn_k))


def load_network(path: str | Path) -> NetworkSpec:
    with open(path, "rb") as fh:
        magic, version, standard, channels, target, converted = struct.unpack(
            "<4sIIIiB", fh.read(21)
        )
        if magic != _MAGIC:
            raise InputError(f"{path}: not a network weights file (magic {magic!r})")
        if version != _VERSION:
            raise InputError(f"{path}: unsupported weights version {version}")
        (count,) = struct.unpack("<I", fh.read(4))
        layers: list[LayerSpec] = []
        for _ in range(count):
            (tag,) = struct.unpack("<B", fh.read(1))
            kind = _TAG_KINDS.get(tag)
            if kind is None:
                raise InputError(f"{path}: unknown layer tag {tag}")
            if kind == CONV:
                oc, ic, kh, kw, stride, pad = struct.unpack("<IIIIII", fh.read(24))
                weight = np.frombuffer(fh.read(4 * oc * ic * kh * kw), dtype="<f4")
                bias = np.frombuffer(fh.read(4 * oc), dtype="<f4")
                layers.append(LayerSpec(CONV, out_channels=oc, kernel_h=kh, kernel_w=kw,
                                        stride=stride, pad=pad,
                                        weight=weight.reshape(oc, ic, kh, kw), bias=bias))
            elif kind == FC:
                out, n_in = struct.unpack("<II", fh.read(8))
                weight = np.frombuffer(fh.read(4 * out * n_in), dtype="<f4")
                bias = np.frombuffer(fh.read(4 * out), dtype="<f4")
                layers.append(fc_layer(out, weight=weight.reshape(out, n_in), bias=bias))
            elif kind == MAXPOOL:
                kernel, stride = struct.unpack("<II", fh.read(8))
                layers.append(maxpool_layer(kernel, stride))
            elif kind == LRN:
                size, alpha, beta, k = struct.unpack("<Ifff", fh.read(16))
                layers.append(LayerSpec(LRN, lrn_size=size, lrn_alpha=alpha,
                                        lrn_beta=beta, lrn_k=k))
            else:
                layers.append(relu_layer())
    net = NetworkSpec(layers, standard, channels, target, converted=bool(converted))
    net.validate()
    return net


def load_network_manifest(path: str | Path) -> NetworkSpec:
    """Text form accepted for tests: one layer per line, seeded random weights.

    Header lines: `standard N`, `channels N`, optional `seed N` and
    `target N` (defaults: seed 0, target = first fc layer, else last layer).
    Layer lines: `conv out=8 kernel=5 stride=2 pad=0`, `relu`,
    `maxpool kernel=2 stride=2`, `fc out=24`, `lrn size=5`.
    """
    standard, channels, seed, target = 32, 1, 0, None
    rows: list[tuple[str, dict[str, float]]] = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        opts = {}
        for token in rest:
            if "=" in token:
                key, value = token.split("=", 1)
                opts[key] = float(value)
            else:
                opts[head] = float(token)
        if head == "standard":
            standard = int(opts[head])
        elif head == "channels":
            channels = int(opts[head])
        elif head == "seed":
            seed = int(opts[head])
        elif head == "target":
            target = int(opts[head])
        else:
            rows.append((head, opts))

    rng = np.random.default_rng(seed)
    shape = (channels, standard, standard)
    layers: list[LayerSpec] = []
    for head, opts in rows:
        if head == "conv":
            oc, k = int(opts["out"]), int(opts["kernel"])
            stride, pad = int(opts.get("stride", 1)), int(opts.get("pad", 0))
            fan_in = shape[0] * k * k
            weight = (rng.standard_normal((oc, shape[0], k, k)) *
                      np.sqrt(2.0 / fan_in)).astype(np.float32)
            bias = (rng.standard_normal(oc) * 0.1).astype(np.float32)
            layers.append(conv_layer(oc, k, stride, pad, weight, bias))
        elif head == "fc":
            out = int(opts["out"])
            n_in = shape[0] * shape[1] * shape[2]
            weight = (rng.standard_normal((out, n_in)) *
                      np.sqrt(2.0 / n_in)).astype(np.float32)
            bias = (rng.standard_normal(out) * 0.1).astype(np.float32)
            layers.append(fc_layer(out, weight, bias))
        elif head == "maxpool":
            layers.append(maxpool_layer(int(opts["kernel"]), int(opts["stride"])))
        elif head == "relu":
            layers.append(relu_layer())
        elif head == "lrn":
            layers.append(LayerSpec(LRN, lrn_size=int(opts.get("size", 5))))
        else:
            raise ConfigurationError(f"{path}: unknown layer line {head!r}")
        shape = layer_output_shape(layers[-1], shape, index=len(layers) - 1)

    if target is None:
        fc_indices = [i for i, l in enumerate(layers) if l.kind == FC]
        target = fc_indices[0] if fc_indices else len(layers) - 1
    net = NetworkSpec(layers, standard, channels, target)
    net.validate()
    return net
