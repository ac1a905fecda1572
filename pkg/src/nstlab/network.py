"""Layer-graph definition, validation, tapped forward execution, weights.

Networks are sequential chains of conv / relu / pooling / residual-block
layers. A residual block holds an inner layer chain plus an optional 1x1
projection on the skip path and applies a relu after the skip add.

Weight files use the "NSTW" binary format (see ``save_weights``): all
integers little-endian, float payloads little-endian float32, no padding.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .errors import (
    BadMagicError,
    EntrySizeError,
    TruncatedFileError,
    ValidationError,
    VersionMismatchError,
    WeightError,
    WeightFormatError,
)

LAYER_KINDS = ("conv", "relu", "pool-max", "pool-avg", "residual-block")

MAGIC = b"NSTW"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    window: int = 0
    body: tuple["LayerSpec", ...] = ()
    project: bool = False


def conv(name: str, cin: int, cout: int, kernel: int = 3, stride: int = 1,
         padding: int | None = None) -> LayerSpec:
    if padding is None:
        padding = kernel // 2
    return LayerSpec(name, "conv", in_channels=cin, out_channels=cout,
                     kernel=kernel, stride=stride, padding=padding)


def relu(name: str) -> LayerSpec:
    return LayerSpec(name, "relu")


def pool(name: str, kind: str = "pool-max", window: int = 2, stride: int = 2) -> LayerSpec:
    return LayerSpec(name, kind, window=window, stride=stride)


def residual_block(name: str, cin: int, cout: int, stride: int = 1) -> LayerSpec:
    """conv-relu-conv body with a skip add followed by relu."""
    body = (
        conv(f"{name}.conv1", cin, cout, kernel=3, stride=stride),
        relu(f"{name}.relu1"),
        conv(f"{name}.conv2", cout, cout, kernel=3, stride=1),
    )
    project = cin != cout or stride != 1
    return LayerSpec(name, "residual-block", in_channels=cin, out_channels=cout,
                     stride=stride, body=body, project=project)


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    layers: tuple[LayerSpec, ...]
    taps: tuple[str, ...] = ()
    role: str = "encoder"
    in_channels: int = 3

    def with_taps(self, taps) -> "NetworkSpec":
        return replace(self, taps=tuple(taps))


def _walk(layers) -> list[LayerSpec]:
    """All layers, flattened depth-first through residual bodies."""
    out = []
    for layer in layers:
        out.append(layer)
        if layer.kind == "residual-block":
            out.extend(_walk(layer.body))
    return out


def _proj_name(block: LayerSpec) -> str:
    return f"{block.name}.proj"


class Network:
    """A validated NetworkSpec plus the conv weight shapes it requires."""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.weight_shapes: dict[str, tuple[tuple[int, ...], tuple[int, ...]]] = {}
        for layer in _walk(spec.layers):
            if layer.kind == "conv":
                self.weight_shapes[layer.name] = (
                    (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel),
                    (layer.out_channels,),
                )
            elif layer.kind == "residual-block" and layer.project:
                self.weight_shapes[_proj_name(layer)] = (
                    (layer.out_channels, layer.in_channels, 1, 1),
                    (layer.out_channels,),
                )
        self.layer_names = [l.name for l in _walk(spec.layers)]

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def taps(self) -> tuple[str, ...]:
        return self.spec.taps


def validate_network(spec: NetworkSpec) -> list[str]:
    """Every violation found, as human-readable strings; empty means valid."""
    problems: list[str] = []
    names: set[str] = set()
    flat = _walk(spec.layers)
    for layer in flat:
        if layer.name in names:
            problems.append(f"duplicate layer name {layer.name!r}")
        names.add(layer.name)
        if layer.kind not in LAYER_KINDS:
            problems.append(f"layer {layer.name!r}: unknown kind {layer.kind!r}")

    def chain(layers, channels, where):
        for layer in layers:
            if layer.kind == "conv":
                if layer.in_channels != channels:
                    problems.append(
                        f"layer {layer.name!r}: expects {layer.in_channels} input "
                        f"channels but receives {channels}{where}"
                    )
                if layer.kernel < 1 or layer.stride < 1 or layer.padding < 0:
                    problems.append(f"layer {layer.name!r}: invalid conv geometry")
                channels = layer.out_channels
            elif layer.kind in ("pool-max", "pool-avg"):
                if layer.window < 1 or layer.stride < 1:
                    problems.append(f"layer {layer.name!r}: invalid pool geometry")
            elif layer.kind == "residual-block":
                body_out = chain(layer.body, channels, f" (inside {layer.name!r})")
                if body_out != layer.out_channels:
                    problems.append(
                        f"block {layer.name!r}: body yields {body_out} channels, "
                        f"declared {layer.out_channels}"
                    )
                skip_out = layer.out_channels if layer.project else channels
                if skip_out != body_out:
                    problems.append(
                        f"block {layer.name!r}: skip path yields {skip_out} channels "
                        f"but body yields {body_out}"
                    )
                channels = layer.out_channels
        return channels

    chain(spec.layers, spec.in_channels, "")
    for tap in spec.taps:
        if tap not in names:
            problems.append(f"tap {tap!r} names no layer")
    return problems


def build_network(spec: NetworkSpec) -> Network:
    problems = validate_network(spec)
    if problems:
        raise ValidationError(problems)
    return Network(spec)


# ---------------------------------------------------------------------------
# weight stores


@dataclass
class WeightStore:
    entries: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    def put(self, name: str, values: np.ndarray) -> None:
        self.entries[name] = np.ascontiguousarray(values, dtype=np.float32)

    def validate_for(self, net: Network) -> list[str]:
        problems = []
        for layer, (wshape, bshape) in net.weight_shapes.items():
            for suffix, shape in (("weight", wshape), ("bias", bshape)):
                key = f"{layer}.{suffix}"
                if key not in self.entries:
                    problems.append(f"missing entry {key!r}")
                elif self.entries[key].shape != shape:
                    problems.append(
                        f"entry {key!r} has shape {self.entries[key].shape}, "
                        f"expected {shape}"
                    )
        return problems

    def as_tensors(self, requires_grad: bool = False) -> dict[str, T.Tensor]:
        out = {}
        for key, arr in self.entries.items():
            if arr.ndim == 1:
                arr = arr.reshape(1, arr.shape[0], 1, 1)
            out[key] = T.Tensor(arr, requires_grad=requires_grad)
        return out


def save_weights(store: WeightStore, path) -> None:
    """Serialize to NSTW; writes are atomic (temp file + rename)."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", FORMAT_VERSION))
    meta_lines = []
    for key, value in store.metadata.items():
        if "\n" in key or "\n" in value or "=" in key:
            raise WeightFormatError(f"metadata key/value not encodable: {key!r}")
        meta_lines.append(f"{key}={value}")
    blob = "\n".join(meta_lines).encode("utf-8")
    if len(blob) > 0xFFFF:
        raise WeightFormatError("metadata blob exceeds 64 KiB")
    buf.write(struct.pack("<H", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(store.entries)))
    for name, arr in store.entries.items():
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise WeightFormatError(f"entry name too long: {name!r}")
        if arr.ndim < 1 or arr.ndim > 4:
            raise EntrySizeError(f"entry {name!r} has unsupported rank {arr.ndim}")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        for extent in arr.shape:
            buf.write(struct.pack("<I", extent))
        data = np.ascontiguousarray(arr, dtype=np.float32)
        if not data.size:
            raise EntrySizeError(f"entry {name!r} is empty")
        buf.write(data.astype("<f4", copy=False).tobytes())
    payload = buf.getvalue()
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".nstw.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncatedFileError(f"file ends inside {what}")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self, what):
        return struct.unpack("<B", self.take(1, what))[0]

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def load_weights(path) -> WeightStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u16("version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version}, expected {FORMAT_VERSION}")
    meta_len = r.u16("metadata length")
    meta_blob = r.take(meta_len, "metadata").decode("utf-8")
    metadata: dict[str, str] = {}
    if meta_blob:
        for line in meta_blob.split("\n"):
            key, sep, value = line.partition("=")
            if not sep:
                raise WeightFormatError(f"malformed metadata line {line!r}")
            metadata[key] = value
    count = r.u32("entry count")
    entries: dict[str, np.ndarray] = {}
    for i in range(count):
        name_len = r.u16(f"entry {i} name length")
        name = r.take(name_len, f"entry {i} name").decode("utf-8")
        rank = r.u8(f"entry {name!r} rank")
        if rank < 1 or rank > 4:
            raise EntrySizeError(f"entry {name!r} declares unsupported rank {rank}")
        shape = tuple(r.u32(f"entry {name!r} extent") for _ in range(rank))
        size = 1
        for extent in shape:
            if extent == 0:
                raise EntrySizeError(f"entry {name!r} declares a zero extent")
            size *= extent
        raw = r.take(4 * size, f"entry {name!r} values")
        values = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)
        if name in entries:
            raise WeightFormatError(f"duplicate entry {name!r}")
        entries[name] = values
    if r.pos != len(blob):
        raise WeightFormatError(f"{len(blob) - r.pos} trailing bytes after last entry")
    return WeightStore(entries=entries, metadata=metadata)


# ---------------------------------------------------------------------------
# forward execution

FeatureBundle = dict[str, T.Tensor]


def _resolve_weights(weights, requires_grad=False) -> dict[str, T.Tensor]:
    if isinstance(weights, WeightStore):
        return weights.as_tensors(requires_grad=requires_grad)
    return weights


def _apply_layer(layer: LayerSpec, x: T.Tensor, wt: dict[str, T.Tensor],
                 taps: dict[str, T.Tensor], wanted) -> T.Tensor:
    if layer.kind == "conv":
        try:
            w = wt[f"{layer.name}.weight"]
            b = wt[f"{layer.name}.bias"]
        except KeyError as exc:
            raise WeightError(f"no weights for conv layer {layer.name!r}") from exc
        try:
            out = T.conv2d(x, w, b, stride=layer.stride, padding=layer.padding)
        except Exception as exc:
            raise type(exc)(f"layer {layer.name!r}: {exc}") from exc
    elif layer.kind == "relu":
        out = T.relu(x)
    elif layer.kind in ("pool-max", "pool-avg"):
        kind = "max" if layer.kind == "pool-max" else "average"
        try:
            out = T.pool2d(x, kind, layer.window, layer.stride)
        except Exception as exc:
            raise type(exc)(f"layer {layer.name!r}: {exc}") from exc
    elif layer.kind == "residual-block":
        body = x
        for inner in layer.body:
            body = _apply_layer(inner, body, wt, taps, wanted)
        if layer.project:
            pname = _proj_name(layer)
            try:
                w = wt[f"{pname}.weight"]
                b = wt[f"{pname}.bias"]
            except KeyError as exc:
                raise WeightError(f"no weights for projection {pname!r}") from exc
            skip = T.conv2d(x, w, b, stride=layer.stride, padding=0)
        else:
            skip = x
        if skip.shape != body.shape:
            raise WeightError(
                f"block {layer.name!r}: skip shape {skip.shape} != body shape {body.shape}"
            )
        out = T.relu(T.residual_add(body, skip))
    else:  # pragma: no cover - validation rejects unknown kinds
        raise ValidationError([f"unknown layer kind {layer.kind!r}"])
    if layer.name in wanted:
        taps[layer.name] = out
    return out


def forward(net: Network, weights, x: T.Tensor, record_tape: bool = False) -> T.Tensor:
    """Run the whole chain and return the final activation."""
    wt = _resolve_weights(weights)
    if not record_tape and x.requires_grad:
        x = x.detach()
    taps: dict[str, T.Tensor] = {}
    cur = x
    for layer in net.spec.layers:
        cur = _apply_layer(layer, cur, wt, taps, frozenset())
    return cur


def forward_with_taps(net: Network, weights, x: T.Tensor,
                      record_tape: bool = False) -> FeatureBundle:
    """Run the chain, capturing the activations named by the network's taps."""
    wt = _resolve_weights(weights)
    if not record_tape and x.requires_grad:
        x = x.detach()
    wanted = frozenset(net.spec.taps)
    taps: dict[str, T.Tensor] = {}
    cur = x
    for layer in net.spec.layers:
        cur = _apply_layer(layer, cur, wt, taps, wanted)
    missing = wanted - taps.keys()
    if missing:  # pragma: no cover - validation guarantees taps exist
        raise ValidationError([f"tap {t!r} was never produced" for t in sorted(missing)])
    return taps


# ---------------------------------------------------------------------------
# built-in specs

_VGG19_PLAN = (
    (1, 2, 64),
    (2, 2, 128),
    (3, 4, 256),
    (4, 4, 512),
    (5, 4, 512),
)

_VGG16_PLAN = (
    (1, 2, 64),
    (2, 2, 128),
    (3, 3, 256),
    (4, 3, 512),
    (5, 3, 512),
)


def _vgg_features(name: str, plan) -> NetworkSpec:
    layers: list[LayerSpec] = []
    cin = 3
    for block, nconvs, width in plan:
        for i in range(1, nconvs + 1):
            layers.append(conv(f"conv{block}_{i}", cin, width, kernel=3, stride=1, padding=1))
            layers.append(relu(f"relu{block}_{i}"))
            cin = width
        layers.append(pool(f"pool{block}", "pool-max", 2, 2))
    taps = tuple(f"conv{b}_1" for b in range(1, 6)) + tuple(
        f"relu{b}_1" for b in range(1, 6)
    ) + ("conv4_2",)
    return NetworkSpec(name, tuple(layers), taps=taps, role="encoder")


def vgg19_features() -> NetworkSpec:
    """The 16-conv feature stack of VGG-19 with max pooling."""
    return _vgg_features("vgg19-features", _VGG19_PLAN)


def vgg16_features() -> NetworkSpec:
    """The 13-conv feature stack of VGG-16 with max pooling."""
    return _vgg_features("vgg16-features", _VGG16_PLAN)


def resnet_small() -> NetworkSpec:
    """3-stage residual network (stages conv2_x/conv3_x/conv4_x, 2 blocks each)."""
    layers = [
        conv("conv1", 3, 16, kernel=3, stride=1, padding=1),
        relu("relu1"),
        residual_block("conv2_x_1", 16, 16),
        residual_block("conv2_x_2", 16, 16),
        residual_block("conv3_x_1", 16, 32, stride=2),
        residual_block("conv3_x_2", 32, 32),
        residual_block("conv4_x_1", 32, 64, stride=2),
        residual_block("conv4_x_2", 64, 64),
    ]
    taps = ("relu1", "conv2_x_1", "conv2_x_2", "conv3_x_1", "conv3_x_2",
            "conv4_x_1", "conv4_x_2")
    return NetworkSpec("resnet-small", tuple(layers), taps=taps, role="encoder")


def vgg_tiny() -> NetworkSpec:
    """Pool-free three-conv encoder used for desk-scale experiments."""
    layers = [
        conv("conv1", 3, 8), relu("relu1"),
        conv("conv2", 8, 16), relu("relu2"),
        conv("conv3", 16, 32), relu("relu3"),
    ]
    return NetworkSpec("vgg-tiny", tuple(layers),
                       taps=("conv1", "relu1", "conv2", "relu2", "conv3", "relu3"),
                       role="encoder")


def vgg_tiny_decoder() -> NetworkSpec:
    """Mirror of ``vgg_tiny``: maps 32-channel features back to RGB."""
    layers = [
        conv("dec1", 32, 16), relu("drelu1"),
        conv("dec2", 16, 8), relu("drelu2"),
        conv("dec3", 8, 3),
    ]
    return NetworkSpec("vgg-tiny-decoder", tuple(layers), taps=(),
                       role="decoder", in_channels=32)


def fast_transform_net() -> NetworkSpec:
    """Toy image transformation network: 3 convs, 2 residual blocks, output conv."""
    layers = [
        conv("t1", 3, 16), relu("trelu1"),
        conv("t2", 16, 16), relu("trelu2"),
        conv("t3", 16, 16), relu("trelu3"),
        residual_block("tr1", 16, 16),
        residual_block("tr2", 16, 16),
        conv("tout", 16, 3),
    ]
    return NetworkSpec("fast-toy", tuple(layers), taps=(), role="transformer")


BUILTIN_NETWORKS = {
    "vgg19-features": vgg19_features,
    "vgg16-features": vgg16_features,
    "resnet-small": resnet_small,
    "vgg-tiny": vgg_tiny,
    "vgg-tiny-decoder": vgg_tiny_decoder,
    "fast-toy": fast_transform_net,
}


def get_network(name: str) -> Network:
    try:
        spec = BUILTIN_NETWORKS[name]()
    except KeyError:
        known = ", ".join(sorted(BUILTIN_NETWORKS))
        raise ValidationError([f"unknown network {name!r} (known: {known})"]) from None
    return build_network(spec)
