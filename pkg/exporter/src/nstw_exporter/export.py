"""Checkpoint export: mapping, folding, checksums, NSTW emission."""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

from .format import read_nstw, write_nstw
from .models import (
    ENGINE_NETWORK_FOR,
    IMAGENET_MEAN,
    IMAGENET_STD,
    build_model,
    fold_batch_norm,
)


@dataclass
class ExportManifest:
    model_id: str
    source: str
    engine_network: str
    mapping: dict = field(default_factory=dict)  # engine conv name -> source module
    checksums: dict = field(default_factory=dict)  # tap -> {"mean": .., "l2": ..}
    preprocess: dict = field(default_factory=dict)

    def to_metadata(self) -> dict[str, str]:
        meta = {
            "source": self.source,
            "export.model": self.model_id,
            "engine.network": self.engine_network,
            "format.version": "1",
        }
        meta.update(self.preprocess)
        for engine_name in sorted(self.mapping):
            meta[f"map.{engine_name}"] = self.mapping[engine_name]
        for tap in sorted(self.checksums):
            meta[f"checksum.{tap}.mean"] = repr(self.checksums[tap]["mean"])
            meta[f"checksum.{tap}.l2"] = repr(self.checksums[tap]["l2"])
        return meta

    @classmethod
    def from_metadata(cls, metadata: dict[str, str]) -> "ExportManifest":
        manifest = cls(
            model_id=metadata.get("export.model", ""),
            source=metadata.get("source", ""),
            engine_network=metadata.get("engine.network", ""),
            preprocess={k: v for k, v in metadata.items() if k.startswith("preprocess.")},
        )
        for key, value in metadata.items():
            if key.startswith("map."):
                manifest.mapping[key[4:]] = value
            elif key.startswith("checksum."):
                _, tap, kind = key.split(".", 2) if key.count(".") == 2 else (None, None, None)
                if tap is None:
                    _, rest = key.split(".", 1)
                    tap, kind = rest.rsplit(".", 1)
                manifest.checksums.setdefault(tap, {})[kind] = float(value)
        return manifest


def probe_image_path() -> str:
    return str(importlib.resources.files("nstw_exporter").joinpath("data/probe.png"))


def load_probe_tensor() -> torch.Tensor:
    """The bundled 64x64 probe, normalized exactly like the engine will."""
    img = Image.open(probe_image_path()).convert("RGB")
    arr = np.asarray(img, dtype=np.float32) / 255.0
    mean = np.asarray(IMAGENET_MEAN, dtype=np.float32)
    std = np.asarray(IMAGENET_STD, dtype=np.float32)
    arr = (arr - mean) / std
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))[None])


def _module_names(root: torch.nn.Module) -> dict[int, str]:
    return {id(m): name or "<root>" for name, m in root.named_modules()}


def export(model_id: str, out_path, seed: int = 0) -> ExportManifest:
    """Write an NSTW file for ``model_id`` and return its manifest.

    Falls back to a deterministic seeded initialization when the pretrained
    checkpoint cannot be retrieved; the manifest's ``source`` records which
    path was taken. Batch-norm layers are folded into the preceding convs,
    and per-tap activation checksums are recorded from the source model's
    own forward pass on the bundled probe image.
    """
    net, conv_map, tap_map, source = build_model(model_id, seed=seed)
    names = _module_names(net)

    entries: dict[str, np.ndarray] = {}
    mapping: dict[str, str] = {}
    for engine_name, (conv, bn) in conv_map.items():
        weight, bias = fold_batch_norm(conv, bn)
        entries[f"{engine_name}.weight"] = weight.numpy().astype(np.float32)
        entries[f"{engine_name}.bias"] = bias.numpy().astype(np.float32)
        mapping[engine_name] = names.get(id(conv), "?")

    captured: dict[str, torch.Tensor] = {}
    hooks = []
    for tap, module in tap_map.items():
        def make_hook(tap_name):
            def hook(_module, _inputs, output):
                captured[tap_name] = output.detach()
            return hook

        hooks.append(module.register_forward_hook(make_hook(tap)))
    try:
        with torch.no_grad():
            net(load_probe_tensor())
    finally:
        for h in hooks:
            h.remove()

    checksums = {}
    for tap, tensor in captured.items():
        data = tensor.numpy().astype(np.float64)
        checksums[tap] = {
            "mean": float(data.mean()),
            "l2": float(np.sqrt((data ** 2).sum())),
        }

    manifest = ExportManifest(
        model_id=model_id,
        source=source,
        engine_network=ENGINE_NETWORK_FOR[model_id],
        mapping=mapping,
        checksums=checksums,
        preprocess={
            "preprocess.scale": "unit",
            "preprocess.mean": ",".join(f"{v:g}" for v in IMAGENET_MEAN),
            "preprocess.std": ",".join(f"{v:g}" for v in IMAGENET_STD),
        },
    )
    write_nstw(out_path, entries, manifest.to_metadata())
    return manifest


def verify_round_trip(path, entries: dict[str, np.ndarray]) -> list[str]:
    """Bit-compare a written file against in-memory (post-fold) arrays."""
    loaded, _ = read_nstw(path)
    problems = []
    for name, arr in entries.items():
        if name not in loaded:
            problems.append(f"missing entry {name!r}")
        elif loaded[name].tobytes() != np.ascontiguousarray(arr, dtype=np.float32).tobytes():
            problems.append(f"entry {name!r} differs after round trip")
    for name in loaded:
        if name not in entries:
            problems.append(f"unexpected entry {name!r}")
    return problems
