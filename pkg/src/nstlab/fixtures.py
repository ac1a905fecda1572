"""Bundled procedural images and seeded fixture weights.

Everything here is deterministic, so experiments, tests and the CLI can run
without any external downloads: images come from closed-form patterns plus
seeded noise, weights from seeded He-style initialization.
"""

from __future__ import annotations

import os

import numpy as np

from .images import ImageBuffer, PreprocessSpec, save_image
from .network import Network, WeightStore, get_network

DEFAULT_PREPROCESS = PreprocessSpec(scale_to_unit=True, mean=(0.5, 0.5, 0.5),
                                    std=(0.5, 0.5, 0.5))


def _grid(size: int):
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    return ys / (size - 1), xs / (size - 1)


def _to_buffer(r, g, b) -> ImageBuffer:
    stack = np.stack([r, g, b], axis=-1)
    arr = np.clip(np.rint(stack * 255.0), 0, 255).astype(np.uint8)
    return ImageBuffer.from_array(arr)


def _smooth_noise(size: int, seed: int, passes: int = 3) -> np.ndarray:
    rng = np.random.default_rng(seed)
    field = rng.random((size, size))
    for _ in range(passes):
        field = (field + np.roll(field, 1, 0) + np.roll(field, -1, 0)
                 + np.roll(field, 1, 1) + np.roll(field, -1, 1)) / 5.0
    lo, hi = field.min(), field.max()
    return (field - lo) / max(hi - lo, 1e-9)


# -- content-like images (smooth, scene-ish) --------------------------------


def _content_disks(size: int) -> ImageBuffer:
    y, x = _grid(size)
    sky = 0.75 - 0.35 * y
    disk1 = np.exp(-(((x - 0.3) ** 2 + (y - 0.35) ** 2) / 0.02))
    disk2 = np.exp(-(((x - 0.7) ** 2 + (y - 0.6) ** 2) / 0.04))
    r = sky + 0.5 * disk1
    g = sky * 0.9 + 0.4 * disk2
    b = sky * 1.1 - 0.2 * disk2
    return _to_buffer(np.clip(r, 0, 1), np.clip(g, 0, 1), np.clip(b, 0, 1))


def _content_horizon(size: int) -> ImageBuffer:
    y, x = _grid(size)
    horizon = y > 0.55
    r = np.where(horizon, 0.35 + 0.2 * (1 - y), 0.55 + 0.3 * x * (1 - y))
    g = np.where(horizon, 0.5 - 0.2 * y, 0.65 - 0.3 * y)
    b = np.where(horizon, 0.25, 0.85 - 0.4 * y)
    sun = np.exp(-(((x - 0.75) ** 2 + (y - 0.25) ** 2) / 0.01))
    return _to_buffer(np.clip(r + sun, 0, 1), np.clip(g + 0.8 * sun, 0, 1),
                      np.clip(b + 0.3 * sun, 0, 1))


def _content_blobs(size: int) -> ImageBuffer:
    y, x = _grid(size)
    base = 0.4 + 0.2 * np.sin(2.2 * np.pi * x) * np.sin(1.7 * np.pi * y)
    blob = _smooth_noise(size, seed=11, passes=5)
    r = 0.6 * base + 0.4 * blob
    g = 0.5 * base + 0.3 * (1 - blob)
    b = 0.45 + 0.3 * blob * base
    return _to_buffer(np.clip(r, 0, 1), np.clip(g, 0, 1), np.clip(b, 0, 1))


def _content_square(size: int) -> ImageBuffer:
    y, x = _grid(size)
    bg = 0.3 + 0.5 * x
    inside = ((x > 0.3) & (x < 0.7) & (y > 0.3) & (y < 0.7)).astype(np.float64)
    r = bg * (1 - inside) + 0.85 * inside
    g = bg * (1 - inside) + 0.35 * inside
    b = (0.9 - 0.5 * y) * (1 - inside) + 0.3 * inside
    return _to_buffer(np.clip(r, 0, 1), np.clip(g, 0, 1), np.clip(b, 0, 1))


# -- style-like images (strong repeating texture) ----------------------------


def _style_checker(size: int) -> ImageBuffer:
    y, x = _grid(size)
    cells = 8
    cx = np.floor(x * cells).astype(int)
    cy = np.floor(y * cells).astype(int)
    par = (cx + cy) % 2
    r = np.where(par, 0.9, 0.1)
    g = np.where(par, 0.2, 0.7)
    b = np.where(par, 0.15, 0.9)
    return _to_buffer(r, g, b)


def _style_waves(size: int) -> ImageBuffer:
    y, x = _grid(size)
    rings = 0.5 + 0.5 * np.sin(24.0 * np.sqrt((x - 0.5) ** 2 + (y - 0.5) ** 2) * np.pi)
    swirl = 0.5 + 0.5 * np.sin(10 * np.pi * (x + y))
    return _to_buffer(rings, swirl, 1.0 - rings)


def _style_stripes(size: int) -> ImageBuffer:
    y, x = _grid(size)
    s = 0.5 + 0.5 * np.sign(np.sin(14.0 * np.pi * (x - y)))
    t = 0.5 + 0.5 * np.sin(28.0 * np.pi * (x + 0.5 * y))
    return _to_buffer(s, 0.3 + 0.4 * t, 1.0 - s * t)


def _style_marble(size: int) -> ImageBuffer:
    noise = _smooth_noise(size, seed=23, passes=2)
    veins = 0.5 + 0.5 * np.sin(18.0 * np.pi * noise)
    r = veins
    g = 0.4 + 0.5 * veins * noise
    b = 0.8 - 0.6 * noise
    return _to_buffer(r, g, b)


def corpus_images(size: int = 64) -> list[ImageBuffer]:
    """The bundled 8-image training corpus."""
    y, x = _grid(size)
    extra1 = _to_buffer(x, 1 - y, 0.5 + 0.0 * x)
    rings = 0.5 + 0.5 * np.cos(12 * np.pi * np.sqrt((x - 0.4) ** 2 + (y - 0.6) ** 2))
    extra2 = _to_buffer(rings, rings * x, 1 - rings)
    return [
        _content_disks(size), _content_horizon(size), _content_blobs(size),
        _content_square(size), _style_checker(size), _style_waves(size),
        extra1, extra2,
    ]


def content_style_pairs(size: int = 64) -> list[tuple[ImageBuffer, ImageBuffer]]:
    """Four bundled content/style pairs for the smoothing A/B harness."""
    return [
        (_content_disks(size), _style_checker(size)),
        (_content_horizon(size), _style_waves(size)),
        (_content_blobs(size), _style_stripes(size)),
        (_content_square(size), _style_marble(size)),
    ]


# ---------------------------------------------------------------------------
# weights


# resnet-small uses a sub-He gain plus a heavy-tailed per-output-channel
# scale: the tail makes a few channels dominate each stage's activations
# (the selective, peaky structure the smoothing experiments study) while
# the low gain keeps the activation scale near unity through the skip chain
FIXTURE_GAINS = {
    "vgg19-features": (1.0, 0.0),
    "resnet-small": (0.45, 0.7),
    "vgg-tiny": (1.0, 0.0),
    "vgg-tiny-decoder": (1.0, 0.0),
    "fast-toy": (1.0, 0.0),
}


def fixture_weights(network: str | Network, seed: int = 0,
                    gain: float | None = None,
                    channel_tail: float | None = None) -> WeightStore:
    """Seeded He-normal initialization for any built-in network.

    ``channel_tail`` is the sigma of a log-normal per-output-channel weight
    scale; zero gives plain He initialization.
    """
    net = get_network(network) if isinstance(network, str) else network
    default_gain, default_tail = FIXTURE_GAINS.get(net.name, (1.0, 0.0))
    if gain is None:
        gain = default_gain
    if channel_tail is None:
        channel_tail = default_tail
    rng = np.random.default_rng(seed)
    store = WeightStore(metadata={
        "source": f"fixture:{net.name}:seed={seed}:gain={gain:g}:tail={channel_tail:g}",
        "format.version": "1",
        **DEFAULT_PREPROCESS.to_metadata(),
    })
    for layer, (wshape, bshape) in net.weight_shapes.items():
        fan_in = wshape[1] * wshape[2] * wshape[3]
        std = gain * np.sqrt(2.0 / fan_in)
        w = rng.normal(0.0, std, size=wshape)
        if channel_tail > 0:
            w *= np.exp(rng.normal(0.0, channel_tail, size=(wshape[0], 1, 1, 1)))
        store.put(f"{layer}.weight", w)
        store.put(f"{layer}.bias", np.zeros(bshape))
    return store


def materialize(out_dir: str, size: int = 64) -> dict[str, list[str]]:
    """Write the bundled corpus and pairs as PNG files; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths: dict[str, list[str]] = {"corpus": [], "content": [], "style": []}
    for i, img in enumerate(corpus_images(size)):
        p = os.path.join(out_dir, f"corpus_{i}.png")
        save_image(img, p)
        paths["corpus"].append(p)
    for i, (content, style) in enumerate(content_style_pairs(size)):
        pc = os.path.join(out_dir, f"content_{i}.png")
        ps = os.path.join(out_dir, f"style_{i}.png")
        save_image(content, pc)
        save_image(style, ps)
        paths["content"].append(pc)
        paths["style"].append(ps)
    return paths
