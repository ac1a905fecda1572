"""Source models, layer-name mapping, and batch-norm folding.

Each builder returns ``(module, conv_map, tap_map, source_tag)`` where
``conv_map`` maps engine layer names to (conv module, optional BN module)
pairs and ``tap_map`` maps engine tap names to the torch module whose
output realizes that tap.
"""

from __future__ import annotations

import torch
from torch import nn

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

MODEL_IDS = ("vgg16", "vgg19", "resnet-small")


def _seeded_conv_init(module: nn.Module, seed: int) -> None:
    """Deterministic He init with positive biases, used when pretrained
    checkpoints are unreachable. Positive biases keep tap means away from
    zero so relative checksum comparisons stay well conditioned."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            std = (2.0 / fan_in) ** 0.5
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * std)
                if m.bias is not None:
                    m.bias.copy_(torch.rand(m.bias.shape, generator=gen) * 0.1 + 0.05)
        elif isinstance(m, nn.BatchNorm2d):
            with torch.no_grad():
                m.weight.copy_(torch.rand(m.weight.shape, generator=gen) * 0.4 + 0.8)
                m.bias.copy_(torch.rand(m.bias.shape, generator=gen) * 0.2 - 0.1)
                m.running_mean.copy_(torch.rand(m.running_mean.shape, generator=gen) * 0.2 - 0.1)
                m.running_var.copy_(torch.rand(m.running_var.shape, generator=gen) + 0.5)


def _build_vgg(arch: str, seed: int):
    from torchvision import models

    ctor = models.vgg19 if arch == "vgg19" else models.vgg16
    weights_enum = (models.VGG19_Weights.IMAGENET1K_V1 if arch == "vgg19"
                    else models.VGG16_Weights.IMAGENET1K_V1)
    try:
        net = ctor(weights=weights_enum)
        source = f"torchvision-pretrained:{arch}"
    except Exception:
        net = ctor(weights=None)
        _seeded_conv_init(net, seed)
        source = f"torchvision-seeded:{arch}:seed={seed}"
    features = net.features.eval()

    conv_map: dict[str, tuple[nn.Conv2d, None]] = {}
    tap_map: dict[str, nn.Module] = {}
    block, idx = 1, 1
    last_conv_name = None
    for module in features:
        if isinstance(module, nn.Conv2d):
            name = f"conv{block}_{idx}"
            conv_map[name] = (module, None)
            tap_map[name] = module
            last_conv_name = name
            idx += 1
        elif isinstance(module, nn.ReLU):
            module.inplace = False  # hooks need the pre-overwrite outputs
            if last_conv_name:
                tap_map[last_conv_name.replace("conv", "relu")] = module
        elif isinstance(module, nn.MaxPool2d):
            block += 1
            idx = 1
    # checksum taps: the canonical style-transfer tap set the engine records
    canonical = {f"conv{b}_1" for b in range(1, 6)}
    canonical |= {f"relu{b}_1" for b in range(1, 6)}
    canonical.add("conv4_2")
    tap_map = {name: m for name, m in tap_map.items() if name in canonical}
    return features, conv_map, tap_map, source


class _ResBlock(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        if cin != cout or stride != 1:
            self.proj = nn.Conv2d(cin, cout, 1, stride=stride, bias=False)
            self.bnp = nn.BatchNorm2d(cout)
        else:
            self.proj = None
            self.bnp = None

    def forward(self, x):
        body = self.bn2(self.conv2(torch.relu(self.bn1(self.conv1(x)))))
        skip = self.bnp(self.proj(x)) if self.proj is not None else x
        return torch.relu(body + skip)


class _ResNetSmall(nn.Module):
    PLAN = (("conv2_x_1", 16, 16, 1), ("conv2_x_2", 16, 16, 1),
            ("conv3_x_1", 16, 32, 2), ("conv3_x_2", 32, 32, 1),
            ("conv4_x_1", 32, 64, 2), ("conv4_x_2", 64, 64, 1))

    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 16, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(16)
        self.blocks = nn.ModuleDict(
            {name: _ResBlock(cin, cout, stride) for name, cin, cout, stride in self.PLAN}
        )
        self.stem_relu = nn.Identity()  # hook point for the relu1 tap

    def forward(self, x):
        x = self.stem_relu(torch.relu(self.bn1(self.conv1(x))))
        for name, *_ in self.PLAN:
            x = self.blocks[name](x)
        return x


def _build_resnet_small(seed: int):
    net = _ResNetSmall()
    _seeded_conv_init(net, seed)
    net.eval()
    source = f"torch-seeded:resnet-small:seed={seed}"

    conv_map = {"conv1": (net.conv1, net.bn1)}
    tap_map: dict[str, nn.Module] = {"relu1": net.stem_relu}
    for name, *_ in _ResNetSmall.PLAN:
        block = net.blocks[name]
        conv_map[f"{name}.conv1"] = (block.conv1, block.bn1)
        conv_map[f"{name}.conv2"] = (block.conv2, block.bn2)
        if block.proj is not None:
            conv_map[f"{name}.proj"] = (block.proj, block.bnp)
        tap_map[name] = block
    return net, conv_map, tap_map, source


def build_model(model_id: str, seed: int = 0):
    if model_id in ("vgg16", "vgg19"):
        return _build_vgg(model_id, seed)
    if model_id == "resnet-small":
        return _build_resnet_small(seed)
    raise ValueError(f"unknown model id {model_id!r} (known: {', '.join(MODEL_IDS)})")


def fold_batch_norm(conv: nn.Conv2d, bn: nn.BatchNorm2d | None):
    """Fold a following batch norm into the conv's weight and bias.

    y = gamma * (conv(x) - mu) / sqrt(var + eps) + beta collapses to a
    plain convolution with scaled weights and shifted bias.
    """
    weight = conv.weight.detach().clone()
    if conv.bias is not None:
        bias = conv.bias.detach().clone()
    else:
        bias = torch.zeros(conv.out_channels, dtype=weight.dtype)
    if bn is None:
        return weight, bias
    gamma = bn.weight.detach()
    beta = bn.bias.detach()
    mu = bn.running_mean.detach()
    var = bn.running_var.detach()
    scale = gamma / torch.sqrt(var + bn.eps)
    weight = weight * scale.reshape(-1, 1, 1, 1)
    bias = (bias - mu) * scale + beta
    return weight, bias


ENGINE_NETWORK_FOR = {
    "vgg16": "vgg16-features",
    "vgg19": "vgg19-features",
    "resnet-small": "resnet-small",
}
