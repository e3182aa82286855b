"""VGG16, ResNet18 and DenseNet121 builders with a 2-class head.

Channel counts follow the reference architectures scaled by a width
multiplier (rounded half-up, floor 1) so the same graphs can run at desk
scale for gradient checks and synthetic experiments. Grayscale inputs are
replicated to 3 channels by the data pipeline, so ImageNet-shaped weights
remain loadable.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .nn import (AdaptiveAvgPool2d, BatchNorm2d, Conv2d, Dropout, Flatten,
                 GlobalAvgPool, Linear, MaxPool2d, Module, ReLU, Sequential)

FAMILIES = ("vgg16", "resnet18", "densenet121")

VGG16_STACKS = ((64, 2), (128, 2), (256, 3), (512, 3), (512, 3))
RESNET18_STAGES = (64, 128, 256, 512)
DENSENET121_BLOCKS = (6, 12, 24, 16)
DENSENET_GROWTH = 32
DENSENET_BOTTLENECK = 4


@dataclass
class ModelSpec:
    family: str
    num_classes: int = 2
    width_multiplier: float = 1.0
    input_channels: int = 3

    def validate(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}; choose from {FAMILIES}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not (0.0 < self.width_multiplier <= 1.0):
            raise ConfigError(f"width_multiplier must be in (0, 1], got {self.width_multiplier}")
        if self.input_channels < 1:
            raise ConfigError(f"input_channels must be >= 1, got {self.input_channels}")
        return self


def scale_channels(base, width_multiplier):
    """Round half-up with a floor of one channel."""
    return max(1, int(base * width_multiplier + 0.5))


class VGG16(Module):
    """13 conv layers in five stacks, then a 3-layer fully connected head."""

    def __init__(self, spec, rng):
        super().__init__()
        self.spec = spec
        s = lambda c: scale_channels(c, spec.width_multiplier)
        layers = []
        in_ch = spec.input_channels
        for base, count in VGG16_STACKS:
            for _ in range(count):
                layers.append(Conv2d(in_ch, s(base), 3, rng, stride=1, padding=1))
                layers.append(ReLU())
                in_ch = s(base)
            layers.append(MaxPool2d(2, 2))
        self.features = Sequential(layers)
        self.pool = AdaptiveAvgPool2d(7, 7)
        self.flatten = Flatten()
        fc = s(4096)
        self.classifier = Sequential([
            Linear(in_ch * 7 * 7, fc, rng), ReLU(), Dropout(0.5),
            Linear(fc, fc, rng), ReLU(), Dropout(0.5),
            Linear(fc, spec.num_classes, rng),
        ])

    def forward(self, x):
        return self.classifier(self.flatten(self.pool(self.features(x))))


class BasicBlock(Module):
    """Two 3x3 conv-BN pairs plus the additive shortcut: relu(F(x) + x)."""

    def __init__(self, in_channels, out_channels, stride, rng):
        super().__init__()
        self.stride = stride
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng, stride=stride, padding=1, bias=False)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng, stride=1, padding=1, bias=False)
        self.bn2 = BatchNorm2d(out_channels)
        self.has_projection = stride != 1 or in_channels != out_channels
        if self.has_projection:
            self.proj_conv = Conv2d(in_channels, out_channels, 1, rng, stride=stride, bias=False)
            self.proj_bn = BatchNorm2d(out_channels)

    def shortcut(self, x):
        if self.has_projection:
            return self.proj_bn(self.proj_conv(x))
        return x

    def forward(self, x):
        branch = self.bn2(self.conv2(T.relu(self.bn1(self.conv1(x)))))
        return T.relu(T.add(branch, self.shortcut(x)))


class ResNet18(Module):
    def __init__(self, spec, rng):
        super().__init__()
        self.spec = spec
        s = lambda c: scale_channels(c, spec.width_multiplier)
        self.conv1 = Conv2d(spec.input_channels, s(64), 7, rng, stride=2, padding=3, bias=False)
        self.bn1 = BatchNorm2d(s(64))
        self.maxpool = MaxPool2d(3, 2)
        in_ch = s(64)
        for i, base in enumerate(RESNET18_STAGES):
            out_ch = s(base)
            stride = 1 if i == 0 else 2
            stage = Sequential([
                BasicBlock(in_ch, out_ch, stride, rng),
                BasicBlock(out_ch, out_ch, 1, rng),
            ])
            setattr(self, f"layer{i + 1}", stage)
            in_ch = out_ch
        self.avgpool = GlobalAvgPool()
        self.flatten = Flatten()
        self.fc = Linear(in_ch, spec.num_classes, rng)

    def forward(self, x):
        x = self.maxpool(T.relu(self.bn1(self.conv1(x))))
        for i in range(1, 5):
            x = getattr(self, f"layer{i}")(x)
        return self.fc(self.flatten(self.avgpool(x)))


class DenseLayer(Module):
    """Bottleneck layer: BN-ReLU-1x1(bf*k) then BN-ReLU-3x3(k)."""

    def __init__(self, in_channels, growth, bottleneck_factor, rng):
        super().__init__()
        mid = bottleneck_factor * growth
        self.bn1 = BatchNorm2d(in_channels)
        self.conv1 = Conv2d(in_channels, mid, 1, rng, bias=False)
        self.bn2 = BatchNorm2d(mid)
        self.conv2 = Conv2d(mid, growth, 3, rng, padding=1, bias=False)

    def forward(self, x):
        x = self.conv1(T.relu(self.bn1(x)))
        return self.conv2(T.relu(self.bn2(x)))


class DenseBlock(Module):
    """Each layer consumes the channel-concat of the input and every prior
    layer output; the j-th layer therefore receives j concatenated inputs."""

    def __init__(self, num_layers, in_channels, growth, bottleneck_factor, rng):
        super().__init__()
        self.num_layers = num_layers
        self.out_channels = in_channels + num_layers * growth
        for j in range(num_layers):
            setattr(self, f"layer{j}",
                    DenseLayer(in_channels + j * growth, growth, bottleneck_factor, rng))
        self.last_input_arities = []

    def connection_count(self):
        return self.num_layers * (self.num_layers + 1) // 2

    def forward(self, x):
        feats = [x]
        arities = []
        for j in range(self.num_layers):
            arities.append(len(feats))
            inp = T.concat_channels(feats) if len(feats) > 1 else feats[0]
            feats.append(getattr(self, f"layer{j}")(inp))
        self.last_input_arities = arities
        return T.concat_channels(feats)


class Transition(Module):
    """BN-ReLU-1x1 halving the channels, then 2x halving average pool."""

    def __init__(self, in_channels, rng):
        super().__init__()
        self.out_channels = max(1, in_channels // 2)
        self.bn = BatchNorm2d(in_channels)
        self.conv = Conv2d(in_channels, self.out_channels, 1, rng, bias=False)

    def forward(self, x):
        x = self.conv(T.relu(self.bn(x)))
        h, w = x.shape[2], x.shape[3]
        return T.adaptive_avgpool(x, max(1, h // 2), max(1, w // 2))


class DenseNet121(Module):
    def __init__(self, spec, rng):
        super().__init__()
        self.spec = spec
        s = lambda c: scale_channels(c, spec.width_multiplier)
        growth = s(DENSENET_GROWTH)
        ch = s(64)
        self.conv1 = Conv2d(spec.input_channels, ch, 7, rng, stride=2, padding=3, bias=False)
        self.bn1 = BatchNorm2d(ch)
        self.maxpool = MaxPool2d(3, 2)
        for i, num_layers in enumerate(DENSENET121_BLOCKS):
            block = DenseBlock(num_layers, ch, growth, DENSENET_BOTTLENECK, rng)
            setattr(self, f"block{i + 1}", block)
            ch = block.out_channels
            if i < len(DENSENET121_BLOCKS) - 1:
                trans = Transition(ch, rng)
                setattr(self, f"transition{i + 1}", trans)
                ch = trans.out_channels
        self.bn_final = BatchNorm2d(ch)
        self.avgpool = GlobalAvgPool()
        self.flatten = Flatten()
        self.classifier = Linear(ch, spec.num_classes, rng)

    def forward(self, x):
        x = self.maxpool(T.relu(self.bn1(self.conv1(x))))
        for i in range(1, 5):
            x = getattr(self, f"block{i}")(x)
            if i < 4:
                x = getattr(self, f"transition{i}")(x)
        x = T.relu(self.bn_final(x))
        return self.classifier(self.flatten(self.avgpool(x)))


_BUILDERS = {"vgg16": VGG16, "resnet18": ResNet18, "densenet121": DenseNet121}


def build_model(spec, seed=0):
    """Construct a model from its spec with seeded initialization."""
    spec.validate()
    rng = np.random.default_rng(seed)
    model = _BUILDERS[spec.family](spec, rng)
    model.assign_names()
    return model


def build_vgg16(spec, seed=0):
    if spec.family != "vgg16":
        raise ConfigError(f"build_vgg16 got family {spec.family!r}")
    return build_model(spec, seed)


def build_resnet18(spec, seed=0):
    if spec.family != "resnet18":
        raise ConfigError(f"build_resnet18 got family {spec.family!r}")
    return build_model(spec, seed)


def build_densenet121(spec, seed=0):
    if spec.family != "densenet121":
        raise ConfigError(f"build_densenet121 got family {spec.family!r}")
    return build_model(spec, seed)


def _last_linear(model):
    found = None
    for mod in model.modules():
        for attr, child in mod._modules.items():
            if isinstance(child, Linear):
                found = (mod, attr, child)
    if found is None:
        raise ConfigError("model has no linear layer to replace")
    return found


def replace_head(model, num_classes, seed=0):
    """Swap the final linear layer for a fresh one; everything else untouched."""
    parent, attr, old = _last_linear(model)
    rng = np.random.default_rng(seed)
    setattr(parent, attr, Linear(old.in_features, num_classes, rng))
    if hasattr(model, "spec"):
        model.spec = replace(model.spec, num_classes=num_classes)
    model.assign_names()
    return model


def head_parameter_names(model):
    parent, attr, head = _last_linear(model)
    return [name for name, p in model.named_parameters()
            if p is head.weight or (head.bias is not None and p is head.bias)]


def count_params(model):
    """Total trainable element count (running statistics are buffers, not counted)."""
    return sum(p.data.size for p in model.parameters())


def set_trainable(model, policy):
    """Mark parameters for the optimizer: 'all' or 'head_only'."""
    if policy not in ("all", "head_only"):
        raise ConfigError(f"finetune policy must be 'all' or 'head_only', got {policy!r}")
    head_names = set(head_parameter_names(model))
    for name, p in model.named_parameters():
        p.trainable = policy == "all" or name in head_names
    return model


def layer_census(model):
    """Count conv and linear layers (the paper's 13 + 3 for VGG16)."""
    conv = sum(1 for m in model.modules() if isinstance(m, Conv2d))
    fc = sum(1 for m in model.modules() if isinstance(m, Linear))
    return {"conv": conv, "fc": fc}
