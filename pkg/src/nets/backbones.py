"""
Feature extractors g(φ, ·).

Each backbone exposes `out_dim` (width of the feature vector h) and
`feature_layer()`, the weight tensor of the layer that produces h. That
tensor is where the gradient tangent kernel gradients are taken.
"""

from typing import Sequence

import torch
import torch.nn as nn


class Backbone(nn.Module):
    """Base class for feature extractors."""

    out_dim: int

    def feature_layer(self) -> nn.Parameter:
        raise NotImplementedError


_ACTIVATIONS = {
    'tanh': nn.Tanh,
    'relu': nn.ReLU,
    'identity': nn.Identity,
}


class MLPBackbone(Backbone):
    """
    One hidden layer: h = act(W x + b).

    Together with the linear head this is the 2-layer MLP used for blobs and
    gradient checks. tanh keeps the loss smooth for finite differences.
    """

    def __init__(self, input_shape: Sequence[int], hidden: int = 16, activation: str = 'tanh'):
        super().__init__()
        if activation not in _ACTIVATIONS:
            raise ValueError(f"Unknown activation: {activation}. Options: {list(_ACTIVATIONS)}")
        in_features = 1
        for s in input_shape:
            in_features *= int(s)
        self.flatten = nn.Flatten()
        self.linear = nn.Linear(in_features, hidden)
        self.act = _ACTIVATIONS[activation]()
        self.out_dim = hidden

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.linear(self.flatten(x)))

    def feature_layer(self) -> nn.Parameter:
        return self.linear.weight


class SmallConvNet(Backbone):
    """
    Four 3x3 convolutions with two 2x2 poolings and global average pooling.

    Sized for 28x28 grayscale digits; any spatial size >= 4 works.
    """

    def __init__(self, input_shape: Sequence[int], width: int = 32):
        super().__init__()
        in_channels = int(input_shape[0])
        self.conv1 = nn.Conv2d(in_channels, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)
        self.conv3 = nn.Conv2d(width, 2 * width, 3, padding=1)
        self.conv4 = nn.Conv2d(2 * width, 2 * width, 3, padding=1)
        self.relu = nn.ReLU()
        self.pool = nn.MaxPool2d(2)
        self.gap = nn.AdaptiveAvgPool2d(1)
        self.out_dim = 2 * width

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.relu(self.conv1(x))
        x = self.pool(self.relu(self.conv2(x)))
        x = self.relu(self.conv3(x))
        x = self.pool(self.relu(self.conv4(x)))
        return torch.flatten(self.gap(x), 1)

    def feature_layer(self) -> nn.Parameter:
        return self.conv4.weight


def conv3x3(in_planes: int, out_planes: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_planes, out_planes, kernel_size=3, stride=stride, padding=1, bias=False)


class BasicBlock(nn.Module):
    expansion = 1

    def __init__(self, inplanes: int, planes: int, stride: int = 1):
        super().__init__()
        self.conv1 = conv3x3(inplanes, planes, stride)
        self.bn1 = nn.BatchNorm2d(planes)
        self.relu = nn.ReLU()
        self.conv2 = conv3x3(planes, planes)
        self.bn2 = nn.BatchNorm2d(planes)
        self.downsample = None
        if stride != 1 or inplanes != planes:
            self.downsample = nn.Sequential(
                nn.Conv2d(inplanes, planes, kernel_size=1, stride=stride, bias=False),
                nn.BatchNorm2d(planes),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class ResNet18(Backbone):
    """18-layer residual network with a 3x3 stem (small-image variant)."""

    def __init__(self, input_shape: Sequence[int], base_width: int = 64):
        super().__init__()
        in_channels = int(input_shape[0])
        self.stem = nn.Sequential(
            conv3x3(in_channels, base_width),
            nn.BatchNorm2d(base_width),
            nn.ReLU(),
        )
        widths = [base_width, 2 * base_width, 4 * base_width, 8 * base_width]
        layers = []
        inplanes = base_width
        for i, planes in enumerate(widths):
            stride = 1 if i == 0 else 2
            layers.append(nn.Sequential(BasicBlock(inplanes, planes, stride), BasicBlock(planes, planes)))
            inplanes = planes
        self.layer1, self.layer2, self.layer3, self.layer4 = layers
        self.gap = nn.AdaptiveAvgPool2d(1)
        self.out_dim = widths[-1]

        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode='fan_out', nonlinearity='relu')
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.constant_(m.weight, 1)
                nn.init.constant_(m.bias, 0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.stem(x)
        x = self.layer4(self.layer3(self.layer2(self.layer1(x))))
        return torch.flatten(self.gap(x), 1)

    def feature_layer(self) -> nn.Parameter:
        return self.layer4[-1].conv2.weight


ARCHITECTURES = {
    'mlp': MLPBackbone,
    'small_cnn': SmallConvNet,
    'resnet18': ResNet18,
}
