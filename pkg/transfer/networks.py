import torch
import torch.nn as nn


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class ResidualGenerator(nn.Module):
    """
    残差编码-解码生成器，输出 clamp(x + residual(x), −1, 1)。
    identity_init 时残差输出层权重清零，初始映射为恒等。
    """

    def __init__(self, base_channels: int = 16, residual_blocks: int = 3, identity_init: bool = False):
        super().__init__()
        layers = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(3, base_channels, 7),
            nn.InstanceNorm2d(base_channels),
            nn.ReLU(inplace=True),
        ]
        channels = base_channels
        for _ in range(2):
            layers += [
                nn.Conv2d(channels, channels * 2, 3, stride=2, padding=1),
                nn.InstanceNorm2d(channels * 2),
                nn.ReLU(inplace=True),
            ]
            channels *= 2
        layers += [ResidualBlock(channels) for _ in range(residual_blocks)]
        for _ in range(2):
            layers += [
                nn.ConvTranspose2d(channels, channels // 2, 3, stride=2, padding=1, output_padding=1),
                nn.InstanceNorm2d(channels // 2),
                nn.ReLU(inplace=True),
            ]
            channels //= 2
        self.body = nn.Sequential(*layers)
        self.head = nn.Sequential(nn.ReflectionPad2d(3), nn.Conv2d(channels, 3, 7))
        if identity_init:
            nn.init.zeros_(self.head[1].weight)
            nn.init.zeros_(self.head[1].bias)

    def forward(self, x):
        return torch.clamp(x + self.head(self.body(x)), -1.0, 1.0)


class PatchDiscriminator(nn.Module):
    """逐区域真伪判别器，输出 (0,1) 内的得分图"""

    def __init__(self, disc_channels: int = 16):
        super().__init__()

        def block(in_filters, out_filters, stride, normalize=True):
            layers = [nn.Conv2d(in_filters, out_filters, 4, stride=stride, padding=1)]
            if normalize:
                layers.append(nn.InstanceNorm2d(out_filters))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            return layers

        c = disc_channels
        self.model = nn.Sequential(
            *block(3, c, 2, normalize=False),
            *block(c, c * 2, 2),
            *block(c * 2, c * 4, 1),
            nn.Conv2d(c * 4, 1, 4, padding=1),
            nn.Sigmoid(),
        )

    def forward(self, x):
        return self.model(x)
