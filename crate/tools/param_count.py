"""Reference parameter counts for the default generator and discriminator.

Builds both networks as plain torch modules (1-channel in and out) and
checks the counts against closed-form layer arithmetic. The printed values
are frozen in the Rust test suite.

    python3 tools/param_count.py
"""

import torch
from torch import nn
from torch.nn.utils import spectral_norm


class DenseBlock(nn.Module):
    def __init__(self, nf, gc):
        super().__init__()
        self.convs = nn.ModuleList(nn.Conv2d(nf + i * gc, gc if i < 4 else nf, 3, 1, 1) for i in range(5))


class RRDB(nn.Module):
    def __init__(self, nf, gc):
        super().__init__()
        self.rdbs = nn.ModuleList(DenseBlock(nf, gc) for _ in range(3))


class Generator(nn.Module):
    def __init__(self, cin=1, cout=1, nf=64, nb=23, gc=32):
        super().__init__()
        self.conv_first = nn.Conv2d(cin, nf, 3, 1, 1)
        self.body = nn.ModuleList(RRDB(nf, gc) for _ in range(nb))
        self.conv_body = nn.Conv2d(nf, nf, 3, 1, 1)
        self.conv_up1 = nn.Conv2d(nf, nf, 3, 1, 1)
        self.conv_up2 = nn.Conv2d(nf, nf, 3, 1, 1)
        self.conv_hr = nn.Conv2d(nf, nf, 3, 1, 1)
        self.conv_last = nn.Conv2d(nf, cout, 3, 1, 1)


class Discriminator(nn.Module):
    def __init__(self, cin=1, nf=64):
        super().__init__()
        sn = spectral_norm
        self.conv0 = nn.Conv2d(cin, nf, 3, 1, 1)
        self.conv1 = sn(nn.Conv2d(nf, nf * 2, 4, 2, 1, bias=False))
        self.conv2 = sn(nn.Conv2d(nf * 2, nf * 4, 4, 2, 1, bias=False))
        self.conv3 = sn(nn.Conv2d(nf * 4, nf * 8, 4, 2, 1, bias=False))
        self.conv4 = sn(nn.Conv2d(nf * 8, nf * 4, 3, 1, 1, bias=False))
        self.conv5 = sn(nn.Conv2d(nf * 4, nf * 2, 3, 1, 1, bias=False))
        self.conv6 = sn(nn.Conv2d(nf * 2, nf, 3, 1, 1, bias=False))
        self.conv7 = sn(nn.Conv2d(nf, nf, 3, 1, 1, bias=False))
        self.conv8 = sn(nn.Conv2d(nf, nf, 3, 1, 1, bias=False))
        self.conv9 = nn.Conv2d(nf, 1, 3, 1, 1)


def conv(cin, cout, k, bias=True):
    return cin * cout * k * k + (cout if bias else 0)


def generator_arithmetic(cin=1, cout=1, nf=64, nb=23, gc=32):
    rdb = sum(conv(nf + i * gc, gc if i < 4 else nf, 3) for i in range(5))
    return conv(cin, nf, 3) + nb * 3 * rdb + 4 * conv(nf, nf, 3) + conv(nf, cout, 3)


def discriminator_arithmetic(cin=1, nf=64):
    down = conv(nf, 2 * nf, 4, False) + conv(2 * nf, 4 * nf, 4, False) + conv(4 * nf, 8 * nf, 4, False)
    up = conv(8 * nf, 4 * nf, 3, False) + conv(4 * nf, 2 * nf, 3, False) + conv(2 * nf, nf, 3, False)
    head = 2 * conv(nf, nf, 3, False)
    return conv(cin, nf, 3) + down + up + head + conv(nf, 1, 3)


def trainable(m):
    return sum(p.numel() for p in m.parameters())


if __name__ == "__main__":
    g, d = trainable(Generator()), trainable(Discriminator())
    assert g == generator_arithmetic(), (g, generator_arithmetic())
    assert d == discriminator_arithmetic(), (d, discriminator_arithmetic())
    tiny = trainable(Generator(nf=8, nb=1, gc=4))
    assert tiny == generator_arithmetic(nf=8, nb=1, gc=4)
    print(f"generator_default {g}")
    print(f"generator_tiny {tiny}")
    print(f"discriminator_default {d}")
