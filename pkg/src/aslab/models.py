"""Network definitions: segmentation baseline, shape regularizer, discriminator.

Models are plain parameter collections (ordered name -> Tensor) plus forward
functions built from the tape ops. Construction is deterministic given an rng.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nnops
from .nnops import ConvSpec, DeformableConvSpec
from .tensor import GeometryError, Tensor, concat_channels, leaky_relu, relu


def kaiming_uniform(rng, cout: int, cin: int, k: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (cin * k * k))
    return rng.uniform(-bound, bound, size=(cout, cin, k, k))


class Net:
    """Base container: ordered named parameters."""

    def __init__(self):
        self._params = {}

    def _register(self, name: str, t: Tensor) -> Tensor:
        self._params[name] = t
        return t

    def named_parameters(self):
        return list(self._params.items())

    def parameters(self):
        return list(self._params.values())

    def parameter_count(self) -> int:
        return sum(p.size for p in self._params.values())

    def set_trainable(self, flag: bool):
        for p in self._params.values():
            p.requires_grad = flag

    def load_named(self, tensors: dict, prefix: str = ""):
        for name, p in self._params.items():
            arr = tensors[prefix + name]
            p.data = np.ascontiguousarray(arr.reshape(p.shape), dtype=np.float64)
            p.grad = None


class _Conv:
    """One conv layer: spec + weight + bias, optionally group-normed."""

    def __init__(self, net: Net, name: str, rng, cin, cout, k=3, stride=1,
                 dilation=1, padding=None, norm_groups=0, bias=True):
        if padding is None:
            padding = dilation * (k - 1) // 2
        self.spec = ConvSpec(kernel_size=k, in_channels=cin, out_channels=cout,
                             stride=stride, dilation=dilation, padding=padding)
        self.w = net._register(f"{name}/w",
                               Tensor(kaiming_uniform(rng, cout, cin, k),
                                      requires_grad=True))
        self.b = None
        if bias:
            self.b = net._register(f"{name}/b",
                                   Tensor(np.zeros(cout), requires_grad=True))
        self.gamma = self.beta = None
        self.norm_groups = norm_groups
        if norm_groups:
            self.gamma = net._register(f"{name}/g",
                                       Tensor(np.ones(cout), requires_grad=True))
            self.beta = net._register(f"{name}/be",
                                      Tensor(np.zeros(cout), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        out = nnops.conv2d(x, self.spec, self.w, self.b)
        if self.norm_groups:
            out = nnops.group_norm(out, self.gamma, self.beta, self.norm_groups)
        return out


class _DeformConv:
    """Deformable conv layer; offset kernels start at zero."""

    def __init__(self, net: Net, name: str, rng, cin, cout, k=3):
        base = ConvSpec(kernel_size=k, in_channels=cin, out_channels=cout,
                        stride=1, dilation=1, padding=(k - 1) // 2)
        taps = k * k
        self.ku = net._register(f"{name}/ku",
                                Tensor(np.zeros((taps, cin, k, k)),
                                       requires_grad=True))
        self.kv = net._register(f"{name}/kv",
                                Tensor(np.zeros((taps, cin, k, k)),
                                       requires_grad=True))
        self.spec = DeformableConvSpec(base=base, offset_kernel_u=self.ku,
                                       offset_kernel_v=self.kv)
        self.w = net._register(f"{name}/w",
                               Tensor(kaiming_uniform(rng, cout, cin, k),
                                      requires_grad=True))
        self.b = net._register(f"{name}/b",
                               Tensor(np.zeros(cout), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        return nnops.deformable_conv2d(x, self.spec, self.w, self.b)


@dataclass
class EDFCNConfig:
    """Encoder-decoder sizing. Stage widths are (w, 2w, 4w) at 1/2, 1/4, 1/8."""

    input_channels: int = 1
    base_width: int = 16
    norm_groups: int = 4


class ShapeRegularizer:
    """Dilated residual unit + deformable conv + 1x1 logit projection.

    Two stacked dilation-2 3x3 convs give a 9x9 receptive field on the
    1/4-scale feature map (over 36x36 input pixels).
    """

    DILATION = 2

    def __init__(self, net: Net, prefix: str, rng, width: int):
        d = self.DILATION
        self.dc1 = _Conv(net, f"{prefix}/dc1", rng, width, width, dilation=d)
        self.dc2 = _Conv(net, f"{prefix}/dc2", rng, width, width, dilation=d)
        self.dfc = _DeformConv(net, f"{prefix}/dfc", rng, width, width)
        self.proj = _Conv(net, f"{prefix}/proj", rng, width, 1, k=1)

    def forward(self, x: Tensor) -> Tensor:
        h = relu(x + self.dc2(relu(self.dc1(x))))
        h = self.dfc(h)
        return self.proj(h)


class SegmentationModel(Net):
    """ED-FCN-lite segmenter, optionally capped by the shape regularizer.

    Three encoder stages (each: stride-2 conv then stride-1 conv, both
    group-normed + relu) produce features at 1/2, 1/4 and 1/8 resolution.
    The decoder upsamples 1/8 -> 1/4, concatenates the 1/4 skip, fuses with
    a 3x3 conv, applies the SR (or a 1x1 head), and upsamples 4x to logits
    at input resolution.
    """

    def __init__(self, cfg: EDFCNConfig = None, use_sr: bool = True, rng=None):
        super().__init__()
        self.cfg = cfg or EDFCNConfig()
        self.use_sr = use_sr
        rng = rng or np.random.default_rng(0)
        w = self.cfg.base_width
        g = self.cfg.norm_groups
        cin = self.cfg.input_channels
        self.enc = []
        widths = [w, 2 * w, 4 * w]
        prev = cin
        for i, width in enumerate(widths, start=1):
            c1 = _Conv(self, f"enc{i}/c1", rng, prev, width, stride=2,
                       norm_groups=g)
            c2 = _Conv(self, f"enc{i}/c2", rng, width, width, norm_groups=g)
            self.enc.append((c1, c2))
            prev = width
        self.fuse = _Conv(self, "dec/fuse", rng, widths[2] + widths[1],
                          widths[1], norm_groups=g)
        if use_sr:
            self.sr = ShapeRegularizer(self, "sr", rng, widths[1])
            self.head = None
        else:
            self.sr = None
            self.head = _Conv(self, "dec/head", rng, widths[1], 1, k=1)

    def forward(self, image: Tensor) -> Tensor:
        if image.ndim != 4 or image.shape[1] != self.cfg.input_channels:
            raise GeometryError(f"expected [N,{self.cfg.input_channels},H,W] "
                                f"image, got {image.shape}")
        _, _, H, W = image.shape
        if H % 8 or W % 8:
            raise GeometryError(f"image dims {H}x{W} must divide by 8")
        x = image
        skips = []
        for c1, c2 in self.enc:
            x = relu(c2(relu(c1(x))))
            skips.append(x)
        up = nnops.upsample_bilinear(skips[2], 2)
        fused = relu(self.fuse(concat_channels([up, skips[1]])))
        logits_q = self.sr.forward(fused) if self.use_sr else self.head(fused)
        return nnops.upsample_bilinear(logits_q, 4)


class ShapeDiscriminator(Net):
    """Scores single-channel maps in [0,1]; never sees the input image.

    A factor-2 average pool softens hard label boundaries, then four 3x3
    stride-2 convs with leaky-relu(0.2) and a linear 1x1 head produce a raw
    score map at 1/32 of the input map resolution.
    """

    POOL = 2

    def __init__(self, widths=(16, 32, 64, 128), rng=None):
        super().__init__()
        self.widths = tuple(widths)
        rng = rng or np.random.default_rng(0)
        self.convs = []
        prev = 1
        for i, width in enumerate(self.widths, start=1):
            conv = _Conv(self, f"d{i}", rng, prev, width, stride=2)
            self.convs.append(conv)
            prev = width
        self.score = _Conv(self, "score", rng, prev, 1, k=1)

    def forward(self, m: Tensor) -> Tensor:
        if m.ndim != 4 or m.shape[1] != 1:
            raise GeometryError(f"discriminator expects [N,1,H,W], got {m.shape}")
        _, _, H, W = m.shape
        if H % 32 or W % 32:
            raise GeometryError(f"map dims {H}x{W} must divide by 32")
        x = nnops.avg_pool2d(m, self.POOL)
        for conv in self.convs:
            x = leaky_relu(conv(x), 0.2)
        return self.score(x)


def segment_forward(model: SegmentationModel, image: Tensor) -> Tensor:
    return model.forward(image)


def sr_forward(sr: ShapeRegularizer, features: Tensor) -> Tensor:
    return sr.forward(features)


def sd_forward(sd: ShapeDiscriminator, m: Tensor) -> Tensor:
    return sd.forward(m)
