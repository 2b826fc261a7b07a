import numpy as np
import numpy.testing as npt
import pytest

from aslab import (ConvSpec, DeformableConvSpec, ShapeError, Tensor,
                   bilinear_sample, conv2d, deformable_conv2d)
from aslab.nnops import _deform_sample_conv
from oracles import bilinear_at, conv2d_loops, deform_conv_loops


def _dspec(cin, cout, k=3, ku=None, kv=None):
    base = ConvSpec(kernel_size=k, in_channels=cin, out_channels=cout,
                    stride=1, dilation=1, padding=(k - 1) // 2)
    taps = k * k
    ku = ku if ku is not None else np.zeros((taps, cin, k, k))
    kv = kv if kv is not None else np.zeros((taps, cin, k, k))
    return base, DeformableConvSpec(base=base, offset_kernel_u=Tensor(ku),
                                    offset_kernel_v=Tensor(kv))


def test_zero_offsets_reduce_to_standard_conv():
    rng = np.random.default_rng(0)
    for shape in [(1, 1, 5, 5), (2, 3, 8, 6)]:
        x = rng.standard_normal(shape)
        w = rng.standard_normal((2, shape[1], 3, 3))
        b = rng.standard_normal(2)
        base, spec = _dspec(shape[1], 2)
        got = deformable_conv2d(Tensor(x), spec, Tensor(w), Tensor(b)).data
        want = conv2d(Tensor(x), base, Tensor(w), Tensor(b)).data
        npt.assert_allclose(got, want, atol=1e-12)


def test_constant_field_gives_constant_output():
    # bilinear interpolation of a constant field is that constant, so offsets
    # whose reads stay inside the true image produce c * sum(k) + bias; taps
    # of border-adjacent outputs mix the zero padding and are excluded
    rng = np.random.default_rng(1)
    c = 1.7
    x = np.full((1, 2, 8, 8), c)
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    base, _ = _dspec(2, 3)
    u = Tensor(rng.uniform(-0.9, 0.9, size=(1, 9, 8, 8)))
    v = Tensor(rng.uniform(-0.9, 0.9, size=(1, 9, 8, 8)))
    out = _deform_sample_conv(Tensor(x), base, Tensor(w), Tensor(b), u, v).data
    want = c * w.sum(axis=(1, 2, 3)) + b
    for o in range(3):
        npt.assert_allclose(out[0, o, 2:-2, 2:-2], want[o], rtol=1e-12)


def test_impulse_with_manual_offsets_matches_bilinear_tap_oracle():
    rng = np.random.default_rng(2)
    x = np.zeros((1, 1, 7, 7))
    x[0, 0, 3, 3] = 1.0
    w = rng.standard_normal((1, 1, 3, 3))
    b = rng.standard_normal(1)
    u = rng.uniform(-1.2, 1.2, size=(1, 9, 7, 7))
    v = rng.uniform(-1.2, 1.2, size=(1, 9, 7, 7))
    base, _ = _dspec(1, 1)
    got = _deform_sample_conv(Tensor(x), base, Tensor(w), Tensor(b),
                              Tensor(u), Tensor(v)).data
    want = deform_conv_loops(x, w, b, u, v, padding=1)
    npt.assert_allclose(got, want, atol=1e-12)


def test_full_deformable_random_instances_match_composed_oracle():
    rng = np.random.default_rng(3)
    for _ in range(10):
        n, cin, cout = 1, int(rng.integers(1, 3)), int(rng.integers(1, 3))
        h = int(rng.integers(4, 8))
        w_ = int(rng.integers(4, 8))
        x = rng.standard_normal((n, cin, h, w_))
        w = rng.standard_normal((cout, cin, 3, 3))
        b = rng.standard_normal(cout)
        ku = 0.2 * rng.standard_normal((9, cin, 3, 3))
        kv = 0.2 * rng.standard_normal((9, cin, 3, 3))
        _, spec = _dspec(cin, cout, ku=ku, kv=kv)
        got = deformable_conv2d(Tensor(x), spec, Tensor(w), Tensor(b)).data
        u = conv2d_loops(x, ku, padding=1)
        v = conv2d_loops(x, kv, padding=1)
        want = deform_conv_loops(x, w, b, u, v, padding=1)
        npt.assert_allclose(got, want, atol=1e-11)


def test_offset_kernel_shape_validation():
    base = ConvSpec(kernel_size=3, in_channels=2, out_channels=2, padding=1)
    with pytest.raises(ShapeError):
        DeformableConvSpec(base=base, offset_kernel_u=Tensor(np.zeros((9, 2, 3, 3))),
                           offset_kernel_v=Tensor(np.zeros((8, 2, 3, 3))))


def test_bilinear_sample_integer_and_midpoint():
    rng = np.random.default_rng(4)
    f = rng.standard_normal((2, 5, 6))
    npt.assert_allclose(bilinear_sample(Tensor(f), 3.0, 4.0).data, f[:, 3, 4])
    mid = bilinear_sample(Tensor(f), 2.0, 3.5).data
    npt.assert_allclose(mid, 0.5 * (f[:, 2, 3] + f[:, 2, 4]))


def test_bilinear_sample_matches_expansion_oracle():
    rng = np.random.default_rng(5)
    f = rng.standard_normal((3, 6, 7))
    for _ in range(50):
        y = rng.uniform(-1.0, 7.0)   # includes out-of-bounds (clamped)
        x = rng.uniform(-1.0, 8.0)
        got = bilinear_sample(Tensor(f), y, x).data
        npt.assert_allclose(got, bilinear_at(f, y, x), atol=1e-12)


def test_bilinear_sample_coordinate_gradients():
    from aslab import Tape, backward, sum_all

    rng = np.random.default_rng(6)
    f = rng.standard_normal((2, 5, 5))
    y = Tensor(np.array(2.3), requires_grad=True)
    x = Tensor(np.array(1.7), requires_grad=True)
    with Tape():
        backward(sum_all(bilinear_sample(Tensor(f), y, x)))
    h = 1e-6
    for t, move in ((y, (h, 0.0)), (x, (0.0, h))):
        up = bilinear_at(f, 2.3 + move[0], 1.7 + move[1]).sum()
        dn = bilinear_at(f, 2.3 - move[0], 1.7 - move[1]).sum()
        npt.assert_allclose(float(t.grad), (up - dn) / (2 * h), rtol=1e-6)
