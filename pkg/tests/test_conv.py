import numpy as np
import numpy.testing as npt
import pytest

from aslab import ConvSpec, GeometryError, ShapeError, Tensor, conv2d
from oracles import conv2d_loops


def _conv(x, w, b=None, stride=1, dilation=1, padding=0):
    spec = ConvSpec(kernel_size=w.shape[2], in_channels=w.shape[1],
                    out_channels=w.shape[0], stride=stride, dilation=dilation,
                    padding=padding)
    bias = Tensor(b) if b is not None else None
    return conv2d(Tensor(x), spec, Tensor(w), bias).data


def test_scalar_product():
    out = _conv(np.array([[[[2.0]]]]), np.array([[[[3.0]]]]))
    npt.assert_allclose(out, [[[[6.0]]]])


def test_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 1, 6, 6))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    npt.assert_allclose(_conv(x, w, padding=1), x, atol=0)


def test_dilated_conv_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 1, 7, 7))
    w = rng.standard_normal((1, 1, 3, 3))
    got = _conv(x, w, dilation=2, padding=2)
    want = conv2d_loops(x, w, dilation=2, padding=2)
    npt.assert_allclose(got, want, atol=1e-12)


def test_conv_property_random_instances_match_oracle():
    # dilations, strides and paddings drawn at random; >=100 cases
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(1, 3))
        cin = int(rng.integers(1, 4))
        cout = int(rng.integers(1, 4))
        k = int(rng.choice([1, 3]))
        d = int(rng.integers(1, 3))
        s = int(rng.integers(1, 3))
        p = int(rng.integers(0, 3))
        span = d * (k - 1) + 1
        h = int(rng.integers(max(1, span - 2 * p), 9))
        w_ = int(rng.integers(max(1, span - 2 * p), 9))
        if h + 2 * p < span or w_ + 2 * p < span:
            continue
        x = rng.standard_normal((n, cin, h, w_))
        w = rng.standard_normal((cout, cin, k, k))
        b = rng.standard_normal(cout)
        got = _conv(x, w, b, stride=s, dilation=d, padding=p)
        want = conv2d_loops(x, w, b, stride=s, dilation=d, padding=p)
        npt.assert_allclose(got, want, atol=1e-12)


def test_dilation_one_equals_standard_conv():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    npt.assert_array_equal(_conv(x, w, padding=1, dilation=1),
                           _conv(x, w, padding=1))


def test_geometry_and_shape_errors():
    with pytest.raises(GeometryError):
        ConvSpec(kernel_size=5, in_channels=1, out_channels=1).out_size(3, 3)
    with pytest.raises(ShapeError):
        _conv(np.zeros((1, 2, 4, 4)), np.zeros((1, 1, 3, 3)), padding=1)
    with pytest.raises(ShapeError):
        spec = ConvSpec(kernel_size=3, in_channels=1, out_channels=2)
        conv2d(Tensor(np.zeros((1, 1, 5, 5))), spec,
               Tensor(np.zeros((2, 1, 3, 3))), Tensor(np.zeros(3)))
