"""Convolution, sampling, pooling and normalization ops for the tape engine.

All spatial tensors are NCHW float64. Convolutions zero-pad; deformable
sampling happens on the zero-padded field and clamps to its edge, so zero
offsets reproduce the plain convolution exactly, borders included.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels
from ._kernels import HAVE_NUMBA
from .tensor import GeometryError, ShapeError, Tensor, record_op


def _im2col_np(x, pad, k, stride, dil, Ho, Wo):
    N, C, H, W = x.shape
    xpt = np.zeros((N, H + 2 * pad, W + 2 * pad, C))
    xpt[:, pad: pad + H, pad: pad + W, :] = x.transpose(0, 2, 3, 1)
    win = sliding_window_view(xpt, (dil * (k - 1) + 1,) * 2, axis=(1, 2))
    win = win[:, ::stride, ::stride, :, ::dil, ::dil][:, :Ho, :Wo]
    return np.ascontiguousarray(win).reshape(N * Ho * Wo, C * k * k)


def _col2im_np(gcols, N, C, H, W, pad, k, stride, dil, Ho, Wo):
    gcols = gcols.reshape(N, Ho, Wo, C, k, k)
    gxp = np.zeros((N, H + 2 * pad, W + 2 * pad, C))
    for i in range(k):
        for j in range(k):
            gxp[:, i * dil: i * dil + stride * Ho: stride,
                j * dil: j * dil + stride * Wo: stride, :] += \
                gcols[:, :, :, :, i, j]
    gx = gxp[:, pad: pad + H, pad: pad + W, :].transpose(0, 3, 1, 2)
    return np.ascontiguousarray(gx)


@dataclass
class ConvSpec:
    """Geometry of a square-kernel 2-D convolution."""

    kernel_size: int
    in_channels: int
    out_channels: int
    stride: int = 1
    dilation: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1 or self.dilation < 1:
            raise GeometryError("kernel_size, stride and dilation must be >= 1")
        if self.padding < 0 or self.in_channels < 1 or self.out_channels < 1:
            raise GeometryError("padding must be >= 0 and channel counts >= 1")

    def out_size(self, h: int, w: int):
        span = self.dilation * (self.kernel_size - 1)
        ho = (h + 2 * self.padding - span - 1) // self.stride + 1
        wo = (w + 2 * self.padding - span - 1) // self.stride + 1
        if ho < 1 or wo < 1:
            raise GeometryError(f"conv output {ho}x{wo} for input {h}x{w}")
        return ho, wo


@dataclass
class DeformableConvSpec:
    """Deformable convolution: a dilation-1 base conv plus two offset kernels.

    The offset kernels are convolved with the input (3x3, stride 1, same
    padding as the base) to produce per-pixel row/column offsets, one channel
    per base-kernel tap. They are parameters and receive gradients.
    """

    base: ConvSpec
    offset_kernel_u: Tensor = field(default=None)
    offset_kernel_v: Tensor = field(default=None)

    def __post_init__(self):
        if self.base.dilation != 1:
            raise GeometryError("deformable base conv must have dilation 1")
        taps = self.base.kernel_size ** 2
        k, cin = self.base.kernel_size, self.base.in_channels
        for name, ker in (("offset_kernel_u", self.offset_kernel_u),
                          ("offset_kernel_v", self.offset_kernel_v)):
            if ker is None:
                raise ShapeError(f"{name} is required")
            if ker.shape != (taps, cin, k, k):
                raise ShapeError(f"{name} must have shape {(taps, cin, k, k)}, "
                                 f"got {ker.shape}")


def _check_conv_args(x: Tensor, spec: ConvSpec, weights: Tensor, bias):
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input, got {x.shape}")
    k = spec.kernel_size
    if weights.shape != (spec.out_channels, spec.in_channels, k, k):
        raise ShapeError(f"weights must have shape "
                         f"{(spec.out_channels, spec.in_channels, k, k)}, "
                         f"got {weights.shape}")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, spec wants "
                         f"{spec.in_channels}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ShapeError(f"bias must have shape ({spec.out_channels},)")


def conv2d(x: Tensor, spec: ConvSpec, weights: Tensor, bias: Tensor = None) -> Tensor:
    """Standard/dilated zero-padded convolution.

    out[n,o,r,c] = sum_{c',i,j} x[n,c',r*s - p + i*d, c*s - p + j*d] * w[o,c',i,j]
    with out-of-range input reads taken as zero.
    """
    _check_conv_args(x, spec, weights, bias)
    N, C, H, W = x.shape
    k, s, d, p = spec.kernel_size, spec.stride, spec.dilation, spec.padding
    O = spec.out_channels
    Ho, Wo = spec.out_size(H, W)

    # one contiguous im2col buffer feeds the forward and both backward GEMMs;
    # its (c,i,j) column order matches the natural [O,C,k,k] weight layout
    if HAVE_NUMBA:
        cols = _kernels.im2col(x.data, p, k, s, d, Ho, Wo)
    else:
        cols = _im2col_np(x.data, p, k, s, d, Ho, Wo)
    w2 = weights.data.reshape(O, C * k * k)
    out_data = (cols @ w2.T).reshape(N, Ho, Wo, O).transpose(0, 3, 1, 2)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]

    req = x.requires_grad or weights.requires_grad or (
        bias is not None and bias.requires_grad)
    out = Tensor(out_data, req)

    def _bw(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, O)
        if weights.requires_grad:
            weights.accumulate_grad((g2.T @ cols).reshape(weights.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gcols = g2 @ w2
            if HAVE_NUMBA:
                gx = _kernels.col2im(gcols, N, C, H, W, p, k, s, d, Ho, Wo)
            else:
                gx = _col2im_np(gcols, N, C, H, W, p, k, s, d, Ho, Wo)
            x.accumulate_grad(gx)

    return record_op(out, _bw)


def _offset_fields(x: Tensor, spec: DeformableConvSpec):
    k = spec.base.kernel_size
    off_spec = ConvSpec(kernel_size=k, in_channels=spec.base.in_channels,
                        out_channels=k * k, stride=spec.base.stride,
                        dilation=1, padding=spec.base.padding)
    u = conv2d(x, off_spec, spec.offset_kernel_u)
    v = conv2d(x, off_spec, spec.offset_kernel_v)
    return u, v


def deformable_conv2d(x: Tensor, spec: DeformableConvSpec, weights: Tensor,
                      bias: Tensor = None) -> Tensor:
    """Convolution whose taps shift by learned per-pixel fractional offsets.

    Each base tap (i,j) at output (r,c) reads the zero-padded input at
    (r + i + u[t](r,c), c + j + v[t](r,c)) via bilinear interpolation, where
    t indexes kernel taps. Gradients flow to the input, the base weights, the
    bias, and both offset kernels.
    """
    _check_conv_args(x, spec.base, weights, bias)
    u, v = _offset_fields(x, spec)
    return _deform_sample_conv(x, spec.base, weights, bias, u, v)


def _deform_geometry_np(x_data, u_data, v_data, k, s, p):
    """Shared numpy-fallback geometry: clamped corner indices and weights."""
    N, C, H, W = x_data.shape
    T = k * k
    Hp, Wp = H + 2 * p, W + 2 * p
    xpt = np.zeros((N, Hp, Wp, C))
    xpt[:, p: p + H, p: p + W, :] = x_data.transpose(0, 2, 3, 1)
    Ho, Wo = u_data.shape[2], u_data.shape[3]
    ii, jj = np.divmod(np.arange(T), k)
    base_y = (s * np.arange(Ho))[:, None, None] + ii      # [Ho,1,T]
    base_x = (s * np.arange(Wo))[:, None] + jj            # [Wo,T]
    py = base_y[None] + u_data.transpose(0, 2, 3, 1)      # [N,Ho,Wo,T]
    px = base_x[None, None] + v_data.transpose(0, 2, 3, 1)
    pyc = np.clip(py, 0.0, Hp - 1.0)
    pxc = np.clip(px, 0.0, Wp - 1.0)
    y0 = np.clip(np.floor(pyc), 0, max(Hp - 2, 0)).astype(np.intp)
    x0 = np.clip(np.floor(pxc), 0, max(Wp - 2, 0)).astype(np.intp)
    y1 = np.minimum(y0 + 1, Hp - 1)
    x1 = np.minimum(x0 + 1, Wp - 1)
    fy = (pyc - y0)[..., None]
    fx = (pxc - x0)[..., None]
    nn = np.arange(N)[:, None, None, None]
    corners = (xpt[nn, y0, x0], xpt[nn, y0, x1],
               xpt[nn, y1, x0], xpt[nn, y1, x1])   # [N,Ho,Wo,T,C] each
    wgts = ((1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx)
    return (Hp, Wp, py, px, y0, x0, y1, x1, fy, fx, nn, corners, wgts)


def _deform_gather_np(x_data, u_data, v_data, k, s, p):
    geo = _deform_geometry_np(x_data, u_data, v_data, k, s, p)
    corners, wgts = geo[-2], geo[-1]
    sampled = sum(c * w for c, w in zip(corners, wgts))
    N = x_data.shape[0]
    return sampled.reshape(N * sampled.shape[1] * sampled.shape[2], -1)


def _deform_backward_np(x_data, u_data, v_data, gs2, k, s, p,
                        need_gx, need_gu, need_gv):
    N, C, H, W = x_data.shape
    Ho, Wo = u_data.shape[2], u_data.shape[3]
    (Hp, Wp, py, px, y0, x0, y1, x1, fy, fx, nn, corners, wgts) = \
        _deform_geometry_np(x_data, u_data, v_data, k, s, p)
    g00, g01, g10, g11 = corners
    gs = gs2.reshape(N, Ho, Wo, k * k, C)
    gx = gu = gv = None
    if need_gx:
        buf = np.zeros((C, N * Hp * Wp))
        for yi, xi, wgt in ((y0, x0, wgts[0]), (y0, x1, wgts[1]),
                            (y1, x0, wgts[2]), (y1, x1, wgts[3])):
            lin = ((nn * Hp + yi) * Wp + xi).ravel()
            vals = np.ascontiguousarray((gs * wgt).reshape(-1, C).T)
            for c in range(C):
                buf[c] += np.bincount(lin, weights=vals[c],
                                      minlength=N * Hp * Wp)
        gxp = buf.reshape(C, N, Hp, Wp).transpose(1, 0, 2, 3)
        gx = np.ascontiguousarray(gxp[:, :, p: p + H, p: p + W])
    if need_gu:
        dy = (g10 - g00) * (1 - fx) + (g11 - g01) * fx
        live = (py > 0.0) & (py < Hp - 1.0)   # clamp kills the slope
        gu = np.ascontiguousarray(((gs * dy).sum(-1) * live)
                                  .transpose(0, 3, 1, 2))
    if need_gv:
        dx = (g01 - g00) * (1 - fy) + (g11 - g10) * fy
        live = (px > 0.0) & (px < Wp - 1.0)
        gv = np.ascontiguousarray(((gs * dx).sum(-1) * live)
                                  .transpose(0, 3, 1, 2))
    return gx, gu, gv


def _deform_sample_conv(x: Tensor, base: ConvSpec, weights: Tensor, bias,
                        u: Tensor, v: Tensor) -> Tensor:
    N, C, H, W = x.shape
    k, s, p = base.kernel_size, base.stride, base.padding
    T = k * k
    Ho, Wo = base.out_size(H, W)
    if u.shape != (N, T, Ho, Wo) or v.shape != (N, T, Ho, Wo):
        raise ShapeError("offset fields must be [N, k*k, Ho, Wo]")

    if HAVE_NUMBA:
        s2 = _kernels.deform_gather(x.data, u.data, v.data, p, k, s, Ho, Wo)
    else:
        s2 = _deform_gather_np(x.data, u.data, v.data, k, s, p)

    O = base.out_channels
    wf2 = np.ascontiguousarray(
        weights.data.reshape(O, C, T).transpose(0, 2, 1)).reshape(O, T * C)
    out_data = (s2 @ wf2.T).reshape(N, Ho, Wo, O).transpose(0, 3, 1, 2)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]

    req = (x.requires_grad or weights.requires_grad or u.requires_grad
           or v.requires_grad or (bias is not None and bias.requires_grad))
    out = Tensor(out_data, req)

    def _bw(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, O)
        if weights.requires_grad:
            gw = (g2.T @ s2).reshape(O, T, C).transpose(0, 2, 1)
            weights.accumulate_grad(gw.reshape(weights.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)))
        need_gx, need_gu, need_gv = (x.requires_grad, u.requires_grad,
                                     v.requires_grad)
        if not (need_gx or need_gu or need_gv):
            return
        gs2 = g2 @ wf2
        if HAVE_NUMBA:
            gx, gu, gv = _kernels.deform_backward(
                x.data, u.data, v.data, gs2, p, k, s, Ho, Wo,
                need_gx, need_gu, need_gv)
        else:
            gx, gu, gv = _deform_backward_np(
                x.data, u.data, v.data, gs2, k, s, p,
                need_gx, need_gu, need_gv)
        if need_gx:
            x.accumulate_grad(gx)
        if need_gu:
            u.accumulate_grad(gu)
        if need_gv:
            v.accumulate_grad(gv)

    return record_op(out, _bw)


def bilinear_sample(field: Tensor, y, x) -> Tensor:
    """Read a [C,H,W] field at one fractional position, clamping to the edge.

    Returns a [C] tensor. Differentiable in the field and, when y or x are
    scalar tensors, in the coordinates.
    """
    if field.ndim != 3:
        raise ShapeError(f"bilinear_sample expects [C,H,W], got {field.shape}")
    C, H, W = field.shape
    y_t = y if isinstance(y, Tensor) else None
    x_t = x if isinstance(x, Tensor) else None
    yv = float(y.item()) if y_t is not None else float(y)
    xv = float(x.item()) if x_t is not None else float(x)

    yc = min(max(yv, 0.0), H - 1.0)
    xc = min(max(xv, 0.0), W - 1.0)
    y0 = min(int(np.floor(yc)), max(H - 2, 0))
    x0 = min(int(np.floor(xc)), max(W - 2, 0))
    y1, x1 = min(y0 + 1, H - 1), min(x0 + 1, W - 1)
    fy, fx = yc - y0, xc - x0

    w00, w01 = (1 - fy) * (1 - fx), (1 - fy) * fx
    w10, w11 = fy * (1 - fx), fy * fx
    fd = field.data
    vals = (w00 * fd[:, y0, x0] + w01 * fd[:, y0, x1]
            + w10 * fd[:, y1, x0] + w11 * fd[:, y1, x1])

    req = field.requires_grad or (y_t is not None and y_t.requires_grad) or (
        x_t is not None and x_t.requires_grad)
    out = Tensor(vals, req)

    def _bw(g):
        if field.requires_grad:
            gf = np.zeros_like(fd)
            gf[:, y0, x0] += w00 * g
            gf[:, y0, x1] += w01 * g
            gf[:, y1, x0] += w10 * g
            gf[:, y1, x1] += w11 * g
            field.accumulate_grad(gf)
        if y_t is not None and y_t.requires_grad and 0.0 < yv < H - 1.0:
            dvy = ((fd[:, y1, x0] - fd[:, y0, x0]) * (1 - fx)
                   + (fd[:, y1, x1] - fd[:, y0, x1]) * fx)
            y_t.accumulate_grad(np.asarray(np.dot(g, dvy)))
        if x_t is not None and x_t.requires_grad and 0.0 < xv < W - 1.0:
            dvx = ((fd[:, y0, x1] - fd[:, y0, x0]) * (1 - fy)
                   + (fd[:, y1, x1] - fd[:, y1, x0]) * fy)
            x_t.accumulate_grad(np.asarray(np.dot(g, dvx)))

    return record_op(out, _bw)


def avg_pool2d(x: Tensor, factor: int) -> Tensor:
    """Non-overlapping block mean; spatial dims must divide by `factor`."""
    if x.ndim != 4:
        raise ShapeError(f"avg_pool2d expects NCHW, got {x.shape}")
    N, C, H, W = x.shape
    f = int(factor)
    if f < 1 or H % f or W % f:
        raise GeometryError(f"avg_pool2d: {H}x{W} not divisible by {f}")
    out_data = x.data.reshape(N, C, H // f, f, W // f, f).mean(axis=(3, 5))
    out = Tensor(out_data, x.requires_grad)

    def _bw(g):
        if x.requires_grad:
            gx = np.broadcast_to((g / (f * f))[:, :, :, None, :, None],
                                 (N, C, H // f, f, W // f, f))
            x.accumulate_grad(gx.reshape(N, C, H, W))

    return record_op(out, _bw)


_interp_cache: dict = {}


def _interp_matrix(n_in: int, factor: int) -> np.ndarray:
    """Row-stochastic [n_in*factor, n_in] bilinear interpolation matrix.

    Output sample o reads input position (o + 0.5)/factor - 0.5 (half-pixel
    centers), clamped to the valid range.
    """
    key = (n_in, factor)
    m = _interp_cache.get(key)
    if m is not None:
        return m
    n_out = n_in * factor
    pos = np.clip((np.arange(n_out) + 0.5) / factor - 0.5, 0.0, n_in - 1.0)
    i0 = np.clip(np.floor(pos), 0, max(n_in - 2, 0)).astype(int)
    fi = pos - i0
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), i0] = 1.0 - fi
    m[np.arange(n_out), np.minimum(i0 + 1, n_in - 1)] += fi
    _interp_cache[key] = m
    return m


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    """Bilinear upsampling by an integer factor (half-pixel convention)."""
    if x.ndim != 4:
        raise ShapeError(f"upsample_bilinear expects NCHW, got {x.shape}")
    f = int(factor)
    if f < 1:
        raise GeometryError("upsample factor must be >= 1")
    if f == 1:
        return scale_identity(x)
    N, C, H, W = x.shape
    my = _interp_matrix(H, f)
    mx = _interp_matrix(W, f)
    out_data = my @ x.data @ mx.T
    out = Tensor(out_data, x.requires_grad)

    def _bw(g):
        if x.requires_grad:
            x.accumulate_grad(my.T @ g @ mx)

    return record_op(out, _bw)


def scale_identity(x: Tensor) -> Tensor:
    out = Tensor(x.data.copy(), x.requires_grad)

    def _bw(g):
        if x.requires_grad:
            x.accumulate_grad(g)

    return record_op(out, _bw)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int,
               eps: float = 1e-5) -> Tensor:
    """Per-sample group normalization with affine channel parameters."""
    if x.ndim != 4:
        raise ShapeError(f"group_norm expects NCHW, got {x.shape}")
    N, C, H, W = x.shape
    if C % groups:
        raise GeometryError(f"{C} channels not divisible into {groups} groups")
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError("gamma/beta must have shape (C,)")
    xg = x.data.reshape(N, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(N, C, H, W)
    out = Tensor(xhat * gamma.data[None, :, None, None]
                 + beta.data[None, :, None, None],
                 x.requires_grad or gamma.requires_grad or beta.requires_grad)

    def _bw(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gx_hat = (g * gamma.data[None, :, None, None]).reshape(N, groups, -1)
            xh = xhat.reshape(N, groups, -1)
            m = gx_hat.shape[2]
            t1 = gx_hat.mean(axis=2, keepdims=True)
            t2 = (gx_hat * xh).mean(axis=2, keepdims=True)
            gx = inv * (gx_hat - t1 - xh * t2)
            x.accumulate_grad(gx.reshape(N, C, H, W))

    return record_op(out, _bw)
