"""Hot inner loops, JIT-compiled with numba when available.

All kernels are serial and IEEE-strict so results are deterministic. The
callers in nnops fall back to pure-numpy equivalents when numba is missing.
"""

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f
        return wrap


@njit(cache=True)
def im2col(x, pad, k, stride, dil, Ho, Wo):
    """[N,C,H,W] -> [N*Ho*Wo, C*k*k] patch matrix with implicit zero pad."""
    N, C, H, W = x.shape
    cols = np.empty((N * Ho * Wo, C * k * k))
    for n in range(N):
        for ho in range(Ho):
            for wo in range(Wo):
                r = (n * Ho + ho) * Wo + wo
                col = 0
                for c in range(C):
                    for i in range(k):
                        yy = ho * stride - pad + i * dil
                        inside_y = 0 <= yy < H
                        for j in range(k):
                            xx = wo * stride - pad + j * dil
                            if inside_y and 0 <= xx < W:
                                cols[r, col] = x[n, c, yy, xx]
                            else:
                                cols[r, col] = 0.0
                            col += 1
    return cols


@njit(cache=True)
def col2im(gcols, N, C, H, W, pad, k, stride, dil, Ho, Wo):
    """Adjoint of im2col: scatter-add patch gradients back onto the input."""
    gx = np.zeros((N, C, H, W))
    for n in range(N):
        for ho in range(Ho):
            for wo in range(Wo):
                r = (n * Ho + ho) * Wo + wo
                col = 0
                for c in range(C):
                    for i in range(k):
                        yy = ho * stride - pad + i * dil
                        inside_y = 0 <= yy < H
                        for j in range(k):
                            xx = wo * stride - pad + j * dil
                            if inside_y and 0 <= xx < W:
                                gx[n, c, yy, xx] += gcols[r, col]
                            col += 1
    return gx


@njit(cache=True, inline="always")
def _read_padded(x, n, c, yy, xx, pad):
    ty = yy - pad
    tx = xx - pad
    if 0 <= ty < x.shape[2] and 0 <= tx < x.shape[3]:
        return x[n, c, ty, tx]
    return 0.0


@njit(cache=True)
def deform_gather(x, u, v, pad, k, stride, Ho, Wo):
    """Bilinear samples of the zero-padded field at offset tap positions.

    Returns [N*Ho*Wo, T*C] ready for the output GEMM. Positions are clamped
    to the padded extent.
    """
    N, C, H, W = x.shape
    T = k * k
    Hp, Wp = H + 2 * pad, W + 2 * pad
    out = np.empty((N * Ho * Wo, T * C))
    for n in range(N):
        for ho in range(Ho):
            for wo in range(Wo):
                r = (n * Ho + ho) * Wo + wo
                for t in range(T):
                    i = t // k
                    j = t % k
                    py = ho * stride + i + u[n, t, ho, wo]
                    px = wo * stride + j + v[n, t, ho, wo]
                    if py < 0.0:
                        py = 0.0
                    elif py > Hp - 1.0:
                        py = Hp - 1.0
                    if px < 0.0:
                        px = 0.0
                    elif px > Wp - 1.0:
                        px = Wp - 1.0
                    y0 = int(np.floor(py))
                    if y0 > Hp - 2:
                        y0 = max(Hp - 2, 0)
                    x0 = int(np.floor(px))
                    if x0 > Wp - 2:
                        x0 = max(Wp - 2, 0)
                    y1 = min(y0 + 1, Hp - 1)
                    x1 = min(x0 + 1, Wp - 1)
                    fy = py - y0
                    fx = px - x0
                    w00 = (1.0 - fy) * (1.0 - fx)
                    w01 = (1.0 - fy) * fx
                    w10 = fy * (1.0 - fx)
                    w11 = fy * fx
                    for c in range(C):
                        out[r, t * C + c] = (
                            w00 * _read_padded(x, n, c, y0, x0, pad)
                            + w01 * _read_padded(x, n, c, y0, x1, pad)
                            + w10 * _read_padded(x, n, c, y1, x0, pad)
                            + w11 * _read_padded(x, n, c, y1, x1, pad))
    return out


@njit(cache=True)
def deform_backward(x, u, v, gs, pad, k, stride, Ho, Wo,
                    need_gx, need_gu, need_gv):
    """Gradients of the deformable sampling wrt input and offset fields.

    gs is [N*Ho*Wo, T*C], the output gradient pulled back through the
    weight GEMM. Recomputes corner geometry instead of caching it.
    """
    N, C, H, W = x.shape
    T = k * k
    Hp, Wp = H + 2 * pad, W + 2 * pad
    gx = np.zeros((N, C, H, W))
    gu = np.zeros((N, T, Ho, Wo))
    gv = np.zeros((N, T, Ho, Wo))
    for n in range(N):
        for ho in range(Ho):
            for wo in range(Wo):
                r = (n * Ho + ho) * Wo + wo
                for t in range(T):
                    i = t // k
                    j = t % k
                    py_raw = ho * stride + i + u[n, t, ho, wo]
                    px_raw = wo * stride + j + v[n, t, ho, wo]
                    py = min(max(py_raw, 0.0), Hp - 1.0)
                    px = min(max(px_raw, 0.0), Wp - 1.0)
                    y0 = int(np.floor(py))
                    if y0 > Hp - 2:
                        y0 = max(Hp - 2, 0)
                    x0 = int(np.floor(px))
                    if x0 > Wp - 2:
                        x0 = max(Wp - 2, 0)
                    y1 = min(y0 + 1, Hp - 1)
                    x1 = min(x0 + 1, Wp - 1)
                    fy = py - y0
                    fx = px - x0
                    w00 = (1.0 - fy) * (1.0 - fx)
                    w01 = (1.0 - fy) * fx
                    w10 = fy * (1.0 - fx)
                    w11 = fy * fx
                    live_y = 0.0 < py_raw < Hp - 1.0
                    live_x = 0.0 < px_raw < Wp - 1.0
                    acc_u = 0.0
                    acc_v = 0.0
                    ty0, tx0 = y0 - pad, x0 - pad
                    ty1, tx1 = y1 - pad, x1 - pad
                    in00 = 0 <= ty0 < H and 0 <= tx0 < W
                    in01 = 0 <= ty0 < H and 0 <= tx1 < W
                    in10 = 0 <= ty1 < H and 0 <= tx0 < W
                    in11 = 0 <= ty1 < H and 0 <= tx1 < W
                    for c in range(C):
                        g = gs[r, t * C + c]
                        g00 = x[n, c, ty0, tx0] if in00 else 0.0
                        g01 = x[n, c, ty0, tx1] if in01 else 0.0
                        g10 = x[n, c, ty1, tx0] if in10 else 0.0
                        g11 = x[n, c, ty1, tx1] if in11 else 0.0
                        if need_gx:
                            if in00:
                                gx[n, c, ty0, tx0] += g * w00
                            if in01:
                                gx[n, c, ty0, tx1] += g * w01
                            if in10:
                                gx[n, c, ty1, tx0] += g * w10
                            if in11:
                                gx[n, c, ty1, tx1] += g * w11
                        if need_gu and live_y:
                            acc_u += g * ((g10 - g00) * (1.0 - fx)
                                          + (g11 - g01) * fx)
                        if need_gv and live_x:
                            acc_v += g * ((g01 - g00) * (1.0 - fy)
                                          + (g11 - g10) * fy)
                    gu[n, t, ho, wo] = acc_u
                    gv[n, t, ho, wo] = acc_v
    return gx, gu, gv
