"""Independent brute-force oracles used by the test suite.

Everything here is written against the definitions directly (nested loops,
explicit set arithmetic) and deliberately shares no code with the package
implementations it checks.
"""

import math

import numpy as np


def conv2d_loops(x, w, b=None, stride=1, dilation=1, padding=0):
    """Direct nested-loop convolution on NCHW float arrays."""
    N, C, H, W = x.shape
    O, _, k, _ = w.shape
    span = dilation * (k - 1) + 1
    Ho = (H + 2 * padding - span) // stride + 1
    Wo = (W + 2 * padding - span) // stride + 1
    out = np.zeros((N, O, Ho, Wo))
    for n in range(N):
        for o in range(O):
            for ho in range(Ho):
                for wo in range(Wo):
                    acc = 0.0
                    for c in range(C):
                        for i in range(k):
                            for j in range(k):
                                r = ho * stride - padding + i * dilation
                                cc = wo * stride - padding + j * dilation
                                if 0 <= r < H and 0 <= cc < W:
                                    acc += x[n, c, r, cc] * w[o, c, i, j]
                    out[n, o, ho, wo] = acc + (b[o] if b is not None else 0.0)
    return out


def bilinear_at(field, y, x):
    """4-term bilinear read of a [C,H,W] field with edge clamping."""
    C, H, W = field.shape
    y = min(max(y, 0.0), H - 1.0)
    x = min(max(x, 0.0), W - 1.0)
    y0 = min(int(math.floor(y)), max(H - 2, 0))
    x0 = min(int(math.floor(x)), max(W - 2, 0))
    y1, x1 = min(y0 + 1, H - 1), min(x0 + 1, W - 1)
    fy, fx = y - y0, x - x0
    return (field[:, y0, x0] * (1 - fy) * (1 - fx)
            + field[:, y0, x1] * (1 - fy) * fx
            + field[:, y1, x0] * fy * (1 - fx)
            + field[:, y1, x1] * fy * fx)


def deform_conv_loops(x, w, b, u, v, padding=1):
    """Deformable conv: loop over taps, bilinear read of the padded field."""
    N, C, H, W = x.shape
    O, _, k, _ = w.shape
    T = k * k
    Ho, Wo = u.shape[2], u.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((N, O, Ho, Wo))
    for n in range(N):
        for ho in range(Ho):
            for wo in range(Wo):
                taps = np.zeros((T, C))
                for t in range(T):
                    i, j = divmod(t, k)
                    py = ho + i + u[n, t, ho, wo]
                    px = wo + j + v[n, t, ho, wo]
                    taps[t] = bilinear_at(xp[n], py, px)
                for o in range(O):
                    out[n, o, ho, wo] = (taps * w[o].reshape(C, T).T).sum() \
                        + (b[o] if b is not None else 0.0)
    return out


def block_mean(x, f):
    N, C, H, W = x.shape
    out = np.zeros((N, C, H // f, W // f))
    for n in range(N):
        for c in range(C):
            for i in range(H // f):
                for j in range(W // f):
                    out[n, c, i, j] = x[n, c, i * f:(i + 1) * f,
                                        j * f:(j + 1) * f].mean()
    return out


def mse_loops(a, b):
    total = 0.0
    for av, bv in zip(a.ravel(), b.ravel()):
        total += (av - bv) ** 2
    return total / a.size


def bce_loops(p, y, eps=1e-7):
    total = 0.0
    for pv, yv in zip(p.ravel(), y.ravel()):
        pv = min(max(pv, eps), 1.0 - eps)
        total += -yv * math.log(pv) - (1.0 - yv) * math.log(1.0 - pv)
    return total / p.size


def confusion_loops(pred, ref):
    tp = fp = tn = fn = 0
    for pv, rv in zip(pred.ravel(), ref.ravel()):
        if pv and rv:
            tp += 1
        elif pv and not rv:
            fp += 1
        elif not pv and rv:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn


def flood_fill_components(m):
    """8-connected labeling by recursive scanline flood fill.

    Returns (label_map, n) with ids in raster order of first pixel.
    """
    m = np.asarray(m)
    H, W = m.shape
    labels = np.zeros((H, W), dtype=int)
    nid = 0
    for r0 in range(H):
        for c0 in range(W):
            if m[r0, c0] and labels[r0, c0] == 0:
                nid += 1
                stack = [(r0, c0)]
                labels[r0, c0] = nid
                while stack:
                    r, c = stack.pop()
                    for dr in (-1, 0, 1):
                        for dc in (-1, 0, 1):
                            rr, cc = r + dr, c + dc
                            if (0 <= rr < H and 0 <= cc < W and m[rr, cc]
                                    and labels[rr, cc] == 0):
                                labels[rr, cc] = nid
                                stack.append((rr, cc))
    return labels, nid


def pixel_sets(labels, n):
    return [frozenset((int(r), int(c)) for r, c in np.argwhere(labels == i))
            for i in range(1, n + 1)]


def all_pairs_matching(ref_sets, seg_sets, t):
    """Exhaustive matching decisions over every (ref, seg) index pair."""
    matched = set()
    errors = {}
    for i, ro in enumerate(ref_sets):
        for j, so in enumerate(seg_sets):
            inter = len(ro & so)
            e_os = 1.0 - inter / len(ro)
            e_us = 1.0 - inter / len(so)
            errors[(i, j)] = (e_os, e_us)
            if e_os <= t and e_us <= t:
                matched.add((i, j))
    return matched, errors


# --- independent Moore tracer (padded-array variant) -----------------------

_NB_CCW = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1),
           (0, -1)]


def moore_trace_padded(mask):
    """Boundary walk on a 1-padded copy; structured differently from the
    package tracer but following the same Moore-neighbor definition."""
    obj = np.pad(np.asarray(mask, dtype=bool), 1)
    start = None
    for y in range(obj.shape[0]):
        for x in range(obj.shape[1]):
            if obj[y, x]:
                start = (y, x)
                break
        if start:
            break
    if start is None:
        return []
    b = 0
    p = start
    contour = []
    visited_states = set()
    while True:
        contour.append((p[0] - 1, p[1] - 1))
        found = False
        for i in range(8):
            idx = (b + i) % 8
            dy, dx = _NB_CCW[idx]
            q = (p[0] + dy, p[1] + dx)
            if obj[q[0], q[1]]:
                state = (p, idx)
                if state in visited_states:
                    found = False
                    break
                visited_states.add(state)
                p = q
                b = (idx + 5) % 8
                found = True
                break
        if not found:
            break
        if p == start and len(contour) > 1 and (p, b) in visited_states:
            break
    return contour


def chain_length(points, closed=True):
    if len(points) <= 1:
        return 1.0
    pts = list(points)
    if closed and pts[0] != pts[-1]:
        pts.append(pts[0])
    return sum(math.hypot(a[0] - b[0], a[1] - b[1])
               for a, b in zip(pts[:-1], pts[1:]))


def angular_chain_perimeter(mask):
    """Perimeter of a convex blob: boundary pixels ordered by angle around
    the centroid, chain-metric length of the resulting loop."""
    mask = np.asarray(mask, dtype=bool)
    H, W = mask.shape
    boundary = []
    for r, c in np.argwhere(mask):
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            rr, cc = r + dr, c + dc
            if not (0 <= rr < H and 0 <= cc < W) or not mask[rr, cc]:
                boundary.append((int(r), int(c)))
                break
    cy = sum(p[0] for p in boundary) / len(boundary)
    cx = sum(p[1] for p in boundary) / len(boundary)
    boundary.sort(key=lambda p: math.atan2(p[0] - cy, p[1] - cx))
    return chain_length(boundary, closed=True)


def rasterized_disc(radius, pad=3):
    n = 2 * radius + 1 + 2 * pad
    yy, xx = np.mgrid[:n, :n]
    c = radius + pad
    return ((yy - c) ** 2 + (xx - c) ** 2 <= radius * radius).astype(np.uint8)


def random_blob_map(rng, h, w, density=0.5):
    """Random mix of rectangles, discs and salt pixels."""
    m = np.zeros((h, w), dtype=np.uint8)
    for _ in range(rng.integers(0, 4)):
        r0 = rng.integers(0, h)
        c0 = rng.integers(0, w)
        rh = rng.integers(1, max(2, h // 3))
        rw = rng.integers(1, max(2, w // 3))
        m[r0:r0 + rh, c0:c0 + rw] = 1
    for _ in range(rng.integers(0, 3)):
        cy, cx = rng.integers(0, h), rng.integers(0, w)
        r = rng.integers(1, max(2, min(h, w) // 4))
        yy, xx = np.mgrid[:h, :w]
        m[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = 1
    salt = rng.random((h, w)) < 0.02 * density
    m[salt] = 1
    return m
