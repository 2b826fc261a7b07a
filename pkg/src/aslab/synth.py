"""Synthetic building scenes: image + clean label pairs.

Scenes hold rotated rectangles, L-shapes and bars on a textured background
with road/blob distractors. Occluders (tree discs, shadow strips) corrupt
the image only; labels always show the intact building footprints.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, asdict

import numpy as np

from .tensor import GeometryError


class GenerationError(RuntimeError):
    """Scene could not be assembled within the retry budget."""


@dataclass
class SceneConfig:
    size: int = 64
    channels: int = 1
    n_buildings_lo: int = 2
    n_buildings_hi: int = 6
    min_separation: int = 2
    occluder_density: float = 0.5
    background_gray: float = 0.25
    building_gray_lo: float = 0.65
    building_gray_hi: float = 0.85
    contrast: float = 1.0
    noise_sigma: float = 0.04
    n_roads_hi: int = 2
    n_blobs_hi: int = 3
    tree_gray: float = 0.25        # matches the background: camouflage
    shadow_factor: float = 0.55
    building_scale: float = 1.0    # multiplies all footprint dimensions
    include_discs_in_labels: bool = False

    ROAD_GRAY = 0.40
    BLOB_GRAY = 0.45

    def separable_threshold(self) -> float:
        """Midpoint of the gap between distractor and building intensities."""
        darkest_building = (self.background_gray
                            + self.contrast * (self.building_gray_lo
                                               - self.background_gray))
        return 0.5 * (self.BLOB_GRAY + darkest_building)


@dataclass
class Sample:
    image: np.ndarray          # [C,H,W] float64 in [0,1]
    label: np.ndarray          # [H,W] uint8 in {0,1}
    seed: int
    buildings: tuple = ()      # (kind, mask) metadata, not persisted


def _grid(size):
    return np.mgrid[0:size, 0:size].astype(float)


def _rot_rect_mask(size, cy, cx, hh, hw, angle) -> np.ndarray:
    yy, xx = _grid(size)
    dy, dx = yy - cy, xx - cx
    ca, sa = np.cos(angle), np.sin(angle)
    ry = dy * ca + dx * sa
    rx = -dy * sa + dx * ca
    return (np.abs(ry) <= hh) & (np.abs(rx) <= hw)


def _disc_mask(size, cy, cx, r) -> np.ndarray:
    yy, xx = _grid(size)
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    out = mask.copy()
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            if dr == 0 and dc == 0:
                continue
            shifted = np.zeros_like(mask)
            src = mask[max(0, -dr):mask.shape[0] - max(0, dr),
                       max(0, -dc):mask.shape[1] - max(0, dc)]
            shifted[max(0, dr):mask.shape[0] - max(0, -dr),
                    max(0, dc):mask.shape[1] - max(0, -dc)] = src
            out |= shifted
    return out


def _sample_building(rng, size, scale=1.0):
    """Random building mask; returns (kind, mask) or None if degenerate."""
    kind = rng.choice(["rect", "rect", "lshape", "bar"])
    margin = 4
    reach = 6 * scale
    cy = rng.uniform(margin + reach, size - margin - reach)
    cx = rng.uniform(margin + reach, size - margin - reach)
    angle = rng.uniform(0.0, np.pi)
    if kind == "rect":
        w = rng.integers(8, 13) * scale
        h = w + rng.integers(4, 9) * scale
        mask = _rot_rect_mask(size, cy, cx, h / 2.0, w / 2.0, angle)
    elif kind == "bar":
        long = rng.integers(18, 27) * scale
        thick = rng.integers(4, 7) * scale
        mask = _rot_rect_mask(size, cy, cx, thick / 2.0, long / 2.0, angle)
    else:
        w1, h1 = rng.integers(7, 11) * scale, rng.integers(12, 19) * scale
        w2, h2 = rng.integers(12, 19) * scale, rng.integers(7, 11) * scale
        off = rng.uniform(2.0, 4.0) * scale
        m1 = _rot_rect_mask(size, cy - off, cx - off, h1 / 2.0, w1 / 2.0, angle)
        m2 = _rot_rect_mask(size, cy + off, cx + off, h2 / 2.0, w2 / 2.0, angle)
        mask = m1 | m2
    if mask.sum() < 9:
        return None
    # reject footprints clipped by the frame; labels must show whole buildings
    if (mask[0, :].any() or mask[-1, :].any()
            or mask[:, 0].any() or mask[:, -1].any()):
        return None
    return kind, mask


def _paint_occluder(rng, img, mask, cfg: SceneConfig, size):
    ys, xs = np.nonzero(mask)
    i = rng.integers(len(ys))
    scale = cfg.building_scale
    if rng.random() < 0.5:
        r = rng.integers(3, 6) * scale
        occ = _disc_mask(size, ys[i], xs[i], r)
        img[occ] = cfg.tree_gray
    else:
        angle = rng.uniform(0.0, np.pi)
        occ = _rot_rect_mask(size, ys[i], xs[i],
                             rng.uniform(2.0, 3.5) * scale,
                             rng.uniform(8.0, 14.0) * scale, angle)
        img[occ] *= cfg.shadow_factor


def generate_scene(cfg: SceneConfig, seed: int) -> Sample:
    """Deterministic scene for (cfg, seed)."""
    size = cfg.size
    if size % 32:
        raise GeometryError(f"scene size {size} must divide by 32")
    rng = np.random.default_rng(seed)
    n_target = int(rng.integers(cfg.n_buildings_lo, cfg.n_buildings_hi + 1))

    label = np.zeros((size, size), dtype=np.uint8)
    occupied = np.zeros((size, size), dtype=bool)
    buildings = []
    for _ in range(n_target):
        placed = False
        for _ in range(100):
            got = _sample_building(rng, size, cfg.building_scale)
            if got is None:
                continue
            kind, mask = got
            if (_dilate(mask, cfg.min_separation) & occupied).any():
                continue
            occupied |= mask
            label[mask] = 1
            buildings.append((kind, mask))
            placed = True
            break
        if not placed:
            break
    if len(buildings) < cfg.n_buildings_lo:
        raise GenerationError(
            f"placed only {len(buildings)} of {cfg.n_buildings_lo} minimum "
            f"buildings (seed {seed})")

    if cfg.include_discs_in_labels:
        for _ in range(int(rng.integers(1, 3))):
            for _ in range(100):
                r = rng.integers(4, 8) * cfg.building_scale
                cy = rng.uniform(r + 2, size - r - 3)
                cx = rng.uniform(r + 2, size - r - 3)
                mask = _disc_mask(size, cy, cx, r)
                if (_dilate(mask, cfg.min_separation) & occupied).any():
                    continue
                occupied |= mask
                label[mask] = 1
                buildings.append(("disc", mask))
                break

    img = np.full((size, size), cfg.background_gray)
    for _ in range(int(rng.integers(0, cfg.n_roads_hi + 1))):
        angle = rng.uniform(0.0, np.pi)
        road = _rot_rect_mask(size, rng.uniform(0, size), rng.uniform(0, size),
                              rng.uniform(1.0, 1.8), size, angle)
        img[road] = cfg.ROAD_GRAY
    for _ in range(int(rng.integers(0, cfg.n_blobs_hi + 1))):
        blob = _disc_mask(size, rng.uniform(0, size), rng.uniform(0, size),
                          rng.integers(2, 6))
        img[blob] = cfg.BLOB_GRAY

    for kind, mask in buildings:
        gray = rng.uniform(cfg.building_gray_lo, cfg.building_gray_hi)
        img[mask] = cfg.background_gray + cfg.contrast * (gray
                                                          - cfg.background_gray)
    for kind, mask in buildings:
        if rng.random() < cfg.occluder_density:
            _paint_occluder(rng, img, mask, cfg, size)

    if cfg.noise_sigma > 0:
        img = img + rng.normal(0.0, cfg.noise_sigma, img.shape)
    img = np.clip(img, 0.0, 1.0)
    image = np.repeat(img[None], cfg.channels, axis=0) if cfg.channels > 1 \
        else img[None]
    return Sample(image=image, label=label, seed=seed,
                  buildings=tuple(buildings))


def generate_dataset(cfg: SceneConfig, n: int, seed: int) -> list:
    if n < 1:
        raise ValueError("dataset size must be >= 1")
    return [generate_scene(cfg, seed + i) for i in range(n)]


# --- PGM / PPM storage ----------------------------------------------------

def write_pgm(path: str, arr: np.ndarray):
    """8-bit binary PGM (single channel) or PPM (three channels)."""
    a = np.asarray(arr, dtype=np.uint8)
    if a.ndim == 2:
        header = f"P5\n{a.shape[1]} {a.shape[0]}\n255\n"
    elif a.ndim == 3 and a.shape[2] == 3:
        header = f"P6\n{a.shape[1]} {a.shape[0]}\n255\n"
    else:
        raise ValueError(f"cannot store array of shape {a.shape}")
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(a.tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    m = re.match(rb"(P[56])\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not m:
        raise ValueError(f"{path}: not a binary PGM/PPM file")
    kind, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), \
        int(m.group(4))
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    channels = 3 if kind == b"P6" else 1
    pix = np.frombuffer(data[m.end():], dtype=np.uint8)
    if pix.size != w * h * channels:
        raise ValueError(f"{path}: payload size mismatch")
    return pix.reshape((h, w, 3)) if channels == 3 else pix.reshape((h, w))


def _img_name(i: int, channels: int) -> str:
    return f"img_{i:05d}.ppm" if channels == 3 else f"img_{i:05d}.pgm"


def write_dataset(samples, out_dir: str, cfg: SceneConfig = None):
    os.makedirs(out_dir, exist_ok=True)
    manifest = []
    for i, s in enumerate(samples):
        c = s.image.shape[0]
        img8 = np.round(s.image * 255.0).astype(np.uint8)
        arr = img8[0] if c == 1 else np.moveaxis(img8, 0, 2)
        write_pgm(os.path.join(out_dir, _img_name(i, c)), arr)
        write_pgm(os.path.join(out_dir, f"lbl_{i:05d}.pgm"),
                  s.label * np.uint8(255))
        manifest.append(f"{i},{s.seed}")
    with open(os.path.join(out_dir, "manifest.txt"), "w") as f:
        f.write("\n".join(manifest) + "\n")
    if cfg is not None:
        with open(os.path.join(out_dir, "config.txt"), "w") as f:
            for key, val in asdict(cfg).items():
                f.write(f"{key} = {val}\n")


def read_dataset(in_dir: str) -> list:
    man_path = os.path.join(in_dir, "manifest.txt")
    try:
        with open(man_path) as f:
            entries = [line.split(",") for line in f.read().split() if line]
    except OSError as e:
        raise OSError(f"cannot read dataset manifest {man_path}: {e}") from e
    samples = []
    for idx_s, seed_s in entries:
        i, seed = int(idx_s), int(seed_s)
        img_path = os.path.join(in_dir, _img_name(i, 1))
        if not os.path.exists(img_path):
            img_path = os.path.join(in_dir, _img_name(i, 3))
        raw = read_pgm(img_path).astype(np.float64) / 255.0
        image = raw[None] if raw.ndim == 2 else np.moveaxis(raw, 2, 0)
        lbl = read_pgm(os.path.join(in_dir, f"lbl_{i:05d}.pgm"))
        samples.append(Sample(image=image, label=(lbl > 127).astype(np.uint8),
                              seed=seed))
    return samples
