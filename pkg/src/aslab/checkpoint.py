"""Binary checkpoint format.

Layout: magic "ASLN", u32 LE version (=1), u32 LE tensor count; per tensor:
u16 LE name length, name bytes, u8 rank, rank x u32 LE dims, float32 LE
payload; trailing CRC32 (u32 LE) over everything before it.

Values are stored as float32, so parameters round-trip exactly only after
the first save/load quantization; save -> load -> save is byte-identical.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"ASLN"
VERSION = 1


class CheckpointFormatError(ValueError):
    """Malformed checkpoint file; message carries the byte offset."""


@dataclass
class Checkpoint:
    version: int = VERSION
    tensors: dict = field(default_factory=dict)  # name -> float64 ndarray

    @staticmethod
    def capture(model, disc, opt_s, opt_d, epoch: int, seed: int) -> "Checkpoint":
        t = {}
        t["meta/epoch"] = np.array([float(epoch)])
        t["meta/seed"] = _encode_seed(seed)
        t["meta/arch"] = _encode_arch(model, disc)
        for name, p in model.named_parameters():
            t[f"seg/{name}"] = p.data.copy()
        if opt_s is not None:
            t.update({k: np.array(v, copy=True) for k, v in
                      opt_s.state_tensors("opt_seg").items()})
        if disc is not None:
            for name, p in disc.named_parameters():
                t[f"disc/{name}"] = p.data.copy()
            if opt_d is not None:
                t.update({k: np.array(v, copy=True) for k, v in
                          opt_d.state_tensors("opt_disc").items()})
        return Checkpoint(tensors=t)

    @property
    def epoch(self) -> int:
        return int(self.tensors["meta/epoch"][0])

    @property
    def seed(self) -> int:
        return _decode_seed(self.tensors["meta/seed"])

    def restore_into(self, model, disc=None, opt_s=None, opt_d=None):
        model.load_named(self.tensors, prefix="seg/")
        if opt_s is not None:
            opt_s.load_state_tensors("opt_seg", self.tensors)
        if disc is not None:
            disc.load_named(self.tensors, prefix="disc/")
            if opt_d is not None:
                opt_d.load_state_tensors("opt_disc", self.tensors)


def _encode_seed(seed: int) -> np.ndarray:
    if not 0 <= seed < 2 ** 64:
        raise ValueError("seed must fit in 64 bits")
    return np.array([(seed >> s) & 0xFFFF for s in (0, 16, 32, 48)], float)


def _decode_seed(arr) -> int:
    return sum(int(v) << s for v, s in zip(arr, (0, 16, 32, 48)))


def _encode_arch(model, disc) -> np.ndarray:
    cfg = model.cfg
    vals = [cfg.input_channels, cfg.base_width, cfg.norm_groups,
            1 if model.use_sr else 0]
    widths = list(disc.widths) if disc is not None else []
    vals.append(len(widths))
    vals.extend(widths)
    return np.array(vals, float)


def build_models_from_checkpoint(ckpt: Checkpoint):
    """Reconstruct (model, disc or None) with the stored architecture/params."""
    from .models import EDFCNConfig, SegmentationModel, ShapeDiscriminator

    arch = ckpt.tensors["meta/arch"]
    cfg = EDFCNConfig(input_channels=int(arch[0]), base_width=int(arch[1]),
                      norm_groups=int(arch[2]))
    model = SegmentationModel(cfg, use_sr=bool(int(arch[3])),
                              rng=np.random.default_rng(0))
    n_widths = int(arch[4])
    disc = None
    if n_widths:
        widths = tuple(int(v) for v in arch[5:5 + n_widths])
        disc = ShapeDiscriminator(widths=widths, rng=np.random.default_rng(0))
    ckpt.restore_into(model, disc)
    return model, disc


def serialize_checkpoint(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", ckpt.version),
             struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name!r}")
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim > 0xFF:
            raise ValueError("tensor rank exceeds format limit")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.astype("<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(ckpt: Checkpoint, path: str):
    data = serialize_checkpoint(ckpt)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(
                f"truncated checkpoint: needed {n} bytes for {what} "
                f"at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def deserialize_checkpoint(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointFormatError("bad magic at offset 0")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointFormatError(f"unknown version {version} at offset 4")
    count = r.u32("tensor count")
    tensors = {}
    for _ in range(count):
        name_off = r.pos
        (nlen,) = struct.unpack("<H", r.take(2, "name length"))
        try:
            name = r.take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointFormatError(
                f"bad tensor name at offset {name_off}") from e
        (rank,) = struct.unpack("<B", r.take(1, "rank"))
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, "dims"))
        n_elem = 1
        for d in dims:
            n_elem *= d
        payload = r.take(4 * n_elem, f"payload of {name!r}")
        arr = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        tensors[name] = arr.reshape(dims)
    crc_off = r.pos
    (crc,) = struct.unpack("<I", r.take(4, "crc32"))
    if r.pos != len(data):
        raise CheckpointFormatError(
            f"trailing garbage at offset {r.pos}")
    if crc != zlib.crc32(data[:crc_off]):
        raise CheckpointFormatError(f"crc mismatch at offset {crc_off}")
    return Checkpoint(version=version, tensors=tensors)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    return deserialize_checkpoint(data)
