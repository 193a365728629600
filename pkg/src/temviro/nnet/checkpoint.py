"""Versioned binary checkpoints with a whole-file checksum.

Layout (all integers little-endian):

    magic  b"TVCP"
    u32    format version (1)
    u32 x5 config: encoder_depth, first_filters, in_channels,
                   num_classes, input_size
    u32    parameter record count
    per record:
        u16    name length, then ASCII name
        u8     is_weight flag
        u8     ndim, then ndim x u32 dims
        f32[]  value, then first moment, then second moment (raw LE)
    u64    Adam step counter
    u32    CRC32 of every preceding byte

Save/load round-trips are bit-exact: values are stored as raw float32.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .unet import UNet, UNetConfig, build_unet

MAGIC = b"TVCP"
VERSION = 1


def save_checkpoint(net: UNet, path: str) -> None:
    if net.dtype != np.float32:
        raise ValueError("checkpoints store float32 parameters; train in float32")
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    cfg = net.cfg
    chunks.append(struct.pack(
        "<5I", cfg.encoder_depth, cfg.first_filters, cfg.in_channels,
        cfg.num_classes, cfg.input_size,
    ))
    params = net.parameters()
    chunks.append(struct.pack("<I", len(params)))
    for p in params:
        name = p.name.encode("ascii")
        chunks.append(struct.pack("<H", len(name)) + name)
        chunks.append(struct.pack("<BB", int(p.is_weight), p.value.ndim))
        chunks.append(struct.pack(f"<{p.value.ndim}I", *p.value.shape))
        for arr in (p.value, p.m, p.v):
            chunks.append(arr.astype("<f4", copy=False).tobytes())
    chunks.append(struct.pack("<Q", net.step))
    body = b"".join(chunks)
    with open(path, "wb") as f:
        f.write(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str) -> UNet:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4:
        raise ValueError(f"{path}: truncated checkpoint")
    body, stored_crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != stored_crc:
        raise ValueError(f"{path}: checksum mismatch, file corrupt")
    r = _Reader(body, path)
    if r.take(4) != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    depth, first, in_ch, n_cls, in_size = r.unpack("<5I")
    cfg = UNetConfig(encoder_depth=depth, first_filters=first, in_channels=in_ch,
                     num_classes=n_cls, input_size=in_size)
    net = build_unet(cfg, seed=0, dtype=np.float32)
    by_name = {p.name: p for p in net.parameters()}
    (n_params,) = r.unpack("<I")
    if n_params != len(by_name):
        raise ValueError(f"{path}: parameter count mismatch")
    for _ in range(n_params):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("ascii")
        is_weight, ndim = r.unpack("<BB")
        dims = r.unpack(f"<{ndim}I")
        p = by_name.get(name)
        if p is None:
            raise ValueError(f"{path}: unknown parameter {name!r}")
        if tuple(p.value.shape) != dims or bool(is_weight) != p.is_weight:
            raise ValueError(f"{path}: shape mismatch for {name!r}")
        n = int(np.prod(dims)) if ndim else 1
        for attr in ("value", "m", "v"):
            arr = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims).copy()
            getattr(p, attr)[...] = arr
    (net.step,) = r.unpack("<Q")
    if r.pos != len(body):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return net
