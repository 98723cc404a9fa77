"""Versioned little-endian binary dump of a channel set.

Layout: magic ``b"CFMM"``, u32 version, u32 ``M, N, K, N_T``, then
row-major f64 arrays ``beta (M,K)``, ``A (M,K)``, ``Re H``, ``Im H``,
``Re Z``, ``Im Z`` (each ``(N_T, M, K, N)``, ``Z`` the standardized pilot
noise) and the two scalars ``noise_ap``, ``noise_ue``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .sim import ChannelSet

MAGIC = b"CFMM"
VERSION = 1
_HEADER = struct.Struct("<4s5I")
_F64 = np.dtype("<f8")


def dumps_channels(ch: ChannelSet) -> bytes:
    M, K = ch.beta.shape
    N_T, _, _, N = ch.H.shape
    Z = ch.pilot_noise if ch.pilot_noise is not None else np.zeros_like(ch.H)
    parts = [_HEADER.pack(MAGIC, VERSION, M, N, K, N_T)]
    for arr in (ch.beta, ch.A, ch.H.real, ch.H.imag, Z.real, Z.imag,
                np.array([ch.noise_ap, ch.noise_ue])):
        parts.append(np.ascontiguousarray(arr, dtype=_F64).tobytes())
    return b"".join(parts)


def loads_channels(buf: bytes) -> ChannelSet:
    if len(buf) < _HEADER.size:
        raise ValueError("truncated channel dump")
    magic, version, M, N, K, N_T = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported dump version {version}")
    shapes = [(M, K), (M, K)] + [(N_T, M, K, N)] * 4 + [(2,)]
    need = _HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(buf) != need:
        raise ValueError(f"dump has {len(buf)} bytes, expected {need}")
    arrays, offset = [], _HEADER.size
    for shape in shapes:
        n = int(np.prod(shape))
        arrays.append(np.frombuffer(buf, _F64, n, offset).reshape(shape).astype(float))
        offset += 8 * n
    beta, A, hr, hi, zr, zi, noise = arrays
    return ChannelSet(beta, A.astype(np.int64), hr + 1j * hi, float(noise[0]), float(noise[1]),
                      zr + 1j * zi)


def save_channels(path, ch: ChannelSet) -> None:
    Path(path).write_bytes(dumps_channels(ch))


def load_channels(path) -> ChannelSet:
    return loads_channels(Path(path).read_bytes())
