"""Mono PCM16 wav files, read and written directly.

The chunk walk is done by hand rather than through the stdlib wave module
so that malformed files produce errors naming the byte offset, and so the
bytes written are fully pinned down (no library-dependent padding choices).

Float convention: read divides by 32768; write scales by 32768, rounds
half away from zero, and clamps to the int16 range.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .signal import Waveform


class WavFormatError(ValueError):
    pass


def read_wav(path: str | Path) -> Waveform:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: missing RIFF/WAVE header")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(f"{path}: chunk {cid!r} at offset {pos} claims {size} bytes, "
                                 f"file has {len(body)}")
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError(f"{path}: fmt chunk too small ({size} bytes) at offset {pos}")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if fmt is None:
        raise WavFormatError(f"{path}: no fmt chunk")
    if data is None:
        raise WavFormatError(f"{path}: no data chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if audio_format != 1:
        raise WavFormatError(f"{path}: only PCM supported, got format tag {audio_format}")
    if channels != 1:
        raise WavFormatError(f"{path}: only mono supported, got {channels} channels")
    if bits != 16:
        raise WavFormatError(f"{path}: only 16-bit supported, got {bits}")
    if len(data) % 2:
        data = data[:-1]
    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path: str | Path, wave: Waveform) -> None:
    x = np.asarray(wave.samples, dtype=np.float64) * 32768.0
    # round half away from zero, then clamp
    q = np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5))
    q = np.clip(q, -32768, 32767).astype("<i2")
    payload = q.tobytes()
    rate = wave.sample_rate
    block_align = 2
    header = b"".join([
        b"RIFF",
        struct.pack("<I", 36 + len(payload)),
        b"WAVE",
        b"fmt ",
        struct.pack("<IHHIIHH", 16, 1, 1, rate, rate * block_align, block_align, 16),
        b"data",
        struct.pack("<I", len(payload)),
    ])
    Path(path).write_bytes(header + payload)
