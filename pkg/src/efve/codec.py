"""Bit-exact serialization of a video encoding (.efve container).

Layout, little-endian throughout:

    offset  size  field
    0       4     magic b"EFVE"
    4       2     version (u16, currently 1)
    6       2     flags (u16; bit 0: trailing tail-parameter blob present)
    8       4     header CRC32 (computed with this field zeroed, covering
                  everything from offset 0 to the end of the descriptor)
    12      2     n_layers (u16)
    14      2     dim_per_layer (u16)
    16      4     frame_count (u32)
    20      4     fps (f32)
    24      1     quantization mode (0 = f16, 1 = f32 debug)
    25      1     reserved (0)
    26      2     index-table length (u16, must be 32)
    28      4*n   index table: (layer u16, channel u16) per entry, in offset
                  order (defines the per-frame record layout)
    ...     2     descriptor length (u16)
    ...     var   descriptor: UTF-8 JSON (roll convention etc.)
    ...     4*L*D identity latent, f32 row-major
    ...     var   frames: frame_count records of [yaw, pitch, roll, a0..a31],
                  each scalar f16 (70 bytes/frame) or f32 in debug mode
    ...     4+var optional tail blob: u32 byte length + raw bytes (iff flag)

Angles are degrees; offsets are raw style-space units.  f16 is the only mode
consistent with a 35-parameter frame in 70 bytes; out-of-range values clamp
to the largest finite f16 and are recorded as warnings.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import BitstreamError, ValidationError

MAGIC = b"EFVE"
VERSION = 1
FLAG_THETA = 0x0001
QUANT_F16 = 0
QUANT_F32 = 1
INDEX_COUNT = 32
PARAMS_PER_FRAME = 3 + INDEX_COUNT

_F16_MAX = 65504.0


@dataclass
class VideoEncoding:
    n_layers: int
    dim_per_layer: int
    fps: float
    quant_mode: int  # QUANT_F16 | QUANT_F32
    index_table: list  # 32 (layer, channel) pairs in offset order
    id_latent: np.ndarray  # (n_layers, dim) float
    frames: np.ndarray  # (frame_count, 35): yaw, pitch, roll, offsets
    descriptor: dict = field(default_factory=dict)
    theta_blob: bytes | None = None
    clamp_warnings: list = field(default_factory=list)

    def validate(self) -> None:
        if len(self.index_table) != INDEX_COUNT:
            raise ValidationError(
                f"index table must have exactly {INDEX_COUNT} entries "
                f"(got {len(self.index_table)}); the 70-byte frame record allows no other size"
            )
        lat = np.asarray(self.id_latent, dtype=np.float64)
        if lat.shape != (self.n_layers, self.dim_per_layer):
            raise ValidationError(
                f"latent shape {lat.shape} != ({self.n_layers}, {self.dim_per_layer})"
            )
        fr = np.asarray(self.frames, dtype=np.float64)
        if fr.ndim != 2 or fr.shape[1] != PARAMS_PER_FRAME:
            raise ValidationError(f"frames must be (T, {PARAMS_PER_FRAME}), got {fr.shape}")
        if not np.all(np.isfinite(lat)) or not np.all(np.isfinite(fr)):
            raise ValidationError("non-finite values in encoding")
        if self.quant_mode not in (QUANT_F16, QUANT_F32):
            raise ValidationError(f"unknown quantization mode {self.quant_mode}")
        for pair in self.index_table:
            layer, chan = pair
            if layer < 0 or chan < 0 or layer > 0xFFFF or chan > 0xFFFF:
                raise ValidationError(f"index {pair} outside u16 range")

    @property
    def frame_count(self) -> int:
        return int(np.asarray(self.frames).shape[0])

    def bytes_per_frame(self) -> int:
        return PARAMS_PER_FRAME * (2 if self.quant_mode == QUANT_F16 else 4)

    def quantized_frames(self) -> np.ndarray:
        """Frame parameters as the decoder will see them."""
        fr = np.asarray(self.frames, dtype=np.float64)
        if self.quant_mode == QUANT_F16:
            return np.clip(fr, -_F16_MAX, _F16_MAX).astype(np.float16).astype(np.float64)
        return fr.astype(np.float32).astype(np.float64)


def _pack_header(enc: VideoEncoding) -> bytes:
    desc = json.dumps(enc.descriptor, sort_keys=True).encode("utf-8")
    if len(desc) > 0xFFFF:
        raise ValidationError("descriptor too large")
    flags = FLAG_THETA if enc.theta_blob is not None else 0
    head = bytearray()
    head += MAGIC
    head += struct.pack("<HH", VERSION, flags)
    crc_at = len(head)
    head += b"\x00\x00\x00\x00"
    head += struct.pack(
        "<HHIfBB",
        enc.n_layers,
        enc.dim_per_layer,
        enc.frame_count,
        float(enc.fps),
        enc.quant_mode,
        0,
    )
    head += struct.pack("<H", len(enc.index_table))
    for layer, chan in enc.index_table:
        head += struct.pack("<HH", layer, chan)
    head += struct.pack("<H", len(desc))
    head += desc
    crc = zlib.crc32(bytes(head)) & 0xFFFFFFFF
    head[crc_at : crc_at + 4] = struct.pack("<I", crc)
    return bytes(head)


def encode_bitstream(enc: VideoEncoding) -> bytes:
    enc.validate()
    out = bytearray(_pack_header(enc))
    lat = np.asarray(enc.id_latent, dtype="<f4")
    out += lat.tobytes(order="C")

    fr = np.asarray(enc.frames, dtype=np.float64)
    enc.clamp_warnings = []
    if enc.quant_mode == QUANT_F16:
        over = np.abs(fr) > _F16_MAX
        if over.any():
            for t, k in zip(*np.nonzero(over)):
                enc.clamp_warnings.append(
                    f"frame {t} parameter {k}: {fr[t, k]:g} clamped to f16 range"
                )
            fr = np.clip(fr, -_F16_MAX, _F16_MAX)
        out += fr.astype("<f2").tobytes(order="C")
    else:
        out += fr.astype("<f4").tobytes(order="C")

    if enc.theta_blob is not None:
        out += struct.pack("<I", len(enc.theta_blob))
        out += enc.theta_blob
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str, frame_index=None) -> bytes:
        if self.pos + n > len(self.data):
            raise BitstreamError(
                f"truncated while reading {what}", offset=self.pos, frame_index=frame_index
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_bitstream(data: bytes) -> VideoEncoding:
    rd = _Reader(data)
    magic = rd.take(4, "magic")
    if magic != MAGIC:
        raise BitstreamError(f"bad magic {magic!r}", offset=0)
    version, flags = rd.unpack("<HH", "version/flags")
    if version != VERSION:
        raise BitstreamError(f"unsupported version {version}", offset=4)
    (crc_stored,) = rd.unpack("<I", "header crc")

    n_layers, dim, frame_count, fps, quant, _ = rd.unpack("<HHIfBB", "geometry")
    if quant not in (QUANT_F16, QUANT_F32):
        raise BitstreamError(f"unknown quantization mode {quant}", offset=24)
    (idx_count,) = rd.unpack("<H", "index-table length")
    if idx_count != INDEX_COUNT:
        raise BitstreamError(
            f"index table length {idx_count} != {INDEX_COUNT}", offset=26
        )
    table = []
    for _ in range(idx_count):
        table.append(tuple(rd.unpack("<HH", "index table")))
    (desc_len,) = rd.unpack("<H", "descriptor length")
    desc_raw = rd.take(desc_len, "descriptor")
    header_end = rd.pos

    head = bytearray(data[:header_end])
    head[8:12] = b"\x00\x00\x00\x00"
    crc_actual = zlib.crc32(bytes(head)) & 0xFFFFFFFF
    if crc_actual != crc_stored:
        raise BitstreamError(
            f"header CRC mismatch (stored {crc_stored:#010x}, computed {crc_actual:#010x})",
            offset=8,
        )
    try:
        descriptor = json.loads(desc_raw.decode("utf-8")) if desc_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BitstreamError(f"bad descriptor: {exc}", offset=header_end - desc_len)

    lat_bytes = rd.take(4 * n_layers * dim, "identity latent")
    id_latent = np.frombuffer(lat_bytes, dtype="<f4").reshape(n_layers, dim).astype(np.float64)

    scalar = 2 if quant == QUANT_F16 else 4
    per_frame = PARAMS_PER_FRAME * scalar
    frames = np.empty((frame_count, PARAMS_PER_FRAME), dtype=np.float64)
    for t in range(frame_count):
        raw = rd.take(per_frame, "frame record", frame_index=t)
        dt = "<f2" if quant == QUANT_F16 else "<f4"
        frames[t] = np.frombuffer(raw, dtype=dt).astype(np.float64)

    theta = None
    if flags & FLAG_THETA:
        (blob_len,) = rd.unpack("<I", "tail blob length")
        theta = rd.take(blob_len, "tail blob")
    if rd.pos != len(data):
        raise BitstreamError(f"{len(data) - rd.pos} trailing bytes", offset=rd.pos)

    return VideoEncoding(
        n_layers=n_layers,
        dim_per_layer=dim,
        fps=float(fps),
        quant_mode=quant,
        index_table=table,
        id_latent=id_latent,
        frames=frames,
        descriptor=descriptor,
        theta_blob=theta,
    )


def header_summary(data: bytes) -> dict:
    """Container summary for the inspect command (validates the full stream)."""
    enc = decode_bitstream(data)
    return {
        "magic": "EFVE",
        "version": VERSION,
        "n_layers": enc.n_layers,
        "dim_per_layer": enc.dim_per_layer,
        "frame_count": enc.frame_count,
        "fps": enc.fps,
        "quantization": "f16" if enc.quant_mode == QUANT_F16 else "f32",
        "bytes_per_frame": enc.bytes_per_frame(),
        "index_table": [list(p) for p in enc.index_table],
        "descriptor": enc.descriptor,
        "theta_bytes": len(enc.theta_blob) if enc.theta_blob is not None else 0,
        "total_bytes": len(data),
    }


def pack_theta(theta: np.ndarray) -> bytes:
    arr = np.asarray(theta, dtype="<f4").reshape(-1)
    return struct.pack("<I", arr.size) + arr.tobytes()


def unpack_theta(blob: bytes) -> np.ndarray:
    if len(blob) < 4:
        raise BitstreamError("tail blob too short", offset=0)
    (n,) = struct.unpack("<I", blob[:4])
    if len(blob) != 4 + 4 * n:
        raise BitstreamError(f"tail blob length mismatch (count {n})", offset=4)
    return np.frombuffer(blob[4:], dtype="<f4").astype(np.float64)
