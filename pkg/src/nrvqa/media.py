"""Raw video ingest: Y4M / PNG-directory decoding, clip splitting, frame sampling.

All pixel data is decoded to interleaved 8-bit RGB via BT.601 full-range
conversion.  A video of n frames at rate r is partitioned into floor(n/r)
one-second clips; 2L frames per clip are sampled uniformly for the
frame-level feature extractors.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

MIN_FRAME_SIDE = 16

# BT.601 full-range conversion constants.  The inverse (YUV -> RGB) uses the
# customary 1.402 / 1.772 scale factors; the G-row coefficients are derived
# from them exactly so forward and inverse agree in real arithmetic.
_KR, _KG, _KB = 0.299, 0.587, 0.114
_CR_SCALE = 1.402
_CB_SCALE = 1.772
_G_CB = _KB * _CB_SCALE / _KG
_G_CR = _KR * _CR_SCALE / _KG


class MediaError(Exception):
    """Base class for ingest failures."""


class Y4MParseError(MediaError):
    """Malformed Y4M header or frame marker; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class TruncatedPayloadError(MediaError):
    """File ended inside a frame payload; carries the frame index."""

    def __init__(self, frame_index: int):
        super().__init__(f"truncated frame payload at frame index {frame_index}")
        self.frame_index = frame_index


class ShortVideoError(MediaError):
    """Fewer frames than one clip's worth."""


class SamplingError(MediaError):
    """Clip too short for the requested number of samples."""


def _round_half_up(x: np.ndarray | float):
    return np.floor(x + 0.5)


@dataclass(frozen=True, eq=False)
class Frame:
    """One decoded frame: interleaved 8-bit RGB, row-major.

    ``source_yuv`` keeps the decoded 4:4:4 planes (stacked, (h, w, 3)) when
    the frame came from a Y4M stream, so writing back to Y4M is lossless.
    """

    width: int
    height: int
    rgb: np.ndarray  # uint8, shape (height, width, 3)
    index: int
    source_yuv: np.ndarray | None = None

    def __post_init__(self):
        if self.width < MIN_FRAME_SIDE or self.height < MIN_FRAME_SIDE:
            raise ValueError(
                f"frame must be at least {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}, "
                f"got {self.width}x{self.height}"
            )
        if self.rgb.shape != (self.height, self.width, 3):
            raise ValueError(
                f"rgb shape {self.rgb.shape} does not match "
                f"{self.height}x{self.width}x3"
            )
        if self.rgb.dtype != np.uint8:
            raise ValueError("rgb must be uint8")
        self.rgb.setflags(write=False)
        if self.source_yuv is not None:
            if self.source_yuv.shape != self.rgb.shape or self.source_yuv.dtype != np.uint8:
                raise ValueError("source_yuv must be uint8 with the rgb shape")
            self.source_yuv.setflags(write=False)


@dataclass(frozen=True, eq=False)
class LumaPlane:
    """8-bit luma samples, row-major; same dimensions as the source frame."""

    width: int
    height: int
    y: np.ndarray  # uint8, shape (height, width)

    def __post_init__(self):
        if self.y.shape != (self.height, self.width):
            raise ValueError(
                f"luma shape {self.y.shape} does not match {self.height}x{self.width}"
            )
        if self.y.dtype != np.uint8:
            raise ValueError("luma must be uint8")
        self.y.setflags(write=False)


@dataclass(frozen=True, eq=False)
class FrameSequence:
    """Ordered frames plus frame-rate metadata.

    ``frame_rate`` is the integer rate used for clip partitioning; the
    original (possibly fractional) rate is preserved in ``rate_num`` /
    ``rate_den``.
    """

    frames: tuple[Frame, ...]
    frame_rate: int
    rate_num: int
    rate_den: int = 1

    def __post_init__(self):
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")
        if self.rate_den <= 0 or self.rate_num <= 0:
            raise ValueError("rational frame rate must be positive")

    @property
    def frame_count(self) -> int:
        return len(self.frames)


@dataclass(frozen=True, eq=False)
class Clip:
    """One second of consecutive frames."""

    clip_index: int
    frames: tuple[Frame, ...]


@dataclass(frozen=True)
class SamplerConfig:
    """L: half the number of frames sampled per clip (2L total)."""

    half_samples: int = 8

    def __post_init__(self):
        if self.half_samples < 1:
            raise ValueError("half_samples must be >= 1")


# --- Y4M ---------------------------------------------------------------

_HEADER_MAGIC = b"YUV4MPEG2"
_SUPPORTED_CHROMA = {
    "420": "420",
    "420jpeg": "420",
    "420mpeg2": "420",
    "420paldv": "420",
    "444": "444",
}


def _parse_y4m_header(data: bytes) -> tuple[int, int, int, int, str, int]:
    """Return (width, height, rate_num, rate_den, chroma, header_end)."""
    if not data.startswith(_HEADER_MAGIC):
        raise Y4MParseError("missing YUV4MPEG2 magic", 0)
    end = data.find(b"\n")
    if end < 0:
        raise Y4MParseError("unterminated stream header", len(data))
    header = data[len(_HEADER_MAGIC):end].decode("ascii", errors="replace")
    width = height = None
    rate_num = rate_den = None
    chroma = "420"
    pos = len(_HEADER_MAGIC)  # token k starts after k separators
    for token in header.split(" "):
        tag, value = (token[0], token[1:]) if token else ("", "")
        if tag == "W":
            width = _parse_header_int(value, "width", pos)
        elif tag == "H":
            height = _parse_header_int(value, "height", pos)
        elif tag == "F":
            m = re.fullmatch(r"(\d+):(\d+)", value)
            if not m:
                raise Y4MParseError(f"bad frame rate token {token!r}", pos)
            rate_num, rate_den = int(m.group(1)), int(m.group(2))
        elif tag == "C":
            if value not in _SUPPORTED_CHROMA:
                raise Y4MParseError(f"unsupported chroma sampling C{value}", pos)
            chroma = _SUPPORTED_CHROMA[value]
        # I (interlace), A (aspect), X (extension) tokens are ignored
        pos += len(token) + 1
    if width is None or height is None:
        raise Y4MParseError("header is missing W or H", 0)
    if rate_num is None or rate_den is None or rate_num == 0 or rate_den == 0:
        raise Y4MParseError("header is missing a valid F rate", 0)
    return width, height, rate_num, rate_den, chroma, end + 1


def _parse_header_int(value: str, what: str, offset: int) -> int:
    if not value.isdigit() or int(value) <= 0:
        raise Y4MParseError(f"bad {what} token {value!r}", offset)
    return int(value)


def yuv_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    """Full-range BT.601 YUV (uint8 planes) to interleaved uint8 RGB."""
    yf = y.astype(np.float64)
    cbf = cb.astype(np.float64) - 128.0
    crf = cr.astype(np.float64) - 128.0
    r = yf + _CR_SCALE * crf
    g = yf - _G_CB * cbf - _G_CR * crf
    b = yf + _CB_SCALE * cbf
    rgb = np.stack([r, g, b], axis=-1)
    return np.clip(_round_half_up(rgb), 0, 255).astype(np.uint8)


def rgb_to_yuv444(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quantized forward BT.601 conversion (no exactness guarantee)."""
    rf = rgb[..., 0].astype(np.float64)
    gf = rgb[..., 1].astype(np.float64)
    bf = rgb[..., 2].astype(np.float64)
    yf = _KR * rf + _KG * gf + _KB * bf
    cbf = 128.0 + (bf - yf) / _CB_SCALE
    crf = 128.0 + (rf - yf) / _CR_SCALE
    quant = lambda p: np.clip(_round_half_up(p), 0, 255).astype(np.uint8)
    return quant(yf), quant(cbf), quant(crf)


# Offsets tried when the quantized forward conversion does not invert back
# to the source RGB.  Any RGB that came out of yuv_to_rgb has an exact YUV
# preimage within +/-1 of the forward candidate, so searching this fixed
# order makes parse(write(parse(x))) == parse(x) bit-exact.
_PREIMAGE_OFFSETS = sorted(
    (
        (dy, du, dv)
        for dy in (-1, 0, 1)
        for du in (-1, 0, 1)
        for dv in (-1, 0, 1)
    ),
    key=lambda d: (abs(d[0]) + abs(d[1]) + abs(d[2]), d),
)


def rgb_to_yuv444_exact(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """RGB to YUV 4:4:4 such that ``yuv_to_rgb`` recovers ``rgb`` exactly.

    Falls back to the plain forward conversion for pixels with no exact
    8-bit preimage (possible for synthetic RGB that never came from YUV).
    """
    y, cb, cr = rgb_to_yuv444(rgb)
    planes = np.stack([y, cb, cr]).astype(np.int16)
    best = planes.copy()
    unresolved = np.any(yuv_to_rgb(y, cb, cr) != rgb, axis=-1)
    for dy, du, dv in _PREIMAGE_OFFSETS:
        if not unresolved.any():
            break
        cand = np.clip(
            planes + np.array([dy, du, dv], dtype=np.int16)[:, None, None], 0, 255
        ).astype(np.uint8)
        back = yuv_to_rgb(cand[0], cand[1], cand[2])
        fixed = unresolved & np.all(back == rgb, axis=-1)
        if fixed.any():
            best[:, fixed] = cand[:, fixed]
            unresolved &= ~fixed
    out = best.astype(np.uint8)
    return out[0], out[1], out[2]


def parse_y4m(data: bytes) -> FrameSequence:
    """Decode a YUV4MPEG2 byte stream into an RGB FrameSequence.

    Supports 4:2:0 (chroma replicated 2x2) and 4:4:4.  Fractional frame
    rates round to the nearest integer for clip partitioning; the exact
    rational rate is kept in the sequence metadata.
    """
    width, height, rate_num, rate_den, chroma, pos = _parse_y4m_header(data)
    if chroma == "420" and (width % 2 or height % 2):
        raise Y4MParseError("4:2:0 requires even dimensions", 0)
    y_size = width * height
    if chroma == "420":
        c_w, c_h = width // 2, height // 2
    else:
        c_w, c_h = width, height
    c_size = c_w * c_h
    frame_size = y_size + 2 * c_size

    frames: list[Frame] = []
    index = 0
    while pos < len(data):
        marker_end = data.find(b"\n", pos)
        if marker_end < 0 or not data[pos:].startswith(b"FRAME"):
            raise Y4MParseError("expected FRAME marker", pos)
        payload_start = marker_end + 1
        payload = data[payload_start:payload_start + frame_size]
        if len(payload) < frame_size:
            raise TruncatedPayloadError(index)
        y = np.frombuffer(payload, dtype=np.uint8, count=y_size).reshape(height, width)
        cb = np.frombuffer(
            payload, dtype=np.uint8, count=c_size, offset=y_size
        ).reshape(c_h, c_w)
        cr = np.frombuffer(
            payload, dtype=np.uint8, count=c_size, offset=y_size + c_size
        ).reshape(c_h, c_w)
        if chroma == "420":
            cb = cb.repeat(2, axis=0).repeat(2, axis=1)
            cr = cr.repeat(2, axis=0).repeat(2, axis=1)
        frames.append(Frame(
            width, height, yuv_to_rgb(y, cb, cr), index,
            source_yuv=np.stack([y, cb, cr], axis=-1),
        ))
        pos = payload_start + frame_size
        index += 1

    rate = int(_round_half_up(rate_num / rate_den))
    return FrameSequence(tuple(frames), max(rate, 1), rate_num, rate_den)


def write_y4m(seq: FrameSequence) -> bytes:
    """Encode a FrameSequence as 4:4:4 Y4M.

    Frames that were parsed from Y4M carry their decoded planes and are
    written back verbatim, so parse -> write -> parse reproduces the RGB
    bit-identically.  Synthetic frames go through the exact-preimage
    conversion, which is bit-exact whenever an 8-bit YUV preimage exists.
    """
    if not seq.frames:
        raise ValueError("cannot write an empty sequence")
    first = seq.frames[0]
    header = (
        f"YUV4MPEG2 W{first.width} H{first.height} "
        f"F{seq.rate_num}:{seq.rate_den} Ip A1:1 C444\n"
    ).encode("ascii")
    chunks = [header]
    for frame in seq.frames:
        if frame.source_yuv is not None:
            y, cb, cr = (frame.source_yuv[..., k] for k in range(3))
        else:
            y, cb, cr = rgb_to_yuv444_exact(frame.rgb)
        chunks.append(b"FRAME\n")
        chunks.extend((np.ascontiguousarray(y).tobytes(),
                       np.ascontiguousarray(cb).tobytes(),
                       np.ascontiguousarray(cr).tobytes()))
    return b"".join(chunks)


# --- PNG directory input -----------------------------------------------

FRAME_RATE_SIDECAR = "frame_rate.txt"


def load_frame_dir(path: str | Path) -> FrameSequence:
    """Load zero-padded numbered PNG frames plus a frame-rate sidecar.

    The sidecar ``frame_rate.txt`` holds either ``num:den`` or a decimal
    rate; frames are read in sorted filename order.
    """
    from PIL import Image

    root = Path(path)
    sidecar = root / FRAME_RATE_SIDECAR
    if not sidecar.is_file():
        raise MediaError(f"missing frame-rate sidecar {sidecar}")
    rate_num, rate_den = _parse_rate(sidecar.read_text().strip())
    png_paths = sorted(root.glob("*.png"))
    if not png_paths:
        raise MediaError(f"no PNG frames found in {root}")
    frames = []
    for index, png in enumerate(png_paths):
        rgb = np.asarray(Image.open(png).convert("RGB"), dtype=np.uint8)
        frames.append(Frame(rgb.shape[1], rgb.shape[0], rgb, index))
    rate = int(_round_half_up(rate_num / rate_den))
    return FrameSequence(tuple(frames), max(rate, 1), rate_num, rate_den)


def _parse_rate(text: str) -> tuple[int, int]:
    if ":" in text:
        num_s, den_s = text.split(":", 1)
        num, den = int(num_s), int(den_s)
    else:
        frac = Fraction(text).limit_denominator(100_000)
        num, den = frac.numerator, frac.denominator
    if num <= 0 or den <= 0:
        raise MediaError(f"invalid frame rate {text!r}")
    return num, den


# --- clip splitting and sampling ----------------------------------------

def split_clips(seq: FrameSequence) -> list[Clip]:
    """Partition into floor(n/r) clips of r frames; the remainder is dropped."""
    r = seq.frame_rate
    n = seq.frame_count
    if n < r:
        raise ShortVideoError(
            f"video shorter than one clip ({n} frames at rate {r})"
        )
    return [
        Clip(i, tuple(seq.frames[i * r:(i + 1) * r])) for i in range(n // r)
    ]


def sample_indices(clip_len: int, half_samples: int) -> list[int]:
    """Uniform sample positions: round(j*(len-1)/(2L-1)), j = 0..2L-1.

    Rounding is half-up, which makes the index set strictly increasing for
    any clip_len >= 2L and always includes both endpoints.
    """
    count = 2 * half_samples
    if clip_len < count:
        raise SamplingError(
            f"clip of {clip_len} frames cannot supply {count} samples"
        )
    step = (clip_len - 1) / (count - 1)
    return [int(math.floor(j * step + 0.5)) for j in range(count)]


def sample_frames(clip: Clip, cfg: SamplerConfig) -> list[Frame]:
    """Pick 2L frames from the clip at the deterministic uniform positions."""
    indices = sample_indices(len(clip.frames), cfg.half_samples)
    return [clip.frames[i] for i in indices]


def to_luma(frame: Frame) -> LumaPlane:
    """BT.601 luma: Y = round(0.299 R + 0.587 G + 0.114 B), clamped to 8 bits."""
    rgb = frame.rgb.astype(np.float64)
    y = _KR * rgb[..., 0] + _KG * rgb[..., 1] + _KB * rgb[..., 2]
    y8 = np.clip(_round_half_up(y), 0, 255).astype(np.uint8)
    return LumaPlane(frame.width, frame.height, y8)
