"""Feature providers and the binary feature-file interchange format.

Semantic features are per-frame vectors from a 4-stage pyramid of globally
average-pooled feature maps; motion features are one vector per clip.  Real
pretrained backbones run out of process and hand their outputs over as
feature files; the toy backbones here are deterministic, bias-free stand-ins
so the full pipeline is testable without an inference runtime.

Feature file layout (little-endian):
  magic "MDVQFEAT" (8 bytes) | version u32 | kind u8 | pad 3 bytes |
  count u32 | dim u32 | payload count*dim float32, row-major
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .descriptors import N_DISTORTION, distortion_vector
from .media import Clip, Frame, FrameSequence, SamplerConfig, sample_frames, sample_indices, split_clips
from .rng import DeterministicRng

FEATURE_MAGIC = b"MDVQFEAT"
FEATURE_VERSION = 1
_KIND_CODES = {"semantic": 0, "distortion": 1, "motion": 2}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}
_HEADER = struct.Struct("<8sIB3xII")


class FeatureError(Exception):
    """Base class for feature-layer failures."""


class ProviderConfigError(FeatureError):
    """Provider missing or misconfigured."""


class FeatureLookupError(FeatureError):
    """A file-backed provider has no row for the requested item."""


class FeatureFileMagicError(FeatureError):
    """File does not start with the feature magic."""


class FeatureFileVersionError(FeatureError):
    """Unsupported feature file version."""


class FeatureFileKindError(FeatureError):
    """Unknown kind code in the header."""


class FeatureFileLengthError(FeatureError):
    """Header count*dim disagrees with the payload length."""


@dataclass(frozen=True)
class FeatureDims:
    """Channel counts of the three feature streams."""

    n_semantic: int
    n_distortion: int = N_DISTORTION
    n_motion: int = 32

    def __post_init__(self):
        if min(self.n_semantic, self.n_distortion, self.n_motion) <= 0:
            raise ValueError("feature dimensions must be positive")


@dataclass(frozen=True, eq=False)
class ClipFeatures:
    """Per-clip feature bundle: 2L semantic rows, 2L distortion rows, one motion vector."""

    sf: np.ndarray  # (2L, n_semantic)
    df: np.ndarray  # (2L, n_distortion)
    mf: np.ndarray  # (n_motion,)

    def __post_init__(self):
        if self.sf.ndim != 2 or self.df.ndim != 2 or self.mf.ndim != 1:
            raise ValueError("sf/df must be matrices and mf a vector")
        if self.sf.shape[0] != self.df.shape[0]:
            raise ValueError("sf and df must have the same number of rows")
        for arr in (self.sf, self.df, self.mf):
            if not np.isfinite(arr).all():
                raise ValueError("clip features must be finite")


@dataclass(frozen=True, eq=False)
class FeatureFile:
    kind: str
    count: int
    dim: int
    data: np.ndarray  # float32, (count, dim)


def write_feature_file(path: str | Path, kind: str, matrix: np.ndarray) -> None:
    """Write a float32 feature matrix; the round trip is bit-exact."""
    if kind not in _KIND_CODES:
        raise ValueError(f"unknown feature kind {kind!r}")
    mat = np.ascontiguousarray(matrix, dtype="<f4")
    if mat.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    if not np.isfinite(mat.astype(np.float64)).all():
        raise ValueError("feature matrix must be finite")
    header = _HEADER.pack(
        FEATURE_MAGIC, FEATURE_VERSION, _KIND_CODES[kind], mat.shape[0], mat.shape[1]
    )
    Path(path).write_bytes(header + mat.tobytes())


def read_feature_file(path: str | Path) -> FeatureFile:
    """Read and validate a feature file."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size or raw[:8] != FEATURE_MAGIC:
        raise FeatureFileMagicError(f"{path}: bad magic")
    magic, version, kind_code, count, dim = _HEADER.unpack_from(raw)
    if version != FEATURE_VERSION:
        raise FeatureFileVersionError(f"{path}: version {version}, expected {FEATURE_VERSION}")
    if kind_code not in _CODE_KINDS:
        raise FeatureFileKindError(f"{path}: unknown kind code {kind_code}")
    payload = raw[_HEADER.size:]
    expected = count * dim * 4
    if len(payload) != expected:
        raise FeatureFileLengthError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
    return FeatureFile(_CODE_KINDS[kind_code], count, dim, data)


# --- toy backbones -------------------------------------------------------

def _conv3x3_same(x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """3x3 zero-padded convolution; x is (c_in, h, w), weights (c_out, c_in, 3, 3)."""
    c_in, h, w = x.shape
    padded = np.zeros((c_in, h + 2, w + 2), dtype=np.float64)
    padded[:, 1:-1, 1:-1] = x
    shifts = np.stack(
        [padded[:, dy:dy + h, dx:dx + w] for dy in range(3) for dx in range(3)]
    )  # (9, c_in, h, w)
    return np.einsum("ois,sihw->ohw", weights.reshape(weights.shape[0], c_in, 9), shifts)


def _avg_pool2_ceil(x: np.ndarray) -> np.ndarray:
    """2x average pool with ceil semantics (edge-replicated odd borders)."""
    c, h, w = x.shape
    if h % 2:
        x = np.concatenate([x, x[:, -1:, :]], axis=1)
    if w % 2:
        x = np.concatenate([x, x[:, :, -1:]], axis=2)
    return (x[:, 0::2, 0::2] + x[:, 1::2, 0::2] + x[:, 0::2, 1::2] + x[:, 1::2, 1::2]) / 4.0


class ToySemanticBackbone:
    """4-stage conv pyramid with GAP per stage; bias-free and seed-exact.

    Stage widths 8/16/24/32 concatenate to an 80-dim frame descriptor.
    Weights are uniform in +/-1/fan_in from the pinned generator, so the
    same seed reproduces the same features on any platform.
    """

    STAGE_CHANNELS = (8, 16, 24, 32)

    def __init__(self, seed: int = 0):
        rng = DeterministicRng(seed)
        self.weights = []
        c_in = 3
        for c_out in self.STAGE_CHANNELS:
            fan_in = c_in * 9
            self.weights.append(rng.fill((c_out, c_in, 3, 3), 1.0 / fan_in))
            c_in = c_out

    @property
    def dim(self) -> int:
        return sum(self.STAGE_CHANNELS)

    def stage_maps(self, frame: Frame) -> list[np.ndarray]:
        """Post-pool feature maps of all four stages (mainly for shape checks)."""
        x = frame.rgb.astype(np.float64).transpose(2, 0, 1)
        maps = []
        for w in self.weights:
            x = np.maximum(_conv3x3_same(x, w), 0.0)
            x = _avg_pool2_ceil(x)
            maps.append(x)
        return maps

    def frame_features(self, frame: Frame) -> np.ndarray:
        return np.concatenate([m.mean(axis=(1, 2)) for m in self.stage_maps(frame)])


class ToyMotionBackbone:
    """Temporal-difference conv stand-in for a 3D-CNN motion extractor.

    First layer is the frame-to-frame difference, so a static clip maps to
    the zero vector exactly.
    """

    def __init__(self, seed: int = 0, channels: int = 32):
        fan_in = 3 * 9
        self.weights = DeterministicRng(seed).fill((channels, 3, 3, 3), 1.0 / fan_in)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def clip_features(self, clip: Clip) -> np.ndarray:
        frames = [f.rgb.astype(np.float64).transpose(2, 0, 1) for f in clip.frames]
        acc = np.zeros(self.dim, dtype=np.float64)
        for prev, cur in zip(frames, frames[1:]):
            response = np.maximum(_conv3x3_same(cur - prev, self.weights), 0.0)
            acc += response.mean(axis=(1, 2))
        return acc / max(len(frames) - 1, 1)


# --- file-backed providers ------------------------------------------------

class FileSemanticProvider:
    """Serves pre-extracted per-sampled-frame semantic rows.

    Row layout matches the extraction order: clip_index * 2L + sample slot.
    The provider maps a Frame back to its row through the deterministic
    sampling positions, so it needs the clip length and L it was built with.
    """

    def __init__(self, table: np.ndarray, half_samples: int, clip_len: int,
                 video_id: str = "?"):
        self.table = np.asarray(table)
        self.half_samples = half_samples
        self.clip_len = clip_len
        self.video_id = video_id
        self._slots = {
            pos: slot
            for slot, pos in enumerate(sample_indices(clip_len, half_samples))
        }

    @classmethod
    def from_file(cls, path: str | Path, half_samples: int, clip_len: int,
                  video_id: str = "?") -> "FileSemanticProvider":
        ff = read_feature_file(path)
        if ff.kind != "semantic":
            raise ProviderConfigError(f"{path} holds {ff.kind} features, not semantic")
        return cls(ff.data, half_samples, clip_len, video_id)

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def row(self, index: int) -> np.ndarray:
        if not 0 <= index < self.table.shape[0]:
            raise FeatureLookupError(
                f"video {self.video_id!r}: no semantic row {index}"
            )
        return self.table[index]

    def frame_features(self, frame: Frame) -> np.ndarray:
        clip_index, pos = divmod(frame.index, self.clip_len)
        slot = self._slots.get(pos)
        if slot is None:
            raise FeatureLookupError(
                f"video {self.video_id!r}: frame {frame.index} is not a sampled position"
            )
        return self.row(clip_index * 2 * self.half_samples + slot)


class FileMotionProvider:
    """Serves pre-extracted per-clip motion rows."""

    def __init__(self, table: np.ndarray, video_id: str = "?"):
        self.table = np.asarray(table)
        self.video_id = video_id

    @classmethod
    def from_file(cls, path: str | Path, video_id: str = "?") -> "FileMotionProvider":
        ff = read_feature_file(path)
        if ff.kind != "motion":
            raise ProviderConfigError(f"{path} holds {ff.kind} features, not motion")
        return cls(ff.data, video_id)

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def clip_features(self, clip: Clip) -> np.ndarray:
        if not 0 <= clip.clip_index < self.table.shape[0]:
            raise FeatureLookupError(
                f"video {self.video_id!r}: no motion row for clip {clip.clip_index}"
            )
        return self.table[clip.clip_index]


def semantic_features(provider, frame: Frame) -> np.ndarray:
    """Frame-level semantic vector from any provider; validates the width."""
    if provider is None:
        raise ProviderConfigError("semantic provider is not configured")
    vec = np.asarray(provider.frame_features(frame), dtype=np.float64)
    if vec.shape != (provider.dim,):
        raise ProviderConfigError(
            f"provider returned shape {vec.shape}, declared dim {provider.dim}"
        )
    return vec


def motion_features(provider, clip: Clip) -> np.ndarray:
    """Clip-level motion vector from any provider; validates the width."""
    if provider is None:
        raise ProviderConfigError("motion provider is not configured")
    vec = np.asarray(provider.clip_features(clip), dtype=np.float64)
    if vec.shape != (provider.dim,):
        raise ProviderConfigError(
            f"provider returned shape {vec.shape}, declared dim {provider.dim}"
        )
    return vec


# --- extraction pipeline --------------------------------------------------

def provider_dims(semantic_provider, motion_provider) -> FeatureDims:
    """Channel geometry of a provider pair, as consumed by the regressor."""
    if semantic_provider is None or motion_provider is None:
        raise ProviderConfigError("both providers must be configured")
    return FeatureDims(
        n_semantic=semantic_provider.dim,
        n_distortion=N_DISTORTION,
        n_motion=motion_provider.dim,
    )


def extract_clip_features(
    seq: FrameSequence,
    cfg: SamplerConfig,
    semantic_provider,
    motion_provider,
) -> list[ClipFeatures]:
    """Run the full per-clip extraction for one decoded video."""
    dims = provider_dims(semantic_provider, motion_provider)
    rows = 2 * cfg.half_samples
    bundles = []
    for clip in split_clips(seq):
        sampled = sample_frames(clip, cfg)
        sf = np.stack([semantic_features(semantic_provider, f) for f in sampled])
        df = np.stack([distortion_vector(f).as_array() for f in sampled])
        mf = motion_features(motion_provider, clip)
        bundle = ClipFeatures(sf=sf, df=df, mf=mf)
        if bundle.sf.shape != (rows, dims.n_semantic) or \
                bundle.df.shape != (rows, dims.n_distortion) or \
                bundle.mf.shape != (dims.n_motion,):
            raise ProviderConfigError(
                f"clip {clip.clip_index}: features disagree with {dims}"
            )
        bundles.append(bundle)
    return bundles


# --- sidecar manifest ------------------------------------------------------

@dataclass(frozen=True)
class FeatureSet:
    """Paths and geometry of one video's extracted feature files."""

    semantic_path: str
    distortion_path: str
    motion_path: str
    clip_count: int
    half_samples: int

    def to_json(self) -> dict:
        return {
            "semantic_path": self.semantic_path,
            "distortion_path": self.distortion_path,
            "motion_path": self.motion_path,
            "clip_count": self.clip_count,
            "L": self.half_samples,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureSet":
        return cls(
            semantic_path=obj["semantic_path"],
            distortion_path=obj["distortion_path"],
            motion_path=obj["motion_path"],
            clip_count=int(obj["clip_count"]),
            half_samples=int(obj["L"]),
        )


def write_feature_manifest(path: str | Path, entries: dict[str, FeatureSet]) -> None:
    payload = {vid: fs.to_json() for vid, fs in sorted(entries.items())}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def read_feature_manifest(path: str | Path) -> dict[str, FeatureSet]:
    payload = json.loads(Path(path).read_text())
    return {vid: FeatureSet.from_json(obj) for vid, obj in payload.items()}


def save_clip_features(
    out_dir: str | Path, video_id: str, bundles: list[ClipFeatures]
) -> FeatureSet:
    """Write one video's features as the three interchange files."""
    if not bundles:
        raise ValueError("no clips to save")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sf = np.concatenate([b.sf for b in bundles], axis=0)
    df = np.concatenate([b.df for b in bundles], axis=0)
    mf = np.stack([b.mf for b in bundles])
    paths = {k: out / f"{video_id}.{k}.feat" for k in ("semantic", "distortion", "motion")}
    write_feature_file(paths["semantic"], "semantic", sf)
    write_feature_file(paths["distortion"], "distortion", df)
    write_feature_file(paths["motion"], "motion", mf)
    rows_per_clip = bundles[0].sf.shape[0]
    return FeatureSet(
        semantic_path=str(paths["semantic"]),
        distortion_path=str(paths["distortion"]),
        motion_path=str(paths["motion"]),
        clip_count=len(bundles),
        half_samples=rows_per_clip // 2,
    )


def load_clip_features(feature_set: FeatureSet, base_dir: str | Path | None = None) -> list[ClipFeatures]:
    """Read a video's feature files back into per-clip bundles."""
    base = Path(base_dir) if base_dir is not None else None

    def _resolve(p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() or base is None else base / path

    sem = read_feature_file(_resolve(feature_set.semantic_path))
    dis = read_feature_file(_resolve(feature_set.distortion_path))
    mot = read_feature_file(_resolve(feature_set.motion_path))
    rows = 2 * feature_set.half_samples
    expected = feature_set.clip_count * rows
    if sem.count != expected or dis.count != expected:
        raise FeatureFileLengthError(
            f"expected {expected} frame rows for {feature_set.clip_count} clips, "
            f"got semantic={sem.count} distortion={dis.count}"
        )
    if mot.count != feature_set.clip_count:
        raise FeatureFileLengthError(
            f"expected {feature_set.clip_count} motion rows, got {mot.count}"
        )
    bundles = []
    for i in range(feature_set.clip_count):
        sl = slice(i * rows, (i + 1) * rows)
        bundles.append(
            ClipFeatures(
                sf=sem.data[sl].astype(np.float64),
                df=dis.data[sl].astype(np.float64),
                mf=mot.data[i].astype(np.float64),
            )
        )
    return bundles
