"""Spatio-temporal fusion regressor.

Per clip: the even-indexed sampled frames' semantic and distortion vectors,
plus the absolute differences between adjacent frame pairs, pass through
four per-stream linear+ReLU maps and are concatenated per pair into SD
rows.  A shared L-weight temporal map collapses the rows into one fused
vector, the motion vector joins through its own linear+ReLU map, and a
three-stage head regresses the result to a clip score.  Video score is the
clip mean; training minimizes MSE against MOS labels.

All math is float64, all gradients are written out analytically (ReLU
subgradient at 0 is 0), and initialization draws from the pinned generator
so runs are reproducible bit-for-bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .features import ClipFeatures
from .rng import DeterministicRng

MODEL_MAGIC = b"MDVQMODL"
MODEL_VERSION = 1


class ShapeError(ValueError):
    """Input does not match the model's declared dimensions."""


@dataclass(frozen=True)
class ModelDims:
    """All widths that determine the parameter shapes.

    The head widths are not part of the model file's dims block; they are
    recovered from the per-tensor length prefixes when loading.
    """

    half_samples: int = 8       # L: fused frame pairs per clip
    n_semantic: int = 80
    n_distortion: int = 7
    n_motion: int = 32
    hidden_semantic: int = 128  # per-stream width for semantic inputs
    hidden_distortion: int = 32
    motion_out: int = 64        # motion width after its linear+ReLU map
    head_hidden1: int = 128
    head_hidden2: int = 32

    def __post_init__(self):
        values = [getattr(self, f.name) for f in fields(self)]
        if min(values) <= 0:
            raise ValueError("all model dimensions must be positive")

    @property
    def n_sd(self) -> int:
        """Width of one fused SD row: 2*H_S + 2*H_D."""
        return 2 * self.hidden_semantic + 2 * self.hidden_distortion

    @property
    def fused_len(self) -> int:
        return self.n_sd + self.motion_out


@dataclass
class ModelParams:
    """All learnable tensors; declaration order is the file layout order."""

    dims: ModelDims
    w_sem: np.ndarray       # (H_S, N_S)
    b_sem: np.ndarray       # (H_S,)
    w_sem_err: np.ndarray   # (H_S, N_S)
    b_sem_err: np.ndarray
    w_dis: np.ndarray       # (H_D, N_D)
    b_dis: np.ndarray
    w_dis_err: np.ndarray
    b_dis_err: np.ndarray
    w_temporal: np.ndarray  # (L,)
    b_temporal: np.ndarray  # (1,)
    w_motion: np.ndarray    # (N_M', N_M)
    b_motion: np.ndarray
    w_head1: np.ndarray     # (128, fused_len)
    b_head1: np.ndarray
    w_head2: np.ndarray     # (32, 128)
    b_head2: np.ndarray
    w_head3: np.ndarray     # (1, 32)
    b_head3: np.ndarray

    TENSOR_FIELDS = (
        "w_sem", "b_sem", "w_sem_err", "b_sem_err",
        "w_dis", "b_dis", "w_dis_err", "b_dis_err",
        "w_temporal", "b_temporal", "w_motion", "b_motion",
        "w_head1", "b_head1", "w_head2", "b_head2", "w_head3", "b_head3",
    )

    def tensors(self) -> Iterable[tuple[str, np.ndarray]]:
        for name in self.TENSOR_FIELDS:
            yield name, getattr(self, name)

    @classmethod
    def zeros(cls, dims: ModelDims) -> "ModelParams":
        return cls(dims, *[np.zeros(shape) for _, shape in tensor_shapes(dims)])


def tensor_shapes(dims: ModelDims) -> list[tuple[str, tuple[int, ...]]]:
    h1, h2 = dims.head_hidden1, dims.head_hidden2
    return [
        ("w_sem", (dims.hidden_semantic, dims.n_semantic)),
        ("b_sem", (dims.hidden_semantic,)),
        ("w_sem_err", (dims.hidden_semantic, dims.n_semantic)),
        ("b_sem_err", (dims.hidden_semantic,)),
        ("w_dis", (dims.hidden_distortion, dims.n_distortion)),
        ("b_dis", (dims.hidden_distortion,)),
        ("w_dis_err", (dims.hidden_distortion, dims.n_distortion)),
        ("b_dis_err", (dims.hidden_distortion,)),
        ("w_temporal", (dims.half_samples,)),
        ("b_temporal", (1,)),
        ("w_motion", (dims.motion_out, dims.n_motion)),
        ("b_motion", (dims.motion_out,)),
        ("w_head1", (h1, dims.fused_len)),
        ("b_head1", (h1,)),
        ("w_head2", (h2, h1)),
        ("b_head2", (h2,)),
        ("w_head3", (1, h2)),
        ("b_head3", (1,)),
    ]


def _fan_in(name: str, shape: tuple[int, ...], dims: ModelDims) -> int:
    if name in ("w_temporal", "b_temporal"):
        return dims.half_samples
    if len(shape) == 2:
        return shape[1]
    # bias fan-in matches its layer's input width
    for n, s in tensor_shapes(dims):
        if n == "w" + name[1:]:
            return s[1]
    raise KeyError(name)


def init_params(dims: ModelDims, seed: int = 0) -> ModelParams:
    """Uniform +/- sqrt(1/fan_in) init drawn in declaration order."""
    rng = DeterministicRng(seed)
    arrays = []
    for name, shape in tensor_shapes(dims):
        scale = float(np.sqrt(1.0 / _fan_in(name, shape, dims)))
        arrays.append(rng.fill(shape, scale))
    return ModelParams(dims, *arrays)


# --- forward -------------------------------------------------------------

def temporal_abs_diff(features: np.ndarray) -> np.ndarray:
    """Row k of the output is |row_{2k} - row_{2k-1}| (1-indexed pairs)."""
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] % 2:
        raise ShapeError(
            f"expected an even number of rows, got shape {features.shape}"
        )
    return np.abs(features[1::2] - features[0::2])


@dataclass(eq=False)
class ClipTrace:
    """Intermediate activations of one clip forward pass, kept for backward."""

    sf_even: np.ndarray
    sf_diff: np.ndarray
    df_even: np.ndarray
    df_diff: np.ndarray
    z_sem: np.ndarray
    z_sem_err: np.ndarray
    z_dis: np.ndarray
    z_dis_err: np.ndarray
    sd: np.ndarray
    stf: np.ndarray
    mf: np.ndarray
    z_motion: np.ndarray
    fused: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    z2: np.ndarray
    h2: np.ndarray
    q: float


def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def _check_clip_shapes(cf: ClipFeatures, dims: ModelDims) -> None:
    rows = 2 * dims.half_samples
    if cf.sf.shape != (rows, dims.n_semantic):
        raise ShapeError(
            f"semantic stream: expected {(rows, dims.n_semantic)}, got {cf.sf.shape}"
        )
    if cf.df.shape != (rows, dims.n_distortion):
        raise ShapeError(
            f"distortion stream: expected {(rows, dims.n_distortion)}, got {cf.df.shape}"
        )
    if cf.mf.shape != (dims.n_motion,):
        raise ShapeError(
            f"motion stream: expected {(dims.n_motion,)}, got {cf.mf.shape}"
        )


def forward_clip(params: ModelParams, cf: ClipFeatures) -> ClipTrace:
    """Full fusion + regression forward pass for one clip."""
    dims = params.dims
    _check_clip_shapes(cf, dims)
    sf = cf.sf.astype(np.float64, copy=False)
    df = cf.df.astype(np.float64, copy=False)
    mf = cf.mf.astype(np.float64, copy=False)

    sf_even, df_even = sf[1::2], df[1::2]
    sf_diff = temporal_abs_diff(sf)
    df_diff = temporal_abs_diff(df)

    z_sem = sf_even @ params.w_sem.T + params.b_sem
    z_sem_err = sf_diff @ params.w_sem_err.T + params.b_sem_err
    z_dis = df_even @ params.w_dis.T + params.b_dis
    z_dis_err = df_diff @ params.w_dis_err.T + params.b_dis_err
    sd = np.hstack([_relu(z_sem), _relu(z_dis), _relu(z_sem_err), _relu(z_dis_err)])

    stf = params.w_temporal @ sd + params.b_temporal[0]

    z_motion = params.w_motion @ mf + params.b_motion
    fused = np.concatenate([stf, _relu(z_motion)])

    z1 = params.w_head1 @ fused + params.b_head1
    h1 = _relu(z1)
    z2 = params.w_head2 @ h1 + params.b_head2
    h2 = _relu(z2)
    q = float((params.w_head3 @ h2 + params.b_head3)[0])

    return ClipTrace(
        sf_even=sf_even, sf_diff=sf_diff, df_even=df_even, df_diff=df_diff,
        z_sem=z_sem, z_sem_err=z_sem_err, z_dis=z_dis, z_dis_err=z_dis_err,
        sd=sd, stf=stf, mf=mf, z_motion=z_motion, fused=fused,
        z1=z1, h1=h1, z2=z2, h2=h2, q=q,
    )


def fuse_clip(sf: np.ndarray, df: np.ndarray, mf: np.ndarray,
              params: ModelParams) -> np.ndarray:
    """The clip-level fused feature vector (length n_sd + motion_out)."""
    trace = forward_clip(params, ClipFeatures(sf=np.asarray(sf, dtype=np.float64),
                                              df=np.asarray(df, dtype=np.float64),
                                              mf=np.asarray(mf, dtype=np.float64)))
    return trace.fused


def regress(fused: np.ndarray, params: ModelParams) -> float:
    """Three-stage head applied to a fused clip vector; no output activation."""
    fused = np.asarray(fused, dtype=np.float64)
    if fused.shape != (params.dims.fused_len,):
        raise ShapeError(
            f"fused vector: expected {(params.dims.fused_len,)}, got {fused.shape}"
        )
    h1 = _relu(params.w_head1 @ fused + params.b_head1)
    h2 = _relu(params.w_head2 @ h1 + params.b_head2)
    return float((params.w_head3 @ h2 + params.b_head3)[0])


def predict_video(clip_scores: Sequence[float]) -> float:
    """Video score = arithmetic mean of its clip scores."""
    if len(clip_scores) == 0:
        raise ValueError("cannot average an empty list of clip scores")
    return float(np.mean(np.asarray(clip_scores, dtype=np.float64)))


def score_video(params: ModelParams, clips: Sequence[ClipFeatures]) -> float:
    return predict_video([forward_clip(params, cf).q for cf in clips])


def mse_loss(predicted: Sequence[float], labels: Sequence[float]) -> float:
    predicted = np.asarray(predicted, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if predicted.shape != labels.shape or predicted.size == 0:
        raise ValueError("predicted and label lists must be equal-length and non-empty")
    return float(np.mean((predicted - labels) ** 2))


# --- backward ------------------------------------------------------------

def backward(
    batch: Sequence[tuple[Sequence[ClipFeatures], float]],
    params: ModelParams,
) -> tuple[float, ModelParams]:
    """MSE loss over a batch of (clips, label) videos and its gradients.

    The returned gradient container reuses the ModelParams layout.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    dims = params.dims
    grads = ModelParams.zeros(dims)
    h_s, h_d = dims.hidden_semantic, dims.hidden_distortion

    traces: list[tuple[list[ClipTrace], float]] = []
    predictions = []
    for clips, label in batch:
        clip_traces = [forward_clip(params, cf) for cf in clips]
        predictions.append(predict_video([t.q for t in clip_traces]))
        traces.append((clip_traces, label))
    labels = [label for _, label in batch]
    loss = mse_loss(predictions, labels)

    n = len(batch)
    for (clip_traces, label), pred in zip(traces, predictions):
        d_video = 2.0 * (pred - label) / n
        dq = d_video / len(clip_traces)
        for t in clip_traces:
            # head
            grads.w_head3 += dq * t.h2[None, :]
            grads.b_head3 += dq
            dh2 = params.w_head3[0] * dq
            dz2 = dh2 * (t.z2 > 0)
            grads.w_head2 += np.outer(dz2, t.h1)
            grads.b_head2 += dz2
            dh1 = params.w_head2.T @ dz2
            dz1 = dh1 * (t.z1 > 0)
            grads.w_head1 += np.outer(dz1, t.fused)
            grads.b_head1 += dz1
            d_fused = params.w_head1.T @ dz1
            # motion branch
            d_stf = d_fused[:dims.n_sd]
            d_motion = d_fused[dims.n_sd:]
            dz_m = d_motion * (t.z_motion > 0)
            grads.w_motion += np.outer(dz_m, t.mf)
            grads.b_motion += dz_m
            # temporal map
            grads.w_temporal += t.sd @ d_stf
            grads.b_temporal += d_stf.sum()
            d_sd = np.outer(params.w_temporal, d_stf)
            # four fusion streams, in SD column order
            blocks = (
                (slice(0, h_s), t.z_sem, t.sf_even, "w_sem", "b_sem"),
                (slice(h_s, h_s + h_d), t.z_dis, t.df_even, "w_dis", "b_dis"),
                (slice(h_s + h_d, 2 * h_s + h_d), t.z_sem_err, t.sf_diff,
                 "w_sem_err", "b_sem_err"),
                (slice(2 * h_s + h_d, 2 * h_s + 2 * h_d), t.z_dis_err, t.df_diff,
                 "w_dis_err", "b_dis_err"),
            )
            for cols, z, x_in, w_name, b_name in blocks:
                dz = d_sd[:, cols] * (z > 0)
                g_w = getattr(grads, w_name)
                g_w += dz.T @ x_in
                g_b = getattr(grads, b_name)
                g_b += dz.sum(axis=0)
    return loss, grads


# --- model file ------------------------------------------------------------

def save_model(path: str | Path, params: ModelParams) -> None:
    """Serialize dims and tensors (f32) in declaration order."""
    dims = params.dims
    header = MODEL_MAGIC + struct.pack(
        "<8I", MODEL_VERSION,
        dims.half_samples, dims.n_semantic, dims.n_distortion, dims.n_motion,
        dims.hidden_semantic, dims.hidden_distortion, dims.motion_out,
    )
    chunks = [header]
    for _, tensor in params.tensors():
        flat = np.ascontiguousarray(tensor, dtype="<f4").ravel()
        chunks.append(struct.pack("<I", flat.size))
        chunks.append(flat.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_model(path: str | Path) -> ModelParams:
    raw = Path(path).read_bytes()
    if len(raw) < 8 + 32 or raw[:8] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file (bad magic)")
    version, L, n_s, n_d, n_m, h_s, h_d, n_m2 = struct.unpack_from("<8I", raw, 8)
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    base = ModelDims(
        half_samples=L, n_semantic=n_s, n_distortion=n_d, n_motion=n_m,
        hidden_semantic=h_s, hidden_distortion=h_d, motion_out=n_m2,
    )
    # Peek the head tensor lengths to recover the hidden widths.
    offset = 8 + 32
    for name, shape in tensor_shapes(base)[:12]:
        (count,) = struct.unpack_from("<I", raw, offset)
        offset += 4 + 4 * count
    (w1_count,) = struct.unpack_from("<I", raw, offset)
    if w1_count % base.fused_len:
        raise ValueError(f"{path}: head tensor length {w1_count} does not "
                         f"divide the fused width {base.fused_len}")
    head1 = w1_count // base.fused_len
    offset2 = offset + 4 + 4 * w1_count
    (b1_count,) = struct.unpack_from("<I", raw, offset2)
    offset2 += 4 + 4 * b1_count
    (w2_count,) = struct.unpack_from("<I", raw, offset2)
    if b1_count != head1 or w2_count % head1:
        raise ValueError(f"{path}: inconsistent head tensor lengths")
    head2 = w2_count // head1
    dims = ModelDims(
        half_samples=L, n_semantic=n_s, n_distortion=n_d, n_motion=n_m,
        hidden_semantic=h_s, hidden_distortion=h_d, motion_out=n_m2,
        head_hidden1=head1, head_hidden2=head2,
    )
    offset = 8 + 32
    arrays = []
    for name, shape in tensor_shapes(dims):
        (count,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        expected = int(np.prod(shape))
        if count != expected:
            raise ValueError(
                f"{path}: tensor {name} has {count} values, expected {expected}"
            )
        flat = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        arrays.append(flat.astype(np.float64).reshape(shape))
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    return ModelParams(dims, *arrays)
