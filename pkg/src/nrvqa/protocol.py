"""Dataset manifest and the repeated train/test evaluation protocol.

Splits are drawn at source-group granularity by default so every
compression variant of a source lands on the same side, preventing content
leakage.  Each protocol run trains a fresh model on the train side and
reports SRCC / PLCC-after-fit on the test side; aggregates are the mean and
standard deviation over the runs.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .features import FeatureSet, load_clip_features
from .metrics import LogisticFitParams, plcc_after_fit, srcc
from .model import ModelDims, score_video
from .rng import DeterministicRng
from .training import TrainConfig, VideoSample, train

VALID_CRF = {0, 16, 20, 24, 28, 32, 36, 40, 44}


class ManifestError(Exception):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    source_group: str
    crf: int
    resolution: str = ""
    fps: float = 0.0
    mos: float | None = None
    features: FeatureSet | None = None

    def __post_init__(self):
        if self.crf not in VALID_CRF:
            raise ManifestError(
                f"{self.video_id}: CRF {self.crf} not in {sorted(VALID_CRF)}"
            )

    def to_json(self) -> dict:
        obj: dict = {
            "video_id": self.video_id,
            "source_group": self.source_group,
            "crf": self.crf,
            "resolution": self.resolution,
            "fps": self.fps,
        }
        if self.mos is not None:
            obj["mos"] = self.mos
        if self.features is not None:
            obj["features"] = self.features.to_json()
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "ManifestEntry":
        return cls(
            video_id=obj["video_id"],
            source_group=obj["source_group"],
            crf=int(obj["crf"]),
            resolution=obj.get("resolution", ""),
            fps=float(obj.get("fps", 0.0)),
            mos=obj.get("mos"),
            features=(
                FeatureSet.from_json(obj["features"]) if "features" in obj else None
            ),
        )


@dataclass(eq=False)
class DatasetManifest:
    entries: list[ManifestEntry]

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.video_id in seen:
                raise ManifestError(f"duplicate video_id {e.video_id}")
            seen.add(e.video_id)

    def groups(self) -> list[str]:
        return sorted({e.source_group for e in self.entries})

    def by_id(self) -> dict[str, ManifestEntry]:
        return {e.video_id: e for e in self.entries}

    def save(self, path: str | Path) -> None:
        payload = {"entries": [e.to_json() for e in self.entries]}
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        payload = json.loads(Path(path).read_text())
        return cls([ManifestEntry.from_json(o) for o in payload["entries"]])


def split_dataset(
    manifest: DatasetManifest,
    ratio: float = 0.8,
    seed: int = 0,
    grouped: bool = True,
) -> tuple[list[str], list[str]]:
    """Deterministic train/test video-id split.

    Grouped mode splits whole source groups, so the test fraction is within
    one group of the target; ungrouped mode splits individual videos.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    rng = DeterministicRng(seed)
    if grouped:
        groups = manifest.groups()
        if len(groups) < 2:
            raise ManifestError("grouped split needs at least 2 source groups")
        rng.shuffle(groups)
        n_test = int(np.floor(len(groups) * (1.0 - ratio) + 0.5))
        n_test = min(max(n_test, 1), len(groups) - 1)
        test_groups = set(groups[:n_test])
        train_ids = [e.video_id for e in manifest.entries
                     if e.source_group not in test_groups]
        test_ids = [e.video_id for e in manifest.entries
                    if e.source_group in test_groups]
    else:
        ids = [e.video_id for e in manifest.entries]
        if len(ids) < 2:
            raise ManifestError("ungrouped split needs at least 2 videos")
        rng.shuffle(ids)
        n_test = int(np.floor(len(ids) * (1.0 - ratio) + 0.5))
        n_test = min(max(n_test, 1), len(ids) - 1)
        test_ids = ids[:n_test]
        train_ids = ids[n_test:]
    return sorted(train_ids), sorted(test_ids)


@dataclass(eq=False)
class SplitOutcome:
    seed: int
    srcc: float
    plcc: float
    fit: LogisticFitParams


@dataclass(eq=False)
class EvalReport:
    splits: list[SplitOutcome] = field(default_factory=list)

    @property
    def srcc_values(self) -> np.ndarray:
        return np.array([s.srcc for s in self.splits])

    @property
    def plcc_values(self) -> np.ndarray:
        return np.array([s.plcc for s in self.splits])

    def summary(self) -> dict:
        return {
            "n_splits": len(self.splits),
            "srcc_mean": float(self.srcc_values.mean()),
            "srcc_std": float(self.srcc_values.std(ddof=0)),
            "plcc_mean": float(self.plcc_values.mean()),
            "plcc_std": float(self.plcc_values.std(ddof=0)),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["split_seed", "srcc", "plcc", "beta1", "beta2", "beta3", "beta4",
             "fit_converged"]
        )
        for s in self.splits:
            writer.writerow([
                s.seed, repr(s.srcc), repr(s.plcc),
                repr(s.fit.beta1), repr(s.fit.beta2),
                repr(s.fit.beta3), repr(s.fit.beta4),
                int(s.fit.converged),
            ])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2) + "\n"


def _load_samples(
    entries: Sequence[ManifestEntry], base_dir: str | Path | None
) -> list[VideoSample]:
    missing_mos = [e.video_id for e in entries if e.mos is None]
    if missing_mos:
        raise ManifestError("entries without MOS labels: " + ", ".join(missing_mos))
    missing_feat = [e.video_id for e in entries if e.features is None]
    if missing_feat:
        raise ManifestError("entries without features: " + ", ".join(missing_feat))
    return [
        VideoSample(
            clips=tuple(load_clip_features(e.features, base_dir)),
            label=float(e.mos),
            video_id=e.video_id,
        )
        for e in entries
    ]


def run_protocol(
    manifest: DatasetManifest,
    dims: ModelDims,
    train_cfg: TrainConfig,
    n_splits: int = 30,
    ratio: float = 0.8,
    base_seed: int = 0,
    grouped: bool = True,
    base_dir: str | Path | None = None,
) -> EvalReport:
    """Repeat split/train/evaluate ``n_splits`` times and aggregate."""
    if n_splits < 1:
        raise ValueError("n_splits must be >= 1")
    by_id = manifest.by_id()
    report = EvalReport()
    for split_index in range(n_splits):
        seed = base_seed + split_index
        train_ids, test_ids = split_dataset(manifest, ratio, seed, grouped)
        train_samples = _load_samples([by_id[v] for v in train_ids], base_dir)
        test_samples = _load_samples([by_id[v] for v in test_ids], base_dir)
        cfg = TrainConfig(
            learning_rate=train_cfg.learning_rate,
            plateau_epochs=train_cfg.plateau_epochs,
            lr_decay=train_cfg.lr_decay,
            max_epochs=train_cfg.max_epochs,
            batch_size=train_cfg.batch_size,
            seed=seed,
        )
        result = train(train_samples, cfg, dims=dims)
        preds = [score_video(result.params, s.clips) for s in test_samples]
        labels = [s.label for s in test_samples]
        plcc, fit = plcc_after_fit(preds, labels)
        report.splits.append(
            SplitOutcome(seed=seed, srcc=srcc(preds, labels), plcc=plcc, fit=fit)
        )
    return report


def crf_summary(
    manifest: DatasetManifest, scores: Mapping[str, float] | None = None
) -> list[dict]:
    """Per-CRF score distribution rows (sources grouped under crf = 0).

    ``scores`` defaults to the manifest MOS labels.
    """
    buckets: dict[int, list[float]] = {}
    for e in manifest.entries:
        value = scores.get(e.video_id) if scores is not None else e.mos
        if value is None:
            continue
        buckets.setdefault(e.crf, []).append(float(value))
    rows = []
    for crf in sorted(buckets):
        values = np.asarray(buckets[crf])
        rows.append({
            "crf": crf,
            "count": int(values.size),
            "mean": float(values.mean()),
            "q25": float(np.percentile(values, 25)),
            "median": float(np.percentile(values, 50)),
            "q75": float(np.percentile(values, 75)),
        })
    return rows


def crf_summary_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["crf", "count", "mean", "q25", "median", "q75"])
    for row in rows:
        writer.writerow([
            row["crf"], row["count"], repr(row["mean"]),
            repr(row["q25"]), repr(row["median"]), repr(row["q75"]),
        ])
    return buf.getvalue()
