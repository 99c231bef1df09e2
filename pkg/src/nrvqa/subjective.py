"""Subjective-study score processing: z-scores, subject rejection, MOS.

Raw ratings (1..5, 0.1 steps) are standardized per subject with the sample
standard deviation, screened with a kurtosis-gated outlier-counting
rejection rule, linearly rescaled from [-3, 3] onto [1, 5], and averaged
per video into MOS labels.  Rejection runs on raw ratings by default and
z-scores are recomputed on the survivors; the order can be flipped.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

RATING_MIN = 1.0
RATING_MAX = 5.0
Z_CLAMP = 3.0

RATINGS_CSV_HEADER = ["subject_id", "video_id", "rating", "timestamp_iso8601"]
MOS_CSV_HEADER = ["video_id", "mos", "num_valid_subjects"]


class StudyError(Exception):
    """Base class for rating-pipeline failures."""


class DegenerateSubjectError(StudyError):
    """A subject rated everything identically; z-scores are undefined."""

    def __init__(self, subjects: Sequence[str]):
        super().__init__(
            "constant raters have undefined z-scores: " + ", ".join(subjects)
        )
        self.subjects = list(subjects)


class InsufficientDataError(StudyError):
    """Too few subjects or ratings for the requested step."""


class UnratedVideoError(StudyError):
    def __init__(self, videos: Sequence[str]):
        super().__init__("videos without any valid rating: " + ", ".join(videos))
        self.videos = list(videos)


@dataclass(frozen=True)
class RatingRecord:
    subject_id: str
    video_id: str
    rating: float
    timestamp: str = ""

    def __post_init__(self):
        if not RATING_MIN <= self.rating <= RATING_MAX:
            raise ValueError(f"rating {self.rating} outside [1, 5]")
        if abs(self.rating * 10 - round(self.rating * 10)) > 1e-6:
            raise ValueError(f"rating {self.rating} is not on the 0.1 grid")


@dataclass(eq=False)
class SubjectTable:
    """Dense (subject x video) rating matrix with NaN for missing cells."""

    subjects: list[str]
    videos: list[str]
    ratings: np.ndarray     # float64, NaN where unrated
    timestamps: dict[tuple[str, str], str] = field(default_factory=dict)

    @classmethod
    def from_records(cls, records: Iterable[RatingRecord]) -> "SubjectTable":
        records = list(records)
        subjects = sorted({r.subject_id for r in records})
        videos = sorted({r.video_id for r in records})
        s_index = {s: i for i, s in enumerate(subjects)}
        v_index = {v: j for j, v in enumerate(videos)}
        ratings = np.full((len(subjects), len(videos)), np.nan)
        timestamps = {}
        for rec in records:
            i, j = s_index[rec.subject_id], v_index[rec.video_id]
            if not math.isnan(ratings[i, j]):
                raise StudyError(
                    f"duplicate rating for ({rec.subject_id}, {rec.video_id})"
                )
            ratings[i, j] = rec.rating
            timestamps[(rec.subject_id, rec.video_id)] = rec.timestamp
        return cls(subjects, videos, ratings, timestamps)

    @property
    def mask(self) -> np.ndarray:
        return ~np.isnan(self.ratings)

    def counts(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def subset(self, keep: np.ndarray) -> "SubjectTable":
        subjects = [s for s, k in zip(self.subjects, keep) if k]
        return SubjectTable(subjects, list(self.videos), self.ratings[keep],
                            dict(self.timestamps))

    def to_records(self) -> list[RatingRecord]:
        out = []
        for i, s in enumerate(self.subjects):
            for j, v in enumerate(self.videos):
                if self.mask[i, j]:
                    out.append(RatingRecord(
                        s, v, float(self.ratings[i, j]),
                        self.timestamps.get((s, v), ""),
                    ))
        return out


def compute_zscores(table: SubjectTable) -> np.ndarray:
    """Per-subject standardization with the sample standard deviation."""
    counts = table.counts()
    if (counts < 2).any():
        few = [s for s, n in zip(table.subjects, counts) if n < 2]
        raise InsufficientDataError(
            "subjects with fewer than 2 ratings: " + ", ".join(few)
        )
    mu = np.nanmean(table.ratings, axis=1, keepdims=True)
    dev = table.ratings - mu
    ss = np.nansum(dev**2, axis=1)
    sigma = np.sqrt(ss / (counts - 1))
    degenerate = sigma == 0
    if degenerate.any():
        raise DegenerateSubjectError(
            [s for s, d in zip(table.subjects, degenerate) if d]
        )
    return dev / sigma[:, None]


def reject_subjects(table: SubjectTable, values: np.ndarray | None = None) -> np.ndarray:
    """Outlier-counting screening; returns a boolean reject flag per subject.

    Per video, ratings outside mean +/- 2*std (or +/- sqrt(20)*std when the
    kurtosis leaves [2, 4]) count toward a subject's P (above) and Q
    (below).  A subject is rejected when more than 5% of their ratings are
    outliers and the outliers are two-sided: |P - Q| / (P + Q) < 0.3.
    Comparisons are strict, so a panel in perfect agreement rejects nobody.
    """
    if len(table.subjects) < 3:
        raise InsufficientDataError("subject rejection requires at least 3 subjects")
    data = table.ratings if values is None else values
    mask = table.mask
    p = np.zeros(len(table.subjects))
    q = np.zeros(len(table.subjects))
    for j in range(len(table.videos)):
        col = data[:, j]
        have = mask[:, j]
        votes = col[have]
        if votes.size == 0:
            continue
        mean = votes.mean()
        std = votes.std(ddof=1) if votes.size > 1 else 0.0
        centered = votes - mean
        m2 = float((centered**2).mean())
        kurtosis = float((centered**4).mean() / m2**2) if m2 > 0 else 0.0
        spread = 2.0 if 2.0 <= kurtosis <= 4.0 else math.sqrt(20.0)
        upper = mean + spread * std
        lower = mean - spread * std
        p[have] += col[have] > upper
        q[have] += col[have] < lower
    counts = table.counts()
    total = p + q
    with np.errstate(invalid="ignore", divide="ignore"):
        outlier_rate = total / counts
        balance = np.where(total > 0, np.abs(p - q) / np.where(total > 0, total, 1), 1.0)
    return (outlier_rate > 0.05) & (balance < 0.3)


def rescale_zscores(z: np.ndarray) -> np.ndarray:
    """Clamp to [-3, 3], then map affinely onto [1, 5]."""
    clamped = np.clip(z, -Z_CLAMP, Z_CLAMP)
    return (clamped + Z_CLAMP) * (4.0 / (2.0 * Z_CLAMP)) + 1.0


@dataclass(eq=False)
class MosTable:
    videos: list[str]
    mos: np.ndarray
    num_valid: np.ndarray

    def as_dict(self) -> dict[str, float]:
        return {v: float(m) for v, m in zip(self.videos, self.mos)}


def compute_mos(zprime: np.ndarray, table: SubjectTable) -> MosTable:
    """Per-video mean of rescaled z-scores over the subjects who rated it."""
    mask = table.mask
    counts = mask.sum(axis=0)
    missing = counts == 0
    if missing.any():
        raise UnratedVideoError([v for v, m in zip(table.videos, missing) if m])
    filled = np.where(mask, zprime, 0.0)
    mos = filled.sum(axis=0) / counts
    return MosTable(list(table.videos), mos, counts)


@dataclass(eq=False)
class StudyResult:
    mos: MosTable
    rejected_subjects: list[str]
    table: SubjectTable          # surviving subjects only
    zscores: np.ndarray
    rescaled: np.ndarray
    rejection_input: str         # "raw" or "zscore", recorded for the report


def process_study(records: Iterable[RatingRecord], rejection: str = "raw") -> StudyResult:
    """Full pipeline: screen subjects, z-score survivors, rescale, average.

    ``rejection`` picks the values the screening rule sees: raw ratings
    (default) or the pre-screening z-scores.
    """
    if rejection not in ("raw", "zscore"):
        raise ValueError("rejection must be 'raw' or 'zscore'")
    table = SubjectTable.from_records(records)
    if rejection == "raw":
        flags = reject_subjects(table)
    else:
        flags = reject_subjects(table, values=compute_zscores(table))
    survivors = table.subset(~flags)
    if not survivors.subjects:
        raise InsufficientDataError("every subject was rejected")
    z = compute_zscores(survivors)
    zprime = np.where(survivors.mask, rescale_zscores(z), np.nan)
    mos = compute_mos(zprime, survivors)
    return StudyResult(
        mos=mos,
        rejected_subjects=[s for s, f in zip(table.subjects, flags) if f],
        table=survivors,
        zscores=z,
        rescaled=zprime,
        rejection_input=rejection,
    )


# --- CSV interfaces --------------------------------------------------------

def read_ratings_csv(path: str | Path) -> list[RatingRecord]:
    with open(path, newline="") as fh:
        return parse_ratings_csv(fh)


def parse_ratings_csv(fh) -> list[RatingRecord]:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header != RATINGS_CSV_HEADER:
        raise StudyError(
            f"ratings CSV header must be {','.join(RATINGS_CSV_HEADER)}"
        )
    records = []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise StudyError(f"line {line_no}: expected 4 columns, got {len(row)}")
        try:
            records.append(RatingRecord(row[0], row[1], float(row[2]), row[3]))
        except ValueError as exc:
            raise StudyError(f"line {line_no}: {exc}") from exc
    return records


def format_ratings_csv(records: Iterable[RatingRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RATINGS_CSV_HEADER)
    for rec in records:
        writer.writerow([rec.subject_id, rec.video_id, f"{rec.rating:.1f}", rec.timestamp])
    return buf.getvalue()


def write_ratings_csv(path: str | Path, records: Iterable[RatingRecord]) -> None:
    Path(path).write_text(format_ratings_csv(records))


def write_mos_csv(path: str | Path, mos: MosTable) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MOS_CSV_HEADER)
    for video, value, count in zip(mos.videos, mos.mos, mos.num_valid):
        writer.writerow([video, repr(float(value)), int(count)])
    Path(path).write_text(buf.getvalue())
