import json

import pytest

from nrvqa.features import save_clip_features
from nrvqa.protocol import (
    DatasetManifest,
    ManifestEntry,
    ManifestError,
    crf_summary,
    crf_summary_csv,
    run_protocol,
    split_dataset,
)
from nrvqa.training import TrainConfig

from synth import SYNTH_DIMS, synthetic_dataset

CRF_LEVELS = [16, 20, 24, 28, 32, 36, 40, 44]


def taolive_style_manifest(n_groups=418) -> DatasetManifest:
    entries = []
    for g in range(n_groups):
        group = f"src{g:04d}"
        entries.append(ManifestEntry(f"{group}_crf00", group, 0))
        for crf in CRF_LEVELS:
            entries.append(ManifestEntry(f"{group}_crf{crf:02d}", group, crf))
    return DatasetManifest(entries)


class TestManifest:
    def test_save_load_roundtrip(self, tmp_path):
        manifest = taolive_style_manifest(3)
        path = tmp_path / "m.json"
        manifest.save(path)
        back = DatasetManifest.load(path)
        assert [e.video_id for e in back.entries] == [e.video_id for e in manifest.entries]
        assert back.entries[0].crf == 0

    def test_duplicate_id_rejected(self):
        with pytest.raises(ManifestError, match="duplicate"):
            DatasetManifest([
                ManifestEntry("a", "g1", 0),
                ManifestEntry("a", "g2", 16),
            ])

    def test_invalid_crf_rejected(self):
        with pytest.raises(ManifestError, match="CRF"):
            ManifestEntry("a", "g1", 23)


class TestSplit:
    def test_taolive_arithmetic(self):
        manifest = taolive_style_manifest(418)
        train_ids, test_ids = split_dataset(manifest, ratio=0.8, seed=0)
        assert len(train_ids) == 334 * 9 == 3006
        assert len(test_ids) == 84 * 9 == 756

    def test_deterministic_per_seed(self):
        manifest = taolive_style_manifest(10)
        a = split_dataset(manifest, seed=42)
        b = split_dataset(manifest, seed=42)
        assert a == b
        c = split_dataset(manifest, seed=43)
        assert a != c

    def test_partition_and_group_integrity_over_seeds(self):
        manifest = taolive_style_manifest(12)
        group_of = {e.video_id: e.source_group for e in manifest.entries}
        all_ids = {e.video_id for e in manifest.entries}
        for seed in range(100):
            train_ids, test_ids = split_dataset(manifest, seed=seed)
            assert set(train_ids) | set(test_ids) == all_ids
            assert not set(train_ids) & set(test_ids)
            assert not {group_of[v] for v in train_ids} & {group_of[v] for v in test_ids}

    def test_ungrouped_mode_splits_videos(self):
        manifest = taolive_style_manifest(10)  # 90 videos
        train_ids, test_ids = split_dataset(manifest, seed=1, grouped=False)
        assert len(test_ids) == 18
        assert len(train_ids) == 72

    def test_single_group_rejected(self):
        manifest = taolive_style_manifest(1)
        with pytest.raises(ManifestError):
            split_dataset(manifest, seed=0)


def synthetic_manifest(tmp_path, n_videos=40):
    """Feature-file-backed manifest over the shared synthetic generator."""
    samples = synthetic_dataset(n_videos, seed=0)
    entries = []
    for i, sample in enumerate(samples):
        fs = save_clip_features(tmp_path / "feats", sample.video_id, list(sample.clips))
        entries.append(ManifestEntry(
            video_id=sample.video_id,
            source_group=f"g{i // 2:03d}",  # two videos per group
            crf=0 if i % 2 == 0 else 32,
            mos=sample.label,
            features=fs,
        ))
    return DatasetManifest(entries)


class TestRunProtocol:
    def test_single_split_aggregate_equals_split(self, tmp_path):
        manifest = synthetic_manifest(tmp_path)
        cfg = TrainConfig(max_epochs=2, batch_size=4, seed=0)
        report = run_protocol(manifest, SYNTH_DIMS, cfg, n_splits=1)
        assert len(report.splits) == 1
        summary = report.summary()
        assert summary["srcc_mean"] == report.splits[0].srcc
        assert summary["srcc_std"] == 0.0

    def test_row_count_and_csv(self, tmp_path):
        manifest = synthetic_manifest(tmp_path)
        cfg = TrainConfig(max_epochs=6, batch_size=2, seed=0)
        report = run_protocol(manifest, SYNTH_DIMS, cfg, n_splits=4)
        lines = report.to_csv().splitlines()
        assert len(lines) == 5  # header + one row per split
        payload = json.loads(report.to_json())
        assert payload["n_splits"] == 4

    def test_synthetic_recovery_through_protocol(self, tmp_path):
        manifest = synthetic_manifest(tmp_path, n_videos=200)
        cfg = TrainConfig(max_epochs=50, batch_size=1, seed=0)
        report = run_protocol(manifest, SYNTH_DIMS, cfg, n_splits=2)
        assert report.summary()["srcc_mean"] > 0.95

    def test_missing_labels_reported(self, tmp_path):
        manifest = synthetic_manifest(tmp_path)
        manifest.entries[3] = ManifestEntry(
            video_id=manifest.entries[3].video_id,
            source_group=manifest.entries[3].source_group,
            crf=manifest.entries[3].crf,
            mos=None,
            features=manifest.entries[3].features,
        )
        with pytest.raises(ManifestError, match=manifest.entries[3].video_id):
            run_protocol(manifest, SYNTH_DIMS, TrainConfig(max_epochs=1), n_splits=1)


class TestCrfSummary:
    def test_constant_scores(self):
        manifest = taolive_style_manifest(5)
        scores = {e.video_id: 3.0 for e in manifest.entries}
        rows = crf_summary(manifest, scores)
        assert len(rows) == 9
        for row in rows:
            assert row["mean"] == 3.0
            assert row["q75"] - row["q25"] == 0.0

    def test_monotone_decreasing_in_crf(self):
        manifest = taolive_style_manifest(6)
        scores = {
            e.video_id: 5.0 - 4.0 * (e.crf / 44.0) for e in manifest.entries
        }
        rows = crf_summary(manifest, scores)
        means = [row["mean"] for row in rows]
        assert all(a > b for a, b in zip(means, means[1:]))

    def test_nine_levels_present(self):
        manifest = taolive_style_manifest(2)
        rows = crf_summary(manifest, {e.video_id: 2.5 for e in manifest.entries})
        assert [row["crf"] for row in rows] == [0] + CRF_LEVELS

    def test_csv_shape(self):
        manifest = taolive_style_manifest(2)
        rows = crf_summary(manifest, {e.video_id: 2.5 for e in manifest.entries})
        lines = crf_summary_csv(rows).splitlines()
        assert lines[0] == "crf,count,mean,q25,median,q75"
        assert len(lines) == 10

    def test_defaults_to_manifest_mos(self):
        entries = [
            ManifestEntry("a", "g1", 0, mos=4.0),
            ManifestEntry("b", "g1", 16, mos=2.0),
            ManifestEntry("c", "g2", 16),  # unlabeled, skipped
        ]
        rows = crf_summary(DatasetManifest(entries))
        assert rows == [
            {"crf": 0, "count": 1, "mean": 4.0, "q25": 4.0, "median": 4.0, "q75": 4.0},
            {"crf": 16, "count": 1, "mean": 2.0, "q25": 2.0, "median": 2.0, "q75": 2.0},
        ]
