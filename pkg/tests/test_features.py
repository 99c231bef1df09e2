import numpy as np
import pytest

from nrvqa.features import (
    ClipFeatures,
    FeatureFileKindError,
    FeatureFileLengthError,
    FeatureFileMagicError,
    FeatureFileVersionError,
    FeatureLookupError,
    FileMotionProvider,
    FileSemanticProvider,
    ProviderConfigError,
    ToyMotionBackbone,
    ToySemanticBackbone,
    extract_clip_features,
    load_clip_features,
    motion_features,
    read_feature_file,
    read_feature_manifest,
    save_clip_features,
    semantic_features,
    write_feature_file,
    write_feature_manifest,
)
from nrvqa.media import Clip, SamplerConfig, sample_indices

from conftest import gray_frame, make_frame, sequence_from_frames


class TestFeatureFile:
    def test_roundtrip_bit_exact(self, tmp_path, rng):
        mat = rng.normal(size=(16, 7)).astype(np.float32)
        path = tmp_path / "x.feat"
        write_feature_file(path, "distortion", mat)
        ff = read_feature_file(path)
        assert ff.kind == "distortion"
        assert (ff.count, ff.dim) == (16, 7)
        assert np.array_equal(
            ff.data.view(np.uint32), mat.view(np.uint32)
        )  # bitwise, not just value-wise

    def test_negative_zero_and_subnormals_survive(self, tmp_path):
        mat = np.array([[-0.0, 1e-42, -1e-40, 3.5]], dtype=np.float32)
        path = tmp_path / "x.feat"
        write_feature_file(path, "semantic", mat)
        back = read_feature_file(path).data
        assert np.array_equal(back.view(np.uint32), mat.view(np.uint32))
        assert np.signbit(back[0, 0])

    def test_empty_matrix(self, tmp_path):
        path = tmp_path / "empty.feat"
        write_feature_file(path, "motion", np.zeros((0, 5), dtype=np.float32))
        ff = read_feature_file(path)
        assert (ff.count, ff.dim) == (0, 5)
        assert ff.data.shape == (0, 5)

    def test_length_mismatch(self, tmp_path):
        path = tmp_path / "x.feat"
        write_feature_file(path, "motion", np.ones((2, 3), dtype=np.float32))
        raw = path.read_bytes()
        path.write_bytes(raw[:-4])  # drop one float
        with pytest.raises(FeatureFileLengthError):
            read_feature_file(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.feat"
        path.write_bytes(b"NOTMAGIC" + b"\0" * 16)
        with pytest.raises(FeatureFileMagicError):
            read_feature_file(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "x.feat"
        write_feature_file(path, "motion", np.ones((1, 1), dtype=np.float32))
        raw = bytearray(path.read_bytes())
        raw[8] = 9  # version little-endian low byte
        path.write_bytes(bytes(raw))
        with pytest.raises(FeatureFileVersionError):
            read_feature_file(path)

    def test_bad_kind_code(self, tmp_path):
        path = tmp_path / "x.feat"
        write_feature_file(path, "motion", np.ones((1, 1), dtype=np.float32))
        raw = bytearray(path.read_bytes())
        raw[12] = 7
        path.write_bytes(bytes(raw))
        with pytest.raises(FeatureFileKindError):
            read_feature_file(path)

    def test_non_finite_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_feature_file(tmp_path / "x.feat", "motion",
                               np.array([[np.inf]], dtype=np.float32))


class TestToySemantic:
    def test_dim_is_80(self):
        assert ToySemanticBackbone(0).dim == 8 + 16 + 24 + 32

    def test_same_seed_same_output(self, rng):
        frame = make_frame(rng.integers(0, 256, (20, 24, 3), dtype=np.uint8))
        a = ToySemanticBackbone(0).frame_features(frame)
        b = ToySemanticBackbone(0).frame_features(frame)
        assert np.array_equal(a, b)

    def test_different_seed_differs(self, rng):
        frame = make_frame(rng.integers(0, 256, (20, 24, 3), dtype=np.uint8))
        a = ToySemanticBackbone(0).frame_features(frame)
        b = ToySemanticBackbone(1).frame_features(frame)
        assert not np.array_equal(a, b)

    def test_zero_frame_zero_features(self):
        feats = ToySemanticBackbone(3).frame_features(gray_frame(16, 16, 0))
        assert np.array_equal(feats, np.zeros(80))

    def test_stage_spatial_extents(self, rng):
        w, h = 50, 37
        frame = make_frame(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))
        maps = ToySemanticBackbone(0).stage_maps(frame)
        for j, fmap in enumerate(maps, start=1):
            assert fmap.shape[1] == -(-h // 2**j)  # ceil division
            assert fmap.shape[2] == -(-w // 2**j)

    def test_homogeneity_in_pixel_scale(self):
        # bias-free conv + ReLU + averaging: scaling pixels by c scales features by c
        base = gray_frame(16, 16, 60)
        double = gray_frame(16, 16, 120)
        backbone = ToySemanticBackbone(0)
        f1 = backbone.frame_features(base)
        f2 = backbone.frame_features(double)
        assert np.allclose(f2, 2.0 * f1, rtol=1e-12, atol=1e-12)

    def test_constant_frame_shift_invariant(self):
        backbone = ToySemanticBackbone(0)
        a = backbone.frame_features(gray_frame(16, 16, 77, index=0))
        b = backbone.frame_features(gray_frame(16, 16, 77, index=1))
        assert np.array_equal(a, b)


class TestToyMotion:
    def test_dim_default_32(self):
        assert ToyMotionBackbone(0).dim == 32

    def test_static_clip_is_zero(self):
        frames = [gray_frame(16, 16, 90, index=i) for i in range(10)]
        clip = Clip(0, tuple(frames))
        assert np.array_equal(ToyMotionBackbone(0).clip_features(clip), np.zeros(32))

    def test_moving_clip_nonzero(self, rng):
        frames = [
            make_frame(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8), index=i)
            for i in range(5)
        ]
        clip = Clip(0, tuple(frames))
        assert np.abs(ToyMotionBackbone(0).clip_features(clip)).sum() > 0


class TestFileProviders:
    def test_semantic_passthrough_bit_equal(self, tmp_path, rng):
        table = rng.normal(size=(32, 608)).astype(np.float32)
        path = tmp_path / "s.feat"
        write_feature_file(path, "semantic", table)
        provider = FileSemanticProvider.from_file(path, half_samples=8, clip_len=30)
        assert provider.dim == 608
        row = provider.row(5)
        assert np.array_equal(row.view(np.uint32), table[5].view(np.uint32))

    def test_frame_to_row_mapping(self, rng):
        table = np.arange(2 * 16 * 4, dtype=np.float32).reshape(32, 4)
        provider = FileSemanticProvider(table, half_samples=8, clip_len=30)
        positions = sample_indices(30, 8)
        # frame at clip 1, sampled slot 3 -> row 16 + 3
        frame = gray_frame(16, 16, 0, index=30 + positions[3])
        got = semantic_features(provider, frame)
        assert np.array_equal(got, table[19].astype(np.float64))

    def test_unsampled_frame_rejected(self):
        provider = FileSemanticProvider(np.zeros((32, 4), dtype=np.float32), 8, 30)
        positions = set(sample_indices(30, 8))
        bad = next(i for i in range(30) if i not in positions)
        with pytest.raises(FeatureLookupError):
            provider.frame_features(gray_frame(16, 16, 0, index=bad))

    def test_motion_passthrough(self, rng):
        table = rng.normal(size=(3, 512)).astype(np.float32)
        provider = FileMotionProvider(table, video_id="vid7")
        clip = Clip(2, tuple(gray_frame(16, 16, 1, index=i) for i in range(4)))
        assert motion_features(provider, clip).shape == (512,)

    def test_motion_missing_row_names_video_and_clip(self):
        provider = FileMotionProvider(np.zeros((2, 8), dtype=np.float32), video_id="vid9")
        clip = Clip(5, tuple(gray_frame(16, 16, 1, index=i) for i in range(4)))
        with pytest.raises(FeatureLookupError, match=r"vid9.*5"):
            provider.clip_features(clip)

    def test_missing_provider_is_config_error(self):
        with pytest.raises(ProviderConfigError):
            semantic_features(None, gray_frame(16, 16, 0))
        with pytest.raises(ProviderConfigError):
            motion_features(None, Clip(0, ()))

    def test_wrong_kind_file_rejected(self, tmp_path):
        path = tmp_path / "m.feat"
        write_feature_file(path, "distortion", np.zeros((1, 7), dtype=np.float32))
        with pytest.raises(ProviderConfigError):
            FileMotionProvider.from_file(path)


class TestExtractionPipeline:
    def _sequence(self, rng, frames=60, size=24, rate=30):
        arrs = [
            make_frame(rng.integers(0, 256, (size, size, 3), dtype=np.uint8), index=i)
            for i in range(frames)
        ]
        return sequence_from_frames(arrs, rate)

    def test_shapes(self, rng):
        seq = self._sequence(rng)
        bundles = extract_clip_features(
            seq, SamplerConfig(half_samples=4),
            ToySemanticBackbone(0), ToyMotionBackbone(0),
        )
        assert len(bundles) == 2
        for b in bundles:
            assert b.sf.shape == (8, 80)
            assert b.df.shape == (8, 7)
            assert b.mf.shape == (32,)

    def test_save_load_roundtrip(self, tmp_path, rng):
        seq = self._sequence(rng)
        bundles = extract_clip_features(
            seq, SamplerConfig(half_samples=4),
            ToySemanticBackbone(0), ToyMotionBackbone(0),
        )
        fs = save_clip_features(tmp_path, "vid1", bundles)
        assert fs.clip_count == 2 and fs.half_samples == 4
        loaded = load_clip_features(fs)
        assert len(loaded) == 2
        for a, b in zip(bundles, loaded):
            # float32 quantization on write is the only change
            assert np.array_equal(a.sf.astype(np.float32), b.sf.astype(np.float32))
            assert np.array_equal(a.mf.astype(np.float32), b.mf.astype(np.float32))

    def test_substitutability_file_matches_toy(self, tmp_path, rng):
        # extracting with file-backed providers built from a previous toy run
        # reproduces the same bundles
        seq = self._sequence(rng)
        cfg = SamplerConfig(half_samples=4)
        toy_bundles = extract_clip_features(
            seq, cfg, ToySemanticBackbone(0), ToyMotionBackbone(0))
        fs = save_clip_features(tmp_path, "vid1", toy_bundles)
        sem = FileSemanticProvider.from_file(fs.semantic_path, 4, 30, "vid1")
        mot = FileMotionProvider.from_file(fs.motion_path, "vid1")
        again = extract_clip_features(seq, cfg, sem, mot)
        for a, b in zip(toy_bundles, again):
            assert np.array_equal(a.sf.astype(np.float32), b.sf.astype(np.float32))
            assert np.array_equal(a.mf.astype(np.float32), b.mf.astype(np.float32))


class TestProviderDims:
    def test_pair_geometry(self):
        from nrvqa.features import FeatureDims, provider_dims

        dims = provider_dims(ToySemanticBackbone(0), ToyMotionBackbone(0))
        assert dims == FeatureDims(n_semantic=80, n_distortion=7, n_motion=32)

    def test_substitutable_pairs_feed_the_regressor(self, rng):
        # any provider pair agreeing with FeatureDims yields a valid forward pass
        from nrvqa.features import provider_dims
        from nrvqa.model import ModelDims, forward_clip, init_params

        sem = FileSemanticProvider(rng.normal(size=(8, 12)).astype(np.float32), 1, 4)
        mot = FileMotionProvider(rng.normal(size=(4, 5)).astype(np.float32))
        fd = provider_dims(sem, mot)
        dims = ModelDims(half_samples=1, n_semantic=fd.n_semantic,
                         n_distortion=fd.n_distortion, n_motion=fd.n_motion,
                         hidden_semantic=3, hidden_distortion=2, motion_out=2,
                         head_hidden1=4, head_hidden2=3)
        cf = ClipFeatures(sf=rng.normal(size=(2, 12)), df=rng.normal(size=(2, 7)),
                          mf=rng.normal(size=5))
        assert np.isfinite(forward_clip(init_params(dims, 0), cf).q)

    def test_missing_provider_rejected(self):
        from nrvqa.features import provider_dims

        with pytest.raises(ProviderConfigError):
            provider_dims(None, ToyMotionBackbone(0))


class TestManifestSidecar:
    def test_roundtrip(self, tmp_path, rng):
        bundles = [
            ClipFeatures(sf=rng.normal(size=(4, 6)), df=rng.normal(size=(4, 7)),
                         mf=rng.normal(size=3))
        ]
        fs = save_clip_features(tmp_path, "vidA", bundles)
        manifest_path = tmp_path / "features.json"
        write_feature_manifest(manifest_path, {"vidA": fs})
        back = read_feature_manifest(manifest_path)
        assert back["vidA"] == fs
