import numpy as np
import pytest

from nrvqa.features import ClipFeatures
from nrvqa.model import (
    ModelDims,
    ModelParams,
    ShapeError,
    backward,
    forward_clip,
    fuse_clip,
    init_params,
    load_model,
    mse_loss,
    predict_video,
    regress,
    save_model,
    score_video,
    temporal_abs_diff,
    tensor_shapes,
)

TINY = ModelDims(half_samples=2, n_semantic=5, n_distortion=7, n_motion=4,
                 hidden_semantic=4, hidden_distortion=3, motion_out=3,
                 head_hidden1=6, head_hidden2=4)


def random_clip(rng, dims: ModelDims) -> ClipFeatures:
    rows = 2 * dims.half_samples
    return ClipFeatures(
        sf=rng.uniform(0, 1, (rows, dims.n_semantic)),
        df=rng.uniform(0, 1, (rows, dims.n_distortion)),
        mf=rng.uniform(0, 1, dims.n_motion),
    )


# --- scalar re-implementation of the fusion + regression math -------------
# Pure Python loops, no numpy: the independent oracle for the forward pass.

def scalar_linear_relu(w, b, x):
    out = []
    for row, bias in zip(w, b):
        acc = bias
        for wi, xi in zip(row, x):
            acc += wi * xi
        out.append(max(acc, 0.0))
    return out


def scalar_forward(params: ModelParams, cf: ClipFeatures):
    dims = params.dims
    L = dims.half_samples
    sf = cf.sf.tolist()
    df = cf.df.tolist()
    mf = cf.mf.tolist()
    sd_rows = []
    for k in range(1, L + 1):
        even_s = sf[2 * k - 1]
        prev_s = sf[2 * k - 2]
        diff_s = [abs(a - b) for a, b in zip(even_s, prev_s)]
        even_d = df[2 * k - 1]
        prev_d = df[2 * k - 2]
        diff_d = [abs(a - b) for a, b in zip(even_d, prev_d)]
        row = (
            scalar_linear_relu(params.w_sem.tolist(), params.b_sem.tolist(), even_s)
            + scalar_linear_relu(params.w_dis.tolist(), params.b_dis.tolist(), even_d)
            + scalar_linear_relu(params.w_sem_err.tolist(), params.b_sem_err.tolist(), diff_s)
            + scalar_linear_relu(params.w_dis_err.tolist(), params.b_dis_err.tolist(), diff_d)
        )
        sd_rows.append(row)
    w_t = params.w_temporal.tolist()
    b_t = float(params.b_temporal[0])
    stf = []
    for c in range(len(sd_rows[0])):
        acc = b_t
        for k in range(L):
            acc += w_t[k] * sd_rows[k][c]
        stf.append(acc)
    motion = scalar_linear_relu(params.w_motion.tolist(), params.b_motion.tolist(), mf)
    fused = stf + motion
    h1 = scalar_linear_relu(params.w_head1.tolist(), params.b_head1.tolist(), fused)
    h2 = scalar_linear_relu(params.w_head2.tolist(), params.b_head2.tolist(), h1)
    q = float(params.b_head3[0])
    for wi, xi in zip(params.w_head3[0].tolist(), h2):
        q += wi * xi
    return fused, q


class TestTemporalAbsDiff:
    def test_identical_rows_zero(self):
        out = temporal_abs_diff(np.array([[2.0, 3.0], [2.0, 3.0]]))
        assert np.array_equal(out, np.zeros((1, 2)))

    def test_hand_example(self):
        out = temporal_abs_diff(np.array([[1.0, 4.0], [3.0, 1.0]]))
        assert out.tolist() == [[2.0, 3.0]]

    def test_shape_contract(self, rng):
        out = temporal_abs_diff(rng.normal(size=(16, 7)))
        assert out.shape == (8, 7)

    def test_odd_rows_rejected(self, rng):
        with pytest.raises(ShapeError):
            temporal_abs_diff(rng.normal(size=(5, 3)))


class TestFuseClip:
    def test_zero_everything_gives_zero(self):
        params = ModelParams.zeros(TINY)
        rows = 2 * TINY.half_samples
        fused = fuse_clip(np.zeros((rows, 5)), np.zeros((rows, 7)), np.zeros(4), params)
        assert np.array_equal(fused, np.zeros(TINY.fused_len))

    def test_default_fused_length_384(self):
        dims = ModelDims()  # L=8, H_S=128, H_D=32, N_M'=64
        assert dims.fused_len == 2 * 128 + 2 * 32 + 64 == 384

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_scalar_oracle(self, seed):
        rng = np.random.default_rng(seed)
        params = init_params(TINY, seed)
        cf = random_clip(rng, TINY)
        trace = forward_clip(params, cf)
        fused_ref, q_ref = scalar_forward(params, cf)
        np.testing.assert_allclose(trace.fused, fused_ref, atol=1e-9)
        assert trace.q == pytest.approx(q_ref, abs=1e-9)

    def test_shape_error_names_stream(self, rng):
        params = init_params(TINY, 0)
        cf = random_clip(rng, TINY)
        bad = ClipFeatures(sf=cf.sf[:, :-1], df=cf.df, mf=cf.mf)
        with pytest.raises(ShapeError, match="semantic"):
            forward_clip(params, bad)
        bad = ClipFeatures(sf=cf.sf, df=cf.df, mf=np.zeros(9))
        with pytest.raises(ShapeError, match="motion"):
            forward_clip(params, bad)

    @pytest.mark.parametrize("hs,hd,nm2", [(1, 1, 1), (3, 2, 5), (16, 4, 8)])
    def test_fused_length_algebra(self, rng, hs, hd, nm2):
        dims = ModelDims(half_samples=3, n_semantic=4, n_distortion=7, n_motion=5,
                         hidden_semantic=hs, hidden_distortion=hd, motion_out=nm2,
                         head_hidden1=4, head_hidden2=3)
        params = init_params(dims, 1)
        cf = random_clip(rng, dims)
        assert forward_clip(params, cf).fused.shape == (2 * hs + 2 * hd + nm2,)

    def test_frame_pair_locality(self, rng):
        # perturbing the first frame of pair k only changes SD row k
        params = init_params(TINY, 5)
        cf = random_clip(rng, TINY)
        base = forward_clip(params, cf).sd
        sf2 = cf.sf.copy()
        sf2[2] += 0.25  # first frame of pair k=2 (0-indexed row 2k-2 = 2)
        other = forward_clip(params, ClipFeatures(sf=sf2, df=cf.df, mf=cf.mf)).sd
        changed = [k for k in range(TINY.half_samples) if not np.array_equal(base[k], other[k])]
        assert changed == [1]


class TestRegress:
    def test_zero_input_zero_weights_returns_bias(self):
        params = ModelParams.zeros(TINY)
        params.b_head3[0] = 2.75
        assert regress(np.zeros(TINY.fused_len), params) == 2.75

    def test_tiny_config_hand_computation(self):
        dims = ModelDims(half_samples=1, n_semantic=1, n_distortion=1, n_motion=1,
                         hidden_semantic=1, hidden_distortion=1, motion_out=1,
                         head_hidden1=2, head_hidden2=2)
        params = ModelParams.zeros(dims)
        # head: 5 -> 2 -> 2 -> 1 with hand-set weights
        params.w_head1[:] = [[1, 0, 0, 0, 0], [0, 1, 0, 0, -1]]
        params.b_head1[:] = [0.5, -0.25]
        params.w_head2[:] = [[2, 1], [-1, 1]]
        params.b_head2[:] = [0, 0.125]
        params.w_head3[:] = [[3, 2]]
        params.b_head3[:] = [0.0625]
        f = np.array([1.0, 2.0, 0.0, 0.0, 0.5])
        # by hand: z1 = (1.5, 1.25), h1 = same; z2 = (3+1.25, -1.5+1.25+0.125)
        # h2 = (4.25, 0); q = 3*4.25 + 0 + 0.0625 = 12.8125
        assert regress(f, params) == pytest.approx(12.8125, abs=1e-12)

    def test_length_mismatch(self):
        params = init_params(TINY, 0)
        with pytest.raises(ShapeError):
            regress(np.zeros(TINY.fused_len + 1), params)

    def test_finite_for_random_inputs(self, rng):
        params = init_params(TINY, 0)
        for _ in range(1000):
            value = regress(rng.normal(size=TINY.fused_len) * 100, params)
            assert np.isfinite(value)


class TestPredictVideo:
    def test_mean(self):
        assert predict_video([2.0, 4.0]) == 3.0

    def test_singleton(self):
        assert predict_video([1.7]) == 1.7

    def test_hand_mean(self):
        assert predict_video([1.1, 2.2, 3.3]) == pytest.approx(2.2)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            predict_video([])

    def test_clip_order_invariance(self, rng):
        scores = rng.normal(size=7).tolist()
        shuffled = list(reversed(scores))
        assert predict_video(scores) == pytest.approx(predict_video(shuffled), abs=1e-12)


class TestMseLoss:
    def test_perfect_fit(self):
        assert mse_loss([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_single(self):
        assert mse_loss([0.0], [2.0]) == 4.0

    def test_hand(self):
        assert mse_loss([1.0, 3.0], [2.0, 2.0]) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss([1.0], [1.0, 2.0])


class TestBackward:
    def _batch(self, rng, dims, n_videos=3):
        batch = []
        for _ in range(n_videos):
            clips = [random_clip(rng, dims) for _ in range(rng.integers(1, 3))]
            batch.append((clips, float(rng.uniform(1, 5))))
        return batch

    def test_zero_residual_zero_gradients(self, rng):
        params = init_params(TINY, 2)
        clips = [random_clip(rng, TINY)]
        label = score_video(params, clips)  # exact fit
        loss, grads = backward([(clips, label)], params)
        assert loss == 0.0
        for _, g in grads.tensors():
            assert np.array_equal(g, np.zeros_like(g))

    def test_finite_difference_all_parameters(self, rng):
        params = init_params(TINY, 7)
        batch = self._batch(rng, TINY)
        _, grads = backward(batch, params)

        def loss_value():
            preds = [predict_video([forward_clip(params, c).q for c in clips])
                     for clips, _ in batch]
            return mse_loss(preds, [label for _, label in batch])

        eps = 1e-3
        for name, tensor in params.tensors():
            flat = tensor.ravel()
            g = getattr(grads, name).ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = loss_value()
                flat[i] = orig - eps
                down = loss_value()
                flat[i] = orig
                fd = (up - down) / (2 * eps)
                scale = max(abs(fd), abs(g[i]), 1e-8)
                assert abs(fd - g[i]) / scale < 1e-4, f"{name}[{i}]"

    def test_residual_scaling_scales_final_bias_gradient(self, rng):
        params = init_params(TINY, 3)
        clips = [random_clip(rng, TINY)]
        pred = score_video(params, clips)
        _, g1 = backward([(clips, pred - 1.0)], params)
        _, g2 = backward([(clips, pred - 2.0)], params)
        assert g2.b_head3[0] == pytest.approx(2.0 * g1.b_head3[0], rel=1e-12)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            backward([], init_params(TINY, 0))


class TestModelFile:
    def test_roundtrip_bit_exact(self, tmp_path):
        params = init_params(TINY, 9)
        # force some awkward f32 values through the file
        params.w_sem[0, 0] = -0.0
        params.w_sem[0, 1] = 1e-42
        path = tmp_path / "m.bin"
        save_model(path, params)
        loaded = load_model(path)
        assert loaded.dims == TINY
        for (_, a), (_, b) in zip(params.tensors(), loaded.tensors()):
            assert np.array_equal(
                a.astype(np.float32).view(np.uint32),
                b.astype(np.float32).view(np.uint32),
            )
        save_model(tmp_path / "m2.bin", loaded)
        assert (tmp_path / "m.bin").read_bytes() == (tmp_path / "m2.bin").read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPENOPE" + b"\0" * 64)
        with pytest.raises(ValueError, match="magic"):
            load_model(path)

    def test_truncated_tensor(self, tmp_path):
        params = init_params(TINY, 0)
        path = tmp_path / "m.bin"
        save_model(path, params)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(Exception):
            load_model(path)

    def test_declared_tensor_order(self):
        names = [name for name, _ in tensor_shapes(TINY)]
        assert names == list(ModelParams.TENSOR_FIELDS)
