import numpy as np
import pytest

import denoiser as dn
from c2f_codec import C2FConfig, encode_centerline
from denoiser import (
    Denoiser,
    DenoiserArch,
    RidgeProjector,
    TrainConfig,
    check_compatible,
    denoise,
    embed_timestep,
    encode_volume,
    init_params,
    load_checkpoint,
    loss_and_grad_from_draws,
    make_example,
    pool_volume,
    ridge_voxels,
    save_checkpoint,
    train,
    zero_params,
)
from diffusion import make_schedule
from errors import ConfigError, DivergenceError, FormatError
from metrics import betti_numbers, precision_recall
from synth import TreeSpec, make_case, rasterize
from volume_io import Centerline, Volume

TUBE_CODEC = C2FConfig(grid=(4, 4, 4), max_len=16)
TUBE_ARCH = DenoiserArch(dims=(12, 12, 12), max_len=16, width=10, hidden_dim=8, time_dim=4, n_heads=2,
                         ff_dim=8, pool_size=2)


def _examples(arch, n, seed, codec=None):
    codec = codec or C2FConfig(grid=(4, 4, 4), max_len=arch.max_len)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        v0 = rng.choice([-1.0, 1.0], size=(arch.max_len, arch.width))
        v0[:, -3:] = rng.uniform(-0.5, 0.5, size=(arch.max_len, 3))
        out.append(make_example(v0, Volume(rng.normal(size=arch.dims)), arch, codec))
    return out


def _straight_tube():
    line = Centerline.from_points((x, 4, 4) for x in range(2, 10))
    return line, rasterize(line, TreeSpec(dims=(12, 12, 12), noise_sigma=0.0))


def _with_random_head(params, seed):
    rng = np.random.default_rng(seed)
    params.arrays["ff2_w"] = rng.uniform(-0.5, 0.5, size=params["ff2_w"].shape)
    return params


def test_gradients_match_finite_differences(tiny_arch):
    arch = tiny_arch
    params = _with_random_head(init_params(arch, seed=0), 13)
    sched = make_schedule(100)
    batch = _examples(arch, 2, seed=1)
    rng = np.random.default_rng(2)
    ts = np.array([37, 93])
    eps = rng.standard_normal((2, arch.max_len, arch.width))

    _, grads = loss_and_grad_from_draws(params, arch, batch, sched, ts, eps)
    h = 1e-4
    for name, array in params.arrays.items():
        numeric = np.zeros_like(array)
        for idx in np.ndindex(array.shape):
            saved = array[idx]
            array[idx] = saved + h
            up, _ = loss_and_grad_from_draws(params, arch, batch, sched, ts, eps, need_grad=False)
            array[idx] = saved - h
            down, _ = loss_and_grad_from_draws(params, arch, batch, sched, ts, eps, need_grad=False)
            array[idx] = saved
            numeric[idx] = (up - down) / (2 * h)
        analytic = grads[name]
        scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-7)
        assert np.linalg.norm(analytic - numeric) / scale < 1e-4, name


def test_row_permutation_equivariance(tiny_arch, tiny_codec, small_volume):
    params = _with_random_head(init_params(tiny_arch, seed=3), 14)
    model = Denoiser(params, tiny_arch, tiny_codec, make_schedule(100))
    cond = model.condition(small_volume)
    v_t = np.random.default_rng(4).normal(size=(tiny_arch.max_len, tiny_arch.width))
    perm = np.array([2, 0, 3, 1])
    out = model.denoise(v_t, cond, 17)
    out_perm = model.denoise(v_t[perm], cond, 17)
    assert np.allclose(out[perm], out_perm, atol=1e-12)


def test_zero_params_predict_zero(tiny_arch, tiny_codec, small_volume):
    params = zero_params(tiny_arch)
    model = Denoiser(params, tiny_arch, tiny_codec, make_schedule(10))
    out = model.denoise(np.ones(model.shape), model.condition(small_volume), 5)
    assert np.array_equal(out, np.zeros(model.shape))


def test_fresh_model_predicts_the_ridge(tiny_arch, tiny_codec, small_volume):
    model = Denoiser(init_params(tiny_arch, seed=2), tiny_arch, tiny_codec, make_schedule(10))
    cond = model.condition(small_volume)
    v_t = np.random.default_rng(6).normal(size=model.shape)
    snapped, _ = cond.ridge.project(v_t)
    assert np.array_equal(model.denoise(v_t, cond, 5), snapped)


def test_codec_must_match_the_architecture(tiny_arch):
    with pytest.raises(ConfigError):
        Denoiser(init_params(tiny_arch), tiny_arch, C2FConfig(grid=(8, 8, 8), max_len=4), make_schedule(10))
    with pytest.raises(ConfigError):
        make_example(np.zeros((4, 10)), Volume(np.zeros((4, 4, 4))), tiny_arch, C2FConfig(grid=4, max_len=8))


def test_straight_tube_ridge_is_its_axis():
    _, volume = _straight_tube()
    ridge = ridge_voxels(volume.voxels)
    # the tube's end caps are shallower than its interior
    assert ridge.tolist() == [[x, 4, 4] for x in range(3, 9)]


def test_ridge_of_a_synthetic_tree_is_loop_free_and_close():
    case = make_case(TreeSpec(), seed=4, max_len=64, case_id="c")
    ridge = Centerline(ridge_voxels(case.volume.voxels))
    assert betti_numbers(ridge).betti1 == 0
    report = precision_recall(ridge, case.centerline, 2.0)
    assert report.precision >= 0.8
    assert report.recall >= 0.8


def test_flat_volume_still_has_a_ridge_voxel():
    assert ridge_voxels(np.zeros((3, 3, 3))).shape == (1, 3)


def test_clean_rows_project_onto_themselves():
    _, volume = _straight_tube()
    projector = RidgeProjector.from_volume(volume, TUBE_CODEC)
    v = encode_centerline(Centerline(projector.points), volume.dims, TUBE_CODEC)
    perm = np.random.default_rng(0).permutation(len(v))
    snapped, dist = projector.project(v[perm])
    assert np.array_equal(snapped, v[perm])
    assert np.allclose(dist, 0.0)


def test_projection_keeps_as_many_rows_as_ridge_voxels():
    _, volume = _straight_tube()
    projector = RidgeProjector.from_volume(volume, TUBE_CODEC)
    v = np.random.default_rng(1).normal(size=(16, TUBE_CODEC.width))
    snapped, dist = projector.project(v)
    valid = snapped[:, 0] > TUBE_CODEC.flag_threshold
    assert valid.sum() == len(projector.points)
    assert np.array_equal(np.flatnonzero(valid), np.sort(np.argsort(-v[:, 0])[:len(projector.points)]))
    assert np.all(snapped[~valid] == TUBE_CODEC.pad_value)
    assert np.all(dist[~valid] == 0.0)
    assert sorted(map(tuple, snapped[valid].tolist())) == sorted(map(tuple, projector.rows.tolist()))


def test_gradient_vanishes_at_an_exact_prediction():
    _, volume = _straight_tube()
    params = zero_params(TUBE_ARCH)
    params.arrays["skip_w"] = np.eye(TUBE_ARCH.width)
    ridge = Centerline(ridge_voxels(volume.voxels))
    v0 = encode_centerline(ridge, volume.dims, TUBE_CODEC)
    batch = [make_example(v0, volume, TUBE_ARCH, TUBE_CODEC)]
    eps = np.zeros((1,) + v0.shape)
    value, grads = loss_and_grad_from_draws(params, TUBE_ARCH, batch, make_schedule(100), np.array([1]), eps)
    assert value == 0.0
    assert all(np.all(g == 0.0) for g in grads.values())


def test_duplicated_batch_gives_the_same_mean_gradient(tiny_arch):
    params = _with_random_head(init_params(tiny_arch, seed=4), 15)
    sched = make_schedule(100)
    example = _examples(tiny_arch, 1, seed=16)[0]
    eps = np.random.default_rng(17).standard_normal((1, tiny_arch.max_len, tiny_arch.width))
    one_value, one = loss_and_grad_from_draws(params, tiny_arch, [example], sched, np.array([40]), eps)
    two_value, two = loss_and_grad_from_draws(
        params, tiny_arch, [example, example], sched, np.array([40, 40]), np.concatenate([eps, eps])
    )
    assert np.isclose(one_value, two_value)
    assert all(np.allclose(one[k], two[k], atol=1e-12) for k in one)


def test_loss_is_reproducible_with_the_same_rng(tiny_arch):
    params = init_params(tiny_arch, seed=5)
    batch = _examples(tiny_arch, 3, seed=18)
    sched = make_schedule(100)
    a = dn.loss(params, tiny_arch, batch, sched, np.random.default_rng(5))
    b = dn.loss(params, tiny_arch, batch, sched, np.random.default_rng(5))
    assert a == b


def test_volume_encoding_depends_on_the_volume(tiny_arch):
    params = init_params(tiny_arch, seed=6)
    rng = np.random.default_rng(19)
    a = encode_volume(params, tiny_arch, Volume(rng.normal(size=(4, 4, 4))))
    b = encode_volume(params, tiny_arch, Volume(rng.normal(size=(4, 4, 4))))
    assert a.shape == (tiny_arch.hidden_dim,)
    assert not np.allclose(a, b)


def test_timestep_embedding_norm_and_distinct_rows():
    emb = embed_timestep(np.arange(1001), 32)
    assert np.allclose(np.linalg.norm(emb, axis=1), np.sqrt(16))
    assert len(np.unique(emb.round(12), axis=0)) == 1001


def test_init_is_seed_deterministic(tiny_arch):
    a, b, c = init_params(tiny_arch, 5), init_params(tiny_arch, 5), init_params(tiny_arch, 6)
    assert all(np.array_equal(a[k], b[k]) for k in a.arrays)
    assert not np.array_equal(a["in_w"], c["in_w"])
    assert np.all(a["in_b"] == 0)
    assert np.array_equal(a["skip_w"], np.eye(tiny_arch.width))
    assert np.all(a["ff2_w"] == 0)


def test_denoise_rejects_bad_input(tiny_arch, tiny_codec, small_volume):
    params = init_params(tiny_arch)
    sched = make_schedule(10)
    cond = Denoiser(params, tiny_arch, tiny_codec, sched).condition(small_volume)
    with pytest.raises(ValueError):
        denoise(params, tiny_arch, np.zeros((4, 9)), cond, 1, sched)
    bad = np.zeros((4, 10))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        denoise(params, tiny_arch, bad, cond, 1, sched)


def test_pooling_averages_blocks():
    voxels = np.arange(4 * 4 * 4, dtype=np.float64).reshape(4, 4, 4)
    pooled = pool_volume(voxels, 2)
    assert pooled.shape == (2, 2, 2)
    assert pooled[0, 0, 0] == voxels[:2, :2, :2].mean()
    assert pool_volume(np.full((5, 3, 4), 2.0), 2).tolist() == np.full((2, 2, 2), 2.0).tolist()


def test_timestep_embedding_shape_and_range():
    emb = embed_timestep(np.array([0, 10, 500]), 8)
    assert emb.shape == (3, 8)
    assert np.all(np.abs(emb) <= 1.0)
    assert np.array_equal(emb[0], np.r_[np.zeros(4), np.ones(4)])


def test_arch_validation():
    with pytest.raises(ConfigError):
        DenoiserArch(hidden_dim=10, n_heads=4)
    with pytest.raises(ConfigError):
        DenoiserArch(time_dim=3)
    with pytest.raises(ConfigError):
        DenoiserArch(dims=(4, 4, 4), pool_size=8)


def test_zero_learning_rate_keeps_initial_params(tiny_arch):
    params = init_params(tiny_arch, seed=0)
    examples = _examples(tiny_arch, 3, seed=8)
    cfg = TrainConfig(epochs=3, batch_size=2, learning_rate=0.0, seed=0)
    result = train(params, tiny_arch, examples, examples, cfg, make_schedule(100))
    assert all(np.array_equal(result.params[k], params[k]) for k in params.arrays)


def test_training_lowers_validation_loss(tiny_arch):
    params = init_params(tiny_arch, seed=0)
    examples = _examples(tiny_arch, 4, seed=9)
    sched = make_schedule(100)
    cfg = TrainConfig(epochs=60, batch_size=2, learning_rate=1e-2, seed=0, eval_every=20)
    initial = dn._mean_loss(params, tiny_arch, examples, sched, np.random.default_rng(cfg.seed + 1), cfg.batch_size)
    result = train(params, tiny_arch, examples, examples, cfg, sched)
    assert result.best_val_loss < initial
    assert list(result.history.columns) == ["epoch", "train_loss", "val_loss"]
    assert len(result.history) == 60
    assert result.best_val_loss == result.history["val_loss"].min()


def test_training_is_deterministic(tiny_arch):
    examples = _examples(tiny_arch, 3, seed=10)
    cfg = TrainConfig(epochs=4, batch_size=2, learning_rate=1e-3, seed=3)
    a = train(init_params(tiny_arch, 1), tiny_arch, examples, examples, cfg, make_schedule(50))
    b = train(init_params(tiny_arch, 1), tiny_arch, examples, examples, cfg, make_schedule(50))
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params.arrays)
    assert a.history.equals(b.history)


def test_non_finite_loss_aborts(tiny_arch, monkeypatch):
    examples = _examples(tiny_arch, 2, seed=11)

    def exploding(params, arch, batch, sched, ts, eps, need_grad=True):
        return float("nan"), {k: np.zeros_like(v) for k, v in params.arrays.items()}

    monkeypatch.setattr(dn, "loss_and_grad_from_draws", exploding)
    with pytest.raises(DivergenceError) as info:
        train(init_params(tiny_arch), tiny_arch, examples, examples, TrainConfig(epochs=2), make_schedule(10))
    assert info.value.epoch == 1


def test_checkpoint_round_trip(tiny_arch, tmp_path):
    params = init_params(tiny_arch, seed=12)
    path = save_checkpoint(params, tiny_arch, tmp_path / "model.ckpt")
    loaded, arch = load_checkpoint(path)
    assert arch == tiny_arch
    assert loaded.init_seed == 12
    assert all(np.array_equal(loaded[k], params[k]) for k in params.arrays)


def test_checkpoint_bytes_are_stable(tiny_arch, tmp_path):
    params = init_params(tiny_arch, seed=12)
    a = save_checkpoint(params, tiny_arch, tmp_path / "a.ckpt").read_bytes()
    b = save_checkpoint(params, tiny_arch, tmp_path / "b.ckpt").read_bytes()
    assert a == b


def test_truncated_checkpoint(tiny_arch, tmp_path):
    path = save_checkpoint(init_params(tiny_arch), tiny_arch, tmp_path / "m.ckpt")
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_not_a_checkpoint(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"hello\n")
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_incompatible_architecture_lists_differences(tiny_arch):
    other = DenoiserArch(dims=(4, 4, 4), max_len=4, width=10, hidden_dim=16, time_dim=4, n_heads=2,
                         ff_dim=8, pool_size=2)
    with pytest.raises(ConfigError) as info:
        check_compatible(tiny_arch, other)
    assert "hidden_dim" in str(info.value)
    check_compatible(tiny_arch, tiny_arch)
