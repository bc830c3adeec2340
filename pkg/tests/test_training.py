import numpy as np
import pytest

from cdrsweep import (
    DivergedLossError,
    EmptySplitError,
    Normalizer,
    SectorSeries,
    ShapeMismatchError,
    TraceMismatchError,
    TrainConfig,
    backward,
    evaluate,
    fit,
    forward,
    grad_check,
    grad_check_by_tensor,
    init_params,
    make_windows,
    mse,
    predict_next,
)
from cdrsweep.training import _backward_batch, _forward_batch

from _oracles import mse_scalar
from test_gru import zero_params


def small_dataset(n_slots=60, window=6, seed=0, fraction=0.8):
    rng = np.random.default_rng(seed)
    t = np.arange(n_slots)
    lam = 5.0 + 4.0 * (1.0 + np.sin(2 * np.pi * t / 24)[:, None] + 0.2 * rng.normal(size=(n_slots, 4)))
    counts = np.clip(np.rint(lam), 0, None).astype(np.int64)
    series = SectorSeries(t0_ms=0, counts=counts)
    return make_windows(series, window_len=window, train_fraction=fraction)


def test_mse_matches_hand_value_and_oracle():
    assert mse(np.array([3.0, 0, 0, 0]), np.array([5.0, 0, 0, 0])) == 1.0
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    assert abs(mse(a, b) - mse_scalar(a.tolist(), b.tolist())) < 1e-14


def test_mse_rejects_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        mse(np.zeros(4), np.zeros(5))
    with pytest.raises(ShapeMismatchError):
        mse(np.zeros((2, 4)), np.zeros(4))


def test_normalizer_minmax_and_roundtrip():
    values = np.array([[0.0, 10.0, 5.0, 7.0],
                       [4.0, 30.0, 5.0, 3.0],
                       [2.0, 20.0, 5.0, 11.0]])
    norm = Normalizer.fit_minmax(values)
    assert norm.offset.tolist() == [0.0, 10.0, 5.0, 3.0]
    assert norm.scale.tolist() == [4.0, 20.0, 1.0, 8.0]  # constant col -> scale 1

    scaled = norm.normalize(values)
    assert scaled.min() >= 0.0 and scaled.max() <= 1.0
    assert np.max(np.abs(norm.denormalize(scaled) - values)) < 1e-12

    with pytest.raises(ValueError):
        Normalizer(offset=np.zeros(4), scale=np.array([1.0, 0.0, 1.0, 1.0]))


def test_backward_matches_central_differences():
    # independent numeric check, written out longhand rather than via grad_check
    rng = np.random.default_rng(123)
    p = init_params(3, 4, 3, rng)
    for arr in p.arrays().values():
        arr += rng.normal(scale=0.2, size=arr.shape)
    xs = rng.normal(size=(6, 3))
    y = rng.normal(size=3)

    _, grads = backward(p, forward(p, np.zeros(4), xs), y)

    eps = 1e-6
    for name, arr in p.arrays().items():
        analytic = getattr(grads, name)
        flat = arr.reshape(-1)
        for idx in range(flat.size):
            saved = flat[idx]
            flat[idx] = saved + eps
            up = mse(forward(p, np.zeros(4), xs).y_hat, y)
            flat[idx] = saved - eps
            down = mse(forward(p, np.zeros(4), xs).y_hat, y)
            flat[idx] = saved
            numeric = (up - down) / (2 * eps)
            a = analytic.reshape(-1)[idx]
            assert abs(a - numeric) <= 1e-6 * max(1.0, abs(a), abs(numeric)), name


def test_backward_loss_equals_mse_of_trace():
    rng = np.random.default_rng(5)
    p = init_params(2, 3, 2, rng)
    xs = rng.normal(size=(4, 2))
    y = rng.normal(size=2)
    trace = forward(p, np.zeros(3), xs)
    loss, _ = backward(p, trace, y)
    assert loss == mse(trace.y_hat, y)


def test_backward_rejects_mismatched_target_and_trace():
    rng = np.random.default_rng(6)
    p = init_params(2, 3, 2, rng)
    trace = forward(p, np.zeros(3), rng.normal(size=(4, 2)))
    with pytest.raises(TraceMismatchError):
        backward(p, trace, np.zeros(3))
    other = init_params(2, 5, 2, rng)
    with pytest.raises(TraceMismatchError):
        backward(other, trace, np.zeros(2))


def test_grad_check_accepts_healthy_model():
    rng = np.random.default_rng(7)
    p = init_params(4, 6, 4, rng)
    sample = (rng.normal(size=(5, 4)), rng.normal(size=4))
    per_tensor = grad_check_by_tensor(p, sample, epsilon=1e-5)
    assert set(per_tensor) == set(p.arrays())
    assert grad_check(p, sample, epsilon=1e-5) == max(per_tensor.values())
    assert grad_check(p, sample, epsilon=1e-5) < 1e-6


def test_grad_check_flags_a_broken_gradient(monkeypatch):
    import cdrsweep.training as training_mod

    rng = np.random.default_rng(8)
    p = init_params(2, 3, 2, rng)
    xs, y = rng.normal(size=(3, 2)), rng.normal(size=2)
    assert grad_check(p, (xs, y), 1e-5) < 1e-6

    original = training_mod.backward

    def crooked(params, trace, target):
        loss, g = original(params, trace, target)
        g.W_z *= 1.01  # a one-percent analytic bug must not slip through
        return loss, g

    monkeypatch.setattr(training_mod, "backward", crooked)
    assert training_mod.grad_check(p, (xs, y), 1e-5) > 1e-3


def test_batched_forward_matches_per_sequence():
    rng = np.random.default_rng(9)
    p = init_params(4, 5, 4, rng)
    X = rng.normal(size=(7, 6, 4))
    out = _forward_batch(p, X)
    for b in range(7):
        trace = forward(p, np.zeros(5), X[b])
        assert np.max(np.abs(out["y_hat"][b] - trace.y_hat)) < 1e-12
        assert np.max(np.abs(out["h_last"][b] - trace.h_last)) < 1e-12


def test_batched_backward_is_mean_of_sequence_gradients():
    rng = np.random.default_rng(10)
    p = init_params(3, 4, 3, rng)
    X = rng.normal(size=(5, 6, 3))
    Y = rng.normal(size=(5, 3))

    loss_b, g_b = _backward_batch(p, _forward_batch(p, X), Y)

    per_seq_losses = []
    sums = {name: np.zeros_like(arr) for name, arr in p.arrays().items()}
    for b in range(5):
        loss, g = backward(p, forward(p, np.zeros(4), X[b]), Y[b])
        per_seq_losses.append(loss)
        for name, arr in g.arrays().items():
            sums[name] += arr
    assert abs(loss_b - np.mean(per_seq_losses)) < 1e-12
    for name, total in sums.items():
        assert np.max(np.abs(getattr(g_b, name) - total / 5)) < 1e-12, name


def test_fit_is_bit_reproducible_and_seed_sensitive():
    ds = small_dataset()
    cfg = TrainConfig(epochs=2, steps_per_epoch=5, batch_size=8, seed=3)
    p1, n1, r1 = fit(ds, cfg, hidden_dim=6)
    p2, n2, r2 = fit(ds, cfg, hidden_dim=6)
    for name, arr in p1.arrays().items():
        assert np.array_equal(arr, getattr(p2, name)), name
    assert r1.losses == r2.losses
    assert np.array_equal(n1.offset, n2.offset)

    p3, _, _ = fit(ds, TrainConfig(epochs=2, steps_per_epoch=5, batch_size=8, seed=4),
                   hidden_dim=6)
    assert any(not np.array_equal(arr, getattr(p3, name))
               for name, arr in p1.arrays().items())


def test_fit_normalizer_comes_from_train_split_only():
    ds = small_dataset()
    _, norm, _ = fit(ds, TrainConfig(epochs=1, steps_per_epoch=2, batch_size=4, seed=0),
                     hidden_dim=4)
    train_x, train_y = ds.train_arrays()
    pool = np.concatenate([train_x.reshape(-1, 4), train_y])
    assert np.array_equal(norm.offset, pool.min(axis=0))
    span = pool.max(axis=0) - pool.min(axis=0)
    assert np.array_equal(norm.scale, np.where(span > 0, span, 1.0))


def test_fit_loss_history_length_and_decrease():
    ds = small_dataset(n_slots=120, window=8)
    cfg = TrainConfig(epochs=3, steps_per_epoch=20, batch_size=16, seed=1)
    _, _, report = fit(ds, cfg, hidden_dim=8)
    assert len(report.losses) == 60
    head = np.mean(report.losses[:10])
    tail = np.mean(report.losses[-10:])
    assert tail < head, f"loss did not move: {head} -> {tail}"
    lines = report.history_csv().splitlines()
    assert lines[0] == "step,epoch,loss"
    assert lines[1].startswith("0,0,")
    assert lines[21].startswith("20,1,")
    assert len(lines) == 61


def test_fit_diverges_cleanly_at_huge_learning_rate():
    ds = small_dataset()
    cfg = TrainConfig(epochs=2, steps_per_epoch=50, batch_size=8,
                      learning_rate=1e6, optimizer="sgd",
                      gradient_clip_norm=None, seed=0)
    with pytest.raises(DivergedLossError):
        fit(ds, cfg, hidden_dim=6)


def test_fit_rejects_bad_config_and_empty_split():
    ds = small_dataset()
    with pytest.raises(ValueError):
        fit(ds, TrainConfig(optimizer="rmsprop"), hidden_dim=4)
    with pytest.raises(ValueError):
        fit(ds, TrainConfig(epochs=0), hidden_dim=4)

    broken = small_dataset()
    broken.split_index = broken.n_sequences  # nothing held out
    with pytest.raises(EmptySplitError):
        fit(broken, TrainConfig(epochs=1, steps_per_epoch=1), hidden_dim=4)


def test_gradient_clipping_changes_the_run():
    # sgd feels the clip directly (adam largely renormalizes it away)
    ds = small_dataset()
    base = dict(epochs=1, steps_per_epoch=10, batch_size=8, seed=5,
                optimizer="sgd", learning_rate=0.05)
    _, _, loose = fit(ds, TrainConfig(gradient_clip_norm=None, **base), hidden_dim=6)
    _, _, huge = fit(ds, TrainConfig(gradient_clip_norm=1e9, **base), hidden_dim=6)
    _, _, tight = fit(ds, TrainConfig(gradient_clip_norm=1e-9, **base), hidden_dim=6)
    assert loose.losses == huge.losses  # threshold never reached
    assert tight.losses != loose.losses
    # clipped-to-nothing updates track a frozen-weights run batch for batch
    frozen = dict(base, learning_rate=1e-30)
    _, _, still = fit(ds, TrainConfig(gradient_clip_norm=None, **frozen), hidden_dim=6)
    assert np.allclose(tight.losses, still.losses, atol=1e-6)


def test_evaluate_with_frozen_model_predicts_the_offset():
    # zero weights keep h at 0, so the denormalized prediction is the offset
    ds = small_dataset()
    p = zero_params(h=3, d=4, o=4)
    norm = Normalizer(offset=np.array([1.0, 2.0, 3.0, 4.0]), scale=np.ones(4))
    res = evaluate(p, norm, ds)
    test_x, test_y = ds.test_arrays()
    assert np.max(np.abs(res.predictions - norm.offset)) < 1e-12
    expected = np.mean((norm.offset - test_y) ** 2)
    assert abs(res.mse_total - expected) < 1e-12

    persisted = test_x[:, -1, :]
    assert abs(res.persistence_mse_total - np.mean((persisted - test_y) ** 2)) < 1e-12
    assert res.mse_per_sector.shape == (4,)
    assert abs(res.mse_per_sector.mean() - res.mse_total) < 1e-12


def test_eval_table_lists_every_test_sequence():
    ds = small_dataset()
    p = zero_params(h=2, d=4, o=4)
    res = evaluate(p, Normalizer.identity(4), ds)
    lines = res.table_csv().splitlines()
    assert lines[0] == "seq_index,sector,prediction,truth"
    assert len(lines) == 1 + 4 * res.n_test
    assert lines[1].startswith("0,A,")
    assert lines[4].startswith("0,D,")
    assert lines[5].startswith("1,A,")


def test_predict_next_denormalizes_and_validates():
    p = zero_params(h=2, d=4, o=4)
    norm = Normalizer(offset=np.array([5.0, 6.0, 7.0, 8.0]), scale=np.ones(4))
    pred = predict_next(p, norm, np.zeros((10, 4)))
    assert np.max(np.abs(pred - norm.offset)) < 1e-12
    with pytest.raises(ShapeMismatchError):
        predict_next(p, norm, np.zeros((10, 3)))
