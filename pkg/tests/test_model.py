import numpy as np
import pytest

from hrhn import checkpoint
from hrhn.conv import ConvGeometry
from hrhn.data import Windows
from hrhn.model import (
    HRHN,
    RHN,
    RHN_CONV,
    RHN_HA,
    TINY,
    ModelConfig,
    TrainConfig,
    VariantConfig,
    forward,
    gradient_check_model,
    init_params,
    loss,
    mse_loss,
    parse_variant,
    predict,
    train,
)
from hrhn import numerics as nx
from hrhn.numerics import ShapeError

import oracles


def _windows(rng, cfg, n):
    return Windows(
        rng.standard_normal((n, cfg.T - 1, cfg.n)),
        rng.standard_normal((n, cfg.T - 1, cfg.d)),
        rng.standard_normal((n, cfg.d)),
        np.arange(n),
    )


def _randomize(params, rng, scale=0.5):
    for p in params.parameters():
        p.data = (scale * rng.standard_normal(p.shape)).astype(p.dtype)
    return params


# ---------------------------------------------------------------- variants


def test_variant_depths():
    assert HRHN.depths(3) == (1, 2, 3)
    assert RHN.depths(3) == (3,)
    assert VariantConfig(False, "single_layer", 2).depths(3) == (2,)
    with pytest.raises(ValueError):
        VariantConfig(False, "single_layer", 4).depths(3)
    with pytest.raises(ValueError):
        VariantConfig(True, "classical_top", 1)


@pytest.mark.parametrize(
    "text,expected",
    [
        ("hrhn", HRHN),
        ("RHN", RHN),
        ("rhn_conv", RHN_CONV),
        ("rhn_ha", RHN_HA),
        ("rhn_attn1", VariantConfig(False, "single_layer", 1)),
        ("single_layer(2)", VariantConfig(True, "single_layer", 2)),
        ("classical_top", RHN_CONV),
    ],
)
def test_parse_variant(text, expected):
    assert parse_variant(text) == expected


def test_parse_variant_rejects_unknown():
    with pytest.raises(ValueError):
        parse_variant("transformer")


# ---------------------------------------------------------------- forward


@pytest.mark.parametrize("variant", [HRHN, RHN, RHN_CONV, RHN_HA, VariantConfig(True, "single_layer", 1)])
def test_forward_shapes(variant):
    rng = np.random.default_rng(0)
    params = init_params(TINY, variant, seed=1)
    out = forward(_windows(rng, TINY, 3), params)
    assert out.shape == (3, 1) and out.dtype == np.float32


def test_single_window_forward():
    rng = np.random.default_rng(0)
    w = _windows(rng, TINY, 2)
    params = init_params(TINY, HRHN, seed=1, dtype=np.float64)
    single = forward(w[1], params)
    assert single.shape == (1,)
    np.testing.assert_allclose(single.data, forward(w, params).data[1], atol=1e-12)


def test_zero_parameters_return_output_bias():
    rng = np.random.default_rng(0)
    for variant in (HRHN, RHN):
        params = init_params(TINY, variant, seed=0, dtype=np.float64)
        for p in params.parameters():
            p.data[:] = 0
        params.output.b.data[:] = 0.37
        out = forward(_windows(rng, TINY, 4), params).data
        assert np.array_equal(out, np.full((4, 1), 0.37))


def test_forward_is_deterministic():
    rng = np.random.default_rng(0)
    w = _windows(rng, TINY, 5)
    a = forward(w, init_params(TINY, HRHN, seed=3)).data
    b = forward(w, init_params(TINY, HRHN, seed=3)).data
    assert np.array_equal(a, b)


def test_batch_rows_are_independent():
    rng = np.random.default_rng(2)
    w = _windows(rng, TINY, 4)
    params = init_params(TINY, HRHN, seed=0, dtype=np.float64)
    full = forward(w, params).data
    np.testing.assert_allclose(forward(w.subset([2]), params).data[0], full[2], atol=1e-12)


def test_trace_exposes_normalized_attention():
    rng = np.random.default_rng(4)
    params = _randomize(init_params(TINY, HRHN, dtype=np.float64), rng, 2.0)
    trace = {}
    forward(_windows(rng, TINY, 3), params, trace=trace)
    assert len(trace["attention"]) == TINY.T  # contexts for t = 1..T
    for w in trace["attention"]:
        assert w.shape == (3, TINY.K, TINY.T - 1)
        assert np.abs(w.sum(axis=-1) - 1).max() <= 1e-6


def test_k1_hierarchical_equals_classical():
    cfg = ModelConfig(n=4, d=1, T=5, m=6, l=8, p=8, K=1, conv=TINY.conv)
    rng = np.random.default_rng(5)
    for _ in range(5):
        params = _randomize(init_params(cfg, HRHN, dtype=np.float64), rng)
        w = _windows(rng, cfg, 3)
        a = forward(w, params, HRHN).data
        b = forward(w, params, RHN_CONV).data
        assert np.abs(a - b).max() <= 1e-12


def test_variant_param_mismatch_is_shape_error():
    params = init_params(TINY, HRHN)
    with pytest.raises(ShapeError):
        forward(_windows(np.random.default_rng(0), TINY, 1), params, RHN)
    with pytest.raises(ShapeError):
        forward(_windows(np.random.default_rng(0), TINY, 1), params, RHN_CONV)


def test_window_shape_mismatch():
    params = init_params(TINY, HRHN)
    bad = ModelConfig(n=5, d=1, T=5, m=6, l=8, p=8, K=2, conv=TINY.conv)
    with pytest.raises(ShapeError, match="n=4"):
        forward(_windows(np.random.default_rng(0), bad, 1), params)


def test_inconsistent_params_rejected():
    a = init_params(TINY, HRHN)
    b = init_params(ModelConfig(n=4, d=1, T=5, m=6, l=9, p=8, K=2, conv=TINY.conv), HRHN)
    with pytest.raises(ShapeError, match="encoder hidden"):
        type(a)(a.config, a.variant, a.frontend, b.encoder, a.attention, a.fusion, a.decoder, a.output)


# ---------------------------------------------------------------- loss


def test_loss_examples():
    t = nx.tensor([[1.0], [2.0]], np.float64)
    assert float(mse_loss(t, [[1.0], [2.0]]).data) == 0.0
    assert float(mse_loss(t, [[2.0], [5.0]]).data) == 5.0  # (1 + 9) / 2


def test_loss_sums_dimensions_and_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n, d = rng.integers(1, 6), rng.integers(1, 4)
        p, y = rng.standard_normal((n, d)), rng.standard_normal((n, d))
        got = float(mse_loss(nx.tensor(p, np.float64), y).data)
        assert abs(got - oracles.mse_objective(p.tolist(), y.tolist())) < 1e-12


def test_loss_rejects_empty_and_mismatch():
    with pytest.raises(ValueError):
        mse_loss(nx.tensor(np.zeros((0, 1)), np.float64), np.zeros((0, 1)))
    with pytest.raises(ShapeError):
        mse_loss(nx.tensor(np.zeros((2, 1)), np.float64), np.zeros((3, 1)))


def test_loss_gradient_flows_to_every_group():
    rng = np.random.default_rng(1)
    params = _randomize(init_params(TINY, HRHN, dtype=np.float64), rng)
    nx.backward(loss(_windows(rng, TINY, 4), params))
    for p in params.parameters():
        assert np.abs(p.grad).sum() > 0, p.name


@pytest.mark.parametrize("variant", [HRHN, RHN])
def test_full_model_gradient_check(variant):
    errors = gradient_check_model(variant=variant)
    assert max(errors.values()) < 1e-4, errors


# ---------------------------------------------------------------- training


def test_zero_learning_rate_leaves_params_unchanged():
    rng = np.random.default_rng(0)
    w = _windows(rng, TINY, 10)
    params = init_params(TINY, HRHN, seed=0)
    before = params.state_dict()
    result = train(w, None, params, TrainConfig(epochs=2, batch_size=4, learning_rate=0.0))
    after = result.params.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)
    assert result.steps == 6


def test_training_lowers_loss_and_is_reproducible():
    rng = np.random.default_rng(0)
    w = _windows(rng, TINY, 32)
    w.target[:] = w.y[:, -1] * 0.5  # learnable signal
    cfg = TrainConfig(epochs=15, batch_size=8, learning_rate=1e-2, seed=7)
    r1 = train(w, None, init_params(TINY, HRHN, seed=0), cfg)
    r2 = train(w, None, init_params(TINY, HRHN, seed=0), cfg)
    assert r1.log[-1]["train_loss"] < r1.log[0]["train_loss"]
    assert [row["train_loss"] for row in r1.log] == [row["train_loss"] for row in r2.log]


def test_training_keeps_best_validation_epoch():
    rng = np.random.default_rng(1)
    tr, va = _windows(rng, TINY, 16), _windows(rng, TINY, 8)
    result = train(tr, va, init_params(TINY, HRHN), TrainConfig(epochs=4, batch_size=8, learning_rate=5e-2))
    best = min(result.log, key=lambda r: r["val_rmse"])
    assert result.best_epoch == best["epoch"]
    np.testing.assert_allclose(
        np.sqrt(np.mean((predict(va, result.params) - va.target) ** 2)), best["val_rmse"], rtol=1e-5
    )


def test_max_steps_and_patience():
    rng = np.random.default_rng(2)
    w = _windows(rng, TINY, 20)
    result = train(w, None, init_params(TINY, HRHN), TrainConfig(epochs=50, batch_size=4, max_steps=7))
    assert result.steps == 7
    # validation that cannot improve: zero learning rate stops after `patience` flat epochs
    result = train(w, w, init_params(TINY, HRHN), TrainConfig(epochs=50, batch_size=10, learning_rate=0.0, patience=3))
    assert result.log[-1]["epoch"] == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported_not_raised():
    rng = np.random.default_rng(3)
    w = _windows(rng, TINY, 8)
    w.target[:] = 1e30
    result = train(w, None, init_params(TINY, HRHN), TrainConfig(epochs=3, batch_size=8))
    assert result.diverged


# ---------------------------------------------------------------- checkpoint


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    params = init_params(TINY, HRHN, seed=4)
    path = checkpoint.save(tmp_path / "a.hrhn", params, {"note": "x"})
    loaded, extra = checkpoint.load(path)
    assert extra == {"note": "x"}
    for name, arr in params.state_dict().items():
        assert arr.tobytes() == loaded.state_dict()[name].tobytes()
    again = checkpoint.save(tmp_path / "b.hrhn", loaded, {"note": "x"})
    assert path.read_bytes() == again.read_bytes()


def test_checkpoint_preserves_variant_and_geometry():
    cfg = ModelConfig(n=9, d=2, T=4, m=5, l=6, p=7, K=3, conv=ConvGeometry((2, 3), 2, (2, 1)))
    params = init_params(cfg, VariantConfig(True, "single_layer", 2), seed=1)
    loaded, _ = checkpoint.from_bytes(checkpoint.to_bytes(params))
    assert loaded.config == cfg and loaded.variant == params.variant


def test_checkpoint_rejects_garbage():
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.from_bytes(b"NOTACKPT" + bytes(20))
    buf = checkpoint.to_bytes(init_params(TINY, HRHN))
    with pytest.raises(checkpoint.CheckpointError, match="truncated"):
        checkpoint.from_bytes(buf[:-4])
