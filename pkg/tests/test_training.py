import dataclasses
import json
import math
import warnings

import numpy as np
import pytest

from bgslf import checkpoint as ck
from bgslf import data as dp
from bgslf import synth
from bgslf import tensor as T
from bgslf.config import ConfigError, TrainConfig, load_run_config
from bgslf.metrics import EmptyMaskWarning, all_metrics, format_table, masked_mae, masked_mae_loss, masked_mape, masked_rmse
from bgslf.model import BGSLF, count_parameters
from bgslf.optim import Adam, NumericError, clip_grad_norm, lr_at
from bgslf.training import evaluate, evaluate_model, historical_average, model_from_checkpoint, train

TINY = TrainConfig(period=20, hidden=8, mgn_hidden=4, batch_size=32, epochs=3, seed=3)


@pytest.fixture(scope="module")
def tiny_ds():
    series, _ = synth.diffusion_series(4, 400, seed=11)
    return dp.zscore_fit_apply(dp.from_array(series))


@pytest.fixture(scope="module")
def tiny_run(tiny_ds):
    return train(TINY, tiny_ds)


# metrics

def test_masked_mae_cases():
    assert masked_mae([1, 2, 4], [1, 4, 0], [True, True, False]) == 1.0
    assert masked_mae([3.0, 2.0], [3.0, 2.0]) == 0.0
    with pytest.warns(EmptyMaskWarning):
        assert masked_mae([1.0], [2.0], [False]) == 0.0


def test_rmse_and_mape_cases():
    assert masked_rmse([1, 2], [1, 4]) == math.sqrt(2)
    assert masked_mape([2], [1]) == 100.0
    assert masked_mape([2, 5], [1, 0]) == 100.0
    with pytest.warns(EmptyMaskWarning):
        assert masked_mape([2], [0]) == 0.0


def test_metric_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        masked_mae(np.ones(3), np.ones(4))


def test_masked_loss_matches_metric(rng):
    pred = rng.standard_normal((2, 3, 4, 1))
    tgt = rng.standard_normal((2, 3, 4, 1))
    mask = rng.uniform(size=tgt.shape) > 0.3
    assert masked_mae_loss(T.Tensor(pred), tgt, mask).item() == pytest.approx(masked_mae(pred, tgt, mask), rel=1e-12)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert masked_mae_loss(T.Tensor(pred), tgt, np.zeros_like(mask)).item() == 0.0


def test_format_table_layout():
    row = {"mae": 1.0, "rmse": 2.0, "mape": 3.0}
    text = format_table({3: row, 6: row, 12: row}, title="bgslf")
    lines = text.splitlines()
    assert lines[0] == "bgslf" and len(lines) == 5
    assert "MAE" in lines[1] and "RMSE" in lines[1] and "MAPE" in lines[1]


# optimizer and schedule

def test_adam_first_step():
    p = T.Tensor(np.zeros(3), requires_grad=True)
    Adam({"p": p}).step({"p": np.ones(3)}, lr=0.1)
    np.testing.assert_allclose(p.data, -0.1 / (1 + 1e-8), rtol=1e-12)
    assert p.data[0] == pytest.approx(-0.0999999990, abs=1e-12)


def test_adam_zero_gradients_leave_params():
    p = T.Tensor(np.arange(4.0), requires_grad=True)
    opt = Adam({"p": p})
    for _ in range(5):
        opt.step({"p": np.zeros(4)}, lr=0.1)
    np.testing.assert_array_equal(p.data, np.arange(4.0))


def test_adam_rejects_non_finite_gradient():
    p = T.Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(NumericError, match="'enc.w'"):
        Adam({"enc.w": p}).step({"enc.w": np.array([1.0, np.nan])}, lr=0.1)


def test_clip_grad_norm():
    g = {"a": np.array([3.0, 0.0]), "b": np.array([0.0, 4.0])}
    assert clip_grad_norm(g, 5.0) == 5.0
    np.testing.assert_array_equal(g["a"], [3.0, 0.0])
    assert clip_grad_norm(g, 1.0) == 5.0
    total = math.sqrt(sum(float(np.sum(v ** 2)) for v in g.values()))
    assert total == pytest.approx(1.0, rel=1e-9)


def test_lr_schedule():
    # 3e-3 * 0.1 is 3.0000000000000003e-4 in binary floating point
    assert lr_at(0) == 3e-3
    assert lr_at(5) == 3e-3
    assert lr_at(6) == pytest.approx(3e-4, rel=1e-12)
    assert lr_at(12) == pytest.approx(3e-5, rel=1e-12)
    assert lr_at(18) == 3e-5
    assert lr_at(199) == 3e-5
    with pytest.raises(ValueError):
        lr_at(-1)


# configuration

def test_config_defaults_and_validation():
    cfg = TrainConfig()
    assert (cfg.period, cfg.num_graphs, cfg.epochs, cfg.lr, cfg.lr_decay, cfg.decay_every, cfg.lr_floor) == \
        (288, 2, 200, 3e-3, 0.1, 6, 3e-5)
    for bad in ({"lr": 0.0}, {"lr_decay": 1.0}, {"period": 0}, {"num_graphs": 0}, {"activation": "gelu"}):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


def test_config_rejects_unknown_key(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"data": "x.bin", "perios": 12}))
    with pytest.raises(ConfigError, match="perios"):
        load_run_config(p)


def test_config_round_trip(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"data": "x.bin", "period": 12, "hidden": 4}))
    cfg, run = load_run_config(p)
    assert cfg.period == 12 and cfg.hidden == 4 and cfg.alpha == 1.0
    assert run == {"data": "x.bin", "format": None, "out_dir": "run"}
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


# model size

def test_count_parameters_affine():
    assert count_parameters({"w": T.Tensor(np.zeros((3, 4))), "b": T.Tensor(np.zeros(4))}) == 16


def test_count_parameters_full_scale_and_batch_independent():
    seg = np.zeros((83, 207, 1, 288), dtype=np.float32)
    n = count_parameters(BGSLF(TrainConfig(), seg))
    assert n < 1_000_000
    assert n == count_parameters(BGSLF(TrainConfig(batch_size=8), seg))


# training

def test_zero_epoch_run(tiny_ds):
    res = train(dataclasses.replace(TINY, epochs=0), tiny_ds)
    assert res.history == [] and res.checkpoint.epoch == 0
    assert math.isfinite(res.checkpoint.best_valid)
    table, _ = evaluate(res.checkpoint, tiny_ds)
    assert all(math.isfinite(v) for row in table.values() for v in row.values())


def test_training_reduces_loss(tiny_run):
    h = tiny_run.history
    assert len(h) == 3
    assert h[-1].train_mae < h[0].train_mae
    assert h[0].lr == 3e-3
    assert tiny_run.checkpoint.best_valid == min(e.valid_mae for e in h)


def test_training_is_deterministic(tiny_ds, tiny_run):
    again = train(TINY, tiny_ds)
    assert again.step_losses == tiny_run.step_losses
    for k, v in tiny_run.checkpoint.params.items():
        assert np.array_equal(v, again.checkpoint.params[k])


def test_max_steps_stops_early(tiny_ds):
    res = train(dataclasses.replace(TINY, epochs=50), tiny_ds, max_steps=4)
    assert len(res.step_losses) == 4


def test_mgn_receives_gradient(tiny_ds):
    cfg = dataclasses.replace(TINY, epochs=1)
    res = train(cfg, tiny_ds, max_steps=2)
    init = BGSLF(cfg, dp.graph_segments(tiny_ds, cfg.period).values, 1).state()
    moved = [k for k in init if k.startswith("mgn.") and not np.array_equal(init[k], res.model.state()[k])]
    assert moved, "no graph-learner parameter changed"


def test_numeric_abort(tiny_ds, monkeypatch):
    monkeypatch.setattr("bgslf.training.masked_mae_loss", lambda p, t, m: T.tsum(p) * float("nan"))
    with pytest.raises(NumericError, match="epoch 0, batch 0"):
        train(TINY, tiny_ds)


def test_checkpoint_round_trip(tmp_path, tiny_ds, tiny_run):
    path = tmp_path / "m.bgck"
    ck.save(path, tiny_run.checkpoint)
    back = ck.load(path)
    for k, v in tiny_run.checkpoint.params.items():
        assert v.dtype == back.params[k].dtype and np.array_equal(v, back.params[k])
    np.testing.assert_array_equal(back.buffers["segments"], tiny_run.checkpoint.buffers["segments"])
    assert back.config == tiny_run.checkpoint.config
    assert back.mean == tiny_run.checkpoint.mean and back.std == tiny_run.checkpoint.std
    before, _ = evaluate(tiny_run.checkpoint, tiny_ds)
    after, _ = evaluate(back, tiny_ds)
    assert before == after


def test_checkpoint_layout_and_corruption(tmp_path, tiny_run):
    raw = ck.dumps(tiny_run.checkpoint)
    assert raw[:5] == b"BGCK1" and raw[5] == 1
    with pytest.raises(ck.CheckpointError, match="magic"):
        ck.loads(b"XXXXX" + raw[5:])
    with pytest.raises(ck.CheckpointError):
        ck.loads(raw[:-10])
    with pytest.raises(ck.CheckpointError):
        ck.load(tmp_path / "missing.bgck")


def test_evaluate_uses_stored_statistics(tiny_ds, tiny_run):
    raw = dp.from_array(tiny_ds.values)
    a, _ = evaluate(tiny_run.checkpoint, raw)
    b, _ = evaluate(tiny_run.checkpoint, tiny_ds)
    assert a == b


def test_evaluate_rejects_mismatched_nodes(tiny_run):
    other = dp.from_array(np.random.default_rng(0).standard_normal((200, 5)))
    with pytest.raises(dp.DataError, match="N=5"):
        evaluate(tiny_run.checkpoint, other)


def test_perfect_predictor_scores_zero(tiny_ds, tiny_run, monkeypatch):
    model = model_from_checkpoint(tiny_run.checkpoint)
    cfg = model.cfg

    def oracle(inputs, targets=None, teacher_forcing_ratio=0.0, rng=None, graphs=None):
        # look the true future up by matching the input window against the series
        norm = tiny_ds.normalized
        out = []
        for win in inputs:
            t0 = next(t for t in range(len(norm)) if np.array_equal(norm[t:t + cfg.input_len], win))
            out.append(norm[t0 + cfg.input_len:t0 + cfg.input_len + cfg.output_len])
        sel = type("S", (), {"index": 0})()
        return T.Tensor(np.stack(out)), sel

    monkeypatch.setattr(model, "forward", oracle)
    table, _ = evaluate_model(model, tiny_ds, horizons=(3,))
    assert table[3]["mae"] < 1e-12 and table[3]["rmse"] < 1e-12


def test_horizon_reads_matching_decoder_step(tiny_ds, tiny_run, monkeypatch):
    model = model_from_checkpoint(tiny_run.checkpoint)

    def marker(inputs, targets=None, teacher_forcing_ratio=0.0, rng=None, graphs=None):
        b, _, n, d = inputs.shape
        steps = np.arange(12, dtype=float)[None, :, None, None]
        return T.Tensor(np.broadcast_to(steps, (b, 12, n, d)).copy()), type("S", (), {"index": 0})()

    monkeypatch.setattr(model, "forward", marker)
    from bgslf import training
    pred, _, _ = training.predict(model, tiny_ds, "test")
    assert np.all(pred[:, 2] == 2.0)


def test_evaluate_table_shape(tiny_ds, tiny_run):
    table, picks = evaluate(tiny_run.checkpoint, tiny_ds)
    assert list(table) == [3, 6, 12]
    assert all(set(row) == {"mae", "rmse", "mape"} for row in table.values())
    assert picks and all(0 <= p < 2 for p in picks)


# historical average

def test_ha_exact_on_periodic():
    ds = dp.from_array(synth.periodic_series(3, 1000, period=24, seed=1))
    table = historical_average(ds, 24)
    assert table[3]["mae"] < 1e-9
    assert table[3] == table[6] == table[12]


def test_ha_constant_series():
    ds = dp.from_array(np.full((300, 2), 4.25))
    assert historical_average(ds, 10)[3]["mae"] == 0.0


def test_ha_scales_with_units(rng):
    vals = rng.uniform(1, 5, (400, 3))
    a = historical_average(dp.from_array(vals), 20)[3]
    b = historical_average(dp.from_array(vals * 10), 20)[3]
    assert b["mae"] == pytest.approx(10 * a["mae"], rel=1e-12)
    assert b["rmse"] == pytest.approx(10 * a["rmse"], rel=1e-12)
    assert b["mape"] == pytest.approx(a["mape"], rel=1e-12)


def test_ha_ignores_missing(rng):
    vals = synth.periodic_series(2, 600, period=12, seed=2)[:, :, 0]
    holes = vals.copy()
    holes[rng.uniform(size=vals.shape) < 0.1] = np.nan
    assert historical_average(dp.from_array(holes), 12)[3]["mae"] < 1e-9


def test_ha_needs_full_period():
    with pytest.raises(dp.DataError, match="period"):
        historical_average(dp.from_array(np.random.default_rng(0).standard_normal((100, 2))), 288)
