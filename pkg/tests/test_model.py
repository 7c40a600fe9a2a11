import csv
import itertools
import json
from dataclasses import replace

import numpy as np
import pytest

from conformer import numcore as nc
from conformer.dataio import StandardizeStats, synth_generate
from conformer.errors import DataError, NumericError, UsageError
from conformer.inputrep import VARIANTS
from conformer.model import (
    Adam,
    Checkpoint,
    Conformer,
    ForecastResult,
    ModelConfig,
    Predictions,
    evaluate,
    load_checkpoint,
    metrics,
    persistence_metrics,
    predict,
    prepare,
    save_checkpoint,
    train,
    write_predictions,
)
from conformer.numcore import Tensor, grad_check

TINY = dict(d=8, n_heads=2, L_x=8, L_y=4, n_transforms=1, eta=1, decomp_kernel=3,
            batch_size=16, max_epochs=2, n_samples=4, lr=1e-3)


@pytest.fixture(scope="module")
def tiny_frame():
    return synth_generate(3, 240, 2)


def tiny_config(frame, **kw):
    return ModelConfig(**{**TINY, **kw}).bind(frame)


def tiny_batch(frame, cfg, n=2):
    prep = prepare(frame, cfg)
    return prep.datasets["train"].batch(np.arange(n))


def randomize(model, seed=0, scale=0.3):
    r = np.random.default_rng(seed)
    for p in model.parameters():
        p.data = p.data + r.normal(scale=scale, size=p.shape)


# -- config -------------------------------------------------------------------

def test_defaults_validate():
    c = ModelConfig().validate()
    assert (c.d, c.n_heads, c.w, c.lam, c.eta, c.decomp_kernel) == (64, 4, 2, 0.8, 2, 25)
    assert (c.e_layers, c.d_layers, c.enc_gru_layers, c.dec_gru) == (2, 1, 1, 2)
    assert replace(c, mode="univariate").dec_gru == 1
    assert (c.lr, c.batch_size, c.max_epochs, c.patience) == (1e-4, 32, 10, 3)


@pytest.mark.parametrize("kw,msg", [
    ({"w": 3}, "window size must be even"),
    ({"w": 0}, "window size must be even"),
    ({"d": 10, "n_heads": 4}, "divisible"),
    ({"lam": 1.5}, "lambda"),
    ({"decomp_kernel": 4}, "odd"),
    ({"L_x": 8, "L_y": 2, "decomp_kernel": 25}, "exceeds"),
    ({"n_transforms": 9}, "n_transforms"),
    ({"mode": "both"}, "mode"),
    ({"input_variant": "nope"}, "input_variant"),
    ({"nf_variant": "nope"}, "nf_variant"),
    ({"enc_latent": "middle"}, "latent"),
])
def test_config_rejections(kw, msg):
    with pytest.raises(UsageError, match=msg):
        ModelConfig(**kw).validate()


def test_from_dict_types_and_aliases():
    c = ModelConfig.from_dict({"lambda": 0.5, "lr": 1, "scales": ["hour"]})
    assert c.lam == 0.5 and isinstance(c.lr, float) and c.scales == ("hour",)
    with pytest.raises(UsageError, match="unknown config keys: bogus"):
        ModelConfig.from_dict({"bogus": 1})
    with pytest.raises(UsageError, match="expects int"):
        ModelConfig.from_dict({"d": "64"})
    with pytest.raises(UsageError, match="wrong type"):
        ModelConfig.from_dict({"d": True})
    with pytest.raises(UsageError, match="window size must be even"):
        ModelConfig.from_dict({"w": 3})


def test_config_dict_round_trip(tiny_frame):
    c = tiny_config(tiny_frame, seed=5)
    assert ModelConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c


def test_unbound_config_cannot_build():
    with pytest.raises(UsageError, match="bound"):
        Conformer(ModelConfig())


# -- forward ------------------------------------------------------------------

def test_shape_contract():
    frame = synth_generate(0, 400, 7)
    cfg = ModelConfig(d=16, n_heads=2, L_x=48, L_y=24).bind(frame)
    model = Conformer(cfg)
    batch = prepare(frame, cfg).datasets["train"].batch(np.arange(2))
    res = model(batch, 3, np.random.default_rng(0))
    assert res.y_dec.shape == res.z_out.shape == res.fused.shape == res.variance.shape == (2, 24, 7)


def test_univariate_target_width(tiny_frame):
    frame = synth_generate(0, 240, 3)
    cfg = ModelConfig(**{**TINY, "mode": "univariate"}).bind(frame)
    res = Conformer(cfg)(tiny_batch(frame, cfg), 1, np.random.default_rng(0))
    assert res.y_dec.shape == res.z_out.shape == (2, 4, 1)


def test_batch_shape_mismatch(tiny_frame):
    cfg = tiny_config(tiny_frame)
    other = tiny_config(tiny_frame, L_x=10)
    with pytest.raises(ValueError, match="do not match"):
        Conformer(cfg)(tiny_batch(tiny_frame, other), 1, np.random.default_rng(0))


@pytest.mark.parametrize("lam", [0.0, 0.5, 1.0])
def test_fused_is_convex_combination(lam, tiny_frame):
    cfg = tiny_config(tiny_frame, lam=lam)
    model = Conformer(cfg)
    randomize(model)
    res = model(tiny_batch(tiny_frame, cfg), 4, np.random.default_rng(1))
    lo = np.minimum(res.y_dec.data, res.z_out.data) - 1e-12
    hi = np.maximum(res.y_dec.data, res.z_out.data) + 1e-12
    assert ((res.fused.data >= lo) & (res.fused.data <= hi)).all()
    np.testing.assert_allclose(res.fused.data, lam * res.y_dec.data + (1 - lam) * res.z_out.data,
                               atol=1e-15)
    if lam == 1.0:
        np.testing.assert_array_equal(res.fused.data, res.y_dec.data)


# -- loss ---------------------------------------------------------------------

def _result(y, z):
    return ForecastResult(Tensor(y), Tensor(z), np.zeros_like(y), Tensor(y))


def test_loss_arithmetic(tiny_frame):
    model = Conformer(tiny_config(tiny_frame))
    target = np.zeros((1, 4, 2))
    assert model.loss(_result(target, target), target).item() == 0.0
    # MSE 1 on the decoder head, MSE 2 on the flow head
    res = _result(np.ones((1, 4, 2)), np.full((1, 4, 2), np.sqrt(2.0)))
    assert model.loss(res, target).item() == pytest.approx(0.8 * 1 + 0.2 * 2, abs=1e-14)


@pytest.mark.parametrize("lam,exclusive", [(0.0, "head"), (1.0, "flow.out")])
def test_exclusive_head_gradients_vanish(lam, exclusive, tiny_frame):
    cfg = tiny_config(tiny_frame, lam=lam)
    model = Conformer(cfg)
    randomize(model)
    batch = tiny_batch(tiny_frame, cfg)
    model.loss(model(batch, 1, np.random.default_rng(0)), batch.target).backward()
    named = dict(model.named_parameters())
    for name in (f"{exclusive}.weight", f"{exclusive}.bias"):
        assert named[name].grad is None or not named[name].grad.any()
    other = "flow.out.weight" if exclusive == "head" else "head.weight"
    assert np.abs(named[other].grad).max() > 0


def test_full_model_gradients(tiny_frame):
    cfg = tiny_config(tiny_frame)
    model = Conformer(cfg)
    randomize(model, scale=0.2)
    batch = tiny_batch(tiny_frame, cfg, n=2)
    eps = np.random.default_rng(4).normal(size=(1, 2, cfg.L_x, cfg.d))

    def f():
        return model.loss(model(batch, 1, eps=eps), batch.target)

    err = grad_check(f, model.parameters(), max_coords=6, seed=1)
    assert err <= 1e-4


# -- ablation wiring --------------------------------------------------------------

def _forecast(frame, **kw):
    cfg = tiny_config(frame, **kw)
    model = Conformer(cfg, np.random.default_rng(11))
    randomize(model, seed=12)
    with nc.no_grad():
        return model(tiny_batch(frame, cfg), 2, np.random.default_rng(13)).fused.data


def _pairwise_distinct(outs: dict):
    for (a, x), (b, y) in itertools.combinations(outs.items(), 2):
        assert np.abs(x - y).max() > 1e-8, (a, b)


def test_input_variants_wiring(tiny_frame):
    _pairwise_distinct({v: _forecast(tiny_frame, input_variant=v) for v in VARIANTS})


def test_flow_variants_wiring(tiny_frame):
    _pairwise_distinct({v: _forecast(tiny_frame, nf_variant=v)
                        for v in ("flow", "ze", "zd", "z0", "none")})


def test_latent_selection_wiring(tiny_frame):
    outs = {(e, d): _forecast(tiny_frame, d_layers=2, enc_latent=e, dec_latent=d)
            for e in ("first", "last") for d in ("first", "last")}
    _pairwise_distinct(outs)


def test_no_flow_branch(tiny_frame):
    cfg = tiny_config(tiny_frame, nf_variant="none")
    model = Conformer(cfg)
    assert model.flow is None
    res = model(tiny_batch(tiny_frame, cfg), 3, np.random.default_rng(0))
    np.testing.assert_array_equal(res.fused.data, res.y_dec.data)
    assert not res.variance.any()


# -- optimizer ----------------------------------------------------------------

def test_adam_first_steps_match_formula(rng):
    p = nc.parameter(rng.normal(size=5))
    opt = Adam([p], lr=0.1)
    x0 = p.data.copy()
    g1, g2 = rng.normal(size=5), rng.normal(size=5)
    p.grad = g1
    opt.step()
    m, v = 0.1 * g1, 0.001 * g1 ** 2
    x1 = x0 - 0.1 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-8)
    np.testing.assert_allclose(p.data, x1, atol=1e-15)
    p.grad = g2
    opt.step()
    m, v = 0.9 * m + 0.1 * g2, 0.999 * v + 0.001 * g2 ** 2
    x2 = x1 - 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    np.testing.assert_allclose(p.data, x2, atol=1e-15)


# -- training -----------------------------------------------------------------

@pytest.fixture(scope="module")
def trained(tiny_frame):
    return train(tiny_frame, ModelConfig(**TINY, seed=3))


def _strip(history):
    return [{k: v for k, v in rec.items() if k != "seconds"} for rec in history]


def test_train_history_fields(trained):
    _, history = trained
    assert [h["epoch"] for h in history] == [1, 2]
    assert all(np.isfinite(h["train_loss"]) and h["val_mse"] >= 0 for h in history)


def test_train_is_deterministic(tiny_frame, trained):
    ckpt, history = trained
    ckpt2, history2 = train(tiny_frame, ModelConfig(**TINY, seed=3))
    assert _strip(history) == _strip(history2)
    for a, b in zip(ckpt.model.parameters(), ckpt2.model.parameters()):
        assert np.array_equal(a.data, b.data)


def test_zero_learning_rate_keeps_parameters(tiny_frame):
    cfg = ModelConfig(**{**TINY, "lr": 0.0, "max_epochs": 1})
    ckpt, _ = train(tiny_frame, cfg)
    fresh = Conformer(cfg.bind(tiny_frame))
    for a, b in zip(ckpt.model.parameters(), fresh.parameters()):
        assert np.array_equal(a.data, b.data)


def test_training_reduces_loss(tiny_frame):
    _, history = train(tiny_frame, ModelConfig(**{**TINY, "max_epochs": 5, "patience": 5}))
    assert history[4]["train_loss"] < history[0]["train_loss"]


def test_early_stopping_restores_best(tiny_frame):
    cfg = ModelConfig(**{**TINY, "max_epochs": 6, "patience": 1, "lr": 0.05})
    ckpt, history = train(tiny_frame, cfg)
    vals = [h["val_mse"] for h in history]
    # stops right after the first epoch that fails to improve
    stale = [i for i in range(1, len(vals)) if vals[i] >= min(vals[:i])]
    assert len(history) == 6 or len(history) == stale[0] + 1
    prep = prepare(tiny_frame, ckpt.config, stats=ckpt.stats)
    assert evaluate(ckpt, prep.datasets["val"])["fused"]["mse"] == min(vals)


def test_non_finite_loss_aborts(tiny_frame):
    cfg = ModelConfig(**{**TINY, "lr": 1e300})
    with np.errstate(all="ignore"), pytest.raises(NumericError, match="non-finite"):
        train(tiny_frame, cfg)


def test_short_series_rejected():
    frame = synth_generate(0, 10, 2)
    with pytest.raises(DataError, match="series too short"):
        train(frame, ModelConfig(**TINY))


# -- evaluation ---------------------------------------------------------------

def test_metrics_examples():
    t = np.random.default_rng(0).normal(size=(3, 4, 2))
    assert metrics(t, t) == {"mse": 0.0, "mae": 0.0}
    m = metrics(t + 1.0, t)
    assert m["mse"] == pytest.approx(1.0, abs=1e-12) and m["mae"] == pytest.approx(1.0, abs=1e-12)


def test_metrics_match_independent_script(trained, tiny_frame):
    ckpt, _ = trained
    prep = prepare(tiny_frame, ckpt.config, stats=ckpt.stats)
    out, pred = evaluate(ckpt, prep.datasets["test"], return_predictions=True)
    for head, arr in (("decoder", pred.y_dec), ("flow", pred.z_out), ("fused", pred.fused)):
        sq, ab, n = 0.0, 0.0, 0
        for p, t in zip(arr.ravel().tolist(), pred.target.ravel().tolist()):
            sq += (p - t) ** 2
            ab += abs(p - t)
            n += 1
        assert abs(out[head]["mse"] - sq / n) <= 1e-12
        assert abs(out[head]["mae"] - ab / n) <= 1e-12


def test_evaluate_seeded(trained, tiny_frame):
    ckpt, _ = trained
    ds = prepare(tiny_frame, ckpt.config, stats=ckpt.stats).datasets["val"]
    assert evaluate(ckpt, ds, seed=4) == evaluate(ckpt, ds, seed=4)


def test_persistence_baseline():
    frame = synth_generate(0, 200, 2, noise_std=0.0)
    cfg = ModelConfig(**TINY).bind(frame)
    ds = prepare(frame, cfg).datasets["test"]
    b = ds.all()
    want = np.mean((b.target - b.enc_x[:, -1:, :]) ** 2)
    assert persistence_metrics(ds)["mse"] == pytest.approx(want, abs=1e-14)


# -- checkpoints --------------------------------------------------------------

def test_checkpoint_round_trip(trained, tiny_frame, tmp_path):
    ckpt, _ = trained
    save_checkpoint(ckpt, tmp_path / "ck")
    manifest = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    assert manifest["format_version"] == 1
    assert {"name", "shape", "offset"} <= set(manifest["params"][0])
    loaded = load_checkpoint(tmp_path / "ck")
    assert loaded.config == ckpt.config
    for (na, a), (nb, b) in zip(ckpt.model.named_parameters(), loaded.model.named_parameters()):
        assert na == nb and np.array_equal(a.data, b.data)
    assert np.array_equal(loaded.stats.mean, ckpt.stats.mean)
    assert np.array_equal(loaded.stats.std, ckpt.stats.std)
    ds = prepare(tiny_frame, ckpt.config, stats=ckpt.stats).datasets["test"]
    assert evaluate(loaded, ds) == evaluate(ckpt, ds)


def test_checkpoint_errors(trained, tmp_path):
    with pytest.raises(UsageError, match="no checkpoint"):
        load_checkpoint(tmp_path / "missing")
    ckpt, _ = trained
    save_checkpoint(ckpt, tmp_path / "ck")
    mpath = tmp_path / "ck" / "manifest.json"
    manifest = json.loads(mpath.read_text())
    manifest["format_version"] = 99
    mpath.write_text(json.dumps(manifest))
    with pytest.raises(UsageError, match="format version"):
        load_checkpoint(tmp_path / "ck")


# -- prediction ---------------------------------------------------------------

def test_predict_csv(trained, tiny_frame, tmp_path):
    ckpt, _ = trained
    path = tmp_path / "pred.csv"
    pred = predict(ckpt, tiny_frame, n_samples=3, seed=1, stride=10, path=path)
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == ["window_start", "horizon_step", "variable", "y_dec", "z_out", "fused", "variance"]
    n_windows = len(range(0, len(tiny_frame) - 8 + 1, 10))
    assert len(rows) == n_windows * 4 * 2
    assert all(float(r["variance"]) >= 0 for r in rows)
    # the last window forecasts beyond the end of the frame
    assert pred.starts[-1] + 8 + 4 > len(tiny_frame)
    again = predict(ckpt, tiny_frame, n_samples=3, seed=1, stride=10)
    np.testing.assert_array_equal(pred.fused, again.fused)


def test_predict_single_draw_deterministic(trained, tiny_frame):
    ckpt, _ = trained
    a = predict(ckpt, tiny_frame, n_samples=1, seed=2, stride=50)
    b = predict(ckpt, tiny_frame, n_samples=1, seed=2, stride=50)
    np.testing.assert_array_equal(a.z_out, b.z_out)


def test_predict_too_short(trained, tiny_frame):
    ckpt, _ = trained
    with pytest.raises(DataError, match="series too short"):
        predict(ckpt, tiny_frame.slice(0, 5))


def test_zero_prediction_destandardizes_to_mean(trained, tmp_path):
    ckpt, _ = trained
    stats = StandardizeStats(np.array([3.5, -2.0]), np.array([2.0, 0.5]))
    ck = Checkpoint(ckpt.model, stats, ckpt.variable_names, ckpt.target_index, ckpt.interval_seconds)
    zeros = np.zeros((1, 4, 2))
    write_predictions(ck, Predictions(np.array([0]), zeros, zeros, zeros, zeros), tmp_path / "z.csv")
    rows = list(csv.DictReader(open(tmp_path / "z.csv")))
    for r in rows:
        j = ckpt.variable_names.index(r["variable"])
        assert float(r["y_dec"]) == float(r["fused"]) == stats.mean[j]
