import json
import math

import numpy as np
import pytest

from cetnet import tensor as tn
from cetnet.data import SynthConfig, VideoSample, synth_generate
from cetnet.errors import ConfigError, TrainingDivergedError
from cetnet.losses import LossConfig
from cetnet.model import ModelConfig, init_model, model_forward
from cetnet.tensor import parameter
from cetnet.train import Adam, TrainConfig, clip_grad_norm, evaluate, grad_check, predict_video, train


def toy_model(seed=0, **kw):
    base = dict(input_dim=4, num_classes=3, model_dim=8, num_layers=3, num_decoders=2)
    base.update(kw)
    return init_model(ModelConfig(**base), seed)


def toy_sample(seed=0, T=12):
    rng = np.random.default_rng(seed)
    return VideoSample("toy", rng.normal(size=(T, 4)), np.repeat(rng.permutation(3), T // 3))


def small_synth(**kw):
    base = dict(num_classes=3, feature_dim=4, video_length=60, min_segment=10, max_segment=20,
                num_train=3, num_test=2, sigma=0.5)
    base.update(kw)
    return synth_generate(SynthConfig(**base), 0)


def param_bytes(model):
    return {n: p.data.tobytes() for n, p in model.named_parameters().items()}


# ---- optimizer --------------------------------------------------------------

def test_adam_first_step_is_signed_lr():
    p = parameter([1.0, -2.0, 3.0])
    p.grad = np.array([0.5, -4.0, 1e-3])
    Adam([p], lr=0.1).step()
    # bias-corrected m/sqrt(v) = g/|g| on the first step
    np.testing.assert_allclose(p.data, [0.9, -1.9, 2.9], atol=1e-6)


def test_adam_matches_reference_over_steps():
    rng = np.random.default_rng(0)
    p = parameter(rng.normal(size=4))
    x, m, v = p.data.copy(), np.zeros(4), np.zeros(4)
    opt = Adam([p], lr=0.01)
    for t in range(1, 6):
        g = rng.normal(size=4)
        p.grad = g.copy()
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x = x - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p.data, x, atol=1e-14)


def test_clip_grad_norm():
    a, b = parameter([0.0]), parameter([0.0, 0.0])
    a.grad, b.grad = np.array([3.0]), np.array([0.0, 4.0])
    assert clip_grad_norm([a, b], 1.0) == 5.0
    np.testing.assert_allclose(np.r_[a.grad, b.grad], [0.6, 0.0, 0.8])


# ---- training loop ------------------------------------------------------------

def test_zero_learning_rate_leaves_parameters_bit_identical():
    ds = small_synth()
    model = toy_model()
    before = param_bytes(model)
    train(model, ds["train"], TrainConfig(epochs=3, lr=0.0))
    assert param_bytes(model) == before


def test_single_video_overfit_and_loss_trend():
    ds = synth_generate(SynthConfig(num_classes=3, feature_dim=8, video_length=100, min_segment=15,
                                    max_segment=35, num_train=1, num_test=0, sigma=1.0), 0)
    model = init_model(ModelConfig(input_dim=8, num_classes=3, model_dim=16, num_layers=4, num_decoders=2), 0)
    res = train(model, ds["train"], TrainConfig(epochs=200))
    accs = [r["train_acc"] for r in res.log]
    assert max(accs) >= 99.0
    losses = [r["mean_loss"] for r in res.log]
    assert np.mean(losses[-10:]) < np.mean(losses[:10])


def test_training_is_deterministic_given_seed():
    ds = small_synth()
    runs = []
    for _ in range(2):
        model = toy_model(seed=3)
        res = train(model, ds["train"], TrainConfig(epochs=2, seed=5))
        runs.append((param_bytes(model), res.log))
    assert runs[0] == runs[1]
    other = toy_model(seed=3)
    train(other, ds["train"], TrainConfig(epochs=2, seed=6))
    assert param_bytes(other) != runs[0][0]


def test_epoch_log_records(tmp_path):
    ds = small_synth()
    path = tmp_path / "log.jsonl"
    res = train(toy_model(), ds["train"], TrainConfig(epochs=2), log_path=path)
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert lines == res.log
    assert [r["epoch"] for r in lines] == [1, 2]
    assert set(lines[0]) == {"epoch", "mean_loss", "cls", "mse", "circle", "train_acc"}
    r = lines[0]
    cfg = LossConfig()
    assert r["mean_loss"] == pytest.approx(r["cls"] + cfg.lam * r["mse"] + cfg.beta * r["circle"], rel=1e-12)


def test_nan_loss_aborts_with_diagnostics():
    x = np.zeros((6, 4))
    x[2, 1] = np.nan
    bad = VideoSample("broken_video", x, [0, 0, 1, 1, 2, 2])
    with pytest.raises(TrainingDivergedError) as exc:
        train(toy_model(), [bad], TrainConfig(epochs=1))
    err = exc.value
    assert err.epoch == 1 and err.video_id == "broken_video"
    assert set(err.terms) >= {"cls", "mse", "circle"}
    assert "broken_video" in str(err)


def test_encoder_only_supervision_runs():
    res = train(toy_model(), small_synth()["train"], TrainConfig(epochs=1, supervise="encoder"))
    assert math.isfinite(res.log[0]["mean_loss"])


def test_train_rejects_mismatched_data():
    with pytest.raises(ConfigError, match="feature channels"):
        train(toy_model(input_dim=5), small_synth()["train"], TrainConfig(epochs=1))


def test_train_config_collects_problems():
    with pytest.raises(ConfigError) as exc:
        TrainConfig(epochs=0, lr=-1, batch_size=4, supervise="x").validate()
    assert len(exc.value.problems) == 4


# ---- gradient check -------------------------------------------------------

def test_grad_check_toy_model():
    report = grad_check(toy_model(), toy_sample(), num_params=200)
    assert report.num_checked == 200
    assert report.passed and report.max_rel_error < 1e-4
    assert "PASS" in report.to_text()


def test_grad_check_linear_readout_is_exact():
    model = toy_model(num_layers=0, num_decoders=0)
    weights = np.random.default_rng(1).normal(size=(12, 3))

    def readout(m, s):
        # affine in every single parameter, so central differences carry no truncation error
        return tn.tsum(tn.mul(model_forward(s.features, m).final_logits, weights))

    report = grad_check(model, toy_sample(), objective=readout, num_params=500, tolerance=1e-8)
    assert report.passed, report.to_text()


def test_grad_check_detects_corrupted_backward(monkeypatch):
    def relu_without_mask(x):
        mask = x.data > 0
        # forward is correct, backward forgets the mask
        return tn._result(np.where(mask, x.data, 0.0), (x,), lambda g: (g,), "relu")

    monkeypatch.setattr(tn, "relu", relu_without_mask)
    report = grad_check(toy_model(), toy_sample(), num_params=200)
    assert not report.passed
    assert "FAIL" in report.to_text()


# ---- evaluation -----------------------------------------------------------

def nearest_mean_model(means):
    """Encoder-only model whose logits are a nearest-mean classifier."""
    c, D = means.shape
    model = init_model(ModelConfig(input_dim=D, num_classes=c, model_dim=c, num_layers=0, num_decoders=0), 0)
    k = 50.0
    model.encoder.in_proj.w.data[:] = k * means.T
    model.encoder.in_proj.b.data[:] = -0.5 * k * (means ** 2).sum(1)
    model.encoder.classifier.w.data[:] = np.eye(c)
    model.encoder.classifier.b.data[:] = 0
    return model


def test_perfect_model_scores_100():
    ds = small_synth(sigma=0.0)
    report = evaluate(nearest_mean_model(ds.class_means), ds["test"])
    assert set(report.as_dict().values()) == {100.0}


def test_untrained_model_is_at_chance_on_label_independent_data():
    rng = np.random.default_rng(0)
    c = 4
    videos = [VideoSample(f"v{i}", rng.normal(size=(500, 4)), rng.integers(0, c, 500)) for i in range(12)]
    acc = evaluate(toy_model(num_classes=c), videos).acc
    # predictions ignore the labels: binomial sd is 100*sqrt(0.25*0.75/6000) ~ 0.56
    assert abs(acc - 100 / c) < 3.0


def test_evaluate_has_no_side_effects():
    ds = small_synth()
    model = toy_model()
    before = param_bytes(model)
    a = evaluate(model, ds["test"])
    assert param_bytes(model) == before
    assert all(p.grad is None for p in model.parameters())
    assert evaluate(model, ds["test"]) == a


def test_predict_video_at_native_rate():
    s = toy_sample(T=15)
    model = toy_model()
    pred = predict_video(model, s, frame_step=2)
    assert pred.shape == (15,)
    reduced = model_forward(s.features[::2], model).final_logits.data.argmax(1)
    np.testing.assert_array_equal(pred, np.repeat(reduced, 2)[:15])
