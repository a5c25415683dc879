"""Sweep the smoothing and circle weights on a small synthetic task."""
from cetnet.data import SynthConfig, synth_generate
from cetnet.losses import LOSS_ABLATION_GRID, LossConfig
from cetnet.model import ModelConfig, init_model
from cetnet.train import TrainConfig, evaluate, train

synth = SynthConfig(num_classes=4, feature_dim=8, video_length=120, min_segment=15, max_segment=40,
                    sigma=0.6, mean_scale=0.6, num_train=6, num_test=3)
data = synth_generate(synth, seed=2)

print(f"{'lam':>5} {'beta':>6} {'acc':>6} {'edit':>6} {'F1@50':>6}")
for lam, beta in LOSS_ABLATION_GRID:
    model = init_model(ModelConfig.desk(input_dim=8, num_classes=4, num_layers=3), seed=0)
    train(model, data["train"], TrainConfig(epochs=15, seed=0), LossConfig(lam=lam, beta=beta))
    r = evaluate(model, data["test"])
    print(f"{lam:5.2f} {beta:6.3f} {r.acc:6.1f} {r.edit:6.1f} {r.f1_50:6.1f}")
