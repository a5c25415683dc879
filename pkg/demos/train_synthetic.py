"""Train the desk-size model on a small synthetic dataset and evaluate it.

Runs in well under a minute; the full benchmark lives behind
``cetnet train --config benchmark``.
"""
import logging

from cetnet.data import SynthConfig, synth_generate
from cetnet.losses import LossConfig
from cetnet.model import ModelConfig, init_model
from cetnet.train import TrainConfig, evaluate, train

logging.basicConfig(level=logging.INFO, format="%(message)s")

synth = SynthConfig(num_classes=4, feature_dim=8, video_length=120, min_segment=15, max_segment=40,
                    sigma=0.6, mean_scale=0.6, num_train=8, num_test=3)
data = synth_generate(synth, seed=1)
model = init_model(ModelConfig.desk(input_dim=8, num_classes=4, num_layers=3), seed=0)

train(model, data["train"], TrainConfig(epochs=25, seed=0), LossConfig())
report = evaluate(model, data["test"])
print(" ".join(f"{k}={v:.1f}" for k, v in report.as_dict().items()))
