"""Frame accuracy, edit score and F1@k on a hand-made prediction."""
import numpy as np

from cetnet.metrics import evaluate_video, segments_from_labels

gt = np.array([0] * 10 + [1] * 10 + [2] * 10)
# right actions, shifted boundary, plus a short spurious flicker
pred = np.array([0] * 12 + [1] * 5 + [0] * 2 + [1] * 1 + [2] * 10)

print("gt segments  ", [tuple(s) for s in segments_from_labels(gt)])
print("pred segments", [tuple(s) for s in segments_from_labels(pred)])
report = evaluate_video(pred, gt)
for key, value in report.as_dict().items():
    print(f"{key:6s} {value:6.2f}")
