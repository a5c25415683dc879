"""Probe the receptive field of stacked dilated convolutions with an impulse."""
import numpy as np

from cetnet import tensor as tn
from cetnet.blocks import conv_receptive_field

T = 4200
for n in (1, 3, 5, 10):
    x = np.zeros((T, 1))
    x[T // 2] = 1.0
    h = tn.as_tensor(x)
    with tn.no_grad():
        for i in range(n):
            w = tn.as_tensor(np.ones((3, 1, 1)))  # kernel x in x out, all ones keeps the support visible
            h = tn.dilated_conv1d(h, w, tn.as_tensor(np.zeros(1)), 2 ** i)
    support = np.flatnonzero(h.data[:, 0])
    width = support[-1] - support[0] + 1
    print(f"blocks={n:2d}  measured={width:5d}  formula={conv_receptive_field(n):5d}")
