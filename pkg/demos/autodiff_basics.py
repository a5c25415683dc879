"""Reverse-mode gradients on a tiny graph, checked against central differences."""
import numpy as np

from cetnet import tensor as tn

rng = np.random.default_rng(0)
x = tn.parameter(rng.normal(size=(6, 3)))
w = tn.parameter(rng.normal(size=(3, 4)))

# log-sum-exp of a linear map, averaged over rows
out = tn.mean(tn.logsumexp(tn.matmul(x, w), axis=-1))
out.backward()


def f():
    with tn.no_grad():
        return tn.mean(tn.logsumexp(tn.matmul(x, w), axis=-1)).item()


numeric = tn.numerical_grad(f, x.data)  # perturbs x.data in place and restores it
print("loss        ", round(out.item(), 6))
print("max |dx|    ", float(np.abs(x.grad).max()))
print("rel error dx", float(tn.rel_error(x.grad, numeric).max()))
