"""Backpropagation vs central finite differences on a tiny CNN-LSTM.

Every trainable parameter of a small model is perturbed both ways and the
numerical slope is compared with the analytic gradient from model_backward.
"""

import numpy as np

from convser.neural_net import (
    ModelConfig,
    bce_from_logit,
    init_params,
    model_backward,
    model_forward,
)

config = ModelConfig(filters=2, kernel_size=3, lstm_units=3, n_mfcc=5, max_frames=6)
rng = np.random.default_rng(0)
params = init_params(config, seed=0, dtype=np.float64)
for name in params.TENSOR_NAMES:
    tensor = getattr(params, name)
    tensor[...] = rng.uniform(-0.5, 0.5, size=tensor.shape)

x = rng.uniform(-1, 1, (1, 6, 5))
y = np.array([1.0])
prob, trace = model_forward(x, params)
grads = model_backward(trace, y, params)
print(f"model: {params.n_params()} parameters, output probability {float(prob[0]):.4f}")

h = 1e-5
rows = []
for name in params.TENSOR_NAMES:
    tensor = getattr(params, name)
    grad = np.atleast_1d(np.asarray(getattr(grads, name))).reshape(-1)
    flat = tensor.reshape(-1)
    worst = 0.0
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        up = float(bce_from_logit(model_forward(x, params)[1].logit, y).mean())
        flat[idx] = orig - h
        down = float(bce_from_logit(model_forward(x, params)[1].logit, y).mean())
        flat[idx] = orig
        fd = (up - down) / (2 * h)
        worst = max(worst, abs(grad[idx] - fd) / max(1e-8, abs(fd)))
    rows.append((name, flat.size, worst))

print(f"{'tensor':<10} {'params':>7} {'max rel err':>12}")
for name, size, worst in rows:
    print(f"{name:<10} {size:>7} {worst:>12.2e}")
print("\nall gradients flow through dense -> LSTM (through time) -> flatten -> ReLU -> conv")
