import numpy as np


class Parameters:
    """Named learnable tensors plus their gradient and momentum buffers.

    The arrays are shared with the layers that own them, so optimizer updates
    are done in place.
    """

    def __init__(self):
        self.values = {}
        self.grads = {}
        self.velocity = {}

    def add(self, name, value, grad):
        if name in self.values:
            raise KeyError(f"duplicate parameter {name!r}")
        self.values[name] = value
        self.grads[name] = grad
        self.velocity[name] = np.zeros_like(value)

    def names(self):
        return list(self.values)

    def count(self):
        return int(sum(v.size for v in self.values.values()))

    def is_bias(self, name):
        return name.endswith(".bias")

    def state(self):
        """Copy of the parameter values, keyed by name."""
        return {k: v.copy() for k, v in self.values.items()}

    def load(self, state):
        for k, v in self.values.items():
            if state[k].shape != v.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {v.shape}")
            v[...] = state[k]

    def __len__(self):
        return len(self.values)


def sgd_momentum_step(params, grads, lr, momentum, weight_decay):
    """In-place SGD step with classical momentum and L2 decay on weights only.

    v <- momentum * v - lr * (g + weight_decay * w);  w <- w + v
    """
    for name, w in params.values.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {w.shape}")
        v = params.velocity[name]
        if weight_decay and not params.is_bias(name):
            g = g + weight_decay * w
        v *= momentum
        v -= lr * g
        w += v
