import numpy as np


def fans(shape):
    """(fan_in, fan_out) for a conv weight (out, in, kh, kw) or FC weight (in, out)."""
    if len(shape) == 2:
        return shape[0], shape[1]
    if len(shape) == 4:
        receptive = shape[2] * shape[3]
        return shape[1] * receptive, shape[0] * receptive
    raise ValueError(f"cannot derive fans from shape {shape}")


def xavier_bound(fan_in, fan_out):
    return np.sqrt(6.0 / (fan_in + fan_out))


def xavier_init(shape, rng, dtype=np.float32):
    """Uniform Xavier/Glorot sample on [-sqrt(6/(fan_in+fan_out)), +...]."""
    bound = xavier_bound(*fans(shape))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_parameters(params, rng):
    """Xavier for weights, zeros for biases; draws in registration order."""
    for name, value in params.values.items():
        if params.is_bias(name):
            value[...] = 0
        else:
            value[...] = xavier_init(value.shape, rng, value.dtype)
