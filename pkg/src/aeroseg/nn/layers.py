"""Layers with explicit forward/backward passes.

Every layer caches what its backward pass needs during ``forward``.  Shapes
are validated when a layer is constructed against an input shape
(``output_shape``) so architecture errors surface before any data flows.
"""
import numpy as np

SIGMOID_EPS = 1e-7


class ShapeError(ValueError):
    """Raised when layer arithmetic does not fit the incoming shape."""


class Layer:
    kind = "layer"

    def __init__(self, name=""):
        self.name = name
        self.params = {}
        self.grads = {}

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def pattern(self):
        """Bytes describing the piecewise-linear branch taken on the last forward."""
        return b""

    def tangent(self, d):
        """Response to an input perturbation ``d`` with the branch of the last
        forward held fixed (exact for piecewise-linear layers)."""
        raise NotImplementedError(f"{type(self).__name__} has no tangent")

    def kink(self, d):
        """True if moving the last input by +d or -d changes the branch."""
        return False

    def zero_grad(self):
        for k, v in self.grads.items():
            v[...] = 0

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


def conv_output_size(size, kernel, stride, pad):
    return (size + 2 * pad - kernel) // stride + 1


class Conv2D(Layer):
    """2-D cross-correlation over NCHW input; weight shape (out, in, kh, kw)."""

    kind = "conv"

    def __init__(self, in_channels, out_channels, kernel, stride=1, pad=0, name="conv",
                 dtype=np.float32):
        super().__init__(name)
        if kernel < 1 or stride < 1 or pad < 0:
            raise ShapeError(f"{name}: kernel/stride must be >= 1 and pad >= 0")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        self.params["weight"] = np.zeros((out_channels, in_channels, kernel, kernel), dtype)
        self.params["bias"] = np.zeros(out_channels, dtype)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._x = None
        self._cols = None

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"{self.name}: expected (C, H, W), got {in_shape}")
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeError(f"{self.name}: expected {self.in_channels} channels, got {c}")
        oh = conv_output_size(h, self.kernel, self.stride, self.pad)
        ow = conv_output_size(w, self.kernel, self.stride, self.pad)
        if oh < 1 or ow < 1:
            raise ShapeError(f"{self.name}: output size {oh}x{ow} from input {h}x{w}")
        return (self.out_channels, oh, ow)

    def _im2col(self, x):
        # rows ordered (c, i, j) to match weight.reshape(out, -1); columns (b, y, x)
        k, s, p = self.kernel, self.stride, self.pad
        if p:
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        b, c = x.shape[:2]
        oh = (x.shape[2] - k) // s + 1
        ow = (x.shape[3] - k) // s + 1
        cols = np.empty((c, k, k, b, oh, ow), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                cols[:, i, j] = x[:, :, i:i + s * oh:s, j:j + s * ow:s].transpose(1, 0, 2, 3)
        return cols.reshape(c * k * k, b * oh * ow), oh, ow

    def forward(self, x, reuse_input=False):
        """``reuse_input=True`` keeps the im2col matrix of the previous call;
        only valid when ``x`` is that same, unmodified array."""
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"{self.name}: bad input shape {x.shape}")
        if not (reuse_input and x is self._x and self._cols is not None):
            self._cols, self._oh, self._ow = self._im2col(x)
            self._x = x
        w = self.params["weight"].reshape(self.out_channels, -1)
        out = w @ self._cols + self.params["bias"][:, None]
        out = out.reshape(self.out_channels, x.shape[0], self._oh, self._ow)
        return out.transpose(1, 0, 2, 3)

    def tangent(self, d):
        cols, oh, ow = self._im2col(d)
        out = self.params["weight"].reshape(self.out_channels, -1) @ cols
        return out.reshape(self.out_channels, d.shape[0], oh, ow).transpose(1, 0, 2, 3)

    def param_tangent(self, key, index, delta):
        """Output change when params[key].flat[index] moves by ``delta``."""
        b = self._x.shape[0]
        out = np.zeros((b, self.out_channels, self._oh, self._ow), self._cols.dtype)
        if key == "bias":
            out[:, index] = delta
        else:
            o, r = divmod(index, self._cols.shape[0])
            out[:, o] = delta * self._cols[r].reshape(b, self._oh, self._ow)
        return out

    def backward(self, dout, input_grad=True):
        x = self._x
        b, c, h, wd = x.shape
        k, s, p = self.kernel, self.stride, self.pad
        oh, ow = self._oh, self._ow
        d2 = dout.transpose(1, 0, 2, 3).reshape(self.out_channels, -1)
        w = self.params["weight"]
        self.grads["weight"][...] = (d2 @ self._cols.T).reshape(w.shape)
        self.grads["bias"][...] = d2.sum(axis=1)
        if not input_grad:
            return None
        dcols = (w.reshape(self.out_channels, -1).T @ d2).reshape(c, k, k, b, oh, ow)
        dxp = np.zeros((b, c, h + 2 * p, wd + 2 * p), dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += dcols[:, i, j].transpose(1, 0, 2, 3)
        if p:
            return dxp[:, :, p:-p, p:-p]
        return dxp


class MaxPool2D(Layer):
    """Non-overlapping max pooling (window == stride); ties go to the first
    element in row-major window order."""

    kind = "maxpool"

    def __init__(self, size=2, name="pool"):
        super().__init__(name)
        self.size = size

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if h % self.size or w % self.size:
            raise ShapeError(f"{self.name}: extent {h}x{w} not divisible by {self.size}")
        return (c, h // self.size, w // self.size)

    def forward(self, x):
        b, c, h, w = x.shape
        k = self.size
        if h % k or w % k:
            raise ShapeError(f"{self.name}: extent {h}x{w} not divisible by {k}")
        win = self._windows(x)
        self._win = win
        self._arg = win.argmax(axis=-1)
        self._shape = x.shape
        return np.take_along_axis(win, self._arg[..., None], axis=-1)[..., 0]

    def _windows(self, x):
        b, c, h, w = x.shape
        k = self.size
        win = x.reshape(b, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5)
        return win.reshape(b, c, h // k, w // k, k * k)

    def tangent(self, d):
        return np.take_along_axis(self._windows(d), self._arg[..., None], axis=-1)[..., 0]

    def kink(self, d):
        dw = self._windows(d)
        return bool((np.argmax(self._win + dw, axis=-1) != self._arg).any()
                    or (np.argmax(self._win - dw, axis=-1) != self._arg).any())

    def backward(self, dout):
        b, c, h, w = self._shape
        k = self.size
        dwin = np.zeros((b, c, h // k, w // k, k * k), dtype=dout.dtype)
        np.put_along_axis(dwin, self._arg[..., None], dout[..., None], axis=-1)
        dwin = dwin.reshape(b, c, h // k, w // k, k, k).transpose(0, 1, 2, 4, 3, 5)
        return dwin.reshape(b, c, h, w)

    def pattern(self):
        return self._arg.astype(np.uint8).tobytes()


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._x = x
        self._mask = x > 0
        return np.where(self._mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, dout):
        return np.where(self._mask, dout, 0).astype(dout.dtype, copy=False)

    tangent = backward

    def kink(self, d):
        return bool(((self._x + d > 0) != self._mask).any() or ((self._x - d > 0) != self._mask).any())

    def pattern(self):
        return np.packbits(self._mask).tobytes()


def sigmoid(x):
    """Logistic function clamped to [eps, 1 - eps] so the loss never sees log(0)."""
    x = np.asarray(x)
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-x))
    lo = np.asarray(SIGMOID_EPS, dtype=out.dtype)
    return np.clip(out, lo, 1 - lo)


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        self._z = x
        self._out = sigmoid(x)
        return self._out

    def backward(self, dout):
        # the clamp is passed straight through, so sigmoid + cross entropy
        # backpropagates (p - target) even for saturated units
        s = self._out
        return dout * s * (1 - s)


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)

    def tangent(self, d):
        return d.reshape(d.shape[0], -1)


class FullyConnected(Layer):
    """Affine map ``x @ W + b`` with W of shape (fan_in, fan_out)."""

    kind = "fullyconnected"

    def __init__(self, fan_in, fan_out, name="fc", dtype=np.float32):
        super().__init__(name)
        self.fan_in = fan_in
        self.fan_out = fan_out
        self.params["weight"] = np.zeros((fan_in, fan_out), dtype)
        self.params["bias"] = np.zeros(fan_out, dtype)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def output_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.fan_in:
            raise ShapeError(f"{self.name}: expected ({self.fan_in},), got {tuple(in_shape)}")
        return (self.fan_out,)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.fan_in:
            raise ShapeError(f"{self.name}: expected (B, {self.fan_in}), got {x.shape}")
        self._x = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dout):
        self.grads["weight"][...] = self._x.T @ dout
        self.grads["bias"][...] = dout.sum(axis=0)
        return dout @ self.params["weight"].T

    def tangent(self, d):
        return d @ self.params["weight"]

    def param_tangent(self, key, index, delta):
        out = np.zeros((self._x.shape[0], self.fan_out), self._x.dtype)
        if key == "bias":
            out[:, index] = delta
        else:
            i, j = divmod(index, self.fan_out)
            out[:, j] = delta * self._x[:, i]
        return out


def concat(a, b):
    """Join two (B, F) feature batches along the feature axis."""
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat: batch extents differ ({a.shape[0]} vs {b.shape[0]})")
    return np.concatenate([a, b], axis=1)


def concat_backward(dout, width_a):
    return dout[:, :width_a], dout[:, width_a:]


class Stack:
    """A chain of layers applied in order.

    Each layer's input from the last forward pass is retained so a pass can be
    resumed at any layer with :meth:`resume`.
    """

    def __init__(self, layers, in_shape=None):
        self.layers = list(layers)
        self.in_shape = tuple(in_shape) if in_shape is not None else None
        self._inputs = [None] * len(self.layers)
        if in_shape is not None:
            self.shapes()

    def shapes(self):
        """Per-example shape after every layer, starting with the input."""
        shapes = [self.in_shape]
        for layer in self.layers:
            shapes.append(layer.output_shape(shapes[-1]))
        return shapes

    @property
    def out_shape(self):
        return self.shapes()[-1]

    def forward(self, x):
        return self._run(x, 0)

    def resume(self, layer):
        """Re-run the chain from ``layer`` on its input from the last pass."""
        i = self.layers.index(layer)
        return self._run(self._inputs[i], i, resumed=True)

    def _run(self, x, start, resumed=False):
        for i in range(start, len(self.layers)):
            self._inputs[i] = x
            layer = self.layers[i]
            if resumed and i == start and isinstance(layer, Conv2D):
                x = layer.forward(x, reuse_input=True)
            else:
                x = layer.forward(x)
        return x

    def backward(self, dout, input_grad=True):
        """Backpropagate ``dout``; with ``input_grad=False`` a leading conv
        skips the (unused) gradient with respect to the raw input."""
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if i == 0 and not input_grad and isinstance(layer, Conv2D):
                return layer.backward(dout, input_grad=False)
            dout = layer.backward(dout)
        return dout

    def tangent(self, layer, key, index, delta):
        """Change of the output (of the logits, for a trailing sigmoid) when
        one parameter of ``layer`` moves by ``delta``, all branches held at
        the last forward pass.  None if the move crosses a branch boundary."""
        i = self.layers.index(layer)
        return self.propagate(layer.param_tangent(key, index, delta), i + 1)

    def propagate(self, d, start=0):
        for i in range(start, len(self.layers)):
            layer = self.layers[i]
            if isinstance(layer, Sigmoid) and i == len(self.layers) - 1:
                break
            if layer.kink(d):
                return None
            d = layer.tangent(d)
        return d

    def param_layers(self):
        return [layer for layer in self.layers if layer.params]

    @property
    def output_layer(self):
        return self.layers[-1]

    def pattern(self):
        return b"".join(layer.pattern() for layer in self.layers)

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)
