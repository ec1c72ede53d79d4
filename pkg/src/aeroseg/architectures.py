"""Network builders: L-Seg (local), G-Seg / RA-Seg (global) and LG-Seg (dual).

A :class:`Profile` fixes the layer stacks of both stems and the fusion head
widths.  Two profiles ship with the package: ``desk`` (small enough to train on
a CPU in minutes) and ``paper`` (VGG/AlexNet-like depth with reduced widths).
Both follow the same topology rules: the local stem only uses 3x3/stride-1/pad-1
convolutions and 2x2 pooling, the global stem opens with a large strided kernel.
"""
from dataclasses import dataclass

import numpy as np

from .nn import (
    Conv2D,
    Flatten,
    FullyConnected,
    MaxPool2D,
    Parameters,
    ReLU,
    ShapeError,
    Sigmoid,
    Stack,
    concat,
    concat_backward,
    init_parameters,
)

MODES = ("dual", "local-only", "global-only", "ra-classifier")


@dataclass
class LayerSpec:
    kind: str
    name: str
    filters: int = 0
    kernel: int = 0
    stride: int = 1
    pad: int = 0
    size: int = 2


def conv(name, filters, kernel=3, stride=1, pad=1):
    return LayerSpec("conv", name, filters, kernel, stride, pad)


def pool(name, size=2):
    return LayerSpec("maxpool", name, size=size)


@dataclass
class Profile:
    name: str
    local_layers: list
    global_layers: list
    local_fc: int
    global_fc: int
    fusion_hidden: tuple = (128, 128)
    local_input: int = 64
    global_input: int = 256
    output: int = 16
    input_shift: float = 0.5  # subtracted from [0, 1] inputs inside the network

    @property
    def out_pixels(self):
        return self.output * self.output

    def validate(self):
        for spec in self.local_layers:
            if spec.kind == "conv" and (spec.kernel, spec.stride, spec.pad) != (3, 1, 1):
                raise ShapeError(f"local.{spec.name}: local stem takes 3x3/s1/p1 convolutions only")
            if spec.kind == "maxpool" and spec.size != 2:
                raise ShapeError(f"local.{spec.name}: local stem pools 2x2")
        first = next((s for s in self.global_layers if s.kind == "conv"), None)
        if first is None or first.kernel < 5 or first.stride < 2:
            raise ShapeError("global stem must open with a conv of kernel >= 5 and stride >= 2")
        if len(self.fusion_hidden) != 2:
            raise ShapeError("fusion head has exactly three fully-connected layers")
        # shape propagation raises on inconsistent spatial arithmetic
        build_stem(self.local_layers, 3, self.local_input, self.local_fc, np.float64, "local")
        build_stem(self.global_layers, 3, self.global_input, self.global_fc, np.float64, "global")
        return self


DESK = Profile(
    name="desk",
    local_layers=[conv("conv1", 8), conv("conv2", 8), pool("pool1"),
                  conv("conv3", 8), conv("conv4", 8), pool("pool2")],
    global_layers=[conv("conv1", 8, kernel=7, stride=4, pad=3), pool("pool1"),
                   conv("conv2", 16, kernel=5, pad=2), pool("pool2"),
                   conv("conv3", 16), pool("pool3")],
    local_fc=64,
    global_fc=64,
    fusion_hidden=(128, 128),
)

PAPER = Profile(
    name="paper",
    local_layers=[conv("conv1", 32), conv("conv2", 32), pool("pool1"),
                  conv("conv3", 64), conv("conv4", 64), pool("pool2"),
                  conv("conv5", 128), conv("conv6", 128), conv("conv7", 128), pool("pool3")],
    global_layers=[conv("conv1", 48, kernel=11, stride=4, pad=5), pool("pool1"),
                   conv("conv2", 128, kernel=5, pad=2), pool("pool2"),
                   conv("conv3", 192), conv("conv4", 192), conv("conv5", 128), pool("pool3")],
    local_fc=1024,
    global_fc=1024,
    fusion_hidden=(1024, 1024),
)

PROFILES = {"desk": DESK, "paper": PAPER}


def get_profile(name_or_profile):
    if isinstance(name_or_profile, Profile):
        return name_or_profile
    try:
        return PROFILES[name_or_profile]
    except KeyError:
        raise ValueError(f"unknown profile {name_or_profile!r}; known: {sorted(PROFILES)}") from None


def build_stem(specs, in_channels, size, fc_width, dtype, prefix=""):
    """Conv/pool layers (each conv followed by ReLU), flatten, FC + ReLU."""
    layers = []
    channels = in_channels
    for spec in specs:
        if spec.kind == "conv":
            layers.append(Conv2D(channels, spec.filters, spec.kernel, spec.stride, spec.pad,
                                 name=spec.name, dtype=dtype))
            layers.append(ReLU(f"{spec.name}.relu"))
            channels = spec.filters
        elif spec.kind == "maxpool":
            layers.append(MaxPool2D(spec.size, name=spec.name))
        else:
            raise ShapeError(f"{prefix}.{spec.name}: unknown layer kind {spec.kind!r}")
    layers.append(Flatten("flatten"))
    stack = Stack(layers, (in_channels, size, size))
    flat = stack.out_shape[0]
    stack = Stack(layers + [FullyConnected(flat, fc_width, name="fc", dtype=dtype), ReLU("fc.relu")],
                  (in_channels, size, size))
    return stack


def build_head(fan_in, hidden, out, dtype):
    widths = [fan_in, *hidden, out]
    layers = []
    for i in range(len(widths) - 1):
        layers.append(FullyConnected(widths[i], widths[i + 1], name=f"fc{i + 1}", dtype=dtype))
        layers.append(ReLU(f"fc{i + 1}.relu") if i < len(widths) - 2 else Sigmoid("sigmoid"))
    return Stack(layers, (fan_in,))


class Network:
    """Two optional input stems feeding a fully-connected head.

    ``forward(local, global_)`` takes NCHW batches scaled to [0, 1] and returns
    (B, output**2) probabilities in row-major label-patch order (or (B, 1) for
    the residential-area classifier).  Inputs are shifted by
    ``profile.input_shift`` before the first layer, so the stems see values
    centred on zero.
    """

    def __init__(self, profile="desk", mode="dual", dtype=np.float32, seed=0):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.profile = get_profile(profile).validate()
        self.mode = mode
        self.dtype = np.dtype(dtype)
        p = self.profile
        self.local = None
        self.global_ = None
        if mode in ("dual", "local-only"):
            self.local = build_stem(p.local_layers, 3, p.local_input, p.local_fc, dtype, "local")
        if mode in ("dual", "global-only", "ra-classifier"):
            self.global_ = build_stem(p.global_layers, 3, p.global_input, p.global_fc, dtype, "global")
        if mode == "dual":
            self.head = build_head(p.local_fc + p.global_fc, p.fusion_hidden, p.out_pixels, dtype)
        elif mode == "local-only":
            self.head = build_head(p.local_fc, (), p.out_pixels, dtype)
        elif mode == "global-only":
            self.head = build_head(p.global_fc, (), p.out_pixels, dtype)
        else:
            self.head = build_head(p.global_fc, (), 1, dtype)
        self.params = Parameters()
        for prefix, stack in self.stacks():
            for layer in stack.param_layers():
                for key in layer.params:
                    self.params.add(f"{prefix}.{layer.name}.{key}", layer.params[key], layer.grads[key])
        init_parameters(self.params, np.random.default_rng(seed))
        self._feats = {}

    def stacks(self):
        out = []
        if self.local is not None:
            out.append(("local", self.local))
        if self.global_ is not None:
            out.append(("global", self.global_))
        out.append(("fusion" if self.mode == "dual" else "head", self.head))
        return out

    @property
    def uses_local(self):
        return self.local is not None

    @property
    def uses_global(self):
        return self.global_ is not None

    @property
    def out_width(self):
        return self.head.out_shape[0]

    def _check(self, x, size, what):
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[1:] != (3, size, size):
            raise ShapeError(f"{what} input must be (B, 3, {size}, {size}), got {x.shape}")
        x = x.astype(self.dtype, copy=False)
        if self.profile.input_shift:
            x = x - self.dtype.type(self.profile.input_shift)
        return x

    def features(self, local=None, global_=None):
        """Per-stem feature vectors (before fusion)."""
        feats = {}
        if self.uses_local:
            feats["local"] = self.local.forward(self._check(local, self.profile.local_input, "local"))
        if self.uses_global:
            feats["global"] = self.global_.forward(self._check(global_, self.profile.global_input, "global"))
        return feats

    def _fuse(self):
        if self.mode == "dual":
            return concat(self._feats["local"], self._feats["global"])
        return self._feats["local" if self.uses_local else "global"]

    def forward(self, local=None, global_=None):
        self._feats = self.features(local, global_)
        return self.head.forward(self._fuse())

    __call__ = forward

    def backward(self, dpred):
        dfeat = self.head.backward(dpred.astype(self.dtype, copy=False))
        if self.mode == "dual":
            dl, dg = concat_backward(dfeat, self.profile.local_fc)
            self.local.backward(dl, input_grad=False)
            self.global_.backward(dg, input_grad=False)
        elif self.uses_local:
            self.local.backward(dfeat, input_grad=False)
        else:
            self.global_.backward(dfeat, input_grad=False)

    @property
    def output_layer(self):
        return self.head.output_layer

    def param_layers(self):
        return [layer for _, stack in self.stacks() for layer in stack.param_layers()]

    def qualified_name(self, layer):
        for name, stack in self.stacks():
            if layer in stack.layers:
                return f"{name}.{layer.name}"
        raise ValueError(f"{layer!r} is not part of this network")

    def resume(self, layer):
        for name, stack in self.stacks():
            if layer in stack.layers:
                if stack is self.head:
                    return self.head.resume(layer)
                self._feats[name] = stack.resume(layer)
                return self.head.forward(self._fuse())
        raise ValueError(f"{layer!r} is not part of this network")

    def tangent(self, layer, key, index, delta):
        """Logit change for a single-parameter move (see ``Stack.tangent``)."""
        for name, stack in self.stacks():
            if layer in stack.layers:
                d = stack.tangent(layer, key, index, delta)
                if stack is self.head or d is None:
                    return d
                parts = {n: np.zeros_like(f) for n, f in self._feats.items()}
                parts[name] = d
                if self.mode == "dual":
                    fused = concat(parts["local"], parts["global"])
                else:
                    fused = d
                return self.head.propagate(fused)
        raise ValueError(f"{layer!r} is not part of this network")

    def pattern(self):
        return b"".join(stack.pattern() for _, stack in self.stacks())

    def shape_table(self):
        """Symbolic per-example shapes, layer by layer, for every stack."""
        table = []
        for name, stack in self.stacks():
            shapes = stack.shapes()
            for layer, shape in zip(stack.layers, shapes[1:]):
                table.append((f"{name}.{layer.name}", shape))
        return table

    def state(self):
        return self.params.state()

    def load_state(self, state):
        self.params.load(state)

    def copy(self, dtype=None):
        other = Network(self.profile, self.mode, dtype or self.dtype)
        other.load_state(self.state())
        return other


def build_lseg(profile="desk", dtype=np.float32, seed=0):
    return Network(profile, "local-only", dtype, seed)


def build_gseg(profile="desk", dtype=np.float32, seed=0, ra_classifier=False):
    return Network(profile, "ra-classifier" if ra_classifier else "global-only", dtype, seed)


def build_lgseg(profile="desk", dtype=np.float32, seed=0):
    return Network(profile, "dual", dtype, seed)


def forward_dual(net, local, global_):
    """Per-pixel label-patch probabilities; ignores whichever input the mode does not use."""
    return net.forward(local if net.uses_local else None, global_ if net.uses_global else None)


def receptive_field(specs, size):
    """Receptive field arithmetic over conv/pool specs.

    Returns (field, jump, first_center, n) for the final spatial map: each of
    the ``n`` output units along an axis sees ``field`` input pixels centred at
    ``first_center + u * jump``.
    """
    r, j, start, n = 1, 1, 0.0, size
    for spec in specs:
        if spec.kind == "conv":
            k, s, p = spec.kernel, spec.stride, spec.pad
        else:
            k, s, p = spec.size, spec.size, 0
        n = (n + 2 * p - k) // s + 1
        start = start + ((k - 1) / 2 - p) * j
        r = r + (k - 1) * j
        j = j * s
    return r, j, start, n


def coverage(specs, size):
    """Inclusive input span [lo, hi] touched by the final spatial map."""
    r, j, start, n = receptive_field(specs, size)
    half = (r - 1) / 2
    return max(0, int(np.floor(start - half))), min(size - 1, int(np.ceil(start + (n - 1) * j + half)))


# -- profile files ---------------------------------------------------------

_SPEC_KEYS = ("filters", "kernel", "stride", "pad")


def profile_to_text(profile):
    lines = [f"name={profile.name}",
             f"local.input={profile.local_input}",
             f"global.input={profile.global_input}",
             f"output={profile.output}",
             f"input_shift={profile.input_shift!r}"]
    for stem, specs, fc in (("local", profile.local_layers, profile.local_fc),
                            ("global", profile.global_layers, profile.global_fc)):
        lines.append(f"{stem}.order={','.join(s.name for s in specs)}")
        for s in specs:
            if s.kind == "conv":
                lines += [f"{stem}.{s.name}.{k}={getattr(s, k)}" for k in _SPEC_KEYS]
            else:
                lines.append(f"{stem}.{s.name}.size={s.size}")
        lines.append(f"{stem}.fc={fc}")
    lines.append(f"fusion.hidden={','.join(str(h) for h in profile.fusion_hidden)}")
    return "\n".join(lines) + "\n"


def parse_kv(text):
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def profile_from_text(text):
    kv = parse_kv(text)

    def stem(prefix):
        specs = []
        for name in kv[f"{prefix}.order"].split(","):
            if f"{prefix}.{name}.size" in kv:
                specs.append(pool(name, int(kv[f"{prefix}.{name}.size"])))
            else:
                specs.append(LayerSpec("conv", name, *(int(kv[f"{prefix}.{name}.{k}"]) for k in _SPEC_KEYS)))
        return specs

    return Profile(
        name=kv.get("name", "custom"),
        local_layers=stem("local"),
        global_layers=stem("global"),
        local_fc=int(kv["local.fc"]),
        global_fc=int(kv["global.fc"]),
        fusion_hidden=tuple(int(h) for h in kv["fusion.hidden"].split(",")),
        local_input=int(kv.get("local.input", 64)),
        global_input=int(kv.get("global.input", 256)),
        output=int(kv.get("output", 16)),
        input_shift=float(kv.get("input_shift", 0.5)),
    ).validate()


def load_profile(path):
    with open(path) as f:
        return profile_from_text(f.read())


def save_profile(path, profile):
    with open(path, "w") as f:
        f.write(profile_to_text(profile))
