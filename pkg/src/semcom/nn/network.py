"""Sequential network assembly from layer specs, with tape-based backward.

The layer chain is validated at build time; forward in train mode retains
exactly what backward needs (the tape lives inside the layers). All values
are checked finite after every layer in both directions.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import BuildError, NonFiniteError, TapeError
from . import layers as L


@dataclass(frozen=True)
class LayerSpec:
    """One layer kind plus its hyperparameters."""

    kind: str
    options: dict = field(default_factory=dict)

    def to_dict(self):
        return {"kind": self.kind, **self.options}

    @staticmethod
    def from_dict(d):
        d = dict(d)
        return LayerSpec(d.pop("kind"), d)


def dense(units):
    return LayerSpec("dense", {"units": int(units)})


def conv2d(filters, stride=1, kernel=3):
    return LayerSpec("conv2d", {"filters": int(filters), "stride": int(stride),
                                "kernel": int(kernel)})


def batchnorm(momentum=0.9, eps=1e-8):
    return LayerSpec("batchnorm", {"momentum": momentum, "eps": eps})


def relu():
    return LayerSpec("relu")


def global_avg_pool2d():
    return LayerSpec("global-avg-pool-2d")


def residual_unit(filters, stride=1):
    return LayerSpec("residual-unit", {"filters": int(filters), "stride": int(stride)})


def softmax():
    return LayerSpec("softmax")


def normalize_power(mode="per-vector", eps=0.0):
    return LayerSpec("normalize-power", {"mode": mode, "eps": eps})


def _instantiate(spec, index):
    kind, o = spec.kind, spec.options
    name = f"{index:02d}.{kind}"
    if kind == "dense":
        return L.Dense(o["units"], name=name)
    if kind == "conv2d":
        return L.Conv2d(o["filters"], stride=o.get("stride", 1),
                        kernel=o.get("kernel", 3), name=name)
    if kind == "batchnorm":
        return L.BatchNorm(momentum=o.get("momentum", 0.9),
                           eps=o.get("eps", 1e-8), name=name)
    if kind == "relu":
        return L.ReLU()
    if kind == "global-avg-pool-2d":
        return L.GlobalAvgPool2d()
    if kind == "residual-unit":
        return L.ResidualUnit(o["filters"], stride=o.get("stride", 1), name=name)
    if kind == "softmax":
        return L.Softmax()
    if kind == "normalize-power":
        return L.PowerNormalize(mode=o.get("mode", "per-vector"),
                                eps=o.get("eps", 0.0))
    raise BuildError(f"unknown layer kind {kind!r}")


def _finite(a):
    # min/max propagate NaN and catch +-Inf without allocating a bool array
    return bool(np.isfinite(a.min())) and bool(np.isfinite(a.max()))


class Network:
    """An ordered layer chain with a consumable backward tape."""

    def __init__(self, layers_, specs, input_shape, dtype, name="net",
                 check_finite=True):
        self.layers = layers_
        self.specs = specs
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self.name = name
        self.check_finite = check_finite  # per-layer guards; loss/step guards stay on
        self._tape_ready = False

    @property
    def output_shape(self):
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.out_shape(shape)
        return shape

    def params(self):
        return [p for layer in self.layers for p in layer.params]

    def zero_grad(self):
        for p in self.params():
            p.grad = None

    def forward(self, x, train=False):
        x = np.ascontiguousarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise BuildError(
                f"{self.name}: input shape {x.shape[1:]} does not match "
                f"network input {self.input_shape}"
            )
        if self.check_finite and not _finite(x):
            raise NonFiniteError(f"{self.name}: non-finite network input")
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, train)
            if self.check_finite and not _finite(x):
                raise NonFiniteError(
                    f"{self.name}: non-finite activation after layer {i} "
                    f"({self.specs[i].kind})"
                )
        self._tape_ready = train
        return x

    def backward(self, g, stop_before=0):
        """Backpropagate an upstream gradient; returns the input gradient.

        `stop_before` allows skipping the topmost layers, used by the fused
        softmax cross-entropy path.
        """
        if not self._tape_ready:
            raise TapeError(f"{self.name}: backward without a training-mode forward")
        self._tape_ready = False
        g = np.ascontiguousarray(g, dtype=self.dtype)
        for i in range(len(self.layers) - 1 - stop_before, -1, -1):
            g = self.layers[i].backward(g)
            if self.check_finite and not _finite(g):
                raise NonFiniteError(
                    f"{self.name}: non-finite gradient below layer {i} "
                    f"({self.specs[i].kind})"
                )
        return g

    def backward_from_logits(self, dlogits):
        """Backward pass that starts below a terminal softmax layer.

        Use together with `log_probs()` for a numerically stable
        cross-entropy; the softmax tape entry is discarded.
        """
        last = self.layers[-1]
        if not isinstance(last, L.Softmax):
            raise TapeError(f"{self.name}: last layer is not softmax")
        last._take_cache()
        return self.backward(dlogits, stop_before=1)

    def log_probs(self):
        last = self.layers[-1]
        if not isinstance(last, L.Softmax):
            raise TapeError(f"{self.name}: last layer is not softmax")
        return last.log_probs()

    def spec_dicts(self):
        return [s.to_dict() for s in self.specs]

    def state_arrays(self):
        """Named arrays that define the network state (params + BN buffers)."""
        out = {}
        for p in self.params():
            out[p.name] = p.value
        for layer in self.layers:
            for sub in _batchnorms(layer):
                out[f"{sub.name}.running_mean"] = sub.running_mean
                out[f"{sub.name}.running_var"] = sub.running_var
        return out

    def load_state_arrays(self, arrays):
        for p in self.params():
            v = np.asarray(arrays[p.name], dtype=self.dtype)
            if v.shape != p.value.shape:
                raise BuildError(f"{self.name}: shape mismatch loading {p.name}")
            p.value = v
        for layer in self.layers:
            for sub in _batchnorms(layer):
                sub.running_mean = np.asarray(arrays[f"{sub.name}.running_mean"],
                                              dtype=np.float64)
                sub.running_var = np.asarray(arrays[f"{sub.name}.running_var"],
                                             dtype=np.float64)

    def clone_specs_json(self):
        return json.dumps({"input_shape": list(self.input_shape),
                           "specs": self.spec_dicts()})


def _batchnorms(layer):
    if isinstance(layer, L.BatchNorm):
        yield layer
    elif isinstance(layer, L.ResidualUnit):
        yield layer.bn1
        yield layer.bn2


def build_network(specs, input_shape, seed=0, dtype=np.float64, name="net",
                  rng=None, check_finite=True):
    """Instantiate and initialize a network from an ordered spec list.

    Weighted layers feeding a ReLU get He-uniform init, all others Glorot;
    batchnorm starts at scale one, shift zero. A shape incompatibility is a
    BuildError naming both offending layers.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    layer_objs = []
    shape = tuple(input_shape)
    for i, spec in enumerate(specs):
        layer = _instantiate(spec, i)
        try:
            next_shape = layer.out_shape(shape)
        except ValueError as e:
            prev = f"layer {i - 1} ({specs[i - 1].kind})" if i else "network input"
            raise BuildError(
                f"{name}: output of {prev} with shape {shape} is incompatible "
                f"with layer {i} ({spec.kind}): {e}"
            ) from e
        feeds_relu = i + 1 < len(specs) and specs[i + 1].kind == "relu"
        layer.init_params(shape, rng, dtype, feeds_relu)
        layer_objs.append(layer)
        shape = next_shape
    return Network(layer_objs, list(specs), input_shape, dtype, name=name,
                   check_finite=check_finite)
