"""Layer primitives with explicit forward/backward passes.

Every layer caches what its backward pass needs during a training-mode
forward and consumes that cache exactly once. Data layout is channels-last:
images are (batch, height, width, channels), feature vectors (batch, dim).
"""

import numpy as np

from ..errors import NumericGuardError, TapeError
from . import _kernels


def he_uniform(rng, fan_in, shape):
    """He uniform init, variance 2/fan_in. Used for layers feeding a ReLU."""
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def glorot_uniform(rng, fan_in, fan_out, shape):
    """Glorot uniform init, variance 2/(fan_in+fan_out)."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Parameter:
    """A named weight array plus its gradient buffer."""

    __slots__ = ("name", "value", "grad", "decay")

    def __init__(self, name, value, decay=False):
        self.name = name
        self.value = value
        self.grad = None
        self.decay = decay  # participates in L2 weight decay

    def add_grad(self, g):
        if self.grad is None:
            self.grad = g
        else:
            self.grad += g


class Layer:
    """Base layer: shape propagation, parameter init, forward/backward."""

    has_weights = False

    def __init__(self):
        self.params = []
        self._cache = None

    def out_shape(self, in_shape):
        """Per-example output shape for a given per-example input shape.

        Raises ValueError if the input shape is unsupported; the network
        builder turns that into a BuildError naming both layers.
        """
        return tuple(in_shape)

    def init_params(self, in_shape, rng, dtype, feeds_relu):
        """Allocate parameters. `feeds_relu` selects He over Glorot init."""

    def forward(self, x, train):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise TapeError(
                f"{type(self).__name__}.backward called without a prior "
                "training-mode forward"
            )
        cache = self._cache
        self._cache = None
        return cache


class Dense(Layer):
    """Affine map on (batch, features)."""

    has_weights = True

    def __init__(self, units, name="dense"):
        super().__init__()
        self.units = int(units)
        self.name = name
        self.w = None
        self.b = None

    def out_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ValueError(f"dense expects flat input, got shape {in_shape}")
        return (self.units,)

    def init_params(self, in_shape, rng, dtype, feeds_relu):
        fan_in = in_shape[0]
        if feeds_relu:
            w = he_uniform(rng, fan_in, (fan_in, self.units))
        else:
            w = glorot_uniform(rng, fan_in, self.units, (fan_in, self.units))
        self.w = Parameter(f"{self.name}.w", w.astype(dtype), decay=True)
        self.b = Parameter(f"{self.name}.b", np.zeros(self.units, dtype=dtype))
        self.params = [self.w, self.b]

    def forward(self, x, train):
        self._cache = x if train else None
        return x @ self.w.value + self.b.value

    def backward(self, g):
        x = self._take_cache()
        self.w.add_grad(x.T @ g)
        self.b.add_grad(g.sum(axis=0))
        return g @ self.w.value.T


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._y = None
        self._mask = None
        self._dx = None

    def forward(self, x, train):
        if not train:
            self._cache = None
            return np.maximum(x, 0)
        x = np.ascontiguousarray(x)
        if self._y is None or self._y.shape != x.shape or self._y.dtype != x.dtype:
            self._y = np.empty_like(x)
            self._mask = np.empty(x.shape, dtype=np.bool_)
            self._dx = np.empty_like(x)
        _kernels.relu_fwd(x.reshape(-1), self._y.reshape(-1),
                          self._mask.reshape(-1))
        self._cache = True
        return self._y

    def backward(self, g):
        self._take_cache()
        g = np.ascontiguousarray(g)
        _kernels.relu_bwd(g.reshape(-1), self._mask.reshape(-1),
                          self._dx.reshape(-1))
        return self._dx


class Conv2d(Layer):
    """k x k convolution with zero-padded 'same' output, stride 1 or 2.

    Same-padding follows the TensorFlow rule: out = ceil(in / stride), total
    padding max((out-1)*stride + k - in, 0), split with the extra row/column
    at the bottom/right. Implemented as im2col + one GEMM; the column and
    output buffers are reused across steps to keep the hot path allocation
    free (the backward pass reuses the column buffer for its own scratch).
    """

    has_weights = True

    def __init__(self, filters, stride=1, kernel=3, name="conv2d"):
        super().__init__()
        if kernel not in (1, 3):
            raise ValueError(f"unsupported kernel size {kernel}")
        if stride not in (1, 2):
            raise ValueError(f"unsupported stride {stride}")
        self.filters = int(filters)
        self.stride = int(stride)
        self.kernel = int(kernel)
        self.name = name
        self.w = None
        self.b = None
        self._cols = None
        self._y = None
        self._dx = None

    def _geometry(self, h, w):
        s, k = self.stride, self.kernel
        h2 = -(-h // s)
        w2 = -(-w // s)
        ph = max((h2 - 1) * s + k - h, 0)
        pw = max((w2 - 1) * s + k - w, 0)
        return h2, w2, ph // 2, pw // 2

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ValueError(f"conv2d expects (H, W, C) input, got {in_shape}")
        h2, w2, _, _ = self._geometry(in_shape[0], in_shape[1])
        return (h2, w2, self.filters)

    def init_params(self, in_shape, rng, dtype, feeds_relu):
        c_in = in_shape[2]
        k = self.kernel
        fan_in = k * k * c_in
        fan_out = k * k * self.filters
        shape = (fan_in, self.filters)
        if feeds_relu:
            w = he_uniform(rng, fan_in, shape)
        else:
            w = glorot_uniform(rng, fan_in, fan_out, shape)
        self.w = Parameter(f"{self.name}.w", w.astype(dtype), decay=True)
        self.b = Parameter(f"{self.name}.b", np.zeros(self.filters, dtype=dtype))
        self.params = [self.w, self.b]

    def _buffers(self, x):
        b, h, w, c = x.shape
        k = self.kernel
        h2, w2, pt, pl = self._geometry(h, w)
        if self._cols is None or self._cols.shape != (b, h2, w2, k * k, c) \
                or self._cols.dtype != x.dtype:
            self._cols = np.empty((b, h2, w2, k * k, c), dtype=x.dtype)
            self._y = np.empty((b * h2 * w2, self.filters), dtype=x.dtype)
            self._dx = np.empty((b, h, w, c), dtype=x.dtype)
        return h2, w2, pt, pl

    def forward(self, x, train):
        b = x.shape[0]
        h2, w2, pt, pl = self._buffers(x)
        _kernels.im2col(x, self._cols, self.stride, pt, pl, self.kernel)
        flat = self._cols.reshape(b * h2 * w2, -1)
        np.matmul(flat, self.w.value, out=self._y)
        np.add(self._y, self.b.value, out=self._y)
        self._cache = (x.shape, h2, w2, pt, pl) if train else None
        return self._y.reshape(b, h2, w2, self.filters)

    def backward(self, g):
        x_shape, h2, w2, pt, pl = self._take_cache()
        b, h, w, c = x_shape
        gm = np.ascontiguousarray(g.reshape(b * h2 * w2, self.filters))
        flat = self._cols.reshape(b * h2 * w2, -1)
        self.w.add_grad(flat.T @ gm)
        self.b.add_grad(gm.sum(axis=0))
        # the column buffer doubles as the dcols scratch from here on
        np.matmul(gm, self.w.value.T, out=flat)
        self._dx.fill(0)
        _kernels.col2im(self._cols, self._dx, self.stride, pt, pl, self.kernel)
        return self._dx


class BatchNorm(Layer):
    """Batch normalization over all axes except the last (channels/features).

    Training uses biased batch statistics; running statistics follow an
    exponential moving average (running = m*running + (1-m)*batch). Eval mode
    uses running statistics only.
    """

    has_weights = True

    def __init__(self, momentum=0.9, eps=1e-8, name="batchnorm"):
        super().__init__()
        self.momentum = float(momentum)
        self.eps = float(eps)
        self.name = name
        self.gamma = None
        self.beta = None
        self.running_mean = None
        self.running_var = None

    def init_params(self, in_shape, rng, dtype, feeds_relu):
        c = in_shape[-1]
        self.gamma = Parameter(f"{self.name}.gamma", np.ones(c, dtype=dtype))
        self.beta = Parameter(f"{self.name}.beta", np.zeros(c, dtype=dtype))
        # running statistics accumulate in float64; cast on use
        self.running_mean = np.zeros(c, dtype=np.float64)
        self.running_var = np.ones(c, dtype=np.float64)
        self.params = [self.gamma, self.beta]
        self._mean = np.zeros(c, dtype=np.float64)
        self._inv_std = np.zeros(c, dtype=np.float64)
        self._y = None
        self._xhat = None
        self._dx = None

    def _buffers(self, x):
        if self._y is None or self._y.shape != x.shape or self._y.dtype != x.dtype:
            self._y = np.empty_like(x)
            self._xhat = np.empty_like(x)
            self._dx = np.empty_like(x)

    def forward(self, x, train):
        c = x.shape[-1]
        if train:
            x = np.ascontiguousarray(x)
            self._buffers(x)
            _kernels.bn_fwd_train(x.reshape(-1, c), self.gamma.value,
                                  self.beta.value, self._y.reshape(-1, c),
                                  self._xhat.reshape(-1, c), self._mean,
                                  self._inv_std, self.eps)
            var = 1.0 / self._inv_std ** 2 - self.eps
            m = self.momentum
            self.running_mean *= m
            self.running_mean += (1 - m) * self._mean
            self.running_var *= m
            self.running_var += (1 - m) * var
            self._cache = True
            return self._y
        self._cache = None
        inv_std = (1.0 / np.sqrt(self.running_var + self.eps)).astype(x.dtype)
        mean = self.running_mean.astype(x.dtype)
        return self.gamma.value * ((x - mean) * inv_std) + self.beta.value

    def backward(self, g):
        self._take_cache()
        c = g.shape[-1]
        g = np.ascontiguousarray(g)
        dgamma = np.zeros(c, dtype=np.float64)
        dbeta = np.zeros(c, dtype=np.float64)
        _kernels.bn_bwd(g.reshape(-1, c), self._xhat.reshape(-1, c),
                        self.gamma.value, self._inv_std,
                        self._dx.reshape(-1, c), dgamma, dbeta)
        self.gamma.add_grad(dgamma.astype(g.dtype))
        self.beta.add_grad(dbeta.astype(g.dtype))
        return self._dx


class GlobalAvgPool2d(Layer):
    """Mean over both spatial axes: (B, H, W, C) -> (B, C)."""

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ValueError(f"global-avg-pool-2d expects (H, W, C), got {in_shape}")
        return (in_shape[2],)

    def forward(self, x, train):
        self._cache = x.shape if train else None
        return x.mean(axis=(1, 2))

    def backward(self, g):
        b, h, w, c = self._take_cache()
        return np.broadcast_to(g[:, None, None, :] / (h * w), (b, h, w, c)).copy()


class Softmax(Layer):
    """Row-wise softmax producing class probabilities.

    Keeps the pre-softmax logits around in train mode so a loss can be
    evaluated through a numerically stable log-softmax (see Network).
    """

    def forward(self, x, train):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        self._cache = (p, x) if train else None
        return p

    def log_probs(self):
        """Stable log-softmax of the logits cached by the last train forward."""
        if self._cache is None:
            raise TapeError("Softmax.log_probs needs a training-mode forward")
        _, x = self._cache
        z = x - x.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def backward(self, g):
        p, _ = self._take_cache()
        return p * (g - (g * p).sum(axis=1, keepdims=True))


class PowerNormalize(Layer):
    """Transmit-power constraint.

    per-vector:        y = sqrt(D) * x / ||x||_2 per row, so ||y||^2 = D and
                       the average power per channel use is one.
    per-batch-feature: y[:, j] = x[:, j] / sqrt(mean_b x[b, j]^2), so every
                       output coordinate has unit second moment over the batch.

    A zero norm is a hard error unless the caller opts into an epsilon guard.
    """

    def __init__(self, mode="per-vector", eps=0.0):
        super().__init__()
        if mode not in ("per-vector", "per-batch-feature"):
            raise ValueError(f"unknown normalization mode {mode!r}")
        self.mode = mode
        self.eps = float(eps)

    def out_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ValueError(f"normalize-power expects flat input, got {in_shape}")
        return tuple(in_shape)

    def forward(self, x, train):
        if self.mode == "per-vector":
            sq = (x * x).sum(axis=1, keepdims=True)
            if self.eps == 0.0 and np.any(sq == 0.0):
                raise NumericGuardError(
                    "zero-norm row in per-vector power normalization; "
                    "construct the layer with eps > 0 to opt into a guard"
                )
            r = np.sqrt(sq + self.eps)
            scale = np.sqrt(x.shape[1]) / r
            y = x * scale
            self._cache = (x, r, scale) if train else None
            return y
        sq = (x * x).mean(axis=0, keepdims=True)
        if self.eps == 0.0 and np.any(sq == 0.0):
            raise NumericGuardError(
                "zero-power column in per-batch-feature normalization; "
                "construct the layer with eps > 0 to opt into a guard"
            )
        r = np.sqrt(sq + self.eps)
        y = x / r
        self._cache = (x, r, None) if train else None
        return y

    def backward(self, g):
        x, r, scale = self._take_cache()
        if self.mode == "per-vector":
            dot = (x * g).sum(axis=1, keepdims=True)
            return scale * (g - x * (dot / (r * r)))
        n = x.shape[0]
        dot = (x * g).sum(axis=0, keepdims=True)
        return g / r - x * (dot / (n * r ** 3))


class ResidualUnit(Layer):
    """Pre-activation residual unit: BN -> ReLU -> conv, twice, plus skip.

    On a channel-count or stride change the skip path is a 1x1 convolution
    applied to the pre-activated input; otherwise the input passes through
    unchanged, so zeroing the convolution weights makes the unit an identity.
    """

    has_weights = True

    def __init__(self, filters, stride=1, name="residual"):
        super().__init__()
        self.filters = int(filters)
        self.stride = int(stride)
        self.name = name
        self.bn1 = BatchNorm(name=f"{name}.bn1")
        self.relu1 = ReLU()
        self.conv1 = Conv2d(filters, stride=stride, name=f"{name}.conv1")
        self.bn2 = BatchNorm(name=f"{name}.bn2")
        self.relu2 = ReLU()
        self.conv2 = Conv2d(filters, stride=1, name=f"{name}.conv2")
        self.proj = None
        self._identity_skip = True

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ValueError(f"residual-unit expects (H, W, C), got {in_shape}")
        return self.conv1.out_shape(in_shape)

    def init_params(self, in_shape, rng, dtype, feeds_relu):
        # Every conv inside the unit sits in a ReLU-conv chain: He init.
        self._identity_skip = (in_shape[2] == self.filters and self.stride == 1)
        self.bn1.init_params(in_shape, rng, dtype, False)
        self.conv1.init_params(in_shape, rng, dtype, True)
        mid_shape = self.conv1.out_shape(in_shape)
        self.bn2.init_params(mid_shape, rng, dtype, False)
        self.conv2.init_params(mid_shape, rng, dtype, True)
        sublayers = [self.bn1, self.conv1, self.bn2, self.conv2]
        if not self._identity_skip:
            self.proj = Conv2d(self.filters, stride=self.stride, kernel=1,
                               name=f"{self.name}.proj")
            self.proj.init_params(in_shape, rng, dtype, True)
            sublayers.append(self.proj)
        self.params = [p for layer in sublayers for p in layer.params]

    def forward(self, x, train):
        pre = self.relu1.forward(self.bn1.forward(x, train), train)
        h = self.conv1.forward(pre, train)
        h = self.relu2.forward(self.bn2.forward(h, train), train)
        out = self.conv2.forward(h, train)
        if self._identity_skip:
            out = out + x
        else:
            out = out + self.proj.forward(pre, train)
        self._cache = True if train else None
        return out

    def backward(self, g):
        self._take_cache()
        gh = self.bn2.backward(self.relu2.backward(self.conv2.backward(g)))
        gpre = self.conv1.backward(gh)
        if self._identity_skip:
            gx = self.bn1.backward(self.relu1.backward(gpre)) + g
        else:
            gpre = gpre + self.proj.backward(g)
            gx = self.bn1.backward(self.relu1.backward(gpre))
        return gx
