"""Optimizers: classic SGD with momentum, and Adam.

Weight decay is the classic additive L2 gradient term (g + wd * p), applied
only to parameters flagged for decay (kernels; not biases or batchnorm).
"""

import numpy as np

from ..errors import NonFiniteError


class SgdMomentum:
    def __init__(self, params, lr=0.1, momentum=0.9, weight_decay=0.0):
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.velocity = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self.velocity):
            g = p.grad
            if g is None:
                continue
            if self.weight_decay and p.decay:
                g = g + self.weight_decay * p.value
            v *= self.momentum
            v += g
            p.value -= self.lr * v
            if not np.isfinite(p.value.min()) or not np.isfinite(p.value.max()):
                raise NonFiniteError(f"non-finite parameter {p.name} after step")

    def state_arrays(self):
        return {f"sgd.v.{p.name}": v for p, v in zip(self.params, self.velocity)}

    def load_state_arrays(self, arrays):
        for i, p in enumerate(self.params):
            self.velocity[i] = np.asarray(arrays[f"sgd.v.{p.name}"],
                                          dtype=p.value.dtype)

    def scalars(self):
        return {"algorithm": "sgd-momentum", "lr": self.lr,
                "momentum": self.momentum, "weight_decay": self.weight_decay}


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            if self.weight_decay and p.decay:
                g = g + self.weight_decay * p.value
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            p.value -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            if not np.isfinite(p.value.min()) or not np.isfinite(p.value.max()):
                raise NonFiniteError(f"non-finite parameter {p.name} after step")

    def state_arrays(self):
        out = {}
        for p, m, v in zip(self.params, self.m, self.v):
            out[f"adam.m.{p.name}"] = m
            out[f"adam.v.{p.name}"] = v
        return out

    def load_state_arrays(self, arrays):
        for i, p in enumerate(self.params):
            self.m[i] = np.asarray(arrays[f"adam.m.{p.name}"], dtype=p.value.dtype)
            self.v[i] = np.asarray(arrays[f"adam.v.{p.name}"], dtype=p.value.dtype)

    def scalars(self):
        return {"algorithm": "adam", "lr": self.lr, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps,
                "weight_decay": self.weight_decay, "t": self.t}
