"""Finite-difference verification of analytic gradients.

Central differences with a fixed step are the independent oracle for every
backward pass in the package; the comparison uses a blended relative error
so tiny gradients are judged on an absolute scale.
"""

import numpy as np


def rel_error(a, b, floor=1e-4):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def numeric_param_grads(loss_fn, params, h=1e-5):
    """Central-difference gradients of a scalar loss w.r.t. Parameter objects.

    `loss_fn()` must re-run the forward pass from scratch each call.
    """
    grads = []
    for p in params:
        flat = p.value.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            g[i] = (up - down) / (2 * h)
        grads.append(g.reshape(p.value.shape))
    return grads


def numeric_input_grad(loss_fn, x, h=1e-5):
    """Central-difference gradient of a scalar loss w.r.t. an input array."""
    flat = x.reshape(-1)
    g = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        g[i] = (up - down) / (2 * h)
    return g.reshape(x.shape)


def check_network(net, x, weights=None, h=1e-5, check_input=True):
    """Compare analytic and numeric gradients of sum(weights * output).

    Returns the maximum blended relative error over all parameters (and the
    input gradient when requested). The weighting makes the scalarized loss
    sensitive to every output coordinate.
    """
    x = np.array(x, dtype=np.float64)
    y0 = net.forward(x, train=True)
    if weights is None:
        rng = np.random.default_rng(1234)
        weights = rng.standard_normal(y0.shape)

    def loss_fn():
        return float((net.forward(x, train=True) * weights).sum())

    loss_fn()  # leave a fresh tape behind
    gin = net.backward(weights)
    params = net.params()
    analytic = [p.grad.copy() for p in params]
    numeric = numeric_param_grads(loss_fn, params, h=h)
    worst = max((rel_error(a, n) for a, n in zip(analytic, numeric)), default=0.0)
    if check_input:
        n_in = numeric_input_grad(loss_fn, x, h=h)
        worst = max(worst, rel_error(gin, n_in))
    net.zero_grad()
    return worst
