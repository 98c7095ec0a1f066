"""Pure-numpy implementation of the dense-MLP kernels.

This is the reference path and the fallback when the compiled extension is
unavailable. ``_ckernels.pyx`` implements the same functions with the same
signatures; the two are tested against each other.

Activation codes: 0 relu, 1 tanh, 2 elu (alpha = 1).
Output codes: 0 identity, 1 scaled tanh (``bound * tanh(z)``).
"""

import numpy as np

RELU, TANH, ELU = 0, 1, 2
IDENTITY, SCALED_TANH = 0, 1


def _activate(z, act):
    if act == RELU:
        np.maximum(z, 0.0, out=z)
    elif act == TANH:
        np.tanh(z, out=z)
    elif act == ELU:
        pos = np.maximum(z, 0.0)
        np.minimum(z, 0.0, out=z)
        np.expm1(z, out=z)
        z += pos
    else:
        raise ValueError(f"unknown activation code {act}")
    return z


def _activation_grad(a, da, act):
    # derivatives are expressed through the post-activation value a
    if act == RELU:
        return da * (a > 0.0)
    if act == TANH:
        return da * (1.0 - a * a)
    if act == ELU:
        return np.where(a > 0.0, da, da * (a + 1.0))
    raise ValueError(f"unknown activation code {act}")


def mlp_forward(weights, biases, x, act, out_kind, bound):
    """Batched forward pass.

    ``x`` has shape (batch, fan_in). Returns ``(output, cache)`` where cache
    holds the input followed by every layer's post-activation output.
    """
    cache = [x]
    h = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w.T
        z += b
        if i < last:
            h = _activate(z, act)
        elif out_kind == SCALED_TANH:
            np.tanh(z, out=z)
            z *= bound
            h = z
        else:
            h = z
        cache.append(h)
    return h, cache


def mlp_backward(weights, cache, dout, act, out_kind, bound, gweights, gbiases, need_dx):
    """Backpropagate ``dout`` (dL/d output) through a cached forward pass.

    Parameter gradients are written into ``gweights``/``gbiases`` (overwritten,
    not accumulated). Returns dL/d input when ``need_dx`` else ``None``.
    """
    last = len(weights) - 1
    out = cache[-1]
    if out_kind == SCALED_TANH:
        t = out / bound
        dz = dout * (bound * (1.0 - t * t))
    else:
        dz = np.array(dout, dtype=np.float64, copy=True)
    dx = None
    for i in range(last, -1, -1):
        h_in = cache[i]
        np.matmul(dz.T, h_in, out=gweights[i])
        np.sum(dz, axis=0, out=gbiases[i])
        if i > 0 or need_dx:
            dh = dz @ weights[i]
            if i > 0:
                dz = _activation_grad(cache[i], dh, act)
            else:
                dx = dh
    return dx


def adam_update(params, grads, m, v, lr, beta1, beta2, eps, step):
    """In-place bias-corrected Adam update on flat arrays; ``step`` is 1-based."""
    m *= beta1
    m += (1.0 - beta1) * grads
    v *= beta2
    v += (1.0 - beta2) * (grads * grads)
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    denom = np.sqrt(v / c2)
    denom += eps
    params -= lr * (m / c1) / denom


def soft_update(target, source, tau):
    """target <- tau * source + (1 - tau) * target, in place."""
    if tau == 1.0:
        target[...] = source
    elif tau != 0.0:
        target *= 1.0 - tau
        target += tau * source


def all_finite(a):
    return bool(np.isfinite(a).all())
