"""Dense MLPs and reverse-mode gradients on top of JAX (64-bit).

Every network in the package is a stack of :func:`mlp` blocks whose
parameters are plain pytrees (lists of ``{"w", "b"}`` dicts), so they
compose with ``jax.grad``, ``jax.jit`` and ``jax.vmap`` directly.
"""

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ContractError, DimensionError, NumericError  # noqa: E402

HEADS = ("linear", "softmax", "log_softmax", "sigmoid")


def init_mlp(key, widths, *, zero_last=False):
    """Uniform fan-in initialisation, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1:
        raise ContractError(f"an MLP needs at least two positive widths, got {widths}")
    keys = jax.random.split(key, len(widths) - 1)
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        if zero_last and k == len(widths) - 2:
            w = jnp.zeros((fan_in, fan_out))
            b = jnp.zeros((fan_out,))
        else:
            kw, kb = jax.random.split(keys[k])
            bound = 1.0 / np.sqrt(fan_in)
            w = jax.random.uniform(kw, (fan_in, fan_out), minval=-bound, maxval=bound)
            b = jax.random.uniform(kb, (fan_out,), minval=-bound, maxval=bound)
        layers.append({"w": w, "b": b})
    return layers


def mlp_widths(layers):
    return [layers[0]["w"].shape[0]] + [layer["w"].shape[1] for layer in layers]


def mlp(layers, x, head="linear"):
    """Apply an MLP with SiLU hidden activations to the last axis of ``x``."""
    if head not in HEADS:
        raise ContractError(f"unknown output head {head!r}")
    x = jnp.asarray(x)
    if x.shape[-1] != layers[0]["w"].shape[0]:
        raise DimensionError(
            f"input width {x.shape[-1]} does not match first layer {layers[0]['w'].shape[0]}"
        )
    for layer in layers[:-1]:
        x = jax.nn.silu(x @ layer["w"] + layer["b"])
    x = x @ layers[-1]["w"] + layers[-1]["b"]
    if head == "softmax":
        return jax.nn.softmax(x, axis=-1)
    if head == "log_softmax":
        return jax.nn.log_softmax(x, axis=-1)
    if head == "sigmoid":
        return jax.nn.sigmoid(x)
    return x


def gradient(fn, leaves, *args, **kwargs):
    """Gradient of the scalar ``fn(leaves, *args)`` with respect to ``leaves``.

    ``leaves`` may be any pytree; the result has the same structure and
    each entry the shape of the corresponding leaf.
    """
    out = fn(leaves, *args, **kwargs)
    if jnp.ndim(out) != 0:
        raise ContractError(f"gradient root must be a scalar, got shape {jnp.shape(out)}")
    return jax.grad(fn)(leaves, *args, **kwargs)


def central_difference(fn, x, step=1e-5):
    """Central finite-difference gradient of a scalar function of one array."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    for k in range(x.size):
        e = np.zeros(x.size)
        e[k] = step
        e = e.reshape(x.shape)
        flat[k] = (float(fn(x + e)) - float(fn(x - e))) / (2 * step)
    return grad


def check_finite(value, where):
    """Raise :class:`NumericError` if any entry of ``value`` is NaN or inf."""
    arr = np.asarray(value)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value in {where}")
    return value


def count_parameters(tree):
    return sum(int(np.size(leaf)) for leaf in jax.tree_util.tree_leaves(tree))
