"""Network building blocks on top of the autodiff engine.

Parameters live in flat ``{name: ndarray}`` dicts with dotted prefixes; the
forward helpers take the matching dict of graph leaves.  Weights are drawn
uniform in +-sqrt(6 / (fan_in + fan_out)); biases start at zero.
"""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Var

GATED_CELL = "gru"  # recurrent cell recorded in checkpoint headers


def glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def dense_params(rng: np.random.Generator, prefix: str, n_in: int, n_out: int) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.w": glorot(rng, (n_in, n_out), n_in, n_out),
        f"{prefix}.b": np.zeros(n_out),
    }


def dense(leaves: Mapping[str, Var], prefix: str, x: Var) -> Var:
    return x @ leaves[f"{prefix}.w"] + leaves[f"{prefix}.b"]


def conv_params(rng: np.random.Generator, prefix: str, c_in: int, c_out: int, k: int) -> dict[str, np.ndarray]:
    fan_in, fan_out = c_in * k * k, c_out * k * k
    return {
        f"{prefix}.w": glorot(rng, (c_out, c_in, k, k), fan_in, fan_out),
        f"{prefix}.b": np.zeros(c_out),
    }


def conv(leaves: Mapping[str, Var], prefix: str, x: Var, stride: int = 1, pad: int = 0) -> Var:
    return ad.conv2d(x, leaves[f"{prefix}.w"], leaves[f"{prefix}.b"], stride=stride, pad=pad)


def conv_transpose_params(
    rng: np.random.Generator, prefix: str, c_in: int, c_out: int, k: int
) -> dict[str, np.ndarray]:
    fan_in, fan_out = c_in * k * k, c_out * k * k
    return {
        f"{prefix}.w": glorot(rng, (c_in, c_out, k, k), fan_in, fan_out),
        f"{prefix}.b": np.zeros(c_out),
    }


def conv_transpose(leaves: Mapping[str, Var], prefix: str, x: Var, stride: int = 1, pad: int = 0) -> Var:
    return ad.conv2d_transpose(x, leaves[f"{prefix}.w"], leaves[f"{prefix}.b"], stride=stride, pad=pad)


def gru_params(rng: np.random.Generator, prefix: str, n_in: int, n_hidden: int) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    for gate in ("z", "r", "n"):
        params[f"{prefix}.w{gate}"] = glorot(rng, (n_in, n_hidden), n_in, n_hidden)
        params[f"{prefix}.u{gate}"] = glorot(rng, (n_hidden, n_hidden), n_hidden, n_hidden)
        params[f"{prefix}.b{gate}"] = np.zeros(n_hidden)
    return params


def gru_step(leaves: Mapping[str, Var], prefix: str, x: Var, h: Var) -> Var:
    """One gated recurrent step: update gate z, reset gate r, candidate n."""
    z = ad.sigmoid(x @ leaves[f"{prefix}.wz"] + h @ leaves[f"{prefix}.uz"] + leaves[f"{prefix}.bz"])
    r = ad.sigmoid(x @ leaves[f"{prefix}.wr"] + h @ leaves[f"{prefix}.ur"] + leaves[f"{prefix}.br"])
    n = ad.tanh(x @ leaves[f"{prefix}.wn"] + (r * h) @ leaves[f"{prefix}.un"] + leaves[f"{prefix}.bn"])
    return (1.0 - z) * h + z * n


def gru_sequence(leaves: Mapping[str, Var], prefix: str, xs: Sequence[Var], n_hidden: int) -> Var:
    """Run the cell over a frame sequence from a zero state; returns the final state."""
    if not xs:
        raise ValueError("gru_sequence needs at least one step")
    batch = xs[0].data.shape[0]
    h: Var = Var(np.zeros((batch, n_hidden)), name=f"{prefix}.h0")
    for x in xs:
        h = gru_step(leaves, prefix, x, h)
    return h


def graph_conv_params(rng: np.random.Generator, prefix: str, n_in: int, n_out: int) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.w": glorot(rng, (n_in, n_out), n_in, n_out),
        f"{prefix}.b": np.zeros(n_out),
    }


def graph_conv(leaves: Mapping[str, Var], prefix: str, h: Var, a_hat) -> Var:
    """One graph convolution ``A_hat @ H @ W + b`` (activation applied by caller).

    ``a_hat`` is the fixed symmetric-normalized adjacency (dense or sparse);
    ``h`` is ``(..., V, F)``.
    """
    mixed = ad.neighbor_mix(h, a_hat, matrix_t=a_hat)
    return mixed @ leaves[f"{prefix}.w"] + leaves[f"{prefix}.b"]
