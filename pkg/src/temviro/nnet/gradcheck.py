"""Finite-difference verification of the analytic gradients.

Central differences over a random sample of parameters, compared with
the backpropagated gradient of the mean cross-entropy loss. Runs in
float64. A perturbed pair of evaluations that disagrees on any ReLU
input sign or pooling argmax has crossed a kink, where the loss is not
differentiable in that direction; such parameter samples are discarded
and re-drawn.
"""

from __future__ import annotations

import numpy as np

from ..rng import SplitMix64, derive_seed
from . import ops
from .unet import UNet


def _loss_and_signs(net: UNet, x, labels):
    signs: list = []
    logits = net.forward(x, kink_signs=signs)
    net._tape = None  # forward-only evaluation; drop the cache
    loss, _ = ops.softmax_cross_entropy(logits, labels)
    return loss, signs


def _same_signs(a: list, b: list) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(
    net: UNet,
    x: np.ndarray,
    labels: np.ndarray,
    epsilon: float = 1e-3,
    n_samples: int = 500,
    seed: int = 0,
) -> float:
    """Max relative error |analytic - numeric| / max(|a|, |n|, 1e-8).

    Samples at least min(n_samples, total) parameter coordinates (all of
    them when the network is small enough). Kink-crossing samples are
    re-drawn; it is an error if fewer than half the requested samples
    survive.
    """
    if net.dtype != np.float64:
        raise ValueError("gradient checking requires a float64 network")
    x = x.astype(np.float64)

    net.zero_grad()
    logits = net.forward(x)
    _, dlogits = ops.softmax_cross_entropy(logits, labels)
    net.backward(dlogits)

    params = net.parameters()
    coords = [(pi, flat) for pi, p in enumerate(params) for flat in range(p.value.size)]
    rng = SplitMix64(derive_seed(seed, 0x6C))
    if len(coords) > n_samples:
        rng.shuffle(coords)
    else:
        n_samples = len(coords)

    max_rel = 0.0
    checked = 0
    cursor = 0
    while checked < n_samples and cursor < len(coords):
        pi, flat = coords[cursor]
        cursor += 1
        p = params[pi]
        flat_view = p.value.reshape(-1)
        orig = flat_view[flat]

        flat_view[flat] = orig + epsilon
        loss_plus, signs_plus = _loss_and_signs(net, x, labels)
        flat_view[flat] = orig - epsilon
        loss_minus, signs_minus = _loss_and_signs(net, x, labels)
        flat_view[flat] = orig

        if not _same_signs(signs_plus, signs_minus):
            continue  # kink crossed; re-draw another coordinate
        numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
        analytic = float(p.grad.reshape(-1)[flat])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        max_rel = max(max_rel, rel)
        checked += 1

    if checked < n_samples // 2:
        raise RuntimeError(
            f"gradient check unreliable: only {checked} kink-free samples"
        )
    return max_rel
