"""U-Net: encoder/decoder with skip concatenations, built from the ops
primitives with same padding throughout, so output spatial dims equal
input dims and the head emits one logit plane per class.

Structure for encoder_depth d and first_filters f:

    encoder level k (k = 0..d-1): conv3-ReLU, conv3-ReLU (f * 2^k), maxpool
    bridge: conv3-ReLU, conv3-ReLU (f * 2^d)
    decoder level k (k = d-1..0): upconv2-ReLU (f * 2^k), concat skip,
                                  conv3-ReLU, conv3-ReLU (f * 2^k)
    head: 1x1 conv to num_classes

Weights are He-uniform (fan-in), biases zero, seeded deterministically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..rng import SplitMix64, derive_seed
from . import ops


@dataclass
class UNetConfig:
    encoder_depth: int = 4
    first_filters: int = 32
    in_channels: int = 1
    num_classes: int = 2
    input_size: int = 256

    def validate(self) -> "UNetConfig":
        if self.encoder_depth < 1 or self.first_filters < 1:
            raise ValueError("encoder_depth and first_filters must be >= 1")
        if self.num_classes != 2:
            raise ValueError("this network is a two-class pixel classifier")
        if self.in_channels != 1:
            raise ValueError("grayscale input only (in_channels = 1)")
        if self.input_size % (2 ** self.encoder_depth):
            raise ValueError(
                f"input_size {self.input_size} not divisible by 2^{self.encoder_depth}"
            )
        return self

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json(cls, d: dict) -> "UNetConfig":
        return cls(**d).validate()


DESK_CONFIG = UNetConfig(encoder_depth=2, first_filters=8, input_size=64)


class Param:
    """One trainable tensor with its gradient and Adam moments."""

    def __init__(self, name: str, value: np.ndarray, is_weight: bool):
        self.name = name
        self.value = value
        self.is_weight = is_weight  # biases are exempt from L2
        self.grad = np.zeros_like(value)
        self.m = np.zeros_like(value)
        self.v = np.zeros_like(value)


class _ConvLayer:
    def __init__(self, name, cin, cout, k, rng: SplitMix64, dtype):
        limit = math.sqrt(6.0 / (cin * k * k))
        w = rng.uniform_field((cout, cin, k, k), -limit, limit).astype(dtype)
        self.w = Param(f"{name}.w", w, True)
        self.b = Param(f"{name}.b", np.zeros(cout, dtype=dtype), False)
        self.k = k
        self._cache = None

    def forward(self, x):
        y, self._cache = ops.conv2d_forward(x, self.w.value, self.b.value)
        return y

    def backward(self, dy):
        if self._cache is None:
            raise RuntimeError("backward before forward")
        dx, dw, db = ops.conv2d_backward(dy, self.w.value, self._cache)
        self.w.grad += dw
        self.b.grad += db
        self._cache = None
        return dx

    def params(self):
        return [self.w, self.b]


class _UpconvLayer:
    def __init__(self, name, cin, cout, rng: SplitMix64, dtype):
        limit = math.sqrt(6.0 / (cin * 4))
        w = rng.uniform_field((cin, cout, 2, 2), -limit, limit).astype(dtype)
        self.w = Param(f"{name}.w", w, True)
        self.b = Param(f"{name}.b", np.zeros(cout, dtype=dtype), False)
        self._cache = None

    def forward(self, x):
        y, self._cache = ops.upconv2_forward(x, self.w.value, self.b.value)
        return y

    def backward(self, dy):
        if self._cache is None:
            raise RuntimeError("backward before forward")
        dx, dw, db = ops.upconv2_backward(dy, self.w.value, self._cache)
        self.w.grad += dw
        self.b.grad += db
        self._cache = None
        return dx

    def params(self):
        return [self.w, self.b]


class UNet:
    """Stateful network: forward caches activations, backward consumes them."""

    def __init__(self, cfg: UNetConfig, seed: int = 0, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.step = 0  # Adam step counter, persisted in checkpoints
        rng = SplitMix64(derive_seed(seed, 0x0CE4))
        d, f = cfg.encoder_depth, cfg.first_filters

        self.enc = []
        cin = cfg.in_channels
        for k in range(d):
            cout = f * (2 ** k)
            self.enc.append([
                _ConvLayer(f"enc{k}.conv0", cin, cout, 3, rng, dtype),
                _ConvLayer(f"enc{k}.conv1", cout, cout, 3, rng, dtype),
            ])
            cin = cout
        cb = f * (2 ** d)
        self.bridge = [
            _ConvLayer("bridge.conv0", cin, cb, 3, rng, dtype),
            _ConvLayer("bridge.conv1", cb, cb, 3, rng, dtype),
        ]
        self.dec = []
        cin = cb
        for k in reversed(range(d)):
            cout = f * (2 ** k)
            self.dec.append({
                "up": _UpconvLayer(f"dec{k}.up", cin, cout, rng, dtype),
                "conv0": _ConvLayer(f"dec{k}.conv0", 2 * cout, cout, 3, rng, dtype),
                "conv1": _ConvLayer(f"dec{k}.conv1", cout, cout, 3, rng, dtype),
            })
            cin = cout
        self.head = _ConvLayer("head", cin, cfg.num_classes, 1, rng, dtype)
        self._tape = None

    def layers(self):
        for block in self.enc:
            yield from block
        yield from self.bridge
        for block in self.dec:
            yield block["up"]
            yield block["conv0"]
            yield block["conv1"]
        yield self.head

    def parameters(self) -> list[Param]:
        return [p for layer in self.layers() for p in layer.params()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad[...] = 0

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def forward(self, x: np.ndarray, kink_signs: list | None = None) -> np.ndarray:
        """Run the network; returns (n, num_classes, h, w) logits.

        kink_signs, when given, collects the sign pattern of every ReLU
        input and the argmax pattern of every pooling window; the gradient
        checker compares these across perturbed evaluations to detect
        kink crossings (both ReLU and pool-argmax switches are kinks).
        """
        ops.require_tensor4(x, "input")
        if x.shape[1] != self.cfg.in_channels:
            raise ValueError(f"expected {self.cfg.in_channels} input channels")
        if x.shape[2] != self.cfg.input_size or x.shape[3] != self.cfg.input_size:
            raise ValueError(
                f"expected {self.cfg.input_size}x{self.cfg.input_size} input, got {x.shape[2]}x{x.shape[3]}"
            )
        x = x.astype(self.dtype, copy=False)

        def relu(z):
            y, mask = ops.relu_forward(z)
            tape.append(("relu", mask))
            if kink_signs is not None:
                kink_signs.append(mask)
            return y

        tape: list = []
        skips = []
        for block in self.enc:
            x = relu(block[0].forward(x))
            x = relu(block[1].forward(x))
            skips.append(x)
            x, cache = ops.maxpool2_forward(x)
            tape.append(("pool", cache))
            if kink_signs is not None:
                kink_signs.append(cache[0])
        x = relu(self.bridge[0].forward(x))
        x = relu(self.bridge[1].forward(x))
        for block, skip in zip(self.dec, reversed(skips)):
            x = relu(block["up"].forward(x))
            x, split = ops.concat_channels_forward(x, skip)
            tape.append(("concat", split))
            x = relu(block["conv0"].forward(x))
            x = relu(block["conv1"].forward(x))
        logits = self.head.forward(x)
        self._tape = tape
        return logits

    def backward(self, dlogits: np.ndarray) -> None:
        """Backpropagate the loss gradient; accumulates parameter grads."""
        if self._tape is None:
            raise RuntimeError("backward before forward")
        tape = self._tape
        self._tape = None

        def pop(kind):
            tag, payload = tape.pop()
            assert tag == kind, f"tape mismatch: wanted {kind}, got {tag}"
            return payload

        dx = self.head.backward(dlogits)
        skip_grads = []
        for block in reversed(self.dec):
            dx = block["conv1"].backward(ops.relu_backward(dx, pop("relu")))
            dx = block["conv0"].backward(ops.relu_backward(dx, pop("relu")))
            dx, dskip = ops.concat_channels_backward(dx, pop("concat"))
            skip_grads.append(dskip)
            dx = block["up"].backward(ops.relu_backward(dx, pop("relu")))
        dx = self.bridge[1].backward(ops.relu_backward(dx, pop("relu")))
        dx = self.bridge[0].backward(ops.relu_backward(dx, pop("relu")))
        for block, dskip in zip(reversed(self.enc), reversed(skip_grads)):
            dx = ops.maxpool2_backward(dx, pop("pool"))
            dx = dx + dskip
            dx = block[1].backward(ops.relu_backward(dx, pop("relu")))
            dx = block[0].backward(ops.relu_backward(dx, pop("relu")))
        assert not tape


def build_unet(cfg: UNetConfig, seed: int = 0, dtype=np.float32) -> UNet:
    return UNet(cfg, seed=seed, dtype=dtype)
