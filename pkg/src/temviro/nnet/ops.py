"""Tensor primitives with hand-derived backward passes.

All tensors are numpy arrays in (batch, channels, height, width) layout.
Convolution is cross-correlation (no kernel flip). Each forward returns
(output, cache); the matching backward consumes the cache and returns
input and parameter gradients. float32 is the training precision,
float64 the gradient-check precision; dtype follows the inputs.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def require_tensor4(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    if x.ndim != 4:
        raise ValueError(f"{name} must be 4-D (n, c, h, w), got {x.shape}")
    if not np.isfinite(x).all():
        raise FloatingPointError(f"{name} contains NaN or Inf")
    return x


def _im2col(x: np.ndarray, kh: int, kw: int, pad: int, stride: int):
    """Unfold (n, c, h, w) into rows of receptive fields.

    Returns (cols, out_h, out_w) with cols of shape
    (n * out_h * out_w, c * kh * kw).
    """
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out_h = (x.shape[2] - kh) // stride + 1
    out_w = (x.shape[3] - kw) // stride + 1
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, c * kh * kw)
    return np.ascontiguousarray(cols), out_h, out_w


def conv2d_forward(x, w, b, pad: str | int = "same", stride: int = 1):
    """Cross-correlation with bias.

    x: (n, cin, h, w); w: (cout, cin, kh, kw); b: (cout,).
    pad="same" keeps spatial dims at stride 1 (odd kernels only).
    """
    n, cin, h, wid = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ValueError(f"channel mismatch: input {cin}, kernel {cin_w}")
    if pad == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("same padding requires odd kernels")
        pad = kh // 2
    cols, out_h, out_w = _im2col(x, kh, kw, pad, stride)
    y = cols @ w.reshape(cout, -1).T + b
    y = y.reshape(n, out_h, out_w, cout).transpose(0, 3, 1, 2)
    cache = (cols, x.shape, w.shape, pad, stride)
    return np.ascontiguousarray(y), cache


def conv2d_backward(dy, w, cache):
    """Gradients of conv2d_forward w.r.t. input, kernel, and bias."""
    cols, x_shape, w_shape, pad, stride = cache
    n, cin, h, wid = x_shape
    cout, _, kh, kw = w_shape
    out_h, out_w = dy.shape[2], dy.shape[3]
    dyr = dy.transpose(0, 2, 3, 1).reshape(-1, cout)
    dw = (dyr.T @ cols).reshape(w_shape)
    db = dyr.sum(axis=0)
    dcols = dyr @ w.reshape(cout, -1)
    dcols = dcols.reshape(n, out_h, out_w, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    dxp = np.zeros((n, cin, h + 2 * pad, wid + 2 * pad), dtype=dy.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + out_h * stride:stride, j:j + out_w * stride:stride] += dcols[..., i, j]
    dx = dxp[:, :, pad:pad + h, pad:pad + wid] if pad else dxp
    return dx, dw, db


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


def maxpool2_forward(x):
    """2x2 max pooling with stride 2; remembers argmax for routing.

    Ties route to the first maximum in (top-left, top-right, bottom-left,
    bottom-right) order, deterministically.
    """
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, h // 2, w // 2, 4
    )
    idx = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def maxpool2_backward(dy, cache):
    idx, x_shape = cache
    n, c, h, w = x_shape
    dblocks = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
    np.put_along_axis(dblocks, idx[..., None], dy[..., None], axis=-1)
    return dblocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(x_shape)


def upconv2_forward(x, w, b):
    """Transposed convolution, 2x2 kernel, stride 2: doubles spatial dims.

    x: (n, cin, h, w); w: (cin, cout, 2, 2); b: (cout,).
    Each input pixel paints a 2x2 output block; this is the exact adjoint
    of a 2x2 stride-2 convolution with the same kernel.
    """
    n, cin, h, wid = x.shape
    cin_w, cout = w.shape[0], w.shape[1]
    if cin != cin_w:
        raise ValueError(f"channel mismatch: input {cin}, kernel {cin_w}")
    y = np.einsum("nchw,cfab->nfhawb", x, w, optimize=True)
    y = y.reshape(n, cout, 2 * h, 2 * wid) + b[None, :, None, None]
    return y, (x, w.shape)


def upconv2_backward(dy, w, cache):
    x, w_shape = cache
    n, cout = dy.shape[0], dy.shape[1]
    h, wid = x.shape[2], x.shape[3]
    dy6 = dy.reshape(n, cout, h, 2, wid, 2)
    dx = np.einsum("nfhawb,cfab->nchw", dy6, w, optimize=True)
    dw = np.einsum("nchw,nfhawb->cfab", x, dy6, optimize=True)
    db = dy.sum(axis=(0, 2, 3))
    return dx, dw, db


def concat_channels_forward(a, b):
    """Stack along the channel axis; batch and spatial dims must agree."""
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"concat mismatch: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=1), a.shape[1]


def concat_channels_backward(dy, split_at):
    return dy[:, :split_at], dy[:, split_at:]


def softmax_cross_entropy(logits, labels):
    """Mean per-pixel cross-entropy over two classes.

    logits: (n, 2, h, w); labels: (n, h, w) with values in {0, 1}.
    Returns (loss, dlogits) where dlogits = (softmax - onehot) / n_pixels,
    the gradient of the mean loss. Stabilized with max subtraction.
    """
    if logits.shape[1] != 2:
        raise ValueError("expected 2 logit channels")
    if labels.shape != (logits.shape[0], logits.shape[2], logits.shape[3]):
        raise ValueError(f"label dims {labels.shape} do not match logits {logits.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 1:
        raise ValueError("labels must be 0 or 1")
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    n_pix = labels.size
    lab = labels[:, None].astype(np.int64)
    loss = -np.take_along_axis(logp, lab, axis=1).sum() / n_pix
    grad = np.exp(logp)
    np.put_along_axis(
        grad, lab, np.take_along_axis(grad, lab, axis=1) - 1.0, axis=1
    )
    grad /= n_pix
    return float(loss), grad.astype(logits.dtype)
