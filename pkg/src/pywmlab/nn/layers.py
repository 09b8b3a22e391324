"""Forward/backward primitives for the fixed architectures.

Every function works on NHWC ``numpy`` arrays and is dtype-generic: the engine runs
in float32, the finite-difference oracle runs the same code in float64.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import NDArray

from .spec import KERNEL, POOL

Array = NDArray[np.floating]


def dense_forward(x: Array, w: Array, b: Array) -> Array:
    """Return ``x @ w.T + b`` for ``x`` of shape ``(N, in)`` and ``w`` of shape ``(out, in)``."""
    return x @ w.T + b


def dense_backward(dout: Array, x: Array, w: Array) -> tuple[Array, Array, Array]:
    """Return ``(dx, dw, db)`` for :func:`dense_forward`."""
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def relu_backward(dout: Array, z: Array) -> Array:
    """Gradient of ReLU given the pre-activation ``z``."""
    return dout * (z > 0)


def _windows(x: Array) -> Array:
    # (N, H', W', C, kh, kw) -> (N, H', W', C*kh*kw), ordered (c, i, j)
    win = sliding_window_view(x, (KERNEL, KERNEL), axis=(1, 2))
    n, ho, wo, c = win.shape[:4]
    return np.ascontiguousarray(win).reshape(n, ho, wo, c * KERNEL * KERNEL)


def _kernel_matrix(w: Array) -> Array:
    # (out, kh, kw, in) -> (out, in*kh*kw) matching _windows column order
    return w.transpose(0, 3, 1, 2).reshape(w.shape[0], -1)


def conv_forward(x: Array, w: Array, b: Array) -> tuple[Array, Array]:
    """3x3 valid convolution.

    Args:
        x: Input ``(N, H, W, C)``.
        w: Kernel ``(out, 3, 3, C)``.
        b: Bias ``(out,)``.

    Returns:
        Output ``(N, H-2, W-2, out)`` and the im2col matrix kept for the backward pass.
    """
    cols = _windows(x)
    return cols @ _kernel_matrix(w).T + b, cols


def conv_backward(dout: Array, cols: Array, x_shape: tuple[int, ...], w: Array) -> tuple[Array, Array, Array]:
    """Return ``(dx, dw, db)`` for :func:`conv_forward`."""
    n, ho, wo, out = dout.shape
    c = x_shape[3]
    d2 = dout.reshape(-1, out)
    dw = (d2.T @ cols.reshape(-1, cols.shape[-1])).reshape(out, c, KERNEL, KERNEL).transpose(0, 2, 3, 1)
    db = d2.sum(axis=0)
    dcols = (d2 @ _kernel_matrix(w)).reshape(n, ho, wo, c, KERNEL, KERNEL)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for i in range(KERNEL):
        for j in range(KERNEL):
            dx[:, i : i + ho, j : j + wo, :] += dcols[..., i, j]
    return dx, dw, db


def maxpool_forward(x: Array) -> tuple[Array, NDArray[np.intp]]:
    """2x2/stride-2 max-pool; odd trailing rows/cols are dropped.

    Ties route the gradient to the first element of the window (row-major).

    Returns:
        Pooled output and the argmax index per window for the backward pass.
    """
    n, h, w, c = x.shape
    ho, wo = h // POOL, w // POOL
    crop = x[:, : ho * POOL, : wo * POOL, :]
    win = crop.reshape(n, ho, POOL, wo, POOL, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, POOL * POOL)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool_backward(dout: Array, idx: NDArray[np.intp], x_shape: tuple[int, ...]) -> Array:
    """Scatter pooled gradients back to the argmax positions."""
    n, h, w, c = x_shape
    ho, wo = dout.shape[1], dout.shape[2]
    dwin = np.zeros((n, ho, wo, c, POOL * POOL), dtype=dout.dtype)
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    dcrop = dwin.reshape(n, ho, wo, c, POOL, POOL).transpose(0, 1, 4, 2, 5, 3).reshape(n, ho * POOL, wo * POOL, c)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, : ho * POOL, : wo * POOL, :] = dcrop
    return dx


def softmax_cross_entropy(logits: Array, labels: NDArray[np.integer], *, reduction: str = "mean") -> tuple[float, Array]:
    """Softmax cross-entropy with 64-bit accumulation.

    Args:
        logits: ``(N, K)`` logits.
        labels: ``(N,)`` class ids.
        reduction: ``"mean"`` or ``"sum"``; the gradient is scaled accordingly.

    Returns:
        Scalar loss and ``dloss/dlogits`` in the dtype of ``logits``.
    """
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(z.shape[0])
    nll = logsum - z[rows, labels]
    probs = np.exp(z - logsum[:, None])
    probs[rows, labels] -= 1.0
    if reduction == "mean":
        return float(nll.mean()), (probs / z.shape[0]).astype(logits.dtype)
    return float(nll.sum()), probs.astype(logits.dtype)


def per_sample_cross_entropy(logits: Array, labels: NDArray[np.integer]) -> NDArray[np.float64]:
    """Per-sample negative log-likelihood in float64."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    nll: NDArray[np.float64] = logsum - z[np.arange(z.shape[0]), labels]
    return nll
