"""Dense tensor primitives used by every layer.

Tensors are plain ``numpy.ndarray`` objects.  The floating-point width is
selected once per process with :func:`set_precision`: float64 for gradient
checks and verification, float32 for training and inference.

All primitives are pure functions.  Each output element is produced by a
fixed summation order, so partitioning the batch axis across workers gives
bitwise-identical results.
"""

from contextlib import contextmanager

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

_PRECISIONS = {"float32": np.float32, "float64": np.float64}
_dtype = np.float64
_debug = False


def set_precision(name):
    global _dtype
    if name not in _PRECISIONS:
        raise ConfigError(f"unknown precision {name!r}; use one of {sorted(_PRECISIONS)}")
    _dtype = _PRECISIONS[name]


def get_dtype():
    return _dtype


def set_debug(enabled):
    """Enable finiteness checks after every primitive."""
    global _debug
    _debug = bool(enabled)


@contextmanager
def precision(name, debug=None):
    """Temporarily switch precision (and optionally debug checks)."""
    global _dtype, _debug
    saved = (_dtype, _debug)
    set_precision(name)
    if debug is not None:
        set_debug(debug)
    try:
        yield
    finally:
        _dtype, _debug = saved


def as_tensor(x):
    return np.ascontiguousarray(x, dtype=_dtype)


def check_finite(x, where):
    if not np.all(np.isfinite(x)):
        bad = int(np.size(x) - np.count_nonzero(np.isfinite(x)))
        raise NumericError(f"{where}: {bad} non-finite value(s)")


def _checked(y, where):
    if _debug:
        check_finite(y, where)
    return y


def resolve_padding(padding, k):
    """Return the symmetric zero-padding width for ``same``/``valid``/int."""
    if padding == "same":
        return k // 2
    if padding == "valid":
        return 0
    if isinstance(padding, (int, np.integer)) and padding >= 0:
        return int(padding)
    raise ConfigError(f"padding must be 'same', 'valid' or a non-negative int, got {padding!r}")


def conv1d_output_length(length, k, stride=1, padding="same"):
    pad = resolve_padding(padding, k)
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if k > length + 2 * pad:
        raise ShapeError("conv1d", f"kernel <= {length + 2 * pad}", f"kernel {k}")
    return (length + 2 * pad - k) // stride + 1


def _check_conv_shapes(x, w, b):
    if x.ndim != 3:
        raise ShapeError("conv1d", "input [B, Cin, L]", f"shape {x.shape}")
    if w.ndim != 3:
        raise ShapeError("conv1d", "weights [Cout, Cin, K]", f"shape {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError("conv1d", f"input channels {w.shape[1]}", f"{x.shape[1]}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError("conv1d", f"bias ({w.shape[0]},)", f"{b.shape}")


def _pad(x, pad):
    if not pad:
        return x
    B, C, L = x.shape
    xp = np.zeros((B, C, L + 2 * pad), dtype=x.dtype)
    xp[:, :, pad:pad + L] = x
    return xp


def _columns(xp, k, stride, lout):
    # [B, Cin*K, Lout], tap index fastest within each input channel
    span = (lout - 1) * stride + 1
    cols = np.stack([xp[:, :, j:j + span:stride] for j in range(k)], axis=2)
    return cols.reshape(xp.shape[0], xp.shape[1] * k, lout)


def conv1d(x, w, b=None, stride=1, padding="same"):
    """1-D cross-correlation (no kernel flip).

    ``x`` is ``[B, Cin, L]``, ``w`` is ``[Cout, Cin, K]``, ``b`` is ``[Cout]``.
    """
    _check_conv_shapes(x, w, b)
    cout, cin, k = w.shape
    lout = conv1d_output_length(x.shape[2], k, stride, padding)
    cols = _columns(_pad(x, resolve_padding(padding, k)), k, stride, lout)
    y = np.matmul(w.reshape(cout, cin * k), cols)
    if b is not None:
        y += b[:, None]
    return _checked(y, "conv1d")


def conv1d_backward(x, w, dy, stride=1, padding="same"):
    """Adjoint of :func:`conv1d`; returns ``(dx, dw, db)``."""
    cout, cin, k = w.shape
    pad = resolve_padding(padding, k)
    B, _, L = x.shape
    lout = conv1d_output_length(L, k, stride, padding)
    if dy.shape != (B, cout, lout):
        raise ShapeError("conv1d_backward", f"upstream {(B, cout, lout)}", f"{dy.shape}")
    cols = _columns(_pad(x, pad), k, stride, lout)
    dw = np.matmul(dy, cols.transpose(0, 2, 1)).sum(axis=0).reshape(cout, cin, k)
    db = dy.sum(axis=(0, 2))
    if stride == 1:
        # input gradient is a correlation of dy with the flipped, transposed kernel
        wt = np.ascontiguousarray(w[:, :, ::-1].transpose(1, 0, 2))
        dcols = _columns(_pad(dy, k - 1 - pad), k, 1, L)
        dx = np.matmul(wt.reshape(cin, cout * k), dcols)
    else:
        dcols = np.matmul(w.reshape(cout, cin * k).T, dy).reshape(B, cin, k, lout)
        dxp = np.zeros((B, cin, L + 2 * pad), dtype=dy.dtype)
        span = (lout - 1) * stride + 1
        for j in range(k):
            dxp[:, :, j:j + span:stride] += dcols[:, :, j, :]
        dx = dxp[:, :, pad:pad + L] if pad else dxp
    return _checked(np.ascontiguousarray(dx), "conv1d_backward"), dw, db


def avgpool1d(x, k):
    """Non-overlapping mean pooling; trailing ``L mod k`` samples are dropped."""
    if x.ndim != 3:
        raise ShapeError("avgpool1d", "input [B, C, L]", f"shape {x.shape}")
    if k < 1:
        raise ConfigError(f"pool size must be >= 1, got {k}")
    B, C, L = x.shape
    if L < k:
        raise ShapeError("avgpool1d", f"length >= {k}", f"length {L}")
    lout = L // k
    y = x[:, :, 0:lout * k:k].copy()
    for j in range(1, k):
        y += x[:, :, j:lout * k:k]
    y /= k
    return _checked(y, "avgpool1d")


def avgpool1d_backward(input_shape, dy, k):
    B, C, L = input_shape
    lout = L // k
    if dy.shape != (B, C, lout):
        raise ShapeError("avgpool1d_backward", f"upstream {(B, C, lout)}", f"{dy.shape}")
    dx = np.zeros(input_shape, dtype=dy.dtype)
    g = dy / k
    for j in range(k):
        dx[:, :, j:lout * k:k] = g
    return dx


def dense(x, w, b=None):
    """Affine map ``x @ w + b`` with ``x`` ``[B, F]`` and ``w`` ``[F, G]``."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError("dense", f"input [B, {w.shape[0] if w.ndim == 2 else '?'}]", f"shape {x.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError("dense", f"bias ({w.shape[1]},)", f"{b.shape}")
    y = x @ w
    if b is not None:
        y = y + b
    return _checked(y, "dense")


def dense_backward(x, w, dy):
    if dy.shape != (x.shape[0], w.shape[1]):
        raise ShapeError("dense_backward", f"upstream {(x.shape[0], w.shape[1])}", f"{dy.shape}")
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)
