"""Pure-numpy implementations of the hot array kernels.

Same call signatures as the compiled module in ``_core.pyx``; whichever is
active is chosen once at import time by :mod:`segcl._kernels`.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "numpy"


def _windows(x_padded, kh, kw):
    # [N, C, H, W, kh, kw] view over the padded input
    return sliding_window_view(x_padded, (kh, kw), axis=(2, 3))


def conv2d_forward(x, w):
    """Stride-1 'same' cross-correlation of x [N,Cin,H,W] with w [Cout,Cin,kh,kw]."""
    kh, kw = w.shape[2], w.shape[3]
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _windows(xp, kh, kw)
    return np.einsum("nchwij,ocij->nohw", cols, w, optimize=True)


def conv2d_backward(x, w, dout):
    """Gradients of conv2d_forward w.r.t. input and weights."""
    kh, kw = w.shape[2], w.shape[3]
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _windows(xp, kh, kw)
    dw = np.einsum("nchwij,nohw->ocij", cols, dout, optimize=True)

    # Full correlation of dout with the flipped kernel gives the gradient on
    # the padded input; crop the pad margin back off.
    wf = w[:, :, ::-1, ::-1]
    dp = np.pad(dout, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    dcols = _windows(dp, kh, kw)
    dxp = np.einsum("nohwij,ocij->nchw", dcols, wf, optimize=True)
    H, W = x.shape[2], x.shape[3]
    dx = dxp[:, :, ph : ph + H, pw : pw + W]
    return np.ascontiguousarray(dx), dw


def maxpool2x2_forward(x):
    """2x2/stride-2 max pool; returns (out, argmax) with argmax in 0..3.

    Ties resolve to the first maximum in row-major window order.
    """
    N, C, H, W = x.shape
    win = x.reshape(N, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = win.reshape(N, C, H // 2, W // 2, 4)
    arg = np.argmax(flat, axis=4)
    out = np.take_along_axis(flat, arg[..., None], axis=4)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.int64)


def maxpool2x2_backward(dout, arg):
    N, C, Ho, Wo = dout.shape
    dwin = np.zeros((N, C, Ho, Wo, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=4)
    dx = dwin.reshape(N, C, Ho, Wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(dx.reshape(N, C, Ho * 2, Wo * 2))


def upsample2x2_forward(x):
    return np.ascontiguousarray(np.repeat(np.repeat(x, 2, axis=2), 2, axis=3))


def upsample2x2_backward(dout):
    N, C, H, W = dout.shape
    return np.ascontiguousarray(
        dout.reshape(N, C, H // 2, 2, W // 2, 2).sum(axis=(3, 5))
    )
