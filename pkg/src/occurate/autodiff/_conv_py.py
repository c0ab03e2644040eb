"""Pure-numpy im2col / col2im, used when the compiled extension is unavailable.

Column layout (shared with ``_conv_ext``): row index ``(c*kh + i)*kw + j``,
column index ``(n*Ho + ho)*Wo + wo``, value ``x[n, c, ho*s + i - p, wo*s + j - p]``
(zero outside the image).
"""

import numpy as np


def out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    ho, wo = out_size(h, kh, stride, pad), out_size(w, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
            cols[:, i, j] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, n * ho * wo)


def col2im(
    cols: np.ndarray, x_shape: tuple, kh: int, kw: int, stride: int, pad: int
) -> np.ndarray:
    n, c, h, w = x_shape
    ho, wo = out_size(h, kh, stride, pad), out_size(w, kw, stride, pad)
    cols = cols.reshape(c, kh, kw, n, ho, wo)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[
                :, i, j
            ].transpose(1, 0, 2, 3)
    if pad:
        return np.ascontiguousarray(dxp[:, :, pad : pad + h, pad : pad + w])
    return dxp
