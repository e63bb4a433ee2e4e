"""im2col/col2im kernels for the convolution layer.

Compiled with numba when available (bounds hoisted out of the hot loops);
a pure-numpy fallback with identical semantics is kept both as a reference
and for environments without numba. Set SEMCOM_DISABLE_NUMBA=1 to force the
fallback. Summation order inside a backend is fixed, so results are
reproducible bit for bit per backend.
"""

import os

import numpy as np


def _im2col_numpy(x, cols, s, pt, pl, k):
    b, h, w, c = x.shape
    h2, w2 = cols.shape[1], cols.shape[2]
    ph = (h2 - 1) * s + k - h - pt
    pw = (w2 - 1) * s + k - w - pl
    if pt or ph or pl or pw:
        xp = np.pad(x, ((0, 0), (pt, max(ph, 0)), (pl, max(pw, 0)), (0, 0)))
    else:
        xp = x
    for idx in range(k * k):
        di, dj = divmod(idx, k)
        cols[:, :, :, idx, :] = xp[:, di:di + (h2 - 1) * s + 1:s,
                                   dj:dj + (w2 - 1) * s + 1:s, :]


def _col2im_numpy(dcols, dx, s, pt, pl, k):
    b, h, w, c = dx.shape
    h2, w2 = dcols.shape[1], dcols.shape[2]
    ph = (h2 - 1) * s + k - h - pt
    pw = (w2 - 1) * s + k - w - pl
    dxp = np.zeros((b, h + pt + max(ph, 0), w + pl + max(pw, 0), c),
                   dtype=dx.dtype)
    for idx in range(k * k):
        di, dj = divmod(idx, k)
        dxp[:, di:di + (h2 - 1) * s + 1:s,
            dj:dj + (w2 - 1) * s + 1:s, :] += dcols[:, :, :, idx, :]
    dx += dxp[:, pt:pt + h, pl:pl + w, :]


def _im2col_loops(x, cols, s, pt, pl, k):
    b, h, w, c = x.shape
    h2, w2 = cols.shape[1], cols.shape[2]
    for dj in range(k):
        # valid j range per kernel column, hoisted out of the row loops
        j_lo = 0
        while j_lo * s + dj - pl < 0:
            j_lo += 1
        j_hi = w2 - 1
        while j_hi * s + dj - pl > w - 1:
            j_hi -= 1
        for di in range(k):
            idx = di * k + dj
            for bb in range(b):
                for i in range(h2):
                    ii = i * s + di - pt
                    if ii < 0 or ii >= h:
                        for j in range(w2):
                            for cc in range(c):
                                cols[bb, i, j, idx, cc] = 0.0
                        continue
                    for j in range(j_lo):
                        for cc in range(c):
                            cols[bb, i, j, idx, cc] = 0.0
                    for j in range(j_lo, j_hi + 1):
                        jj = j * s + dj - pl
                        for cc in range(c):
                            cols[bb, i, j, idx, cc] = x[bb, ii, jj, cc]
                    for j in range(j_hi + 1, w2):
                        for cc in range(c):
                            cols[bb, i, j, idx, cc] = 0.0


def _col2im_loops(dcols, dx, s, pt, pl, k):
    b, h, w, c = dx.shape
    h2, w2 = dcols.shape[1], dcols.shape[2]
    for dj in range(k):
        j_lo = 0
        while j_lo * s + dj - pl < 0:
            j_lo += 1
        j_hi = w2 - 1
        while j_hi * s + dj - pl > w - 1:
            j_hi -= 1
        for di in range(k):
            idx = di * k + dj
            for bb in range(b):
                for i in range(h2):
                    ii = i * s + di - pt
                    if ii < 0 or ii >= h:
                        continue
                    for j in range(j_lo, j_hi + 1):
                        jj = j * s + dj - pl
                        for cc in range(c):
                            dx[bb, ii, jj, cc] += dcols[bb, i, j, idx, cc]


def _relu_fwd_loops(x_flat, y_flat, mask_flat):
    n = x_flat.shape[0]
    for i in range(n):
        v = x_flat[i]
        if v > 0.0:
            y_flat[i] = v
            mask_flat[i] = True
        else:
            y_flat[i] = 0.0
            mask_flat[i] = False


def _relu_bwd_loops(g_flat, mask_flat, dx_flat):
    n = g_flat.shape[0]
    for i in range(n):
        if mask_flat[i]:
            dx_flat[i] = g_flat[i]
        else:
            dx_flat[i] = 0.0


def _relu_fwd_numpy(x_flat, y_flat, mask_flat):
    np.greater(x_flat, 0.0, out=mask_flat)
    np.multiply(x_flat, mask_flat, out=y_flat)


def _relu_bwd_numpy(g_flat, mask_flat, dx_flat):
    np.multiply(g_flat, mask_flat, out=dx_flat)


def _bn_fwd_train_loops(x2, gamma, beta, y2, xhat2, mean, inv_std, eps):
    """Train-mode batchnorm on a (rows, channels) view.

    Biased variance; sums accumulate in float64 for both dtypes. Fills y2,
    xhat2, mean and inv_std in place.
    """
    rows, ch = x2.shape
    for c in range(ch):
        mean[c] = 0.0
        inv_std[c] = 0.0
    acc = np.zeros(ch, dtype=np.float64)
    accsq = np.zeros(ch, dtype=np.float64)
    for r in range(rows):
        for c in range(ch):
            v = np.float64(x2[r, c])
            acc[c] += v
            accsq[c] += v * v
    for c in range(ch):
        m = acc[c] / rows
        var = accsq[c] / rows - m * m
        if var < 0.0:
            var = 0.0
        mean[c] = m
        inv_std[c] = 1.0 / np.sqrt(var + eps)
    for r in range(rows):
        for c in range(ch):
            h = (x2[r, c] - mean[c]) * inv_std[c]
            xhat2[r, c] = h
            y2[r, c] = gamma[c] * h + beta[c]


def _bn_bwd_loops(g2, xhat2, gamma, inv_std, dx2, dgamma, dbeta):
    """Backward of train-mode batchnorm on (rows, channels) views."""
    rows, ch = g2.shape
    sg = np.zeros(ch, dtype=np.float64)
    sgx = np.zeros(ch, dtype=np.float64)
    for r in range(rows):
        for c in range(ch):
            gv = np.float64(g2[r, c])
            sg[c] += gv
            sgx[c] += gv * xhat2[r, c]
    for c in range(ch):
        dgamma[c] = sgx[c]
        dbeta[c] = sg[c]
    for r in range(rows):
        for c in range(ch):
            dxhat = g2[r, c] * gamma[c]
            term = (gamma[c] * (sg[c] + xhat2[r, c] * sgx[c])) / rows
            dx2[r, c] = (dxhat - term) * inv_std[c]


def _bn_fwd_train_numpy(x2, gamma, beta, y2, xhat2, mean, inv_std, eps):
    m = x2.mean(axis=0, dtype=np.float64)
    var = np.maximum((x2.astype(np.float64) ** 2).mean(axis=0) - m * m, 0.0)
    mean[:] = m
    inv_std[:] = 1.0 / np.sqrt(var + eps)
    np.subtract(x2, mean.astype(x2.dtype), out=xhat2)
    np.multiply(xhat2, inv_std.astype(x2.dtype), out=xhat2)
    np.multiply(xhat2, gamma, out=y2)
    np.add(y2, beta, out=y2)


def _bn_bwd_numpy(g2, xhat2, gamma, inv_std, dx2, dgamma, dbeta):
    rows = g2.shape[0]
    sg = g2.sum(axis=0, dtype=np.float64)
    sgx = (g2.astype(np.float64) * xhat2).sum(axis=0)
    dgamma[:] = sgx
    dbeta[:] = sg
    term = (gamma * (sg + xhat2 * sgx) / rows).astype(g2.dtype)
    np.multiply(g2, gamma, out=dx2)
    np.subtract(dx2, term, out=dx2)
    np.multiply(dx2, inv_std.astype(g2.dtype), out=dx2)


USING_NUMBA = False
if not os.environ.get("SEMCOM_DISABLE_NUMBA"):
    try:
        from numba import njit

        _jit = njit(cache=True, nogil=True, fastmath=False)
        im2col = _jit(_im2col_loops)
        col2im = _jit(_col2im_loops)
        bn_fwd_train = _jit(_bn_fwd_train_loops)
        bn_bwd = _jit(_bn_bwd_loops)
        relu_fwd = _jit(_relu_fwd_loops)
        relu_bwd = _jit(_relu_bwd_loops)
        USING_NUMBA = True
    except ImportError:  # pragma: no cover - depends on environment
        im2col = _im2col_numpy
        col2im = _col2im_numpy
        bn_fwd_train = _bn_fwd_train_numpy
        bn_bwd = _bn_bwd_numpy
        relu_fwd = _relu_fwd_numpy
        relu_bwd = _relu_bwd_numpy
else:
    im2col = _im2col_numpy
    col2im = _col2im_numpy
    bn_fwd_train = _bn_fwd_train_numpy
    bn_bwd = _bn_bwd_numpy
    relu_fwd = _relu_fwd_numpy
    relu_bwd = _relu_bwd_numpy
