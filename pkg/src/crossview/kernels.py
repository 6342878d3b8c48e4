"""Hot numeric kernels: patch extraction for convolutions, bilinear warping,
squared distances.

Every kernel exists twice, a numba ``@njit`` version and a pure-numpy version.
The public names dispatch to numba unless it is unavailable or disabled via
``CROSSVIEW_DISABLE_NUMBA``. Both variants are exported (``*_numpy`` /
``*_numba``) so they can be cross-checked and benchmarked.
"""
import numpy as np

from ._accel import HAVE_NUMBA, njit, prange


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


# --------------------------------------------------------------------------
# im2col / col2im
#
# cols has one row per output location ordered (n, oy, ox) and one column per
# kernel tap ordered (c, ky, kx), matching ``w.reshape(c_out, -1)``.
# --------------------------------------------------------------------------

def im2col_numpy(x, k, stride, pad):
    n, c, h, w = x.shape
    oh, ow = conv_out_size(h, k, stride, pad), conv_out_size(w, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, oh, ow, c, k, k), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            patch = xp[:, :, ky:ky + stride * oh:stride, kx:kx + stride * ow:stride]
            cols[:, :, :, :, ky, kx] = patch.transpose(0, 2, 3, 1)
    return cols.reshape(n * oh * ow, c * k * k)


def col2im_numpy(cols, x_shape, k, stride, pad):
    n, c, h, w = x_shape
    oh, ow = conv_out_size(h, k, stride, pad), conv_out_size(w, k, stride, pad)
    cols6 = cols.reshape(n, oh, ow, c, k, k)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ky in range(k):
        for kx in range(k):
            xp[:, :, ky:ky + stride * oh:stride, kx:kx + stride * ow:stride] += \
                cols6[:, :, :, :, ky, kx].transpose(0, 3, 1, 2)
    return xp[:, :, pad:pad + h, pad:pad + w]


@njit(cache=True, parallel=True)
def _im2col_nb(x, k, stride, pad, oh, ow):
    n, c, h, w = x.shape
    cols = np.zeros((n * oh * ow, c * k * k), dtype=x.dtype)
    for i in prange(n):
        for oy in range(oh):
            for ox in range(ow):
                row = (i * oh + oy) * ow + ox
                for ch in range(c):
                    for ky in range(k):
                        y = oy * stride + ky - pad
                        if y < 0 or y >= h:
                            continue
                        for kx in range(k):
                            xx = ox * stride + kx - pad
                            if xx < 0 or xx >= w:
                                continue
                            cols[row, (ch * k + ky) * k + kx] = x[i, ch, y, xx]
    return cols


@njit(cache=True, parallel=True)
def _col2im_nb(cols, n, c, h, w, k, stride, pad, oh, ow):
    out = np.zeros((n, c, h, w), dtype=cols.dtype)
    # parallel over samples only: each thread owns a disjoint slice of out
    for i in prange(n):
        for oy in range(oh):
            for ox in range(ow):
                row = (i * oh + oy) * ow + ox
                for ch in range(c):
                    for ky in range(k):
                        y = oy * stride + ky - pad
                        if y < 0 or y >= h:
                            continue
                        for kx in range(k):
                            xx = ox * stride + kx - pad
                            if xx < 0 or xx >= w:
                                continue
                            out[i, ch, y, xx] += cols[row, (ch * k + ky) * k + kx]
    return out


def im2col_numba(x, k, stride, pad):
    _, _, h, w = x.shape
    return _im2col_nb(np.ascontiguousarray(x), k, stride, pad,
                      conv_out_size(h, k, stride, pad), conv_out_size(w, k, stride, pad))


def col2im_numba(cols, x_shape, k, stride, pad):
    n, c, h, w = x_shape
    return _col2im_nb(np.ascontiguousarray(cols), n, c, h, w, k, stride, pad,
                      conv_out_size(h, k, stride, pad), conv_out_size(w, k, stride, pad))


# --------------------------------------------------------------------------
# bilinear warp under a 3x3 homography mapping output pixel (x, y, 1) to
# source coordinates; samples falling outside the source read ``fill``.
# --------------------------------------------------------------------------

def warp_numpy(img, src_from_dst, fill=0.0):
    c, h, w = img.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    m = src_from_dst
    den = m[2, 0] * xs + m[2, 1] * ys + m[2, 2]
    sx = (m[0, 0] * xs + m[0, 1] * ys + m[0, 2]) / den
    sy = (m[1, 0] * xs + m[1, 1] * ys + m[1, 2]) / den
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    out = np.zeros((c, h, w), dtype=np.float64)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            yy, xx = y0 + dy, x0 + dx
            inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            vals = img[:, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            vals = np.where(inside, vals, fill)
            out += (wy * wx) * vals
    return out.astype(img.dtype)


@njit(cache=True)
def _warp_nb(img, m, fill):
    c, h, w = img.shape
    out = np.zeros((c, h, w), dtype=np.float64)
    for y in range(h):
        for x in range(w):
            den = m[2, 0] * x + m[2, 1] * y + m[2, 2]
            sx = (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / den
            sy = (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / den
            x0 = int(np.floor(sx))
            y0 = int(np.floor(sy))
            fx = sx - x0
            fy = sy - y0
            for dy in range(2):
                wy = fy if dy == 1 else 1.0 - fy
                yy = y0 + dy
                for dx in range(2):
                    wx = fx if dx == 1 else 1.0 - fx
                    xx = x0 + dx
                    wgt = wy * wx
                    if yy >= 0 and yy < h and xx >= 0 and xx < w:
                        for ch in range(c):
                            out[ch, y, x] += wgt * img[ch, yy, xx]
                    else:
                        for ch in range(c):
                            out[ch, y, x] += wgt * fill
    return out


def warp_numba(img, src_from_dst, fill=0.0):
    out = _warp_nb(np.ascontiguousarray(img, dtype=np.float64),
                   np.ascontiguousarray(src_from_dst, dtype=np.float64), float(fill))
    return out.astype(img.dtype)


# --------------------------------------------------------------------------
# separable 3-tap blur with weights (side, centre, side), reflect borders
# --------------------------------------------------------------------------

def blur3_numpy(img, side, centre):
    p = np.pad(img, ((0, 0), (1, 1), (0, 0)), mode="reflect")
    img = side * p[:, :-2] + centre * p[:, 1:-1] + side * p[:, 2:]
    p = np.pad(img, ((0, 0), (0, 0), (1, 1)), mode="reflect")
    return side * p[:, :, :-2] + centre * p[:, :, 1:-1] + side * p[:, :, 2:]


@njit(cache=True)
def _blur3_nb(img, side, centre):
    c, h, w = img.shape
    tmp = np.empty((c, h, w), dtype=np.float64)
    out = np.empty((c, h, w), dtype=np.float64)
    for ch in range(c):
        for y in range(h):
            up = y - 1 if y > 0 else 1
            dn = y + 1 if y < h - 1 else h - 2
            for x in range(w):
                tmp[ch, y, x] = side * img[ch, up, x] + centre * img[ch, y, x] + side * img[ch, dn, x]
        for y in range(h):
            for x in range(w):
                lf = x - 1 if x > 0 else 1
                rt = x + 1 if x < w - 1 else w - 2
                out[ch, y, x] = side * tmp[ch, y, lf] + centre * tmp[ch, y, x] + side * tmp[ch, y, rt]
    return out


def blur3_numba(img, side, centre):
    return _blur3_nb(np.ascontiguousarray(img, dtype=np.float64), float(side), float(centre)).astype(img.dtype)


# --------------------------------------------------------------------------
# squared Euclidean distances between rows of x (n, d) and rows of y (m, d),
# computed as explicit sums of squared differences (no expansion trick, so
# exact ties stay exact).
# --------------------------------------------------------------------------

def sq_dists_numpy(x, y):
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("nmd,nmd->nm", diff, diff)


@njit(cache=True, parallel=True)
def _sq_dists_nb(x, y):
    n, d = x.shape
    m = y.shape[0]
    out = np.empty((n, m), dtype=np.float64)
    for i in prange(n):
        for j in range(m):
            s = 0.0
            for t in range(d):
                diff = x[i, t] - y[j, t]
                s += diff * diff
            out[i, j] = s
    return out


def sq_dists_numba(x, y):
    return _sq_dists_nb(np.ascontiguousarray(x, dtype=np.float64),
                        np.ascontiguousarray(y, dtype=np.float64))


if HAVE_NUMBA:
    im2col, col2im, warp, blur3, sq_dists = im2col_numba, col2im_numba, warp_numba, blur3_numba, sq_dists_numba
else:
    im2col, col2im, warp, blur3, sq_dists = im2col_numpy, col2im_numpy, warp_numpy, blur3_numpy, sq_dists_numpy
