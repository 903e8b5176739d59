# src/services/accel.py
"""Optional numba acceleration for the per-pixel loops.

Without numba the kernels run as plain Python, which is slow but exact.
"""
import numpy as np


def _noop_jit(*args, **kwargs):
    """A decorator that does nothing"""
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def _have_numba():
    try:
        import numba  # noqa: F401

        return True
    except ImportError:
        return False


# True if importing numba succeeded
HAVE_NUMBA = _have_numba()

if HAVE_NUMBA:
    from numba import njit
else:
    njit = _noop_jit


@njit(cache=True)
def convolve_direct(data, weights):
    """Brute-force 2-D convolution with edge replication (reference implementation)"""
    h, w = data.shape
    r = weights.shape[0] // 2
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-r, r + 1):
                yy = min(max(y - dy, 0), h - 1)
                for dx in range(-r, r + 1):
                    xx = min(max(x - dx, 0), w - 1)
                    acc += data[yy, xx] * weights[dy + r, dx + r]
            out[y, x] = acc
    return out


@njit(cache=True)
def accumulate_trilinear(rows, cols, obins, weights, n_cells, n_bins):
    """Spread each sample over the 2x2 neighbouring cells and 2 neighbouring orientation bins"""
    hist = np.zeros((n_cells + 2, n_cells + 2, n_bins))
    for i in range(rows.shape[0]):
        r0 = int(np.floor(rows[i]))
        c0 = int(np.floor(cols[i]))
        o0 = int(np.floor(obins[i]))
        fr = rows[i] - r0
        fc = cols[i] - c0
        fo = obins[i] - o0
        for dr in range(2):
            wr = fr if dr == 1 else 1.0 - fr
            for dc in range(2):
                wc = fc if dc == 1 else 1.0 - fc
                for do in range(2):
                    wo = fo if do == 1 else 1.0 - fo
                    hist[r0 + dr + 1, c0 + dc + 1, (o0 + do) % n_bins] += weights[i] * wr * wc * wo
    # drop the padding ring
    return hist[1:-1, 1:-1, :]
