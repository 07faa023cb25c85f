"""Independent reference implementations used as test oracles."""

import numpy as np


def reflect_index(i: int, n: int) -> int:
    """Mirror an out-of-range index into [0, n), repeating the edge sample."""
    i = i % (2 * n)
    return 2 * n - 1 - i if i >= n else i


def brute_force_blur(roi: np.ndarray, k: int) -> np.ndarray:
    """Direct 2-D convolution with a 2-D Gaussian window, independent of the separable code path."""
    h, w, _ = roi.shape
    r = (k - 1) // 2
    sigma = 0.3 * ((k - 1) / 2 - 1) + 0.8
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    weights = np.exp(-(dx**2 + dy**2) / (2 * sigma**2))
    weights /= weights.sum()
    rows = np.array([[reflect_index(y + oy, h) for y in range(h)] for oy in range(-r, r + 1)])
    cols = np.array([[reflect_index(x + ox, w) for x in range(w)] for ox in range(-r, r + 1)])
    out = np.zeros(roi.shape)
    src = roi.astype(np.float64)
    for a in range(k):
        for b in range(k):
            out += weights[a, b] * src[rows[a]][:, cols[b]]
    return np.floor(out + 0.5)


def block_average(roi: np.ndarray, by: int, bx: int) -> np.ndarray:
    h, w, c = roi.shape
    out = np.zeros((h // by, w // bx, c))
    for i in range(h // by):
        for j in range(w // bx):
            out[i, j] = roi[i * by : (i + 1) * by, j * bx : (j + 1) * bx].reshape(-1, c).mean(axis=0)
    return out


def bilinear_up(small: np.ndarray, h: int, w: int) -> np.ndarray:
    """Pixel-centre bilinear upsampling written per output pixel."""
    sh, sw, c = small.shape
    out = np.zeros((h, w, c))
    for y in range(h):
        fy = min(max((y + 0.5) * sh / h - 0.5, 0), sh - 1)
        y0 = int(fy)
        y1 = min(y0 + 1, sh - 1)
        for x in range(w):
            fx = min(max((x + 0.5) * sw / w - 0.5, 0), sw - 1)
            x0 = int(fx)
            x1 = min(x0 + 1, sw - 1)
            top = small[y0, x0] * (1 - (fx - x0)) + small[y0, x1] * (fx - x0)
            bot = small[y1, x0] * (1 - (fx - x0)) + small[y1, x1] * (fx - x0)
            out[y, x] = top * (1 - (fy - y0)) + bot * (fy - y0)
    return out
