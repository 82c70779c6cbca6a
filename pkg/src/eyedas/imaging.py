"""Low-level image kernels shared by all experts.

Conventions: images are numpy float64 arrays with intensities in [0, 1],
shaped (H, W) for grayscale and (H, W, 3) for RGB.  Scalar maps are (H, W)
arrays in [0, 1].  Every function here is a pure, deterministic function of
its inputs.
"""

from __future__ import annotations

import numpy as np
import scipy.fft
import scipy.ndimage

# Grayscale conversion weights (ITU-R BT.601 luma).
_GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])

# SSIM reference configuration: 11x11 Gaussian window, sigma 1.5,
# stabilizers K1=0.01, K2=0.03 on dynamic range 1.0.
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T
_LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])

# Block size for the DCT-based blur map and the coefficient index-sum cutoff
# separating the high-frequency corner.
BLUR_BLOCK = 8
_HF_CUTOFF = 8

# k-means settings: deterministic farthest-pair init (exact up to this many
# pixels, strided sample beyond), bounded Lloyd iterations.
KMEANS_EXACT_INIT_LIMIT = 4096
_KMEANS_INIT_SAMPLE = 512
KMEANS_MAX_ITER = 25
KMEANS_TOL = 1e-4


def check_image(img: np.ndarray, min_side: int = 8) -> np.ndarray:
    """Validate an image array: shape, channel count, intensity range."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        pass
    elif img.ndim == 3 and img.shape[2] == 3:
        pass
    else:
        raise ValueError(f"expected (H, W) or (H, W, 3) image, got shape {img.shape}")
    h, w = img.shape[:2]
    if h < min_side or w < min_side:
        raise ValueError(f"image {h}x{w} smaller than minimum {min_side}x{min_side}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image intensities must lie in [0, 1]")
    return img


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Convert an RGB image to grayscale via 0.299R + 0.587G + 0.114B."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("to_grayscale requires an (H, W, 3) RGB image")
    return img @ _GRAY_WEIGHTS


def _gaussian_window_1d(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(r**2) / (2.0 * sigma**2))
    return w / w.sum()


_SSIM_W1D = _gaussian_window_1d(SSIM_WINDOW, SSIM_SIGMA)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity between two same-shape grayscale images.

    Uses the reference configuration: Gaussian-weighted 11x11 windows
    (sigma 1.5), C1=(0.01)^2 and C2=(0.03)^2 for dynamic range 1.0, averaged
    over all valid window positions.  Result lies in [-1, 1]; symmetric in
    its arguments; ssim(x, x) == 1.0 exactly.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError("ssim operates on 2-D grayscale images or scalar maps")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")

    # one batched separable pass over (a, b, a^2, b^2, ab)
    half = SSIM_WINDOW // 2
    stack = np.stack([a, b, a * a, b * b, a * b])
    y = scipy.ndimage.correlate1d(stack, _SSIM_W1D, axis=1, mode="constant")
    y = scipy.ndimage.correlate1d(y, _SSIM_W1D, axis=2, mode="constant")
    mu_a, mu_b, m_aa, m_bb, m_ab = y[:, half:-half, half:-half]
    var_a = m_aa - mu_a * mu_a
    var_b = m_bb - mu_b * mu_b
    cov = m_ab - mu_a * mu_b

    num = (2.0 * mu_a * mu_b + _SSIM_C1) * (2.0 * cov + _SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + _SSIM_C1) * (var_a + var_b + _SSIM_C2)
    return float(np.mean(num / den))


def _minmax_normalize(m: np.ndarray) -> np.ndarray:
    lo = m.min()
    hi = m.max()
    if hi - lo <= 0.0:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def blur_map(img: np.ndarray) -> np.ndarray:
    """Per-block high-frequency energy estimate of a grayscale image.

    The image is edge-padded to a multiple of 8, split into 8x8 blocks, and
    each block's orthonormal 2-D DCT is taken.  A block's value is the
    fraction of total coefficient magnitude held by coefficients with index
    sum >= 8; the value is broadcast to the block's pixels and the map is
    min-max normalized to [0, 1].  Higher means sharper.  A degenerate
    (constant) image yields an all-zero map.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("blur_map operates on grayscale images")
    h, w = img.shape
    ph = (-h) % BLUR_BLOCK
    pw = (-w) % BLUR_BLOCK
    padded = np.pad(img, ((0, ph), (0, pw)), mode="edge")
    hb = padded.shape[0] // BLUR_BLOCK
    wb = padded.shape[1] // BLUR_BLOCK

    blocks = padded.reshape(hb, BLUR_BLOCK, wb, BLUR_BLOCK).transpose(0, 2, 1, 3)
    coeffs = scipy.fft.dctn(blocks, type=2, norm="ortho", axes=(2, 3))
    mags = np.abs(coeffs)

    ii, jj = np.meshgrid(np.arange(BLUR_BLOCK), np.arange(BLUR_BLOCK), indexing="ij")
    hf_mask = (ii + jj) >= _HF_CUTOFF
    total = mags.sum(axis=(2, 3))
    high = (mags * hf_mask).sum(axis=(2, 3))
    frac = np.where(total > 0.0, high / np.maximum(total, 1e-300), 0.0)

    full = np.repeat(np.repeat(frac, BLUR_BLOCK, axis=0), BLUR_BLOCK, axis=1)
    return _minmax_normalize(full[:h, :w])


def sharpness(img: np.ndarray) -> float:
    """Variance of the 3x3 Laplacian response over all interior pixels."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("sharpness operates on grayscale images")
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError("image must be at least 3x3")
    resp = scipy.ndimage.correlate(img, _LAPLACIAN, mode="constant")[1:-1, 1:-1]
    return float(np.var(resp))


def edge_map(img: np.ndarray) -> np.ndarray:
    """Sobel gradient-magnitude map, min-max normalized to [0, 1].

    Border pixels use replicated-edge convolution.  A constant image yields
    an all-zero map.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("edge_map operates on grayscale images")
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError("image must be at least 3x3")
    gx = scipy.ndimage.correlate(img, _SOBEL_X, mode="nearest")
    gy = scipy.ndimage.correlate(img, _SOBEL_Y, mode="nearest")
    mag = np.sqrt(gx * gx + gy * gy)
    return np.clip(_minmax_normalize(mag), 0.0, 1.0)


def _farthest_pair(pixels: np.ndarray) -> tuple[int, int]:
    # Max-distance pair by chunked squared-distance scan; first maximizing
    # pair in scan order wins, which keeps the result deterministic.
    n = pixels.shape[0]
    sq = np.einsum("ij,ij->i", pixels, pixels)
    best = -1.0
    best_pair = (0, 0)
    chunk = 512
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d = sq[start:stop, None] + sq[None, :] - 2.0 * (pixels[start:stop] @ pixels.T)
        k = int(np.argmax(d))
        i, j = divmod(k, n)
        if d[i, j] > best:
            best = float(d[i, j])
            best_pair = (start + i, j)
    return best_pair


def dominant_cluster_fraction(img: np.ndarray, k: int = 2) -> float:
    """Fraction of pixels in the largest k-means color cluster.

    Runs Lloyd's algorithm on the RGB pixel vectors with a deterministic
    initialization: the two seed centroids are the pair of pixels farthest
    apart in RGB distance (computed exactly for images up to 4096 pixels,
    over an evenly strided sample beyond that); for k > 2 further seeds are
    chosen farthest-first.  Iteration stops when no centroid moves more than
    1e-4 or after 25 rounds.  An image with fewer than k distinct colors
    returns 1.0.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("dominant_cluster_fraction requires an RGB image")
    pixels = img.reshape(-1, 3)
    n = pixels.shape[0]

    if n <= KMEANS_EXACT_INIT_LIMIT:
        sample = pixels
    else:
        idx = np.unique(np.linspace(0, n - 1, _KMEANS_INIT_SAMPLE).astype(np.intp))
        sample = pixels[idx]

    i0, j0 = _farthest_pair(sample)
    if not np.any(sample[i0] != sample[j0]):
        # All sampled colors identical: degenerate clustering.
        return 1.0
    if k > 2:
        distinct = np.unique(pixels, axis=0)
        if distinct.shape[0] < k:
            return 1.0

    centroids = [sample[i0], sample[j0]]
    for _ in range(k - 2):
        d = np.min(
            [np.sum((sample - c) ** 2, axis=1) for c in centroids], axis=0
        )
        centroids.append(sample[int(np.argmax(d))])
    centroids = np.array(centroids, dtype=np.float64)

    if k == 2:
        counts = _lloyd_two(pixels, centroids[0], centroids[1])
    else:
        counts = _lloyd_generic(pixels, centroids, k)
    return float(counts.max() / n)


def _lloyd_two(pixels: np.ndarray, c0: np.ndarray, c1: np.ndarray) -> np.ndarray:
    # For k=2 the nearest-centroid rule reduces to thresholding one
    # projection: x closer to c1 iff x . (c0 - c1) < (|c0|^2 - |c1|^2) / 2,
    # ties going to cluster 0 (matching argmin).
    n = pixels.shape[0]
    total = pixels.sum(axis=0)
    assign1 = np.zeros(n, dtype=bool)
    for _ in range(KMEANS_MAX_ITER):
        w = c0 - c1
        rhs = 0.5 * (c0 @ c0 - c1 @ c1)
        assign1 = (pixels @ w) < rhs
        n1 = int(assign1.sum())
        if n1 == 0 or n1 == n:
            break  # one cluster emptied; nothing can move anymore
        s1 = assign1.astype(np.float64) @ pixels
        new1 = s1 / n1
        new0 = (total - s1) / (n - n1)
        moved = max(
            float(np.linalg.norm(new0 - c0)), float(np.linalg.norm(new1 - c1))
        )
        c0, c1 = new0, new1
        if moved < KMEANS_TOL:
            break
    n1 = int(assign1.sum())
    return np.array([pixels.shape[0] - n1, n1])


def _lloyd_generic(pixels: np.ndarray, centroids: np.ndarray, k: int) -> np.ndarray:
    n = pixels.shape[0]
    assign = np.zeros(n, dtype=np.intp)
    for _ in range(KMEANS_MAX_ITER):
        d = np.sum((pixels[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        assign = np.argmin(d, axis=1)
        moved = 0.0
        for c in range(k):
            members = pixels[assign == c]
            if members.shape[0] == 0:
                continue  # empty cluster keeps its centroid
            new = members.mean(axis=0)
            moved = max(moved, float(np.linalg.norm(new - centroids[c])))
            centroids[c] = new
        if moved < KMEANS_TOL:
            break
    return np.bincount(assign, minlength=k)


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate an image about its center by 90..180 degrees.

    Bilinear interpolation, output dimensions unchanged, out-of-frame pixels
    filled by edge replication.
    """
    if not 90.0 <= degrees <= 180.0:
        raise ValueError("rotation degrees must lie in [90, 180]")
    img = np.asarray(img, dtype=np.float64)
    out = scipy.ndimage.rotate(
        img, degrees, axes=(1, 0), reshape=False, order=1, mode="nearest"
    )
    return np.clip(out, 0.0, 1.0)


def resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel-centered sampling."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()

    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).reshape(-1, 1)
    wx = (xs - x0).reshape(1, -1)
    if img.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]

    top = img[y0][:, x0] * (1.0 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1.0 - wx) + img[y1][:, x1] * wx
    return top * (1.0 - wy) + bot * wy
