"""Slow, independent reference implementations used to check the package.

Everything here is written from the definitions with explicit loops and
shares no code with ``e2evarnet``.
"""

import math

import numpy as np


def dft2_centered(img):
    """Centered orthonormal 2D DFT by explicit DFT matrices."""
    h, w = img.shape

    def mat(n):
        # centered indices: k, x in [-n//2, n - n//2)
        idx = np.arange(n) - n // 2
        return np.exp(-2j * np.pi * np.outer(idx, idx) / n) / math.sqrt(n)

    return mat(h) @ img @ mat(w).T


def rss_loop(coil_imgs):
    n, h, w = coil_imgs.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            out[y, x] = math.sqrt(sum(abs(coil_imgs[i, y, x]) ** 2 for i in range(n)))
    return out


def dss_loop(raw, eps=1e-12):
    n, h, w = raw.shape
    out = np.zeros_like(raw)
    for y in range(h):
        for x in range(w):
            denom = math.sqrt(sum(abs(raw[i, y, x]) ** 2 for i in range(n)) + eps)
            for i in range(n):
                out[i, y, x] = raw[i, y, x] / denom
    return out


def ssim_loop(x, y, data_range, win=7, k1=0.01, k2=0.03):
    """SSIM from the textbook definition: 7x7 windows, sample statistics."""
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    h, w = x.shape
    n = win * win
    vals = []
    for i in range(h - win + 1):
        for j in range(w - win + 1):
            a = [float(v) for v in x[i : i + win, j : j + win].ravel()]
            b = [float(v) for v in y[i : i + win, j : j + win].ravel()]
            ma = sum(a) / n
            mb = sum(b) / n
            va = sum((p - ma) ** 2 for p in a) / (n - 1)
            vb = sum((q - mb) ** 2 for q in b) / (n - 1)
            cov = sum((p - ma) * (q - mb) for p, q in zip(a, b)) / (n - 1)
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def nmse_loop(pred, target):
    num = sum((float(p) - float(t)) ** 2 for p, t in zip(pred.ravel(), target.ravel()))
    den = sum(float(t) ** 2 for t in target.ravel())
    return num / den


def psnr_loop(pred, target, data_range):
    mse = sum((float(p) - float(t)) ** 2 for p, t in zip(pred.ravel(), target.ravel())) / pred.size
    return 10 * math.log10(data_range**2 / mse)


def equispaced_count(width, r, l, offset):
    """Number of sampled columns: |centered block of l  U  {j : j = offset mod r}|."""
    begin = (width - l) // 2
    cols = set(range(begin, begin + l))
    cols |= {j for j in range(width) if j % r == offset}
    return len(cols)


def central_difference(f, theta, h):
    """Derivative of scalar ``f`` at scalar ``theta`` by a central difference."""
    return (f(theta + h) - f(theta - h)) / (2 * h)
