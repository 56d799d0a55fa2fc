"""Reference implementations for the image-quality golden values.

Writes the fixture pair (16-bit PNGs) used by the Rust tests and prints
pixel-domain VIF, SSIM, NRMSE and MAE for it. VIF follows the common
four-scale pixel-domain formulation (valid-mode Gaussian filtering,
sigma_n^2 = 2 on the 0..255 scale); SSIM comes from scikit-image.

    python3 tools/vifp_reference.py [--write]
"""

import sys
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter
from scipy.signal import correlate2d
from skimage import data
from skimage.metrics import structural_similarity

FIXTURES = Path(__file__).resolve().parent.parent / "crates" / "core" / "tests" / "fixtures"
EPS = 1e-10


def gaussian_window(n, sigma):
    ax = np.arange(n) - (n - 1) / 2.0
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def vifp(ref, dist, sigma_nsq=2.0):
    ref = ref * 255.0
    dist = dist * 255.0
    num = den = 0.0
    for scale in range(1, 5):
        n = 2 ** (4 - scale + 1) + 1
        win = gaussian_window(n, n / 5.0)
        if scale > 1:
            ref = correlate2d(ref, win, mode="valid")[::2, ::2]
            dist = correlate2d(dist, win, mode="valid")[::2, ::2]
        mu1 = correlate2d(ref, win, mode="valid")
        mu2 = correlate2d(dist, win, mode="valid")
        s1 = correlate2d(ref * ref, win, mode="valid") - mu1 * mu1
        s2 = correlate2d(dist * dist, win, mode="valid") - mu2 * mu2
        s12 = correlate2d(ref * dist, win, mode="valid") - mu1 * mu2
        s1[s1 < 0] = 0
        s2[s2 < 0] = 0
        g = s12 / (s1 + EPS)
        sv = s2 - g * s12
        g[s1 < EPS] = 0
        sv[s1 < EPS] = s2[s1 < EPS]
        s1[s1 < EPS] = 0
        g[s2 < EPS] = 0
        sv[s2 < EPS] = 0
        sv[g < 0] = s2[g < 0]
        g[g < 0] = 0
        sv[sv <= EPS] = EPS
        num += np.sum(np.log10(1.0 + g * g * s1 / (sv + sigma_nsq)))
        den += np.sum(np.log10(1.0 + s1 / sigma_nsq))
    return num / den


def quantise(x):
    return np.round(np.clip(x, 0.0, 1.0) * 65535.0).astype(np.uint16)


def make_pair():
    ref = data.camera()[128:384:2, 128:384:2].astype(np.float64) / 255.0
    dist = gaussian_filter(ref, 1.0, mode="nearest") * 0.95 + 0.02
    return quantise(ref), quantise(dist)


def load(name):
    return np.asarray(Image.open(FIXTURES / name), dtype=np.float64) / 65535.0


if __name__ == "__main__":
    if "--write" in sys.argv:
        FIXTURES.mkdir(parents=True, exist_ok=True)
        for name, img in zip(("quality_ref.png", "quality_dist.png"), make_pair()):
            Image.fromarray(img, mode="I;16").save(FIXTURES / name)
    ref, dist = load("quality_ref.png"), load("quality_dist.png")
    ssim = structural_similarity(
        ref, dist, gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=1.0
    )
    print(f"shape {ref.shape}")
    print(f"vif {vifp(ref, dist):.15f}")
    print(f"vif_identity {vifp(ref, ref):.15f}")
    print(f"ssim {ssim:.15f}")
    print(f"nrmse {np.sqrt(np.mean((ref - dist) ** 2)) / ref.mean():.15f}")
    print(f"mae {np.mean(np.abs(ref - dist)):.15f}")
