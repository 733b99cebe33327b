"""Independent reference computations used only by the test suite."""

import math

import numpy as np
from scipy import integrate


def sgm_rdp_quadrature(q, sigma, alpha):
    """Renyi divergence D_alpha((1-q)N(0,s^2) + qN(1,s^2) || N(0,s^2)) by quadrature.

    Integrates A - 1 = E_{z~N(0,s^2)}[(1 - q + q exp((2z-1)/(2s^2)))^alpha - 1]
    so tiny divergences keep full relative precision.
    """

    def log_ratio(z):
        # log of the mixture-to-base density ratio
        return math.log1p(q * math.expm1((2 * z - 1) / (2 * sigma**2)))

    def log_weight(z):
        return -z * z / (2 * sigma**2) - 0.5 * math.log(2 * math.pi * sigma**2)

    # peak of log_weight + alpha * log_ratio, located on a coarse grid
    grid = np.linspace(-40 * sigma, 40 * sigma + alpha, 20001)
    vals = (-grid * grid / (2 * sigma**2)
            + alpha * np.log1p(q * np.expm1((2 * grid - 1) / (2 * sigma**2))))
    peak = float(grid[int(np.argmax(vals))])
    shift = max(0.0, log_weight(peak) + alpha * log_ratio(peak))

    def integrand(z):
        lr = alpha * log_ratio(z)
        lw = log_weight(z) - shift
        if lr < 1:
            return math.exp(lw) * math.expm1(lr)
        return math.exp(lw + lr) - math.exp(lw)

    pts = sorted({0.0, 0.5, peak})
    lo, hi = min(pts) - 40 * sigma, max(pts) + 40 * sigma
    total, _ = integrate.quad(integrand, lo, hi, points=pts, epsabs=0, epsrel=1e-12, limit=500)
    # A = 1 + total * exp(shift)
    if shift == 0.0:
        log_a = math.log1p(total)
    else:
        log_a = math.log(math.exp(-shift) + total) + shift
    return log_a / (alpha - 1)


def central_difference(f, x, h=1e-6, max_coords=None, seed=0):
    """Gradient of scalar f at array x by central differences (x restored).

    With ``max_coords`` only a random subset of entries is probed; the rest are
    NaN and ignored by :func:`scaled_error`.
    """
    g = np.zeros_like(x, dtype=np.float64)
    coords = list(np.ndindex(x.shape))
    if max_coords is not None and len(coords) > max_coords:
        g[:] = np.nan
        pick = np.random.default_rng(seed).choice(len(coords), max_coords, replace=False)
        coords = [coords[i] for i in np.sort(pick)]
    for idx in coords:
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def scaled_error(analytic, numeric):
    """max |a - n| over all probed entries, relative to max |n| over them."""
    a = np.concatenate([np.ravel(v) for v in analytic])
    n = np.concatenate([np.ravel(v) for v in numeric])
    probed = ~np.isnan(n)
    a, n = a[probed], n[probed]
    return float(np.abs(a - n).max() / max(np.abs(n).max(), 1e-300))
