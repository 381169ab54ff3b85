"""Pure-numpy implementation of the selection kernels.

Must agree with ``_core.pyx`` on semantics; results may differ in the last
ulp of feature distances because of summation order.
"""
import numpy as np

NAME = "python"

_CHUNK = 8192


def combined_row(s, image, centers, feats, p, out):
    """Write the normalized combined distance from region ``s`` to every region into ``out``."""
    out[:] = 0.0
    n = image.shape[0]
    if p.lambda_f > 0 and p.feat_div > 0:
        ref = feats[s]
        for lo in range(0, n, _CHUNK):
            diff = feats[lo:lo + _CHUNK] - ref
            df = np.sqrt(np.einsum("ij,ij->i", diff, diff))
            out[lo:lo + _CHUNK] += p.lambda_f * np.minimum(df / p.feat_div, p.f_cap)
    if p.lambda_s > 0 and p.spat_div > 0:
        delta = np.abs(centers - centers[s])
        if p.p_code == 0:
            gap = np.maximum(delta[:, 0], delta[:, 1])
        elif p.p_code == 1:
            gap = delta[:, 0] + delta[:, 1]
        else:
            gap = np.sqrt(delta[:, 0] * delta[:, 0] + delta[:, 1] * delta[:, 1])
        same = image == image[s]
        if p.linear:
            ds = np.where(same, gap, p.cross)
        else:
            ds = np.where(same, np.where(gap <= p.tau, p.a, p.b), p.c)
        out += p.lambda_s * ds / p.spat_div
    out[s] = 0.0
    return out


def update_min_cache(cache, s, image, centers, feats, p, work):
    combined_row(s, image, centers, feats, p, work)
    np.minimum(cache, work, out=cache)


def masked_argmax(lambda_u, u, cache, available):
    """Index of the largest ``lambda_u*u + cache`` among available regions (first on ties), -1 if none."""
    phi = lambda_u * u + cache
    phi = np.where(available, phi, -np.inf)
    i = int(np.argmax(phi))
    if not available[i]:
        return -1
    return i
