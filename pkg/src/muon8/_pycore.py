"""Pure-Python/numpy fallback for the kernels in ``_core.pyx``.

Same signatures and same arithmetic where it matters for determinism
(the quantizer produces identical codes to the compiled path). Matmul and
the Jacobi inner products go through numpy, so they agree with the
compiled kernels to rounding, not bit-for-bit.
"""
import math

import numpy as np

BACKEND = "python"


def matmul(a, b):
    return np.ascontiguousarray(a @ b)


def jacobi_sweeps(w, v, tol, max_sweeps):
    m, n = w.shape
    for sweep in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            wp = w[:, p]
            for q in range(p + 1, n):
                wq = w[:, q]
                alpha = float(wp @ wp)
                beta = float(wq @ wq)
                if alpha == 0.0 or beta == 0.0:
                    continue
                gamma = float(wp @ wq)
                if abs(gamma) <= tol * math.sqrt(alpha) * math.sqrt(beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + math.sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                new_p = c * wp - s * wq
                w[:, q] = s * wp + c * wq
                w[:, p] = new_p
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        if not rotated:
            return sweep + 1
    return -1


def _nearest(y, values, canon):
    hi = np.searchsorted(values, y, side="left")
    lo = np.clip(hi - 1, 0, len(values) - 1)
    hi_c = np.clip(hi, 0, len(values) - 1)
    take_lo = (hi == len(values)) | ((hi > 0) & ((y - values[lo]) <= (values[hi_c] - y)))
    idx = np.where(take_lo, lo, hi_c)
    return canon[idx].astype(np.uint8)


def quantize_blocks(x, block_size, values, canon, zero_index):
    n = x.shape[0]
    nblocks = -(-n // block_size)
    pad = nblocks * block_size - n
    absx = np.abs(x)
    if pad:
        absx = np.concatenate([absx, np.zeros(pad)])
    scales = absx.reshape(nblocks, block_size).max(axis=1)
    per_elem = np.repeat(scales, block_size)[:n]
    codes = np.full(n, zero_index, dtype=np.uint8)
    live = per_elem > 0.0
    if live.any():
        codes[live] = _nearest(x[live] / per_elem[live], values, canon)
    return codes, scales


def dequantize_blocks(codes, scales, block_size, values):
    per_elem = np.repeat(scales, block_size)[: codes.shape[0]]
    return per_elem * values[codes]
