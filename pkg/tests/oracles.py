"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written with plain loops or one-line
numpy, sharing no code with the package kernels.
"""

import itertools
import math

import numpy as np

MISSING = 1
DOSE = {0: 0.0, 2: 1.0, 3: 2.0}


def reference_bed_bytes(codes) -> bytes:
    """Serialize (n, p) 2-bit codes to BED bytes, bit by bit."""
    codes = np.asarray(codes)
    n, p = codes.shape
    out = bytearray([0x6C, 0x1B, 0x01])
    for j in range(p):
        for base in range(0, n, 4):
            byte = 0
            for slot, i in enumerate(range(base, min(base + 4, n))):
                byte |= (int(codes[i, j]) & 3) << (2 * slot)
            out.append(byte)
    return bytes(out)


def reference_column_stats(codes):
    """Per-column mean and inverse sd (ddof=1) over non-missing entries."""
    codes = np.asarray(codes)
    n, p = codes.shape
    u = np.zeros(p)
    v = np.zeros(p)
    for j in range(p):
        obs = [DOSE[int(c)] for c in codes[:, j] if int(c) != MISSING]
        if obs:
            u[j] = sum(obs) / len(obs)
        if len(obs) >= 2:
            var = sum((x - u[j]) ** 2 for x in obs) / (len(obs) - 1)
            if var > 0:
                v[j] = 1.0 / math.sqrt(var)
    return u, v


def reference_standardized(codes):
    """Dense standardized matrix with missing entries imputed to zero."""
    codes = np.asarray(codes)
    n, p = codes.shape
    u, v = reference_column_stats(codes)
    out = np.zeros((n, p))
    for j in range(p):
        for i in range(n):
            c = int(codes[i, j])
            if c != MISSING:
                out[i, j] = (DOSE[c] - u[j]) * v[j]
    return out


def reference_ax(codes, support, weights):
    mat = reference_standardized(codes)
    out = np.zeros(mat.shape[0])
    for j, w in zip(support, weights):
        out += w * mat[:, j]
    return out


def reference_aty(codes, r):
    mat = reference_standardized(codes)
    return mat.T @ np.asarray(r, dtype=float)


def best_ksparse_distance(vec, k) -> float:
    """Exhaustive minimum of ||vec - z|| over all k-sparse z (small P only)."""
    vec = np.asarray(vec, dtype=float)
    best = math.inf
    for keep in itertools.combinations(range(vec.size), min(k, vec.size)):
        z = np.zeros_like(vec)
        z[list(keep)] = vec[list(keep)]
        best = min(best, float(np.linalg.norm(vec - z)))
    return best


def normal_equations(a, y):
    """Textbook least squares through the normal equations."""
    a = np.asarray(a, dtype=float)
    return np.linalg.solve(a.T @ a, a.T @ np.asarray(y, dtype=float))


def random_codes(rng, n, p, missing_rate=0.1):
    """Random genotype codes with the given missing rate."""
    freq = rng.uniform(0.05, 0.5, size=p)
    dosage = rng.binomial(2, freq, size=(n, p))
    codes = np.array([0, 2, 3], dtype=np.uint8)[dosage]
    if missing_rate > 0:
        codes[rng.random((n, p)) < missing_rate] = MISSING
    return codes
