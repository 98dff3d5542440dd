"""Linear algebra over 2-bit packed genotype matrices.

Genotypes live in the PLINK 2-bit encoding, four samples per byte, and are
kept packed in both orientations: variant-major (columns of the design
matrix contiguous) and sample-major (rows contiguous). Standardization is
applied on the fly from cached per-column means ``u`` and inverse standard
deviations ``v``; only the active submatrix of a sparse model is ever
expanded to dense floating point.

All kernels partition work into fixed-size chunks with disjoint output
slices, so results are bitwise identical for any worker thread count.
"""

from __future__ import annotations

import os

os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import dataclasses
import threading
from dataclasses import dataclass

import numba
import numpy as np
from numba import njit, prange

# 2-bit genotype codes. The column value counts copies of the A2 allele.
CODE_HOM_A1 = 0  # dosage 0
CODE_MISSING = 1
CODE_HET = 2  # dosage 1
CODE_HOM_A2 = 3  # dosage 2

_CODE_DOSE = np.array([0.0, 0.0, 1.0, 2.0])


def _byte_tables():
    dose = np.zeros((256, 4))
    miss = np.zeros((256, 4))
    obs = np.zeros((256, 4))
    for byte in range(256):
        for slot in range(4):
            code = (byte >> (2 * slot)) & 0b11
            if code == CODE_MISSING:
                miss[byte, slot] = 1.0
            else:
                obs[byte, slot] = 1.0
                dose[byte, slot] = _CODE_DOSE[code]
    return dose, miss, obs


# Per-byte expansion tables: 4 dosages (missing as 0), missing mask, observed mask.
_BYTE_DOSE, _BYTE_MISS, _BYTE_OBS = _byte_tables()

_COL_CHUNK = 256  # columns per work item in column sweeps
_ROW_CHUNK = 1024  # samples per work item; must stay a multiple of 4

# The workqueue threading layer aborts on concurrent entry into parallel
# regions, so kernel launches are serialized; results are unaffected and
# callers may share one matrix across threads.
_KERNEL_LOCK = threading.Lock()


def set_worker_threads(count: int) -> int:
    """Set the kernel thread count, clamped to the available pool.

    Returns the effective count. Results do not depend on this setting;
    only wall time does.
    """
    limit = numba.config.NUMBA_NUM_THREADS
    effective = max(1, min(int(count), limit))
    numba.set_num_threads(effective)
    return effective


def pack_codes(codes: np.ndarray) -> np.ndarray:
    """Pack a (rows, cols) array of 2-bit codes into (rows, ceil(cols/4)) bytes.

    Entries fill each byte from the least-significant bit pair upward; the
    trailing byte of each row is padded with zero bits.
    """
    codes = np.ascontiguousarray(codes, dtype=np.uint8)
    rows, cols = codes.shape
    pad = (-cols) % 4
    if pad:
        codes = np.concatenate([codes, np.zeros((rows, pad), np.uint8)], axis=1)
    q = codes.reshape(rows, (cols + pad) // 4, 4)
    packed = q[:, :, 0] | (q[:, :, 1] << 2) | (q[:, :, 2] << 4) | (q[:, :, 3] << 6)
    return np.ascontiguousarray(packed, dtype=np.uint8)


def unpack_codes(packed: np.ndarray, length: int) -> np.ndarray:
    """Inverse of :func:`pack_codes`; returns (rows, length) 2-bit codes."""
    packed = np.asarray(packed, dtype=np.uint8)
    rows, nb = packed.shape
    if length > 4 * nb:
        raise ValueError(f"cannot unpack {length} entries from {nb} bytes per row")
    out = np.empty((rows, 4 * nb), dtype=np.uint8)
    out[:, 0::4] = packed & 3
    out[:, 1::4] = (packed >> 2) & 3
    out[:, 2::4] = (packed >> 4) & 3
    out[:, 3::4] = (packed >> 6) & 3
    return np.ascontiguousarray(out[:, :length])


@njit(cache=True, parallel=True)
def _stats_kernel(data, n, u, v):  # pragma: no cover - compiled
    p = data.shape[0]
    for j in prange(p):
        row = data[j]
        cnt = 0.0
        s1 = 0.0
        s2 = 0.0
        nfull = n // 4
        for b in range(nfull):
            byte = row[b]
            for i in range(4):
                code = (byte >> (2 * i)) & 3
                if code != 1:
                    d = _CODE_DOSE[code]
                    cnt += 1.0
                    s1 += d
                    s2 += d * d
        rem = n - 4 * nfull
        if rem > 0:
            byte = row[nfull]
            for i in range(rem):
                code = (byte >> (2 * i)) & 3
                if code != 1:
                    d = _CODE_DOSE[code]
                    cnt += 1.0
                    s1 += d
                    s2 += d * d
        u[j] = s1 / cnt if cnt > 0.0 else 0.0
        if cnt >= 2.0:
            var = (s2 - s1 * s1 / cnt) / (cnt - 1.0)
            v[j] = 1.0 / np.sqrt(var) if var > 0.0 else 0.0
        else:
            v[j] = 0.0


@njit(cache=True, parallel=True)
def _aty_kernel(data, u, v, r_pad, sum_r, out):  # pragma: no cover - compiled
    p = data.shape[0]
    nb = data.shape[1]
    nchunk = (p + _COL_CHUNK - 1) // _COL_CHUNK
    for c in prange(nchunk):
        lo = c * _COL_CHUNK
        hi = min(lo + _COL_CHUNK, p)
        for j in range(lo, hi):
            row = data[j]
            t = 0.0
            m = 0.0
            for b in range(nb):
                byte = row[b]
                base = 4 * b
                t += (_BYTE_DOSE[byte, 0] * r_pad[base]
                      + _BYTE_DOSE[byte, 1] * r_pad[base + 1]
                      + _BYTE_DOSE[byte, 2] * r_pad[base + 2]
                      + _BYTE_DOSE[byte, 3] * r_pad[base + 3])
                m += (_BYTE_MISS[byte, 0] * r_pad[base]
                      + _BYTE_MISS[byte, 1] * r_pad[base + 1]
                      + _BYTE_MISS[byte, 2] * r_pad[base + 2]
                      + _BYTE_MISS[byte, 3] * r_pad[base + 3])
            out[j] = v[j] * (t - u[j] * (sum_r - m))


@njit(cache=True, parallel=True)
def _ax_cols_kernel(data, n, u, v, idx, w, out):  # pragma: no cover - compiled
    # Workers own disjoint sample ranges; the column sum order is fixed.
    nchunk = (n + _ROW_CHUNK - 1) // _ROW_CHUNK
    for c in prange(nchunk):
        s_lo = c * _ROW_CHUNK
        s_hi = min(s_lo + _ROW_CHUNK, n)
        b_lo = s_lo // 4
        b_last = (s_hi - 1) // 4
        for t in range(idx.shape[0]):
            j = idx[t]
            scale = w[t] * v[j]
            if scale == 0.0:
                continue
            shift = u[j] * scale
            row = data[j]
            for b in range(b_lo, b_last):
                byte = row[b]
                base = 4 * b
                out[base] += _BYTE_DOSE[byte, 0] * scale - _BYTE_OBS[byte, 0] * shift
                out[base + 1] += _BYTE_DOSE[byte, 1] * scale - _BYTE_OBS[byte, 1] * shift
                out[base + 2] += _BYTE_DOSE[byte, 2] * scale - _BYTE_OBS[byte, 2] * shift
                out[base + 3] += _BYTE_DOSE[byte, 3] * scale - _BYTE_OBS[byte, 3] * shift
            byte = row[b_last]
            base = 4 * b_last
            for i in range(s_hi - base):
                out[base + i] += _BYTE_DOSE[byte, i] * scale - _BYTE_OBS[byte, i] * shift


@njit(cache=True, parallel=True)
def _ax_rows_kernel(data_t, w_pad, uw_pad, out):  # pragma: no cover - compiled
    # Sample-major sweep; w_pad and uw_pad are zero on padding slots, and
    # padding codes decode as observed dosage 0, so the tail needs no guard.
    n = data_t.shape[0]
    nb = data_t.shape[1]
    for i in prange(n):
        row = data_t[i]
        acc = 0.0
        for b in range(nb):
            byte = row[b]
            base = 4 * b
            acc += (_BYTE_DOSE[byte, 0] * w_pad[base] - _BYTE_OBS[byte, 0] * uw_pad[base]
                    + _BYTE_DOSE[byte, 1] * w_pad[base + 1] - _BYTE_OBS[byte, 1] * uw_pad[base + 1]
                    + _BYTE_DOSE[byte, 2] * w_pad[base + 2] - _BYTE_OBS[byte, 2] * uw_pad[base + 2]
                    + _BYTE_DOSE[byte, 3] * w_pad[base + 3] - _BYTE_OBS[byte, 3] * uw_pad[base + 3])
        out[i] = acc


@njit(cache=True, parallel=True)
def _decompress_kernel(data, n, u, v, idx, out_t):  # pragma: no cover - compiled
    for t in prange(idx.shape[0]):
        j = idx[t]
        uj = u[j]
        vj = v[j]
        row = data[j]
        nfull = n // 4
        for b in range(nfull):
            byte = row[b]
            base = 4 * b
            out_t[t, base] = (_BYTE_DOSE[byte, 0] - uj) * vj * _BYTE_OBS[byte, 0]
            out_t[t, base + 1] = (_BYTE_DOSE[byte, 1] - uj) * vj * _BYTE_OBS[byte, 1]
            out_t[t, base + 2] = (_BYTE_DOSE[byte, 2] - uj) * vj * _BYTE_OBS[byte, 2]
            out_t[t, base + 3] = (_BYTE_DOSE[byte, 3] - uj) * vj * _BYTE_OBS[byte, 3]
        rem = n - 4 * nfull
        if rem > 0:
            byte = row[nfull]
            base = 4 * nfull
            for i in range(rem):
                out_t[t, base + i] = (_BYTE_DOSE[byte, i] - uj) * vj * _BYTE_OBS[byte, i]


def _packed_stats(data: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    p = data.shape[0]
    u = np.zeros(p)
    v = np.zeros(p)
    if p:
        with _KERNEL_LOCK:
            _stats_kernel(data, n, u, v)
    return u, v


@dataclass(frozen=True, eq=False)
class PackedGenotypeMatrix:
    """2-bit compressed genotype matrix with cached standardization stats.

    ``data`` holds the variant-major packing (one row per column of the
    design matrix), ``data_t`` the sample-major packing of the transpose.
    ``u``/``v`` are per-column means and inverse standard deviations over
    non-missing entries (``v = 0`` for monomorphic or all-missing columns,
    which makes the standardized column identically zero).
    """

    n: int
    p: int
    data: np.ndarray
    data_t: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @classmethod
    def from_codes(cls, codes: np.ndarray) -> "PackedGenotypeMatrix":
        """Build from an (n, p) array of 2-bit genotype codes."""
        codes = np.ascontiguousarray(codes, dtype=np.uint8)
        if codes.ndim != 2:
            raise ValueError("codes must be a 2-d array of samples x variants")
        if codes.size and codes.max() > 3:
            raise ValueError("genotype codes must lie in {0, 1, 2, 3}")
        n, p = codes.shape
        data = pack_codes(codes.T)
        data_t = pack_codes(codes)
        u, v = _packed_stats(data, n)
        return cls(n=n, p=p, data=data, data_t=data_t, u=u, v=v)

    @classmethod
    def from_bed_buffer(cls, data: np.ndarray, n_samples: int) -> "PackedGenotypeMatrix":
        """Build from a raw (p, ceil(n/4)) variant-major byte buffer.

        The buffer is kept verbatim (padding bits included) so that a
        write after a read is byte-identical to the source file.
        """
        data = np.ascontiguousarray(data, dtype=np.uint8)
        codes_t = unpack_codes(data, n_samples)
        data_t = pack_codes(codes_t.T)
        u, v = _packed_stats(data, n_samples)
        return cls(n=n_samples, p=data.shape[0], data=data, data_t=data_t, u=u, v=v)

    def to_codes(self) -> np.ndarray:
        """Decode to an (n, p) array of 2-bit codes."""
        return np.ascontiguousarray(unpack_codes(self.data, self.n).T)

    def to_dosage(self) -> np.ndarray:
        """Decode to an (n, p) float array of dosages with NaN for missing."""
        codes = self.to_codes()
        out = _CODE_DOSE[codes]
        out[codes == CODE_MISSING] = np.nan
        return out

    def subset_rows(self, rows: np.ndarray) -> "PackedGenotypeMatrix":
        """New matrix restricted to ``rows``; u and v are recomputed."""
        rows = np.asarray(rows, dtype=np.int64)
        return PackedGenotypeMatrix.from_codes(self.to_codes()[rows])

    def with_stats(self, u: np.ndarray, v: np.ndarray) -> "PackedGenotypeMatrix":
        """Same packed data standardized with externally supplied stats."""
        u = np.ascontiguousarray(u, dtype=np.float64)
        v = np.ascontiguousarray(v, dtype=np.float64)
        if u.shape != (self.p,) or v.shape != (self.p,):
            raise ValueError("stats vectors must have one entry per variant")
        return dataclasses.replace(self, u=u.copy(), v=v.copy())

    @property
    def nbytes_packed(self) -> int:
        return self.data.nbytes + self.data_t.nbytes

    def _check_index(self, idx: np.ndarray) -> np.ndarray:
        idx = np.ascontiguousarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.p):
            raise IndexError("variant index out of range")
        return idx

    def ax_columns(self, idx: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Standardized sparse product: sum of w[t] * standardized column idx[t]."""
        idx = self._check_index(idx)
        w = np.ascontiguousarray(w, dtype=np.float64)
        if w.shape != idx.shape:
            raise ValueError("index and weight vectors must align")
        out = np.zeros(self.n)
        if idx.size == 0 or self.n == 0:
            return out
        if 4 * idx.size >= self.p:
            # Dense enough that a sample-major sweep of the transpose wins.
            nbt = self.data_t.shape[1]
            w_pad = np.zeros(4 * nbt)
            uw_pad = np.zeros(4 * nbt)
            w_pad[idx] = w * self.v[idx]
            uw_pad[idx] = self.u[idx] * self.v[idx] * w
            with _KERNEL_LOCK:
                _ax_rows_kernel(self.data_t, w_pad, uw_pad, out)
        else:
            with _KERNEL_LOCK:
                _ax_cols_kernel(self.data, self.n, self.u, self.v, idx, w, out)
        return out

    def aty_genetic(self, r: np.ndarray) -> np.ndarray:
        """Standardized transposed product over every column."""
        r = np.ascontiguousarray(r, dtype=np.float64)
        if r.shape != (self.n,):
            raise ValueError(f"residual vector must have length {self.n}")
        if self.p == 0:
            return np.zeros(0)
        nb = self.data.shape[1]
        r_pad = np.zeros(4 * nb)
        r_pad[: self.n] = r
        out = np.empty(self.p)
        with _KERNEL_LOCK:
            _aty_kernel(self.data, self.u, self.v, r_pad, float(r.sum()), out)
        return out

    def decompress(self, idx: np.ndarray) -> np.ndarray:
        """Dense standardized (n, k) submatrix for the given columns."""
        idx = self._check_index(idx)
        out_t = np.zeros((idx.size, self.n))
        if idx.size and self.n:
            with _KERNEL_LOCK:
                _decompress_kernel(self.data, self.n, self.u, self.v, idx, out_t)
        return out_t.T


def column_stats(matrix: PackedGenotypeMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and inverse standard deviation over non-missing entries.

    Recomputed from the packed buffer; deterministic for any thread count.
    """
    if matrix.n < 2:
        raise ValueError("column statistics need at least two samples")
    return _packed_stats(matrix.data, matrix.n)


@dataclass(frozen=True, eq=False)
class DenseDesign:
    """Uncompressed, pre-standardized design matrix.

    Serves both as the floating-point comparison path for benchmarks and as
    the reference implementation the packed kernels are checked against.
    ``values`` is column-major; genetic columns have mean 0 and unit
    variance unless monomorphic (then identically zero).
    """

    values: np.ndarray
    labels: tuple | None = None

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_packed(cls, matrix: PackedGenotypeMatrix, dtype=np.float64) -> "DenseDesign":
        """Decode and standardize a packed matrix with plain dense arithmetic.

        Statistics are recomputed here rather than reusing the packed
        caches, so this path is an independent check of them.
        """
        dosage = matrix.to_dosage()
        observed = ~np.isnan(dosage)
        cnt = observed.sum(axis=0)
        filled = np.where(observed, dosage, 0.0)
        mean = np.divide(filled.sum(axis=0), cnt, out=np.zeros(matrix.p), where=cnt > 0)
        centered = np.where(observed, dosage - mean, 0.0)
        ss = (centered * centered).sum(axis=0)
        var = np.divide(ss, cnt - 1, out=np.zeros(matrix.p), where=cnt > 1)
        inv_sd = np.divide(1.0, np.sqrt(var), out=np.zeros(matrix.p), where=var > 0)
        values = centered * inv_sd
        return cls(values=np.asfortranarray(values, dtype=dtype))

    @classmethod
    def from_raw(cls, values: np.ndarray, standardize: bool = True,
                 labels: tuple | None = None) -> "DenseDesign":
        values = np.array(values, dtype=np.float64)
        if standardize:
            mean = values.mean(axis=0)
            sd = values.std(axis=0, ddof=1)
            inv = np.divide(1.0, sd, out=np.zeros_like(sd), where=sd > 0)
            values = (values - mean) * inv
        return cls(values=np.asfortranarray(values), labels=labels)

    def validate(self, atol_mean: float = 1e-10, atol_var: float = 1e-8) -> None:
        """Assert the standardization contract on every non-constant column.

        Holds for fully observed data; zero-imputed missing entries shrink
        the column variance below one.
        """
        live = np.any(self.values != 0, axis=0)
        if not live.any():
            return
        cols = self.values[:, live]
        if np.abs(cols.mean(axis=0)).max() > atol_mean:
            raise ValueError("design column mean exceeds tolerance")
        if np.abs(cols.var(axis=0, ddof=1) - 1.0).max() > atol_var:
            raise ValueError("design column variance differs from one")

    def subset_rows(self, rows: np.ndarray) -> "DenseDesign":
        return DenseDesign(values=np.asfortranarray(self.values[np.asarray(rows)]),
                           labels=self.labels)

    def ax_columns(self, idx: np.ndarray, w: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.p):
            raise IndexError("variant index out of range")
        if idx.size == 0:
            return np.zeros(self.n)
        return np.asarray(self.values[:, idx] @ np.asarray(w, dtype=self.values.dtype),
                          dtype=np.float64)

    def aty_genetic(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=self.values.dtype)
        if r.shape != (self.n,):
            raise ValueError(f"residual vector must have length {self.n}")
        return np.asarray(self.values.T @ r, dtype=np.float64)

    def decompress(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        return np.array(self.values[:, idx], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class CovariateBlock:
    """Dense nongenetic covariates, standardized once at load.

    The intercept column, when present, is all ones and is never rescaled.
    """

    values: np.ndarray
    labels: tuple

    @property
    def c(self) -> int:
        return self.values.shape[1]

    @classmethod
    def build(cls, raw: np.ndarray | None, n: int | None = None,
              labels: tuple | None = None, add_intercept: bool = True,
              standardize: bool = True) -> "CovariateBlock":
        cols = []
        names = []
        if add_intercept:
            if raw is None and n is None:
                raise ValueError("need a sample count to build an intercept column")
            rows = n if raw is None else np.asarray(raw).shape[0]
            cols.append(np.ones(rows))
            names.append("intercept")
        if raw is not None:
            raw = np.asarray(raw, dtype=np.float64)
            if raw.ndim == 1:
                raw = raw[:, None]
            for j in range(raw.shape[1]):
                col = raw[:, j].copy()
                if standardize:
                    sd = col.std(ddof=1) if col.size > 1 else 0.0
                    col = (col - col.mean()) / sd if sd > 0 else col - col.mean()
                cols.append(col)
                names.append(labels[j] if labels is not None else f"covar{j + 1}")
        if not cols:
            raise ValueError("covariate block needs an intercept or data columns")
        return cls(values=np.column_stack(cols), labels=tuple(names))

    def subset_rows(self, rows: np.ndarray) -> "CovariateBlock":
        return CovariateBlock(values=self.values[np.asarray(rows)], labels=self.labels)


@dataclass(frozen=True, eq=False)
class StandardizedView:
    """Uniform indexing over genetic predictors plus trailing covariates.

    Predictor indices below ``p`` address genotype columns; indices at and
    above ``p`` address covariate columns.
    """

    genotypes: PackedGenotypeMatrix | DenseDesign
    covariates: CovariateBlock | None = None

    def __post_init__(self):
        if self.covariates is not None and self.covariates.values.shape[0] != self.genotypes.n:
            raise ValueError("covariate rows must match the sample count")

    @property
    def n(self) -> int:
        return self.genotypes.n

    @property
    def p(self) -> int:
        return self.genotypes.p

    @property
    def c(self) -> int:
        return 0 if self.covariates is None else self.covariates.c

    @property
    def total(self) -> int:
        return self.p + self.c


def ax_parts(view: StandardizedView, support: np.ndarray, weights: np.ndarray,
             covar: np.ndarray | None = None) -> np.ndarray:
    """Fitted values of a sparse coefficient vector: X_st b + C b_cov."""
    out = view.genotypes.ax_columns(support, weights)
    if covar is not None and view.c:
        covar = np.asarray(covar, dtype=np.float64)
        if covar.shape != (view.c,):
            raise ValueError("covariate coefficient length mismatch")
        out = out + view.covariates.values @ covar
    return out


def ax(view: StandardizedView, model) -> np.ndarray:
    """Fitted values for a sparse model over the view."""
    return ax_parts(view, model.support, model.weights, model.covar)


def aty(view: StandardizedView, r: np.ndarray) -> np.ndarray:
    """Transposed product over all predictors, covariates appended last."""
    gen = view.genotypes.aty_genetic(r)
    if view.c:
        return np.concatenate([gen, view.covariates.values.T @ np.asarray(r, dtype=np.float64)])
    return gen


def decompress_active(view: StandardizedView, support: np.ndarray) -> np.ndarray:
    """Dense standardized (n, k) submatrix in ascending predictor order.

    Indices at or past ``view.p`` pull covariate columns.
    """
    support = np.asarray(support, dtype=np.int64)
    if support.size and (support.min() < 0 or support.max() >= view.total):
        raise IndexError("predictor index out of range")
    gen_idx = support[support < view.p]
    cov_idx = support[support >= view.p] - view.p
    out = np.empty((view.n, support.size), order="F")
    out[:, : gen_idx.size] = view.genotypes.decompress(gen_idx)
    if cov_idx.size:
        out[:, gen_idx.size:] = view.covariates.values[:, cov_idx]
    return out
