"""Overlap and surface-distance metrics, each with a brute-force oracle.

The distance machinery is an exact separable squared Euclidean distance
transform: one lower-envelope-of-parabolas pass per axis, weighted by that
axis' spacing squared, composed x then y then z.  Per-voxel arithmetic
matches the naive all-pairs scan operation for operation (products and the
same left-to-right sum of the three axis terms), so with benign spacings
the two agree bit for bit; the oracles here are kept deliberately naive so
tests can hold the fast path to that.

Empty masks have no surface, so Hausdorff distances on them raise instead
of returning a sentinel that could slip through an aggregation unnoticed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Mask, ShapeError, Volume

_FAR = 1e30  # finite "no parabola here" sentinel; dwarfs any real distance


class EmptyMaskError(ValueError):
    """Raised when a surface metric is asked about a mask with no voxels."""


@dataclass(frozen=True)
class MetricReport:
    """Overlap plus surface distances for one predicted/truth mask pair."""

    dsc: float
    hd: float       # symmetric Hausdorff, mm
    hd_ab: float    # directed a -> b, mm
    hd_ba: float    # directed b -> a, mm
    n_a: int
    n_b: int


def _check_masks(a: Mask, b: Mask, need_spacing: bool = False) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"dims mismatch: {a.dims} vs {b.dims}")
    if need_spacing and a.spacing != b.spacing:
        raise ShapeError(f"spacing mismatch: {a.spacing} vs {b.spacing}")


def dsc(a: Mask, b: Mask) -> float:
    """Dice coefficient; two empty masks agree perfectly (1.0)."""
    _check_masks(a, b)
    fa = a.data != 0.0
    fb = b.data != 0.0
    na = int(fa.sum())
    nb = int(fb.sum())
    if na + nb == 0:
        return 1.0
    inter = int((fa & fb).sum())
    return 2.0 * inter / (na + nb)


# ---------------------------------------------------------------------------
# exact separable squared EDT


def _edt_1d_sq(f: np.ndarray, w: float) -> np.ndarray:
    """d[i] = min_v f[v] + w*(i - v)^2 via the lower envelope of parabolas."""
    n = f.size
    d = np.empty(n)
    v = np.empty(n, dtype=np.intp)
    z = np.empty(n + 1)
    v[0] = 0
    z[0] = -np.inf
    z[1] = np.inf
    k = 0
    for q in range(1, n):
        fq = f[q] + w * (q * q)
        while True:
            p = v[k]
            s = (fq - (f[p] + w * (p * p))) / (2.0 * w * (q - p))
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for i in range(n):
        while z[k + 1] < i:
            k += 1
        p = v[k]
        d[i] = w * ((i - p) * (i - p)) + f[p]
    return d


def _edt_pass(arr: np.ndarray, axis: int, w: float) -> np.ndarray:
    moved = np.moveaxis(arr, axis, -1)
    flat = np.ascontiguousarray(moved).reshape(-1, arr.shape[axis])
    for row in range(flat.shape[0]):
        flat[row] = _edt_1d_sq(flat[row], w)
    return np.moveaxis(flat.reshape(moved.shape), -1, axis)


def edt_sq(mask: Mask) -> np.ndarray:
    """Squared distance (mm^2) from every voxel to the nearest mask voxel."""
    fg = mask.data != 0.0
    if not fg.any():
        raise EmptyMaskError("distance transform of an empty mask")
    sx, sy, sz = mask.spacing
    f = np.where(fg, 0.0, _FAR)
    f = _edt_pass(f, 2, sx * sx)
    f = _edt_pass(f, 1, sy * sy)
    f = _edt_pass(f, 0, sz * sz)
    return np.ascontiguousarray(f)


def edt(mask: Mask) -> Volume:
    """Euclidean distance map in mm."""
    return Volume(np.sqrt(edt_sq(mask)), mask.spacing)


def brute_force_edt_sq(mask: Mask) -> np.ndarray:
    """All-pairs reference for :func:`edt_sq`; O(voxels * mask size)."""
    fg = np.argwhere(mask.data != 0.0)
    if fg.size == 0:
        raise EmptyMaskError("distance transform of an empty mask")
    sx, sy, sz = mask.spacing
    d, h, w = mask.data.shape
    zz, yy, xx = np.meshgrid(np.arange(d), np.arange(h), np.arange(w), indexing="ij")
    pts = np.stack([zz.ravel(), yy.ravel(), xx.ravel()], axis=1).astype(np.float64)
    out = np.full(pts.shape[0], np.inf)
    fgf = fg.astype(np.float64)
    for i0 in range(0, fgf.shape[0], 64):
        blk = fgf[i0 : i0 + 64]
        dx = pts[:, None, 2] - blk[None, :, 2]
        dy = pts[:, None, 1] - blk[None, :, 1]
        dz = pts[:, None, 0] - blk[None, :, 0]
        d2 = dx * dx * (sx * sx)
        d2 += dy * dy * (sy * sy)
        d2 += dz * dz * (sz * sz)
        np.minimum(out, d2.min(axis=1), out=out)
    return out.reshape(d, h, w)


# ---------------------------------------------------------------------------
# Hausdorff distances


def directed_hausdorff_sq(a: Mask, b: Mask) -> float:
    """max over a's voxels of the squared distance to the nearest b voxel."""
    _check_masks(a, b, need_spacing=True)
    fa = a.data != 0.0
    if not fa.any():
        raise EmptyMaskError("directed Hausdorff from an empty mask")
    return float(edt_sq(b)[fa].max())


def directed_hausdorff(a: Mask, b: Mask, percentile: float = 100.0) -> float:
    """Directed Hausdorff in mm; ``percentile`` < 100 gives the robust variant."""
    _check_masks(a, b, need_spacing=True)
    fa = a.data != 0.0
    if not fa.any():
        raise EmptyMaskError("directed Hausdorff from an empty mask")
    dists = np.sqrt(edt_sq(b)[fa])
    if percentile >= 100.0:
        return float(dists.max())
    if not 0.0 < percentile < 100.0:
        raise ShapeError(f"percentile must be in (0, 100], got {percentile}")
    return float(np.percentile(dists, percentile))


def hausdorff(a: Mask, b: Mask, percentile: float = 100.0) -> float:
    """Symmetric Hausdorff in mm: max of the two directed distances."""
    return max(directed_hausdorff(a, b, percentile), directed_hausdorff(b, a, percentile))


def brute_force_hausdorff_sq(a: Mask, b: Mask) -> tuple[float, float]:
    """Naive (directed a->b, directed b->a) squared distances, all pairs."""
    _check_masks(a, b, need_spacing=True)
    ca = np.argwhere(a.data != 0.0).astype(np.float64)
    cb = np.argwhere(b.data != 0.0).astype(np.float64)
    if ca.size == 0 or cb.size == 0:
        raise EmptyMaskError("Hausdorff with an empty mask")
    sx, sy, sz = a.spacing
    dx = ca[:, None, 2] - cb[None, :, 2]
    dy = ca[:, None, 1] - cb[None, :, 1]
    dz = ca[:, None, 0] - cb[None, :, 0]
    d2 = dx * dx * (sx * sx)
    d2 += dy * dy * (sy * sy)
    d2 += dz * dz * (sz * sz)
    return float(d2.min(axis=1).max()), float(d2.min(axis=0).max())


def metric_report(pred: Mask, truth: Mask, percentile: float = 100.0) -> MetricReport:
    """DSC plus Hausdorff distances for one pair, as written to eval CSVs."""
    hd_ab = directed_hausdorff(pred, truth, percentile)
    hd_ba = directed_hausdorff(truth, pred, percentile)
    return MetricReport(
        dsc=dsc(pred, truth),
        hd=max(hd_ab, hd_ba),
        hd_ab=hd_ab,
        hd_ba=hd_ba,
        n_a=int(np.count_nonzero(pred.data)),
        n_b=int(np.count_nonzero(truth.data)),
    )
