"""Dense voxel grids and the handful of operations everything else builds on.

A :class:`Volume` is a 3-D scalar field on a regular grid with per-axis
spacing in millimetres.  Arrays are stored ``(z, y, x)`` so that the C-order
flat layout runs x-fastest, which is also the on-disk payload order used by
:mod:`ribfill.nifti`.  Public dims are reported ``(W, H, D)``; the height
axis is z, i.e. array axis 0.

Volumes are immutable: the wrapped array is marked read-only at construction
and every operation returns a fresh instance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

HU = "HU"
UNIT = "unit"
UNBOUNDED = "unbounded"
DOMAINS = (HU, UNIT, UNBOUNDED)


class ShapeError(ValueError):
    """Raised when array rank or grid dims do not match what an op needs."""


class DomainError(ValueError):
    """Raised when values fall outside the declared value domain."""


class BoundsError(ValueError):
    """Raised when a box reaches outside the grid it indexes."""


@dataclass(frozen=True, eq=False)
class Volume:
    """A scalar field on a regular grid.

    Parameters
    ----------
    data : ndarray
        3-D array, any numeric dtype; converted to float64 ``(z, y, x)``.
        The stored array is frozen; pass a copy if you need to keep writing
        to yours.
    spacing : (sx, sy, sz)
        Voxel edge lengths in mm, all finite and positive.
    domain : str
        One of ``HU``, ``unit``, ``unbounded``.  ``unit`` enforces values
        in [0, 1] at construction.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]
    domain: str = UNBOUNDED

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ShapeError(f"expected a 3-D array, got ndim={arr.ndim}")
        if min(arr.shape) < 1:
            raise ShapeError(f"all dims must be at least 1, got shape {arr.shape}")
        if arr.dtype != np.float64 or not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise DomainError("volume contains non-finite values")
        sp = tuple(float(s) for s in self.spacing)
        if len(sp) != 3 or any(not np.isfinite(s) or s <= 0.0 for s in sp):
            raise DomainError(f"spacing must be three positive finite mm values, got {self.spacing}")
        if self.domain not in DOMAINS:
            raise DomainError(f"unknown value domain {self.domain!r}")
        if self.domain == UNIT and (arr.min() < 0.0 or arr.max() > 1.0):
            raise DomainError("unit-domain volume has values outside [0, 1]")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", sp)

    @property
    def dims(self) -> tuple[int, int, int]:
        """Grid extent as (W, H, D)."""
        d, h, w = self.data.shape
        return (w, h, d)

    def ravel(self) -> np.ndarray:
        """Canonical flat order: x fastest, then y, then z."""
        return self.data.reshape(-1)


@dataclass(frozen=True, eq=False)
class Mask(Volume):
    """A Volume whose every voxel is exactly 0.0 or 1.0 (unit domain)."""

    domain: str = UNIT

    def __post_init__(self) -> None:
        if self.domain != UNIT:
            raise DomainError("masks live in the unit domain")
        super().__post_init__()
        a = self.data
        if not ((a == 0.0) | (a == 1.0)).all():
            raise DomainError("mask values must be exactly 0 or 1")

    @classmethod
    def from_bool(cls, arr: np.ndarray, spacing: Sequence[float]) -> "Mask":
        return cls(np.asarray(arr, dtype=bool).astype(np.float64), tuple(spacing))


@dataclass(frozen=True)
class Box:
    """Axis-aligned cuboid: integer origin (x, y, z) and size (w, h, d)."""

    origin: tuple[int, int, int]
    size: tuple[int, int, int]

    def __post_init__(self) -> None:
        o = tuple(int(v) for v in self.origin)
        s = tuple(int(v) for v in self.size)
        if len(o) != 3 or len(s) != 3:
            raise ShapeError("box origin and size must each have three components")
        if any(v < 0 for v in o):
            raise BoundsError(f"box origin must be non-negative, got {o}")
        if any(v <= 0 for v in s):
            raise BoundsError(f"box size must be positive, got {s}")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "size", s)

    @property
    def slices(self) -> tuple[slice, slice, slice]:
        """(z, y, x) slice triple for indexing a volume array."""
        (x, y, z), (w, h, d) = self.origin, self.size
        return (slice(z, z + d), slice(y, y + h), slice(x, x + w))

    def fits(self, dims: tuple[int, int, int]) -> bool:
        return all(self.origin[i] + self.size[i] <= dims[i] for i in range(3))

    @property
    def volume(self) -> int:
        w, h, d = self.size
        return w * h * d


# ---------------------------------------------------------------------------
# elementwise ops


def _require_same_dims(a: Volume, b: Volume) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"dims mismatch: {a.dims} vs {b.dims}")


def elementwise_mul(a: Volume, b: Volume) -> Volume:
    """Voxelwise product; spacing copied from ``a``.

    The result is unit-domain when both inputs are (a product of values in
    [0, 1] stays there); masks stay masks.
    """
    _require_same_dims(a, b)
    out = a.data * b.data
    if isinstance(a, Mask) and isinstance(b, Mask):
        return Mask(out, a.spacing)
    dom = UNIT if (a.domain == UNIT and b.domain == UNIT) else UNBOUNDED
    return Volume(out, a.spacing, dom)


def complement(v: Volume) -> Volume:
    """1 - v for unit-domain volumes."""
    if v.domain != UNIT:
        raise DomainError(f"complement needs a unit-domain volume, got {v.domain!r}")
    out = 1.0 - v.data
    if isinstance(v, Mask):
        return Mask(out, v.spacing)
    return Volume(out, v.spacing, UNIT)


def binarize(v: Volume, tau: float) -> Mask:
    """Threshold at ``tau``: voxels >= tau become 1, the rest 0."""
    tau = float(tau)
    if not np.isfinite(tau):
        raise DomainError(f"threshold must be finite, got {tau}")
    return Mask((v.data >= tau).astype(np.float64), v.spacing)


# ---------------------------------------------------------------------------
# resampling


def _resize_axis(arr: np.ndarray, axis: int, n_new: int) -> np.ndarray:
    n_old = arr.shape[axis]
    if n_new == n_old:
        return arr
    a = np.moveaxis(arr, axis, 0)
    if n_old == 1:
        out = np.broadcast_to(a, (n_new,) + a.shape[1:]).copy()
        return np.moveaxis(out, 0, axis)
    if n_new == 1:
        pos = np.array([(n_old - 1) / 2.0])
    else:
        pos = np.arange(n_new, dtype=np.float64) * ((n_old - 1) / (n_new - 1))
    np.clip(pos, 0.0, float(n_old - 1), out=pos)
    lo = np.floor(pos).astype(np.intp)
    np.clip(lo, 0, n_old - 2, out=lo)
    f = pos - lo
    lo_rows = a[lo]
    out = lo_rows + f.reshape((-1,) + (1,) * (a.ndim - 1)) * (a[lo + 1] - lo_rows)
    # outputs landing exactly on an input sample copy it bit for bit; the
    # blend above does so on its own for f == 0 but not for the clamped
    # f == 1 at the top corner
    hit = np.flatnonzero(f == 1.0)
    if hit.size:
        out[hit] = a[lo[hit] + 1]
    return np.moveaxis(out, 0, axis)


def trilinear_resize(v: Volume, dims: tuple[int, int, int]) -> Volume:
    """Separable corner-aligned linear resample to ``dims`` = (W', H', D').

    Endpoints map to endpoints, so constants are preserved exactly and the
    output range never leaves the input range.  Spacing is rescaled by the
    dims ratio so physical extent is carried along.
    """
    w2, h2, d2 = (int(n) for n in dims)
    if min(w2, h2, d2) < 1:
        raise ShapeError(f"target dims must be positive, got {dims}")
    w1, h1, d1 = v.dims
    out = v.data
    out = _resize_axis(out, 2, w2)
    out = _resize_axis(out, 1, h2)
    out = _resize_axis(out, 0, d2)
    if out is v.data:
        out = out.copy()
    np.clip(out, v.data.min(), v.data.max(), out=out)
    sx, sy, sz = v.spacing
    spacing = (sx * w1 / w2, sy * h1 / h2, sz * d1 / d2)
    return Volume(out, spacing, v.domain)


# ---------------------------------------------------------------------------
# crop / paste


def crop(v: Volume, box: Box) -> Volume:
    """Copy the sub-grid covered by ``box`` (same spacing and domain)."""
    if not box.fits(v.dims):
        raise BoundsError(f"box {box.origin}+{box.size} exceeds dims {v.dims}")
    out = v.data[box.slices].copy()
    if isinstance(v, Mask):
        return Mask(out, v.spacing)
    return Volume(out, v.spacing, v.domain)


def paste(dst: Volume, src: Volume, origin: tuple[int, int, int]) -> Volume:
    """Blend ``src`` into ``dst`` at ``origin`` by voxelwise max."""
    box = Box(origin, src.dims)
    if not box.fits(dst.dims):
        raise BoundsError(f"paste of {src.dims} at {origin} exceeds dims {dst.dims}")
    out = dst.data.copy()
    region = out[box.slices]
    np.maximum(region, src.data, out=region)
    if isinstance(dst, Mask) and isinstance(src, Mask):
        return Mask(out, dst.spacing)
    dom = dst.domain if dst.domain == src.domain else UNBOUNDED
    return Volume(out, dst.spacing, dom)


# ---------------------------------------------------------------------------
# reductions

# np.sum over a fixed-layout float64 array uses one fixed (pairwise)
# accumulation order, so these are bit-for-bit reproducible across runs.


def vol_sum(v: Volume) -> float:
    return float(np.sum(v.data, dtype=np.float64))


def vol_mean(v: Volume) -> float:
    return vol_sum(v) / v.data.size


def count_nonzero(v: Volume) -> int:
    return int(np.count_nonzero(v.data))
