"""Synthetic thorax CT volumes for desk-scale experiments.

The phantom is deliberately cartoonish but has the right topology for
rib-repair work: an elliptic soft-tissue torso in air, a posterior spine
column, an anterior sternum bar, and mirrored left/right rib pairs.  Each
rib is a tube of constant radius around a half-ellipse arc lying in an
axial plane.  Voxels take exactly three HU levels (air, soft tissue,
bone), so a single threshold recovers the bone stencil.

Randomness is confined to small per-rib jitter of the arc axes and height,
drawn from a seeded generator; jitter 0 gives a bitwise left/right
symmetric volume because the left ribs are produced by mirroring the
rasterised right-side tubes, never by re-deriving mirrored coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .grid import HU, Volume

_TORSO_FRAC = (0.42, 0.38)   # torso semi-axes as fractions of W, H
_RIB_FRAC = 0.88             # rib arc semi-axes as a fraction of the torso's
_RIB_BAND = (0.14, 0.86)     # z placement band for rib-pair centres, of D-1
_SPINE_RADIUS = 2.0          # spine cylinder radius, in rib radii
_STERNUM_HALF_W = 2.0        # sternum half-width, in rib radii
_STERNUM_HALF_T = 1.2        # sternum half-thickness, in rib radii
_STERNUM_BAND = (0.35, 0.92)  # sternum z extent, of D-1
_ARC_STEP = 0.35             # curve sampling step along the arc, voxels


class GeometryError(ValueError):
    """Raised when the requested phantom cannot fit its grid."""


@dataclass(frozen=True)
class PhantomSpec:
    """Knobs for one phantom; all lengths are in voxels of the native grid."""

    dims: tuple[int, int, int] = (96, 96, 48)
    spacing: tuple[float, float, float] = (4.0, 4.0, 8.0)
    rib_pairs: int = 12
    rib_radius: float = 1.4
    jitter: float = 0.5
    seed: int = 0
    hu_air: float = -1000.0
    hu_soft: float = 40.0
    hu_bone: float = 700.0


def _validate(spec: PhantomSpec) -> tuple[float, float]:
    w, h, d = spec.dims
    if spec.rib_pairs < 1:
        raise GeometryError(f"need at least one rib pair, got {spec.rib_pairs}")
    if spec.rib_radius <= 0.0:
        raise GeometryError(f"rib radius must be positive, got {spec.rib_radius}")
    if spec.jitter < 0.0:
        raise GeometryError(f"jitter must be non-negative, got {spec.jitter}")
    a = _TORSO_FRAC[0] * w
    b = _TORSO_FRAC[1] * h
    r = spec.rib_radius
    if a - r - 0.5 < 2.0 or b - r - 0.5 < 2.0:
        raise GeometryError(
            f"dims {spec.dims} too small for rib radius {r}: torso semi-axes ({a:.1f}, {b:.1f})"
        )
    if d < 2.0 * r + 4.0:
        raise GeometryError(f"height {d} too small for rib radius {r}")
    return a, b


def _rasterize_tube(
    bone: np.ndarray, a: float, b: float, zc: float, r: float, cx: float, cy: float, mirror: bool
) -> None:
    """OR one rib tube into ``bone``; ``mirror`` flips it to the left side."""
    dz, hy, wx = bone.shape
    m = max(16, int(math.ceil(math.pi * max(a, b) / _ARC_STEP)) + 1)
    t = np.linspace(0.0, math.pi, m)
    px = cx + a * np.sin(t)
    py = cy - b * np.cos(t)

    x0 = max(0, int(math.floor(px.min() - r - 1.0)))
    x1 = min(wx - 1, int(math.ceil(px.max() + r + 1.0)))
    y0 = max(0, int(math.floor(py.min() - r - 1.0)))
    y1 = min(hy - 1, int(math.ceil(py.max() + r + 1.0)))
    if x1 < x0 or y1 < y0:
        return
    xs = np.arange(x0, x1 + 1, dtype=np.float64)
    ys = np.arange(y0, y1 + 1, dtype=np.float64)
    dx2 = (xs[:, None] - px[None, :]) ** 2
    dy2 = (ys[:, None] - py[None, :]) ** 2
    d2 = np.full((ys.size, xs.size), np.inf)
    for i in range(0, m, 64):
        block = dy2[:, None, i : i + 64] + dx2[None, :, i : i + 64]
        np.minimum(d2, block.min(axis=2), out=d2)

    z_lo = max(0, int(math.ceil(zc - r)))
    z_hi = min(dz - 1, int(math.floor(zc + r)))
    for z in range(z_lo, z_hi + 1):
        rad2 = r * r - (z - zc) ** 2
        if rad2 < 0.0:
            continue
        disc = d2 <= rad2
        if mirror:
            bone[z, y0 : y1 + 1, wx - 1 - x1 : wx - x0] |= disc[:, ::-1]
        else:
            bone[z, y0 : y1 + 1, x0 : x1 + 1] |= disc


def _bone_stencil(spec: PhantomSpec) -> np.ndarray:
    """Bool (z, y, x) array of everything that will be painted as bone."""
    w, h, d = spec.dims
    a_t, b_t = _validate(spec)
    r = spec.rib_radius
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    a_rib = _RIB_FRAC * a_t
    b_rib = _RIB_FRAC * b_t

    rng = np.random.default_rng(spec.seed)
    offsets = rng.uniform(-1.0, 1.0, size=(spec.rib_pairs, 2, 3)) * spec.jitter

    z_lo = _RIB_BAND[0] * (d - 1)
    z_hi = _RIB_BAND[1] * (d - 1)
    bone = np.zeros((d, h, w), dtype=bool)
    for k in range(spec.rib_pairs):
        if spec.rib_pairs == 1:
            z_k = 0.5 * (z_lo + z_hi)
        else:
            z_k = z_lo + (z_hi - z_lo) * k / (spec.rib_pairs - 1)
        for side, mirror in ((0, False), (1, True)):
            da, db, dzk = offsets[k, side]
            a = min(max(a_rib + da, 2.0), a_t - r - 0.5)
            b = min(max(b_rib + db, 2.0), b_t - r - 0.5)
            zc = min(max(z_k + dzk, r), (d - 1) - r)
            _rasterize_tube(bone, a, b, zc, r, cx, cy, mirror)

    xg = np.arange(w, dtype=np.float64) - cx
    yg = np.arange(h, dtype=np.float64) - cy

    r_sp = _SPINE_RADIUS * r
    y_sp = -_RIB_FRAC * b_t
    spine_xy = (xg[None, :] ** 2 + (yg[:, None] - y_sp) ** 2) <= r_sp * r_sp
    sp_lo = max(0, int(round(z_lo - r)))
    sp_hi = min(d - 1, int(round(z_hi + r)))
    bone[sp_lo : sp_hi + 1] |= spine_xy[None, :, :]

    y_st = _RIB_FRAC * b_t
    stern_xy = (np.abs(xg)[None, :] <= _STERNUM_HALF_W * r) & (
        np.abs(yg[:, None] - y_st) <= _STERNUM_HALF_T * r
    )
    st_lo = int(round(_STERNUM_BAND[0] * (d - 1)))
    st_hi = int(round(_STERNUM_BAND[1] * (d - 1)))
    bone[st_lo : st_hi + 1] |= stern_xy[None, :, :]
    return bone


def generate_phantom(spec: PhantomSpec = PhantomSpec()) -> Volume:
    """Render one phantom as an HU-domain volume."""
    w, h, d = spec.dims
    a_t, b_t = _validate(spec)
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    xg = (np.arange(w, dtype=np.float64) - cx) / a_t
    yg = (np.arange(h, dtype=np.float64) - cy) / b_t
    torso_xy = (xg[None, :] ** 2 + yg[:, None] ** 2) <= 1.0

    vol = np.full((d, h, w), spec.hu_air, dtype=np.float64)
    vol[:, torso_xy] = spec.hu_soft
    vol[_bone_stencil(spec)] = spec.hu_bone
    return Volume(vol, spec.spacing, HU)


def generate_dataset(spec: PhantomSpec, n_cases: int, seed: int) -> list[Volume]:
    """Phantoms with per-case seeds ``seed + i`` so any case can be re-made alone."""
    if n_cases < 1:
        raise GeometryError(f"need at least one case, got {n_cases}")
    return [generate_phantom(replace(spec, seed=seed + i)) for i in range(n_cases)]
