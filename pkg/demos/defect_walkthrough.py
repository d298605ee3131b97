"""From a raw phantom CT to a training case, one stage at a time.

Thresholds bone, carves a seeded cuboid defect, and verifies the two
halves of the split partition the stencil exactly.
"""

from __future__ import annotations

import numpy as np

from ribfill import (
    PhantomSpec,
    PipelineConfig,
    generate_phantom,
    prepare_case,
    threshold_bone,
)


def main() -> None:
    ct = generate_phantom(
        PhantomSpec(dims=(64, 64, 32), spacing=(6.0, 6.0, 12.0), rib_radius=2.6, seed=0)
    )
    stencil = threshold_bone(ct)
    print(f"bone stencil: {int(stencil.data.sum())} of {stencil.data.size} voxels")

    config = PipelineConfig()
    case = prepare_case(ct, config, seed=25)
    x0, y0, z0 = case.box.origin
    bw, bh, bd = case.box.size
    print(f"defect box: origin ({x0},{y0},{z0}), size {bw}x{bh}x{bd}")

    n_def = int(case.defective.data.sum())
    n_imp = int(case.implant.data.sum())
    overlap = int(np.minimum(case.defective.data, case.implant.data).sum())
    print(f"defective stencil: {n_def} voxels")
    print(f"implant (ground truth): {n_imp} voxels")
    print(f"overlap: {overlap}  (always zero)")
    print(f"union == stencil: {np.array_equal(case.reconstruct().data, stencil.data)}")

    frac = case.implant.data[case.box.slices].mean()
    print(f"bone fraction inside the box: {frac:.3f}")

    z = int(case.implant.data.sum(axis=(1, 2)).argmax())  # densest implant slab
    print(f"\naxial slice z={z}, defective stencil, box outlined:")
    for y, row in enumerate(case.defective.data[z]):
        chars = []
        for x, v in enumerate(row):
            inside = x0 <= x < x0 + bw and y0 <= y < y0 + bh
            chars.append("#" if v else ("+" if inside else "."))
        print("".join(chars))

    print("\nsame slice, the implant that fills the hole:")
    for row in case.implant.data[z]:
        print("".join("#" if v else "." for v in row))


if __name__ == "__main__":
    main()
