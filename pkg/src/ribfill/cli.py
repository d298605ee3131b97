"""Command-line front end; stages talk to each other only through files.

``phantom`` renders synthetic CTs, ``prep`` turns CTs into training cases
(volumes plus a manifest each), ``train`` fits the network on manifests,
``eval`` scores a checkpoint, and ``gradcheck`` verifies loss gradients
against finite differences.  Every subcommand takes ``--seed`` and
``--out-dir`` and is deterministic and idempotent for fixed inputs:
rerunning writes byte-identical files.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .defects import (
    DEFAULT_BAND,
    DEFAULT_HU_THRESHOLD,
    DEFAULT_WINDOW,
    DESK_DIMS,
    PipelineConfig,
    TrainingCase,
    normalized_working_ct,
    prepare_case,
)
from .grid import UNIT, Mask, Volume, binarize
from .losses import LOSS_KINDS, finite_diff_check
from .manifest import CaseManifest, read_manifest, write_manifest
from .net import NetConfig, OptState, load_checkpoint, save_checkpoint
from .nifti import read_volume, write_volume
from .phantom import PhantomSpec, generate_phantom
from .train import eval_csv, evaluate, train, train_log_csv

_TRAIN_KINDS = ("dice", "mse", "mse+err", "mse+err+gf")


def _common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=0, help="base RNG seed (default 0)")
    sub.add_argument("--out-dir", default=".", help="directory for outputs (default .)")


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_phantom(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    for i in range(args.cases):
        spec = PhantomSpec(
            dims=tuple(args.dims),
            spacing=tuple(args.spacing),
            rib_pairs=args.rib_pairs,
            rib_radius=args.rib_radius,
            jitter=args.jitter,
            seed=args.seed + i,
        )
        path = out / f"case{i:03d}_ct.nii"
        write_volume(path, generate_phantom(spec), "float32")
        print(f"wrote {path}")
    return 0


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    return PipelineConfig(
        work_dims=tuple(args.work_dims),
        window=tuple(args.window),
        hu_threshold=args.hu_threshold,
        defect_size=tuple(args.defect_size) if args.defect_size else None,
        band=tuple(args.band),
        min_bone_fraction=args.min_bone_frac,
        max_attempts=args.max_attempts,
    )


def _case_id(path: Path) -> str:
    stem = path.name
    for suffix in (".nii",):
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
    if stem.endswith("_ct"):
        stem = stem[: -len("_ct")]
    return stem


def _cmd_prep(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    config = _pipeline_config(args)
    for i, ct_path in enumerate(args.ct):
        ct_path = Path(ct_path)
        cid = _case_id(ct_path)
        seed = args.seed + i
        ct = read_volume(ct_path, domain="HU")[0]
        case = prepare_case(ct, config, seed)
        work_ct = normalized_working_ct(ct, config)
        files = {
            "ct": (f"{cid}_ct.nii", work_ct, "float32"),
            "bone": (f"{cid}_bone.nii", case.reconstruct(), "uint8"),
            "defective": (f"{cid}_defective.nii", case.defective, "uint8"),
            "implant": (f"{cid}_implant.nii", case.implant, "uint8"),
        }
        for name, vol, datatype in files.values():
            write_volume(out / name, vol, datatype)
        manifest = CaseManifest(
            case_id=cid,
            seed=seed,
            dims=tuple(config.work_dims),
            ct=files["ct"][0],
            bone=files["bone"][0],
            defective=files["defective"][0],
            implant=files["implant"][0],
            box=case.box,
            hu_threshold=config.hu_threshold,
            window=tuple(config.window),
        )
        mpath = out / f"{cid}.manifest"
        write_manifest(mpath, manifest)
        print(f"wrote {mpath} (box {case.box.origin}+{case.box.size})")
    return 0


def _load_case(manifest_path: str | Path) -> tuple[str, TrainingCase]:
    mpath = Path(manifest_path)
    m = read_manifest(mpath)
    defective = binarize(read_volume(m.volume_path("defective", mpath))[0], 0.5)
    implant = binarize(read_volume(m.volume_path("implant", mpath))[0], 0.5)
    w, h, d = m.dims
    keep = np.ones((d, h, w))
    keep[m.box.slices] = 0.0
    defect_mask = Mask(keep, defective.spacing)
    case = TrainingCase(
        defective=defective, implant=implant, box=m.box, defect_mask=defect_mask, seed=m.seed
    )
    return m.case_id, case


def _cmd_train(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    cases = [_load_case(p)[1] for p in args.manifests]
    config = NetConfig(depth=args.depth, base_channels=args.base_channels)
    opt = OptState(
        lr=args.lr,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
    )
    result = train(
        cases, config, opt, steps=args.steps, loss_kind=args.loss,
        seed=args.seed, region=args.region,
    )
    ckpt = out / "checkpoint.bin"
    save_checkpoint(ckpt, result.params, result.opt)
    log_path = out / "training_log.csv"
    log_path.write_text(train_log_csv(result.log), encoding="utf-8")
    print(f"wrote {ckpt}")
    print(f"wrote {log_path}")
    if result.log:
        last = result.log[-1]
        print(
            f"step {len(result.log)}: dice={last.dice:.6f} mse={last.mse:.6f} "
            f"err={last.err:.6f} gf={last.gf:.6f} rib={last.rib:.6f}"
        )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    params, _ = load_checkpoint(args.checkpoint)
    ids: list[str] = []
    cases: list[TrainingCase] = []
    for p in args.manifests:
        cid, case = _load_case(p)
        ids.append(cid)
        cases.append(case)
    reports = evaluate(params, cases, threshold=args.threshold, percentile=args.percentile)
    table = out / "metrics.csv"
    table.write_text(eval_csv(ids, reports), encoding="utf-8")
    print(f"wrote {table}")
    mean_dsc = sum(r.dsc for r in reports) / len(reports)
    mean_hd = sum(r.hd for r in reports) / len(reports)
    print(f"mean dsc={mean_dsc:.4f} mean hd={mean_hd:.2f} mm over {len(reports)} cases")
    return 0


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    w, h, d = args.dims
    failed = False
    for kind in args.kinds:
        worst = 0.0
        for _ in range(args.pairs):
            pred = Volume(rng.uniform(0.0, 1.0, size=(d, h, w)), (1.0, 1.0, 1.0), UNIT)
            truth = Volume(rng.uniform(0.0, 1.0, size=(d, h, w)), (1.0, 1.0, 1.0), UNIT)
            worst = max(worst, finite_diff_check(kind, pred, truth, h=args.h))
        ok = worst < args.tol
        failed = failed or not ok
        print(f"{kind}: max rel err {worst:.3e} ({'ok' if ok else 'FAIL'}, tol {args.tol:g})")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ribfill",
        description="Desk-scale rib-implant reconstruction: phantoms, defects, training, metrics.",
    )
    parser.add_argument("--version", action="version", version=f"ribfill {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("phantom", help="render synthetic thorax CT volumes")
    _common(p)
    p.add_argument("--cases", type=int, default=1, help="number of volumes (default 1)")
    p.add_argument("--dims", type=int, nargs=3, default=[96, 96, 48], metavar=("W", "H", "D"))
    p.add_argument("--spacing", type=float, nargs=3, default=[4.0, 4.0, 8.0], metavar=("SX", "SY", "SZ"))
    p.add_argument("--rib-pairs", type=int, default=12)
    p.add_argument("--rib-radius", type=float, default=1.4)
    p.add_argument("--jitter", type=float, default=0.5)
    p.set_defaults(func=_cmd_phantom)

    p = subs.add_parser("prep", help="threshold, resample, carve a defect, write a case")
    _common(p)
    p.add_argument("ct", nargs="+", help="input CT volumes (.nii)")
    p.add_argument("--work-dims", type=int, nargs=3, default=list(DESK_DIMS), metavar=("W", "H", "D"))
    p.add_argument("--hu-threshold", type=float, default=DEFAULT_HU_THRESHOLD)
    p.add_argument("--window", type=float, nargs=2, default=list(DEFAULT_WINDOW), metavar=("LO", "HI"))
    p.add_argument("--defect-size", type=int, nargs=3, default=None, metavar=("W", "H", "D"),
                   help="defect box dims (default: full-scale box rescaled to the working grid)")
    p.add_argument("--band", type=float, nargs=2, default=list(DEFAULT_BAND), metavar=("LO", "HI"))
    p.add_argument("--min-bone-frac", type=float, default=0.01)
    p.add_argument("--max-attempts", type=int, default=32)
    p.set_defaults(func=_cmd_prep)

    p = subs.add_parser("train", help="fit the network on prepared cases")
    _common(p)
    p.add_argument("manifests", nargs="+", help="case manifests from prep")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--loss", choices=_TRAIN_KINDS, default="mse+err+gf")
    p.add_argument("--region", choices=("defect-crop", "full-volume"), default="defect-crop")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--base-channels", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=1)
    p.set_defaults(func=_cmd_train)

    p = subs.add_parser("eval", help="score a checkpoint on prepared cases")
    _common(p)
    p.add_argument("manifests", nargs="+", help="case manifests from prep")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--percentile", type=float, default=100.0,
                   help="directed-distance percentile; 100 is the true Hausdorff")
    p.set_defaults(func=_cmd_eval)

    p = subs.add_parser("gradcheck", help="compare loss gradients with finite differences")
    _common(p)
    p.add_argument("--kinds", nargs="+", choices=LOSS_KINDS, default=list(_TRAIN_KINDS))
    p.add_argument("--pairs", type=int, default=100)
    p.add_argument("--dims", type=int, nargs=3, default=[8, 8, 8], metavar=("W", "H", "D"))
    p.add_argument("--h", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
