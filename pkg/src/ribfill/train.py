"""Training and evaluation loops plus their CSV log formats.

One optimiser step consumes ``batch_size`` cases round-robin, averages
their parameter gradients, and applies one Adam update.  The loss is
computed on the defect crop by default: the network sees the whole
defective stencil but is scored only where bone was removed.  Scoring the
full grid instead is a switch away, for runs that should also punish
stray mass far from the defect.

CSV columns are part of the external contract: training logs are
``step, dice, mse, err, gf, rib`` and evaluation tables are
``case, dsc, hd_mm, hd_ab, hd_ba``.  Floats are written with ``repr`` so
the files round-trip losslessly and identical runs produce identical
bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .defects import TrainingCase
from .grid import UNBOUNDED, DomainError, Volume, binarize, crop
from .losses import DEFECT_CROP, FULL_VOLUME, LossReport, loss_gradient, rib_loss
from .metrics import MetricReport, metric_report
from .net import NetConfig, NetParams, OptState, adam_step, backward, forward, init_params


class TrainingDivergedError(RuntimeError):
    """The monitored loss stopped being finite; training halts immediately."""


@dataclass
class TrainResult:
    params: NetParams
    opt: OptState
    log: list[LossReport] = field(default_factory=list)


def _monitored(report: LossReport, kind: str) -> float:
    if kind == "dice":
        return report.dice
    if kind == "mse":
        return report.mse
    if kind == "mse+err":
        return report.mse + report.err
    return report.rib


def _case_pass(
    params: NetParams, case: TrainingCase, kind: str, region: str
) -> tuple[LossReport, dict[str, np.ndarray]]:
    out, cache = forward(params, case.defective)
    if region == DEFECT_CROP:
        pred = crop(out, case.box)
        truth = crop(case.implant, case.box)
    else:
        pred = out
        truth = case.implant
    report = rib_loss(pred, truth, region)
    grad = loss_gradient(kind, pred, truth)
    if region == DEFECT_CROP:
        full = np.zeros(out.data.shape)
        full[case.box.slices] = grad.data
        grad = Volume(full, out.spacing, UNBOUNDED)
    return report, backward(cache, grad)


def train(
    cases: list[TrainingCase],
    config: NetConfig,
    opt: OptState,
    steps: int,
    loss_kind: str = "mse+err+gf",
    seed: int = 0,
    region: str = DEFECT_CROP,
    params: NetParams | None = None,
) -> TrainResult:
    """Run ``steps`` Adam updates; deterministic given its arguments.

    ``params`` continues from an existing state (say, a loaded
    checkpoint); otherwise fresh parameters are drawn from ``seed``.
    With ``steps=0`` you get those initial parameters and an empty log.
    """
    if not cases:
        raise DomainError("need at least one training case")
    if steps < 0:
        raise DomainError(f"step count must be non-negative, got {steps}")
    if region not in (DEFECT_CROP, FULL_VOLUME):
        raise DomainError(f"unknown loss region {region!r}")
    if params is None:
        params = init_params(config, seed)
    result = TrainResult(params=params, opt=opt)

    consumed = 0
    for step in range(1, steps + 1):
        acc: dict[str, np.ndarray] | None = None
        reports: list[LossReport] = []
        for _ in range(opt.batch_size):
            case = cases[consumed % len(cases)]
            consumed += 1
            report, grads = _case_pass(params, case, loss_kind, region)
            reports.append(report)
            if acc is None:
                acc = grads
            else:
                for name in acc:
                    acc[name] += grads[name]
        assert acc is not None
        if opt.batch_size > 1:
            for name in acc:
                acc[name] /= opt.batch_size
        k = len(reports)
        mean = LossReport(
            dice=sum(r.dice for r in reports) / k,
            mse=sum(r.mse for r in reports) / k,
            err=sum(r.err for r in reports) / k,
            gf=sum(r.gf for r in reports) / k,
            rib=sum(r.rib for r in reports) / k,
            n=reports[0].n,
            region=region,
        )
        if not math.isfinite(_monitored(mean, loss_kind)):
            raise TrainingDivergedError(
                f"non-finite {loss_kind} loss at step {step}: "
                f"dice={mean.dice!r} mse={mean.mse!r} err={mean.err!r} gf={mean.gf!r}"
            )
        result.log.append(mean)
        adam_step(params, acc, opt)
    return result


def train_log_csv(log: list[LossReport]) -> str:
    lines = ["step,dice,mse,err,gf,rib"]
    for i, r in enumerate(log, start=1):
        lines.append(f"{i},{r.dice!r},{r.mse!r},{r.err!r},{r.gf!r},{r.rib!r}")
    return "\n".join(lines) + "\n"


def evaluate(
    params: NetParams,
    cases: list[TrainingCase],
    threshold: float = 0.5,
    percentile: float = 100.0,
) -> list[MetricReport]:
    """Binarise each prediction on its defect crop and score against truth.

    An all-background prediction crop has no surface and raises through
    the Hausdorff machinery rather than scoring a made-up distance.
    """
    out: list[MetricReport] = []
    for case in cases:
        pred_vol = forward(params, case.defective)[0]
        pred = binarize(crop(pred_vol, case.box), threshold)
        truth = crop(case.implant, case.box)
        out.append(metric_report(pred, truth, percentile))
    return out


def eval_csv(ids: list[str], reports: list[MetricReport]) -> str:
    if len(ids) != len(reports):
        raise DomainError(f"{len(ids)} ids for {len(reports)} reports")
    lines = ["case,dsc,hd_mm,hd_ab,hd_ba"]
    for cid, r in zip(ids, reports):
        lines.append(f"{cid},{r.dsc!r},{r.hd!r},{r.hd_ab!r},{r.hd_ba!r}")
    return "\n".join(lines) + "\n"
