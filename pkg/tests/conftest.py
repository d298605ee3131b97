"""Shared helpers plus a per-criterion summary for the acceptance tests."""

import re

import numpy as np
import pytest

from ribfill.grid import UNIT, Mask, Volume


def unit_volume(rng, dims, spacing=(1.0, 1.0, 1.0)):
    w, h, d = dims
    return Volume(rng.uniform(0.0, 1.0, size=(d, h, w)), spacing, UNIT)


def random_mask(rng, dims, density, spacing=(1.0, 1.0, 1.0)):
    w, h, d = dims
    return Mask((rng.uniform(size=(d, h, w)) < density).astype(np.float64), spacing)


def _relu_preacts(params, cache):
    from ribfill import net as netmod

    t = params.tensors
    pres = []
    for i, xin in enumerate(cache.enc_in):
        pres.append(netmod._conv3(xin, netmod._w2(t[f"enc{i}.w"]), t[f"enc{i}.b"]))
    pres.append(netmod._conv3(cache.bott_in, netmod._w2(t["bott.w"]), t["bott.b"]))
    for i in cache.red_in:
        pres.append(
            netmod._conv3(cache.red_in[i], netmod._w2(t[f"dec{i}.reduce.w"]), t[f"dec{i}.reduce.b"])
        )
        pres.append(
            netmod._conv3(cache.mrg_in[i], netmod._w2(t[f"dec{i}.merge.w"]), t[f"dec{i}.merge.b"])
        )
    return pres


def _pool_gaps(cache):
    gaps = []
    for y in cache.enc_out:
        c, d, h, w = y.shape
        w8 = (
            y.reshape(c, d // 2, 2, h // 2, 2, w // 2, 2)
            .transpose(0, 1, 3, 5, 2, 4, 6)
            .reshape(c, d // 2, h // 2, w // 2, 8)
        )
        srt = np.sort(w8, axis=-1)
        top, second = srt[..., -1], srt[..., -2]
        gaps.append(np.where(top > 0, top - second, np.inf))
    return gaps


def smooth_net_case(config, start_seed, relu_margin=1e-5, pool_margin=1e-4):
    """First seeded (params, input, target) clear of relu kinks and pooling ties.

    Finite differences on the net are only trustworthy where a parameter nudge
    cannot flip a relu sign or a pooling argmax, so seeds whose pre-activations
    or pooling gaps sit inside the margins are passed over.
    """
    from ribfill.net import forward, init_params

    seed = start_seed
    while True:
        rng = np.random.default_rng(seed)
        params = init_params(config, seed=seed)
        x = unit_volume(rng, (8, 8, 8))
        g = unit_volume(rng, (8, 8, 8))
        _, cache = forward(params, x)
        clear = all(np.abs(p).min() > relu_margin for p in _relu_preacts(params, cache))
        clear = clear and all(g2.min() > pool_margin for g2 in _pool_gaps(cache))
        if clear:
            return params, x, g, seed
        seed += 1


def net_fd_worst(params, x, g, kind="mse+err+gf", h=1e-6, resolve_floor=2e-7, stride=1):
    """Worst relative error of analytic vs central-difference parameter gradients.

    Gradients below ``resolve_floor`` are beyond what the difference quotient
    can resolve in float64; those probes instead assert the numeric estimate is
    itself negligible, so a dropped term would still surface.
    """
    from ribfill.losses import loss_gradient, loss_value
    from ribfill.net import backward, forward

    out, cache = forward(params, x)
    grads = backward(cache, loss_gradient(kind, out, g))
    worst = 0.0
    for name, p in params.tensors.items():
        flat = p.reshape(-1)
        gflat = grads[name].reshape(-1)
        for j in range(0, flat.size, stride):
            orig = flat[j]
            flat[j] = orig + h
            fp = loss_value(kind, forward(params, x)[0], g)
            flat[j] = orig - h
            fm = loss_value(kind, forward(params, x)[0], g)
            flat[j] = orig
            numeric = (fp - fm) / (2 * h)
            if abs(gflat[j]) < resolve_floor:
                assert abs(numeric) < 1e-6, f"{name}[{j}]: analytic ~0 but numeric {numeric}"
                continue
            rel = abs(gflat[j] - numeric) / max(abs(gflat[j]), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst


_TITLES = {
    1: "full-scale results documented as out of reach",
    2: "loss gradients match finite differences",
    3: "network parameter gradients match finite differences",
    4: "hausdorff and edt equal their brute-force oracles exactly",
    5: "defect split partitions the stencil on 50 phantom cases",
    6: "single-case overfit reaches the loss and dsc bars",
    7: "err and gf move the right way under targeted edits",
    8: "reruns are bitwise identical",
    9: "float32 volume io round trips bit for bit",
}
_outcomes = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_c(\d+)", report.nodeid)
    if not m:
        return
    crit = int(m.group(1))
    if report.when == "call":
        _outcomes[crit] = report.outcome
    elif report.when == "setup" and report.outcome != "passed":
        _outcomes[crit] = "error" if report.failed else report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_TITLES):
        outcome = _outcomes.get(crit, "not run")
        flag = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"criterion {crit}: {flag} - {_TITLES[crit]}")
