"""Network blocks, gradient checks, optimiser behaviour, checkpoints."""

import numpy as np
import pytest

import ribfill.net as netmod
from conftest import net_fd_worst, smooth_net_case, unit_volume
from ribfill.grid import UNIT, DomainError, ShapeError, Volume
from ribfill.losses import loss_gradient, loss_value
from ribfill.net import (
    CheckpointError,
    NetConfig,
    NetParams,
    OptState,
    adam_step,
    backward,
    forward,
    full_scale_opt,
    init_params,
    load_checkpoint,
    n_params,
    save_checkpoint,
)

S = (1.0, 1.0, 1.0)


def test_config_validation_and_plan():
    with pytest.raises(DomainError):
        NetConfig(depth=0)
    with pytest.raises(DomainError):
        NetConfig(base_channels=0)
    plan = NetConfig(depth=2, base_channels=8).layer_plan()
    names = [p[0] for p in plan]
    assert names == ["enc0", "enc1", "bott", "dec1.reduce", "dec1.merge", "dec0.reduce", "dec0.merge", "head"]
    assert plan[0][1:] == (1, 8)
    assert plan[2][1:] == (16, 32)
    assert plan[-1][1:] == (8, 1)


def test_tiny_config_stays_small():
    params = init_params(NetConfig(depth=1, base_channels=1), seed=0)
    assert n_params(params) <= 500


def test_init_is_seeded_and_fan_in_scaled():
    a = init_params(NetConfig(depth=1, base_channels=2), seed=3)
    b = init_params(NetConfig(depth=1, base_channels=2), seed=3)
    c = init_params(NetConfig(depth=1, base_channels=2), seed=4)
    for name in a.tensors:
        assert np.array_equal(a.tensors[name], b.tensors[name])
    assert any(not np.array_equal(a.tensors[n], c.tensors[n]) for n in a.tensors)
    w = a.tensors["enc0.w"]
    assert np.abs(w).max() <= 1.0 / np.sqrt(27)
    assert np.all(a.tensors["enc0.b"] == 0.0)
    wb = a.tensors["bott.w"]  # fan-in 2*27
    assert np.abs(wb).max() <= 1.0 / np.sqrt(54)


def test_zero_weights_give_half_everywhere():
    params = init_params(NetConfig(depth=1, base_channels=2), seed=0)
    for t in params.tensors.values():
        t[:] = 0.0
    rng = np.random.default_rng(0)
    out, _ = forward(params, unit_volume(rng, (8, 8, 8)))
    assert np.all(out.data == 0.5)


def test_forward_output_contract():
    rng = np.random.default_rng(1)
    params = init_params(NetConfig(depth=2, base_channels=2), seed=1)
    v = unit_volume(rng, (8, 8, 8), spacing=(2.0, 3.0, 4.0))
    out, cache = forward(params, v)
    assert out.dims == v.dims
    assert out.spacing == v.spacing
    assert out.domain == UNIT
    assert np.all((out.data > 0.0) & (out.data < 1.0))
    out2, _ = forward(params, v)
    assert np.array_equal(out.data, out2.data)


def test_forward_rejects_bad_input():
    params = init_params(NetConfig(depth=2, base_channels=2), seed=0)
    rng = np.random.default_rng(2)
    with pytest.raises(ShapeError):
        forward(params, unit_volume(rng, (6, 8, 8)))  # 6 not divisible by 4
    hu = Volume(np.zeros((8, 8, 8)), S, "HU")
    with pytest.raises(DomainError):
        forward(params, hu)


def test_backward_rejects_mismatched_gradient():
    rng = np.random.default_rng(3)
    params = init_params(NetConfig(depth=1, base_channels=2), seed=0)
    _, cache = forward(params, unit_volume(rng, (8, 8, 8)))
    bad = Volume(np.zeros((4, 4, 4)), S)
    with pytest.raises(ShapeError):
        backward(cache, bad)


def test_maxpool_ties_route_to_first_in_scan_order():
    x = np.zeros((1, 2, 2, 2))
    x[0] = 1.0  # all eight candidates tie
    y, idx = netmod._maxpool2(x)
    assert y.reshape(-1).tolist() == [1.0]
    assert idx.reshape(-1).tolist() == [0]  # (dz, dy, dx) = (0, 0, 0)
    g = netmod._maxpool2_grad(np.full((1, 1, 1, 1), 5.0), idx)
    assert g[0, 0, 0, 0] == 5.0
    assert g.sum() == 5.0
    # a tie only along x still picks the smaller x
    x2 = np.zeros((1, 2, 2, 2))
    x2[0, 1, 1, 0] = 2.0
    x2[0, 1, 1, 1] = 2.0
    _, idx2 = netmod._maxpool2(x2)
    assert idx2.reshape(-1).tolist() == [6]  # dz=1, dy=1, dx=0


def test_conv_matches_direct_computation():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 4, 5, 6))
    w = rng.normal(size=(2, 3, 3, 3, 3))
    b = rng.normal(size=2)
    y = netmod._conv3(x, netmod._w2(w), b)
    xp = np.zeros((3, 6, 7, 8))
    xp[:, 1:-1, 1:-1, 1:-1] = x
    ref = np.zeros((2, 4, 5, 6))
    for co in range(2):
        for dz in range(3):
            for dy in range(3):
                for dx in range(3):
                    for ci in range(3):
                        ref[co] += w[co, ci, dz, dy, dx] * xp[ci, dz : dz + 4, dy : dy + 5, dx : dx + 6]
        ref[co] += b[co]
    assert np.allclose(y, ref, rtol=0, atol=1e-12)


def test_net_parameter_gradients_match_finite_differences():
    params, x, g, _ = smooth_net_case(NetConfig(depth=1, base_channels=2), start_seed=5)
    assert net_fd_worst(params, x, g, stride=3) < 1e-3


def test_adam_worked_example():
    params = NetParams(config=NetConfig(), tensors={"p.w": np.array([1.0])})
    opt = OptState(lr=0.001, weight_decay=0.0)
    adam_step(params, {"p.w": np.array([1.0])}, opt)
    # first step: mhat = g, vhat = g^2, so p moves by ~lr
    assert params.tensors["p.w"][0] == pytest.approx(0.999, abs=1e-6)
    assert opt.step == 1


def test_adam_weight_decay_is_coupled():
    # with zero raw gradient, decay alone still shrinks the parameter
    params = NetParams(config=NetConfig(), tensors={"p.w": np.array([2.0])})
    opt = OptState(lr=0.1, weight_decay=0.5)
    adam_step(params, {"p.w": np.array([0.0])}, opt)
    # g = wd * p = 1.0; first-step update = lr * g / (|g| + eps) ~ lr
    assert params.tensors["p.w"][0] == pytest.approx(1.9, abs=1e-6)


def test_adam_validates_inputs():
    params = NetParams(config=NetConfig(), tensors={"p.w": np.array([1.0])})
    opt = OptState()
    with pytest.raises(ShapeError):
        adam_step(params, {}, opt)
    with pytest.raises(ShapeError):
        adam_step(params, {"p.w": np.zeros(3)}, opt)
    with pytest.raises(DomainError):
        OptState(lr=0.0)
    with pytest.raises(DomainError):
        OptState(beta1=1.0)
    with pytest.raises(DomainError):
        OptState(batch_size=0)


def test_full_scale_opt_quotes_reference_settings():
    opt = full_scale_opt()
    assert opt.lr == 1e-5
    assert opt.batch_size == 2
    assert opt.weight_decay == 1e-4


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    params = init_params(NetConfig(depth=2, base_channels=2), seed=9)
    opt = OptState(lr=3e-4, weight_decay=1e-3, batch_size=2)
    grads = {k: rng.normal(size=v.shape) for k, v in params.tensors.items()}
    adam_step(params, grads, opt)
    path = tmp_path / "ck.bin"
    save_checkpoint(path, params, opt)
    params2, opt2 = load_checkpoint(path)
    assert params2.config == params.config
    for name in params.tensors:
        assert np.array_equal(params2.tensors[name], params.tensors[name])
        assert np.array_equal(opt2.m[name], opt.m[name])
        assert np.array_equal(opt2.v[name], opt.v[name])
    assert (opt2.lr, opt2.weight_decay, opt2.batch_size, opt2.step) == (3e-4, 1e-3, 2, 1)
    # byte-stability: saving the loaded state reproduces the file
    path2 = tmp_path / "ck2.bin"
    save_checkpoint(path2, params2, opt2)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_rejects_foreign_files(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"GIF89a not a checkpoint")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)
    params = init_params(NetConfig(depth=1, base_channels=1), seed=0)
    good = tmp_path / "good.bin"
    save_checkpoint(good, params, OptState())
    raw = bytearray(good.read_bytes())
    raw[4] = 99  # version
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)
    path.write_bytes(good.read_bytes()[:-4])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)
