"""A compact 3-D encoder-decoder with hand-written forward and backward.

Everything runs in float64 on the CPU.  Convolutions are 3x3x3, same
padding, evaluated as one GEMM per depth-block via an im2col patch buffer;
input gradients reuse the same fast path by convolving the upstream
gradient with the offset-flipped, in/out-swapped kernel, so no scatter operation
ever appears.  Downsampling is 2x2x2 max pooling (ties go to the first
maximal voxel in canonical x-fastest scan order), upsampling is
nearest-neighbour doubling.  Each decoder level halves the channel count
with a conv while still at the coarse resolution, doubles the grid, then
concatenates the encoder skip and merges with another conv.  The head is a
1x1x1 conv squashed by a sigmoid, so outputs live strictly inside (0, 1).

The optimiser is Adam with coupled L2 weight decay: ``wd * p`` is added to
the raw gradient before the moment updates, the classic (non-decoupled)
formulation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .grid import UNIT, DomainError, ShapeError, Volume

FULL_SCALE_LR = 1e-5
FULL_SCALE_BATCH = 2


class CheckpointError(ValueError):
    """An unreadable, foreign, or truncated checkpoint file."""


@dataclass(frozen=True)
class NetConfig:
    depth: int = 2
    base_channels: int = 8

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise DomainError(f"depth must be at least 1, got {self.depth}")
        if self.base_channels < 1:
            raise DomainError(f"base channels must be at least 1, got {self.base_channels}")

    def layer_plan(self) -> list[tuple[str, int, int]]:
        """(name, in_channels, out_channels) for every conv, in forward order."""
        plan: list[tuple[str, int, int]] = []
        c_in = 1
        for i in range(self.depth):
            c_out = self.base_channels << i
            plan.append((f"enc{i}", c_in, c_out))
            c_in = c_out
        plan.append(("bott", c_in, c_in * 2))
        for i in reversed(range(self.depth)):
            c = self.base_channels << i
            plan.append((f"dec{i}.reduce", c * 2, c))
            plan.append((f"dec{i}.merge", c * 2, c))
        plan.append(("head", self.base_channels, 1))
        return plan


@dataclass
class NetParams:
    config: NetConfig
    tensors: dict[str, np.ndarray]


def init_params(config: NetConfig, seed: int) -> NetParams:
    """Fan-in-scaled uniform weights, zero biases, one stream of draws."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, c_in, c_out in config.layer_plan():
        if name == "head":
            fan_in = c_in
            shape: tuple[int, ...] = (c_out, c_in)
        else:
            fan_in = c_in * 27
            shape = (c_out, c_in, 3, 3, 3)
        bound = 1.0 / np.sqrt(fan_in)
        tensors[f"{name}.w"] = rng.uniform(-bound, bound, size=shape)
        tensors[f"{name}.b"] = np.zeros(c_out)
    return NetParams(config=config, tensors=tensors)


def n_params(params: NetParams) -> int:
    return sum(t.size for t in params.tensors.values())


# ---------------------------------------------------------------------------
# conv kernels

_PATCH_BYTES = 64e6  # im2col buffer budget; sets the depth-block size


def _zblock(c_in: int, h: int, w: int, d: int) -> int:
    zb = int(_PATCH_BYTES // (27 * c_in * h * w * 8))
    return max(1, min(zb, d))


def _w2(w: np.ndarray) -> np.ndarray:
    """(Co, Ci, 3, 3, 3) -> (Co, 27*Ci) in the patch buffer's K order."""
    c_out, c_in = w.shape[:2]
    return np.ascontiguousarray(w.transpose(0, 2, 3, 4, 1)).reshape(c_out, 27 * c_in)


def _w2_flipped(w: np.ndarray) -> np.ndarray:
    """Kernel for the transposed conv: offsets flipped, in/out swapped."""
    c_out, c_in = w.shape[:2]
    wf = w[:, :, ::-1, ::-1, ::-1].transpose(1, 2, 3, 4, 0)
    return np.ascontiguousarray(wf).reshape(c_in, 27 * c_out)


def _fill_patches(pb: np.ndarray, xp: np.ndarray, z0: int, zc: int, h: int, w: int) -> None:
    for dz in range(3):
        for dy in range(3):
            for dx in range(3):
                pb[dz, dy, dx] = xp[:, z0 + dz : z0 + dz + zc, dy : dy + h, dx : dx + w]


def _conv3(x: np.ndarray, w2: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    """Same-padded 3x3x3 conv of (Ci, D, H, W) with a (Co, 27*Ci) kernel."""
    c_in, d, h, w = x.shape
    c_out = w2.shape[0]
    zb = _zblock(c_in, h, w, d)
    xp = np.zeros((c_in, d + 2, h + 2, w + 2))
    xp[:, 1:-1, 1:-1, 1:-1] = x
    y = np.empty((c_out, d, h, w))
    patch = np.empty((3, 3, 3, c_in, zb, h, w))
    for z0 in range(0, d, zb):
        zc = min(zb, d - z0)
        pb = patch if zc == zb else np.empty((3, 3, 3, c_in, zc, h, w))
        _fill_patches(pb, xp, z0, zc, h, w)
        np.matmul(
            w2,
            pb.reshape(27 * c_in, zc * h * w),
            out=y[:, z0 : z0 + zc].reshape(c_out, zc * h * w),
        )
    if bias is not None:
        y += bias[:, None, None, None]
    return y


def _conv3_param_grad(x: np.ndarray, gy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """d(loss)/d(w2) and d(loss)/d(bias) for one conv layer."""
    c_in, d, h, w = x.shape
    c_out = gy.shape[0]
    zb = _zblock(c_in, h, w, d)
    xp = np.zeros((c_in, d + 2, h + 2, w + 2))
    xp[:, 1:-1, 1:-1, 1:-1] = x
    gw2 = np.zeros((c_out, 27 * c_in))
    patch = np.empty((3, 3, 3, c_in, zb, h, w))
    for z0 in range(0, d, zb):
        zc = min(zb, d - z0)
        pb = patch if zc == zb else np.empty((3, 3, 3, c_in, zc, h, w))
        _fill_patches(pb, xp, z0, zc, h, w)
        gw2 += np.matmul(
            gy[:, z0 : z0 + zc].reshape(c_out, zc * h * w),
            pb.reshape(27 * c_in, zc * h * w).T,
        )
    gb = gy.sum(axis=(1, 2, 3))
    return gw2, gb


def _gw2_to_w(gw2: np.ndarray, c_in: int) -> np.ndarray:
    c_out = gw2.shape[0]
    return np.ascontiguousarray(gw2.reshape(c_out, 3, 3, 3, c_in).transpose(0, 4, 1, 2, 3))


# ---------------------------------------------------------------------------
# the remaining layer kernels


def _relu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.maximum(x, 0.0), x > 0.0


def _maxpool2(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2x2 max pool; returns pooled values and winner indices 0..7.

    The winner index encodes the in-block offset as dz*4 + dy*2 + dx, so
    argmax's first-hit rule resolves ties toward the earliest voxel in
    canonical x-fastest scan order.
    """
    c, d, h, w = x.shape
    xr = x.reshape(c, d // 2, 2, h // 2, 2, w // 2, 2)
    cand = np.ascontiguousarray(xr.transpose(0, 1, 3, 5, 2, 4, 6)).reshape(
        c, d // 2, h // 2, w // 2, 8
    )
    idx = cand.argmax(axis=-1)
    y = np.take_along_axis(cand, idx[..., None], axis=-1)[..., 0]
    return y, idx.astype(np.uint8)


def _maxpool2_grad(gy: np.ndarray, idx: np.ndarray) -> np.ndarray:
    c, d2, h2, w2 = gy.shape
    gc = np.zeros((c, d2, h2, w2, 8))
    np.put_along_axis(gc, idx[..., None].astype(np.intp), gy[..., None], axis=-1)
    gx = gc.reshape(c, d2, h2, w2, 2, 2, 2).transpose(0, 1, 4, 2, 5, 3, 6)
    return np.ascontiguousarray(gx).reshape(c, d2 * 2, h2 * 2, w2 * 2)


def _upsample2(x: np.ndarray) -> np.ndarray:
    return x.repeat(2, axis=1).repeat(2, axis=2).repeat(2, axis=3)


def _upsample2_grad(gy: np.ndarray) -> np.ndarray:
    c, d, h, w = gy.shape
    return gy.reshape(c, d // 2, 2, h // 2, 2, w // 2, 2).sum(axis=(2, 4, 6))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# forward / backward


class NetCache:
    """Everything the backward pass needs from one forward pass."""

    def __init__(self, params: NetParams, spacing: tuple[float, float, float]) -> None:
        self.params = params
        self.spacing = spacing
        self.enc_in: list[np.ndarray] = []
        self.enc_out: list[np.ndarray] = []
        self.enc_mask: list[np.ndarray] = []
        self.pool_idx: list[np.ndarray] = []
        self.bott_in: np.ndarray | None = None
        self.bott_mask: np.ndarray | None = None
        self.red_in: dict[int, np.ndarray] = {}
        self.red_mask: dict[int, np.ndarray] = {}
        self.mrg_in: dict[int, np.ndarray] = {}
        self.mrg_mask: dict[int, np.ndarray] = {}
        self.head_in: np.ndarray | None = None
        self.out: np.ndarray | None = None


def forward(params: NetParams, vol: Volume) -> tuple[Volume, NetCache]:
    """Run the net on one unit-domain volume; keeps a cache for backward."""
    if vol.domain != UNIT:
        raise DomainError(f"network input must be unit-domain, got {vol.domain!r}")
    cfg = params.config
    step = 1 << cfg.depth
    if any(n % step for n in vol.data.shape):
        raise ShapeError(
            f"dims {vol.dims} must be divisible by 2^depth = {step} for depth {cfg.depth}"
        )
    t = params.tensors
    cache = NetCache(params, vol.spacing)
    x = vol.data[None]

    for i in range(cfg.depth):
        cache.enc_in.append(x)
        x, mask = _relu(_conv3(x, _w2(t[f"enc{i}.w"]), t[f"enc{i}.b"]))
        cache.enc_mask.append(mask)
        cache.enc_out.append(x)
        x, idx = _maxpool2(x)
        cache.pool_idx.append(idx)

    cache.bott_in = x
    x, cache.bott_mask = _relu(_conv3(x, _w2(t["bott.w"]), t["bott.b"]))

    for i in reversed(range(cfg.depth)):
        cache.red_in[i] = x
        x, mask = _relu(_conv3(x, _w2(t[f"dec{i}.reduce.w"]), t[f"dec{i}.reduce.b"]))
        cache.red_mask[i] = mask
        x = _upsample2(x)
        x = np.concatenate([cache.enc_out[i], x], axis=0)
        cache.mrg_in[i] = x
        x, mask = _relu(_conv3(x, _w2(t[f"dec{i}.merge.w"]), t[f"dec{i}.merge.b"]))
        cache.mrg_mask[i] = mask

    cache.head_in = x
    c, d, h, w = x.shape
    logits = (t["head.w"] @ x.reshape(c, d * h * w) + t["head.b"][:, None]).reshape(1, d, h, w)
    out = _sigmoid(logits)
    cache.out = out
    return Volume(out[0], vol.spacing, UNIT), cache


def backward(cache: NetCache, grad_out: Volume) -> dict[str, np.ndarray]:
    """Parameter gradients given d(loss)/d(output); pairs with :func:`forward`.

    ``grad_out`` must match the cached output's dims; a cache can be used
    once per forward pass but repeatedly for different output gradients.
    """
    if cache.out is None:
        raise ShapeError("cache holds no completed forward pass")
    if grad_out.data.shape != cache.out.shape[1:]:
        raise ShapeError(
            f"gradient dims {grad_out.dims} do not match cached output {cache.out.shape[1:][::-1]}"
        )
    cfg = cache.params.config
    t = cache.params.tensors
    grads: dict[str, np.ndarray] = {}

    out = cache.out
    g = grad_out.data[None] * (out * (1.0 - out))

    x = cache.head_in
    c, d, h, w = x.shape
    g2 = g.reshape(1, d * h * w)
    grads["head.w"] = g2 @ x.reshape(c, d * h * w).T
    grads["head.b"] = g2.sum(axis=1)
    g = (t["head.w"].T @ g2).reshape(c, d, h, w)

    skip_grads: dict[int, np.ndarray] = {}
    for i in range(cfg.depth):
        w_m = t[f"dec{i}.merge.w"]
        g = g * cache.mrg_mask[i]
        gw2, gb = _conv3_param_grad(cache.mrg_in[i], g)
        grads[f"dec{i}.merge.w"] = _gw2_to_w(gw2, w_m.shape[1])
        grads[f"dec{i}.merge.b"] = gb
        g = _conv3(g, _w2_flipped(w_m), None)
        c_skip = cache.enc_out[i].shape[0]
        skip_grads[i] = g[:c_skip]
        g = _upsample2_grad(g[c_skip:])
        w_r = t[f"dec{i}.reduce.w"]
        g = g * cache.red_mask[i]
        gw2, gb = _conv3_param_grad(cache.red_in[i], g)
        grads[f"dec{i}.reduce.w"] = _gw2_to_w(gw2, w_r.shape[1])
        grads[f"dec{i}.reduce.b"] = gb
        g = _conv3(g, _w2_flipped(w_r), None)

    g = g * cache.bott_mask
    gw2, gb = _conv3_param_grad(cache.bott_in, g)
    grads["bott.w"] = _gw2_to_w(gw2, t["bott.w"].shape[1])
    grads["bott.b"] = gb
    g = _conv3(g, _w2_flipped(t["bott.w"]), None)

    for i in reversed(range(cfg.depth)):
        g = _maxpool2_grad(g, cache.pool_idx[i])
        g = g + skip_grads[i]
        g = g * cache.enc_mask[i]
        gw2, gb = _conv3_param_grad(cache.enc_in[i], g)
        grads[f"enc{i}.w"] = _gw2_to_w(gw2, t[f"enc{i}.w"].shape[1])
        grads[f"enc{i}.b"] = gb
        g = _conv3(g, _w2_flipped(t[f"enc{i}.w"]), None)

    return grads


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class OptState:
    """Adam with coupled L2 weight decay; moments live here, keyed like tensors."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    batch_size: int = 1
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise DomainError(f"betas must be in [0, 1), got {self.beta1}, {self.beta2}")
        if self.lr <= 0.0 or self.eps <= 0.0:
            raise DomainError(f"lr and eps must be positive, got {self.lr}, {self.eps}")
        if self.weight_decay < 0.0:
            raise DomainError(f"weight decay must be non-negative, got {self.weight_decay}")
        if self.batch_size < 1:
            raise DomainError(f"batch size must be at least 1, got {self.batch_size}")


def full_scale_opt() -> OptState:
    """The optimiser settings quoted for full-resolution runs."""
    return OptState(lr=FULL_SCALE_LR, batch_size=FULL_SCALE_BATCH)


def adam_step(params: NetParams, grads: dict[str, np.ndarray], opt: OptState) -> tuple[NetParams, OptState]:
    """One update, in place; returns the same objects for chaining.

    Weight decay is coupled: ``wd * p`` joins the gradient before the
    moment updates, so it is smoothed and rescaled like any other
    gradient contribution.
    """
    if set(grads) != set(params.tensors):
        missing = set(params.tensors) ^ set(grads)
        raise ShapeError(f"gradient keys do not match parameters: {sorted(missing)}")
    if not opt.m:
        opt.m = {k: np.zeros_like(p) for k, p in params.tensors.items()}
        opt.v = {k: np.zeros_like(p) for k, p in params.tensors.items()}
    opt.step += 1
    bc1 = 1.0 - opt.beta1**opt.step
    bc2 = 1.0 - opt.beta2**opt.step
    for name, p in params.tensors.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if opt.weight_decay != 0.0:
            g = g + opt.weight_decay * p
        m = opt.m[name]
        v = opt.v[name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (g * g)
        p -= opt.lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
    return params, opt


# ---------------------------------------------------------------------------
# checkpoints

_CKPT_MAGIC = b"RFCK"
_CKPT_VERSION = 1


def save_checkpoint(path, params: NetParams, opt: OptState) -> None:
    """Versioned little-endian binary dump of parameters and optimiser state."""
    cfg = params.config
    chunks: list[bytes] = [
        _CKPT_MAGIC,
        struct.pack("<I", _CKPT_VERSION),
        struct.pack("<II", cfg.depth, cfg.base_channels),
        struct.pack("<I", len(params.tensors)),
    ]
    for name, tensor in params.tensors.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", tensor.ndim))
        chunks.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        chunks.append(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    chunks.append(
        struct.pack(
            "<dddddIQ",
            opt.lr, opt.beta1, opt.beta2, opt.eps, opt.weight_decay,
            opt.batch_size, opt.step,
        )
    )
    have_moments = bool(opt.m)
    chunks.append(struct.pack("<B", int(have_moments)))
    if have_moments:
        for store in (opt.m, opt.v):
            for name in params.tensors:
                chunks.append(np.ascontiguousarray(store[name], dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, raw: bytes) -> None:
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"truncated checkpoint: wanted {n} bytes at offset {self.pos}")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> tuple[NetParams, OptState]:
    rd = _Reader(open(path, "rb").read())
    if rd.take(4) != _CKPT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    (version,) = rd.unpack("<I")
    if version != _CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    depth, base = rd.unpack("<II")
    config = NetConfig(depth=depth, base_channels=base)
    (n_tensors,) = rd.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = rd.unpack("<H")
        name = rd.take(name_len).decode("utf-8")
        (ndim,) = rd.unpack("<B")
        shape = rd.unpack(f"<{ndim}I")
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        tensors[name] = np.frombuffer(rd.take(count * 8), dtype="<f8").reshape(shape).copy()
    expected = {f"{name}.{suffix}" for name, _, _ in config.layer_plan() for suffix in ("w", "b")}
    if set(tensors) != expected:
        raise CheckpointError(f"tensor names do not match a {depth}/{base} net")
    lr, beta1, beta2, eps, wd, batch, step = rd.unpack("<dddddIQ")
    opt = OptState(
        lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=wd,
        batch_size=batch, step=step,
    )
    (have_moments,) = rd.unpack("<B")
    if have_moments:
        for store_name in ("m", "v"):
            store: dict[str, np.ndarray] = {}
            for name, tensor in tensors.items():
                raw = rd.take(tensor.size * 8)
                store[name] = np.frombuffer(raw, dtype="<f8").reshape(tensor.shape).copy()
            setattr(opt, store_name, store)
    if rd.pos != len(rd.raw):
        raise CheckpointError(f"{len(rd.raw) - rd.pos} unexpected trailing bytes")
    return NetParams(config=config, tensors=tensors), opt
