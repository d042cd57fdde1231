"""Hand-rolled policy network: conv trunk, spatial soft-argmax, MLP head.

Everything is plain numpy.  Convolutions are valid cross-correlations done as
im2col + GEMM; backward passes reuse the cached column matrices so each
gradient is one GEMM plus k*k strided adds.  Training runs in float32; the
gradient tests rebuild the same graph in float64 and compare against central
finite differences.

Parameters live in a flat name -> array dict per ensemble member.  Dense
layers use the y = x @ W + b convention with W shaped (in, out).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .checksum import crc32c
from .dataset import ChecksumError, MagicError, NormStats, TruncationError
from .seeding import stream

MODEL_MAGIC = b"MVNN"
MODEL_VERSION = 1
ENSEMBLE_SIZE = 5
SSAM_TEMPERATURE = 1.0


@dataclass(frozen=True)
class ArchDescriptor:
    """Network shape; the default is the full policy net."""

    image_channels: int = 4
    image_h: int = 48
    image_w: int = 64
    proprio_dim: int = 13
    action_dim: int = 4
    hidden_dim: int = 512
    conv_channels: tuple = (32, 32, 32)
    conv_kernels: tuple = (5, 3, 3)
    conv_strides: tuple = (2, 1, 1)

    def feature_map_sizes(self) -> list[tuple[int, int]]:
        h, w = self.image_h, self.image_w
        sizes = []
        for k, s in zip(self.conv_kernels, self.conv_strides):
            h = (h - k) // s + 1
            w = (w - k) // s + 1
            if h <= 0 or w <= 0:
                raise ValueError("image too small for conv stack")
            sizes.append((h, w))
        return sizes

    @property
    def ssam_channels(self) -> int:
        return self.conv_channels[-1]

    @property
    def feature_dim(self) -> int:
        return 2 * self.ssam_channels + self.proprio_dim

    def to_u32_list(self) -> list[int]:
        out = [
            self.image_channels,
            self.image_h,
            self.image_w,
            self.proprio_dim,
            self.action_dim,
            self.hidden_dim,
            len(self.conv_channels),
        ]
        for c, k, s in zip(self.conv_channels, self.conv_kernels, self.conv_strides):
            out.extend([c, k, s])
        return out

    @staticmethod
    def from_u32_list(vals: list[int]) -> "ArchDescriptor":
        ic, h, w, p, a, hid, nconv = vals[:7]
        triples = vals[7 : 7 + 3 * nconv]
        return ArchDescriptor(
            image_channels=ic,
            image_h=h,
            image_w=w,
            proprio_dim=p,
            action_dim=a,
            hidden_dim=hid,
            conv_channels=tuple(triples[0::3]),
            conv_kernels=tuple(triples[1::3]),
            conv_strides=tuple(triples[2::3]),
        )


def policy_arch(action_dim: int) -> ArchDescriptor:
    return ArchDescriptor(action_dim=action_dim)


GRADCHECK_ARCH = ArchDescriptor(
    image_channels=4,
    image_h=12,
    image_w=16,
    proprio_dim=5,
    action_dim=3,
    hidden_dim=16,
    conv_channels=(8, 8, 8),
    conv_kernels=(3, 3, 3),
    conv_strides=(1, 2, 1),
)


# ---------------------------------------------------------------------------
# primitive ops


def _filter_matrix(w):
    """(O,C,k,k) filters as a (k*k*C, O) GEMM operand."""
    o = w.shape[0]
    return np.ascontiguousarray(w.transpose(2, 3, 1, 0).reshape(-1, o))


def conv2d_forward(x, w, b, stride):
    """Valid cross-correlation.  x (B,H,W,C), w (O,C,k,k) -> (B,H',W',O).

    Channels-last keeps the im2col gather contiguous over C.  Also returns
    the column matrix for the backward pass.
    """
    bsz, h, wdt, c = x.shape
    o, cw, k, k2 = w.shape
    if cw != c or k != k2:
        raise ValueError(f"filter shape {w.shape} incompatible with input {x.shape}")
    if h < k or wdt < k:
        raise ValueError("kernel larger than input")
    ho = (h - k) // stride + 1
    wo = (wdt - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(bsz * ho * wo, k * k * c)
    out = cols @ _filter_matrix(w) + b
    return out.reshape(bsz, ho, wo, o), cols


def conv2d_backward(dout, cols, x_shape, w, stride, need_dx=True):
    bsz, h, wdt, c = x_shape
    o, _, k, _ = w.shape
    _, ho, wo, _ = dout.shape
    dflat = dout.reshape(-1, o)
    dw = np.ascontiguousarray((dflat.T @ cols).reshape(o, k, k, c).transpose(0, 3, 1, 2))
    db = dflat.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = dflat @ _filter_matrix(w).T
    dwin = dcols.reshape(bsz, ho, wo, k, k, c)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for di in range(k):
        for dj in range(k):
            dx[:, di : di + ho * stride : stride, dj : dj + wo * stride : stride, :] += dwin[
                :, :, :, di, dj, :
            ]
    return dx, dw, db


def relu(x):
    return np.maximum(x, 0.0)


def spatial_soft_argmax(a, temperature=SSAM_TEMPERATURE):
    """Expected pixel-center coordinates under a per-channel spatial softmax.

    a is (B,H,W,C).  Returns (coords (B, 2C) as interleaved (x, y) pairs,
    softmax weights (B,HW,C), activation magnitudes (B,C) = per-channel max).
    Coordinates live on linspace(-1, 1, N) grids (x along width, y along
    height), so a top-left spike maps to (-1, -1).
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    bsz, h, w, c = a.shape
    flat = a.reshape(bsz, h * w, c)
    scaled = flat / temperature
    m = scaled.max(axis=1, keepdims=True)
    e = np.exp(scaled - m)
    s = e / e.sum(axis=1, keepdims=True)
    gx = np.tile(np.linspace(-1.0, 1.0, w, dtype=a.dtype), h)
    gy = np.repeat(np.linspace(-1.0, 1.0, h, dtype=a.dtype), w)
    x = np.tensordot(s, gx, axes=([1], [0]))
    y = np.tensordot(s, gy, axes=([1], [0]))
    coords = np.stack([x, y], axis=-1).reshape(bsz, 2 * c)
    mags = flat.max(axis=1)
    return coords, s, mags


def spatial_soft_argmax_backward(dcoords, s, shape, temperature=SSAM_TEMPERATURE):
    """Gradient of the coords output w.r.t. the input map (magnitudes excluded)."""
    bsz, h, w, c = shape
    dtype = s.dtype
    gx = np.tile(np.linspace(-1.0, 1.0, w, dtype=dtype), h)
    gy = np.repeat(np.linspace(-1.0, 1.0, h, dtype=dtype), w)
    d = dcoords.reshape(bsz, c, 2)
    # Upstream gradient on each grid cell through the expectation.
    g = d[:, :, 0].reshape(bsz, 1, c) * gx[None, :, None]
    g = g + d[:, :, 1].reshape(bsz, 1, c) * gy[None, :, None]
    inner = (s * g).sum(axis=1, keepdims=True)
    da = s * (g - inner) / temperature
    return da.reshape(bsz, h, w, c)


def mse_loss(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return loss, grad


def adam_step(params, grads, m, v, t, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update over a parameter dict; t is 1-based."""
    if t < 1:
        raise ValueError("adam t must be >= 1")
    b1t = 1.0 - beta1**t
    b2t = 1.0 - beta2**t
    for name, g in grads.items():
        p = params[name]
        m[name] = beta1 * m[name] + (1.0 - beta1) * g
        v[name] = beta2 * v[name] + (1.0 - beta2) * (g * g)
        mhat = m[name] / b1t
        vhat = v[name] / b2t
        p -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)


def orthogonal_init(shape, gain, rng):
    """Orthogonal matrix reshaped to ``shape``; conv filters as (out, rest)."""
    shape = tuple(int(d) for d in shape)
    if len(shape) < 2 or any(d <= 0 for d in shape):
        raise ValueError(f"cannot orthogonalize shape {shape}")
    rows = shape[0]
    cols = int(np.prod(shape[1:]))
    flat = rng.standard_normal((rows, cols))
    if rows < cols:
        flat = flat.T
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray((gain * q).reshape(shape))


# ---------------------------------------------------------------------------
# policy network


PARAM_ORDER = [
    "conv1_w",
    "conv1_b",
    "conv2_w",
    "conv2_b",
    "conv3_w",
    "conv3_b",
    "fc1_w",
    "fc1_b",
    "fc2_w",
    "fc2_b",
    "out_w",
    "out_b",
]


def init_policy(arch: ArchDescriptor, member_seed: int, dtype=np.float32) -> dict:
    rng = stream(member_seed, "init")
    c_in = arch.image_channels
    params = {}
    gain = float(np.sqrt(2.0))
    for i, (c, k, _) in enumerate(
        zip(arch.conv_channels, arch.conv_kernels, arch.conv_strides), start=1
    ):
        params[f"conv{i}_w"] = orthogonal_init((c, c_in, k, k), gain, rng).astype(dtype)
        params[f"conv{i}_b"] = np.zeros(c, dtype=dtype)
        c_in = c
    dims = [arch.feature_dim, arch.hidden_dim, arch.hidden_dim, arch.action_dim]
    names = ["fc1", "fc2", "out"]
    for name, din, dout in zip(names, dims[:-1], dims[1:]):
        g = 1.0 if name == "out" else gain
        params[f"{name}_w"] = orthogonal_init((din, dout), g, rng).astype(dtype)
        params[f"{name}_b"] = np.zeros(dout, dtype=dtype)
    return params


def forward(params: dict, images, proprio, arch: ArchDescriptor, want_cache=False):
    """Policy forward pass on a batch.

    images (B,H,W,4) channels-last, proprio (B,P) -> normalized actions (B,A).
    With want_cache=True also returns everything backward() needs.
    """
    acts = {}
    x = images
    convs = []
    for i, s in enumerate(arch.conv_strides, start=1):
        pre, cols = conv2d_forward(x, params[f"conv{i}_w"], params[f"conv{i}_b"], s)
        post = relu(pre)
        convs.append((x.shape, cols, pre))
        x = post
    coords, smax, mags = spatial_soft_argmax(x)
    feat = np.concatenate([coords, proprio], axis=1)
    z1 = feat @ params["fc1_w"] + params["fc1_b"]
    a1 = relu(z1)
    z2 = a1 @ params["fc2_w"] + params["fc2_b"]
    a2 = relu(z2)
    out = a2 @ params["out_w"] + params["out_b"]
    if not want_cache:
        return out
    acts.update(
        convs=convs, ssam_input_shape=x.shape, smax=smax, feat=feat,
        z1=z1, a1=a1, z2=z2, a2=a2, mags=mags, coords=coords,
    )
    return out, acts


def backward(params: dict, cache: dict, dout, arch: ArchDescriptor) -> dict:
    grads = {}
    grads["out_w"] = cache["a2"].T @ dout
    grads["out_b"] = dout.sum(axis=0)
    da2 = dout @ params["out_w"].T
    dz2 = da2 * (cache["z2"] > 0)
    grads["fc2_w"] = cache["a1"].T @ dz2
    grads["fc2_b"] = dz2.sum(axis=0)
    da1 = dz2 @ params["fc2_w"].T
    dz1 = da1 * (cache["z1"] > 0)
    grads["fc1_w"] = cache["feat"].T @ dz1
    grads["fc1_b"] = dz1.sum(axis=0)
    dfeat = dz1 @ params["fc1_w"].T
    n_coords = 2 * arch.ssam_channels
    dcoords = dfeat[:, :n_coords]
    dx = spatial_soft_argmax_backward(dcoords, cache["smax"], cache["ssam_input_shape"])
    for i in range(len(arch.conv_strides), 0, -1):
        x_shape, cols, pre = cache["convs"][i - 1]
        dpre = dx * (pre > 0)
        dx, dw, db = conv2d_backward(
            dpre, cols, x_shape, params[f"conv{i}_w"], arch.conv_strides[i - 1], need_dx=(i > 1)
        )
        grads[f"conv{i}_w"] = dw
        grads[f"conv{i}_b"] = db
    return grads


def forward_features(params: dict, images, proprio, arch: ArchDescriptor):
    """Forward pass that also reports SSAM coords and activation magnitudes."""
    out, cache = forward(params, images, proprio, arch, want_cache=True)
    return out, cache["coords"], cache["mags"]


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class PolicyEnsemble:
    arch: ArchDescriptor
    members: list[dict]
    norm_stats: NormStats
    member_seeds: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.members) != ENSEMBLE_SIZE:
            raise ValueError(f"ensemble needs {ENSEMBLE_SIZE} members, got {len(self.members)}")


def ensemble_forward(ensemble: PolicyEnsemble, images, proprio):
    """Mean of member outputs, accumulated in fixed member-index order."""
    total = None
    for params in ensemble.members:
        out = forward(params, images, proprio, ensemble.arch)
        total = out if total is None else total + out
    return total / len(ensemble.members)


def ensemble_forward_features(ensemble: PolicyEnsemble, images, proprio):
    """Per-member outputs, coords, and magnitudes (for the feature analysis)."""
    outs, coords, mags = [], [], []
    for params in ensemble.members:
        o, c, m = forward_features(params, images, proprio, ensemble.arch)
        outs.append(o)
        coords.append(c)
        mags.append(m)
    return np.stack(outs), np.stack(coords), np.stack(mags)


# ---------------------------------------------------------------------------
# model file


def _pack_norm_stats(stats: NormStats) -> bytes:
    parts = [struct.pack("<I", len(stats.action_scale))]
    parts.append(np.asarray(stats.action_scale, dtype="<f4").tobytes())
    parts.append(struct.pack("<I", len(stats.proprio_mean)))
    parts.append(np.asarray(stats.proprio_mean, dtype="<f4").tobytes())
    parts.append(np.asarray(stats.proprio_std, dtype="<f4").tobytes())
    parts.append(struct.pack("<f", stats.depth_max))
    return b"".join(parts)


def _unpack_norm_stats(buf: bytes, off: int) -> tuple[NormStats, int]:
    (na,) = struct.unpack_from("<I", buf, off)
    off += 4
    scale = np.frombuffer(buf, dtype="<f4", count=na, offset=off).astype(np.float64)
    off += 4 * na
    (np_,) = struct.unpack_from("<I", buf, off)
    off += 4
    mean = np.frombuffer(buf, dtype="<f4", count=np_, offset=off).astype(np.float64)
    off += 4 * np_
    std = np.frombuffer(buf, dtype="<f4", count=np_, offset=off).astype(np.float64)
    off += 4 * np_
    (dmax,) = struct.unpack_from("<f", buf, off)
    off += 4
    return NormStats(scale, mean, std, float(dmax)), off


def ensemble_bytes(ensemble: PolicyEnsemble) -> bytes:
    arch_list = ensemble.arch.to_u32_list()
    parts = [MODEL_MAGIC, struct.pack("<I", MODEL_VERSION)]
    parts.append(struct.pack("<I", len(arch_list)))
    parts.append(struct.pack(f"<{len(arch_list)}I", *arch_list))
    parts.append(_pack_norm_stats(ensemble.norm_stats))
    parts.append(struct.pack("<I", len(ensemble.members)))
    seeds = ensemble.member_seeds or [0] * len(ensemble.members)
    for seed, params in zip(seeds, ensemble.members):
        parts.append(struct.pack("<Q", seed & 0xFFFFFFFFFFFFFFFF))
        parts.append(struct.pack("<I", len(PARAM_ORDER)))
        for name in PARAM_ORDER:
            arr = np.ascontiguousarray(params[name], dtype="<f4")
            nb = name.encode()
            parts.append(struct.pack("<I", len(nb)))
            parts.append(nb)
            parts.append(struct.pack("<I", arr.ndim))
            parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", crc32c(body))


def save_ensemble(path, ensemble: PolicyEnsemble) -> None:
    with open(path, "wb") as f:
        f.write(ensemble_bytes(ensemble))


def load_ensemble(path) -> PolicyEnsemble:
    raw = open(path, "rb").read()
    if len(raw) < 12:
        raise TruncationError(f"{path}: too short for a model file")
    if raw[:4] != MODEL_MAGIC:
        raise MagicError(f"{path}: bad magic {raw[:4]!r}")
    body, (stored_crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if crc32c(body) != stored_crc:
        raise ChecksumError(f"{path}: model checksum mismatch")
    off = 4
    (version,) = struct.unpack_from("<I", body, off)
    off += 4
    if version != MODEL_VERSION:
        raise MagicError(f"{path}: unsupported model version {version}")
    (n_arch,) = struct.unpack_from("<I", body, off)
    off += 4
    arch_list = list(struct.unpack_from(f"<{n_arch}I", body, off))
    off += 4 * n_arch
    arch = ArchDescriptor.from_u32_list(arch_list)
    stats, off = _unpack_norm_stats(body, off)
    (n_members,) = struct.unpack_from("<I", body, off)
    off += 4
    members, seeds = [], []
    try:
        for _ in range(n_members):
            (seed,) = struct.unpack_from("<Q", body, off)
            off += 8
            (n_params,) = struct.unpack_from("<I", body, off)
            off += 4
            params = {}
            for _ in range(n_params):
                (nlen,) = struct.unpack_from("<I", body, off)
                off += 4
                name = body[off : off + nlen].decode()
                off += nlen
                (ndim,) = struct.unpack_from("<I", body, off)
                off += 4
                shape = struct.unpack_from(f"<{ndim}I", body, off)
                off += 4 * ndim
                count = int(np.prod(shape))
                arr = np.frombuffer(body, dtype="<f4", count=count, offset=off)
                off += 4 * count
                params[name] = arr.reshape(shape).copy()
            members.append(params)
            seeds.append(seed)
    except struct.error as exc:
        raise TruncationError(f"{path}: truncated member block ({exc})") from exc
    return PolicyEnsemble(arch=arch, members=members, norm_stats=stats, member_seeds=seeds)
