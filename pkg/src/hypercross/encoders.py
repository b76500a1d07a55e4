"""Dual residual-MLP encoders with hand-written backpropagation.

Each encoder is an input affine, `depth` pre-norm residual blocks
(layer-normalize, affine, ReLU, add input), a final layer normalization,
and an output affine producing a tangent vector at the hyperboloid origin;
:func:`forward` lifts that tangent onto the hyperboloid. The reference
setup uses depth 2 for the text encoder and depth 3 for the brain encoder.

Everything is float64 and deterministic: parameters are a pure function of
the config seed, and forward/backward are pure functions of their inputs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import FormatError

LAYER_NORM_EPS = 1e-5

CHECKPOINT_MAGIC = b"MNMCKPT1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    hidden_dim: int = 512
    output_dim: int = 64
    depth: int = 2
    seed: int = 0

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "output_dim", "depth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not 0 <= self.seed < 2 ** 32:
            raise ValueError("seed must fit in an unsigned 32-bit integer")


@dataclass
class BlockParams:
    gain: np.ndarray
    offset: np.ndarray
    w: np.ndarray
    b: np.ndarray


@dataclass
class EncoderParams:
    """Weights of one encoder; also reused as the container for gradients."""

    in_w: np.ndarray
    in_b: np.ndarray
    blocks: list[BlockParams]
    final_gain: np.ndarray
    final_offset: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        """(name, array) pairs in declaration order (checkpoint order)."""
        out = [("in_w", self.in_w), ("in_b", self.in_b)]
        for i, blk in enumerate(self.blocks):
            out += [
                (f"blocks.{i}.gain", blk.gain),
                (f"blocks.{i}.offset", blk.offset),
                (f"blocks.{i}.w", blk.w),
                (f"blocks.{i}.b", blk.b),
            ]
        out += [
            ("final_gain", self.final_gain),
            ("final_offset", self.final_offset),
            ("out_w", self.out_w),
            ("out_b", self.out_b),
        ]
        return out

    def arrays(self) -> list[np.ndarray]:
        return [arr for _, arr in self.tensors()]

    def decay_mask(self) -> list[bool]:
        """True for tensors subject to weight decay (weight matrices only)."""
        return [name.endswith("w") for name, _ in self.tensors()]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            in_w=self.in_w.copy(),
            in_b=self.in_b.copy(),
            blocks=[
                BlockParams(b.gain.copy(), b.offset.copy(), b.w.copy(), b.b.copy())
                for b in self.blocks
            ],
            final_gain=self.final_gain.copy(),
            final_offset=self.final_offset.copy(),
            out_w=self.out_w.copy(),
            out_b=self.out_b.copy(),
        )

    @staticmethod
    def zeros_like(other: "EncoderParams") -> "EncoderParams":
        z = other.copy()
        for arr in z.arrays():
            arr[...] = 0.0
        return z


def init_params(cfg: EncoderConfig) -> EncoderParams:
    """Seed-deterministic initialization.

    Weight matrices are uniform in +-1/sqrt(fan_in); biases are zero;
    normalization gains are one and offsets zero.
    """
    rng = np.random.default_rng(cfg.seed)

    def uniform(fan_out, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(fan_out, fan_in))

    h, d = cfg.hidden_dim, cfg.output_dim
    blocks = []
    in_w = uniform(h, cfg.input_dim)
    for _ in range(cfg.depth):
        blocks.append(
            BlockParams(
                gain=np.ones(h),
                offset=np.zeros(h),
                w=uniform(h, h),
                b=np.zeros(h),
            )
        )
    return EncoderParams(
        in_w=in_w,
        in_b=np.zeros(h),
        blocks=blocks,
        final_gain=np.ones(h),
        final_offset=np.zeros(h),
        out_w=uniform(d, h),
        out_b=np.zeros(d),
    )


def _layer_norm(h, gain, offset):
    mu = h.mean(axis=1, keepdims=True)
    var = np.mean((h - mu) ** 2, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = (h - mu) * inv
    return xhat * gain + offset, (xhat, inv)


def _layer_norm_backward(gout, gain, xhat, inv):
    g_gain = np.sum(gout * xhat, axis=0)
    g_offset = np.sum(gout, axis=0)
    gx = gout * gain
    gh = inv * (
        gx
        - gx.mean(axis=1, keepdims=True)
        - xhat * np.mean(gx * xhat, axis=1, keepdims=True)
    )
    return gh, g_gain, g_offset


def forward_tangent(params: EncoderParams, x: np.ndarray):
    """Map inputs (N, input_dim) to tangent vectors (N, d) plus a cache.

    The cache holds every intermediate :func:`backward` needs; batch rows
    never interact, so a batched forward equals per-sample forwards.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.in_w.shape[1]:
        raise ValueError(
            f"input width {x.shape[1]} != encoder input_dim {params.in_w.shape[1]}"
        )
    if not np.isfinite(x).all():
        raise ValueError("encoder input contains non-finite values")
    cache = {"x": x, "blocks": []}
    h = x @ params.in_w.T + params.in_b
    for blk in params.blocks:
        normed, (xhat, inv) = _layer_norm(h, blk.gain, blk.offset)
        a = normed @ blk.w.T + blk.b
        mask = a > 0.0
        cache["blocks"].append((h, xhat, inv, normed, mask))
        h = h + np.where(mask, a, 0.0)
    normed, (xhat, inv) = _layer_norm(h, params.final_gain, params.final_offset)
    cache["final"] = (xhat, inv, normed)
    z = normed @ params.out_w.T + params.out_b
    return z, cache


def forward(params: EncoderParams, x: np.ndarray, c: float = 1.0):
    """Encode inputs and lift them onto the hyperboloid (points, cache)."""
    z, cache = forward_tangent(params, x)
    return geometry.exp_map_origin(z, c), cache


def backward(params: EncoderParams, cache, grad_tangent: np.ndarray):
    """Exact reverse-mode pass from tangent-vector gradients.

    `grad_tangent` is d(loss)/d(tangent output), (N, d). Returns parameter
    gradients (an `EncoderParams`-shaped container, declaration order
    matching :meth:`EncoderParams.tensors`) and the gradient w.r.t. the
    input batch.
    """
    grad_tangent = np.atleast_2d(np.asarray(grad_tangent, dtype=np.float64))
    n = cache["x"].shape[0]
    if grad_tangent.shape != (n, params.out_b.shape[0]):
        raise ValueError(
            f"gradient shape {grad_tangent.shape} does not match cache/params "
            f"({n}, {params.out_b.shape[0]})"
        )
    if len(cache["blocks"]) != len(params.blocks):
        raise ValueError("cache depth does not match params depth")
    g = EncoderParams.zeros_like(params)

    xhat_f, inv_f, normed_f = cache["final"]
    g.out_w[...] = grad_tangent.T @ normed_f
    g.out_b[...] = grad_tangent.sum(axis=0)
    gh = grad_tangent @ params.out_w
    gh, g.final_gain[...], g.final_offset[...] = _layer_norm_backward(
        gh, params.final_gain, xhat_f, inv_f
    )

    for blk, gblk, (h_in, xhat, inv, normed, mask) in zip(
        reversed(params.blocks), reversed(g.blocks), reversed(cache["blocks"])
    ):
        ga = np.where(mask, gh, 0.0)  # residual branch through the ReLU
        gblk.w[...] = ga.T @ normed
        gblk.b[...] = ga.sum(axis=0)
        gnormed = ga @ blk.w
        gln, gblk.gain[...], gblk.offset[...] = _layer_norm_backward(
            gnormed, blk.gain, xhat, inv
        )
        gh = gh + gln  # skip connection

    g.in_w[...] = gh.T @ cache["x"]
    g.in_b[...] = gh.sum(axis=0)
    grad_input = gh @ params.in_w
    return g, grad_input


# ---------------------------------------------------------------------------
# checkpoint container: magic, u32 version, u32 config fields for the brain
# then text encoder (input_dim, hidden_dim, output_dim, depth, seed), then
# every parameter tensor in declaration order as little-endian f64.


def save_checkpoint(path, brain_cfg: EncoderConfig, brain_params: EncoderParams,
                    text_cfg: EncoderConfig, text_params: EncoderParams) -> None:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    for cfg in (brain_cfg, text_cfg):
        chunks.append(struct.pack(
            "<5I", cfg.input_dim, cfg.hidden_dim, cfg.output_dim,
            cfg.depth, cfg.seed,
        ))
    for params in (brain_params, text_params):
        for arr in params.arrays():
            chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path):
    """Read a checkpoint, returning (brain_cfg, brain_params, text_cfg,
    text_params). Raises FormatError on bad magic/version/truncation."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated checkpoint header")
    (version,) = struct.unpack_from("<I", blob, 8)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    cfgs = []
    for _ in range(2):
        if off + 20 > len(blob):
            raise FormatError(f"{path}: truncated checkpoint header")
        fields = struct.unpack_from("<5I", blob, off)
        off += 20
        try:
            cfgs.append(EncoderConfig(*fields))
        except ValueError as exc:
            raise FormatError(f"{path}: invalid config in header: {exc}") from exc
    out = []
    for cfg in cfgs:
        params = init_params(cfg)  # shape template; values overwritten below
        for arr in params.arrays():
            nbytes = arr.size * 8
            if off + nbytes > len(blob):
                raise FormatError(f"{path}: truncated checkpoint payload")
            arr[...] = np.frombuffer(
                blob, dtype="<f8", count=arr.size, offset=off
            ).reshape(arr.shape)
            off += nbytes
        out.append(params)
    if off != len(blob):
        raise FormatError(f"{path}: trailing bytes after checkpoint payload")
    return cfgs[0], out[0], cfgs[1], out[1]
