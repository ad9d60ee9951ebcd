"""Hierarchical 3-D shifted-window video transformers.

A clip of extents (T, H, W, 3) is cut into 2x4x4x3 blocks, each flattened to
a 96-vector and linearly embedded, giving a (T/2, H/4, W/4, C) token grid.
Four stages of window / shifted-window attention blocks follow, with a 2x2
spatial patch merge (channels doubled) between stages, then layer norm,
global average pooling and a linear classification head.

Three model sizes share the layout and differ only in channel width:
small C=96, base C=128, large C=192, with depths (2, 2, 18, 2).  A toy
variant (depths (1, 1, 2, 1), window (2, 2, 2)) keeps the same code path at
desk scale.

Attention windows never straddle the grid: grids are right-padded with zero
tokens to window multiples, and padded positions plus cross-region pairs
(under cyclic shift) are masked to -inf before the softmax.  Each token may
always attend to itself, so no row is fully masked.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import BinaryIO, Iterator

import numpy as np

from .errors import ContractError, FormatError, GeometryError, ShapeError
from .tensor import (
    Tensor,
    add,
    crop,
    gelu,
    index_first,
    layer_norm,
    matmul,
    pad_end,
    permute,
    reshape,
    roll,
    softmax,
    take_rows,
    tensor_mean,
)

PATCH = (2, 4, 4)
PATCH_FEATURES = PATCH[0] * PATCH[1] * PATCH[2] * 3  # 96

SIZE_CHANNELS = {"small": 96, "base": 128, "large": 192}
TOY_CHANNELS = {"small": 8, "base": 12, "large": 16}

FULL_DEPTHS = (2, 2, 18, 2)
TOY_DEPTHS = (1, 1, 2, 1)
FULL_WINDOW = (8, 7, 7)
TOY_WINDOW = (2, 2, 2)


@dataclass(frozen=True)
class VstConfig:
    """Static description of one video transformer."""

    size: str
    embed_dim: int
    depths: tuple[int, int, int, int]
    heads: tuple[int, int, int, int]
    window: tuple[int, int, int]
    num_classes: int
    input_geometry: tuple[int, int, int]  # (T, H, W)
    patch: tuple[int, int, int] = PATCH
    use_rel_pos_bias: bool = True
    drop_path_rate: float = 0.0

    def __post_init__(self):
        if self.embed_dim < 1 or self.num_classes < 1:
            raise ContractError("embed_dim and num_classes must be positive")
        if len(self.depths) != 4 or any(d < 1 for d in self.depths):
            raise ContractError(f"depths must be four positive integers, got {self.depths}")
        if len(self.heads) != 4 or any(h < 1 for h in self.heads):
            raise ContractError(f"heads must be four positive integers, got {self.heads}")
        if len(self.window) != 3 or any(w < 1 for w in self.window):
            raise ContractError(f"window must be three positive integers, got {self.window}")
        if self.patch != PATCH:
            raise ContractError(f"patch is fixed at {PATCH}")
        if not 0.0 <= self.drop_path_rate < 1.0:
            raise ContractError("drop_path_rate must lie in [0, 1)")
        for s in range(4):
            if (self.embed_dim * 2**s) % self.heads[s]:
                raise ContractError(
                    f"heads[{s}]={self.heads[s]} does not divide stage "
                    f"channels {self.embed_dim * 2**s}")

    def stage_channels(self, stage: int) -> int:
        return self.embed_dim * 2**stage


def make_config(size: str, num_classes: int,
                geometry: tuple[int, int, int] = (32, 224, 224),
                window: tuple[int, int, int] = FULL_WINDOW) -> VstConfig:
    """Full-scale config: small/base/large -> C 96/128/192, depths (2,2,18,2).

    Head counts follow the stage_channels/32 convention: small (3,6,12,24),
    base (4,8,16,32), large (6,12,24,48).
    """
    key = size.lower()
    if key not in SIZE_CHANNELS:
        raise ContractError(f"unknown size {size!r}; expected small, base or large")
    c = SIZE_CHANNELS[key]
    heads = tuple(c * 2**s // 32 for s in range(4))
    return VstConfig(size=key, embed_dim=c, depths=FULL_DEPTHS, heads=heads,
                     window=tuple(window), num_classes=int(num_classes),
                     input_geometry=tuple(int(g) for g in geometry))


def make_toy_config(size: str, num_classes: int,
                    geometry: tuple[int, int, int] = (8, 32, 32),
                    window: tuple[int, int, int] = TOY_WINDOW) -> VstConfig:
    """Desk-scale config: same layout, C 8/12/16, depths (1,1,2,1).

    Heads are (1, 2, 4, 8) so head width stays C at every stage.
    """
    key = size.lower()
    if key not in TOY_CHANNELS:
        raise ContractError(f"unknown size {size!r}; expected small, base or large")
    return VstConfig(size=key, embed_dim=TOY_CHANNELS[key], depths=TOY_DEPTHS,
                     heads=(1, 2, 4, 8), window=tuple(window),
                     num_classes=int(num_classes),
                     input_geometry=tuple(int(g) for g in geometry))


# ---------------------------------------------------------------------------
# geometry


def token_grid_extents(geometry: tuple[int, int, int]) -> tuple[int, int, int]:
    """Token extents (T/2, H/4, W/4) after patch embedding."""
    t, h, w = geometry
    if t < 2 or t % 2 or h < 4 or h % 4 or w < 4 or w % 4:
        raise GeometryError(
            f"clip geometry {geometry} not divisible by patch {PATCH}")
    return t // 2, h // 4, w // 4


def stage_grids(cfg: VstConfig) -> list[tuple[int, int, int]]:
    """Token extents entering each of the four stages."""
    t, h, w = token_grid_extents(cfg.input_geometry)
    grids = [(t, h, w)]
    for _ in range(3):
        if h % 2 or w % 2:
            raise GeometryError(
                f"patch merge needs even spatial extents, got ({t}, {h}, {w})")
        h, w = h // 2, w // 2
        grids.append((t, h, w))
    return grids


def effective_window(grid: tuple[int, int, int],
                     window: tuple[int, int, int]) -> tuple[int, int, int]:
    """Clamp the window to the grid along axes the grid cannot fill."""
    return tuple(min(g, w) for g, w in zip(grid, window))


def shift_offsets(grid: tuple[int, int, int],
                  window: tuple[int, int, int]) -> tuple[int, int, int]:
    """Half-window shifts; zero along axes covered by a single window."""
    eff = effective_window(grid, window)
    return tuple(w // 2 if g > w else 0 for g, w in zip(grid, eff))


def _padded_extents(grid, window):
    return tuple(-(-g // w) * w for g, w in zip(grid, window))


# ---------------------------------------------------------------------------
# window bookkeeping (pure numpy constants, cached)


@lru_cache(maxsize=None)
def rel_position_index(window: tuple[int, int, int]) -> np.ndarray:
    """Flattened pairwise offset index into a (2wT-1)(2wH-1)(2wW-1) table."""
    wt, wh, ww = window
    coords = np.stack(np.meshgrid(np.arange(wt), np.arange(wh), np.arange(ww),
                                  indexing="ij"), axis=-1).reshape(-1, 3)
    rel = coords[:, None, :] - coords[None, :, :]  # (L, L, 3)
    rel = rel + np.array([wt - 1, wh - 1, ww - 1])
    idx = (rel[..., 0] * (2 * wh - 1) * (2 * ww - 1)
           + rel[..., 1] * (2 * ww - 1)
           + rel[..., 2])
    return idx.astype(np.int64)


def rel_table_rows(window: tuple[int, int, int]) -> int:
    wt, wh, ww = window
    return (2 * wt - 1) * (2 * wh - 1) * (2 * ww - 1)


@lru_cache(maxsize=None)
def _window_mask(grid: tuple[int, int, int], window: tuple[int, int, int],
                 offsets: tuple[int, int, int]) -> np.ndarray | None:
    """Additive (num_windows, L, L) mask, or None when nothing is masked.

    Combines two effects on the padded, cyclically shifted grid: pairs from
    different pre-shift regions get -inf, and padded positions get -inf both
    ways.  The diagonal always stays 0 so every token can attend to itself.
    """
    padded = _padded_extents(grid, window)
    if padded == grid and all(o == 0 for o in offsets):
        return None

    # Region labels per axis in post-shift coordinates: interior, the tail
    # window's unwrapped part, and its wrapped part.
    axis_labels = []
    for g, p, w, s in zip(grid, padded, window, offsets):
        lab = np.zeros(p, dtype=np.int64)
        if s:
            lab[p - w:p - s] = 1
            lab[p - s:] = 2
        axis_labels.append(lab)
    region = (axis_labels[0][:, None, None] * 9
              + axis_labels[1][None, :, None] * 3
              + axis_labels[2][None, None, :])

    # Padded positions, expressed post-shift: valid positions are [0, g) per
    # axis pre-shift, so roll the validity mask along with the tokens.
    valid = np.zeros(padded, dtype=bool)
    valid[:grid[0], :grid[1], :grid[2]] = True
    valid = np.roll(valid, tuple(-s for s in offsets), (0, 1, 2))
    region = np.where(valid, region, -1)

    labels = _partition_index(region, padded, window)  # (nW, L)
    same = labels[:, :, None] == labels[:, None, :]
    both_valid = (labels[:, :, None] >= 0) & (labels[:, None, :] >= 0)
    allowed = same & both_valid
    length = labels.shape[1]
    allowed |= np.eye(length, dtype=bool)[None]
    if allowed.all():
        return None
    mask = np.where(allowed, 0.0, -np.inf)
    return mask


def _partition_index(volume: np.ndarray, extents, window) -> np.ndarray:
    """Partition an integer label volume into (num_windows, window_len)."""
    t, h, w = extents
    wt, wh, ww = window
    v = volume.reshape(t // wt, wt, h // wh, wh, w // ww, ww)
    v = v.transpose(0, 2, 4, 1, 3, 5)
    return v.reshape(-1, wt * wh * ww)


def attention_mask(grid_extents: tuple[int, int, int],
                   window: tuple[int, int, int],
                   offsets: tuple[int, int, int]) -> np.ndarray:
    """Per-window additive attention mask for a (possibly shifted) grid.

    Entry [k, i, j] is 0 when tokens i, j of window k may attend (same
    pre-shift region, neither padded, or i == j), else -inf.
    """
    grid_extents = tuple(int(g) for g in grid_extents)
    window = effective_window(grid_extents, tuple(int(w) for w in window))
    offsets = tuple(int(o) for o in offsets)
    if any(not 0 <= o < w for o, w in zip(offsets, window)):
        raise ContractError(f"offsets {offsets} must lie in [0, window) {window}")
    mask = _window_mask(grid_extents, window, offsets)
    if mask is None:
        padded = _padded_extents(grid_extents, window)
        n = math.prod(p // w for p, w in zip(padded, window))
        length = math.prod(window)
        return np.zeros((n, length, length))
    return mask.copy()


# ---------------------------------------------------------------------------
# grid ops (autodiff tensors; batched layout (B, T, H, W, C))


def window_partition(grid: Tensor, window: tuple[int, int, int]) -> Tensor:
    """Cut a (T, H, W, C) grid into (num_windows, wT*wH*wW, C) token matrices."""
    if grid.ndim != 4:
        raise ShapeError(f"window_partition needs a (T, H, W, C) grid, got {grid.shape}")
    batched = reshape(grid, (1,) + grid.shape)
    out = _partition_batched(batched, tuple(window))
    return out


def window_reverse(windows: Tensor, grid_extents: tuple[int, int, int],
                   window: tuple[int, int, int]) -> Tensor:
    """Inverse of :func:`window_partition`."""
    t, h, w = grid_extents
    c = windows.shape[-1]
    out = _reverse_batched(windows, 1, (t, h, w), tuple(window), c)
    return reshape(out, (t, h, w, c))


def _partition_batched(x: Tensor, window) -> Tensor:
    b, t, h, w, c = x.shape
    wt, wh, ww = window
    if t % wt or h % wh or w % ww:
        raise ShapeError(f"grid {(t, h, w)} not divisible by window {window}")
    x = reshape(x, (b, t // wt, wt, h // wh, wh, w // ww, ww, c))
    x = permute(x, (0, 1, 3, 5, 2, 4, 6, 7))
    return reshape(x, (b * (t // wt) * (h // wh) * (w // ww), wt * wh * ww, c))


def _reverse_batched(windows: Tensor, b: int, grid, window, c: int) -> Tensor:
    t, h, w = grid
    wt, wh, ww = window
    x = reshape(windows, (b, t // wt, h // wh, w // ww, wt, wh, ww, c))
    x = permute(x, (0, 1, 4, 2, 5, 3, 6, 7))
    return reshape(x, (b, t, h, w, c))


def cyclic_shift(grid: Tensor, offsets: tuple[int, int, int],
                 direction: int) -> Tensor:
    """Toroidal roll of token positions; direction -1 shifts, +1 unshifts."""
    if direction not in (-1, 1):
        raise ContractError(f"direction must be +1 or -1, got {direction}")
    if all(o == 0 for o in offsets):
        return grid
    if grid.ndim == 5:
        axes = (1, 2, 3)
    elif grid.ndim == 4:
        axes = (0, 1, 2)
    else:
        raise ShapeError(f"cyclic_shift needs a (B, T, H, W, C) or (T, H, W, C) "
                         f"grid, got {grid.shape}")
    shifts = tuple(direction * int(o) for o in offsets)
    return roll(grid, shifts, axes)


# ---------------------------------------------------------------------------
# parameters


def param_spec(cfg: VstConfig) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape table for every learnable tensor."""
    c = cfg.embed_dim
    spec: dict[str, tuple[int, ...]] = {
        "embed.proj.weight": (PATCH_FEATURES, c),
        "embed.proj.bias": (c,),
        "embed.norm.gain": (c,),
        "embed.norm.bias": (c,),
    }
    grids = stage_grids(cfg)
    for s in range(4):
        cs = cfg.stage_channels(s)
        win = effective_window(grids[s], cfg.window)
        for b in range(cfg.depths[s]):
            p = f"stage{s + 1}.block{b + 1}"
            spec[f"{p}.norm1.gain"] = (cs,)
            spec[f"{p}.norm1.bias"] = (cs,)
            spec[f"{p}.attn.qkv.weight"] = (cs, 3 * cs)
            spec[f"{p}.attn.qkv.bias"] = (3 * cs,)
            if cfg.use_rel_pos_bias:
                spec[f"{p}.attn.rel_bias.table"] = (rel_table_rows(win), cfg.heads[s])
            spec[f"{p}.attn.proj.weight"] = (cs, cs)
            spec[f"{p}.attn.proj.bias"] = (cs,)
            spec[f"{p}.norm2.gain"] = (cs,)
            spec[f"{p}.norm2.bias"] = (cs,)
            spec[f"{p}.ffn.fc1.weight"] = (cs, 4 * cs)
            spec[f"{p}.ffn.fc1.bias"] = (4 * cs,)
            spec[f"{p}.ffn.fc2.weight"] = (4 * cs, cs)
            spec[f"{p}.ffn.fc2.bias"] = (cs,)
        if s < 3:
            spec[f"merge{s + 1}.norm.gain"] = (4 * cs,)
            spec[f"merge{s + 1}.norm.bias"] = (4 * cs,)
            spec[f"merge{s + 1}.proj.weight"] = (4 * cs, 2 * cs)
    c_out = cfg.stage_channels(3)
    spec["head.norm.gain"] = (c_out,)
    spec["head.norm.bias"] = (c_out,)
    spec["head.fc.weight"] = (c_out, cfg.num_classes)
    spec["head.fc.bias"] = (cfg.num_classes,)
    return spec


def init_params(cfg: VstConfig, seed: int = 0) -> dict[str, Tensor]:
    """Fresh parameters: N(0, 0.02) weights, zero biases, unit norm gains."""
    rng = np.random.Generator(np.random.Philox(seed))
    params: dict[str, Tensor] = {}
    for name, shape in param_spec(cfg).items():
        if name.endswith(".gain"):
            data = np.ones(shape)
        elif name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, 0.02, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


def _check_params(cfg: VstConfig, params: dict[str, Tensor]) -> None:
    spec = param_spec(cfg)
    missing = [n for n in spec if n not in params]
    if missing:
        raise ContractError(f"params missing {len(missing)} entries, e.g. {missing[0]!r}")
    for name, shape in spec.items():
        if params[name].shape != shape:
            raise ShapeError(f"param {name!r} has shape {params[name].shape}, "
                             f"expected {shape}")


# ---------------------------------------------------------------------------
# forward pieces


def patch_partition_embed(clip: Tensor, cfg: VstConfig,
                          params: dict[str, Tensor]) -> Tensor:
    """(T, H, W, 3) or (B, T, H, W, 3) -> (..., T/2, H/4, W/4, C) tokens."""
    single = clip.ndim == 4
    x = reshape(clip, (1,) + clip.shape) if single else clip
    if x.ndim != 5 or x.shape[-1] != 3:
        raise GeometryError(f"expected clip extents (T, H, W, 3), got {clip.shape}")
    b, t, h, w, _ = x.shape
    gt, gh, gw = token_grid_extents((t, h, w))
    pt, ph, pw = PATCH
    x = reshape(x, (b, gt, pt, gh, ph, gw, pw, 3))
    x = permute(x, (0, 1, 3, 5, 2, 4, 6, 7))
    x = reshape(x, (b, gt, gh, gw, PATCH_FEATURES))
    flat = reshape(x, (b * gt * gh * gw, PATCH_FEATURES))
    tok = add(matmul(flat, params["embed.proj.weight"]), params["embed.proj.bias"])
    tok = layer_norm(tok, params["embed.norm.gain"], params["embed.norm.bias"])
    tok = reshape(tok, (b, gt, gh, gw, cfg.embed_dim))
    return reshape(tok, tok.shape[1:]) if single else tok


def _window_attention(x: Tensor, cfg: VstConfig, params: dict[str, Tensor],
                      stage: int, block: int, shifted: bool) -> Tensor:
    """Window MSA over a normalized (B, T, H, W, C) grid."""
    b, t, h, w, c = x.shape
    grid = (t, h, w)
    win = effective_window(grid, cfg.window)
    offsets = shift_offsets(grid, cfg.window) if shifted else (0, 0, 0)
    heads = cfg.heads[stage]
    head_dim = c // heads
    length = math.prod(win)

    padded = _padded_extents(grid, win)
    pad = tuple(p - g for p, g in zip(padded, grid))
    if any(pad):
        x = pad_end(x, (0, *pad, 0))
    x = cyclic_shift(x, offsets, -1)
    windows = _partition_batched(x, win)  # (B*nW, L, C)
    bw = windows.shape[0]
    n_windows = bw // b

    prefix = f"stage{stage + 1}.block{block + 1}.attn"
    qkv = add(matmul(windows, params[f"{prefix}.qkv.weight"]),
              params[f"{prefix}.qkv.bias"])
    qkv = reshape(qkv, (bw, length, 3, heads, head_dim))
    qkv = permute(qkv, (2, 0, 3, 1, 4))  # (3, B*nW, heads, L, hd)
    q = index_first(qkv, 0)
    k = index_first(qkv, 1)
    v = index_first(qkv, 2)

    attn = matmul(q, permute(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(head_dim))
    if cfg.use_rel_pos_bias:
        bias = take_rows(params[f"{prefix}.rel_bias.table"],
                         rel_position_index(win).reshape(-1))
        bias = permute(reshape(bias, (length, length, heads)), (2, 0, 1))
        attn = add(attn, bias)  # broadcast over windows
    mask = _window_mask(grid, win, offsets)
    if mask is not None:
        attn = reshape(attn, (b, n_windows, heads, length, length))
        attn = add(attn, Tensor(mask[None, :, None]))
        attn = reshape(attn, (bw, heads, length, length))
    attn = softmax(attn, axis=-1)

    out = matmul(attn, v)  # (B*nW, heads, L, hd)
    out = reshape(permute(out, (0, 2, 1, 3)), (bw, length, c))
    out = add(matmul(out, params[f"{prefix}.proj.weight"]),
              params[f"{prefix}.proj.bias"])

    out = _reverse_batched(out, b, padded, win, c)
    out = cyclic_shift(out, offsets, 1)
    if any(pad):
        out = crop(out, (b, t, h, w, c))
    return out


def _drop_path(branch: Tensor, rate: float, rng) -> Tensor:
    """Per-sample stochastic depth on a residual branch (train-time only)."""
    if rate <= 0.0 or rng is None:
        return branch
    b = branch.shape[0]
    keep = (rng.random(b) >= rate).astype(np.float64) / (1.0 - rate)
    return branch * Tensor(keep.reshape((b,) + (1,) * (branch.ndim - 1)))


def wmsa_block(grid: Tensor, params: dict[str, Tensor], cfg: VstConfig,
               shifted: bool, stage: int = 0, block: int = 0,
               drop_rng=None) -> Tensor:
    """One transformer block: z' = z + MSA(LN(z)); out = z' + FFN(LN(z'))."""
    single = grid.ndim == 4
    z = reshape(grid, (1,) + grid.shape) if single else grid
    b, t, h, w, c = z.shape
    if c != cfg.stage_channels(stage):
        raise ShapeError(f"grid channels {c} != stage {stage + 1} channels "
                         f"{cfg.stage_channels(stage)}")
    p = f"stage{stage + 1}.block{block + 1}"
    rate = cfg.drop_path_rate

    zn = layer_norm(z, params[f"{p}.norm1.gain"], params[f"{p}.norm1.bias"])
    z = add(z, _drop_path(
        _window_attention(zn, cfg, params, stage, block, shifted), rate, drop_rng))

    zn = layer_norm(z, params[f"{p}.norm2.gain"], params[f"{p}.norm2.bias"])
    flat = reshape(zn, (b * t * h * w, c))
    hid = gelu(add(matmul(flat, params[f"{p}.ffn.fc1.weight"]),
                   params[f"{p}.ffn.fc1.bias"]))
    out = add(matmul(hid, params[f"{p}.ffn.fc2.weight"]),
              params[f"{p}.ffn.fc2.bias"])
    z = add(z, _drop_path(reshape(out, (b, t, h, w, c)), rate, drop_rng))
    return reshape(z, z.shape[1:]) if single else z


def patch_merge(grid: Tensor, params: dict[str, Tensor], stage: int = 0) -> Tensor:
    """Concatenate 2x2 spatial neighborhoods, LN, project 4C -> 2C."""
    single = grid.ndim == 4
    x = reshape(grid, (1,) + grid.shape) if single else grid
    b, t, h, w, c = x.shape
    if h % 2 or w % 2:
        raise GeometryError(f"patch merge needs even spatial extents, got ({t}, {h}, {w})")
    x = reshape(x, (b, t, h // 2, 2, w // 2, 2, c))
    x = permute(x, (0, 1, 2, 4, 3, 5, 6))
    x = reshape(x, (b * t * (h // 2) * (w // 2), 4 * c))
    p = f"merge{stage + 1}"
    x = layer_norm(x, params[f"{p}.norm.gain"], params[f"{p}.norm.bias"])
    x = matmul(x, params[f"{p}.proj.weight"])
    x = reshape(x, (b, t, h // 2, w // 2, 2 * c))
    return reshape(x, x.shape[1:]) if single else x


def forward_batch(clips: Tensor, cfg: VstConfig, params: dict[str, Tensor],
                  drop_rng=None) -> Tensor:
    """(B, T, H, W, 3) -> (B, num_classes) class scores."""
    if clips.ndim != 5:
        raise GeometryError(f"expected batched clips (B, T, H, W, 3), got {clips.shape}")
    if clips.shape[1:] != (*cfg.input_geometry, 3):
        raise GeometryError(f"clip extents {clips.shape[1:]} do not match "
                            f"configured geometry {(*cfg.input_geometry, 3)}")
    _check_params(cfg, params)
    x = patch_partition_embed(clips, cfg, params)
    for s in range(4):
        for blk in range(cfg.depths[s]):
            x = wmsa_block(x, params, cfg, shifted=bool(blk % 2), stage=s,
                           block=blk, drop_rng=drop_rng)
        if s < 3:
            x = patch_merge(x, params, stage=s)
    x = layer_norm(x, params["head.norm.gain"], params["head.norm.bias"])
    x = tensor_mean(x, axis=(1, 2, 3))
    return add(matmul(x, params["head.fc.weight"]), params["head.fc.bias"])


def forward(clip: Tensor, cfg: VstConfig, params: dict[str, Tensor]) -> Tensor:
    """(T, H, W, 3) -> (num_classes,) class scores for a single clip."""
    if clip.ndim != 4:
        raise GeometryError(f"expected clip extents (T, H, W, 3), got {clip.shape}")
    scores = forward_batch(reshape(clip, (1,) + clip.shape), cfg, params)
    return reshape(scores, (cfg.num_classes,))


# ---------------------------------------------------------------------------
# checkpoint: magic "VSTC", length-prefixed key=value header, then
# (u32 name length, name, TNSR record) per parameter.

_VSTC_MAGIC = b"VSTC"


def _config_header(cfg: VstConfig) -> bytes:
    lines = [
        f"size={cfg.size}",
        f"embed_dim={cfg.embed_dim}",
        "depths=" + ",".join(map(str, cfg.depths)),
        "heads=" + ",".join(map(str, cfg.heads)),
        "window=" + ",".join(map(str, cfg.window)),
        "patch=" + ",".join(map(str, cfg.patch)),
        f"num_classes={cfg.num_classes}",
        "input_geometry=" + ",".join(map(str, cfg.input_geometry)),
        f"use_rel_pos_bias={int(cfg.use_rel_pos_bias)}",
        f"drop_path_rate={cfg.drop_path_rate!r}",
    ]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _parse_header(blob: bytes) -> VstConfig:
    fields: dict[str, str] = {}
    for line in blob.decode("utf-8").splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise FormatError(f"malformed checkpoint header line {line!r}")
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    required = {"size", "embed_dim", "depths", "heads", "window", "patch",
                "num_classes", "input_geometry", "use_rel_pos_bias",
                "drop_path_rate"}
    missing = required - fields.keys()
    if missing:
        raise FormatError(f"checkpoint header missing {sorted(missing)}")

    def ints(key):
        return tuple(int(v) for v in fields[key].split(","))

    try:
        return VstConfig(
            size=fields["size"], embed_dim=int(fields["embed_dim"]),
            depths=ints("depths"), heads=ints("heads"), window=ints("window"),
            patch=ints("patch"), num_classes=int(fields["num_classes"]),
            input_geometry=ints("input_geometry"),
            use_rel_pos_bias=bool(int(fields["use_rel_pos_bias"])),
            drop_path_rate=float(fields["drop_path_rate"]),
        )
    except (ValueError, ContractError) as e:
        raise FormatError(f"invalid checkpoint header: {e}") from e


def save_checkpoint(f: str | BinaryIO, cfg: VstConfig,
                    params: dict[str, Tensor]) -> None:
    """Write config + parameters; values are stored as f32."""
    if isinstance(f, str):
        with open(f, "wb") as fh:
            save_checkpoint(fh, cfg, params)
        return
    from .tensor import write_tensor

    _check_params(cfg, params)
    header = _config_header(cfg)
    f.write(_VSTC_MAGIC)
    f.write(struct.pack("<I", len(header)))
    f.write(header)
    for name, tensor in params.items():
        raw = name.encode("utf-8")
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        write_tensor(f, tensor)


def load_checkpoint(f: str | BinaryIO) -> tuple[VstConfig, dict[str, Tensor]]:
    """Read a checkpoint; parameters come back as trainable f64 tensors."""
    if isinstance(f, str):
        with open(f, "rb") as fh:
            return load_checkpoint(fh)
    from .tensor import read_tensor

    magic = f.read(4)
    if magic != _VSTC_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}, expected {_VSTC_MAGIC!r}")
    raw = f.read(4)
    if len(raw) != 4:
        raise FormatError("truncated checkpoint header length")
    (hlen,) = struct.unpack("<I", raw)
    blob = f.read(hlen)
    if len(blob) != hlen:
        raise FormatError("truncated checkpoint header")
    cfg = _parse_header(blob)

    params: dict[str, Tensor] = {}
    while True:
        raw = f.read(4)
        if not raw:
            break
        if len(raw) != 4:
            raise FormatError("truncated parameter record (name length)")
        (nlen,) = struct.unpack("<I", raw)
        raw = f.read(nlen)
        if len(raw) != nlen:
            raise FormatError("truncated parameter record (name)")
        name = raw.decode("utf-8")
        if name in params:
            raise FormatError(f"duplicate parameter {name!r} in checkpoint")
        tensor = read_tensor(f)
        tensor.requires_grad = True
        params[name] = tensor
    _check_params(cfg, params)
    return cfg, params
