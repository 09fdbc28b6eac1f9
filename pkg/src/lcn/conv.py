"""Lattice convolution: scatter, periodic padding, convolution, and mask.

The pipeline per convolution is
    pad the H x W grid with its periodic ring  ->  valid convolution
    ->  zero the alignment-padding cells (mask step).
Virtual vertices are never reset by the mask so information can flow through
them.  Padding is re-applied before every convolution so boundary
information crosses the torus seam at every layer.

Special kernel mode reproduces the nearest-neighbor-only kernels defined on
the original (non-augmented) lattices: a hexagonal 3x3 kernel with two
masked corners for triangular lattices, one kernel applied rotated by 180
degrees on the second sublattice for honeycomb, and three independent
kernels (one per sublattice) for kagome.  Virtual cells then act as holes
and carry no features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ShapeError, UnsupportedError
from .lattice import (
    CELL_ORIGINAL,
    CELL_VIRTUAL,
    _NEIGHBOR_OFFSETS,
    GridEmbedding,
    Lattice,
)

ATTN_NEG = -1e30

KERNEL_MODES = ("regular", "special", "special-2hop")
PADDING_MODES = ("periodic", "zero")


@dataclass(frozen=True)
class ConvPlan:
    """Precomputed index/mask arrays driving one lattice-convolution setup."""

    embedding: GridEmbedding
    kernel_h: int
    kernel_w: int
    pad_virtual: bool
    mask_enabled: bool
    padding_mode: str
    kernel_mode: str
    pad_idx: np.ndarray  # ((H+2r)*(W+2r),) gather indices into H*W, -1 = zero
    keep_mask: np.ndarray  # (H,W,1) cells surviving the mask step
    active_mask: np.ndarray  # (H,W,1) cells that may carry features at all
    attn_bias: np.ndarray  # (H*W,) additive attention bias, ATTN_NEG on excluded cells
    tap_masks: tuple  # special mode: one (kh,kw,1,1) 0/1 mask per kernel group
    group_masks: tuple  # special mode: one (H,W,1) center-cell mask per group
    rotate_second_group: bool  # honeycomb: kernel of group 1 is group 0 rotated 180 deg

    @property
    def n_kernel_groups(self) -> int:
        return max(1, len(self.group_masks))


def build_conv_plan(
    embedding: GridEmbedding,
    lattice: Lattice,
    padding_mode: str = "periodic",
    kernel_mode: str = "regular",
) -> ConvPlan:
    if padding_mode not in PADDING_MODES:
        raise UnsupportedError(f"unknown padding mode {padding_mode!r}")
    if kernel_mode not in KERNEL_MODES:
        raise UnsupportedError(f"unknown kernel mode {kernel_mode!r}")
    if kernel_mode != "regular":
        if lattice.lattice_type not in ("triangular", "honeycomb", "kagome"):
            raise UnsupportedError(
                f"special kernels are not defined for {lattice.lattice_type} lattices"
            )
        if kernel_mode == "special-2hop" and lattice.lattice_type != "honeycomb":
            raise UnsupportedError("the 2-hop special kernel exists only for honeycomb")

    h, w, rw = embedding.height, embedding.width, embedding.ring_width
    ksize = 5 if kernel_mode == "special-2hop" else 3
    if ksize // 2 > rw:
        raise UnsupportedError(
            f"kernel {ksize}x{ksize} needs a padding ring of width {ksize // 2}, "
            f"embedding has {rw}"
        )

    # Gather table: frame position -> flat interior cell (or -1 for zero).
    pad_idx = np.full(((h + 2 * rw) * (w + 2 * rw)), -1, dtype=np.int64)
    frame = embedding.wrap_src.reshape(-1, 2)
    inside = frame[:, 0] >= 0
    pad_idx[inside] = frame[inside, 0] * w + frame[inside, 1]
    if padding_mode == "zero":
        interior = np.zeros((h + 2 * rw, w + 2 * rw), dtype=bool)
        interior[rw : rw + h, rw : rw + w] = True
        pad_idx[~interior.reshape(-1)] = -1

    original = embedding.cell_kind == CELL_ORIGINAL
    occupied = original | (embedding.cell_kind == CELL_VIRTUAL)
    if kernel_mode == "regular":
        active = occupied
    else:
        active = original
    keep_mask = active[..., None].astype(np.float64)
    active_mask = keep_mask
    attn_bias = np.where(active.reshape(-1), 0.0, ATTN_NEG)

    tap_masks: tuple = ()
    group_masks: tuple = ()
    rotate = False
    if kernel_mode != "regular":
        offs = _NEIGHBOR_OFFSETS[lattice.lattice_type]
        center = ksize // 2

        def tap_mask(classes_offsets):
            m = np.zeros((ksize, ksize, 1, 1))
            m[center, center] = 1.0
            for (dc, dr) in classes_offsets:
                m[center + dr, center + dc] = 1.0
            return m

        def group_mask(cls):
            sel = np.zeros((h, w), dtype=bool)
            rr, cc = np.nonzero(original)
            for r, c in zip(rr, cc):
                if lattice.sublattice[embedding.cell_id[r, c]] == cls:
                    sel[r, c] = True
            return sel[..., None].astype(np.float64)

        if lattice.lattice_type == "triangular":
            tap_masks = (tap_mask(offs["j1"][0]),)
            group_masks = (group_mask(0),)
        elif lattice.lattice_type == "honeycomb":
            taps = list(offs["j1"][0])
            if kernel_mode == "special-2hop":
                taps += list(offs["j2"][0])
            tap_masks = (tap_mask(taps),)
            group_masks = (group_mask(0), group_mask(1))
            rotate = True
        else:  # kagome
            tap_masks = tuple(tap_mask(offs["j1"][s]) for s in range(3))
            group_masks = tuple(group_mask(s) for s in range(3))

    return ConvPlan(
        embedding=embedding,
        kernel_h=ksize,
        kernel_w=ksize,
        pad_virtual=embedding.pad_virtual,
        mask_enabled=embedding.mask_enabled,
        padding_mode=padding_mode,
        kernel_mode=kernel_mode,
        pad_idx=pad_idx,
        keep_mask=keep_mask,
        active_mask=active_mask,
        attn_bias=attn_bias,
        tap_masks=tap_masks,
        group_masks=group_masks,
        rotate_second_group=rotate,
    )


def scatter(features: np.ndarray, embedding: GridEmbedding) -> np.ndarray:
    """Place per-site features (B,N) or (B,N,d) onto the grid as (B,H,W,d).

    Original cells receive the features; virtual and alignment cells are
    zero.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 2:
        feats = feats[:, :, None]
    b, n, d = feats.shape
    if n != embedding.n_sites:
        raise ShapeError("scatter", (n,), (embedding.n_sites,))
    grid = np.zeros((b, embedding.height, embedding.width, d))
    rows, cols = embedding.site_cells[:, 0], embedding.site_cells[:, 1]
    grid[:, rows, cols, :] = feats
    return grid


def gather(grid, embedding: GridEmbedding) -> np.ndarray:
    """Read original-cell features back in site order: inverse of scatter."""
    data = grid.data if isinstance(grid, ad.Tensor) else np.asarray(grid)
    rows, cols = embedding.site_cells[:, 0], embedding.site_cells[:, 1]
    return data[:, rows, cols, :]


def periodic_pad(grid: ad.Tensor, plan: ConvPlan) -> ad.Tensor:
    """Surround (B,H,W,d) with its periodic ring per the plan's wrap table."""
    emb = plan.embedding
    h, w, rw = emb.height, emb.width, emb.ring_width
    b = grid.data.shape[0]
    d = grid.data.shape[3]
    flat = ad.reshape(grid, (b, h * w, d))
    padded = ad.take_positions(flat, plan.pad_idx)
    return ad.reshape(padded, (b, h + 2 * rw, w + 2 * rw, d))


def lattice_conv(u: ad.Tensor, weight, plan: ConvPlan) -> ad.Tensor:
    """Mask(conv(periodic_pad(u))) with the plan's kernel layout.

    ``weight`` is one (kh, kw, d_out, d_in) tensor in regular mode, or a
    sequence of ``special_weight_groups(plan)`` such tensors in special
    modes (kagome trains one kernel per sublattice without weight sharing).
    """
    if plan.kernel_mode == "regular":
        return _regular_conv(u, weight, plan)
    return _special_conv(u, weight, plan)


def _crop(conv_out: ad.Tensor, plan: ConvPlan) -> ad.Tensor:
    """Trim a valid-conv output back to H x W when the ring was wider."""
    emb = plan.embedding
    extra = emb.ring_width - plan.kernel_h // 2
    if extra == 0:
        return conv_out
    h, w = emb.height, emb.width
    return ad.slice2d(conv_out, (extra, extra + h), (extra, extra + w))


def _regular_conv(u, weight, plan):
    padded = periodic_pad(u, plan)
    out = _crop(ad.conv2d_valid(padded, weight), plan)
    if plan.mask_enabled:
        out = ad.mask_mul(out, plan.keep_mask)
    return out


def _special_conv(u, weights, plan):
    weights = list(weights)
    if len(weights) != special_weight_groups(plan):
        raise ShapeError("special_conv", (len(weights),), (special_weight_groups(plan),))
    padded = periodic_pad(u, plan)
    out = None
    for g, gmask in enumerate(plan.group_masks):
        if plan.rotate_second_group and g == 1:
            # Honeycomb: the second sublattice shares weights through a
            # 180-degree rotation of the first kernel.
            kg = ad.flip2(ad.mask_mul(weights[0], plan.tap_masks[0]))
        else:
            kg = ad.mask_mul(weights[g], plan.tap_masks[min(g, len(plan.tap_masks) - 1)])
        part = ad.mask_mul(_crop(ad.conv2d_valid(padded, kg), plan), gmask)
        out = part if out is None else ad.add(out, part)
    if plan.mask_enabled:
        out = ad.mask_mul(out, plan.keep_mask)
    return out


def special_weight_groups(plan: ConvPlan) -> int:
    """How many independent kernels a special plan trains."""
    if plan.kernel_mode == "regular":
        return 1
    if plan.rotate_second_group:
        return 1  # honeycomb group 1 is tied to group 0
    return len(plan.tap_masks)
