"""Patch individual filter (PIF) layers.

A PIF layer splits its input feature maps into a regular grid of cubic
patches, convolves every patch with its own kernel bank (weights are shared
inside a patch, never across patches) and reassembles the per-patch outputs
in grid order. A second, overlap branch applies further banks to patches
shifted by half a patch along every axis; shifted patches that would cross
the border are dropped rather than padded.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from itertools import product
from typing import Sequence

import numpy as np

from .errors import ShapeError
from .layers import Conv3dSpec, conv3d, he_init, zeros_bias
from .tensor import Rng, Tensor, concat, crop

Origin = tuple[int, int, int]


@dataclass(frozen=True)
class PatchGrid:
    extents: tuple[int, int, int]
    patch_size: int
    origins: tuple[Origin, ...]
    overlap_origins: tuple[Origin, ...]

    @property
    def counts(self) -> tuple[int, int, int]:
        return tuple(e // self.patch_size for e in self.extents)

    @property
    def shift(self) -> int:
        return self.patch_size // 2

    @property
    def all_origins(self) -> tuple[Origin, ...]:
        """Original origins first, then overlap origins (bank storage order)."""
        return self.origins + self.overlap_origins

    @property
    def is_overlap(self) -> tuple[bool, ...]:
        return (False,) * len(self.origins) + (True,) * len(self.overlap_origins)

    def __len__(self) -> int:
        return len(self.origins) + len(self.overlap_origins)


def make_patch_grid(extents: Sequence[int], patch_size: int, overlap: bool = True) -> PatchGrid:
    """Tile ``extents`` with cubes of side ``patch_size`` and derive the half-shifted overlap patches.

    Every extent must be a multiple of the patch size. Overlap origins are the
    original origins shifted by ``patch_size // 2`` on every axis, kept only
    when the whole shifted patch lies inside the volume.
    """
    extents = tuple(int(e) for e in extents)
    s = int(patch_size)
    if len(extents) != 3:
        raise ShapeError(f"patch grids are three-dimensional, got extents {extents}")
    if s < 1:
        raise ShapeError(f"patch size must be positive, got {s}")
    for axis, e in zip("dhw", extents):
        if e % s:
            raise ShapeError(f"extent {e} on axis {axis!r} is not a multiple of patch size {s}")
    origins = tuple(product(*(range(0, e, s) for e in extents)))
    shifted = []
    if overlap:
        h = s // 2
        for o in origins:
            ov = tuple(x + h for x in o)
            if all(x + s <= e for x, e in zip(ov, extents)):
                shifted.append(ov)
    return PatchGrid(extents, s, origins, tuple(shifted))


@dataclass
class PifLayerState:
    """One kernel bank (weights + bias) per patch of a :class:`PatchGrid`."""

    grid: PatchGrid
    in_channels: int
    filters: int
    kernel_size: int
    weights: list[Tensor] = field(default_factory=list)
    biases: list[Tensor] = field(default_factory=list)

    def __post_init__(self):
        if self.kernel_size > self.grid.patch_size:
            raise ShapeError(
                f"kernel size {self.kernel_size} exceeds patch size {self.grid.patch_size}")
        if self.weights and len(self.weights) != len(self.grid):
            raise ShapeError(f"{len(self.weights)} banks for {len(self.grid)} patches")

    @classmethod
    def init(cls, grid: PatchGrid, in_channels: int, filters: int, kernel_size: int, rng: Rng) -> "PifLayerState":
        k = kernel_size
        state = cls(grid, in_channels, filters, kernel_size)
        state.weights = [he_init((filters, in_channels, k, k, k), rng) for _ in range(len(grid))]
        state.biases = [zeros_bias(filters) for _ in range(len(grid))]
        state.__post_init__()
        return state

    @property
    def conv_spec(self) -> Conv3dSpec:
        return Conv3dSpec(self.in_channels, self.filters, self.kernel_size)

    @property
    def block_size(self) -> int:
        return self.grid.patch_size - self.kernel_size + 1

    @property
    def n_banks(self) -> int:
        return len(self.grid)

    def parameters(self) -> list[Tensor]:
        return [t for pair in zip(self.weights, self.biases) for t in pair]

    def output_shapes(self, batch: int = 1) -> tuple[tuple[int, ...], tuple[int, ...] | None]:
        o, f = self.block_size, self.filters
        orig = (batch, f) + tuple(c * o for c in self.grid.counts)
        n_ov = len(self.grid.overlap_origins)
        return orig, ((batch, f, n_ov * o, o, o) if n_ov else None)

    def block_index(self, bank: int) -> tuple[int, tuple[slice, slice, slice]]:
        """Branch (0 original, 1 overlap) and spatial slices of a bank's output block."""
        o = self.block_size
        n_orig = len(self.grid.origins)
        if not 0 <= bank < self.n_banks:
            raise IndexError(f"bank {bank} out of range [0, {self.n_banks})")
        if bank < n_orig:
            cell = np.unravel_index(bank, self.grid.counts)
            return 0, tuple(slice(int(c) * o, (int(c) + 1) * o) for c in cell)
        j = bank - n_orig
        return 1, (slice(j * o, (j + 1) * o), slice(0, o), slice(0, o))

    def receptive_slices(self, bank: int) -> tuple[slice, slice, slice]:
        """Region of the layer input read by a bank."""
        origin = self.grid.all_origins[bank]
        s = self.grid.patch_size
        return tuple(slice(x, x + s) for x in origin)


def pif_parameter_count(n_banks: int, filters: int, in_channels: int, kernel_size: int) -> int:
    return n_banks * (filters * in_channels * kernel_size ** 3 + filters)


def assemble_blocks(blocks: Sequence[Tensor], counts: Sequence[int]) -> Tensor:
    """Place per-patch output blocks back on the patch grid in row-major order."""
    n, f, o = blocks[0].shape[0], blocks[0].shape[1], blocks[0].shape[2]
    out = np.empty((n, f) + tuple(c * o for c in counts))
    cells = list(product(*(range(c) for c in counts)))
    index = [(Ellipsis,) + tuple(slice(c * o, (c + 1) * o) for c in cell) for cell in cells]
    for idx, b in zip(index, blocks):
        out[idx] = b.data

    def backward(g):
        return tuple(g[idx] for idx in index)

    return Tensor.from_op(out, tuple(blocks), backward)


def pif_forward(x: Tensor, state: PifLayerState) -> tuple[Tensor, Tensor | None]:
    """Apply the layer; returns (original branch, overlap branch or None).

    The original branch has spatial extents ``counts * (s - k + 1)``. The
    overlap branch stacks its blocks along the depth axis in origin order.
    """
    grid = state.grid
    if x.ndim != 5 or tuple(x.shape[2:]) != grid.extents:
        raise ShapeError(f"PIF input {x.shape} does not match grid extents {grid.extents}")
    if x.shape[1] != state.in_channels:
        raise ShapeError(f"PIF expects {state.in_channels} channels, got {x.shape[1]}")
    spec = state.conv_spec
    s = grid.patch_size
    blocks = [conv3d(crop(x, origin, s), spec, w, b)
              for origin, w, b in zip(grid.all_origins, state.weights, state.biases)]
    n_orig = len(grid.origins)
    original = assemble_blocks(blocks[:n_orig], grid.counts)
    overlap = concat(blocks[n_orig:], axis=2) if len(blocks) > n_orig else None
    return original, overlap


def pif_locality_probe(state: PifLayerState, x: Tensor, bank: int, perturbation: float) -> tuple[np.ndarray, np.ndarray | None]:
    """Masks of output voxels that change when only ``bank``'s weights and bias are shifted."""
    if not 0 <= bank < state.n_banks:
        raise IndexError(f"bank {bank} out of range [0, {state.n_banks})")
    before = pif_forward(x, state)
    probed = copy.copy(state)
    probed.weights = list(state.weights)
    probed.biases = list(state.biases)
    probed.weights[bank] = Tensor(state.weights[bank].data + perturbation)
    probed.biases[bank] = Tensor(state.biases[bank].data + perturbation)
    after = pif_forward(x, probed)
    return tuple(None if a is None else a.data != b.data for a, b in zip(before, after))
