"""A PIF layer, one patch at a time.

Run with ``python3 demos/01_pif_layer.py``.
"""

import numpy as np

from pifnet import Rng, Tensor, make_patch_grid, PifLayerState, pif_forward
from pifnet.pif import pif_locality_probe

# %% The patch grid
# An 8^3 feature map with 4^3 patches tiles into a 2x2x2 grid. Shifting every
# origin by half a patch (2 voxels) gives eight candidates, but only the one
# starting at (2, 2, 2) still fits inside the map.
grid = make_patch_grid((8, 8, 8), patch_size=4)
print("original origins:", grid.origins)
print("overlap origins: ", grid.overlap_origins)

# %% Kernel banks
# Every origin owns a (filters, channels, k, k, k) kernel plus biases. With
# k=3 each 4^3 patch yields a 2^3 block per filter.
state = PifLayerState.init(grid, in_channels=2, filters=3, kernel_size=3, rng=Rng(0))
print(f"{state.n_banks} banks, block size {state.block_size}")

x = Tensor(np.random.default_rng(0).normal(size=(1, 2, 8, 8, 8)))
original, overlap = pif_forward(x, state)
print("original branch:", original.shape)   # blocks reassembled on the grid
print("overlap branch: ", overlap.shape)    # overlap blocks stacked along depth

# %% Nothing leaks between patches
# Nudging the kernels of bank 5 changes exactly one 2^3 block of the
# original branch and leaves the overlap branch alone.
masks = pif_locality_probe(state, x, bank=5, perturbation=0.1)
changed = np.argwhere(masks[0][0, 0])
print("bank 5 changed voxels", changed.min(axis=0), "to", changed.max(axis=0))
print("overlap branch untouched:", not masks[1].any())

# %% Local convolution
# With the kernel as large as the patch, each patch collapses to a single
# voxel per filter: a locally connected layer with one weight set per patch.
local = PifLayerState.init(make_patch_grid((6, 6, 6), 3, overlap=False), 1, 2, 3, Rng(1))
out, _ = pif_forward(Tensor(np.ones((1, 1, 6, 6, 6))), local)
print("local convolution output:", out.shape)
