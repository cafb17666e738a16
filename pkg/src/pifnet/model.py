"""Declarative model descriptions, static shape checking and the runnable network."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import layers as L
from .errors import ConfigError, FormatError, ShapeError
from .pif import PifLayerState, make_patch_grid, pif_forward, pif_parameter_count
from .tensor import Rng, Tensor, concat

KINDS = ("conv3d", "maxpool", "elu", "dropout", "pif", "flatten", "linear", "sigmoid")
ELEMENTWISE = ("elu", "dropout")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0
    p: float = 0.0
    patch_size: int = 0
    overlap: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")

    @classmethod
    def conv(cls, filters: int, kernel_size: int = 3, padding: int = 0, stride: int = 1) -> "LayerSpec":
        return cls("conv3d", out_channels=filters, kernel_size=kernel_size, stride=stride, padding=padding)

    @classmethod
    def pool(cls, kernel_size: int, stride: int) -> "LayerSpec":
        return cls("maxpool", kernel_size=kernel_size, stride=stride)

    @classmethod
    def elu(cls) -> "LayerSpec":
        return cls("elu")

    @classmethod
    def dropout(cls, p: float = 0.3) -> "LayerSpec":
        return cls("dropout", p=p)

    @classmethod
    def pif(cls, filters: int, patch_size: int, kernel_size: int = 3, overlap: bool = True) -> "LayerSpec":
        return cls("pif", out_channels=filters, kernel_size=kernel_size, patch_size=patch_size, overlap=overlap)

    @classmethod
    def flatten(cls) -> "LayerSpec":
        return cls("flatten")

    @classmethod
    def linear(cls, out_features: int) -> "LayerSpec":
        return cls("linear", out_channels=out_features)

    @classmethod
    def sigmoid(cls) -> "LayerSpec":
        return cls("sigmoid")

    def describe(self) -> str:
        k = self.kind
        if k == "conv3d":
            pad = f" pad {self.padding}" if self.padding else ""
            return f"conv3d {self.out_channels} filters k{self.kernel_size}{pad}"
        if k == "maxpool":
            return f"maxpool k{self.kernel_size} s{self.stride}"
        if k == "dropout":
            return f"dropout p={self.p:g}"
        if k == "pif":
            ov = "+overlap" if self.overlap else ""
            return f"pif s{self.patch_size} k{self.kernel_size} {self.out_channels} filters{ov}"
        if k == "linear":
            return f"linear {self.out_channels}"
        return k


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_shape: tuple[int, int, int, int]
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def has_pif(self) -> bool:
        return any(l.kind == "pif" for l in self.layers)

    def shapes(self) -> list[list[tuple[int, ...]]]:
        """Per-layer output shapes (without batch axis), one entry per branch.

        Raises ShapeError at the first layer whose input is illegal.
        """
        branches: list[tuple[int, ...]] = [self.input_shape]
        out = []
        n = len(self.layers)
        for i, layer in enumerate(self.layers):
            try:
                branches = _layer_output(layer, branches)
            except ShapeError as exc:
                raise ShapeError(f"{self.name} layer {i} ({layer.describe()}): {exc}") from None
            if layer.kind == "sigmoid" and i != n - 1:
                raise ShapeError(f"{self.name}: sigmoid must be the final layer")
            out.append(branches)
        if not out or out[-1] != [(1,)]:
            raise ShapeError(f"{self.name}: network must end in a single output feature")
        return out

    def to_dict(self) -> dict:
        return {"name": self.name, "input_shape": list(self.input_shape),
                "layers": [asdict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["name"], tuple(d["input_shape"]), tuple(LayerSpec(**l) for l in d["layers"]))


def _layer_output(layer: LayerSpec, branches: list[tuple[int, ...]]) -> list[tuple[int, ...]]:
    k = layer.kind
    if k in ELEMENTWISE:
        if k == "dropout" and not 0.0 <= layer.p < 1.0:
            raise ShapeError(f"dropout probability {layer.p} outside [0, 1)")
        return branches
    if k == "flatten":
        return [(sum(int(np.prod(b)) for b in branches),)]
    if len(branches) != 1:
        raise ShapeError("two-branch PIF output must be flattened before this layer")
    shape = branches[0]
    if k == "linear":
        if len(shape) != 1:
            raise ShapeError(f"linear needs flattened input, got {shape}")
        return [(layer.out_channels,)]
    if k == "sigmoid":
        return [shape]
    if len(shape) != 4:
        raise ShapeError(f"{k} needs (C,D,H,W) input, got {shape}")
    c, *ext = shape
    if k == "conv3d":
        spec = L.Conv3dSpec(c, layer.out_channels, layer.kernel_size, layer.stride, layer.padding)
        return [(layer.out_channels, *(spec.output_extent(e) for e in ext))]
    if k == "maxpool":
        spec = L.PoolSpec(layer.kernel_size, layer.stride)
        return [(c, *(spec.output_extent(e) for e in ext))]
    if k == "pif":
        grid = make_patch_grid(ext, layer.patch_size, layer.overlap)
        if layer.kernel_size > layer.patch_size:
            raise ShapeError(f"kernel {layer.kernel_size} larger than patch {layer.patch_size}")
        o = layer.patch_size - layer.kernel_size + 1
        out = [(layer.out_channels, *(n * o for n in grid.counts))]
        if grid.overlap_origins:
            out.append((layer.out_channels, len(grid.overlap_origins) * o, o, o))
        return out
    raise ShapeError(f"unhandled layer kind {k}")


def layer_parameter_counts(spec: ModelSpec) -> list[tuple[int, LayerSpec, int, str]]:
    """Rows of (index, layer, learnable scalars, breakdown) for every layer."""
    shapes = spec.shapes()
    rows = []
    prev = [spec.input_shape]
    for i, (layer, out) in enumerate(zip(spec.layers, shapes)):
        c_in = prev[0][0]
        if layer.kind == "conv3d":
            per = layer.out_channels * c_in * layer.kernel_size ** 3
            rows.append((i, layer, per + layer.out_channels, f"{per} weights + {layer.out_channels} bias"))
        elif layer.kind == "linear":
            per = layer.out_channels * c_in
            rows.append((i, layer, per + layer.out_channels, f"{per} weights + {layer.out_channels} bias"))
        elif layer.kind == "pif":
            grid = make_patch_grid(prev[0][1:], layer.patch_size, layer.overlap)
            n = len(grid)
            per_bank = pif_parameter_count(1, layer.out_channels, c_in, layer.kernel_size)
            rows.append((i, layer, n * per_bank,
                         f"{n} banks ({len(grid.origins)} original + {len(grid.overlap_origins)} overlap)"
                         f" x {per_bank} per bank"))
        else:
            rows.append((i, layer, 0, ""))
        prev = out
    return rows


def count_parameters(spec: ModelSpec) -> int:
    """Total number of learnable scalars in ``spec``."""
    return sum(r[2] for r in layer_parameter_counts(spec))


# ---------------------------------------------------------------------------
# runnable network

@dataclass
class LayerTrace:
    """Activations recorded for one layer during a traced forward pass."""

    layer: LayerSpec
    inputs: list[np.ndarray]
    outputs: list[np.ndarray]
    argmax: np.ndarray | None = None


class Network:
    """Parameters for a :class:`ModelSpec` and the forward pass over them."""

    def __init__(self, spec: ModelSpec, rng: Rng | None = None):
        self.spec = spec
        rng = rng if rng is not None else Rng(0)
        shapes = spec.shapes()
        self.params: list = []
        prev = [spec.input_shape]
        for layer, out in zip(spec.layers, shapes):
            c_in = prev[0][0]
            if layer.kind == "conv3d":
                k = layer.kernel_size
                self.params.append((L.he_init((layer.out_channels, c_in, k, k, k), rng), L.zeros_bias(layer.out_channels)))
            elif layer.kind == "linear":
                self.params.append((L.he_init((layer.out_channels, c_in), rng), L.zeros_bias(layer.out_channels)))
            elif layer.kind == "pif":
                grid = make_patch_grid(prev[0][1:], layer.patch_size, layer.overlap)
                self.params.append(PifLayerState.init(grid, c_in, layer.out_channels, layer.kernel_size, rng))
            else:
                self.params.append(None)
            prev = out

    def parameters(self) -> list[Tensor]:
        out = []
        for p in self.params:
            if isinstance(p, PifLayerState):
                out.extend(p.parameters())
            elif p is not None:
                out.extend(p)
        return out

    def get_state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def set_state(self, arrays: Sequence[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ShapeError(f"state has {len(arrays)} arrays, network has {len(params)} parameters")
        for p, a in zip(params, arrays):
            if p.shape != a.shape:
                raise ShapeError(f"parameter shape {p.shape} does not match stored {a.shape}")
            p.data = np.array(a, dtype=np.float64)

    def checksum(self) -> str:
        h = hashlib.sha256(json.dumps(self.spec.to_dict(), sort_keys=True).encode())
        for p in self.parameters():
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def pif_state(self) -> tuple[int, PifLayerState]:
        for i, p in enumerate(self.params):
            if isinstance(p, PifLayerState):
                return i, p
        raise ConfigError(f"{self.spec.name} has no PIF layer")

    def forward(self, x, training: bool = False, rng: Rng | None = None) -> Tensor:
        """Sigmoid output of shape (N, 1)."""
        return self._run(x, training, rng, None)

    def trace(self, x) -> list[LayerTrace]:
        """Evaluation-mode forward pass recording every layer's inputs and outputs."""
        records: list[LayerTrace] = []
        self._run(x, False, None, records)
        return records

    def _run(self, x, training, rng, records) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if tuple(x.shape[1:]) != self.spec.input_shape:
            raise ShapeError(f"{self.spec.name} expects input (N, {self.spec.input_shape}), got {x.shape}")
        branches = [x]
        for layer, p in zip(self.spec.layers, self.params):
            argmax = None
            inputs = branches
            k = layer.kind
            if k == "conv3d":
                w, b = p
                spec = L.Conv3dSpec(w.shape[1], w.shape[0], layer.kernel_size, layer.stride, layer.padding)
                branches = [L.conv3d(branches[0], spec, w, b)]
            elif k == "maxpool":
                out, argmax = L.maxpool3d(branches[0], L.PoolSpec(layer.kernel_size, layer.stride))
                branches = [out]
            elif k == "elu":
                branches = [L.elu(t) for t in branches]
            elif k == "dropout":
                branches = [L.dropout(t, layer.p, rng, training) for t in branches]
            elif k == "pif":
                orig, ov = pif_forward(branches[0], p)
                branches = [orig] if ov is None else [orig, ov]
            elif k == "flatten":
                flat = [L.flatten(t) for t in branches]
                branches = [flat[0] if len(flat) == 1 else concat(flat, axis=1)]
            elif k == "linear":
                branches = [L.linear(branches[0], *p)]
            elif k == "sigmoid":
                branches = [L.sigmoid(branches[0])]
            if records is not None:
                records.append(LayerTrace(layer, [t.data for t in inputs], [t.data for t in branches], argmax))
        return branches[0]


def save_checkpoint(net: Network, path: str | Path) -> None:
    arrays = {f"p{i:04d}": a for i, a in enumerate(net.get_state())}
    with open(path, "wb") as fh:
        np.savez(fh, spec=np.array(json.dumps(net.spec.to_dict())), **arrays)


def load_checkpoint(path: str | Path) -> Network:
    try:
        with np.load(path, allow_pickle=False) as z:
            spec = ModelSpec.from_dict(json.loads(str(z["spec"])))
            arrays = [z[k] for k in sorted(k for k in z.files if k.startswith("p"))]
    except (OSError, ValueError, KeyError) as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    net = Network(spec, Rng(0))
    net.set_state(arrays)
    return net
