"""Layer-wise relevance propagation with the alpha/beta rule.

For an affine layer with inputs a_i, weights w_ij and recorded relevance R_j,

    R_i = sum_j (alpha * z+_ij / Z+_j - beta * z-_ij / Z-_j) * R_j,

where z_ij = a_i * w_ij is split into its positive and negative parts and
Z+-_j are their sums over i. Biases take no share of the relevance, so with
alpha - beta = 1 each layer conserves total relevance. Pooling routes
relevance to the recorded argmax; ELU, dropout (evaluation mode) and the
final sigmoid pass it through unchanged.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import conv3d_array, conv3d_input_grad, route_to_argmax
from .model import LayerTrace, Network
from .pif import PifLayerState

DEFAULT_EPS = 1e-9


@dataclass(frozen=True)
class Start:
    """Where propagation begins: the network logit or one filter of a hidden layer.

    ``bank`` restricts a PIF-layer start to the output block of one patch.
    """

    layer: int | None = None
    filter: int = 0
    bank: int | None = None

    @property
    def is_output(self) -> bool:
        return self.layer is None

    def __str__(self) -> str:
        if self.is_output:
            return "output"
        if self.bank is not None:
            return f"{self.layer}:patch{self.bank}:filter{self.filter}"
        return f"{self.layer}:{self.filter}"


@dataclass(frozen=True)
class LrpConfig:
    alpha: float = 5.0
    beta: float = 4.0
    eps: float = DEFAULT_EPS
    start: Start = field(default_factory=Start)

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError(f"alpha and beta must be non-negative, got {self.alpha}, {self.beta}")
        if abs(self.alpha - (1.0 + self.beta)) > 1e-9:
            raise ConfigError(f"alpha/beta rule requires alpha = 1 + beta, got alpha={self.alpha}, beta={self.beta}")
        if self.eps <= 0:
            raise ConfigError("stabiliser eps must be positive")


@dataclass
class RelevanceMap:
    volume: np.ndarray
    start: str
    alpha: float
    beta: float
    checksum: str
    per_channel: np.ndarray | None = field(default=None, repr=False)

    @property
    def total(self) -> float:
        return float(self.volume.sum())


def parse_start(text: str, net: Network | None = None) -> Start:
    """Parse ``output``, ``<layer>:<filter>``, or ``pif:patch<P>:filter<F>``."""
    text = text.strip()
    if text == "output":
        return Start()
    m = re.fullmatch(r"pif:patch(\d+):filter(\d+)", text)
    if m:
        if net is None:
            raise ConfigError("a network is needed to resolve a pif start point")
        layer, _ = net.pif_state()
        return Start(layer, int(m.group(2)), int(m.group(1)))
    m = re.fullmatch(r"(\d+):(\d+)", text)
    if m:
        return Start(int(m.group(1)), int(m.group(2)))
    raise ConfigError(f"invalid start point {text!r}; use output, <layer>:<filter> or pif:patch<P>:filter<F>")


# ---------------------------------------------------------------------------
# propagation rules

def _stabilised_ratio(r: np.ndarray, z: np.ndarray, eps: float) -> np.ndarray:
    out = np.zeros_like(z)
    pos, neg = z > 0, z < 0
    out[pos] = r[pos] / (z[pos] + eps)
    out[neg] = r[neg] / (z[neg] - eps)
    return out


def _alpha_beta(a, w, r, fwd: Callable, bwd: Callable, alpha: float, beta: float, eps: float) -> np.ndarray:
    ap, an = np.maximum(a, 0.0), np.minimum(a, 0.0)
    wp, wn = np.maximum(w, 0.0), np.minimum(w, 0.0)
    z_pos = fwd(ap, wp) + fwd(an, wn)
    z_neg = fwd(ap, wn) + fwd(an, wp)
    s_pos = _stabilised_ratio(r, z_pos, eps)
    s_neg = _stabilised_ratio(r, z_neg, eps)
    out = alpha * (ap * bwd(s_pos, wp) + an * bwd(s_pos, wn))
    if beta:
        out = out - beta * (ap * bwd(s_neg, wn) + an * bwd(s_neg, wp))
    return out


def relprop_affine(weights: np.ndarray, activations: np.ndarray, relevance: np.ndarray,
                   config: LrpConfig = LrpConfig(), stride: int = 1, padding: int = 0) -> np.ndarray:
    """Redistribute ``relevance`` from a bias-free linear (weights (out,in)) or conv3d (5-D weights) layer."""
    if activations is None:
        raise ShapeError("relprop needs the activations recorded in the forward pass")
    w = np.asarray(weights, dtype=np.float64)
    a = np.asarray(activations, dtype=np.float64)
    r = np.asarray(relevance, dtype=np.float64)
    if w.ndim == 2:
        if a.ndim != 2 or a.shape[1] != w.shape[1] or r.shape != (a.shape[0], w.shape[0]):
            raise ShapeError(f"linear relprop: activations {a.shape}, weights {w.shape}, relevance {r.shape}")
        return _alpha_beta(a, w, r, lambda x, v: x @ v.T, lambda s, v: s @ v,
                           config.alpha, config.beta, config.eps)
    if w.ndim == 5:
        if a.ndim != 5 or a.shape[1] != w.shape[1] or r.shape[:2] != (a.shape[0], w.shape[0]):
            raise ShapeError(f"conv relprop: activations {a.shape}, weights {w.shape}, relevance {r.shape}")
        return _alpha_beta(a, w, r,
                           lambda x, v: conv3d_array(x, v, None, stride, padding),
                           lambda s, v: conv3d_input_grad(s, v, a.shape, stride, padding),
                           config.alpha, config.beta, config.eps)
    raise ShapeError(f"unsupported weight shape {w.shape}")


def relprop_pool(argmax: np.ndarray, relevance: np.ndarray, in_shape: Sequence[int]) -> np.ndarray:
    """Send each pooled voxel's relevance to its recorded winner."""
    if argmax is None:
        raise ShapeError("relprop through max-pooling needs the recorded argmax indices")
    return route_to_argmax(relevance, argmax, in_shape)


def relprop_pif(state: PifLayerState, activations: np.ndarray, relevance: Sequence[np.ndarray | None],
                config: LrpConfig = LrpConfig()) -> np.ndarray:
    """Propagate both PIF branches; every bank only reaches its own input patch."""
    out = np.zeros_like(activations, dtype=np.float64)
    for bank in range(state.n_banks):
        branch, block = state.block_index(bank)
        r_branch = relevance[branch] if branch < len(relevance) else None
        if r_branch is None:
            continue
        r = r_branch[(Ellipsis,) + block]
        if not r.any():
            continue
        patch = state.receptive_slices(bank)
        a = activations[(Ellipsis,) + patch]
        out[(Ellipsis,) + patch] += relprop_affine(state.weights[bank].data, a, r, config)
    return out


# ---------------------------------------------------------------------------
# whole-network heatmaps

def _initial_relevance(net: Network, traces: list[LayerTrace], start: Start) -> tuple[int, list[np.ndarray]]:
    n = len(traces)
    if start.is_output:
        idx = n - 2 if net.spec.layers[-1].kind == "sigmoid" else n - 1
        return idx, [traces[idx].outputs[0].copy()]
    if not 0 <= start.layer < n:
        raise ConfigError(f"layer {start.layer} out of range [0, {n})")
    outputs = traces[start.layer].outputs
    channels = outputs[0].shape[1]
    if not 0 <= start.filter < channels:
        raise ConfigError(f"filter {start.filter} out of range for layer {start.layer} with {channels} channels")
    rel = []
    for out in outputs:
        r = np.zeros_like(out)
        r[:, start.filter] = out[:, start.filter]
        rel.append(r)
    if start.bank is not None:
        state = net.params[start.layer]
        if not isinstance(state, PifLayerState):
            raise ConfigError(f"layer {start.layer} is not a PIF layer; patch starts need one")
        if not 0 <= start.bank < state.n_banks:
            raise ConfigError(f"patch {start.bank} out of range [0, {state.n_banks})")
        branch, block = state.block_index(start.bank)
        keep = [np.zeros_like(r) for r in rel]
        sel = (slice(None), start.filter) + block
        keep[branch][sel] = rel[branch][sel]
        rel = keep
    return start.layer, rel


def propagate(net: Network, traces: list[LayerTrace], start: Start, config: LrpConfig,
              record: list | None = None) -> np.ndarray:
    """Relevance at the network input (N,C,D,H,W) for a traced forward pass.

    If ``record`` is a list, ``(layer index, relevance branches at that
    layer's output)`` is appended for every layer visited, top first.
    """
    top, rel = _initial_relevance(net, traces, start)
    for i in range(top, -1, -1):
        if record is not None:
            record.append((i, rel))
        tr, layer, params = traces[i], net.spec.layers[i], net.params[i]
        kind = layer.kind
        if kind in ("elu", "dropout", "sigmoid"):
            continue
        if kind == "flatten":
            flat = rel[0]
            parts, offset = [], 0
            for inp in tr.inputs:
                size = int(np.prod(inp.shape[1:]))
                parts.append(flat[:, offset:offset + size].reshape(inp.shape))
                offset += size
            rel = parts
        elif kind == "linear":
            rel = [relprop_affine(params[0].data, tr.inputs[0], rel[0], config)]
        elif kind == "conv3d":
            rel = [relprop_affine(params[0].data, tr.inputs[0], rel[0], config, layer.stride, layer.padding)]
        elif kind == "maxpool":
            rel = [relprop_pool(tr.argmax, rel[0], tr.inputs[0].shape)]
        elif kind == "pif":
            rel = [relprop_pif(params, tr.inputs[0], rel, config)]
    return rel[0]


def heatmap(net: Network, volume: np.ndarray, config: LrpConfig = LrpConfig()) -> RelevanceMap:
    """Relevance heatmap of one input volume ((D,H,W) or (C,D,H,W)) at input resolution."""
    x = np.asarray(volume, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if tuple(x.shape) != net.spec.input_shape:
        raise ShapeError(f"heatmap input {x.shape} does not match model input {net.spec.input_shape}")
    traces = net.trace(x[None])
    rel = propagate(net, traces, config.start, config)[0]
    return RelevanceMap(rel.sum(axis=0), str(config.start), config.alpha, config.beta, net.checksum(), rel)
