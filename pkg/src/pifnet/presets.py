"""Architecture presets: the three baseline/PIF pairs at full size and at desk scale.

Full-size presets document the published architectures and are meant for
shape checking and parameter counting only. Desk presets take 32^3
single-channel volumes and are small enough to train on a laptop CPU.

Notes on the full-size presets:

* ``*-a`` uses unpadded convolutions on volumes zero-padded to 182x224x182,
  which puts a 15x20x15 map in front of the PIF layer: a 3x4x3 grid of
  5^3 patches (36 original) and 2x3x2 = 12 overlap patches.
* ``*-b`` and ``*-c`` use padding-1 convolutions on 96^3 crops, giving a
  10^3 map in front of the PIF layer (8 original patches, 1 overlap).
"""

from __future__ import annotations

from .errors import ConfigError
from .model import LayerSpec as S
from .model import ModelSpec

DESK_INPUT = (1, 32, 32, 32)
FULL_DROPOUT = 0.3
DESK_DROPOUT = 0.1


def _conv_block(filters, padding=0, pool=None, drop=False, p=FULL_DROPOUT):
    out = [S.conv(filters, 3, padding=padding), S.elu()]
    if pool:
        out.append(S.pool(*pool))
    if drop:
        out.append(S.dropout(p))
    return out


def _head(*widths):
    out = [S.flatten()]
    for w in widths:
        out += [S.linear(w), S.elu()]
    return out + [S.linear(1), S.sigmoid()]


def baseline_a() -> ModelSpec:
    layers = (_conv_block(8, pool=(3, 3), drop=True) + _conv_block(16, pool=(3, 3), drop=True)
              + _conv_block(32) + _conv_block(64) + _conv_block(64, pool=(4, 2), drop=True) + _head(100))
    return ModelSpec("baseline-a", (1, 182, 224, 182), layers)


def pif_a() -> ModelSpec:
    layers = (_conv_block(8, pool=(3, 3), drop=True) + _conv_block(16, pool=(3, 3), drop=True)
              + _conv_block(32) + _conv_block(64) + [S.pif(6, 5, 3), S.elu()] + _head(100))
    return ModelSpec("pif-a", (1, 182, 224, 182), layers)


def baseline_b() -> ModelSpec:
    layers = (_conv_block(64, 1, (3, 3), True) + _conv_block(64, 1, (3, 3), True)
              + _conv_block(64, 1) + _conv_block(64, 1) + _conv_block(36, 1, (4, 2), True) + _head(80))
    return ModelSpec("baseline-b", (1, 96, 96, 96), layers)


def pif_b() -> ModelSpec:
    layers = (_conv_block(64, 1, (3, 3), True) + _conv_block(64, 1, (3, 3), True)
              + _conv_block(64, 1) + _conv_block(64, 1) + [S.pif(3, 5, 3), S.elu()] + _head(80))
    return ModelSpec("pif-b", (1, 96, 96, 96), layers)


def baseline_c() -> ModelSpec:
    layers = (_conv_block(64, 1, (3, 3), True) + _conv_block(64, 1, (3, 3), True)
              + _conv_block(64, 1) + _conv_block(64, 1) + [S.pool(3, 3), S.dropout(FULL_DROPOUT)] + _head())
    return ModelSpec("baseline-c", (1, 96, 96, 96), layers)


def pif_c() -> ModelSpec:
    layers = (_conv_block(16, 1, (3, 3), True) + _conv_block(32, 1, (3, 3), True)
              + _conv_block(64, 1) + _conv_block(64, 1) + [S.pif(4, 5, 3), S.elu()] + _head(100))
    return ModelSpec("pif-c", (1, 96, 96, 96), layers)


# desk scale: 32^3 -> conv 30^3 -> pool 10^3 -> conv 8^3, then either a
# conv + pool tail (baseline) or a PIF layer with 4^3 patches (2x2x2 grid + 1 overlap)

def baseline_a_desk() -> ModelSpec:
    layers = (_conv_block(4, pool=(3, 3), drop=True, p=DESK_DROPOUT) + _conv_block(8)
              + _conv_block(8, pool=(2, 2), drop=True, p=DESK_DROPOUT) + _head(32))
    return ModelSpec("baseline-a-desk", DESK_INPUT, layers)


def pif_a_desk() -> ModelSpec:
    layers = (_conv_block(4, pool=(3, 3), drop=True, p=DESK_DROPOUT) + _conv_block(8)
              + [S.pif(2, 4, 3), S.elu()] + _head(32))
    return ModelSpec("pif-a-desk", DESK_INPUT, layers)


def baseline_b_desk() -> ModelSpec:
    layers = (_conv_block(8, pool=(3, 3), drop=True, p=DESK_DROPOUT) + _conv_block(8)
              + _conv_block(6, pool=(2, 2), drop=True, p=DESK_DROPOUT) + _head(24))
    return ModelSpec("baseline-b-desk", DESK_INPUT, layers)


def pif_b_desk() -> ModelSpec:
    layers = (_conv_block(8, pool=(3, 3), drop=True, p=DESK_DROPOUT) + _conv_block(8)
              + [S.pif(1, 4, 3), S.elu()] + _head(48))
    return ModelSpec("pif-b-desk", DESK_INPUT, layers)


def baseline_c_desk() -> ModelSpec:
    layers = (_conv_block(8, pool=(3, 3), drop=True, p=DESK_DROPOUT) + _conv_block(12)
              + [S.pool(2, 2), S.dropout(DESK_DROPOUT)] + _head())
    return ModelSpec("baseline-c-desk", DESK_INPUT, layers)


def pif_c_desk() -> ModelSpec:
    layers = (_conv_block(4, pool=(3, 3), drop=True, p=DESK_DROPOUT) + _conv_block(8)
              + [S.pif(1, 4, 3), S.elu()] + _head(8))
    return ModelSpec("pif-c-desk", DESK_INPUT, layers)


PRESETS = {f.__name__.replace("_", "-"): f for f in (
    baseline_a, pif_a, baseline_b, pif_b, baseline_c, pif_c,
    baseline_a_desk, pif_a_desk, baseline_b_desk, pif_b_desk, baseline_c_desk, pif_c_desk)}

PAIRS = {
    "a": ("baseline-a", "pif-a"),
    "b": ("baseline-b", "pif-b"),
    "c": ("baseline-c", "pif-c"),
    "a-desk": ("baseline-a-desk", "pif-a-desk"),
    "b-desk": ("baseline-b-desk", "pif-b-desk"),
    "c-desk": ("baseline-c-desk", "pif-c-desk"),
}

DESK_PAIRS = {k: v for k, v in PAIRS.items() if k.endswith("-desk")}


def get_preset(name: str) -> ModelSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
