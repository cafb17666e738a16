"""Synthetic spatially normalised volumes, subject-level splits, augmentation and file I/O.

Volume files (``.pifv``) are little-endian::

    bytes 0-3    magic b"PIFV"
    bytes 4-5    u16 version (1)
    bytes 6-21   u32 channels, depth, height, width
    bytes 22-    float32 payload, row-major (channel, depth, height, width)

Labels and subject ids live in a tab-separated manifest next to the volumes,
one record per line: ``path  label  subject  split`` (paths relative to the
manifest). Lines starting with ``#`` are comments; the first line is
``# pifv-manifest 1``.
"""

from __future__ import annotations

import struct
import warnings
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, FormatError, LeakageError
from .tensor import Rng

MAGIC = b"PIFV"
VERSION = 1
HEADER = struct.Struct("<4sH4I")
MAX_ELEMENTS = 2 ** 31
MANIFEST_TAG = "# pifv-manifest 1"
SPLITS = ("test", "val", "train")
AUGMENT_MODES = ("none", "translate", "flip", "both")
MAX_SHIFT = 2


class DegenerateVolumeWarning(UserWarning):
    """An all-zero volume could not be max-normalised."""


@dataclass
class VolumeRecord:
    volume: np.ndarray
    label: int
    subject_id: str
    split: str = ""


@dataclass(frozen=True)
class Site:
    center: tuple[float, float, float]
    radius: float
    amplitude: float


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic cohort.

    Every volume is a shared smooth template plus Gaussian noise; class-1
    volumes additionally carry Gaussian blobs at ``sites``, displaced per
    sample by at most ``jitter`` voxels on each axis.
    """

    extents: tuple[int, int, int] = (32, 32, 32)
    n_per_class: int = 100
    sites: tuple[Site, ...] = (Site((10.0, 12.0, 20.0), 2.0, 1.0),)
    noise: float = 0.25
    jitter: float = 1.0
    template_level: float = 1.0
    template_waves: tuple[tuple[float, float, float, float], ...] = (
        (1.0, 0.0, 0.0, 0.25), (0.0, 1.5, 0.5, 0.2), (0.5, 0.5, 2.0, 0.15))
    records_per_subject: int = 1

    def validate(self) -> None:
        if len(self.extents) != 3 or min(self.extents) < 1:
            raise ConfigError(f"extents must be three positive integers, got {self.extents}")
        if self.n_per_class < 1 or self.records_per_subject < 1:
            raise ConfigError("n_per_class and records_per_subject must be positive")
        if self.noise < 0 or self.jitter < 0:
            raise ConfigError("noise and jitter must be non-negative")
        for site in self.sites:
            if not all(0 <= c < e for c, e in zip(site.center, self.extents)):
                raise ConfigError(f"site center {site.center} outside extents {self.extents}")
            if site.radius <= 0 or not np.isfinite(site.amplitude):
                raise ConfigError(f"invalid site {site}")


def _grid(extents) -> list[np.ndarray]:
    return np.meshgrid(*(np.arange(e, dtype=np.float64) for e in extents), indexing="ij")


def make_template(spec: SynthSpec) -> np.ndarray:
    """Smooth ellipsoidal 'anatomy' shared by every sample."""
    coords = _grid(spec.extents)
    centre = [(e - 1) / 2 for e in spec.extents]
    r2 = sum(((c - m) / (0.45 * e)) ** 2 for c, m, e in zip(coords, centre, spec.extents))
    mask = 1.0 / (1.0 + np.exp((r2 - 1.0) * 8.0))
    texture = np.ones(spec.extents)
    for fd, fh, fw, amp in spec.template_waves:
        phase = sum(2 * np.pi * f * c / e for f, c, e in zip((fd, fh, fw), coords, spec.extents))
        texture += amp * np.cos(phase)
    return spec.template_level * mask * texture


def blob(extents, center, radius) -> np.ndarray:
    coords = _grid(extents)
    d2 = sum((c - m) ** 2 for c, m in zip(coords, center))
    return np.exp(-d2 / (2.0 * radius ** 2))


def generate_dataset(spec: SynthSpec, seed: int) -> list[VolumeRecord]:
    """Deterministic synthetic cohort with ``n_per_class`` subjects per label.

    Volumes are float32, non-negative, in subject order (class 0 first).
    """
    spec.validate()
    rng = Rng(seed)
    template = make_template(spec)
    records = []
    n_subjects = 2 * spec.n_per_class
    width = max(4, len(str(n_subjects)))
    for s in range(n_subjects):
        label = int(s >= spec.n_per_class)
        subject = f"sub-{s:0{width}d}"
        for _ in range(spec.records_per_subject):
            vol = template + rng.normal(spec.extents, scale=spec.noise)
            if label:
                for site in spec.sites:
                    shift = rng.uniform(size=3, low=-spec.jitter, high=spec.jitter)
                    vol = vol + site.amplitude * blob(spec.extents, np.add(site.center, shift), site.radius)
            vol = np.maximum(vol, 0.0).astype(np.float32)
            records.append(VolumeRecord(vol, label, subject))
    return records


def site_mean(volume: np.ndarray, site: Site) -> float:
    """Mean intensity within one radius of a site centre."""
    mask = blob(volume.shape[-3:], site.center, site.radius) >= np.exp(-0.5)
    return float(volume[..., mask].mean())


# ---------------------------------------------------------------------------
# splitting

def largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    quotas = [f * n for f in fractions]
    counts = [int(np.floor(q)) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_subjects(records: Sequence[VolumeRecord], fractions: Mapping[str, float] | Sequence[float] = (0.2, 0.16, 0.64),
                   seed: int = 0) -> list[VolumeRecord]:
    """Tag every record with a split so that all records of a subject share one split.

    ``fractions`` is a mapping split-name -> fraction or a (test, val, train)
    triple. Subject counts per split use largest-remainder rounding; subjects
    are shuffled with ``seed`` after sorting by id, so record order does not
    matter.
    """
    if not isinstance(fractions, Mapping):
        fractions = dict(zip(SPLITS, fractions))
    names = list(fractions)
    fr = [float(fractions[k]) for k in names]
    if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be non-negative and sum to 1, got {dict(fractions)}")
    subjects = sorted({r.subject_id for r in records})
    if len(subjects) < sum(f > 0 for f in fr):
        raise ConfigError(f"{len(subjects)} subjects cannot fill {len(names)} splits")
    counts = largest_remainder(len(subjects), fr)
    perm = Rng(seed).permutation(len(subjects))
    assignment = {}
    start = 0
    for name, c in zip(names, counts):
        for idx in perm[start:start + c]:
            assignment[subjects[idx]] = name
        start += c
    return [replace(r, split=assignment[r.subject_id]) for r in records]


def check_no_leakage(records: Sequence[VolumeRecord]) -> None:
    seen: dict[str, set[str]] = defaultdict(set)
    for r in records:
        seen[r.subject_id].add(r.split)
    bad = sorted(s for s, splits in seen.items() if len(splits) > 1)
    if bad:
        raise LeakageError(f"subjects in more than one split: {bad[:5]}")


# ---------------------------------------------------------------------------
# intensity normalisation and augmentation

def normalize_max(volume: np.ndarray) -> np.ndarray:
    """Scale a volume so its maximum is 1; all-zero volumes are returned unchanged with a warning."""
    m = volume.max()
    if m <= 0:
        warnings.warn("volume has no positive intensity; left unnormalised", DegenerateVolumeWarning, stacklevel=2)
        return volume
    return volume / m


def translate(volume: np.ndarray, shift: Sequence[int]) -> np.ndarray:
    """Integer shift on the last three axes; voxel i moves to i + shift, vacated voxels are zero."""
    out = np.zeros_like(volume)
    src, dst = [Ellipsis], [Ellipsis]
    for s, n in zip(shift, volume.shape[-3:]):
        s = int(s)
        if abs(s) >= n:
            return out
        src.append(slice(max(0, -s), n - max(0, s)))
        dst.append(slice(max(0, s), n - max(0, -s)))
    out[tuple(dst)] = volume[tuple(src)]
    return out


def flip_sagittal(volume: np.ndarray) -> np.ndarray:
    """Mirror along the width (left-right) axis."""
    return np.ascontiguousarray(volume[..., ::-1])


def check_augment_mode(mode: str, is_pif: bool) -> None:
    if mode not in AUGMENT_MODES:
        raise ConfigError(f"augmentation mode must be one of {AUGMENT_MODES}, got {mode!r}")
    if is_pif and mode in ("flip", "both"):
        raise ConfigError(
            "flip augmentation is not allowed for PIF models: every patch must see the same "
            "anatomy in each iteration, so only translation is permitted")


def augment(volume: np.ndarray, mode: str, rng: Rng, is_pif: bool = False) -> np.ndarray:
    """Random translation by up to +-2 voxels per axis and/or a random sagittal flip (p=0.5)."""
    check_augment_mode(mode, is_pif)
    if mode in ("translate", "both"):
        volume = translate(volume, rng.integers(-MAX_SHIFT, MAX_SHIFT + 1, size=3))
    if mode in ("flip", "both") and rng.uniform() < 0.5:
        volume = flip_sagittal(volume)
    return volume


# ---------------------------------------------------------------------------
# file formats

def write_volume(volume: np.ndarray, path: str | Path) -> None:
    """Write a (D,H,W) or (C,D,H,W) array as a PIFV file."""
    arr = np.asarray(volume)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise FormatError(f"PIFV stores (C,D,H,W) volumes, got shape {arr.shape}")
    payload = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, *arr.shape))
        fh.write(payload.tobytes())


def read_volume(path: str | Path) -> np.ndarray:
    """Read a PIFV file into a float32 (C,D,H,W) array."""
    raw = Path(path).read_bytes()
    return parse_volume(raw, str(path))


def parse_volume(raw: bytes, name: str = "<bytes>") -> np.ndarray:
    if len(raw) < HEADER.size:
        raise FormatError(f"{name}: truncated header ({len(raw)} bytes)")
    magic, version, *shape = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{name}: unsupported version {version}")
    if min(shape) < 1:
        raise FormatError(f"{name}: zero extent in header {shape}")
    n = 1
    for e in shape:
        n *= e
    if n > MAX_ELEMENTS:
        raise FormatError(f"{name}: extents {shape} overflow the {MAX_ELEMENTS}-element limit")
    expected = HEADER.size + 4 * n
    if len(raw) < expected:
        raise FormatError(f"{name}: truncated payload, {(len(raw) - HEADER.size) // 4} of {n} scalars")
    if len(raw) > expected:
        raise FormatError(f"{name}: {len(raw) - expected} trailing bytes after payload")
    return np.frombuffer(raw, dtype="<f4", offset=HEADER.size, count=n).reshape(shape).astype(np.float32)


def save_dataset(records: Sequence[VolumeRecord], out_dir: str | Path, manifest_name: str = "manifest.tsv") -> Path:
    """Write every record as ``volumes/<subject>_<n>.pifv`` plus a manifest; returns the manifest path."""
    out = Path(out_dir)
    (out / "volumes").mkdir(parents=True, exist_ok=True)
    counter: dict[str, int] = defaultdict(int)
    lines = [MANIFEST_TAG, "# path\tlabel\tsubject\tsplit"]
    for r in records:
        rel = f"volumes/{r.subject_id}_{counter[r.subject_id]}.pifv"
        counter[r.subject_id] += 1
        write_volume(r.volume, out / rel)
        lines.append(f"{rel}\t{r.label}\t{r.subject_id}\t{r.split or '-'}")
    manifest = out / manifest_name
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def load_dataset(manifest: str | Path) -> list[VolumeRecord]:
    path = Path(manifest)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != MANIFEST_TAG:
        raise FormatError(f"{path}: missing '{MANIFEST_TAG}' header")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4 or parts[1] not in ("0", "1"):
            raise FormatError(f"{path}:{lineno}: expected 'path<TAB>label<TAB>subject<TAB>split'")
        vol = read_volume(path.parent / parts[0])
        split = "" if parts[3] == "-" else parts[3]
        records.append(VolumeRecord(vol[0] if vol.shape[0] == 1 else vol, int(parts[1]), parts[2], split))
    return records
