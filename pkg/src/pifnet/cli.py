"""``pifnet`` command line: synth, train, eval, heatmap and params."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .data import (Site, SynthSpec, generate_dataset, load_dataset, normalize_max, read_volume,
                   save_dataset, split_subjects, write_volume)
from .errors import ConfigError, FormatError, NumericalError, PifError
from .lrp import LrpConfig, heatmap, parse_start
from .model import Network, layer_parameter_counts, load_checkpoint, save_checkpoint
from .training import BALANCE_TOLERANCE, DataSplits, balanced_accuracy, parameter_balance, predict, run_experiment

log = logging.getLogger("pifnet")

EXIT_IO = FormatError.exit_code


def _int_triple(text: str) -> tuple[int, int, int]:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected d,h,w integers, got {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated integers, got {text!r}")
    return vals


def parse_sites(text: str) -> tuple[Site, ...]:
    """``x,y,z,radius,amplitude`` entries separated by semicolons."""
    sites = []
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        try:
            x, y, z, r, a = (float(v) for v in chunk.split(","))
        except ValueError:
            raise ConfigError(f"site {chunk!r} is not x,y,z,radius,amplitude") from None
        sites.append(Site((x, y, z), r, a))
    if not sites:
        raise ConfigError("at least one site is required")
    return tuple(sites)


def _fractions(text: str) -> dict[str, float]:
    try:
        test, val, train = (float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"--fractions takes test,val,train, got {text!r}") from None
    return {"test": test, "val": val, "train": train}


def _write_echo(path: Path, args: argparse.Namespace, extra: str = "") -> None:
    items = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    body = "".join(f"# {k} = {v}\n" for k, v in items.items())
    path.write_text(body + extra)


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    spec = SynthSpec(extents=args.extents, n_per_class=args.n_per_class, sites=parse_sites(args.sites),
                     noise=args.noise, jitter=args.jitter, records_per_subject=args.records_per_subject)
    records = split_subjects(generate_dataset(spec, args.seed), _fractions(args.fractions), seed=args.seed)
    out = Path(args.out)
    manifest = save_dataset(records, out)
    _write_echo(out / "synth.cfg", args)
    counts = {s: sum(r.split == s for r in records) for s in ("train", "val", "test")}
    print(f"wrote {len(records)} volumes to {out} ({', '.join(f'{k} {v}' for k, v in counts.items())})")
    print(f"manifest: {manifest}")
    return 0


def _experiment_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "repeats", None) is not None:
        cfg.values["train.repeats"] = args.repeats
    return cfg


def cmd_train(args) -> int:
    cfg = _experiment_config(args)
    train_cfg = cfg.train
    baseline, pif = cfg.baseline, cfg.pif
    for spec in (baseline, pif):
        spec.shapes()
    records = load_dataset(args.data)
    extents = {tuple(np.shape(r.volume)[-3:]) for r in records}
    for spec in (baseline, pif):
        if extents != {spec.input_shape[1:]}:
            raise ConfigError(f"{spec.name} expects {spec.input_shape[1:]} volumes, data has {sorted(extents)}")
    data = DataSplits(records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_echo(out / "resolved.cfg", args, cfg.render())
    counters = {baseline.name: 0, pif.name: 0}

    def on_repeat(result):
        i = counters[result.model]
        counters[result.model] += 1
        rep = out / f"repeat-{i:02d}"
        rep.mkdir(exist_ok=True)
        spec = baseline if result.model == baseline.name else pif
        net = Network(spec)
        net.set_state(result.best_state)
        save_checkpoint(net, rep / f"{spec.name}.npz")
        rows = ["epoch\ttrain_loss\ttrain_bacc\tval_loss\tval_bacc"]
        rows += [f"{e.epoch}\t{e.train_loss!r}\t{e.train_bacc!r}\t{e.val_loss!r}\t{e.val_bacc!r}" for e in result.epochs]
        (rep / f"{spec.name}-epochs.tsv").write_text("\n".join(rows) + "\n")
        print(f"{result.model} repeat {i}: stopped at epoch {result.stop_epoch}, "
              f"test bal. acc. {100 * result.test_bacc:.2f}%", flush=True)

    report = run_experiment(baseline, pif, data, train_cfg, on_repeat)
    (out / "runs.tsv").write_text("\n".join(report.log_lines()) + "\n")
    table = report.table()
    (out / "table.txt").write_text(table)
    print(table, end="")
    return 0


def cmd_eval(args) -> int:
    net = load_checkpoint(args.model)
    records = [r for r in load_dataset(args.data) if r.split == args.split]
    if not records:
        raise ConfigError(f"split {args.split!r} is empty in {args.data}")
    x = np.stack([normalize_max(np.asarray(r.volume, dtype=np.float64)) for r in records])
    if x.ndim == 4:
        x = x[:, None]
    y = np.array([r.label for r in records])
    print(f"{net.spec.name} on {args.split} ({len(y)} volumes): "
          f"balanced accuracy {100 * balanced_accuracy(predict(net, x), y):.2f}%")
    return 0


def write_pgm(path: Path, image: np.ndarray) -> None:
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def diverging_gray(volume: np.ndarray) -> np.ndarray:
    """Map relevance to 1..255 with zero at 128, scaled by the largest magnitude."""
    scale = float(np.abs(volume).max())
    if scale == 0.0:
        return np.full(volume.shape, 128, dtype=np.uint8)
    return np.clip(np.rint(128 + 127 * volume / scale), 1, 255).astype(np.uint8)


def cmd_heatmap(args) -> int:
    config = LrpConfig(alpha=args.alpha, beta=args.beta)
    net = load_checkpoint(args.model)
    config = LrpConfig(config.alpha, config.beta, config.eps, parse_start(args.start, net))
    vol = read_volume(args.input)
    rel = heatmap(net, normalize_max(vol.astype(np.float64)), config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_volume(rel.volume.astype(np.float32), out)
    slices = out.with_name(out.stem + "_axial")
    slices.mkdir(exist_ok=True)
    gray = diverging_gray(rel.volume)
    for i, image in enumerate(gray):
        write_pgm(slices / f"slice_{i:03d}.pgm", image)
    _write_echo(out.with_suffix(".cfg"), args, f"# model_checksum = {rel.checksum}\n")
    print(f"relevance from {rel.start}: total {rel.total:.6g}, written to {out} and {len(gray)} slices in {slices}")
    return 0


def cmd_params(args) -> int:
    cfg = _experiment_config(args)
    specs = (cfg.baseline, cfg.pif)
    for spec in specs:
        rows = layer_parameter_counts(spec)
        total = sum(r[2] for r in rows)
        print(f"{spec.name}  input {'x'.join(map(str, spec.input_shape))}")
        for i, layer, count, detail in rows:
            if count:
                print(f"  {i:2d}  {layer.describe():<28} {count:>10}  {detail}")
        print(f"  total {total}\n")
    delta = parameter_balance(*specs)
    verdict = "balanced" if abs(delta) <= BALANCE_TOLERANCE else "unbalanced"
    print(f"delta {specs[1].name} vs {specs[0].name}: {100 * delta:+.2f}% ({verdict}, limit "
          f"{100 * BALANCE_TOLERANCE:.0f}%)")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pifnet", description="Patch individual filter networks on 3D volumes.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--extents", type=_int_triple, default=(32, 32, 32))
    s.add_argument("--n-per-class", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sites", default="10,12,20,2,1.0", help="x,y,z,radius,amplitude[;...]")
    s.add_argument("--noise", type=float, default=0.25)
    s.add_argument("--jitter", type=float, default=1.0)
    s.add_argument("--records-per-subject", type=int, default=1)
    s.add_argument("--fractions", default="0.2,0.16,0.64", help="test,val,train subject fractions")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a baseline/PIF pair for several repeats")
    t.add_argument("--config")
    t.add_argument("--data", required=True, help="dataset manifest")
    t.add_argument("--out", required=True)
    t.add_argument("--repeats", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on one split of a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.set_defaults(func=cmd_eval)

    h = sub.add_parser("heatmap", help="alpha/beta relevance heatmap for one volume")
    h.add_argument("--model", required=True)
    h.add_argument("--input", required=True)
    h.add_argument("--start", default="output", help="output, <layer>:<filter> or pif:patch<P>:filter<F>")
    h.add_argument("--alpha", type=float, default=5.0)
    h.add_argument("--beta", type=float, default=4.0)
    h.add_argument("--out", required=True, help="relevance volume (.pifv)")
    h.set_defaults(func=cmd_heatmap)

    c = sub.add_parser("params", help="per-layer parameter counts of a model pair")
    c.add_argument("--config")
    c.set_defaults(func=cmd_params)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PifError as exc:
        print(f"pifnet {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"pifnet {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FloatingPointError as exc:
        print(f"pifnet {args.command}: numerical error: {exc}", file=sys.stderr)
        return NumericalError.exit_code


if __name__ == "__main__":
    sys.exit(main())
