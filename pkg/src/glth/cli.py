"""``glth`` command line tool.

Subcommands::

    glth gen-config [--preset synthetic|cifar-mlp|cifar-cnn] [--out FILE]
    glth vanilla  --config FILE [--seed N] [--threads N] [--out DIR]
    glth imp      --config FILE [--seed N] [--threads N] [--out DIR]
    glth baseline --config FILE --s 10,100,... [--seed N] [--threads N] [--out DIR]
    glth plot a.csv [b.csv ...] --out curves.svg
    glth inspect-pixels factorized.npz --out masks.svg

Each run writes to ``<out>/<config-hash>/seed-<n>/``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__, data, dictionary, io, plotting, pruning
from .config import PRESETS, DEFAULTS, ConfigError, merge_config, load_config
from .nn import init_params

log = logging.getLogger("glth")

PARTIAL_MARKER = "PARTIAL"


def load_datasets(cfg):
    ds = cfg.dataset
    if ds["kind"] == "cifar10":
        return data.load_cifar10(ds["path"])
    return data.synthetic_blobs(ds["classes"], ds["per_class"], tuple(ds["input_shape"]),
                                ds["noise_dims"], ds["seed"], ds["separation"])


def build_dictionary(cfg, seed):
    """Dictionary for one run; random dictionaries are reseeded per run seed."""
    spec = cfg.network
    layout = init_params(spec, 0).layout
    d = layout[-1].stop
    dic = cfg.dictionary
    if dic["kind"] == "canonical":
        return dictionary.Canonical(d)
    if dic["kind"] == "random":
        return dictionary.random_dictionary(layout, [dic["seed"], seed], mode=dic["mode"])
    return dictionary.make_bottleneck(spec, dic["layer"], dic["u_kind"], seed=[dic["seed"], seed])


def _run_dir(cfg, out, seed):
    path = Path(out or cfg.output_dir) / cfg.config_hash() / f"seed-{seed}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(path, cfg, seed, command, stats):
    manifest = {
        "command": command,
        "config": cfg.raw,
        "config_hash": cfg.config_hash(),
        "seed": seed,
        "normalization": stats,
        "version": __version__,
        "csv_schema": io.CSV_VERSION_LINE,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _guarded(path, fn):
    marker = path / PARTIAL_MARKER
    try:
        result = fn()
    except Exception:
        marker.write_text("run aborted before completion\n")
        raise
    if marker.exists():
        marker.unlink()
    return result


def run_vanilla(cfg, seed, out=None):
    path = _run_dir(cfg, out, seed)
    train, test = load_datasets(cfg)
    _write_manifest(path, cfg, seed, "vanilla", train.stats)
    dic = build_dictionary(cfg, seed)
    sched = pruning.PruneSchedule(tau=0.5, rounds=0)

    def go():
        recs = pruning.run_imp(cfg.network, dic, sched, cfg.train_config(seed), train, test)
        io.write_records(path / "record.csv", recs)
        return recs

    return path, _guarded(path, go)


def run_imp(cfg, seed, out=None):
    path = _run_dir(cfg, out, seed)
    train, test = load_datasets(cfg)
    _write_manifest(path, cfg, seed, "imp", train.stats)
    dic = build_dictionary(cfg, seed)
    active_dir = path / "active"
    active_dir.mkdir(exist_ok=True)
    last = {}

    def on_round(rec, active, coeffs, w):
        io.write_active_set(active_dir / f"round-{rec.round:03d}.txt", active)
        last.update(active=active, w=w)

    def go():
        recs = pruning.run_imp(
            cfg.network, dic, cfg.schedule, cfg.train_config(seed), train, test,
            checkpoint_sink=lambda w0: io.write_checkpoint(path / "w0.ckpt", w0),
            on_round=on_round,
        )
        io.write_records(path / "records.csv", recs)
        if cfg.schedule.grouped:
            layer = pruning.export_factorized(dic, last["active"], last["w"],
                                              input_shape=_flatten_input(cfg.network, dic.layer))
            layer.save(path / "factorized.npz")
        return recs

    return path, _guarded(path, go)


def _flatten_input(spec, layer):
    shapes = spec.shapes()
    return shapes[layer - 1][0] if layer > 0 and len(shapes[layer - 1][0]) == 3 else None


def run_baseline(cfg, seed, s_grid, out=None):
    path = _run_dir(cfg, out, seed)
    train, test = load_datasets(cfg)
    _write_manifest(path, cfg, seed, "baseline", train.stats)
    dic = build_dictionary(cfg, seed)

    def go():
        recs = [pruning.run_fixed_subspace(cfg.network, dic, s, seed, cfg.train_config(seed), train, test)
                for s in sorted(set(s_grid))]
        io.write_records(path / "baseline.csv", recs)
        return recs

    return path, _guarded(path, go)


def cmd_plot(csv_paths, out_svg):
    if not csv_paths:
        raise ValueError("plot needs at least one CSV file")
    curves = []
    for p in csv_paths:
        recs = io.read_records(p)
        recs.sort(key=lambda r: r.compression_ratio)
        curves.append((Path(p).stem, [r.compression_ratio for r in recs], [r.test_accuracy for r in recs]))
    Path(out_svg).write_text(plotting.curves_svg(curves))


def cmd_inspect_pixels(export_path, out_svg):
    layer = pruning.FactorizedLayer.load(export_path)
    if layer.u_kind != "identity":
        raise ValueError(f"pixel masks need an identity-u export, got u_kind={layer.u_kind!r}")
    if layer.input_shape is None:
        raise ValueError("export has no input image geometry")
    masks = plotting.pixel_masks(layer.groups, layer.input_shape)
    Path(out_svg).write_text(plotting.masks_svg(masks))
    return masks


def _parser():
    p = argparse.ArgumentParser(prog="glth", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def run_args(sp):
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int, help="run only this seed")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--out", help="output root (overrides output_dir)")

    run_args(sub.add_parser("vanilla", help="train once over the full dictionary"))
    run_args(sub.add_parser("imp", help="iterative magnitude pruning"))
    bp = sub.add_parser("baseline", help="fixed random subspaces")
    run_args(bp)
    bp.add_argument("--s", required=True, help="comma-separated subspace dimensions")
    pp = sub.add_parser("plot", help="accuracy-vs-compression SVG")
    pp.add_argument("csv", nargs="*")
    pp.add_argument("--out", required=True)
    ip = sub.add_parser("inspect-pixels", help="surviving input pixels of an identity bottleneck")
    ip.add_argument("export")
    ip.add_argument("--out", required=True)
    gp = sub.add_parser("gen-config", help="print a config template")
    gp.add_argument("--preset", choices=sorted(PRESETS), default="synthetic")
    gp.add_argument("--out")
    return p


def _fan_out(fn, seeds, threads):
    if threads <= 1 or len(seeds) == 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, seeds))


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "gen-config":
            text = json.dumps(merge_config(DEFAULTS, PRESETS[args.preset]), indent=2) + "\n"
            if args.out:
                Path(args.out).write_text(text)
            else:
                sys.stdout.write(text)
            return 0
        if args.command == "plot":
            if not args.csv:
                print("glth plot: at least one CSV file is required", file=sys.stderr)
                return 2
            cmd_plot(args.csv, args.out)
            return 0
        if args.command == "inspect-pixels":
            cmd_inspect_pixels(args.export, args.out)
            return 0

        cfg = load_config(args.config)
        seeds = [args.seed] if args.seed is not None else cfg.seeds
        if args.command == "vanilla":
            job = lambda s: run_vanilla(cfg, s, args.out)
        elif args.command == "imp":
            job = lambda s: run_imp(cfg, s, args.out)
        else:
            grid = [int(x) for x in args.s.split(",") if x.strip()]
            job = lambda s: run_baseline(cfg, s, grid, args.out)
        for path, recs in _fan_out(job, seeds, args.threads):
            last = recs[-1]
            print(f"{path}: {len(recs)} record(s), last compression={last.compression_ratio:.4f} "
                  f"test_acc={last.test_accuracy:.4f}")
        return 0
    except (ConfigError, ValueError, OSError) as exc:
        print(f"glth {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
