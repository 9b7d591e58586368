"""Command line entry point: ``dgan <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .core import EXPRESSIONS, RunConfig, load_config
from .datapipe.manifest import build_pairs, load_manifest, png_loader, read_png, write_manifest, write_png
from .datapipe.synthetic import gen_synthetic_dataset
from .label_embed import region_mask
from .trainer import PairedData, load_checkpoint, train

log = logging.getLogger("dgan")


def _overrides(args) -> dict:
    out = {}
    for item in args.set or ():
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if args.seed is not None:
        out["seed"] = args.seed
    if getattr(args, "max_iterations", None) is not None:
        out["max_iterations"] = args.max_iterations
    if args.no_dropout:
        out["dropout_at_synthesis"] = False
    return out


def _state(args):
    if not args.checkpoint:
        raise SystemExit("--checkpoint is required")
    state = load_checkpoint(args.checkpoint)
    if args.no_dropout:
        state.cfg = state.cfg.replace(dropout_at_synthesis=False)
    return state


def _label_index(state, name: str) -> int:
    if name not in EXPRESSIONS[:state.cfg.label_count]:
        raise SystemExit(f"unknown label {name!r}; choose from {list(EXPRESSIONS[:state.cfg.label_count])}")
    return EXPRESSIONS.index(name)


def _code(state, name: str, intensity: float = 1.0) -> np.ndarray:
    code = np.zeros(state.cfg.label_count)
    code[_label_index(state, name)] = intensity
    return code


def _mask(spec: str, size: int) -> np.ndarray:
    if spec.startswith("file:"):
        img = read_png(spec[5:], size)
        return (img.mean(axis=2) > 0).astype(np.float64)
    return region_mask(spec, size)


def _out_dir(args) -> Path:
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args):
    cfg = load_config(args.config, _overrides(args))
    records = load_manifest(args.manifest, EXPRESSIONS[:cfg.label_count])
    root = args.root or Path(args.manifest).parent
    pairs = build_pairs(records, EXPRESSIONS[:cfg.label_count], root=root)
    if pairs.skipped:
        log.warning("skipped subjects without a neutral image: %s", ", ".join(pairs.skipped))
    data = PairedData.from_pairs(pairs)
    out = _out_dir(args)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    every = max(1, args.log_every)

    def progress(r):
        if r.iteration % every == 0:
            log.info("iter %d  d_total %.4f  g_total %.4f  recon %.4f", r.iteration, r.d_total, r.g_total, r.recon)

    state = None
    if args.checkpoint:
        state = load_checkpoint(args.checkpoint)
    train(cfg, data, out, state=state, progress=progress)
    log.info("wrote %s", out / "final.bin")


def cmd_synth(args):
    state = _state(args)
    x = read_png(args.input, state.cfg.image_size)
    from .synthesis import synthesize
    img = synthesize(state, x, _code(state, args.label, args.intensity), dropout_seed=args.dropout_seed)
    path = _out_dir(args) / (args.output or f"{Path(args.input).stem}_{args.label}.png")
    write_png(path, img)
    print(path)


def cmd_sweep(args):
    from .synthesis import intensity_sweep, save_sweep
    state = _state(args)
    x = read_png(args.input, state.cfg.image_size)
    frames = intensity_sweep(state, x, _label_index(state, args.label), args.steps, args.start,
                             dropout_seed=args.dropout_seed)
    print(save_sweep(frames, _out_dir(args), f"{Path(args.input).stem}_{args.label}"))


def cmd_compound(args):
    from .synthesis import compound_sweep, filmstrip, save_sweep
    state = _state(args)
    x = read_png(args.input, state.cfg.image_size)
    a, b = _label_index(state, args.label_a), _label_index(state, args.label_b)
    out = compound_sweep(state, x, a, b, args.steps, args.mode, dropout_seed=args.dropout_seed)
    stem = f"{Path(args.input).stem}_{args.label_a}_{args.label_b}"
    if args.mode == "grid":
        path = _out_dir(args) / f"{stem}_grid.png"
        write_png(path, np.concatenate([filmstrip(row) for row in out], axis=0))
        print(path)
    else:
        print(save_sweep(out, _out_dir(args), stem))


def cmd_compose(args):
    from .synthesis import region_compose_synthesis
    state = _state(args)
    x = read_png(args.input, state.cfg.image_size)
    mask = _mask(args.mask, state.cfg.image_size)
    img = region_compose_synthesis(state, x, _code(state, args.label_a, args.intensity_a),
                                   _code(state, args.label_b, args.intensity_b), mask,
                                   dropout_seed=args.dropout_seed)
    path = _out_dir(args) / (args.output or f"{Path(args.input).stem}_{args.label_a}_{args.label_b}.png")
    write_png(path, img)
    print(path)


def cmd_augment(args):
    from .synthesis import augment_dataset, missing_label_plan
    state = _state(args)
    vocab = EXPRESSIONS[:state.cfg.label_count]
    records = load_manifest(args.manifest, vocab)
    root = args.root or Path(args.manifest).parent
    plan = missing_label_plan(records, vocab)
    result = augment_dataset(state, records, plan, png_loader(root), vocab, out_dir=_out_dir(args),
                             dropout_seed=args.dropout_seed)
    print(f"generated {len(result.records)} images, skipped {len(result.skipped)}")


def cmd_dataset_gen(args):
    out = _out_dir(args)
    seed = args.seed or 0
    records, _ = gen_synthetic_dataset(args.subjects, EXPRESSIONS, seed, args.size, out)
    if args.drop:
        rng = np.random.default_rng(seed + 1)
        kept = []
        for s in sorted({r.subject_id for r in records}):
            rows = [r for r in records if r.subject_id == s]
            drop = set(rng.choice(EXPRESSIONS[1:], args.drop, replace=False))
            kept.extend(r for r in rows if r.label_name not in drop)
        records = kept
        write_manifest(out / "manifest.csv", records)
    print(f"{len(records)} records in {out / 'manifest.csv'}")


def cmd_eval(args):
    from . import evalharness as ev
    out = _out_dir(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    cfg = load_config(args.config, _overrides(args))
    if cfg.max_iterations is None:
        cfg = cfg.replace(max_iterations=5000)
    n = args.subjects
    records, oracle = gen_synthetic_dataset(2 * n, EXPRESSIONS, args.data_seed, cfg.image_size)
    train_s, test_s = oracle.subjects[:n], oracle.subjects[n:]
    if args.task == "ablation":
        report = ev.run_ablation(cfg, [r for r in records if r.subject_id in train_s], oracle, test_s, seeds,
                                 progress=print)
    else:
        if not args.checkpoint and args.mode == "dgan":
            raise SystemExit("--mode dgan needs --checkpoint")
        state = load_checkpoint(args.checkpoint) if args.checkpoint else None
        bench = ev.build_augmentation_benchmark(args.subjects, args.drop, args.data_seed, cfg.image_size)
        report = ev.EvalReport()
        for i, seed in enumerate(seeds):
            report.rows += ev.kfold_evaluate(bench, args.mode, args.k, state, seed, i).rows
    ev.emit_report(report, out / "eval_report.csv")
    print(report.summary_table(), end="")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dgan", description="Differential GAN training and attribute synthesis")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--checkpoint")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir")
        sp.add_argument("--no-dropout", action="store_true", help="disable dropout at synthesis time")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
        sp.add_argument("--dropout-seed", type=int)
        return sp

    sp = common(sub.add_parser("train", help="train from a manifest"))
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--root", help="image root (default: manifest directory)")
    sp.add_argument("--max-iterations", type=int)
    sp.add_argument("--log-every", type=int, default=100)
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("synth", help="apply one label to an image"))
    sp.add_argument("--input", required=True)
    sp.add_argument("--label", required=True)
    sp.add_argument("--intensity", type=float, default=1.0)
    sp.add_argument("--output")
    sp.set_defaults(func=cmd_synth)

    sp = common(sub.add_parser("sweep", help="intensity sweep filmstrip"))
    sp.add_argument("--input", required=True)
    sp.add_argument("--label", required=True)
    sp.add_argument("--steps", type=int, default=10)
    sp.add_argument("--start", type=float, default=0.1, help="first intensity (0.0 to include the neutral end)")
    sp.set_defaults(func=cmd_sweep)

    sp = common(sub.add_parser("compound", help="blend between two labels"))
    sp.add_argument("--input", required=True)
    sp.add_argument("--label-a", required=True)
    sp.add_argument("--label-b", required=True)
    sp.add_argument("--steps", type=int, default=11)
    sp.add_argument("--mode", choices=("coupled", "grid"), default="coupled")
    sp.set_defaults(func=cmd_compound)

    sp = common(sub.add_parser("compose", help="different labels in different regions"))
    sp.add_argument("--input", required=True)
    sp.add_argument("--label-a", required=True, help="label inside the mask")
    sp.add_argument("--label-b", required=True, help="label outside the mask")
    sp.add_argument("--intensity-a", type=float, default=1.0)
    sp.add_argument("--intensity-b", type=float, default=1.0)
    sp.add_argument("--mask", default="upper-half", help="upper-half|lower-half|left-half|file:<path>")
    sp.add_argument("--output")
    sp.set_defaults(func=cmd_compose)

    sp = common(sub.add_parser("augment", help="fill missing labels per subject"))
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--root")
    sp.set_defaults(func=cmd_augment)

    sp = common(sub.add_parser("dataset-gen", help="render a synthetic face dataset"))
    sp.add_argument("--subjects", type=int, default=20)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--drop", type=int, default=0, help="labels removed per subject (never neutral)")
    sp.set_defaults(func=cmd_dataset_gen)

    sp = common(sub.add_parser("eval", help="ablation or k-fold augmentation study"))
    sp.add_argument("--task", choices=("ablation", "kfold"), default="ablation")
    sp.add_argument("--mode", choices=("none", "linear", "dgan"), default="none")
    sp.add_argument("--seeds", default="0,1,2")
    sp.add_argument("--subjects", type=int, default=10)
    sp.add_argument("--drop", type=int, default=2)
    sp.add_argument("--k", type=int, default=5)
    sp.add_argument("--data-seed", type=int, default=1234)
    sp.add_argument("--max-iterations", type=int)
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
