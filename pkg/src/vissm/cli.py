"""Command-line interface.

One subcommand per pipeline stage: kernel benchmarks, scan-order rendering,
data synthesis, training, evaluation, feature export, and the full
cross-generator experiment. Every command that produces artifacts writes the
fully resolved configuration next to them, so a run can be reproduced from
its output directory alone.

Options may come from a plain-text config file (one ``key = value`` per
line, ``#`` comments); explicit command-line flags override file values.

Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 correctness
failure (a benchmark cross-check did not hold).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import blocks as B
from . import scan2d
from . import selective as S
from . import ssm
from . import tensor as T
from . import training as TR
from .data import (
    dataset_from_manifest,
    load_manifest,
    make_dataset,
    save_manifest,
    write_pgm,
    GENERATORS,
)
from .rng import SplitMix64, hash_combine
from .tensor import NumericError, ShapeError, Tensor


class UsageError(Exception):
    pass


class CorrectnessError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- config plumbing ---------------------------------------------------------------


def read_config_file(path: str) -> dict:
    """Plain-text ``key = value`` pairs; later keys win; '#' starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, val = line.split("=", 1)
            values[key.strip().replace("-", "_")] = val.strip()
    return values


def resolve_options(args: argparse.Namespace, parser_defaults: dict) -> dict:
    """defaults < config file < explicit flags; returns the resolved mapping."""
    resolved = dict(parser_defaults)
    if getattr(args, "config", None):
        file_values = read_config_file(args.config)
        unknown = set(file_values) - set(parser_defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        for key, text in file_values.items():
            default = parser_defaults[key]
            caster = type(default) if default is not None else str
            if isinstance(default, bool):
                resolved[key] = text.lower() in ("1", "true", "yes", "on")
            else:
                resolved[key] = caster(text)
    for key in parser_defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def prepare_outdir(path: str, no_clobber: bool) -> str:
    if os.path.isdir(path) and os.listdir(path):
        if no_clobber:
            raise RuntimeError(f"output directory {path!r} is not empty (--no-clobber)")
        print(f"warning: overwriting contents of {path!r}", file=sys.stderr)
    os.makedirs(path, exist_ok=True)
    return path


def echo_config(outdir: str, command: str, resolved: dict) -> None:
    payload = {"schema": "vissm.run_config/1", "command": command, **resolved}
    with open(os.path.join(outdir, "resolved_config.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_bundle(data_path: str):
    if os.path.isdir(data_path):
        data_path = os.path.join(data_path, "manifest.json")
    if not os.path.isfile(data_path):
        raise FileNotFoundError(f"dataset manifest not found: {data_path}")
    return dataset_from_manifest(load_manifest(data_path))


# -- bench-kernels ------------------------------------------------------------------


def cmd_bench_kernels(args) -> int:
    defaults = dict(lengths="64,256,1024,4096,8192", dim=4, channels=4,
                    state=4, chunk=64, repeats=3, seed=0, tolerance=1e-9,
                    out="bench_out")
    opt = resolve_options(args, defaults)
    outdir = prepare_outdir(opt["out"], args.no_clobber)
    lengths = [int(x) for x in str(opt["lengths"]).split(",") if x]
    rng = SplitMix64(hash_combine(opt["seed"], 0xBE7C4))
    rows = []
    checks = []

    for length in lengths:
        params = ssm.random_stable_system(rng, opt["dim"])
        dssm = ssm.discretize_zoh(params)
        x = rng.normal_array((length,))

        y_rec = ssm.run_recurrent(dssm, x)
        y_conv = ssm.run_convolution(dssm, x)
        gap_lti = float(np.max(np.abs(y_rec - y_conv)))

        proj = S.SelectiveProjection(
            w_b=Tensor(rng.normal_array((opt["channels"], opt["state"])) * 0.3),
            w_c=Tensor(rng.normal_array((opt["channels"], opt["state"])) * 0.3),
            w_dt_down=Tensor(rng.normal_array((opt["channels"], 1)) * 0.3),
            w_dt_up=Tensor(rng.normal_array((1, opt["channels"])) * 0.3),
            delta_base=Tensor(rng.normal_array((opt["channels"],))),
            b_b=Tensor(rng.normal_array((opt["state"],)) * 0.3),
            b_c=Tensor(rng.normal_array((opt["state"],)) * 0.3),
        )
        a = Tensor(-rng.uniform_array((opt["channels"], opt["state"]), 0.5, 3.0))
        d = Tensor(rng.normal_array((opt["channels"],)))
        xs = Tensor(rng.normal_array((length, opt["channels"])))
        with T.no_grad():
            y_seq = S.selective_scan_sequential(xs, proj, a, d)
            y_par = S.selective_scan_parallel(xs, proj, a, d, opt["chunk"])
        gap_sel = float(np.max(np.abs(y_seq.data - y_par.data)))

        ok = gap_lti < opt["tolerance"] and gap_sel < opt["tolerance"]
        checks.append({"length": length, "lti_gap": gap_lti,
                       "selective_gap": gap_sel, "ok": ok})
        if not ok:
            raise CorrectnessError(
                f"cross-check failed at L={length}: lti_gap={gap_lti:.3e}, "
                f"selective_gap={gap_sel:.3e} (tolerance {opt['tolerance']:.1e})"
            )

        def timed(fn):
            best = float("inf")
            for _ in range(opt["repeats"]):
                t0 = time.perf_counter()
                fn()
                best = min(best, time.perf_counter() - t0)
            return best

        with T.no_grad():
            rows.append(("lti_recurrent", length, timed(lambda: ssm.run_recurrent(dssm, x))))
            rows.append(("lti_fft_conv", length, timed(lambda: ssm.run_convolution(dssm, x))))
            rows.append(("selective_sequential", length,
                         timed(lambda: S.selective_scan_sequential(xs, proj, a, d))))
            rows.append(("selective_parallel", length,
                         timed(lambda: S.selective_scan_parallel(xs, proj, a, d, opt["chunk"]))))
        print(f"L={length}: cross-checks ok (lti {gap_lti:.2e}, selective {gap_sel:.2e})")

    report = {"schema": "vissm.bench/1", "checks": checks,
              "rows": [{"method": m, "length": l, "seconds": s} for m, l, s in rows]}
    with open(os.path.join(outdir, "bench.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(outdir, "bench.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "length", "seconds"])
        for m, l, s in rows:
            writer.writerow([m, l, f"{s:.6f}"])
    echo_config(outdir, "bench-kernels", opt)
    print(f"wrote {outdir}/bench.json and bench.csv")
    return 0


# -- scan-show ---------------------------------------------------------------------


def _ppm_heatmap(grid: np.ndarray, path: str) -> None:
    """Visitation ranks as a binary P6 heatmap (early = dark, late = bright)."""
    h, w = grid.shape
    ranks = grid.astype(np.float64)
    top = max(ranks.max(), 1.0)
    norm = np.where(ranks < 0, 0.0, ranks / top)
    r = np.round(255 * norm).astype(np.uint8)
    g = np.round(64 + 128 * norm).astype(np.uint8)
    b = np.round(255 * (1.0 - norm)).astype(np.uint8)
    rgb = np.stack([r, g, b], axis=-1)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def cmd_scan_show(args) -> int:
    defaults = dict(strategy="zigzag", height=4, width=4, win=2, stride=2,
                    merge="sum", ppm="")
    opt = resolve_options(args, defaults)
    try:
        scan = scan2d.make_scan(opt["strategy"], opt["height"], opt["width"],
                                win=opt["win"], stride=opt["stride"],
                                merge=opt["merge"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    orders = scan.directions if isinstance(scan, scan2d.MultiScan) else (scan,)
    for k, order in enumerate(orders):
        if len(orders) > 1:
            print(f"direction {k}:")
        grid = scan2d.rank_grid(order)
        width = max(2, len(str(grid.max())))
        for row in grid:
            print(" ".join(f"{'.' * width}" if v < 0 else f"{v:>{width}d}" for v in row))
        if k + 1 < len(orders):
            print()
    if opt["ppm"]:
        _ppm_heatmap(scan2d.rank_grid(orders[0]), opt["ppm"])
        print(f"wrote {opt['ppm']}")
    return 0


# -- make-data ---------------------------------------------------------------------


def cmd_make_data(args) -> int:
    defaults = dict(seed=1, train=1000, val=200, test=500, height=32, width=32,
                    train_generator="G1_checkerboard", strength=0.8,
                    dump_pgm=0, out="data_out")
    opt = resolve_options(args, defaults)
    outdir = prepare_outdir(opt["out"], args.no_clobber)
    bundle = make_dataset(seed=opt["seed"], train_count=opt["train"],
                          val_count=opt["val"], test_count=opt["test"],
                          h=opt["height"], w=opt["width"],
                          train_generator=opt["train_generator"],
                          strength=opt["strength"])
    save_manifest(bundle.manifest, os.path.join(outdir, "manifest.json"))
    if opt["dump_pgm"] > 0:
        sample_dir = os.path.join(outdir, "samples")
        os.makedirs(sample_dir, exist_ok=True)
        for ds in bundle.test_subsets:
            for i in range(min(opt["dump_pgm"], len(ds))):
                write_pgm(ds.images[i], os.path.join(sample_dir, f"{ds.subset_tag}_{i}.pgm"))
    echo_config(outdir, "make-data", opt)
    print(f"wrote {outdir}/manifest.json "
          f"(train {len(bundle.train)}, val {len(bundle.val)}, "
          f"test {len(bundle.test_subsets)}x{opt['test']})")
    return 0


# -- train -------------------------------------------------------------------------


def cmd_train(args) -> int:
    defaults = dict(data="data_out", family="vim", preset="", seed=0,
                    epochs=4, batch=32, lr=1e-3, embed_dim=0, depth=0,
                    state_dim=0, scan="", out="train_out")
    opt = resolve_options(args, defaults)
    bundle = _load_bundle(opt["data"])
    outdir = prepare_outdir(opt["out"], args.no_clobber)

    preset = opt["preset"] or f"desk-{opt['family']}"
    overrides = {}
    if opt["embed_dim"]:
        overrides["embed_dim"] = opt["embed_dim"]
    if opt["depth"]:
        overrides["depth"] = opt["depth"]
    if opt["state_dim"]:
        overrides["state_dim"] = opt["state_dim"]
    if opt["scan"]:
        overrides["scan"] = opt["scan"]
    h = bundle.manifest["image"]["h"]
    w = bundle.manifest["image"]["w"]
    overrides.setdefault("image_h", h)
    overrides.setdefault("image_w", w)
    cfg = B.config_from_preset(preset, **overrides)

    model = B.build_model(cfg, seed=opt["seed"])
    tcfg = TR.TrainConfig(lr=opt["lr"], batch=opt["batch"], epochs=opt["epochs"],
                          seed=opt["seed"])
    model, state = TR.train(model, bundle, cfg=tcfg,
                            state_path=os.path.join(outdir, "train_state.npz"))

    ckpt = os.path.join(outdir, "checkpoint.bin")
    B.save_checkpoint(model, ckpt)
    with open(os.path.join(outdir, "loss_history.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "loss"])
        for i, loss in enumerate(state.loss_history):
            writer.writerow([i, repr(loss)])
    summary = {"schema": "vissm.train_summary/1",
               "best_val_acc": state.best_val_acc,
               "best_epoch": state.best_epoch,
               "val_history": state.val_history,
               "steps": state.step}
    with open(os.path.join(outdir, "train_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    echo_config(outdir, "train", opt)
    print(f"best val acc {state.best_val_acc:.4f} (epoch {state.best_epoch}); "
          f"wrote {ckpt}")
    return 0


# -- eval --------------------------------------------------------------------------


def cmd_eval(args) -> int:
    defaults = dict(checkpoint="train_out/checkpoint.bin", data="data_out",
                    out="eval_out")
    opt = resolve_options(args, defaults)
    if not os.path.isfile(opt["checkpoint"]):
        raise FileNotFoundError(f"checkpoint not found: {opt['checkpoint']}")
    bundle = _load_bundle(opt["data"])
    model = B.load_checkpoint(opt["checkpoint"])
    outdir = prepare_outdir(opt["out"], args.no_clobber)
    report = TR.evaluate(model, bundle.test_subsets,
                         seeds=[bundle.manifest["seed"]])
    with open(os.path.join(outdir, "eval_report.json"), "w") as fh:
        fh.write(TR.report_to_json(report))
    with open(os.path.join(outdir, "eval_report.csv"), "w") as fh:
        fh.write(TR.report_to_csv(report))
    echo_config(outdir, "eval", opt)
    for tag in sorted(report.per_subset):
        print(f"{tag}: {report.per_subset[tag]:.4f}")
    print(f"mean: {report.mean_accuracy:.4f}")
    return 0


# -- export-features ------------------------------------------------------------------


def cmd_export_features(args) -> int:
    defaults = dict(checkpoint="train_out/checkpoint.bin", data="data_out",
                    split="test", out="features.csv")
    opt = resolve_options(args, defaults)
    if not os.path.isfile(opt["checkpoint"]):
        raise FileNotFoundError(f"checkpoint not found: {opt['checkpoint']}")
    bundle = _load_bundle(opt["data"])
    model = B.load_checkpoint(opt["checkpoint"])
    if opt["split"] == "test":
        images = np.concatenate([ds.images for ds in bundle.test_subsets])
        tags = sum(([ds.subset_tag] * len(ds) for ds in bundle.test_subsets), [])
        labels = np.concatenate([ds.labels for ds in bundle.test_subsets])
    elif opt["split"] in ("train", "val"):
        ds = bundle.train if opt["split"] == "train" else bundle.val
        images, tags, labels = ds.images, [ds.subset_tag] * len(ds), ds.labels
    else:
        raise UsageError(f"unknown split {opt['split']!r}")
    count = TR.export_features(model, images, tags, labels, opt["out"])
    with open(str(opt["out"]) + ".config.json", "w") as fh:
        json.dump({"schema": "vissm.run_config/1", "command": "export-features",
                   **opt}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {count} feature rows to {opt['out']}")
    return 0


# -- cross-gen -------------------------------------------------------------------------


def cmd_cross_gen(args) -> int:
    defaults = dict(families="vim,mambavision,vssd", seeds="1,2,3",
                    train=1000, val=200, test=500, strength=0.8,
                    train_generator="G1_checkerboard", epochs=4, batch=32,
                    lr=1e-3, out="crossgen_out")
    opt = resolve_options(args, defaults)
    outdir = prepare_outdir(opt["out"], args.no_clobber)
    families = [f for f in str(opt["families"]).split(",") if f]
    seeds = [int(s) for s in str(opt["seeds"]).split(",") if s]

    def progress(family, seed, report):
        line = ", ".join(f"{k}={v:.3f}" for k, v in report.per_subset.items())
        print(f"[{family} seed {seed}] {line}")

    bundle_report = TR.cross_generator_experiment(
        families=families, seeds=seeds, train_count=opt["train"],
        val_count=opt["val"], test_count=opt["test"], strength=opt["strength"],
        train_generator=opt["train_generator"],
        train_cfg=TR.TrainConfig(lr=opt["lr"], batch=opt["batch"],
                                 epochs=opt["epochs"], seed=0),
        progress=progress,
    )
    with open(os.path.join(outdir, "crossgen.json"), "w") as fh:
        json.dump(bundle_report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(outdir, "crossgen.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["family", "seed", "subset", "accuracy"])
        for row in bundle_report["results"]:
            for tag, acc in sorted(row["per_subset"].items()):
                writer.writerow([row["family"], row["seed"], tag, f"{acc:.6f}"])
    echo_config(outdir, "cross-gen", opt)
    for family, agg in bundle_report["aggregates"].items():
        ind, ood = agg["in_distribution"], agg["out_of_distribution"]
        print(f"{family}: in-dist {ind['mean']:.3f}+/-{ind['sd']:.3f}  "
              f"ood {ood['mean']:.3f}+/-{ood['sd']:.3f}")
    return 0


# -- wiring -------------------------------------------------------------------------------


def _add_common(sub):
    sub.add_argument("--config", help="plain-text key = value option file")
    sub.add_argument("--no-clobber", action="store_true",
                     help="fail instead of overwriting a non-empty output directory")


def build_parser() -> Parser:
    parser = Parser(prog="vissm",
                    description="State-space vision models: kernels, scans, "
                                "synthetic detection harness.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("bench-kernels", help="cross-check and time the kernel routes")
    p.add_argument("--lengths", help="comma-separated sequence lengths")
    p.add_argument("--dim", type=int, help="LTI state dimension")
    p.add_argument("--channels", type=int, help="selective-scan channels")
    p.add_argument("--state", type=int, help="selective-scan state size")
    p.add_argument("--chunk", type=int, help="parallel scan chunk size")
    p.add_argument("--repeats", type=int, help="timing repetitions (min is kept)")
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", type=float, help="cross-check tolerance")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_bench_kernels)

    p = subs.add_parser("scan-show", help="render a 2D scan order as rank grids")
    p.add_argument("--strategy", choices=scan2d.STRATEGIES)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--win", type=int, help="window side for the local strategy")
    p.add_argument("--stride", type=int, help="stride for the efficient strategy")
    p.add_argument("--merge", choices=("sum", "mean"))
    p.add_argument("--ppm", help="also write a P6 heatmap to this path")
    _add_common(p)
    p.set_defaults(func=cmd_scan_show)

    p = subs.add_parser("make-data", help="synthesize a detection dataset manifest")
    p.add_argument("--seed", type=int)
    p.add_argument("--train", type=int, help="train count (real+fake total)")
    p.add_argument("--val", type=int)
    p.add_argument("--test", type=int, help="test count per subset")
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--train-generator", choices=GENERATORS)
    p.add_argument("--strength", type=float, help="artifact strength in (0, 1]")
    p.add_argument("--dump-pgm", type=int, help="also write N sample PGMs per subset")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_make_data)

    p = subs.add_parser("train", help="train a detector on a dataset manifest")
    p.add_argument("--data", help="dataset directory or manifest path")
    p.add_argument("--family", choices=("vim", "mambavision", "vssd"))
    p.add_argument("--preset", help="named preset (default: desk-<family>)")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--state-dim", type=int)
    p.add_argument("--scan", choices=scan2d.STRATEGIES)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="evaluate a checkpoint on the test subsets")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("export-features", help="write penultimate features as CSV")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_export_features)

    p = subs.add_parser("cross-gen", help="train on one generator, test on all")
    p.add_argument("--families", help="comma-separated model families")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--train", type=int)
    p.add_argument("--val", type=int)
    p.add_argument("--test", type=int)
    p.add_argument("--strength", type=float)
    p.add_argument("--train-generator", choices=GENERATORS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_cross_gen)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except CorrectnessError as exc:
        print(f"correctness failure: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError, KeyError, RuntimeError, NumericError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
