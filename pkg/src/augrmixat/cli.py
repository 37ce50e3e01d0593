"""Command-line entry point: ``augrmixat {gen-data,train,attack,eval,sweep,corrupt,mask}``.

Exit codes: 0 success, 2 usage/config error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .adversarial import AttackSpec, clean_accuracy, run_attack
from .data import SHAPES, make_shapes
from .formats import FormatError, dataset_checksum, read_checkpoint, read_dataset, write_checkpoint, \
    write_dataset, write_tensor
from .mix import fmix_mask
from .numerics import Rng
from .robustness import CORRUPTIONS, CorruptionSpec, OcclusionSpec, corrupt_batch, corruption_error, mca, mce, \
    occlude_batch, top_k_accuracy
from .trainer import TrainConfig, TrainingDiverged, lambda_sweep, reports_to_csv, sweep_to_csv, train, \
    unknown_keys

log = logging.getLogger("augrmixat")

EXIT_USAGE = 2
EXIT_NUMERIC = 3


class CliError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _threads(n):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path} is not valid JSON: {exc}") from None


def _load_dataset(path):
    try:
        return read_dataset(path)
    except (OSError, FormatError) as exc:
        raise CliError(f"cannot load dataset {path}: {exc}") from None


def _load_model(path):
    try:
        return read_checkpoint(path)
    except (OSError, FormatError) as exc:
        raise CliError(f"cannot load checkpoint {path}: {exc}") from None


def _out_dir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise CliError(f"cannot write to {out}: {exc.strerror}") from None
    return out


def _config_from(data: dict, mode=None, seed=None) -> TrainConfig:
    bad = unknown_keys(data)
    if bad:
        raise CliError(f"unknown config keys: {', '.join(bad)}")
    data = dict(data)
    if mode is not None:
        data["mode"] = mode
    if seed is not None:
        data["seed"] = seed
    try:
        return TrainConfig.from_dict(data).validate()
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid config: {exc}") from None


# commands ---------------------------------------------------------------------------

def cmd_gen_data(args):
    if args.n < args.classes:
        raise CliError(f"--n ({args.n}) must be at least --classes ({args.classes})")
    if not 2 <= args.classes <= len(SHAPES):
        raise CliError(f"--classes must be in 2..{len(SHAPES)}")
    out = _out_dir(args.out)
    params = {"noise": args.noise, "texture": args.texture, "shape_flip": args.shape_flip}
    images, labels = make_shapes(args.n, args.classes, args.size, args.channels, args.seed, **params)
    meta = {"name": "shapes", "num_classes": args.classes, "seed": args.seed, "size": args.size,
            "channels": args.channels, "generator": params}
    write_dataset(out, images, labels, meta)
    print(f"wrote {args.n} images ({np.bincount(labels).tolist()} per class) to {out}")


def cmd_train(args):
    if (args.config is None) == (args.manifest is None):
        raise CliError("give exactly one of --config or --manifest")
    if args.manifest:
        manifest = _load_json(args.manifest)
        if "config" not in manifest:
            raise CliError(f"{args.manifest} has no 'config' entry")
        cfg = _config_from(manifest["config"], args.mode, args.seed)
    else:
        cfg = _config_from(_load_json(args.config), args.mode, args.seed)
    images, labels, meta = _load_dataset(args.data)
    out = _out_dir(args.out)
    manifest = {"version": __version__, "seed": cfg.seed, "config": cfg.to_dict(),
                "data": str(args.data), "dataset_checksum": dataset_checksum(args.data),
                "threads": args.threads}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    def on_epoch(epoch, stack, report):
        if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            write_checkpoint(out / f"model_epoch{epoch + 1:03d}.atc", stack)

    with _threads(args.threads):
        try:
            stack, reports = train(images, labels, cfg, num_classes=meta.get("num_classes"), on_epoch=on_epoch)
        except TrainingDiverged as exc:
            raise CliError(str(exc), EXIT_NUMERIC) from None
        except FloatingPointError as exc:
            raise CliError(f"numeric failure: {exc}", EXIT_NUMERIC) from None
    (out / "metrics.csv").write_text(reports_to_csv(reports))
    write_checkpoint(out / "model_final.atc", stack)
    last = reports[-1]
    print(f"trained {cfg.mode} for {cfg.epochs} epochs: loss {last.total:.4f}, train top1 {last.train_top1:.3f}")


def cmd_attack(args):
    target = _load_model(args.model)
    source = _load_model(args.source_model) if args.source_model else target
    images, labels, _ = _load_dataset(args.data)
    if source.input_shape != target.input_shape or tuple(images.shape[1:]) != target.input_shape:
        raise CliError("model and data input shapes do not match")
    spec = AttackSpec(eps=args.eps, step=args.step, iters=args.iters, random_start=args.random_start)
    with _threads(args.threads):
        x_adv = run_attack(source, images, labels, args.method, spec, Rng(args.seed))
        robust = top_k_accuracy(target.predict_logits(x_adv), labels, 1)
        clean = clean_accuracy(target, images, labels)
    result = {"method": args.method, "eps": args.eps, "step": args.step, "iters": args.iters,
              "robust_top1": robust, "clean_top1": clean, "n": int(len(images)),
              "random_start": args.random_start, "init": spec.init, "init_sigma": spec.init_sigma,
              "source_model": str(args.source_model) if args.source_model else None}
    out = _out_dir(args.out)
    (out / "results.json").write_text(json.dumps(result, indent=2) + "\n")
    print(f"{args.method}: robust top1 {robust:.4f} (clean {clean:.4f}, n={len(images)})")


def cmd_eval(args):
    stack = _load_model(args.model)
    images, labels, _ = _load_dataset(args.data)
    corruption, occlusion = args.corruption, args.occlusion
    if corruption is None and occlusion is None:
        corruption, occlusion = "all", "both"
    if corruption not in (None, "all") and corruption not in CORRUPTIONS:
        raise CliError(f"unknown corruption {corruption!r}; valid kinds: all, {', '.join(CORRUPTIONS)}")
    rng = Rng(args.seed)
    result = {"clean_top1": clean_accuracy(stack, images, labels), "n": int(len(images))}
    with _threads(args.threads):
        if corruption is not None:
            kinds = CORRUPTIONS if corruption == "all" else (corruption,)
            streams = rng.child(0)  # same per-kind streams as corruption_report
            ce = {k: corruption_error(stack.predict_logits, images, labels, k, streams.child(CORRUPTIONS.index(k)))
                  for k in kinds}
            result.update({"ce": ce, "mce": mce(ce), "mca": mca(ce)})
        if occlusion is not None:
            occ = {"block_frac": args.block_frac}
            modes = ("untargeted", "targeted") if occlusion == "both" else (occlusion,)
            for mode in modes:
                stream = rng.child(1).child(0 if mode == "untargeted" else 1)
                X_occ = occlude_batch(images, OcclusionSpec(mode, args.block_frac), stream, labels=labels)
                k = 2 if mode == "targeted" else 1
                occ[f"{mode}_top{k}"] = top_k_accuracy(stack.predict_logits(X_occ), labels, k)
            if occlusion == "both":
                occ["mean"] = 0.5 * (occ["untargeted_top1"] + occ["targeted_top2"])
            result["occlusion"] = occ
    if args.out:
        out = _out_dir(args.out)
        (out / "eval.json").write_text(json.dumps(result, indent=2) + "\n")
        if "ce" in result:
            rows = ["kind,ce"] + [f"{k},{v!r}" for k, v in result["ce"].items()]
            (out / "corruption.csv").write_text("\n".join(rows) + "\n")
    print(json.dumps(result, indent=2))


def cmd_corrupt(args):
    if args.kind not in CORRUPTIONS:
        raise CliError(f"unknown corruption {args.kind!r}; valid kinds: {', '.join(CORRUPTIONS)}")
    images, labels, meta = _load_dataset(args.data)
    out = _out_dir(args.out)
    spec = CorruptionSpec(args.kind, args.severity)
    corrupted = corrupt_batch(images, spec, Rng(args.seed))
    write_dataset(out, corrupted, labels, {**meta, "corruption": {"kind": args.kind, "severity": args.severity,
                                                                  "param": spec.param, "seed": args.seed}})
    print(f"wrote {len(images)} {args.kind} (severity {args.severity}) images to {out}")


def _float_list(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("list must not be empty")
    return values


def cmd_sweep(args):
    cfg = _config_from(_load_json(args.config), "augrmixat", args.seed)
    images, labels, meta = _load_dataset(args.data)
    test_images, test_labels = images, labels
    if args.test_data:
        test_images, test_labels, _ = _load_dataset(args.test_data)
    out = _out_dir(args.out)
    with _threads(args.threads):
        try:
            rows = lambda_sweep(images, labels, cfg, args.lambda1, args.lambda2, test_images, test_labels,
                                num_classes=meta.get("num_classes"), eval_seed=args.seed or 0)
        except TrainingDiverged as exc:
            raise CliError(str(exc), EXIT_NUMERIC) from None
    (out / "sweep.csv").write_text(sweep_to_csv(rows))
    print(sweep_to_csv(rows), end="")


def cmd_mask(args):
    mask, gamma = fmix_mask(args.size, args.size, args.gamma, args.decay, Rng(args.seed))
    write_tensor(args.out, mask.astype(np.uint8))
    print(f"wrote {args.size}x{args.size} fmix mask, gamma={gamma:.6f}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="augrmixat", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic shapes dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=600)
    g.add_argument("--classes", type=int, default=3)
    g.add_argument("--size", type=int, default=16)
    g.add_argument("--channels", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--texture", type=float, default=0.0)
    g.add_argument("--shape-flip", type=float, default=0.0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model (AugRmixAT, standard or PGD-AT)")
    t.add_argument("--config")
    t.add_argument("--manifest", help="rerun from a previous run's manifest.json")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--mode", choices=("augrmixat", "standard", "pgdat"))
    t.add_argument("--seed", type=int)
    t.add_argument("--threads", type=int)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="white-box or transfer attack accuracy")
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--method", choices=("fgsm", "pgd", "cw"), default="pgd")
    a.add_argument("--eps", type=float, default=0.031)
    a.add_argument("--step", type=float, default=0.003)
    a.add_argument("--iters", type=int, default=20)
    a.add_argument("--source-model")
    a.add_argument("--random-start", action=argparse.BooleanOptionalAction, default=True)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", default=".")
    a.add_argument("--threads", type=int)
    a.set_defaults(func=cmd_attack)

    e = sub.add_parser("eval", help="corruption and occlusion robustness")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--corruption", help="'all' or one kind")
    e.add_argument("--occlusion", choices=("untargeted", "targeted", "both"))
    e.add_argument("--block-frac", type=float, default=0.4)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.add_argument("--threads", type=int)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="lambda1/lambda2 sensitivity table")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--test-data")
    s.add_argument("--out", required=True)
    s.add_argument("--lambda1", type=_float_list, required=True)
    s.add_argument("--lambda2", type=_float_list, required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("corrupt", help="write a corrupted copy of a dataset")
    c.add_argument("--data", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--kind", required=True)
    c.add_argument("--severity", type=int, choices=range(1, 6), default=1)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_corrupt)

    m = sub.add_parser("mask", help="dump an FMix mask as an AT1 u8 tensor")
    m.add_argument("--out", required=True)
    m.add_argument("--size", type=int, default=32)
    m.add_argument("--gamma", type=float, default=0.5)
    m.add_argument("--decay", type=float, default=3.0)
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_mask)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
