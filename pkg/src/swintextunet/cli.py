"""Command-line interface: train, infer, eval, verify, bench, gen-data, params.

Exit codes: 0 success, 1 validation/data failure, 2 usage error (argparse).
SWINTEXT_SEED is the seed fallback when --seed is not given.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .bench import (attention_bench, attention_bench_csv, kernel_bench,
                    kernel_bench_csv, model_step_bench)
from .config import RunConfig, parse_config_text
from .data import (load_checkpoint, load_dataset, load_into_model, read_pgm,
                   resize_bilinear, save_dataset, synth_generate, write_pgm,
                   write_mask_pgm)
from .errors import SwinTextError, UsageError
from .losses import dice_iou_metrics
from .model import SwinTextUNet
from .svgplot import write_line_chart
from .text import FileTextProvider, StubTextProvider, embedding_batch
from .train import train
from .verify import run_gradcheck_selftest, run_suite


def _seed_from(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("SWINTEXT_SEED")
    return int(env) if env else 0


def _load_run_config(args) -> RunConfig:
    text = Path(args.config).read_text() if args.config else ""
    overrides = []
    if getattr(args, "stages", None):
        overrides.append(f"num_stages: {args.stages}")
    if getattr(args, "no_text", False):
        overrides.append("use_text: false")
    if getattr(args, "no_crossattn", False):
        overrides.append("use_cross_attention: false")
    if getattr(args, "no_convfuse", False):
        overrides.append("use_convfuse: false")
    if getattr(args, "epochs", None):
        overrides.append(f"epochs: {args.epochs}")
    if overrides:
        # overrides win over file values: drop overridden lines from the file text
        keys = {line.split(":")[0].strip() for line in overrides}
        kept = [ln for ln in text.splitlines()
                if ln.split(":")[0].strip() not in keys]
        text = "\n".join(kept + overrides)
    return parse_config_text(text)


def _provider(args, run: RunConfig):
    emb = getattr(args, "emb_file", None) or run.embeddings_file
    if emb:
        return FileTextProvider(emb, normalize=run.model.normalize_embeddings)
    return StubTextProvider(run.model.text_dim)


def cmd_gen_data(args) -> int:
    samples = synth_generate(args.n, args.size, _seed_from(args))
    save_dataset(samples, args.out)
    counts = {}
    for s in samples:
        counts[s.split] = counts.get(s.split, 0) + 1
    print(f"wrote {len(samples)} samples to {args.out} "
          f"({', '.join(f'{k}={v}' for k, v in sorted(counts.items()))})")
    return 0


def cmd_train(args) -> int:
    run = _load_run_config(args)
    data_root = Path(args.data)
    if not (data_root / "train" / "prompts.tsv").exists():
        print(f"error: missing {data_root / 'train' / 'prompts.tsv'}", file=sys.stderr)
        return 1
    train_samples = load_dataset(data_root, "train")
    val_samples = load_dataset(data_root, "val") if (data_root / "val" / "prompts.tsv").exists() else []
    provider = _provider(args, run)
    result = train(train_samples, val_samples, run, provider,
                   out_dir=args.out, seed=_seed_from(args), log=print)
    series = {"train loss": [r.loss for r in result.rows if r.split == "train"]}
    val_losses = [r.loss for r in result.rows if r.split == "val"]
    if val_losses:
        series["val loss"] = val_losses
    write_line_chart(Path(args.out) / "loss_curves.svg", series,
                     title=f"loss ({result.variant})", ylabel="loss")
    final = result.final("train")
    print(f"done: final train dice={final.dice:.4f} iou={final.iou:.4f}")
    return 0


def cmd_infer(args) -> int:
    tensors, config_text = load_checkpoint(args.ckpt)
    run = parse_config_text(config_text)
    model = SwinTextUNet(run.model, dtype=np.float32, seed=0)
    load_into_model(model, tensors)

    img = read_pgm(args.image)
    orig_shape = img.shape
    size = run.model.image_size
    net_in = resize_bilinear(img, size, size)

    text = None
    if run.model.use_text:
        if not args.text:
            raise UsageError("this checkpoint uses text guidance; pass --text")
        provider = _provider(args, run)
        text = embedding_batch(provider, [args.text], np.float32)

    from .autodiff import Tensor, no_grad
    x = Tensor(np.repeat(net_in[None, None, :, :], 3, axis=1).astype(np.float32))
    with no_grad():
        _, prob = model(x, text)
    prob_map = prob.data[0, 0].astype(np.float64)
    prob_map = resize_bilinear(prob_map, orig_shape[0], orig_shape[1])
    write_mask_pgm(args.out, prob_map > 0.5)
    if args.prob_out:
        write_pgm(args.prob_out, prob_map)
    print(f"wrote mask {args.out} ({orig_shape[1]}x{orig_shape[0]})")
    return 0


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    preds = sorted(p.name for p in pred_dir.glob("*.pgm"))
    gts = sorted(p.name for p in gt_dir.glob("*.pgm"))
    if not preds or not gts:
        print(f"error: no .pgm files in {pred_dir if not preds else gt_dir}", file=sys.stderr)
        return 1
    missing = sorted(set(preds) ^ set(gts))
    if missing:
        print(f"error: unpaired files between {pred_dir} and {gt_dir}: {missing}", file=sys.stderr)
        return 1
    from .data import read_mask_pgm
    rows = []
    for name in preds:
        dice, iou = dice_iou_metrics(read_mask_pgm(pred_dir / name) > 0.5,
                                     read_mask_pgm(gt_dir / name) > 0.5)
        rows.append((name, dice, iou))
    mean_dice = float(np.mean([r[1] for r in rows]))
    mean_iou = float(np.mean([r[2] for r in rows]))

    csv_lines = ["image,dice,iou"] + [f"{n},{d!r},{i!r}" for n, d, i in rows]
    csv_lines.append(f"mean,{mean_dice!r},{mean_iou!r}")
    out_csv = Path(args.out) if args.out else Path("eval.csv")
    out_csv.write_text("\n".join(csv_lines) + "\n")

    width = max(len("image"), *(len(n) for n, _, _ in rows))
    print(f"{'image':<{width}}  {'dice':>8}  {'iou':>8}")
    for n, d, i in rows:
        print(f"{n:<{width}}  {d:>8.4f}  {i:>8.4f}")
    print(f"{'mean':<{width}}  {mean_dice:>8.4f}  {mean_iou:>8.4f}")
    print(f"csv written to {out_csv}")
    return 0


def cmd_verify(args) -> int:
    if args.self_test:
        results = run_gradcheck_selftest()
    else:
        results = run_suite(args.suite)
    failures = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failures += 0 if r.passed else 1
        print(f"[{status}] {r.suite}/{r.name}" + (f": {r.detail}" if r.detail else ""))
    print(f"{len(results) - failures}/{len(results)} properties passed "
          f"(kernel backend: {kernels.backend_name()})")
    return 1 if failures else 0


def cmd_bench(args) -> int:
    if args.kernels:
        rows = kernel_bench(repeat=args.repeat)
        rows += model_step_bench(repeat=max(1, args.repeat // 2))
        csv = kernel_bench_csv(rows)
        print(csv, end="")
        if args.out:
            Path(args.out).write_text(csv)
        return 0
    grids = [args.grid] if args.grid else [8, 16, 32, 56]
    rows = [attention_bench(g, min(args.window, g), repeat=args.repeat) for g in grids]
    csv = attention_bench_csv(rows)
    print(csv, end="")
    if args.out:
        Path(args.out).write_text(csv)
    for r in rows:
        ok = r["ratio"] == r["expected_ratio"]
        print(f"grid={r['grid']} window={r['window']}: MAC ratio {r['ratio']} "
              f"(expected {r['expected_ratio']}) {'ok' if ok else 'MISMATCH'}")
    return 0 if all(r["ratio"] == r["expected_ratio"] for r in rows) else 1


def cmd_params(args) -> int:
    run = _load_run_config(args)
    model = SwinTextUNet(run.model, dtype=np.float32, seed=0)
    groups: dict[str, int] = {}
    for name, p in model.named_parameters():
        groups[name.split(".")[0]] = groups.get(name.split(".")[0], 0) + p.size
    for group, count in sorted(groups.items()):
        print(f"{group:>12}: {count:>12,}")
    total = model.num_parameters()
    print(f"{'total':>12}: {total:>12,}  ({total / 1e6:.2f} M)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="swintext",
                                 description="Text-guided windowed-transformer segmentation")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic text-conditioned dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-text", action="store_true", dest="no_text")
    p.add_argument("--no-convfuse", action="store_true", dest="no_convfuse")
    p.add_argument("--no-crossattn", action="store_true", dest="no_crossattn")
    p.add_argument("--stages", type=int, choices=(3, 4, 5), default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--emb-file", default=None, dest="emb_file")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="segment one image with a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--text", default=None)
    p.add_argument("--emb-file", default=None, dest="emb_file")
    p.add_argument("--out", required=True)
    p.add_argument("--prob-out", default=None, dest="prob_out")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="score prediction masks against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("verify", help="run the property verification suites")
    p.add_argument("--suite", choices=("gradcheck", "attention-oracle", "metrics", "all"),
                   default="all")
    p.add_argument("--self-test", action="store_true", dest="self_test",
                   help="corrupt a gradient on purpose; the checker must flag it")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("bench", help="attention complexity and kernel benchmarks")
    p.add_argument("--grid", type=int, default=None)
    p.add_argument("--window", type=int, default=7)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--kernels", action="store_true",
                   help="compare numpy and compiled kernel backends instead")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("params", help="report parameter counts for a configuration")
    p.add_argument("--config", default=None)
    p.add_argument("--stages", type=int, choices=(3, 4, 5), default=None)
    p.set_defaults(fn=cmd_params)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SwinTextError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
