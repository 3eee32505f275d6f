"""Command-line entry point.

Commands: gen-data, train, eval, grad-check, ablate, align-preview,
dump-attention. Every command is a pure function of (config file, seed,
input files): no hidden state, no network access. Contract violations exit
with code 1 and a one-line diagnostic.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import gradcheck, vsrt
from .config import ConfigError, RunConfig, load_config
from .data import GeneratorConfig, generate_dataset, load_dataset
from .distill import (KDConfig, TeacherConfig, load_posterior_cache,
                      save_posterior_cache, train_teacher)
from .fileio import atomic_write_text
from .geometry import NeutralTemplate, align_lips, write_pgm
from .network import LipReader, ModelConfig, load_checkpoint
from .tensor import Tensor, evaluating, no_grad
from .train import (TrainConfig, TrainingError, VARIANT_LABELS, ablation_run,
                    build_model, evaluate, prepare_clips, train, variant_flags)


class CliError(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; the CLI contract is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master random seed")
    common.add_argument("--config", default=None, help="key=value configuration file")
    common.add_argument("--data-dir", default=None, help="dataset root directory")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--variant", default="baseline",
                        choices=("baseline", "kd", "attention", "alignment", "integrated"),
                        help="training variant")
    return common


def build_parser() -> _Parser:
    common = _common_flags()
    parser = _Parser(prog="liplab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("gen-data", parents=[common],
                   help="generate the synthetic corpus (and the teacher cache)")
    sub.add_parser("train", parents=[common], help="train one variant")

    p_eval = sub.add_parser("eval", parents=[common],
                            help="evaluate a saved checkpoint")
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p_eval.add_argument("--split", default="val", help="dataset split to score")

    p_check = sub.add_parser("grad-check", parents=[common],
                             help="finite-difference verification of all gradients")
    p_check.add_argument("--cases", type=int, default=100,
                         help="random cases per primitive op")

    sub.add_parser("ablate", parents=[common],
                   help="train the five table variants and write the summary CSV")

    p_prev = sub.add_parser("align-preview", parents=[common],
                            help="write before/after PGM frames for one clip")
    p_prev.add_argument("--clip", default=None, help="clip id (default: first val clip)")
    p_prev.add_argument("--split", default="val", help="split to take the clip from")

    p_dump = sub.add_parser("dump-attention", parents=[common],
                            help="dump attention maps and scores for one clip")
    p_dump.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p_dump.add_argument("--clip", default=None, help="clip id (default: first val clip)")
    p_dump.add_argument("--split", default="val", help="split to take the clip from")
    return parser


# -- config plumbing ------------------------------------------------------------------


def _generator_config(run: RunConfig, seed: int) -> GeneratorConfig:
    return GeneratorConfig(
        classes=run.classes, frames=run.frames, gen_size=run.gen_size,
        audio_dim=run.audio_dim, train_per_class=run.train_per_class,
        val_per_class=run.val_per_class, test_per_class=run.test_per_class,
        pose_rot_deg=run.pose_rot_deg, pose_shift=run.pose_shift,
        pose_scale=run.pose_scale, noise_sigma=run.noise_sigma,
        distractor_level=run.distractor_level, audio_noise=run.audio_noise,
        seed=seed,
    )


def _train_config(run: RunConfig, seed: int, variant: str) -> TrainConfig:
    return TrainConfig(
        epochs=run.epochs, batch_size=run.batch_size, lr0=run.lr0, lr_min=run.lr_min,
        seed=seed, variant=variant, mixup_alpha=run.mixup_alpha,
        label_smoothing=run.label_smoothing, crop_size=run.crop_size,
        train_fraction=run.train_fraction,
    )


def _model_overrides(run: RunConfig) -> dict:
    return {
        "word_boundary": run.word_boundary,
        "stem_channels": run.stem_channels,
        "stage1_channels": run.stage1_channels,
        "stage2_channels": run.stage2_channels,
        "se_reduction": run.se_reduction,
        "gru_hidden": run.gru_hidden,
        "gru_layers": run.gru_layers,
        "dropout": run.dropout,
        "attention_kernel": run.attention_kernel,
    }


def _kd_config(run: RunConfig) -> KDConfig:
    return KDConfig(temperature=run.kd_temperature, beta_seq=run.kd_beta_seq,
                    beta_frame=run.kd_beta_frame)


def _require(value, flag: str):
    if value is None:
        raise CliError(f"this command requires {flag}")
    return value


def _load_corpus(args):
    return load_dataset(_require(args.data_dir, "--data-dir"))


def _teacher_cache_dir(data_dir) -> Path:
    return Path(data_dir) / "teacher_cache"


def _pick_clip(corpus, split: str, clip_id: str | None):
    if split not in corpus.splits or not corpus.splits[split]:
        raise CliError(f"split {split!r} is empty or missing")
    clips = corpus.splits[split]
    if clip_id is None:
        return clips[0]
    for clip in clips:
        if clip.clip_id == clip_id:
            return clip
    raise CliError(f"clip {clip_id!r} not found in split {split!r}")


# -- commands -----------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    run = load_config(args.config)
    out = Path(_require(args.out, "--out"))
    gen_cfg = _generator_config(run, args.seed)
    manifest = generate_dataset(gen_cfg, out)
    n = {split: len(entries) for split, entries in manifest.splits.items()}
    print(f"wrote corpus to {out} (classes={manifest.classes}, clips={n})")
    if run.teacher_cache:
        corpus = load_dataset(out)
        triples = [(c.clip_id, c.audio, c.label) for c in corpus.splits["train"]]
        teacher_cfg = TeacherConfig(hidden=run.teacher_hidden, epochs=run.teacher_epochs,
                                    lr=run.teacher_lr, batch_size=run.teacher_batch)
        _, cache = train_teacher(triples, manifest.classes, teacher_cfg, seed=args.seed)
        save_posterior_cache(cache, _teacher_cache_dir(out))
        print(f"wrote teacher posterior cache ({len(cache)} clips)")
    return 0


def cmd_train(args) -> int:
    run = load_config(args.config)
    corpus = _load_corpus(args)
    out = Path(_require(args.out, "--out"))
    cfg = _train_config(run, args.seed, args.variant)
    teacher_cache = None
    if variant_flags(cfg.variant)["kd"]:
        teacher_cache = load_posterior_cache(_teacher_cache_dir(args.data_dir))
    model = build_model(corpus, cfg, _model_overrides(run))
    metrics = train(model, corpus, cfg, kd_cfg=_kd_config(run),
                    teacher_cache=teacher_cache, out_dir=out, log=print)
    final = metrics[-1]
    print(f"final val top-1: {final.val_top1:.6f}")
    return 0


def cmd_eval(args) -> int:
    corpus = _load_corpus(args)
    ckpt_dir = Path(args.checkpoint)
    model = load_checkpoint(ckpt_dir)
    variant_file = ckpt_dir / "variant.txt"
    variant = variant_file.read_text().strip() if variant_file.is_file() else args.variant
    align = variant_flags(variant)["alignment"]
    if args.split not in corpus.splits or not corpus.splits[args.split]:
        raise CliError(f"split {args.split!r} is empty or missing")
    prepared = prepare_clips(corpus.splits[args.split], align)
    accuracy = evaluate(model, prepared, model.cfg.frame_size)
    print(f"{args.split} top-1: {accuracy:.6f}")
    return 0


def cmd_grad_check(args) -> int:
    reports = gradcheck.run_op_checks(cases_per_op=args.cases, seed=args.seed)
    reports.append(_network_gradcheck(args.seed))
    for rep in reports:
        print(rep)
    failed = [r for r in reports if not r.passed]
    if failed:
        print(f"{len(failed)} op(s) failed the gradient check")
        return 1
    print(f"all {len(reports)} checks passed")
    return 0


def _network_gradcheck(seed: int) -> gradcheck.CheckReport:
    """Finite-difference check of the whole composed network."""
    from . import tensor as T
    from .augment import smooth_labels, smoothed_cross_entropy

    cfg = ModelConfig(n_classes=5, frames=4, frame_size=16, stem_channels=4,
                      stage1_channels=8, stage2_channels=8, se_reduction=4,
                      gru_hidden=6, gru_layers=2, dropout=0.0, attention=True,
                      kd_head=True)
    model = LipReader(cfg, seed=seed)
    rng = np.random.default_rng([seed, 77])
    clip = rng.uniform(0.0, 1.0, (cfg.frames, cfg.in_channels, 16, 16))
    target = smooth_labels(2, cfg.n_classes, 0.1)
    probe = T.constant(rng.uniform(-1.0, 1.0, (cfg.frames, cfg.n_classes)))
    tensors = list(model.params.values())

    def build(_inputs):
        out = model.forward(clip)
        frame_probe = (out.frame_logits * probe).sum()
        return smoothed_cross_entropy(out.sequence_logits, target) + frame_probe * 0.1

    with evaluating():
        return gradcheck.finite_diff_check(build, tensors, sample=64,
                                           rng=np.random.default_rng([seed, 99]),
                                           name="full_network")


def cmd_ablate(args) -> int:
    run = load_config(args.config)
    corpus = _load_corpus(args)
    out = Path(_require(args.out, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    teacher_cache = load_posterior_cache(_teacher_cache_dir(args.data_dir))
    base_cfg = _train_config(run, args.seed, "baseline")
    rows = ablation_run(corpus, base_cfg, teacher_cache, kd_cfg=_kd_config(run),
                        out_csv=out / "ablation.csv", log=print,
                        model_overrides=_model_overrides(run))
    for row in rows:
        print(f"{row.variant}: {row.val_top1:.2f}%")
    print(f"wrote {out / 'ablation.csv'}")
    return 0


def cmd_align_preview(args) -> int:
    corpus = _load_corpus(args)
    out = Path(_require(args.out, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    clip = _pick_clip(corpus, args.split, args.clip)
    size = clip.frames.shape[1]
    template = NeutralTemplate.default(size)
    for t in range(clip.frames.shape[0]):
        write_pgm(out / f"{clip.clip_id}_f{t:02d}_before.pgm", clip.frames[t])
        aligned = align_lips(clip.frames[t], clip.landmarks[t], template, size)
        write_pgm(out / f"{clip.clip_id}_f{t:02d}_after.pgm", np.clip(aligned, 0.0, 1.0))
    print(f"wrote {2 * clip.frames.shape[0]} PGM frames for {clip.clip_id} to {out}")
    return 0


def cmd_dump_attention(args) -> int:
    corpus = _load_corpus(args)
    out = Path(_require(args.out, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    model = load_checkpoint(Path(args.checkpoint))
    if not model.cfg.attention:
        raise CliError("checkpoint was trained without the attention block")
    clip = _pick_clip(corpus, args.split, args.clip)
    ckpt_dir = Path(args.checkpoint)
    variant_file = ckpt_dir / "variant.txt"
    variant = variant_file.read_text().strip() if variant_file.is_file() else "attention"
    prepared = prepare_clips([clip], variant_flags(variant)["alignment"])[0]
    from .train import clip_input
    x = clip_input(prepared, model.cfg.frame_size, "center", None, True)
    with evaluating(), no_grad():
        result = model.forward(x)
    bundle = result.attention
    for k, attn_map in enumerate(bundle.spatial_maps):
        vsrt.write(out / f"{clip.clip_id}.spatial{k}.vsrt", attn_map.data)
    vsrt.write(out / f"{clip.clip_id}.temporal.vsrt", bundle.temporal_scores.data)
    vsrt.write(out / f"{clip.clip_id}.fused.vsrt", bundle.fused.data)
    print(f"wrote attention tensors for {clip.clip_id} to {out}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "grad-check": cmd_grad_check,
    "ablate": cmd_ablate,
    "align-preview": cmd_align_preview,
    "dump-attention": cmd_dump_attention,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (CliError, ConfigError, TrainingError, FileNotFoundError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
