"""``vser`` command line: prepare, train-teacher, match, train-student, eval, attend, flops.

Exit codes: 0 success, 2 configuration error, 3 missing prerequisite,
4 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from vser import __version__
from vser.audio import (
    AUGMENT_KINDS,
    AudioClip,
    augment,
    clip_seed,
    clip_to_image,
    read_wav,
    sample_augment_spec,
    standardize,
)
from vser.config import RunConfig, load_config, serialize_config, with_overrides
from vser.data import ingest, load_image_set, make_fixture, prepare, read_index
from vser.errors import (
    FormatError,
    IngestError,
    InvalidAudio,
    InvalidConfig,
    InvalidDataset,
    InvalidRatio,
    MatchError,
    PrereqError,
    StratifyError,
)
from vser.evaluation import emit_figure, evaluate_predictions, extract_attention_mask, gaussian_smooth, predict
from vser.models import count_flops, load_model, square_variant_spec, student_spec, teacher_spec
from vser.training import train_stage_a, train_stage_b, train_stage_c

log = logging.getLogger("vser")

EXIT_OK, EXIT_CONFIG, EXIT_PREREQ, EXIT_DATA = 0, 2, 3, 4

CHECKPOINTS = {
    "teacher": "teacher.vsck",
    "square": "square.vsck",
    "student_b": "student_b.vsck",
    "student": "student.vsck",
}


def _checkpoint(cfg: RunConfig, name: str, hint: str) -> Path:
    path = cfg.run_dir / CHECKPOINTS[name]
    if not path.exists():
        raise PrereqError(f"missing {path}; run `vser {hint}` first")
    return path


def _write_metadata(cfg: RunConfig, command: str) -> None:
    cfg.run_dir.mkdir(parents=True, exist_ok=True)
    (cfg.run_dir / "config.toml").write_text(serialize_config(cfg), encoding="utf-8")
    meta = f"command = {command}\nseed = {cfg.seed}\nthreads = {cfg.threads}\nversion = {__version__}\n"
    meta += f"torch = {torch.__version__}\nnumpy = {np.__version__}\n"
    (cfg.run_dir / f"meta_{command}.txt").write_text(meta, encoding="utf-8")


def _splits(cfg: RunConfig):
    train = load_image_set(cfg.cache_dir, "train")
    test = load_image_set(cfg.cache_dir, "test")
    return train, test


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_prepare(cfg: RunConfig, args) -> int:
    root = Path(cfg.paths.data_root)
    if cfg.dataset == "fixture" and not any(root.glob("*.wav")):
        make_fixture(root, per_class=args.fixture_per_class, seed=cfg.seed)
        print(f"generated fixture corpus in {root}")
    manifest = ingest(root, cfg.dataset)
    report = prepare(manifest, cfg.cache_dir, cfg.split.ratio, cfg.seed, cfg.stft_params(), cfg.split.augment)
    print(f"clips: {len(manifest)}  labels: {', '.join(manifest.label_set)}  skipped names: {len(manifest.skipped)}")
    print(f"cache files: {report.train_files} train, {report.test_files} test "
          f"({report.computed} computed, {report.skipped} verified)")
    for clip_id, err in report.errors.items():
        print(f"error: {clip_id}: {err}", file=sys.stderr)
    return EXIT_OK


def cmd_train_teacher(cfg: RunConfig, args) -> int:
    train, test = _splits(cfg)
    spec_fn = cfg.square_spec if args.variant == "square" else cfg.teacher_spec
    name = "square" if args.variant == "square" else "teacher"
    _, run = train_stage_a(spec_fn(train.n_classes), train, test, cfg.stage("A_teacher"), cfg.seed,
                           run_dir=cfg.run_dir, name=name)
    best = run.records("test")[run.best_epoch]
    print(f"{name}: best epoch {run.best_epoch}, test WA {best.wa:.4f} -> {run.checkpoints['best']}")
    return EXIT_OK


def cmd_match(cfg: RunConfig, args) -> int:
    teacher_path = _checkpoint(cfg, "teacher", "train-teacher")
    train, test = _splits(cfg)
    _, run = train_stage_b(teacher_path, cfg.student_spec(train.n_classes), train, test,
                           cfg.stage("B_match"), cfg.seed, run_dir=cfg.run_dir)
    best = run.records("test")[run.best_epoch]
    print(f"match: best epoch {run.best_epoch}, test L1 {best.l1:.5f} -> {run.checkpoints['best']}")
    return EXIT_OK


def cmd_train_student(cfg: RunConfig, args) -> int:
    teacher_path = _checkpoint(cfg, "teacher", "train-teacher")
    student_path = _checkpoint(cfg, "student_b", "match")
    train, test = _splits(cfg)
    _, run = train_stage_c(student_path, teacher_path, train, test, cfg.stage("C_student"), cfg.seed,
                           run_dir=cfg.run_dir)
    best = run.records("test")[run.best_epoch]
    print(f"student: best epoch {run.best_epoch}, test WA {best.wa:.4f} -> {run.checkpoints['best']}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    model = load_model(_checkpoint(cfg, args.model, "train-teacher" if args.model == "teacher" else "train-student"))
    test = load_image_set(cfg.cache_dir, "test")
    report = evaluate_predictions(predict(model, test.images), test.labels, test.label_names)
    text = report.to_text()
    (cfg.run_dir / f"eval_{args.model}.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def _variants(clip: AudioClip, clip_id: str, seed: int) -> list[AudioClip]:
    out = [clip]
    for kind in AUGMENT_KINDS:
        s = clip_seed(seed, clip_id, kind)
        out.append(augment(clip, sample_augment_spec(kind, np.random.default_rng(s)), rng_seed=s))
    return out


def cmd_attend(cfg: RunConfig, args) -> int:
    model = load_model(_checkpoint(cfg, args.model, "train-teacher"))
    rows = [r for r in read_index(cfg.cache_dir) if r["split"] == "test" and r["augmentation"] == "original"]
    if not rows:
        raise PrereqError(f"no test clips cached in {cfg.cache_dir}; run `vser prepare` first")
    clip_id = rows[args.clip % len(rows)]["clip_id"]
    manifest = ingest(cfg.paths.data_root, cfg.dataset)
    entry = next(e for e in manifest.entries if e.clip_id == clip_id)
    clip = standardize(read_wav(entry.clip_path))
    images = [clip_to_image(v, cfg.stft_params()) for v in _variants(clip, clip_id, cfg.seed)]
    masks = [gaussian_smooth(extract_attention_mask(model, img), cfg.eval.sigma).mask for img in images]
    out_dir = cfg.run_dir / "attention"
    out_dir.mkdir(parents=True, exist_ok=True)
    mask_path = emit_figure(masks, 2, 2, out_dir / f"{args.model}_masks.pgm")
    image_path = emit_figure(images, 2, 2, out_dir / f"{args.model}_inputs.pgm")
    print(f"clip {clip_id} (original, {', '.join(AUGMENT_KINDS)}): {mask_path}, {image_path}")
    return EXIT_OK


def cmd_flops(cfg: RunConfig, args) -> int:
    n_classes = 6 if cfg.dataset == "crema-d" else 7
    spec = {
        "student": lambda: cfg.student_spec(n_classes),
        "teacher": lambda: cfg.teacher_spec(n_classes),
        "teacher12": lambda: teacher_spec(n_classes, depth=12, heads=12),
        "square": lambda: cfg.square_spec(n_classes),
    }[args.model]()
    report = count_flops(spec)
    print(f"{args.model}: depth {spec.depth}, heads {spec.heads}, patch {spec.patch_h}x{spec.patch_w}")
    print(report.format())
    print(f"FLOPs: {report.total / 1e9:.2f}G")
    return EXIT_OK


COMMANDS = {
    "prepare": cmd_prepare,
    "train-teacher": cmd_train_teacher,
    "match": cmd_match,
    "train-student": cmd_train_student,
    "eval": cmd_eval,
    "attend": cmd_attend,
    "flops": cmd_flops,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="dotted-key config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--run-dir", type=Path)
    common.add_argument("--threads", type=int, help="torch threads; 1 gives bit-reproducible runs")
    common.add_argument("--dataset", choices=["savee", "emodb", "crema-d", "fixture"])
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="vser", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"vser {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("prepare", parents=[common], help="ingest a corpus and build the spectrogram cache")
    p.add_argument("--fixture-per-class", type=int, default=2)
    p = sub.add_parser("train-teacher", parents=[common], help="stage A: teacher with cross entropy")
    p.add_argument("--variant", choices=["vertical", "square"], default="vertical")
    sub.add_parser("match", parents=[common], help="stage B: L1 feature-map matching")
    sub.add_parser("train-student", parents=[common], help="stage C: student with CE + alpha * L1")
    p = sub.add_parser("eval", parents=[common], help="weighted accuracy on the test split")
    p.add_argument("--model", choices=["teacher", "square", "student"], default="student")
    p = sub.add_parser("attend", parents=[common], help="2x2 attention-mask panel of augmented variants")
    p.add_argument("--model", choices=["teacher", "square", "student"], default="teacher")
    p.add_argument("--clip", type=int, default=0, help="index into the test split")
    p = sub.add_parser("flops", parents=[common], help="analytic FLOPs of a network")
    p.add_argument("--model", choices=["student", "teacher", "teacher12", "square"], default="student")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = with_overrides(cfg, seed=args.seed, dataset=args.dataset, threads=args.threads, run_dir=args.run_dir)
    except InvalidConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    torch.set_num_threads(cfg.threads)
    try:
        if args.command != "flops":
            _write_metadata(cfg, args.command)
        return COMMANDS[args.command](cfg, args)
    except (InvalidConfig, MatchError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PrereqError as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_PREREQ
    except (IngestError, InvalidDataset, InvalidAudio, InvalidRatio, StratifyError, FormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
