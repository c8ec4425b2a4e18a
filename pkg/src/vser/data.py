"""Corpus ingestion and the spectrogram cache.

Supported layouts are recognized purely from file names:

* SAVEE: ``DC_a01.wav`` or ``DC/a01.wav`` (emotion codes a, d, f, h, n, sa, su)
* EmoDB: ``03a01Fa.wav`` (sixth character W, L, E, A, F, T, N)
* CREMA-D: ``1001_DFA_ANG_XX.wav``
* fixture: SAVEE naming, generated by :func:`make_fixture`
"""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vser.audio import (
    AUGMENT_KINDS,
    StftParams,
    augment,
    clip_seed,
    clip_to_image,
    mel_filterbank,
    read_wav,
    sample_augment_spec,
    standardize,
    write_wav,
)
from vser.errors import FormatError, IngestError, InvalidAudio, PrereqError
from vser.formats import read_cache, write_cache
from vser.synthetic import FIXTURE_SPEAKERS, SAVEE_CODES, emotion_clip
from vser.training import ImageSet, split_dataset

log = logging.getLogger(__name__)

DATASETS = ("savee", "emodb", "crema-d", "fixture")
EXPECTED_COUNTS = {"savee": 480, "emodb": 535, "crema-d": 7442}

SAVEE_LABELS = {
    "a": "anger", "d": "disgust", "f": "fear", "h": "happiness",
    "n": "neutral", "sa": "sadness", "su": "surprise",
}
EMODB_LABELS = {
    "W": "anger", "A": "anxiety", "L": "boredom", "E": "disgust",
    "F": "happiness", "N": "neutral", "T": "sadness",
}
CREMAD_LABELS = {
    "ANG": "anger", "DIS": "disgust", "FEA": "fear",
    "HAP": "happiness", "NEU": "neutral", "SAD": "sadness",
}

_SAVEE_RE = re.compile(r"^(?:(?P<spk>[A-Za-z]{2})_)?(?P<emo>sa|su|a|d|f|h|n)(?P<num>\d{2})$")
_EMODB_RE = re.compile(r"^(?P<spk>\d{2})(?P<text>[a-z]\d{2})(?P<emo>[WLEAFTN])(?P<ver>[a-z])$")
_CREMAD_RE = re.compile(r"^(?P<spk>\d{4})_(?P<sent>[A-Z]{3})_(?P<emo>ANG|DIS|FEA|HAP|NEU|SAD)_(?P<lvl>[A-Z]{2})$")

INDEX_NAME = "index.tsv"
INDEX_FIELDS = ("file", "sha256", "split", "label", "clip_id", "augmentation")


@dataclass(frozen=True)
class ManifestEntry:
    clip_path: Path
    speaker_id: str
    label: str
    dataset_name: str
    clip_id: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    label_set: list[str]  # alphabetical; index = class id
    dataset_name: str
    skipped: list[Path] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def label_index(self, label: str) -> int:
        return self.label_set.index(label)


def _label_table(dataset: str) -> dict[str, str]:
    return {"savee": SAVEE_LABELS, "fixture": SAVEE_LABELS, "emodb": EMODB_LABELS, "crema-d": CREMAD_LABELS}[dataset]


def _parse(path: Path, dataset: str) -> tuple[str, str] | None:
    """(speaker, label) from a file name, or None if it does not follow the convention."""
    stem = path.stem
    if dataset in ("savee", "fixture"):
        m = _SAVEE_RE.match(stem)
        if not m:
            return None
        speaker = m["spk"] or path.parent.name
        return speaker, SAVEE_LABELS[m["emo"]]
    if dataset == "emodb":
        m = _EMODB_RE.match(stem)
        return (m["spk"], EMODB_LABELS[m["emo"]]) if m else None
    m = _CREMAD_RE.match(stem)
    return (m["spk"], CREMAD_LABELS[m["emo"]]) if m else None


def ingest(root_path, dataset_name: str) -> DatasetManifest:
    """Walk ``root_path`` for ``.wav`` files and parse labels from their names."""
    if dataset_name not in DATASETS:
        raise IngestError(f"unknown dataset {dataset_name!r}; choose from {DATASETS}")
    root = Path(root_path)
    if not root.is_dir():
        raise IngestError(f"{root} is not a directory")
    entries, skipped = [], []
    for path in sorted(p for p in root.rglob("*") if p.suffix.lower() == ".wav" and p.is_file()):
        parsed = _parse(path, dataset_name)
        if parsed is None:
            skipped.append(path)
            continue
        rel = path.relative_to(root).with_suffix("")
        entries.append(ManifestEntry(path, parsed[0], parsed[1], dataset_name, rel.as_posix()))
    if not entries:
        raise IngestError(f"no {dataset_name} clips found under {root} ({len(skipped)} unparseable)")
    if skipped:
        log.warning("skipped %d files with unrecognized names, e.g. %s", len(skipped), skipped[0].name)
    expected = EXPECTED_COUNTS.get(dataset_name)
    if expected is not None and len(entries) != expected:
        log.warning("%s: found %d clips, the full corpus has %d", dataset_name, len(entries), expected)
    labels = sorted(set(_label_table(dataset_name).values()))
    return DatasetManifest(entries, labels, dataset_name, skipped)


def make_fixture(root, per_class: int = 2, seed: int = 0) -> list[Path]:
    """Write a SAVEE-named synthetic corpus of ``7 * per_class`` clips."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    written = []
    for label, code in enumerate(SAVEE_CODES):
        for k in range(per_class):
            speaker = FIXTURE_SPEAKERS[k % len(FIXTURE_SPEAKERS)]
            path = root / f"{speaker}_{code}{k + 1:02d}.wav"
            write_wav(path, emotion_clip(label, rng))
            written.append(path)
    return written


# ---------------------------------------------------------------------------
# Cache
# ---------------------------------------------------------------------------


@dataclass
class PrepareReport:
    computed: int = 0
    skipped: int = 0
    errors: dict[str, str] = field(default_factory=dict)
    train_files: int = 0
    test_files: int = 0


def _safe_name(clip_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", clip_id)


def read_index(cache_dir) -> list[dict[str, str]]:
    path = Path(cache_dir) / INDEX_NAME
    if not path.exists():
        return []
    lines = path.read_text(encoding="utf-8").splitlines()
    return [dict(zip(INDEX_FIELDS, line.split("\t"))) for line in lines[1:] if line]


def _write_index(cache_dir: Path, rows: list[dict[str, str]]) -> None:
    lines = ["\t".join(INDEX_FIELDS)] + ["\t".join(r[f] for f in INDEX_FIELDS) for r in rows]
    (cache_dir / INDEX_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _verified(cache_dir: Path, row: dict[str, str] | None) -> bool:
    if row is None:
        return False
    path = cache_dir / row["file"]
    return path.exists() and hashlib.sha256(path.read_bytes()).hexdigest() == row["sha256"]


def prepare(
    manifest: DatasetManifest,
    cache_dir,
    ratio: float = 0.8,
    seed: int = 0,
    stft_params: StftParams | None = None,
    augment_train: bool = True,
) -> PrepareReport:
    """Materialize one cache file per (clip, augmentation) pair.

    Test clips get only their original image; train clips get the original
    plus one sample of each augmentation kind. Files whose recorded hash still
    matches are not recomputed, and a clip that fails to decode is reported
    without stopping the run.
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    stft_params = stft_params or StftParams()
    fb = mel_filterbank(128, stft_params.n_fft)
    train, test = split_dataset(manifest, ratio, seed)
    known = {(r["clip_id"], r["augmentation"]): r for r in read_index(cache_dir)}
    report = PrepareReport()
    rows = []

    jobs = [(e, "train") for e in train] + [(e, "test") for e in test]
    for entry, split in jobs:
        kinds = ("original",) + (AUGMENT_KINDS if split == "train" and augment_train else ())
        wanted = [(kind, known.get((entry.clip_id, kind))) for kind in kinds]
        if all(_verified(cache_dir, row) and row["split"] == split for _, row in wanted):
            rows += [row for _, row in wanted]
            report.skipped += len(wanted)
            continue
        try:
            clip = standardize(read_wav(entry.clip_path))
        except InvalidAudio as exc:
            report.errors[entry.clip_id] = str(exc)
            log.error("skipping %s: %s", entry.clip_path, exc)
            continue
        for kind, row in wanted:
            if _verified(cache_dir, row) and row["split"] == split:
                rows.append(row)
                report.skipped += 1
                continue
            variant = clip
            if kind != "original":
                s = clip_seed(seed, entry.clip_id, kind)
                variant = augment(clip, sample_augment_spec(kind, np.random.default_rng(s)), rng_seed=s)
            name = f"{_safe_name(entry.clip_id)}__{kind}.vser"
            blob = write_cache(cache_dir / name, clip_to_image(variant, stft_params, fb))
            rows.append({
                "file": name, "sha256": hashlib.sha256(blob).hexdigest(), "split": split,
                "label": entry.label, "clip_id": entry.clip_id, "augmentation": kind,
            })
            report.computed += 1
    _write_index(cache_dir, rows)
    (cache_dir / "labels.txt").write_text("\n".join(manifest.label_set) + "\n", encoding="utf-8")
    report.train_files = sum(r["split"] == "train" for r in rows)
    report.test_files = sum(r["split"] == "test" for r in rows)
    return report


def load_image_set(cache_dir, split: str) -> ImageSet:
    """Read every cached image of one split back into memory."""
    cache_dir = Path(cache_dir)
    rows = [r for r in read_index(cache_dir) if r["split"] == split]
    labels_path = cache_dir / "labels.txt"
    if not rows or not labels_path.exists():
        raise PrereqError(f"no {split} images cached in {cache_dir}; run `vser prepare` first")
    label_names = labels_path.read_text(encoding="utf-8").split()
    images, labels, ids = [], [], []
    for r in rows:
        try:
            images.append(read_cache(cache_dir / r["file"]))
        except (OSError, FormatError) as exc:
            raise FormatError(f"cache file {r['file']}: {exc}") from exc
        labels.append(label_names.index(r["label"]))
        ids.append(f"{r['clip_id']}#{r['augmentation']}")
    return ImageSet(np.stack(images), np.array(labels), ids, label_names)
