from __future__ import annotations

import enum
import logging
import typing as t
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from pathlib import Path

from .exceptions import ParseError
from .exceptions import ValidationError
from .types import HistogramLevel
from .utils import atomic_write_file


log: logging.Logger = logging.getLogger(__name__)

MANIFEST_HEADER = "#manifest v1"


class DomainTag(str, enum.Enum):
    SYN_AERIAL = "syn_aerial"
    REAL_GROUND = "real_ground"
    REAL_AERIAL = "real_aerial"  # evaluation only, never trained on

    def __str__(self) -> str:
        return self.value


class ActionClass(t.NamedTuple):
    id: int
    name: str


ACTION_CLASSES: tuple[ActionClass, ...] = tuple(
    ActionClass(i, name)
    for i, name in enumerate(
        [
            "idle",
            "wave",
            "wave attention",
            "shake fist",
            "move forward",
            "come here",
            "take picture with phone",
            "carry a shovel",
            "carry a bat",
            "carry a phone",
            "talk on a phone",
            "hold flashlight",
        ]
    )
)
NUM_CLASSES = len(ACTION_CLASSES)


def majority_label(labels: t.Iterable[int]) -> tuple[int, int]:
    """
    Most frequent label and its count. Ties go to the smaller class id, so the
    result does not depend on the order of the labels.
    """
    counts = Counter(labels)
    if not counts:
        raise ValueError("no labels")
    label, n = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return label, n


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    subject_id: str
    domain: DomainTag
    fps: Fraction
    frame_labels: tuple[int, ...]
    feature_path: str | None = None

    @property
    def n_frames(self) -> int:
        return len(self.frame_labels)

    @property
    def majority(self) -> int:
        return majority_label(self.frame_labels)[0]


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ClipRecord, ...] = ()
    class_registry: tuple[ActionClass, ...] = ACTION_CLASSES
    provenance: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "class_registry", tuple(self.class_registry))

    def __len__(self) -> int:
        return len(self.records)

    @cached_property
    def by_subject(self) -> dict[str, tuple[ClipRecord, ...]]:
        return _index(self.records, lambda r: r.subject_id)

    @cached_property
    def by_domain(self) -> dict[DomainTag, tuple[ClipRecord, ...]]:
        return _index(self.records, lambda r: r.domain)

    @property
    def subjects(self) -> set[str]:
        return set(self.by_subject)

    @property
    def class_ids(self) -> set[int]:
        return {c.id for c in self.class_registry}

    def validate(self) -> None:
        known = self.class_ids
        seen = set()
        for rec in self.records:
            if rec.clip_id in seen:
                raise ValidationError(f"duplicate clip_id {rec.clip_id!r}")
            seen.add(rec.clip_id)
            if not rec.frame_labels:
                raise ValidationError(f"empty frame_labels in clip {rec.clip_id!r}")
            unknown = sorted(set(rec.frame_labels) - known)
            if unknown:
                raise ValidationError(
                    f"unknown class id {unknown[0]} in clip {rec.clip_id!r}"
                )
            if rec.fps <= 0:
                raise ValidationError(f"non-positive fps in clip {rec.clip_id!r}")


def _index(records, key):
    result: dict = {}
    for rec in records:
        result.setdefault(key(rec), []).append(rec)
    return {k: tuple(v) for k, v in result.items()}


def parse_rle(text: str) -> tuple[int, ...]:
    labels: list[int] = []
    for pair in text.split(","):
        label, sep, count = pair.partition(":")
        if not sep:
            raise ValueError(f"bad run {pair!r} (expected label:count)")
        n = int(count)
        if n <= 0:
            raise ValueError(f"bad run length in {pair!r}")
        labels.extend([int(label)] * n)
    return tuple(labels)


def format_rle(labels: t.Sequence[int]) -> str:
    runs: list[list[int]] = []
    for label in labels:
        if runs and runs[-1][0] == label:
            runs[-1][1] += 1
        else:
            runs.append([label, 1])
    return ",".join(f"{label}:{n}" for label, n in runs)


def load_registry(path: Path) -> tuple[ActionClass, ...]:
    """Class registry file: one `id<TAB>name` per line."""
    path = Path(path)
    registry = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        cid, sep, name = line.partition("\t")
        if not sep or not cid.strip().isdigit() or not name.strip():
            raise ParseError(f"malformed registry line {line!r}", path, lineno)
        registry.append(ActionClass(int(cid), name.strip()))
    ids = [c.id for c in registry]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate class id in registry {path}")
    return tuple(sorted(registry))


def save_registry(registry: t.Iterable[ActionClass], path: Path) -> None:
    lines = [f"{c.id}\t{c.name}\n" for c in sorted(registry)]
    atomic_write_file(Path(path), "".join(lines))


def _parse_record(line: str, path: Path, lineno: int) -> ClipRecord:
    fields = line.rstrip("\r\n").split("\t")
    if len(fields) not in (5, 6):
        msg = f"expected 5 tab-separated fields, got {len(fields)}"
        raise ParseError(msg, path, lineno)
    clip_id, subject_id, domain, fps, rle = (f.strip() for f in fields[:5])
    feature_path = fields[5].strip() or None if len(fields) == 6 else None
    if not clip_id or not subject_id:
        raise ParseError("empty clip_id or subject_id", path, lineno)
    try:
        tag = DomainTag(domain)
    except ValueError:
        raise ParseError(f"unknown domain {domain!r}", path, lineno) from None
    try:
        rate = Fraction(fps)
    except (ValueError, ZeroDivisionError):
        raise ParseError(f"bad fps {fps!r}", path, lineno) from None
    if not rle:
        raise ValidationError(f"empty frame_labels in clip {clip_id!r} ({path}:{lineno})")
    try:
        labels = parse_rle(rle)
    except ValueError as err:
        raise ParseError(str(err), path, lineno) from None
    return ClipRecord(
        clip_id=clip_id,
        subject_id=subject_id,
        domain=tag,
        fps=rate,
        frame_labels=labels,
        feature_path=feature_path,
    )


def load_manifest(
    path: Path, registry: t.Sequence[ActionClass] | None = None
) -> DatasetManifest:
    """
    Read and validate a manifest file. Raises ParseError (with the line number) for
    lines that can't be read, and ValidationError for unknown class ids, duplicate
    clip ids or clips without frames.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].startswith(MANIFEST_HEADER):
        raise ParseError(f"missing {MANIFEST_HEADER!r} header", path, 1)
    provenance = lines[0][len(MANIFEST_HEADER):].strip()
    records = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip() or line.startswith("#"):
            continue
        records.append(_parse_record(line, path, lineno))
    manifest = DatasetManifest(
        records=records,
        class_registry=ACTION_CLASSES if registry is None else tuple(registry),
        provenance=provenance,
    )
    manifest.validate()
    log.debug("loaded %d records from %s", len(manifest), path)
    return manifest


def dumps_manifest(manifest: DatasetManifest) -> str:
    header = MANIFEST_HEADER
    if manifest.provenance:
        header += " " + " ".join(manifest.provenance.split())
    lines = [header]
    for rec in sorted(manifest.records, key=lambda r: r.clip_id):
        fields = [
            rec.clip_id,
            rec.subject_id,
            rec.domain.value,
            str(rec.fps),
            format_rle(rec.frame_labels),
        ]
        if rec.feature_path:
            fields.append(rec.feature_path)
        lines.append("\t".join(fields))
    return "\n".join(lines) + "\n"


def save_manifest(manifest: DatasetManifest, path: Path) -> None:
    """Canonical writer: records sorted by clip_id, single tabs, normalized whitespace."""
    atomic_write_file(Path(path), dumps_manifest(manifest))


def class_histogram(
    manifest: DatasetManifest, level: HistogramLevel = "clip"
) -> dict[int, int]:
    """
    Per-class counts over the whole registry (zeros included). At clip level each
    clip counts once under its majority label; at frame level every frame counts.
    """
    hist = dict.fromkeys(sorted(manifest.class_ids), 0)
    for rec in manifest.records:
        if level == "clip":
            hist[rec.majority] += 1
        elif level == "frame":
            for label, n in Counter(rec.frame_labels).items():
                hist[label] += n
        else:
            raise ValueError(f"level must be 'clip' or 'frame', got {level!r}")
    return hist


def filter_subjects(
    manifest: DatasetManifest, excluded: t.Iterable[str]
) -> DatasetManifest:
    """Drop every record whose subject is excluded. The input manifest is untouched."""
    excluded = set(excluded)
    missing = sorted(excluded - manifest.subjects)
    if missing:
        log.warning("excluded subject(s) never appear in manifest: %s", ", ".join(missing))
    records = [r for r in manifest.records if r.subject_id not in excluded]
    log.info("subject filter kept %d/%d records", len(records), len(manifest))
    return DatasetManifest(records, manifest.class_registry, manifest.provenance)


def select_subjects(
    manifest: DatasetManifest, included: t.Iterable[str]
) -> DatasetManifest:
    """Keep only the records of the given subjects (e.g. a held-out test set)."""
    included = set(included)
    return filter_subjects(manifest, manifest.subjects - included)


def manifest_summary(manifest: DatasetManifest) -> dict[str, t.Any]:
    return {
        "clips": len(manifest),
        "frames": sum(r.n_frames for r in manifest.records),
        "domains": {
            str(tag): len(recs) for tag, recs in sorted(manifest.by_domain.items())
        },
        "subjects": {s: len(recs) for s, recs in sorted(manifest.by_subject.items())},
    }
