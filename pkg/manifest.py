"""Dataset manifests: a ``path,label`` CSV of WAV clips relative to a root."""

import csv
import logging
import os
from collections import Counter, namedtuple
from dataclasses import dataclass, field

import numpy as np

from errors import LabelError, ManifestError
from models import LABEL_NAMES, EmotionLabel

logger = logging.getLogger(__name__)

MANIFEST_CSV_HEADERS = ['path', 'label']

ManifestEntry = namedtuple("ManifestEntry", "path label")


@dataclass
class DatasetManifest:
    """Validated manifest rows plus the directory their paths are relative to."""

    entries: list = field(default_factory=list)
    root: str = "."

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def labels(self):
        return np.array([int(entry.label) for entry in self.entries], dtype=np.int64)

    def resolve(self, entry):
        return os.path.join(self.root, entry.path)

    def histogram(self):
        counts = Counter(entry.label.label for entry in self.entries)
        return {name: counts.get(name, 0) for name in LABEL_NAMES}


def load_manifest(path, root=None):
    """Parse and validate a manifest CSV; ``root`` defaults to the CSV's directory."""

    root = os.path.dirname(os.path.abspath(path)) if root is None else root
    try:
        with open(path, newline="", encoding="utf-8") as manifest_csv:
            reader = csv.DictReader(manifest_csv)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != MANIFEST_CSV_HEADERS:
                raise ManifestError(f"{path}: header must be {','.join(MANIFEST_CSV_HEADERS)}, "
                                    f"got {reader.fieldnames}")

            entries = []
            seen = set()
            for row in reader:
                clip = (row.get("path") or "").strip()
                if not clip:
                    raise ManifestError(f"{path}: row {reader.line_num} has no path")
                try:
                    label = EmotionLabel.from_name(row.get("label") or "")
                except LabelError:
                    raise LabelError(f"{path}: row {reader.line_num} has unknown label "
                                     f"{row.get('label')!r}") from None
                if clip in seen:
                    raise ManifestError(f"{path}: row {reader.line_num} repeats path {clip!r}")
                seen.add(clip)
                entries.append(ManifestEntry(clip, label))
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc.strerror}") from None

    if not entries:
        raise ManifestError(f"{path}: manifest has no rows")

    manifest = DatasetManifest(entries, root)
    logger.info("manifest %s: %d clips %s", path, len(manifest), manifest.histogram())
    return manifest


def write_manifest(path, entries):
    with open(path, "w", newline="", encoding="utf-8") as manifest_csv:
        manifest_writer = csv.DictWriter(manifest_csv, fieldnames=MANIFEST_CSV_HEADERS)
        manifest_writer.writeheader()

        for entry in entries:
            label = entry.label.label if isinstance(entry.label, EmotionLabel) else entry.label
            manifest_writer.writerow(dict(path=entry.path, label=label))
