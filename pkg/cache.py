"""Feature cache: per-clip MFCC and waveform files plus an SQLite index."""

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np
from sqlalchemy import Column, DateTime, Integer, Text, create_engine, select
from sqlalchemy.orm import Session, declarative_base

from audio import MfccConfig, load_mfcc, load_waveform, mfcc, prepare_clip, read_wav, save_mfcc, save_waveform
from errors import CacheMissingError, DataError
from training import FeatureSet

logger = logging.getLogger(__name__)

INDEX_NAME = "index.sqlite"

Base = declarative_base()


class CachedClip(Base):
    """One extracted clip: where its features live and what they were made from."""

    __tablename__ = 'clips'

    id = Column(
        Integer,
        primary_key=True,
    )

    path = Column(
        Text,
        nullable=False,
        unique=True,
    )

    label = Column(
        Integer,
        nullable=False,
    )

    content_hash = Column(
        Text,
        nullable=False,
    )

    config_hash = Column(
        Text,
        nullable=False,
    )

    mfcc_file = Column(
        Text,
        nullable=False,
    )

    wave_file = Column(
        Text,
        nullable=False,
    )

    frames = Column(
        Integer,
        nullable=False,
    )

    coeffs = Column(
        Integer,
        nullable=False,
    )

    extracted_at = Column(
        DateTime,
        nullable=False,
        default=lambda: datetime.now(timezone.utc),
    )

    def __repr__(self):
        return f"<CachedClip #{self.id}: {self.path}, label {self.label}>"

    def is_current(self, cache_dir, content_hash, config_hash):
        """Do the cached files exist and match this WAV content and MFCC config?"""

        return (self.content_hash == content_hash
                and self.config_hash == config_hash
                and os.path.exists(os.path.join(cache_dir, self.mfcc_file))
                and os.path.exists(os.path.join(cache_dir, self.wave_file)))

    @classmethod
    def lookup(cls, session, path):
        return session.scalars(select(cls).where(cls.path == path)).first()


def connect(cache_dir, create=True):
    """Engine for the cache index, creating the schema when ``create`` is set."""

    index = os.path.join(cache_dir, INDEX_NAME)
    if not create and not os.path.exists(index):
        raise CacheMissingError(f"no feature cache at {cache_dir}; run the extract command first")

    os.makedirs(cache_dir, exist_ok=True)
    engine = create_engine(f"sqlite:///{index}")
    Base.metadata.create_all(engine)
    return engine


def content_hash(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def config_hash(config):
    return hashlib.sha256(json.dumps(asdict(config), sort_keys=True).encode("utf-8")).hexdigest()


def cache_stem(relative_path):
    return hashlib.sha256(relative_path.encode("utf-8")).hexdigest()[:20]


@dataclass
class ExtractionResult:
    written: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def to_dict(self):
        return {
            "written": len(self.written),
            "skipped": len(self.skipped),
            "failed": [{"path": path, "error": message} for path, message in self.failures],
        }


def extract_clip(wav_path, config):
    """Read, resample, pad and featurize one clip; returns ``(MfccMatrix, AudioClip)``."""

    prepared = prepare_clip(read_wav(wav_path), config)
    return mfcc(prepared, config), prepared


def _featurize(job, config):
    _, wav_path, _ = job
    try:
        return job, extract_clip(wav_path, config), None
    except (DataError, OSError) as exc:
        return job, None, str(exc)


def extract_features(manifest, cache_dir, config=None, workers=1):
    """Extract every manifest clip not already cached under the current config.

    Per-clip failures are collected rather than raised.
    """

    config = config or MfccConfig()
    engine = connect(cache_dir)
    cfg_hash = config_hash(config)
    result = ExtractionResult()

    with Session(engine) as session:
        jobs = []
        for entry in manifest:
            wav_path = manifest.resolve(entry)
            try:
                digest = content_hash(wav_path)
            except OSError as exc:
                result.failures.append((entry.path, f"{wav_path}: {exc.strerror}"))
                logger.warning("cannot read %s: %s", wav_path, exc.strerror)
                continue

            row = CachedClip.lookup(session, entry.path)
            if row is not None and row.is_current(cache_dir, digest, cfg_hash) and row.label == int(entry.label):
                result.skipped.append(entry.path)
            else:
                jobs.append((entry, wav_path, digest))

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(lambda job: _featurize(job, config), jobs))
        else:
            outcomes = [_featurize(job, config) for job in jobs]

        for (entry, wav_path, digest), features, error in outcomes:
            if error is not None:
                result.failures.append((entry.path, error))
                logger.warning("extraction failed for %s: %s", entry.path, error)
                continue

            matrix, prepared = features
            stem = cache_stem(entry.path)
            save_mfcc(os.path.join(cache_dir, f"{stem}.mfcc"), matrix)
            save_waveform(os.path.join(cache_dir, f"{stem}.wave"), prepared)

            row = CachedClip.lookup(session, entry.path) or CachedClip(path=entry.path)
            row.label = int(entry.label)
            row.content_hash = digest
            row.config_hash = cfg_hash
            row.mfcc_file = f"{stem}.mfcc"
            row.wave_file = f"{stem}.wave"
            row.frames, row.coeffs = matrix.shape
            row.extracted_at = datetime.now(timezone.utc)
            session.add(row)
            result.written.append(entry.path)

        session.commit()

    engine.dispose()
    logger.info("extracted %d clips, %d up to date, %d failed",
                len(result.written), len(result.skipped), len(result.failures))
    return result


def load_feature_set(manifest, cache_dir, config=None, streams=("mfcc", "wave")):
    """Stack the cached features of every manifest entry into a FeatureSet."""

    config = config or MfccConfig()
    engine = connect(cache_dir, create=False)
    cfg_hash = config_hash(config)
    mfccs, waves = [], []

    with Session(engine) as session:
        for entry in manifest:
            row = CachedClip.lookup(session, entry.path)
            if row is None:
                raise CacheMissingError(f"{entry.path} is not in the feature cache; run the extract command first")
            if row.config_hash != cfg_hash:
                raise CacheMissingError(
                    f"{entry.path} was extracted with a different audio config; rerun the extract command")
            try:
                if "mfcc" in streams:
                    mfccs.append(load_mfcc(os.path.join(cache_dir, row.mfcc_file)).values)
                if "wave" in streams:
                    waves.append(load_waveform(os.path.join(cache_dir, row.wave_file)).samples)
            except FileNotFoundError:
                raise CacheMissingError(
                    f"cache files for {entry.path} are missing; rerun the extract command") from None
    engine.dispose()

    return FeatureSet(
        labels=manifest.labels,
        mfcc=np.stack(mfccs) if mfccs else None,
        wave=np.stack(waves) if waves else None,
        paths=[entry.path for entry in manifest],
    )
