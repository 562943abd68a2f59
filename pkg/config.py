"""Run configuration: built-in defaults < JSON config file < environment < CLI flags."""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace

from audio import MfccConfig
from errors import ConfigError, ParameterError
from models import ModelHyper, ModelVariant
from training import TrainConfig

logger = logging.getLogger(__name__)

DERIVED_MODEL_FIELDS = ("mfcc_bins", "mfcc_frames", "wave_samples")


@dataclass(frozen=True)
class PathsConfig:
    manifest: str = None
    out: str = "runs"
    cache_dir: str = "feature_cache"
    checkpoint: str = None


@dataclass(frozen=True)
class RunConfig:
    """Everything a run depends on; echoed verbatim into every report."""

    audio: MfccConfig = field(default_factory=MfccConfig)
    model: ModelHyper = field(default_factory=ModelHyper)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    variant: ModelVariant = ModelVariant.PROPOSED

    def to_dict(self):
        return {
            "variant": self.variant.value,
            "audio": asdict(self.audio),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "paths": asdict(self.paths),
        }


SECTIONS = {"audio": MfccConfig, "model": ModelHyper, "train": TrainConfig, "paths": PathsConfig}


def _build(name, values):
    cls = SECTIONS[name]
    if not isinstance(values, dict):
        raise ConfigError(f"config section {name!r} must be an object")

    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in config section {name!r}: {', '.join(unknown)}")
    if name == "model":
        derived = sorted(set(values) & set(DERIVED_MODEL_FIELDS))
        if derived:
            raise ConfigError(f"model.{derived[0]} is derived from the audio section and cannot be set")

    try:
        return cls(**values)
    except (ParameterError, TypeError) as exc:
        raise ConfigError(f"config section {name!r}: {exc}") from None


def read_config_file(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None

    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    unknown = sorted(set(data) - set(SECTIONS) - {"variant"})
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    return data


def load_config(path=None, overrides=None, environ=None):
    """Merge defaults, the JSON file at ``path``, env vars and ``overrides``.

    ``overrides`` has the file's shape (``{"train": {"seed": 3}, "variant": ...}``);
    keys whose value is None are ignored so unset CLI flags fall through.
    """

    environ = os.environ if environ is None else environ
    data = read_config_file(path) if path else {}
    merged = {name: dict(data.get(name, {})) for name in SECTIONS}
    variant = data.get("variant", ModelVariant.PROPOSED.value)

    cache_dir = environ.get('DYNSER_CACHE_DIR')
    if cache_dir:
        merged["paths"]["cache_dir"] = cache_dir

    for name, values in (overrides or {}).items():
        if name == "variant":
            variant = values if values is not None else variant
            continue
        if name not in SECTIONS:
            raise ConfigError(f"unknown override section {name!r}")
        merged[name].update({key: value for key, value in values.items() if value is not None})

    try:
        variant = ModelVariant.parse(variant)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None

    audio = _build("audio", merged["audio"])
    model = replace(_build("model", merged["model"]),
                    mfcc_bins=audio.n_mfcc, mfcc_frames=audio.n_frames, wave_samples=audio.clip_samples)
    run_config = RunConfig(audio=audio, model=model, train=_build("train", merged["train"]),
                           paths=_build("paths", merged["paths"]), variant=variant)

    logger.info("run config: %s", json.dumps(run_config.to_dict(), sort_keys=True))
    return run_config
