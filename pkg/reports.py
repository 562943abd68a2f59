"""JSON reports, per-epoch history CSVs and plain-text renderings."""

import csv
import json
import logging
import os
from datetime import datetime, timezone

import numpy as np
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from checkpoint import SCHEMA_VERSION
from models import LABEL_NAMES

logger = logging.getLogger(__name__)

HISTORY_CSV_HEADERS = ['fold', 'epoch', 'train_loss', 'ua', 'wa', 'f1']

env = Environment(
    loader=FileSystemLoader(os.path.join(os.path.dirname(os.path.abspath(__file__)), "templates")),
    undefined=StrictUndefined,
    keep_trailing_newline=True,
)


def build_report(command, run_config, body, seconds):
    """Wrap a command's results with the schema version, config echo and timing."""

    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config": run_config.to_dict(),
        "seed": run_config.train.seed,
        "seconds": round(float(seconds), 3),
        "labels": list(LABEL_NAMES),
        **body,
    }


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_json(path, report):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, default=_jsonable)
        fh.write("\n")
    logger.info("wrote %s", path)


def write_history(path, histories):
    """``histories`` maps fold number to its list of EpochRecords."""

    with open(path, "w", newline="") as history_csv:
        history_writer = csv.DictWriter(history_csv, fieldnames=HISTORY_CSV_HEADERS)
        history_writer.writeheader()

        for fold, records in histories.items():
            for record in records:
                history_writer.writerow(dict(fold=fold, **record.to_dict()))


def render_confusion(report, title="pooled"):
    template = env.get_template("confusion.txt.j2")
    return template.render(title=title, labels=LABEL_NAMES, matrix=report.matrix.tolist())


def render_metrics(report, title):
    return env.get_template("metrics.txt.j2").render(title=title, labels=LABEL_NAMES, report=report)


def lineup_rows(outcomes):
    """One row per cross-validated variant, scored by fold means."""

    return [
        {
            "variant": cv.variant.value,
            "title": cv.variant.layout.title,
            "data": cv.variant.layout.data,
            "ua": cv.mean["ua"],
            "wa": cv.mean["wa"],
            "f1": cv.mean["macro_f1"],
        }
        for cv in outcomes
    ]


def render_lineup(rows):
    return env.get_template("lineup.txt.j2").render(rows=rows)


def write_text(path, text):
    with open(path, "w") as fh:
        fh.write(text)
    logger.info("wrote %s", path)
