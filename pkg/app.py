"""Command-line entry point: ``python app.py <command> [options]``."""

import functools
import logging
import os
import sys
import time

import click

from audio import read_wav
from cache import extract_features, load_feature_set
from config import load_config, read_config_file
from errors import ConfigError, DynserError
from generator.create_fixtures import NUM_CLIPS, generate_fixtures
from manifest import load_manifest
from metrics import compute_metrics, confusion_matrix
from models import LABEL_NAMES, ModelVariant, build_model, load_model, save_model
from reports import (build_report, lineup_rows, render_confusion, render_lineup, render_metrics,
                     write_history, write_json, write_text)
from training import compare_variants, cross_validate, evaluate, predict, predict_clip, stratified_kfold, train

logger = logging.getLogger(__name__)

VARIANT_CHOICES = [variant.value for variant in ModelVariant]


def command_errors(fn):
    """Turn any DynserError into a message on stderr and its exit code."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DynserError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)

    return wrapper


def run_options(fn):
    """Flags shared by every command that reads a RunConfig."""

    options = [
        click.option('--config', 'config_path', type=click.Path(dir_okay=False), help="JSON config file."),
        click.option('--variant', type=click.Choice(VARIANT_CHOICES), help="Model variant."),
        click.option('--seed', type=int, help="Seed for folds, initialization and batching."),
        click.option('--manifest', type=click.Path(dir_okay=False), help="Manifest CSV (path,label)."),
        click.option('--out', type=click.Path(file_okay=False), help="Output directory."),
        click.option('--epochs', type=int, help="Training epochs."),
        click.option('--folds', type=int, help="Number of stratified folds."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def resolve_config(config_path, variant, seed, manifest, out, epochs, folds, checkpoint=None):
    return load_config(config_path, overrides={
        "variant": variant,
        "train": {"seed": seed, "epochs": epochs, "k_folds": folds},
        "paths": {"manifest": manifest, "out": out, "checkpoint": checkpoint},
    })


def require_manifest(run_config):
    if not run_config.paths.manifest:
        raise ConfigError("no manifest given; pass --manifest or set paths.manifest")
    return load_manifest(run_config.paths.manifest)


def output_dir(run_config):
    os.makedirs(run_config.paths.out, exist_ok=True)
    return run_config.paths.out


def output_path(run_config, name):
    return os.path.join(output_dir(run_config), name)


def streams_for(variant):
    return tuple(kind for kind, used in (("mfcc", variant.uses_mfcc), ("wave", variant.uses_wave)) if used)


class DynserGroup(click.Group):
    """Click group whose usage errors (bad option, unknown command) exit 1, like ConfigError."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            return super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        except click.UsageError as exc:
            exc.show()
            sys.exit(ConfigError.exit_code)
        except click.ClickException as exc:
            exc.show()
            sys.exit(exc.exit_code)
        except click.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(1)


@click.group(cls=DynserGroup)
@click.option('--quiet', is_flag=True, help="Only log warnings and errors.")
def cli(quiet):
    """Dynamic-CBAM speech emotion recognition toolkit."""

    logging.basicConfig(
        level=logging.WARNING if quiet else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


##############################################################################
# Fixtures and feature extraction


@cli.command('gen-fixtures')
@click.option('--out', default="fixtures", type=click.Path(file_okay=False), show_default=True)
@click.option('--seed', default=42, type=int, show_default=True)
@click.option('--count', default=NUM_CLIPS, type=int, show_default=True, help="Number of clips.")
@command_errors
def gen_fixtures(out, seed, count):
    """Write a synthetic five-emotion WAV corpus and its manifest."""

    manifest_path = generate_fixtures(out, seed=seed, num_clips=count)
    click.echo(manifest_path)


@cli.command()
@run_options
@click.option('--workers', default=1, type=int, show_default=True, help="Parallel extraction threads.")
@command_errors
def extract(config_path, variant, seed, manifest, out, epochs, folds, workers):
    """Cache MFCC and waveform features for every manifest clip."""

    started = time.perf_counter()
    run_config = resolve_config(config_path, variant, seed, manifest, out, epochs, folds)
    clips = require_manifest(run_config)
    result = extract_features(clips, run_config.paths.cache_dir, run_config.audio, workers)

    report = build_report("extract", run_config, {
        "cache_dir": run_config.paths.cache_dir,
        "clips": len(clips),
        "histogram": clips.histogram(),
        **result.to_dict(),
    }, time.perf_counter() - started)
    write_json(output_path(run_config, "extract_report.json"), report)

    click.echo(f"{len(result.written)} extracted, {len(result.skipped)} up to date, "
               f"{len(result.failures)} failed")
    if result.failures:
        for path, message in result.failures:
            click.echo(f"failed: {path}: {message}", err=True)
        sys.exit(2)


##############################################################################
# Training and cross-validation


@cli.command('train')
@run_options
@click.option('--fold', default=0, type=int, show_default=True, help="Held-out fold of the plan.")
@command_errors
def train_command(config_path, variant, seed, manifest, out, epochs, folds, fold):
    """Train one variant on a stratified train/test split and save a checkpoint."""

    started = time.perf_counter()
    run_config = resolve_config(config_path, variant, seed, manifest, out, epochs, folds)
    clips = require_manifest(run_config)
    dataset = load_feature_set(clips, run_config.paths.cache_dir, run_config.audio, streams_for(run_config.variant))

    plan = stratified_kfold(dataset.labels, run_config.train.k_folds, run_config.train.seed)
    split = plan.split(fold)
    model = build_model(run_config.variant, run_config.model, seed=run_config.train.seed)
    model, history = train(model, dataset, run_config.train, split)
    metrics = evaluate(model, dataset, split.test, run_config.train.batch_size)

    checkpoint = run_config.paths.checkpoint or output_path(run_config, "model.ckpt")
    save_model(checkpoint, model)
    write_history(output_path(run_config, "history.csv"), {fold: history})
    write_text(output_path(run_config, "confusion.txt"), render_confusion(metrics, f"fold {fold} held out"))

    report = build_report("train", run_config, {
        "fold": fold,
        "train_size": int(split.train.size),
        "test_size": int(split.test.size),
        "checkpoint": checkpoint,
        "metrics": metrics.to_dict(),
        "history": [record.to_dict() for record in history],
    }, time.perf_counter() - started)
    write_json(output_path(run_config, "train_report.json"), report)

    click.echo(render_metrics(metrics, f"{run_config.variant.value}, fold {fold} held out"))


@cli.command()
@run_options
@click.option('--workers', default=1, type=int, show_default=True, help="Folds trained in parallel.")
@command_errors
def crossvalidate(config_path, variant, seed, manifest, out, epochs, folds, workers):
    """Stratified k-fold cross-validation of one variant."""

    run_config = resolve_config(config_path, variant, seed, manifest, out, epochs, folds)
    clips = require_manifest(run_config)
    dataset = load_feature_set(clips, run_config.paths.cache_dir, run_config.audio, streams_for(run_config.variant))

    outcome = cross_validate(run_config.variant, dataset, run_config.train, run_config.model, workers)

    write_history(output_path(run_config, "cv_history.csv"), {f.fold: f.history for f in outcome.folds})
    write_text(output_path(run_config, "cv_confusion.txt"), render_confusion(outcome.pooled, "pooled over folds"))
    report = build_report("crossvalidate", run_config, {
        **outcome.to_dict(),
        "fold_seeds": [f.seed for f in outcome.folds],
    }, outcome.seconds)
    write_json(output_path(run_config, "cv_report.json"), report)

    mean = outcome.mean
    click.echo(f"fold mean: UA {mean['ua']:.4f}  WA {mean['wa']:.4f}  F1 {mean['macro_f1']:.4f}")
    click.echo(render_metrics(outcome.pooled, "pooled confusion matrix"))


@cli.command()
@run_options
@click.option('--variants', multiple=True, type=click.Choice(VARIANT_CHOICES),
              help="Variants to compare (repeatable); all by default.")
@click.option('--workers', default=1, type=int, show_default=True, help="Folds trained in parallel.")
@command_errors
def compare(config_path, variant, seed, manifest, out, epochs, folds, variants, workers):
    """Cross-validate several variants and tabulate UA / WA / F1."""

    started = time.perf_counter()
    run_config = resolve_config(config_path, variant, seed, manifest, out, epochs, folds)
    clips = require_manifest(run_config)
    dataset = load_feature_set(clips, run_config.paths.cache_dir, run_config.audio)

    lineup = [ModelVariant(v) for v in variants] or list(ModelVariant)
    outcomes = compare_variants(lineup, dataset, run_config.train, run_config.model, workers)
    rows = lineup_rows(outcomes)

    write_text(output_path(run_config, "compare.txt"), render_lineup(rows))
    report = build_report("compare", run_config, {
        "lineup": rows,
        "runs": [outcome.to_dict() for outcome in outcomes],
    }, time.perf_counter() - started)
    write_json(output_path(run_config, "compare_report.json"), report)
    click.echo(render_lineup(rows))


##############################################################################
# Evaluation and prediction


@cli.command('evaluate')
@run_options
@click.option('--checkpoint', required=True, type=click.Path(dir_okay=False))
@command_errors
def evaluate_command(config_path, variant, seed, manifest, out, epochs, folds, checkpoint):
    """Score a saved checkpoint on every clip of a manifest."""

    started = time.perf_counter()
    run_config = resolve_config(config_path, variant, seed, manifest, out, epochs, folds, checkpoint)
    expected = variant or (read_config_file(config_path).get("variant") if config_path else None)
    model = load_model(checkpoint, expected)
    clips = require_manifest(run_config)
    dataset = load_feature_set(clips, run_config.paths.cache_dir, run_config.audio, streams_for(model.variant))

    preds, _ = predict(model, dataset, batch_size=run_config.train.batch_size)
    metrics = compute_metrics(confusion_matrix(preds, dataset.labels))

    write_text(output_path(run_config, "eval_confusion.txt"), render_confusion(metrics, "evaluation"))
    report = build_report("evaluate", run_config, {
        "checkpoint": checkpoint,
        "clips": len(dataset),
        "metrics": metrics.to_dict(),
    }, time.perf_counter() - started)
    write_json(output_path(run_config, "eval_report.json"), report)
    click.echo(render_metrics(metrics, f"{model.variant.value} on {run_config.paths.manifest}"))


@cli.command('predict')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), help="JSON config file.")
@click.option('--checkpoint', required=True, type=click.Path(dir_okay=False))
@click.argument('wav', type=click.Path(dir_okay=False))
@command_errors
def predict_command(config_path, checkpoint, wav):
    """Print per-class probabilities and the predicted emotion for one WAV."""

    run_config = load_config(config_path)
    model = load_model(checkpoint)
    probs, label = predict_clip(model, read_wav(wav), run_config.audio)

    for name, p in zip(LABEL_NAMES, probs):
        click.echo(f"{name:<10} {p:.4f}")
    click.echo(f"prediction: {label.label}")


if __name__ == '__main__':
    cli()
