import argparse
import json
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from cli.settings import RunConfig, build_run_config
from deepboost.boosting import write_round_diagnostics
from deepboost.deepmodel import (
    DeepBoostModel,
    decisions,
    predict,
    predict_batch,
    render_template,
    train_multiclass,
)
from deepboost.evalkit import build_report, evaluate, export_curves, kfold_indices
from deepboost.filters import distance_matrix
from deepboost.imagekit import LabeledDataset, load_cifar10, load_image_dir, read_image
from deepboost.persistence import load_model, save_model
from deepboost.synth import generate, write_dataset
from utils.exceptions import ImageDimensionError, ModelFormatError
from utils.logger import Logger
from utils.utils import ensure_dir, format_duration, sanitize_filename
from utils.utils_export import save_gray_png, save_heatmap, tile_grid, write_csv

logger = Logger.get_logger(__name__)

MODEL_FILE = 'model.dpb'


def load_dataset(config: RunConfig) -> LabeledDataset:
    if config.dataset == 'dir':
        return load_image_dir(config.data_path, config.target_size)
    if config.dataset == 'cifar10':
        return load_cifar10(config.data_path)
    return generate(config.dataset, config.n_per_class, config.effective_data_seed,
                    size=config.target_size, distractor=config.distractor)


def _check_compatible(model: DeepBoostModel, dataset: LabeledDataset):
    if dataset.image_shape != model.image_shape:
        raise ImageDimensionError(
            f"Dataset images are {dataset.image_shape[1]}x{dataset.image_shape[0]} "
            f"but the model expects {model.image_shape[1]}x{model.image_shape[0]}"
        )


def _class_tag(model: DeepBoostModel, class_id: int) -> str:
    return f"class{class_id}_{sanitize_filename(model.class_names[class_id - 1])}"


def write_training_reports(model: DeepBoostModel, out_dir: Path) -> Dict[str, Path]:
    """Objective traces, per-round diagnostics and per-layer timings"""
    reports = ensure_dir(out_dir / 'reports')
    trace_rows, time_rows = [], []
    for cm in model.class_models:
        for l, layer in enumerate(cm.layers, start=1):
            trace_rows.extend([cm.class_id, l, *record] for record in layer.trace)
            time_rows.append([cm.class_id, l, len(layer.dictionary), len(layer.selected),
                              len(layer.classifier.stumps), f"{layer.train_seconds:.3f}"])
            if layer.diagnostics:
                write_round_diagnostics(
                    layer.diagnostics, reports / f"rounds_{_class_tag(model, cm.class_id)}_layer{l}.csv")
    written = {
        'objective': write_csv(
            reports / 'objective_trace.csv',
            ['class', 'layer', 'iteration', 'empirical', 'regularizer', 'objective',
             'train_error', 'selected', 'stalled'],
            trace_rows),
        'timing': write_csv(
            reports / 'layer_times.csv',
            ['class', 'layer', 'filters', 'selected', 'stumps', 'seconds'],
            time_rows),
    }
    for class_id, layer, filters, selected, stumps, seconds in time_rows:
        logger.info(f"Class {class_id} layer {layer}: {filters} filters, {selected} selected, "
                    f"{stumps} stumps, {format_duration(float(seconds))}")
    return written


def write_filter_grids(model: DeepBoostModel, out_dir: Path, heatmaps: bool = False) -> List[Path]:
    grids = ensure_dir(out_dir / 'filters')
    written = []
    for cm in model.class_models:
        for l, layer in enumerate(cm.layers, start=1):
            tag = f"{_class_tag(model, cm.class_id)}_layer{l}"
            filters = list(layer.dictionary)
            written.append(save_gray_png(tile_grid([f.kernel for f in filters]), grids / f"{tag}.png", scale=4))
            if heatmaps and len(filters) > 1:
                written.append(save_heatmap(grids / f"{tag}_distances.png", distance_matrix(filters),
                                            title=f"{model.class_names[cm.class_id - 1]} layer {l}"))
    return written


def write_templates(model: DeepBoostModel, dataset: LabeledDataset, out_dir: Path,
                    canvas_size: Optional[int] = None) -> List[Path]:
    """Render every class model's layers on the first image of that class"""
    templates = ensure_dir(out_dir / 'templates')
    canvas = canvas_size or model.image_shape[0]
    written = []
    for cm in model.class_models:
        members = dataset.class_indices(cm.class_id)
        if len(members) == 0:
            logger.warning(f"No images of class '{model.class_names[cm.class_id - 1]}' to render on")
            continue
        reference = dataset.images[int(members[0])]
        for l in range(1, cm.depth + 1):
            image = render_template(cm, l, canvas, reference)
            written.append(save_gray_png(
                image.values, templates / f"{_class_tag(model, cm.class_id)}_layer{l}.png", scale=4))
    return written


def cmd_train(args: argparse.Namespace) -> int:
    config = build_run_config(vars(args), args.config_file)
    out_dir = ensure_dir(config.output_path)
    dataset = load_dataset(config)
    logger.info(f"Training on {len(dataset)} images, {dataset.num_classes} classes, "
                f"{config.layers} layer(s), seed {config.seed}")
    model = train_multiclass(dataset, config.to_model_config())
    model_path = save_model(model, out_dir / MODEL_FILE)
    write_training_reports(model, out_dir)
    write_filter_grids(model, out_dir)
    write_templates(model, dataset, out_dir)
    print(f"Model written to {model_path}")
    return 0


def _load_model(path: str) -> DeepBoostModel:
    if not Path(path).is_file():
        raise ModelFormatError(f"Model file not found: {path}")
    return load_model(path)


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = build_run_config(vars(args), args.config_file)
    model = _load_model(args.model)
    dataset = load_dataset(config)
    _check_compatible(model, dataset)
    report = evaluate(model, dataset, max_level=args.max_level)
    reports = ensure_dir(config.output_path / 'reports')
    report.save(reports / 'eval_report.json')
    export_curves(report, reports)
    summary = f"accuracy={report.accuracy:.4f}"
    if report.mae is not None:
        summary += f" mae={report.mae:.3f}"
    print(summary)
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    image = read_image(Path(args.image), model.image_shape[0])
    class_id, scores = predict(model, image, depth=args.depth)
    print(f"{class_id} {model.class_names[class_id - 1]}")
    print(" ".join(f"{s:.6f}" for s in scores))
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    config = build_run_config(
        {'n_per_class': args.n_per_class, 'seed': args.seed, 'target_size': args.target_size,
         'distractor': args.distractor, 'output_dir': args.output_dir},
        args.config_file)
    dataset = generate(args.name, config.n_per_class, config.seed,
                       size=config.target_size, distractor=config.distractor)
    root = write_dataset(dataset, config.output_path / args.name)
    print(f"Dataset written to {root}")
    return 0


def cmd_inspect_filters(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    written = write_filter_grids(model, ensure_dir(args.output_dir), heatmaps=True)
    print(f"Wrote {len(written)} filter images under {Path(args.output_dir) / 'filters'}")
    return 0


def cmd_render_template(args: argparse.Namespace) -> int:
    config = build_run_config(vars(args), args.config_file)
    model = _load_model(args.model)
    dataset = load_dataset(config)
    _check_compatible(model, dataset)
    written = write_templates(model, dataset, config.output_path, args.canvas_size)
    print(f"Wrote {len(written)} templates under {config.output_path / 'templates'}")
    return 0


def cmd_crossval(args: argparse.Namespace) -> int:
    config = build_run_config(vars(args), args.config_file)
    dataset = load_dataset(config)
    model_config = config.to_model_config()
    folds = kfold_indices(len(dataset), args.folds, config.seed)

    rows = []
    for f, test_idx in enumerate(folds, start=1):
        train_idx = np.setdiff1d(np.arange(len(dataset)), test_idx)
        logger.info(f"Fold {f}/{len(folds)}: {len(train_idx)} train, {len(test_idx)} test")
        model = train_multiclass(dataset.subset(train_idx), model_config)
        test = dataset.subset(test_idx)
        tables = predict_batch(model, test.images)
        per_depth = [decisions(tables, d) for d in range(1, model.config.layers + 1)]
        report = build_report(test.labels, per_depth, model.class_names)
        rows.append([f, report.accuracy, report.mae])

    accuracies = np.array([r[1] for r in rows])
    summary = {'folds': len(folds), 'accuracy_mean': float(accuracies.mean()),
               'accuracy_std': float(accuracies.std())}
    if rows[0][2] is not None:
        maes = np.array([r[2] for r in rows])
        summary.update(mae_mean=float(maes.mean()), mae_std=float(maes.std()))
    reports = ensure_dir(config.output_path / 'reports')
    write_csv(reports / 'crossval.csv', ['fold', 'accuracy', 'mae'], rows)
    (reports / 'crossval.json').write_text(json.dumps(summary, indent=2, sort_keys=True))
    line = f"accuracy={summary['accuracy_mean']:.4f}+-{summary['accuracy_std']:.4f}"
    if 'mae_mean' in summary:
        line += f" mae={summary['mae_mean']:.3f}+-{summary['mae_std']:.3f}"
    print(line)
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    'train': cmd_train,
    'evaluate': cmd_evaluate,
    'predict': cmd_predict,
    'synth': cmd_synth,
    'inspect-filters': cmd_inspect_filters,
    'render-template': cmd_render_template,
    'crossval': cmd_crossval,
}


def run_command(args: argparse.Namespace) -> int:
    return COMMANDS[args.command](args)
