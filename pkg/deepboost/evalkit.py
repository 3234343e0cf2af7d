"""Classification and age-estimation metrics, evaluation reports and curve export."""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.metrics import confusion_matrix as sk_confusion_matrix
from sklearn.metrics import precision_recall_fscore_support
from sklearn.model_selection import KFold

from deepboost.deepmodel import DeepBoostModel, decisions, predict_batch
from deepboost.imagekit import LabeledDataset
from utils.exceptions import EvaluationError
from utils.logger import Logger
from utils.utils import ensure_dir
from utils.utils_export import save_heatmap, save_line_plot, write_csv

logger = Logger.get_logger(__name__)

DEFAULT_MAX_LEVEL = 10


@dataclass
class EvalReport:
    accuracy: float
    confusion: List[List[int]]
    precision: List[float]
    recall: List[float]
    class_names: List[str]
    mae: Optional[float] = None
    cum_scores: Optional[List[float]] = None
    layer_accuracy: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        ensure_dir(path.parent)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        logger.info(f"Wrote evaluation report to {path}")
        return path


def _check_ids(true: Sequence[int], predicted: Sequence[int],
               num_classes: int) -> Tuple[np.ndarray, np.ndarray]:
    true = np.asarray(true, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if true.shape != predicted.shape:
        raise EvaluationError(f"{len(true)} labels but {len(predicted)} predictions")
    if true.size == 0:
        raise EvaluationError("Metrics need at least one sample")
    for name, ids in (('true', true), ('predicted', predicted)):
        if ids.min() < 1 or ids.max() > num_classes:
            raise EvaluationError(f"{name} class ids must lie in 1..{num_classes}")
    return true, predicted


def confusion_matrix(true: Sequence[int], predicted: Sequence[int], num_classes: int) -> np.ndarray:
    """K x K counts; rows are true classes, columns predicted (ids 1..K)"""
    true, predicted = _check_ids(true, predicted, num_classes)
    return sk_confusion_matrix(true, predicted, labels=np.arange(1, num_classes + 1)).astype(np.int64)


def accuracy(confusion: np.ndarray) -> float:
    confusion = np.asarray(confusion)
    total = confusion.sum()
    if total == 0:
        raise EvaluationError("Accuracy of an empty confusion matrix is undefined")
    return float(np.trace(confusion) / total)


def precision_recall(true: Sequence[int], predicted: Sequence[int],
                     num_classes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-class precision and recall; classes never predicted (or absent) score 0"""
    true, predicted = _check_ids(true, predicted, num_classes)
    precision, recall, _, _ = precision_recall_fscore_support(
        true, predicted, labels=np.arange(1, num_classes + 1), average=None, zero_division=0
    )
    return precision.astype(np.float64), recall.astype(np.float64)


def mae(true_ages: Sequence[float], predicted_ages: Sequence[float]) -> float:
    """Mean absolute error in years"""
    true_ages = np.asarray(true_ages, dtype=np.float64)
    predicted_ages = np.asarray(predicted_ages, dtype=np.float64)
    if true_ages.shape != predicted_ages.shape:
        raise EvaluationError(f"{len(true_ages)} true ages but {len(predicted_ages)} predictions")
    if true_ages.size == 0:
        raise EvaluationError("MAE needs at least one sample")
    return float(np.mean(np.abs(true_ages - predicted_ages)))


def cum_score(errors: Sequence[float], level: float) -> float:
    """Percentage of absolute errors at most `level`"""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise EvaluationError("Cumulative score needs at least one error")
    if level < 0:
        raise EvaluationError(f"Error level must be >= 0, got {level}")
    return float(np.count_nonzero(errors <= level) / errors.size * 100.0)


def cum_score_curve(errors: Sequence[float], max_level: int = DEFAULT_MAX_LEVEL) -> List[float]:
    """Cumulative score at the integer levels 0..max_level"""
    return [cum_score(errors, level) for level in range(max_level + 1)]


def kfold_indices(n: int, folds: int, seed: int) -> List[np.ndarray]:
    """Shuffled partition of range(n) into `folds` test folds of near-equal size"""
    if folds < 2 or folds > n:
        raise EvaluationError(f"Need 2 <= folds <= {n}, got {folds}")
    splitter = KFold(n_splits=folds, shuffle=True, random_state=seed)
    return [np.sort(test) for _, test in splitter.split(np.arange(n))]


def layer_accuracy_curve(true: Sequence[int], per_depth: Sequence[Sequence[int]]) -> List[float]:
    """Accuracy of the predictions made with layers 1..l, for each l"""
    true = np.asarray(true)
    if true.size == 0:
        raise EvaluationError("Layer accuracy needs at least one sample")
    return [float(np.mean(np.asarray(pred) == true)) for pred in per_depth]


def age_values(class_names: Sequence[str]) -> Optional[np.ndarray]:
    """Integer ages when every class name is one, else None"""
    try:
        return np.array([int(name) for name in class_names], dtype=np.float64)
    except ValueError:
        return None


def build_report(true: Sequence[int], per_depth: Sequence[Sequence[int]],
                 class_names: Sequence[str], max_level: int = DEFAULT_MAX_LEVEL) -> EvalReport:
    """Report for the full-depth predictions (the last entry of per_depth)"""
    true = np.asarray(true, dtype=np.int64)
    predicted = np.asarray(per_depth[-1], dtype=np.int64)
    confusion = confusion_matrix(true, predicted, len(class_names))
    precision, recall = precision_recall(true, predicted, len(class_names))
    report = EvalReport(
        accuracy=accuracy(confusion),
        confusion=confusion.tolist(),
        precision=precision.tolist(),
        recall=recall.tolist(),
        class_names=list(class_names),
        layer_accuracy=layer_accuracy_curve(true, per_depth),
    )
    ages = age_values(class_names)
    if ages is not None:
        errors = np.abs(ages[true - 1] - ages[predicted - 1])
        report.mae = mae(ages[true - 1], ages[predicted - 1])
        report.cum_scores = cum_score_curve(errors, max_level)
    return report


def evaluate(model: DeepBoostModel, dataset: LabeledDataset,
             max_level: int = DEFAULT_MAX_LEVEL) -> EvalReport:
    """Score every image once and report accuracy at each depth"""
    if tuple(dataset.class_names) != tuple(model.class_names):
        raise EvaluationError(
            f"Dataset classes {list(dataset.class_names)} differ from model classes {list(model.class_names)}"
        )
    if len(dataset) == 0:
        raise EvaluationError("Cannot evaluate on an empty dataset")
    logger.info(f"Evaluating {len(dataset)} images against {model.num_classes} class models")
    tables = predict_batch(model, dataset.images)
    per_depth = [decisions(tables, depth) for depth in range(1, model.config.layers + 1)]
    report = build_report(dataset.labels, per_depth, model.class_names, max_level)
    logger.info(f"Accuracy {report.accuracy:.4f}" + (f", MAE {report.mae:.3f}" if report.mae is not None else ""))
    return report


def export_curves(report: EvalReport, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """CSV and PNG renderings of the report's curves and confusion matrix"""
    out_dir = ensure_dir(out_dir)
    written: Dict[str, Path] = {}
    depths = list(range(1, len(report.layer_accuracy) + 1))
    if depths:
        written['layer_accuracy_csv'] = write_csv(
            out_dir / 'layer_accuracy.csv', ['depth', 'accuracy'], zip(depths, report.layer_accuracy))
        written['layer_accuracy_png'] = save_line_plot(
            out_dir / 'layer_accuracy.png', depths, {'accuracy': report.layer_accuracy},
            xlabel='layers used', ylabel='accuracy', title='Accuracy by depth')
    if report.cum_scores is not None:
        levels = list(range(len(report.cum_scores)))
        written['cum_score_csv'] = write_csv(
            out_dir / 'cum_score.csv', ['level', 'cum_score'], zip(levels, report.cum_scores))
        written['cum_score_png'] = save_line_plot(
            out_dir / 'cum_score.png', levels, {'cumulative score': report.cum_scores},
            xlabel='error level (years)', ylabel='cumulative score (%)', title='Cumulative score')
    written['confusion_png'] = save_heatmap(
        out_dir / 'confusion.png', np.asarray(report.confusion), title='Confusion')
    return written
