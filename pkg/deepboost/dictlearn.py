"""Single-layer joint training: boost features, then pull the selected
filters away from the negative images by gradient descent on

    objective = 1/2 sum_i exp(-y_i F(x_i)) + lambda * sum_{j in negatives} ||G * I_j||^2
"""
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from deepboost.boosting import (
    MAX_CANDIDATES,
    RoundDiagnostics,
    StrongClassifier,
    exponential_loss,
    sign,
    train_strong,
)
from deepboost.features import (
    DEFAULT_BINS,
    DEFAULT_LEVELS,
    FeatureLayout,
    feature_matrix,
    feature_stacks,
    fit_bins,
    make_layout,
    selected_filters,
)
from deepboost.filters import AnalysisDictionary
from deepboost.imagekit import Image, image_patches
from utils.exceptions import DictionaryLearningError, ImageDimensionError
from utils.logger import Logger

logger = Logger.get_logger(__name__)

MAX_BACKTRACKS = 20


@dataclass(frozen=True)
class JointConfig:
    lam: float = 0.1
    eta: float = 0.01
    grad_steps: int = 10
    outer_iters: int = 5
    tol: float = 1e-3
    rounds: int = 50
    bins: int = DEFAULT_BINS
    levels: Tuple[int, ...] = DEFAULT_LEVELS
    max_candidates: int = MAX_CANDIDATES
    jobs: int = 1

    def validate(self):
        checks = {
            'lam': self.lam >= 0,
            'eta': self.eta > 0,
            'grad_steps': self.grad_steps >= 0,
            'outer_iters': self.outer_iters >= 1,
            'tol': 0 < self.tol < 1,
            'rounds': self.rounds >= 0,
            'bins': self.bins >= 1,
            'max_candidates': self.max_candidates >= 1,
            'jobs': self.jobs >= 1,
        }
        bad = [name for name, ok in checks.items() if not ok]
        if bad:
            raise DictionaryLearningError(f"Invalid joint training settings: {', '.join(bad)}")


class ObjectiveRecord(NamedTuple):
    iteration: int
    empirical: float
    regularizer: float
    objective: float
    train_error: float
    selected: int
    stalled: bool


class FilterUpdate(NamedTuple):
    dictionary: AnalysisDictionary
    stalled: bool
    loss_before: float
    loss_after: float


@dataclass
class LayerModel:
    """Trained state of one layer: dictionary, classifier and feature layout"""
    dictionary: AnalysisDictionary
    classifier: StrongClassifier
    layout: FeatureLayout
    selected: Tuple[int, ...]
    trace: List[ObjectiveRecord] = field(default_factory=list)
    diagnostics: List[RoundDiagnostics] = field(default_factory=list)
    train_seconds: float = 0.0

    def __post_init__(self):
        ids = set(self.dictionary.ids)
        missing = [g for g in self.selected if g not in ids]
        if missing:
            raise DictionaryLearningError(f"Selected filters {missing} are not in the layer dictionary")
        if self.classifier.dimension != self.layout.D:
            raise DictionaryLearningError(
                f"Classifier dimension {self.classifier.dimension} does not match layout {self.layout.D}"
            )

    @property
    def bin_edges(self) -> np.ndarray:
        return self.layout.bin_edges


class NegativeBank:
    """Stacked negative images and their kernel-sized windows, built once per layer"""

    def __init__(self, negatives: Sequence[Image], kernel_size: int):
        if not negatives:
            raise DictionaryLearningError("The regularizer needs at least one negative image")
        shapes = {img.shape for img in negatives}
        if len(shapes) != 1:
            raise ImageDimensionError(f"Negative images differ in size: {sorted(shapes)}")
        self.images = np.stack([img.values for img in negatives])
        self.kernel_size = kernel_size
        self.patches = image_patches(self.images, kernel_size)

    def responses(self, kernels: np.ndarray) -> np.ndarray:
        """(M, J, H', W') valid correlations of every kernel with every negative"""
        return np.einsum('jhwab,mab->mjhw', self.patches, kernels, optimize=True)

    def losses(self, kernels: np.ndarray) -> np.ndarray:
        """Per-filter sum over negatives of squared response norms"""
        if len(kernels) == 0:
            return np.zeros(0)
        return np.sum(self.responses(kernels) ** 2, axis=(1, 2, 3))

    def gradients(self, kernels: np.ndarray) -> np.ndarray:
        """2 * sum_j correlate(I_j, g * I_j), the adjoint applied to each response"""
        if len(kernels) == 0:
            return np.zeros_like(kernels)
        return 2.0 * np.einsum('jhwab,mjhw->mab', self.patches, self.responses(kernels), optimize=True)


def _bank(negatives, kernel_size: int) -> NegativeBank:
    if isinstance(negatives, NegativeBank):
        return negatives
    return NegativeBank(list(negatives), kernel_size)


def reg_loss(G: AnalysisDictionary, negatives) -> float:
    """sum over negatives and filters of ||g * I_j||_F^2"""
    bank = _bank(negatives, G.kernel_size)
    return float(bank.losses(G.kernels).sum())


def reg_gradient(G: AnalysisDictionary, selected: Iterable[int], negatives) -> Dict[int, np.ndarray]:
    """Gradient of reg_loss for each filter; zero for filters outside `selected`"""
    selected = set(selected)
    for g in selected:
        G.position(g)
    bank = _bank(negatives, G.kernel_size)
    chosen = [f for f in G.filters if f.id in selected]
    grads = bank.gradients(np.stack([f.kernel for f in chosen])) if chosen else []
    result = {f.id: np.zeros_like(f.kernel) for f in G.filters}
    for f, grad in zip(chosen, grads):
        result[f.id] = grad
    return result


def update_filters(G: AnalysisDictionary, selected: Iterable[int], negatives,
                   config: JointConfig) -> FilterUpdate:
    """grad_steps backtracked steps g <- g - eta * lambda * grad on the selected filters.

    Each step halves eta (up to MAX_BACKTRACKS times) until the regularizer
    does not increase. When backtracking runs out the input dictionary is
    returned unchanged with the stall flag set.
    """
    if config.eta <= 0:
        raise DictionaryLearningError(f"eta must be positive, got {config.eta}")
    selected = sorted(set(selected))
    for g in selected:
        G.position(g)
    if config.lam == 0 or not selected or config.grad_steps == 0:
        return FilterUpdate(G, False, float('nan'), float('nan'))

    bank = _bank(negatives, G.kernel_size)
    kernels = np.stack([G.get(g).kernel for g in selected])
    loss = float(bank.losses(kernels).sum())
    loss_before = loss

    for step in range(config.grad_steps):
        grads = bank.gradients(kernels)
        if not np.any(grads):
            break
        eta = config.eta
        for _ in range(MAX_BACKTRACKS + 1):
            candidate = kernels - eta * config.lam * grads
            candidate_loss = float(bank.losses(candidate).sum())
            if candidate_loss <= loss:
                break
            eta /= 2.0
        else:
            logger.warning(
                f"Dictionary update stalled at step {step + 1} "
                f"(class {G.class_id}, layer {G.layer})"
            )
            return FilterUpdate(G, True, loss_before, loss_before)
        kernels, loss = candidate, candidate_loss

    logger.debug(
        f"Updated {len(selected)} filters: regularizer {loss_before:.6g} -> {loss:.6g}"
    )
    updated = G.with_kernels({g: k for g, k in zip(selected, kernels)})
    return FilterUpdate(updated, False, loss_before, loss)


def empirical_term(scores: np.ndarray, y: np.ndarray) -> float:
    """1/2 sum_i exp(-y_i F(x_i))"""
    return 0.5 * exponential_loss(scores, y)


def labels_for(positives: Sequence[Image], negatives: Sequence[Image]) -> np.ndarray:
    return np.concatenate([np.ones(len(positives)), -np.ones(len(negatives))])


def objective(G: AnalysisDictionary, classifier: StrongClassifier, layout: FeatureLayout,
              positives: Sequence[Image], negatives: Sequence[Image], lam: float) -> float:
    """Joint objective: half the exponential loss plus lambda times the regularizer"""
    images = list(positives) + list(negatives)
    X = feature_matrix(feature_stacks(images, G), layout)
    value = empirical_term(classifier.decision_function(X), labels_for(positives, negatives))
    if lam:
        value += lam * reg_loss(G, negatives)
    return value


def joint_train_layer(positives: Sequence[Image], negatives: Sequence[Image],
                      dictionary: AnalysisDictionary, config: JointConfig = JointConfig()) -> LayerModel:
    """Alternate boosting and dictionary updates until the objective settles.

    The returned classifier is always the one trained on features of the
    returned dictionary.
    """
    config.validate()
    if not positives or not negatives:
        raise DictionaryLearningError(
            f"Joint training needs positives and negatives, got {len(positives)} and {len(negatives)}"
        )
    started = time.perf_counter()
    images = list(positives) + list(negatives)
    y = labels_for(positives, negatives)
    bank = NegativeBank(list(negatives), dictionary.kernel_size)

    G = dictionary
    trace: List[ObjectiveRecord] = []
    previous: Optional[float] = None
    while True:
        iteration = len(trace) + 1
        stacks = feature_stacks(images, G, jobs=config.jobs)
        layout = make_layout(G, fit_bins(stacks, config.bins), config.levels)
        X = feature_matrix(stacks, layout)
        classifier, diagnostics = train_strong(
            X, y, config.rounds, max_candidates=config.max_candidates
        )
        selected = tuple(sorted(selected_filters(classifier, layout)))

        scores = classifier.decision_function(X)
        empirical = empirical_term(scores, y)
        regularizer = float(bank.losses(G.kernels).sum())
        value = empirical + config.lam * regularizer
        train_error = float(np.mean(sign(scores) != y))
        logger.debug(
            f"Class {G.class_id} layer {G.layer} iteration {iteration}: objective={value:.6g} "
            f"(empirical {empirical:.6g}, regularizer {regularizer:.6g}), "
            f"train error {train_error:.4f}, {len(selected)} filters selected"
        )

        converged = previous is not None and previous > 0 and (previous - value) / previous < config.tol
        done = converged or iteration >= config.outer_iters or config.lam == 0 or not selected
        stalled = False
        if not done:
            update = update_filters(G, selected, bank, config)
            stalled = update.stalled
            if not stalled:
                G_next = update.dictionary
        trace.append(ObjectiveRecord(iteration, empirical, regularizer, value,
                                     train_error, len(selected), stalled))
        if done or stalled:
            break
        G = G_next
        previous = value

    elapsed = time.perf_counter() - started
    logger.info(
        f"Class {G.class_id} layer {G.layer}: {len(classifier.stumps)} stumps, "
        f"{len(selected)} of {len(G)} filters selected, {len(trace)} iterations"
    )
    return LayerModel(
        dictionary=G,
        classifier=classifier,
        layout=layout,
        selected=selected,
        trace=trace,
        diagnostics=diagnostics,
        train_seconds=elapsed,
    )
