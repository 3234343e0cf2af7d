"""Layer stacking, one-vs-all training and prediction, template rendering."""
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from deepboost.boosting import MAX_CANDIDATES, score
from deepboost.dictlearn import JointConfig, LayerModel, joint_train_layer
from deepboost.features import DEFAULT_BINS, DEFAULT_LEVELS, activate_image, image_features
from deepboost.filters import (
    DEFAULT_COMPRESS_THRESHOLD,
    AnalysisDictionary,
    GaborParams,
    compose_all,
    compress,
    make_gabor_bank,
)
from deepboost.imagekit import Image, LabeledDataset
from deepboost.process_pool import ProcessPool
from utils.exceptions import (
    ClassTrainingError,
    ConfigError,
    ImageDimensionError,
    ProcessError,
    TrainingError,
)
from utils.logger import Logger
from utils.utils import derive_seed
from utils.utils_export import stretch

logger = Logger.get_logger(__name__)

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Training settings shared by every class model"""
    layers: int = 1
    rounds: Tuple[int, ...] = (50,)
    lam: float = 0.1
    eta: float = 0.01
    grad_steps: int = 10
    outer_iters: int = 5
    tol: float = 1e-3
    bins: int = DEFAULT_BINS
    levels: Tuple[int, ...] = DEFAULT_LEVELS
    threshold: float = DEFAULT_COMPRESS_THRESHOLD
    compress: bool = True
    raw_compose: bool = False
    gabor: GaborParams = GaborParams()
    max_candidates: int = MAX_CANDIDATES
    seed: int = 0
    jobs: int = field(default=1, compare=False)

    def __post_init__(self):
        rounds = (self.rounds,) if isinstance(self.rounds, int) else tuple(int(r) for r in self.rounds)
        object.__setattr__(self, 'rounds', rounds)
        object.__setattr__(self, 'levels', tuple(int(n) for n in self.levels))

    def validate(self):
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if not self.rounds or min(self.rounds) < 1:
            raise ConfigError(f"rounds must be >= 1 per layer, got {self.rounds}")
        if self.threshold < 0:
            raise ConfigError(f"threshold must be >= 0, got {self.threshold}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        self.joint_config(1).validate()

    def rounds_for(self, layer: int) -> int:
        """Boosting budget of a layer; the last listed value repeats"""
        return self.rounds[min(layer, len(self.rounds)) - 1]

    def joint_config(self, layer: int, threads: int = 1) -> JointConfig:
        """Per-layer settings; `threads` fans feature extraction out inside one class job"""
        return JointConfig(
            lam=self.lam, eta=self.eta, grad_steps=self.grad_steps,
            outer_iters=self.outer_iters, tol=self.tol, rounds=self.rounds_for(layer),
            bins=self.bins, levels=self.levels, max_candidates=self.max_candidates, jobs=threads,
        )

    def to_dict(self) -> dict:
        """Serializable settings; the worker count does not affect the model"""
        data = asdict(self)
        data.pop('jobs')
        data['rounds'] = list(self.rounds)
        data['levels'] = list(self.levels)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'ModelConfig':
        data = dict(data)
        data['gabor'] = GaborParams(**data.get('gabor', {}))
        data['rounds'] = tuple(data.get('rounds', (50,)))
        data['levels'] = tuple(data.get('levels', DEFAULT_LEVELS))
        return cls(**data)


@dataclass
class ClassModel:
    """Per-class layer stack F^1 .. F^L"""
    class_id: int
    layers: List[LayerModel]
    truncated: bool = False

    def __post_init__(self):
        for lower, upper in zip(self.layers, self.layers[1:]):
            allowed = set(lower.selected)
            for f in upper.dictionary:
                if f.lineage is None or not set(f.lineage) <= allowed:
                    raise TrainingError(
                        f"Class {self.class_id}: layer {upper.dictionary.layer} filter {f.id} "
                        f"does not descend from selected layer-{lower.dictionary.layer} filters"
                    )

    @property
    def depth(self) -> int:
        return len(self.layers)

    def layer_scores(self, image: Image) -> np.ndarray:
        """F^l(x^l) for each trained layer"""
        return np.array([
            score(layer.classifier, image_features(image, layer.dictionary, layer.layout))
            for layer in self.layers
        ])


@dataclass
class DeepBoostModel:
    """K one-vs-all class models sharing one configuration"""
    class_models: List[ClassModel]
    config: ModelConfig
    class_names: Tuple[str, ...]
    image_shape: Tuple[int, int]
    version: int = MODEL_FORMAT_VERSION

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        self.image_shape = tuple(int(s) for s in self.image_shape)
        if len(self.class_models) != len(self.class_names):
            raise TrainingError(
                f"{len(self.class_models)} class models for {len(self.class_names)} class names"
            )
        for k, cm in enumerate(self.class_models, start=1):
            if cm.class_id != k:
                raise TrainingError(f"Class model at position {k} has class id {cm.class_id}")
            if not 1 <= cm.depth <= self.config.layers:
                raise TrainingError(f"Class {k} has {cm.depth} layers, config allows {self.config.layers}")
            for layer in cm.layers:
                if layer.layout.C != self.config.bins or layer.layout.levels != self.config.levels:
                    raise TrainingError(f"Class {k} layer layout differs from the model configuration")

    @property
    def num_classes(self) -> int:
        return len(self.class_models)


def train_class_model(dataset: LabeledDataset, class_id: int, config: ModelConfig,
                      rng: Optional[np.random.Generator] = None, threads: int = 1) -> ClassModel:
    """Stack up to L jointly trained layers for one class against the rest"""
    config.validate()
    mask = dataset.labels == class_id
    positives = [img for img, m in zip(dataset.images, mask) if m]
    negatives = [img for img, m in zip(dataset.images, mask) if not m]
    if not positives:
        raise TrainingError(f"Class {class_id} has no training images")
    if not negatives:
        raise TrainingError(f"Class {class_id} has no negative images")
    rng = rng if rng is not None else np.random.default_rng(derive_seed(config.seed, class_id))

    dictionary = make_gabor_bank(config.gabor, class_id=class_id)
    layers: List[LayerModel] = []
    truncated = False
    for l in range(1, config.layers + 1):
        logger.info(f"Class {class_id}: training layer {l} with {len(dictionary)} filters")
        layer = joint_train_layer(positives, negatives, dictionary, config.joint_config(l, threads))
        layers.append(layer)
        if l == config.layers:
            break
        if len(layer.selected) < 2:
            logger.warning(
                f"Class {class_id}: only {len(layer.selected)} filters selected in layer {l}, "
                f"stopping at depth {l}"
            )
            truncated = True
            break
        optimized = [layer.dictionary.get(g) for g in layer.selected]
        composed = compose_all(optimized, normalize=not config.raw_compose)
        if config.compress:
            composed = compress(composed, config.threshold, rng)
        logger.info(
            f"Class {class_id}: layer {l + 1} dictionary has {len(composed)} filters "
            f"from {len(optimized)} selected"
        )
        dictionary = AnalysisDictionary(filters=tuple(composed), layer=l + 1, class_id=class_id)
    return ClassModel(class_id=class_id, layers=layers, truncated=truncated)


def train_multiclass(dataset: LabeledDataset, config: ModelConfig) -> DeepBoostModel:
    """One class model per class, trained independently (optionally in parallel)"""
    config.validate()
    dataset.require_multiclass()
    class_ids = list(range(1, dataset.num_classes + 1))
    workers = min(config.jobs, len(class_ids))
    threads = max(1, config.jobs // workers)
    logger.info(
        f"Training {len(class_ids)} one-vs-all class models with {workers} worker(s), "
        f"{threads} feature thread(s) each"
    )

    models: List[ClassModel] = []
    with ProcessPool(max_processes=workers) as pool:
        jobs = {
            k: pool.start_process(
                train_class_model,
                (dataset, k, config, np.random.default_rng(derive_seed(config.seed, k)), threads),
            )
            for k in class_ids
        }
        for k in class_ids:
            name = dataset.class_names[k - 1]
            try:
                models.append(pool.wait(jobs[k]))
            except ProcessError as e:
                logger.debug(f"Class '{name}' job {jobs[k]} ended {pool.get_process_status(jobs[k])}")
                raise ClassTrainingError(name, pool.get_process_error(jobs[k]) or str(e))
            logger.info(f"Class '{name}' trained with {models[-1].depth} layer(s)")

    return DeepBoostModel(
        class_models=models,
        config=config,
        class_names=dataset.class_names,
        image_shape=dataset.image_shape,
    )


def _check_image(model: DeepBoostModel, image: Image):
    if image.shape != model.image_shape:
        raise ImageDimensionError(
            f"Image of shape {image.shape} does not match model input {model.image_shape}"
        )


def layer_scores(model: DeepBoostModel, image: Image) -> np.ndarray:
    """K x L matrix of per-class, per-layer scores; missing layers score 0"""
    _check_image(model, image)
    table = np.zeros((model.num_classes, model.config.layers))
    for k, cm in enumerate(model.class_models):
        scores = cm.layer_scores(image)
        table[k, :len(scores)] = scores
    return table


def predict(model: DeepBoostModel, image: Image, depth: Optional[int] = None) -> Tuple[int, np.ndarray]:
    """Arg-max class over summed layer scores (layers 1..depth); ties go to the lowest id"""
    depth = model.config.layers if depth is None else depth
    if not 1 <= depth <= model.config.layers:
        raise ConfigError(f"depth must lie in 1..{model.config.layers}, got {depth}")
    table = layer_scores(model, image)
    scores = table[:, :depth].sum(axis=1)
    return int(np.argmax(scores)) + 1, scores


def predict_batch(model: DeepBoostModel, images: Sequence[Image]) -> np.ndarray:
    """N x K x L score tables for a batch of images"""
    return np.stack([layer_scores(model, img) for img in images]) if images else \
        np.zeros((0, model.num_classes, model.config.layers))


def decisions(tables: np.ndarray, depth: Optional[int] = None) -> np.ndarray:
    """Predicted class ids from N x K x L score tables"""
    depth = tables.shape[2] if depth is None else depth
    return np.argmax(tables[:, :, :depth].sum(axis=2), axis=1) + 1


def place_templates(canvas_shape: Tuple[int, int],
                    placements: Sequence[Tuple[np.ndarray, int, int]]) -> Image:
    """Add each stretched kernel at its (w, h) top-left corner, then clamp to [0, 1]"""
    canvas = np.zeros(canvas_shape)
    for kernel, w, h in placements:
        tile = stretch(kernel)
        bottom = min(h + tile.shape[0], canvas.shape[0])
        right = min(w + tile.shape[1], canvas.shape[1])
        if bottom <= h or right <= w:
            continue
        canvas[h:bottom, w:right] += tile[:bottom - h, :right - w]
    return Image(np.clip(canvas, 0.0, 1.0))


def render_template(class_model: ClassModel, layer: int,
                    canvas_size: Union[int, Tuple[int, int]], reference: Image) -> Image:
    """Draw each selected filter at its strongest winning position on a reference positive"""
    if not 1 <= layer <= class_model.depth:
        raise TrainingError(f"Class {class_model.class_id} has no trained layer {layer}")
    shape = (canvas_size, canvas_size) if isinstance(canvas_size, int) else tuple(canvas_size)
    layer_model = class_model.layers[layer - 1]
    if not layer_model.selected:
        logger.warning(f"Class {class_model.class_id} layer {layer} has no selected features; blank template")
        return Image(np.zeros(shape))

    index = activate_image(reference, layer_model.dictionary).response_index
    placements = []
    for g in layer_model.selected:
        hit = index.strongest(g)
        if hit is None:
            continue
        w, h, _ = hit
        placements.append((layer_model.dictionary.get(g).kernel, w, h))
    if not placements:
        logger.warning(
            f"Class {class_model.class_id} layer {layer}: no selected filter wins on the reference image"
        )
    return place_templates(shape, placements)
