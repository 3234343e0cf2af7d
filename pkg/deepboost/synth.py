"""Synthetic oriented-bar datasets for desk-scale training runs."""
from pathlib import Path
from typing import Callable, Dict, List, Union

import numpy as np
from scipy.ndimage import gaussian_filter

from deepboost.imagekit import Image, LabeledDataset
from utils.exceptions import DatasetError
from utils.logger import Logger
from utils.utils import ensure_dir, sanitize_filename
from utils.utils_export import save_gray_png

logger = Logger.get_logger(__name__)

BAR_CLASSES = ('horizontal', 'vertical')


def _bar_rows(rng: np.random.Generator, size: int) -> np.ndarray:
    """1 to 3 full-width bright bars on a flat background, random rows and contrast"""
    background = rng.uniform(0.15, 0.4)
    contrast = rng.uniform(0.3, 0.55)
    canvas = np.full((size, size), background)
    for _ in range(rng.integers(1, 4)):
        thickness = int(rng.integers(2, 4))
        top = int(rng.integers(0, size - thickness + 1))
        canvas[top:top + thickness, :] = background + contrast
    return canvas


def _texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """Isotropic blob texture, zero mean, carrying no orientation"""
    blobs = gaussian_filter(rng.standard_normal((size, size)), sigma=1.5)
    return 0.15 * blobs / (np.abs(blobs).max() + 1e-12)


def make_bars(n_per_class: int, seed: int, size: int = 32, noise: float = 0.05,
              distractor: float = 0.0) -> LabeledDataset:
    """Horizontal-bar (class 1) against vertical-bar (class 2) images.

    A `distractor` fraction of every class additionally carries a random blob
    texture unrelated to the label.
    """
    if n_per_class < 1:
        raise DatasetError(f"n_per_class must be >= 1, got {n_per_class}")
    if size < 8:
        raise DatasetError(f"Bar images need size >= 8, got {size}")
    if not 0.0 <= distractor <= 1.0:
        raise DatasetError(f"distractor must lie in [0, 1], got {distractor}")
    rng = np.random.default_rng(seed)
    images: List[Image] = []
    labels: List[int] = []
    for label, name in enumerate(BAR_CLASSES, start=1):
        for _ in range(n_per_class):
            canvas = _bar_rows(rng, size)
            if name == 'vertical':
                canvas = canvas.T
            if rng.random() < distractor:
                canvas = canvas + _texture(rng, size)
            canvas = canvas + rng.normal(0.0, noise, canvas.shape)
            images.append(Image(np.clip(canvas, 0.0, 1.0)))
            labels.append(label)
    logger.debug(f"Generated {len(images)} bar images (seed={seed}, distractor={distractor})")
    return LabeledDataset(images=tuple(images), labels=np.array(labels), class_names=BAR_CLASSES)


GENERATORS: Dict[str, Callable[..., LabeledDataset]] = {
    'synth-bars': make_bars,
}


def generate(name: str, n_per_class: int, seed: int, **kwargs) -> LabeledDataset:
    generator = GENERATORS.get(name)
    if generator is None:
        raise DatasetError(f"Unknown generator '{name}' (known: {', '.join(sorted(GENERATORS))})")
    return generator(n_per_class, seed, **kwargs)


def write_dataset(dataset: LabeledDataset, root: Union[str, Path]) -> Path:
    """Write `<root>/<class_name>/<index>.png`, readable by load_image_dir"""
    root = ensure_dir(root)
    counters = {k: 0 for k in range(1, dataset.num_classes + 1)}
    for image, label in zip(dataset.images, dataset.labels):
        label = int(label)
        class_dir = root / sanitize_filename(dataset.class_names[label - 1])
        save_gray_png(image.values, class_dir / f"{counters[label]:05d}.png")
        counters[label] += 1
    logger.info(f"Wrote {len(dataset)} images in {dataset.num_classes} classes to {root}")
    return root
