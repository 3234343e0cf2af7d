"""Image representation, dataset ingestion and the valid-correlation primitive.

Every image is a grayscale float64 matrix in [0, 1]. Convolution follows the
correlation convention (no kernel flip): response[r, c] is the inner product of
the kernel with image[r:r+k, c:c+k].
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError
from scipy.signal import correlate2d

from utils.exceptions import (
    DatasetError,
    DatasetFormatError,
    EmptyClassError,
    ImageDimensionError,
)
from utils.logger import Logger

logger = Logger.get_logger(__name__)

LUMINANCE = np.array([0.299, 0.587, 0.114])
IMAGE_SUFFIXES = {'.png', '.pgm', '.jpg', '.jpeg'}

CIFAR_RECORD_BYTES = 3073
CIFAR_SIDE = 32
CIFAR10_CLASSES = [
    'airplane', 'automobile', 'bird', 'cat', 'deer',
    'dog', 'frog', 'horse', 'ship', 'truck',
]


def _frozen(values: np.ndarray) -> np.ndarray:
    values = np.array(values, dtype=np.float64, copy=True)
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class Image:
    """Grayscale image, row-major, values in [0, 1]"""
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2 or values.size == 0:
            raise ImageDimensionError(f"Image must be a non-empty 2-D matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ImageDimensionError("Image contains non-finite values")
        if values.min() < 0.0 or values.max() > 1.0:
            raise ImageDimensionError(
                f"Image values must lie in [0, 1], got [{values.min():.4g}, {values.max():.4g}]"
            )
        object.__setattr__(self, 'values', values)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class ResponseMap:
    """Signed (or, after activation, nonnegative) filter responses on the valid lattice"""
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'values', _frozen(self.values))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Images with class ids in 1..K and the K class names"""
    images: Tuple[Image, ...]
    labels: np.ndarray
    class_names: Tuple[str, ...]
    skipped: int = field(default=0, compare=False)

    def __post_init__(self):
        images = tuple(self.images)
        labels = np.asarray(self.labels, dtype=np.int64).copy()
        labels.setflags(write=False)
        names = tuple(self.class_names)
        if len(images) != len(labels):
            raise DatasetError(f"{len(images)} images but {len(labels)} labels")
        if len(labels) and (labels.min() < 1 or labels.max() > len(names)):
            raise DatasetError(f"Labels must lie in 1..{len(names)}")
        object.__setattr__(self, 'images', images)
        object.__setattr__(self, 'labels', labels)
        object.__setattr__(self, 'class_names', names)

    def __len__(self) -> int:
        return len(self.images)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_shape(self) -> Tuple[int, int]:
        return self.images[0].shape if self.images else (0, 0)

    def class_indices(self, class_id: int) -> np.ndarray:
        return np.flatnonzero(self.labels == class_id)

    def subset(self, indices: Sequence[int]) -> 'LabeledDataset':
        indices = [int(i) for i in indices]
        return LabeledDataset(
            images=tuple(self.images[i] for i in indices),
            labels=self.labels[indices],
            class_names=self.class_names,
        )

    def require_multiclass(self):
        """Raise unless the dataset can train a one-vs-all model"""
        present = np.unique(self.labels)
        if self.num_classes < 2 or len(present) < 2:
            raise DatasetError(
                f"Multiclass training needs at least 2 populated classes, got {len(present)}"
            )


def to_grayscale(values: np.ndarray) -> np.ndarray:
    """Luminance 0.299/0.587/0.114; 2-D input is returned as is"""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 2:
        return values
    if values.ndim == 3 and values.shape[2] in (3, 4):
        return values[..., :3] @ LUMINANCE
    raise ImageDimensionError(f"Cannot convert array of shape {values.shape} to grayscale")


def read_image(path: Path, target_size: int) -> Image:
    with PILImage.open(path) as img:
        rgb = np.asarray(img.convert('RGB'), dtype=np.float64) / 255.0
    gray = to_grayscale(rgb).astype(np.float32)
    resized = PILImage.fromarray(gray).resize(
        (target_size, target_size), PILImage.BILINEAR
    )
    return Image(np.clip(np.asarray(resized, dtype=np.float64), 0.0, 1.0))


def load_image_dir(path: Union[str, Path], target_size: int) -> LabeledDataset:
    """Load `<root>/<class_name>/*.{png,pgm,jpg}`; labels follow sorted class names"""
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"Dataset directory not found: {root}")
    if target_size < 1:
        raise DatasetError(f"target_size must be positive, got {target_size}")

    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DatasetError(f"No class subdirectories under {root}")

    images: List[Image] = []
    labels: List[int] = []
    skipped = 0
    for label, class_dir in enumerate(class_dirs, start=1):
        files = sorted(p for p in class_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        loaded = 0
        for file in files:
            try:
                images.append(read_image(file, target_size))
            except (UnidentifiedImageError, OSError, ValueError) as e:
                skipped += 1
                logger.debug(f"Skipping unreadable image {file}: {e}")
                continue
            labels.append(label)
            loaded += 1
        if loaded == 0:
            raise EmptyClassError(f"Class directory '{class_dir.name}' holds no decodable images")
        logger.debug(f"Loaded {loaded} images for class '{class_dir.name}'")

    if skipped:
        logger.warning(f"Skipped {skipped} unreadable files under {root}")
    logger.info(f"Loaded {len(images)} images in {len(class_dirs)} classes from {root}")
    return LabeledDataset(
        images=tuple(images),
        labels=np.array(labels),
        class_names=tuple(p.name for p in class_dirs),
        skipped=skipped,
    )


def _cifar_files(path: Path) -> List[Path]:
    if path.is_file():
        return [path]
    if path.is_dir():
        files = sorted(path.glob('*.bin'))
        if files:
            return files
    raise DatasetError(f"No CIFAR-10 batch files found at {path}")


def _cifar_class_names(path: Path) -> List[str]:
    meta = (path if path.is_dir() else path.parent) / 'batches.meta.txt'
    if meta.is_file():
        names = [line.strip() for line in meta.read_text().splitlines() if line.strip()]
        if len(names) == len(CIFAR10_CLASSES):
            return names
    return list(CIFAR10_CLASSES)


def decode_cifar10(raw: bytes, source: str = "<bytes>") -> Tuple[np.ndarray, np.ndarray]:
    """Decode CIFAR-10 binary records into (N, 32, 32) gray images and 0-based labels"""
    if len(raw) % CIFAR_RECORD_BYTES != 0:
        raise DatasetFormatError(
            f"{source}: length {len(raw)} is not a multiple of {CIFAR_RECORD_BYTES}"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        bad = int(np.flatnonzero(labels > 9)[0])
        raise DatasetFormatError(f"{source}: record {bad} has label {labels[bad]}, expected 0-9")
    planes = records[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).astype(np.float64) / 255.0
    gray = np.tensordot(LUMINANCE, planes, axes=([0], [1]))
    return np.clip(gray, 0.0, 1.0), labels


def load_cifar10(path: Union[str, Path]) -> LabeledDataset:
    """Load one CIFAR-10 binary batch file, or every `*.bin` batch in a directory"""
    path = Path(path)
    images: List[Image] = []
    labels: List[np.ndarray] = []
    for file in _cifar_files(path):
        gray, file_labels = decode_cifar10(file.read_bytes(), source=str(file))
        images.extend(Image(g) for g in gray)
        labels.append(file_labels + 1)
        logger.debug(f"Read {len(file_labels)} CIFAR-10 records from {file}")
    logger.info(f"Loaded {len(images)} CIFAR-10 images from {path}")
    return LabeledDataset(
        images=tuple(images),
        labels=np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64),
        class_names=tuple(_cifar_class_names(path)),
    )


def _as_array(image: Union[Image, np.ndarray]) -> np.ndarray:
    return image.values if isinstance(image, Image) else np.asarray(image, dtype=np.float64)


def convolve_valid(image: Union[Image, np.ndarray], kernel: np.ndarray) -> ResponseMap:
    """Valid correlation of an image with a square kernel"""
    values = _as_array(image)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise ImageDimensionError(f"Kernel must be square, got shape {kernel.shape}")
    if kernel.shape[0] > min(values.shape):
        raise ImageDimensionError(
            f"Kernel of size {kernel.shape[0]} exceeds image of size {values.shape[1]}x{values.shape[0]}"
        )
    return ResponseMap(correlate2d(values, kernel, mode='valid'))


def image_patches(values: np.ndarray, size: int) -> np.ndarray:
    """All size x size windows of a (..., H, W) stack, shape (..., H-k+1, W-k+1, k, k)"""
    values = np.asarray(values, dtype=np.float64)
    if size > min(values.shape[-2:]):
        raise ImageDimensionError(f"Kernel of size {size} exceeds image of shape {values.shape[-2:]}")
    return np.lib.stride_tricks.sliding_window_view(values, (size, size), axis=(-2, -1))


def correlate_bank(image: Union[Image, np.ndarray], kernels: np.ndarray,
                   patches: Optional[np.ndarray] = None) -> np.ndarray:
    """Valid correlation with every kernel of an (M, k, k) bank; returns (M, H', W')"""
    kernels = np.asarray(kernels, dtype=np.float64)
    if patches is None:
        patches = image_patches(_as_array(image), kernels.shape[-1])
    return np.einsum('hwab,mab->mhw', patches, kernels, optimize=True)
