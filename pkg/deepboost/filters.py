"""Filter banks: Gabor initialization, energy-normalized responses,
pairwise sigmoid composition and distance-based compression.
"""
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import pdist, squareform
from scipy.special import expit

from deepboost.imagekit import Image, ResponseMap, correlate_bank
from utils.exceptions import FilterCompositionError, FilterError, ImageDimensionError
from utils.logger import Logger

logger = Logger.get_logger(__name__)

DEFAULT_COMPRESS_THRESHOLD = 0.7
# Below this mean squared response the image is treated as structureless.
_ENERGY_FLOOR = 1e-20
_NORM_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class Filter:
    """A square kernel with its dictionary id, layer and optional parent ids"""
    kernel: np.ndarray
    id: int
    layer: int = 1
    lineage: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        kernel = np.array(self.kernel, dtype=np.float64, copy=True)
        if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
            raise FilterError(f"Filter {self.id}: kernel must be square, got shape {kernel.shape}")
        if self.layer < 1:
            raise FilterError(f"Filter {self.id}: layer must be >= 1, got {self.layer}")
        if self.lineage is not None:
            if len(self.lineage) != 2 or self.lineage[0] == self.lineage[1]:
                raise FilterError(f"Filter {self.id}: lineage must name two distinct parents")
            object.__setattr__(self, 'lineage', tuple(int(p) for p in self.lineage))
        kernel.setflags(write=False)
        object.__setattr__(self, 'kernel', kernel)

    @property
    def size(self) -> int:
        return self.kernel.shape[0]

    def with_kernel(self, kernel: np.ndarray) -> 'Filter':
        return replace(self, kernel=kernel)


@dataclass(frozen=True, eq=False)
class AnalysisDictionary:
    """Ordered, per-class, per-layer filter bank G = [g_1 .. g_M]"""
    filters: Tuple[Filter, ...]
    layer: int = 1
    class_id: int = 0
    _positions: Dict[int, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        filters = tuple(self.filters)
        if not filters:
            raise FilterError("An analysis dictionary needs at least one filter")
        sizes = {f.size for f in filters}
        if len(sizes) != 1:
            raise FilterError(f"Dictionary filters must share one support size, got {sorted(sizes)}")
        layers = {f.layer for f in filters}
        if layers != {self.layer}:
            raise FilterError(f"Dictionary of layer {self.layer} holds filters of layers {sorted(layers)}")
        positions = {f.id: i for i, f in enumerate(filters)}
        if len(positions) != len(filters):
            raise FilterError("Filter ids must be unique within a dictionary")
        object.__setattr__(self, 'filters', filters)
        object.__setattr__(self, '_positions', positions)

    def __len__(self) -> int:
        return len(self.filters)

    def __iter__(self):
        return iter(self.filters)

    @property
    def size(self) -> int:
        return len(self.filters)

    @property
    def kernel_size(self) -> int:
        return self.filters[0].size

    @property
    def ids(self) -> Tuple[int, ...]:
        return tuple(f.id for f in self.filters)

    @property
    def kernels(self) -> np.ndarray:
        return np.stack([f.kernel for f in self.filters])

    def position(self, filter_id: int) -> int:
        try:
            return self._positions[filter_id]
        except KeyError:
            raise FilterError(f"Filter id {filter_id} not in dictionary (class {self.class_id}, layer {self.layer})")

    def get(self, filter_id: int) -> Filter:
        return self.filters[self.position(filter_id)]

    def with_kernels(self, kernels: Dict[int, np.ndarray]) -> 'AnalysisDictionary':
        """New dictionary with the given ids' kernels replaced; others shared as is"""
        filters = tuple(
            f.with_kernel(kernels[f.id]) if f.id in kernels else f for f in self.filters
        )
        return AnalysisDictionary(filters=filters, layer=self.layer, class_id=self.class_id)


@dataclass(frozen=True)
class GaborParams:
    orientations: int = 16
    scales: int = 1
    size: int = 5
    wavelength: float = 4.0
    sigma: float = 2.0

    def validate(self):
        if self.orientations < 1:
            raise FilterError(f"orientations must be >= 1, got {self.orientations}")
        if self.scales != 1:
            raise FilterError("Only single-scale Gabor banks are supported")
        if self.size < 1 or self.wavelength <= 0 or self.sigma <= 0:
            raise FilterError(f"Invalid Gabor geometry: {self}")


class NormalizedResponses(NamedTuple):
    maps: List[ResponseMap]
    energy: float
    degenerate: bool


def _unit(kernel: np.ndarray) -> np.ndarray:
    kernel = kernel - kernel.mean()
    norm = np.linalg.norm(kernel)
    if norm < _NORM_FLOOR:
        return np.zeros_like(kernel)
    return kernel / norm


def gabor_kernel(size: int, theta: float, wavelength: float, sigma: float) -> np.ndarray:
    """Cosine Gabor whose stripes run along `theta` (theta = 0: horizontal stripes)"""
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    x, y = np.meshgrid(coords, coords)
    across = -x * np.sin(theta) + y * np.cos(theta)
    envelope = np.exp(-(x ** 2 + y ** 2) / (2.0 * sigma ** 2))
    return envelope * np.cos(2.0 * np.pi * across / wavelength)


def make_gabor_bank(params: GaborParams = GaborParams(), class_id: int = 0) -> AnalysisDictionary:
    """A orientations a*pi/A, each zero-mean and unit L2 norm"""
    params.validate()
    filters = []
    for a in range(params.orientations):
        theta = a * np.pi / params.orientations
        kernel = _unit(gabor_kernel(params.size, theta, params.wavelength, params.sigma))
        filters.append(Filter(kernel=kernel, id=a, layer=1))
    logger.debug(f"Built Gabor bank with {params.orientations} orientations, size {params.size}")
    return AnalysisDictionary(filters=tuple(filters), layer=1, class_id=class_id)


def raw_responses(image: Union[Image, np.ndarray], bank: AnalysisDictionary,
                  patches: Optional[np.ndarray] = None) -> np.ndarray:
    values = image.values if isinstance(image, Image) else np.asarray(image, dtype=np.float64)
    if bank.kernel_size > min(values.shape):
        raise ImageDimensionError(
            f"Filter support {bank.kernel_size} exceeds image of shape {values.shape}"
        )
    return correlate_bank(values, bank.kernels, patches=patches)


def normalize_energy(raw: np.ndarray) -> Tuple[np.ndarray, float, bool]:
    """|r| / sqrt(mean r^2) over all filters and valid positions"""
    energy = float(np.mean(raw ** 2))
    if energy <= _ENERGY_FLOOR:
        return np.zeros_like(raw), energy, True
    return np.abs(raw) / np.sqrt(energy), energy, False


def normalized_responses(image: Union[Image, np.ndarray], bank: AnalysisDictionary) -> NormalizedResponses:
    """Energy-normalized, nonnegative responses of every filter in the bank"""
    normalized, energy, degenerate = normalize_energy(raw_responses(image, bank))
    if degenerate:
        logger.debug("Image has no filter energy; responses set to zero")
    return NormalizedResponses(
        maps=[ResponseMap(m) for m in normalized],
        energy=energy,
        degenerate=degenerate,
    )


def compose(g_i: Filter, g_j: Filter, new_id: int = 0, normalize: bool = True) -> Filter:
    """Next-layer filter sigmoid(g_i + g_j), re-centered and unit-normalized unless raw"""
    if g_i.layer != g_j.layer:
        raise FilterCompositionError(
            f"Cannot compose filters of layers {g_i.layer} and {g_j.layer}"
        )
    if g_i.id == g_j.id:
        raise FilterCompositionError(f"Cannot compose filter {g_i.id} with itself")
    if g_i.size != g_j.size:
        raise FilterCompositionError(f"Support sizes differ: {g_i.size} vs {g_j.size}")

    kernel = expit(g_i.kernel + g_j.kernel)
    if normalize:
        kernel = _unit(kernel)
        if not kernel.any():
            logger.warning(f"Composition of filters {g_i.id} and {g_j.id} is flat after centering")
    return Filter(
        kernel=kernel,
        id=new_id,
        layer=g_i.layer + 1,
        lineage=(min(g_i.id, g_j.id), max(g_i.id, g_j.id)),
    )


def compose_all(optimized: Sequence[Filter], normalize: bool = True, first_id: int = 0) -> List[Filter]:
    """All M(M-1)/2 unordered pairs, ids assigned in pair order"""
    optimized = list(optimized)
    if len(optimized) < 2:
        raise FilterCompositionError(f"Composition needs at least 2 filters, got {len(optimized)}")
    layers = {f.layer for f in optimized}
    if len(layers) != 1:
        raise FilterCompositionError(f"Filters to compose span layers {sorted(layers)}")
    composed = [
        compose(g_i, g_j, new_id=first_id + n, normalize=normalize)
        for n, (g_i, g_j) in enumerate(combinations(optimized, 2))
    ]
    logger.debug(f"Composed {len(composed)} filters from {len(optimized)}")
    return composed


def distance_matrix(filters: Sequence[Filter]) -> np.ndarray:
    """Pairwise L2 distances between kernels"""
    if not filters:
        return np.zeros((0, 0))
    flat = np.stack([f.kernel.ravel() for f in filters])
    if len(filters) == 1:
        return np.zeros((1, 1))
    return squareform(pdist(flat, metric='euclidean'))


def compress(filters: Sequence[Filter], threshold: float = DEFAULT_COMPRESS_THRESHOLD,
             rng: Optional[np.random.Generator] = None) -> List[Filter]:
    """Randomly drop one filter of every surviving pair closer than threshold"""
    if threshold < 0:
        raise FilterError(f"Compression threshold must be >= 0, got {threshold}")
    if not filters:
        return []
    rng = rng if rng is not None else np.random.default_rng(0)

    ordered = sorted(filters, key=lambda f: f.id)
    distances = distance_matrix(ordered)
    alive = np.ones(len(ordered), dtype=bool)
    for i, j in combinations(range(len(ordered)), 2):
        if alive[i] and alive[j] and distances[i, j] < threshold:
            alive[j if rng.integers(2) else i] = False

    kept = [f for f, keep in zip(ordered, alive) if keep]
    logger.debug(f"Compression kept {len(kept)} of {len(ordered)} filters (threshold {threshold})")
    return kept
