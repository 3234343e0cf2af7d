"""Winner-take-all activation, spatial-pyramid histograms and the
feature-index bookkeeping that maps a boosted dimension back to its filter.

Layout of a feature vector is filter-major, then pyramid block, then bin:
    d = (m * blocks + block) * C + bin
Blocks are ordered level by level (1x1, 2x2, 4x4), row-major within a level.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Sequence, Set, Tuple, Union

import numpy as np

from deepboost.filters import AnalysisDictionary, normalize_energy, raw_responses
from deepboost.imagekit import Image, ResponseMap
from utils.exceptions import FeatureError
from utils.logger import Logger
from utils.utils_export import write_csv

logger = Logger.get_logger(__name__)

DEFAULT_BINS = 50
DEFAULT_LEVELS = (1, 2, 4)
BIN_PERCENTILE = 99.0


class ResponseEntry(NamedTuple):
    activated: bool
    w: int
    h: int
    g: int


@dataclass(frozen=True, eq=False)
class ResponseIndex:
    """Winner per lattice position: (isActivated, w, h, filter id)"""
    winners: np.ndarray
    magnitudes: np.ndarray
    filter_ids: Tuple[int, ...]

    @property
    def entries(self) -> List[ResponseEntry]:
        h_idx, w_idx = np.indices(self.winners.shape)
        return [
            ResponseEntry(bool(mag > 0), int(w), int(h), self.filter_ids[int(win)])
            for win, mag, w, h in zip(self.winners.ravel(), self.magnitudes.ravel(),
                                      w_idx.ravel(), h_idx.ravel())
        ]

    def strongest(self, filter_id: int) -> Optional[Tuple[int, int, float]]:
        """(w, h, magnitude) of the strongest activated response won by a filter"""
        position = self.filter_ids.index(filter_id)
        mask = (self.winners == position) & (self.magnitudes > 0)
        if not mask.any():
            return None
        masked = np.where(mask, self.magnitudes, -np.inf)
        h, w = np.unravel_index(int(np.argmax(masked)), masked.shape)
        return int(w), int(h), float(self.magnitudes[h, w])


@dataclass(frozen=True, eq=False)
class FeatureMapStack:
    """M post-activation maps; at each position at most one map is nonzero"""
    maps: np.ndarray
    winners: np.ndarray
    filter_ids: Tuple[int, ...]
    image_id: Optional[int] = None

    @property
    def M(self) -> int:
        return self.maps.shape[0]

    @property
    def lattice(self) -> Tuple[int, int]:
        return self.maps.shape[1:]

    @property
    def magnitudes(self) -> np.ndarray:
        return self.maps.max(axis=0)

    @property
    def response_index(self) -> ResponseIndex:
        return ResponseIndex(self.winners, self.magnitudes, self.filter_ids)

    def activated_values(self) -> np.ndarray:
        return self.maps[self.maps > 0]


@dataclass(frozen=True, eq=False)
class FeatureLayout:
    """Dimension bookkeeping for the blocks x C x M pyramid representation"""
    M: int
    bin_edges: np.ndarray
    levels: Tuple[int, ...] = DEFAULT_LEVELS
    filter_ids: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        edges = np.array(self.bin_edges, dtype=np.float64, copy=True)
        if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise FeatureError("bin_edges must be a strictly increasing vector of length C+1")
        edges.setflags(write=False)
        levels = tuple(int(n) for n in self.levels)
        finest = max(levels)
        if any(finest % n for n in levels):
            raise FeatureError(f"Pyramid levels {levels} must divide the finest level")
        ids = tuple(range(self.M)) if self.filter_ids is None else tuple(int(i) for i in self.filter_ids)
        if len(ids) != self.M:
            raise FeatureError(f"Layout has M={self.M} but {len(ids)} filter ids")
        object.__setattr__(self, 'bin_edges', edges)
        object.__setattr__(self, 'levels', levels)
        object.__setattr__(self, 'filter_ids', ids)

    @property
    def C(self) -> int:
        return len(self.bin_edges) - 1

    @property
    def blocks(self) -> int:
        return sum(n * n for n in self.levels)

    @property
    def D(self) -> int:
        return self.blocks * self.C * self.M

    def encode(self, m: int, block: int, bin: int) -> int:
        if not (0 <= m < self.M and 0 <= block < self.blocks and 0 <= bin < self.C):
            raise FeatureError(f"Index ({m}, {block}, {bin}) outside layout")
        return (m * self.blocks + block) * self.C + bin

    def decode(self, d: int) -> Tuple[int, int, int]:
        if not 0 <= d < self.D:
            raise FeatureError(f"Dimension {d} outside layout of size {self.D}")
        m, rest = divmod(int(d), self.blocks * self.C)
        block, bin = divmod(rest, self.C)
        return m, block, bin

    def filter_of(self, d: int) -> int:
        return self.filter_ids[self.decode(d)[0]]


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    layout: FeatureLayout
    clamped: int = 0

    def __len__(self) -> int:
        return len(self.values)


def max_activate(responses: Sequence[Union[ResponseMap, np.ndarray]],
                 filter_ids: Optional[Sequence[int]] = None,
                 image_id: Optional[int] = None) -> FeatureMapStack:
    """Per position keep only the largest |response|; ties go to the lowest filter index"""
    if len(responses) == 0:
        raise FeatureError("max_activate needs at least one response map")
    stack = np.abs(np.stack([
        r.values if isinstance(r, ResponseMap) else np.asarray(r, dtype=np.float64)
        for r in responses
    ]))
    winners = np.argmax(stack, axis=0)
    maps = np.zeros_like(stack)
    np.put_along_axis(maps, winners[None], np.take_along_axis(stack, winners[None], axis=0), axis=0)
    ids = tuple(range(len(stack))) if filter_ids is None else tuple(filter_ids)
    return FeatureMapStack(maps=maps, winners=winners, filter_ids=ids, image_id=image_id)


def _cell_edges(length: int, parts: int) -> np.ndarray:
    """Integer partition; the remainder goes to the last cell"""
    step = length // parts
    if step == 0:
        raise FeatureError(f"Lattice of length {length} cannot be split into {parts} blocks")
    return np.minimum(np.arange(length) // step, parts - 1)


def pyramid_histogram(stack: FeatureMapStack, layout: FeatureLayout) -> FeatureVector:
    """Histogram activated magnitudes per filter and pyramid block; zeros are not counted"""
    if stack.M != layout.M:
        raise FeatureError(f"Stack has {stack.M} maps but layout expects {layout.M}")
    finest = max(layout.levels)
    height, width = stack.lattice
    row_cell = _cell_edges(height, finest)
    col_cell = _cell_edges(width, finest)

    m_idx, r_idx, c_idx = np.nonzero(stack.maps)
    values = stack.maps[m_idx, r_idx, c_idx]
    edges = layout.bin_edges
    bins = np.searchsorted(edges, values, side='right') - 1
    clamped = int(np.count_nonzero((values > edges[-1]) | (values < edges[0])))
    bins = np.clip(bins, 0, layout.C - 1)
    if clamped:
        logger.debug(f"Clamped {clamped} activated responses into end bins")

    cells = np.zeros((layout.M, finest, finest, layout.C))
    np.add.at(cells, (m_idx, row_cell[r_idx], col_cell[c_idx], bins), 1.0)

    per_level = []
    for n in layout.levels:
        f = finest // n
        level = cells.reshape(layout.M, n, f, n, f, layout.C).sum(axis=(2, 4))
        per_level.append(level.reshape(layout.M, n * n, layout.C))
    hist = np.concatenate(per_level, axis=1)
    return FeatureVector(values=hist.ravel(), layout=layout, clamped=clamped)


def fit_bins(stacks: Iterable[FeatureMapStack], C: int = DEFAULT_BINS) -> np.ndarray:
    """Equal-width edges over [0, q], q = 99th percentile of activated magnitudes"""
    if C < 1:
        raise FeatureError(f"C must be >= 1, got {C}")
    activated = [s.activated_values() for s in stacks]
    values = np.concatenate(activated) if activated else np.zeros(0)
    if values.size == 0:
        raise FeatureError("Cannot fit histogram bins: no activated responses")
    q = float(np.percentile(values, BIN_PERCENTILE))
    return np.linspace(0.0, q, C + 1)


def selected_filters(classifier, layout: FeatureLayout) -> Set[int]:
    """Filter ids behind every dimension used by a stump"""
    return {layout.filter_of(stump.d) for stump in classifier.stumps}


def activate_image(image: Image, dictionary: AnalysisDictionary,
                   image_id: Optional[int] = None) -> FeatureMapStack:
    """Normalized responses followed by winner-take-all"""
    normalized, _, _ = normalize_energy(raw_responses(image, dictionary))
    return max_activate(normalized, filter_ids=dictionary.ids, image_id=image_id)


def feature_stacks(images: Sequence[Image], dictionary: AnalysisDictionary,
                   jobs: int = 1) -> List[FeatureMapStack]:
    """Activate every image under a dictionary; parallel over images"""
    if jobs <= 1 or len(images) < 2:
        return [activate_image(img, dictionary, i) for i, img in enumerate(images)]
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(
            lambda item: activate_image(item[1], dictionary, item[0]), enumerate(images)
        ))


def make_layout(dictionary: AnalysisDictionary, bin_edges: np.ndarray,
                levels: Tuple[int, ...] = DEFAULT_LEVELS) -> FeatureLayout:
    return FeatureLayout(M=len(dictionary), bin_edges=bin_edges, levels=levels, filter_ids=dictionary.ids)


def feature_matrix(stacks: Sequence[FeatureMapStack], layout: FeatureLayout) -> np.ndarray:
    """N x D matrix of pyramid histograms"""
    X = np.zeros((len(stacks), layout.D))
    clamped = 0
    for i, stack in enumerate(stacks):
        vector = pyramid_histogram(stack, layout)
        X[i] = vector.values
        clamped += vector.clamped
    if clamped:
        logger.debug(f"{clamped} activated responses clamped across {len(stacks)} images")
    return X


def image_features(image: Image, dictionary: AnalysisDictionary, layout: FeatureLayout) -> FeatureVector:
    return pyramid_histogram(activate_image(image, dictionary), layout)


def export_feature_matrix(X: np.ndarray, path: Union[str, Path]) -> Path:
    """CSV with one row per image; the header names the D columns"""
    X = np.asarray(X)
    header = [f"d{j}" for j in range(X.shape[1])]
    return write_csv(path, header, (row.tolist() for row in X))
