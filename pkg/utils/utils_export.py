import csv
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from PIL import Image as PILImage

from utils.logger import Logger
from utils.utils import ensure_dir

logger = Logger.get_logger(__name__)

PathLike = Union[str, Path]


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write rows to a CSV file, creating parent directories"""
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    logger.debug(f"Wrote CSV {path}")
    return path


def stretch(values: np.ndarray) -> np.ndarray:
    """Min-max stretch to [0, 1]; a constant array maps to zeros"""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi - lo <= 0.0:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] values to 8-bit gray levels"""
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_gray_png(values: np.ndarray, path: PathLike, scale: int = 1) -> Path:
    """Save a [0, 1] matrix as an 8-bit grayscale PNG"""
    path = Path(path)
    ensure_dir(path.parent)
    img = PILImage.fromarray(to_uint8(values))
    if scale > 1:
        img = img.resize((img.width * scale, img.height * scale), PILImage.NEAREST)
    img.save(path, format="PNG")
    logger.debug(f"Wrote PNG {path}")
    return path


def tile_grid(tiles: Sequence[np.ndarray], columns: Optional[int] = None, pad: int = 1) -> np.ndarray:
    """Arrange equally sized tiles (each stretched) into one grid image"""
    if not tiles:
        return np.zeros((1, 1))
    k_h, k_w = tiles[0].shape
    columns = columns or int(np.ceil(np.sqrt(len(tiles))))
    rows = int(np.ceil(len(tiles) / columns))
    grid = np.zeros((rows * (k_h + pad) + pad, columns * (k_w + pad) + pad))
    for i, tile in enumerate(tiles):
        r, c = divmod(i, columns)
        top = pad + r * (k_h + pad)
        left = pad + c * (k_w + pad)
        grid[top:top + k_h, left:left + k_w] = stretch(tile)
    return grid


def save_line_plot(path: PathLike, x: Sequence[float], series: dict,
                   xlabel: str, ylabel: str, title: str = "") -> Path:
    """Render one or more named curves to a PNG"""
    path = Path(path)
    ensure_dir(path.parent)
    fig, ax = plt.subplots(figsize=(6, 4))
    try:
        for label, ys in series.items():
            ax.plot(list(x)[:len(ys)], ys, marker="o", markersize=3, label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.grid(True, alpha=0.3)
        if len(series) > 1:
            ax.legend()
        fig.tight_layout()
        fig.savefig(path, dpi=100)
    finally:
        plt.close(fig)
    logger.debug(f"Wrote plot {path}")
    return path


def save_heatmap(path: PathLike, matrix: np.ndarray, title: str = "") -> Path:
    """Render a square matrix (e.g. filter distances) as a heatmap PNG"""
    path = Path(path)
    ensure_dir(path.parent)
    fig, ax = plt.subplots(figsize=(5, 5))
    try:
        im = ax.imshow(matrix, cmap="gray_r", interpolation="nearest")
        fig.colorbar(im, ax=ax, fraction=0.046)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path, dpi=100)
    finally:
        plt.close(fig)
    logger.debug(f"Wrote heatmap {path}")
    return path
