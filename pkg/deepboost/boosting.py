"""Gentle AdaBoost with regression stumps.

A stump predicts f(x) = a * phi(x[d] - delta) + b with phi the unit-slope
sigmoid (production) or the step 1[x[d] > delta] (oracle). Given (d, delta)
the model is linear in (a, b), so each candidate is solved in closed form
from the weighted normal equations.
"""
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from utils.exceptions import BoostingError, DimensionMismatchError, WeightDivergenceError
from utils.logger import Logger
from utils.utils_export import write_csv

logger = Logger.get_logger(__name__)

SIGMOID = 'sigmoid'
INDICATOR = 'indicator'
STUMP_KINDS = (SIGMOID, INDICATOR)

MAX_CANDIDATES = 64
ZERO_ERROR_PATIENCE = 3
_CHUNK = 4096
_DET_RTOL = 1e-12
_MAX_HALVINGS = 30


def basis(values: np.ndarray, delta: Union[float, np.ndarray], kind: str = SIGMOID) -> np.ndarray:
    if kind == SIGMOID:
        return expit(values - delta)
    return (values > delta).astype(np.float64)


@dataclass(frozen=True)
class Stump:
    d: int
    delta: float
    a: float
    b: float
    kind: str = SIGMOID

    def __post_init__(self):
        if self.d < 0:
            raise BoostingError(f"Stump dimension must be >= 0, got {self.d}")
        if not np.all(np.isfinite([self.delta, self.a, self.b])):
            raise BoostingError(f"Stump parameters must be finite: {self}")
        if self.kind not in STUMP_KINDS:
            raise BoostingError(f"Unknown stump kind '{self.kind}'")

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Stump output on an N x D matrix (or a single D-vector)"""
        X = np.asarray(X, dtype=np.float64)
        column = X[..., self.d]
        return self.a * basis(column, self.delta, self.kind) + self.b

    def scaled(self, factor: float) -> 'Stump':
        return replace(self, a=self.a * factor, b=self.b * factor)


@dataclass
class StrongClassifier:
    """Additive model F(x) = sum_m f_m(x)"""
    stumps: List[Stump] = field(default_factory=list)
    rounds: int = 0
    dimension: int = 0

    def __post_init__(self):
        if len(self.stumps) > self.rounds:
            raise BoostingError(f"{len(self.stumps)} stumps exceed the {self.rounds} round budget")
        for stump in self.stumps:
            if stump.d >= self.dimension:
                raise DimensionMismatchError(
                    f"Stump on dimension {stump.d} outside feature space of size {self.dimension}"
                )

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dimension:
            raise DimensionMismatchError(
                f"Features have dimension {X.shape[1]}, classifier expects {self.dimension}"
            )
        scores = np.zeros(X.shape[0])
        for stump in self.stumps:
            scores += stump.predict(X)
        return scores

    def predict(self, X: np.ndarray) -> np.ndarray:
        return sign(self.decision_function(X))


@dataclass(frozen=True, eq=False)
class SampleWeights:
    """Nonnegative boosting weights; renormalized to sum 1 after every update"""
    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64, copy=True)
        if w.ndim != 1 or not np.all(np.isfinite(w)) or np.any(w < 0):
            raise BoostingError("Sample weights must be a finite nonnegative vector")
        w.setflags(write=False)
        object.__setattr__(self, 'w', w)

    @classmethod
    def uniform(cls, n: int) -> 'SampleWeights':
        return cls(np.full(n, 1.0 / n))

    def __len__(self) -> int:
        return len(self.w)

    @property
    def total(self) -> float:
        return float(self.w.sum())

    def normalized(self) -> 'SampleWeights':
        total = self.total
        if total <= 0:
            raise WeightDivergenceError("Cannot normalize: all sample weights are zero")
        return SampleWeights(self.w / total)


@dataclass(frozen=True)
class RoundDiagnostics:
    round: int
    d: int
    delta: float
    a: float
    b: float
    weighted_error: float
    train_error: float
    exp_loss: float
    shrinkage: float = 1.0


def sign(scores: np.ndarray) -> np.ndarray:
    """Label decision; a zero score counts as positive"""
    return np.where(np.asarray(scores) >= 0, 1, -1)


def exponential_loss(scores: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(np.exp(-np.asarray(y) * np.asarray(scores))))


def _weighted_midpoints(x: np.ndarray, w: np.ndarray, count: int) -> np.ndarray:
    """Midpoints between distinct values at `count` weighted quantile levels"""
    values, inverse = np.unique(x, return_inverse=True)
    mass = np.bincount(inverse, weights=w)
    cdf = np.cumsum(mass) / mass.sum()
    levels = (np.arange(count) + 0.5) / count
    idx = np.clip(np.searchsorted(cdf, levels, side='left'), 0, len(values) - 2)
    idx = np.unique(idx)
    return (values[idx] + values[idx + 1]) / 2.0


class ThresholdGrid:
    """Candidate (d, delta) pairs from the samples with positive weight.

    Dimensions with at most `max_candidates` distinct midpoints use all of them and
    are cached; wider dimensions are resampled at weighted quantiles per call.
    """

    def __init__(self, X: np.ndarray, support: np.ndarray, max_candidates: int = MAX_CANDIDATES):
        if max_candidates < 1:
            raise BoostingError(f"max_candidates must be >= 1, got {max_candidates}")
        self.support = support.copy()
        self.max_candidates = max_candidates
        Xs = X[support]
        if len(Xs) < 2:
            self.dims = np.zeros(0, dtype=np.int64)
            self.deltas = np.zeros(0)
            self.wide = np.zeros(0, dtype=np.int64)
            self._Xs = Xs
            return
        S = np.sort(Xs, axis=0)
        gaps = S[1:] > S[:-1]
        counts = gaps.sum(axis=0)
        narrow = counts <= max_candidates
        d_idx, r_idx = np.nonzero((gaps & narrow[None, :]).T)
        self.dims = d_idx.astype(np.int64)
        self.deltas = (S[r_idx, d_idx] + S[r_idx + 1, d_idx]) / 2.0
        self.wide = np.flatnonzero(~narrow)
        self._Xs = Xs

    def matches(self, support: np.ndarray) -> bool:
        return np.array_equal(self.support, support)

    def candidates(self, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if self.wide.size == 0:
            return self.dims, self.deltas
        ws = w[self.support]
        extra_dims, extra_deltas = [], []
        for d in self.wide:
            mids = _weighted_midpoints(self._Xs[:, d], ws, self.max_candidates)
            extra_dims.append(np.full(len(mids), d, dtype=np.int64))
            extra_deltas.append(mids)
        dims = np.concatenate([self.dims] + extra_dims)
        deltas = np.concatenate([self.deltas] + extra_deltas)
        order = np.lexsort((deltas, dims))
        return dims[order], deltas[order]


def _check_inputs(X, y, w) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = w.w if isinstance(w, SampleWeights) else np.asarray(w, dtype=np.float64)
    if X.ndim != 2:
        raise BoostingError(f"X must be an N x D matrix, got shape {X.shape}")
    if X.shape[0] < 2:
        raise BoostingError(f"Need at least 2 samples, got {X.shape[0]}")
    if len(y) != X.shape[0] or len(w) != X.shape[0]:
        raise DimensionMismatchError(f"X has {X.shape[0]} rows, y {len(y)}, w {len(w)}")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise BoostingError("Labels must be -1 or +1")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise BoostingError("Weights must be finite and nonnegative")
    if w.sum() <= 0:
        raise BoostingError("All sample weights are zero")
    return X, y, w


def fit_stump(X: np.ndarray, y: np.ndarray, w: Union[SampleWeights, np.ndarray],
              kind: str = SIGMOID, max_candidates: int = MAX_CANDIDATES,
              grid: Optional[ThresholdGrid] = None) -> Stump:
    """Weighted least-squares stump over every candidate (d, delta).

    The constant fit (a = 0, b = weighted mean of y) is always a candidate; a
    candidate must strictly beat the best so far, so ties resolve to the
    constant, then the lowest d, then the lowest delta.
    """
    X, y, w = _check_inputs(X, y, w)
    if kind not in STUMP_KINDS:
        raise BoostingError(f"Unknown stump kind '{kind}'")
    support = w > 0
    if grid is None or not grid.matches(support):
        grid = ThresholdGrid(X, support, max_candidates)
    dims, deltas = grid.candidates(w)

    S_w = w.sum()
    wy = w * y
    S_y = wy.sum()
    best = Stump(d=0, delta=0.0, a=0.0, b=float(S_y / S_w), kind=kind)
    best_err = S_w - best.b * S_y

    Xs, ws, wys = X[support], w[support], wy[support]
    for start in range(0, len(dims), _CHUNK):
        d = dims[start:start + _CHUNK]
        t = deltas[start:start + _CHUNK]
        phi = basis(Xs[:, d], t[None, :], kind)
        S_p = ws @ phi
        S_pp = ws @ (phi * phi)
        S_py = wys @ phi
        det = S_w * S_pp - S_p ** 2
        ok = det > _DET_RTOL * S_w * S_pp
        safe_det = np.where(ok, det, 1.0)
        a = np.where(ok, (S_w * S_py - S_p * S_y) / safe_det, 0.0)
        b = (S_y - a * S_p) / S_w
        err = np.where(ok, S_w - a * S_py - b * S_y, np.inf)
        j = int(np.argmin(err))
        if err[j] < best_err:
            best_err = err[j]
            best = Stump(d=int(d[j]), delta=float(t[j]), a=float(a[j]), b=float(b[j]), kind=kind)
    return best


def fit_stump_indicator(X: np.ndarray, y: np.ndarray, w: Union[SampleWeights, np.ndarray],
                        max_candidates: int = MAX_CANDIDATES) -> Stump:
    """Step-function stump a * 1[x[d] > delta] + b; cross-check oracle"""
    return fit_stump(X, y, w, kind=INDICATOR, max_candidates=max_candidates)


def weighted_squared_error(stump: Stump, X: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    w = w.w if isinstance(w, SampleWeights) else np.asarray(w, dtype=np.float64)
    residual = stump.predict(X) - y
    return float(np.dot(w, residual ** 2) / w.sum())


def update_weights(w: Union[SampleWeights, np.ndarray], f_values: np.ndarray,
                   y: np.ndarray) -> SampleWeights:
    """w_i <- w_i exp(-y_i f(x_i)), renormalized to sum 1"""
    weights = w.w if isinstance(w, SampleWeights) else np.asarray(w, dtype=np.float64)
    f_values = np.asarray(f_values, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not (len(weights) == len(f_values) == len(y)):
        raise DimensionMismatchError(
            f"Weights ({len(weights)}), predictions ({len(f_values)}) and labels ({len(y)}) differ in length"
        )
    with np.errstate(over='ignore'):
        updated = weights * np.exp(-y * f_values)
    total = updated.sum()
    if not np.isfinite(total) or total <= 0:
        raise WeightDivergenceError("Sample weights diverged during the boosting update")
    return SampleWeights(updated / total)


def _descent_factor(f_values: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    """Largest 2^-k keeping sum w exp(-y k f) <= sum w; 0 if none found"""
    factor = 1.0
    total = w.sum()
    for _ in range(_MAX_HALVINGS):
        with np.errstate(over='ignore'):
            ratio = np.dot(w, np.exp(-y * factor * f_values))
        if ratio <= total:
            return factor
        factor /= 2.0
    return 0.0


def train_strong(X: np.ndarray, y: np.ndarray, rounds: int, kind: str = SIGMOID,
                 max_candidates: int = MAX_CANDIDATES,
                 patience: int = ZERO_ERROR_PATIENCE) -> Tuple[StrongClassifier, List[RoundDiagnostics]]:
    """Run up to `rounds` Gentle AdaBoost rounds.

    Stops early once the training misclassification has been zero for
    `patience` consecutive rounds, or when a round can no longer lower the
    exponential loss.
    """
    if rounds < 0:
        raise BoostingError(f"rounds must be >= 0, got {rounds}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, dimension = X.shape
    classifier = StrongClassifier(stumps=[], rounds=rounds, dimension=dimension)
    diagnostics: List[RoundDiagnostics] = []
    if rounds == 0:
        return classifier, diagnostics

    weights = SampleWeights.uniform(n)
    scores = np.zeros(n)
    grid = ThresholdGrid(X, weights.w > 0, max_candidates)
    zero_streak = 0

    for m in range(1, rounds + 1):
        if not grid.matches(weights.w > 0):
            grid = ThresholdGrid(X, weights.w > 0, max_candidates)
        stump = fit_stump(X, y, weights, kind=kind, max_candidates=max_candidates, grid=grid)
        f_values = stump.predict(X)
        factor = _descent_factor(f_values, y, weights.w) if np.any(f_values) else 0.0
        if factor == 0.0:
            logger.debug(f"Round {m}: no stump lowers the exponential loss, stopping")
            break
        if factor < 1.0:
            stump = stump.scaled(factor)
            f_values = stump.predict(X)

        weighted_error = weighted_squared_error(stump, X, y, weights.w)
        scores += f_values
        classifier.stumps.append(stump)
        weights = update_weights(weights, f_values, y)

        train_error = float(np.mean(sign(scores) != y))
        record = RoundDiagnostics(
            round=m, d=stump.d, delta=stump.delta, a=stump.a, b=stump.b,
            weighted_error=weighted_error, train_error=train_error,
            exp_loss=exponential_loss(scores, y), shrinkage=factor,
        )
        diagnostics.append(record)
        logger.debug(
            f"Round {m}: d={stump.d} delta={stump.delta:.4g} a={stump.a:.4g} b={stump.b:.4g} "
            f"werr={weighted_error:.4g} train_err={train_error:.4f}"
        )

        zero_streak = zero_streak + 1 if train_error == 0.0 else 0
        if zero_streak >= patience:
            logger.debug(f"Training error zero for {patience} rounds, stopping at round {m}")
            break

    return classifier, diagnostics


def score(classifier: StrongClassifier, x) -> float:
    """F(x) for one feature vector"""
    values = np.asarray(getattr(x, 'values', x), dtype=np.float64)
    if values.ndim != 1 or len(values) != classifier.dimension:
        raise DimensionMismatchError(
            f"Feature vector of length {values.size} does not match classifier dimension {classifier.dimension}"
        )
    return float(sum(stump.predict(values) for stump in classifier.stumps))


def write_round_diagnostics(diagnostics: Sequence[RoundDiagnostics], path: Union[str, Path]) -> Path:
    header = ['round', 'd', 'delta', 'a', 'b', 'weighted_error', 'train_error', 'exp_loss', 'shrinkage']
    return write_csv(path, header, ([asdict(r)[k] for k in header] for r in diagnostics))
