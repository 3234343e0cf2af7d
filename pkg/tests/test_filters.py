import numpy as np
import pytest
from numpy.testing import assert_allclose

from deepboost.filters import (
    AnalysisDictionary,
    Filter,
    GaborParams,
    compose,
    compose_all,
    compress,
    distance_matrix,
    make_gabor_bank,
    normalized_responses,
)
from deepboost.imagekit import Image
from deepboost.synth import make_bars
from utils.exceptions import FilterCompositionError, FilterError


def test_default_bank_has_sixteen_unit_zero_mean_filters():
    bank = make_gabor_bank()
    assert len(bank) == 16
    assert bank.kernel_size == 5
    for f in bank:
        assert f.kernel.mean() == pytest.approx(0.0, abs=1e-12)
        assert np.linalg.norm(f.kernel) == pytest.approx(1.0)


def test_bank_quarter_turn_symmetry():
    bank = make_gabor_bank(GaborParams(orientations=8))
    kernels = bank.kernels
    for a in range(4):
        assert_allclose(np.abs(kernels[a + 4]), np.abs(np.rot90(kernels[a])), atol=1e-12)


def test_normalized_energy_is_one(rng):
    bank = make_gabor_bank()
    for _ in range(5):
        result = normalized_responses(Image(rng.random((20, 20))), bank)
        stacked = np.stack([m.values for m in result.maps])
        assert not result.degenerate
        assert np.mean(stacked ** 2) == pytest.approx(1.0, abs=1e-8)


def test_constant_image_is_degenerate():
    result = normalized_responses(Image(np.full((12, 12), 0.3)), make_gabor_bank())
    assert result.degenerate
    assert all(not m.values.any() for m in result.maps)


def test_normalization_ignores_affine_intensity(rng):
    bank = make_gabor_bank()
    values = 0.25 + 0.5 * rng.random((16, 16))
    brighter = 2.0 * (values - values.mean()) + values.mean()
    base = np.stack([m.values for m in normalized_responses(values, bank).maps])
    other = np.stack([m.values for m in normalized_responses(brighter, bank).maps])
    assert_allclose(other, base, rtol=1e-6, atol=1e-8)


def test_horizontal_bars_excite_horizontal_filter():
    dataset = make_bars(10, seed=7)
    bank = make_gabor_bank()
    horizontal = [img for img, label in zip(dataset.images, dataset.labels) if label == 1]
    energy = np.zeros(len(bank))
    for img in horizontal:
        energy += [m.values.mean() for m in normalized_responses(img, bank).maps]
    strongest = int(np.argmax(energy))
    assert min(strongest, len(bank) - strongest) <= 1


def test_compose_sigmoid_values():
    zero = Filter(np.zeros((2, 2)), id=0)
    other = Filter(np.array([[2.0, 0.0], [0.0, 0.0]]), id=1)
    raw = compose(zero, Filter(np.zeros((2, 2)), id=1), normalize=False)
    assert_allclose(raw.kernel, 0.5)
    raw = compose(zero, other, new_id=7, normalize=False)
    assert raw.kernel[0, 0] == pytest.approx(0.8808, abs=1e-4)
    assert raw.kernel[0, 1] == pytest.approx(0.5)
    assert raw.layer == 2
    assert raw.lineage == (0, 1)
    assert raw.id == 7


def test_compose_rejects_mixed_layers_and_self():
    a = Filter(np.zeros((3, 3)), id=0, layer=1)
    with pytest.raises(FilterCompositionError):
        compose(a, Filter(np.zeros((3, 3)), id=1, layer=2))
    with pytest.raises(FilterCompositionError):
        compose(a, a)


def test_normalized_composition_is_unit():
    bank = make_gabor_bank()
    composed = compose(bank.get(0), bank.get(5))
    assert np.linalg.norm(composed.kernel) == pytest.approx(1.0)
    assert composed.kernel.mean() == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("m, expected", [(16, 120), (5, 10), (2, 1)])
def test_compose_all_counts(m, expected):
    bank = make_gabor_bank(GaborParams(orientations=m))
    composed = compose_all(list(bank))
    assert len(composed) == expected
    assert [f.id for f in composed] == list(range(expected))
    assert len({f.lineage for f in composed}) == expected


def test_compose_all_needs_two():
    with pytest.raises(FilterCompositionError):
        compose_all([Filter(np.zeros((3, 3)), id=0)])


def test_compress_duplicates_keeps_one():
    kernel = np.eye(3) / np.sqrt(3)
    kept = compress([Filter(kernel, id=0), Filter(kernel, id=1)], 0.7, np.random.default_rng(0))
    assert len(kept) == 1


def test_compress_orthogonal_keeps_both():
    a = np.zeros((2, 2))
    a[0, 0] = 1.0
    b = np.zeros((2, 2))
    b[1, 1] = 1.0
    filters = [Filter(a, id=0), Filter(b, id=1)]
    assert distance_matrix(filters)[0, 1] == pytest.approx(np.sqrt(2))
    assert len(compress(filters, 0.7, np.random.default_rng(0))) == 2


def test_compress_empty_and_negative_threshold():
    assert compress([], 0.7) == []
    with pytest.raises(FilterError):
        compress([Filter(np.zeros((3, 3)), id=0)], -0.1)


def test_compressed_set_respects_threshold():
    composed = compose_all(list(make_gabor_bank()))
    kept = compress(composed, 0.7, np.random.default_rng(5))
    assert 1 <= len(kept) <= 120
    distances = distance_matrix(kept)
    off_diagonal = distances[~np.eye(len(kept), dtype=bool)]
    assert np.all(off_diagonal >= 0.7)


def test_compress_is_reproducible():
    composed = compose_all(list(make_gabor_bank()))
    first = [f.id for f in compress(composed, 0.7, np.random.default_rng(11))]
    second = [f.id for f in compress(list(reversed(composed)), 0.7, np.random.default_rng(11))]
    assert first == second


def test_dictionary_rejects_duplicate_ids_and_mixed_sizes():
    with pytest.raises(FilterError):
        AnalysisDictionary(filters=(Filter(np.zeros((3, 3)), id=0), Filter(np.zeros((3, 3)), id=0)))
    with pytest.raises(FilterError):
        AnalysisDictionary(filters=(Filter(np.zeros((3, 3)), id=0), Filter(np.zeros((5, 5)), id=1)))


def test_zero_threshold_keeps_everything():
    composed = compose_all(list(make_gabor_bank(GaborParams(orientations=6))))
    shuffled = list(reversed(composed))
    kept = compress(shuffled, 0.0, np.random.default_rng(3))
    assert [f.id for f in kept] == sorted(f.id for f in composed)
    for f in kept:
        assert f is next(g for g in composed if g.id == f.id)
