import struct

import numpy as np
import pytest
from numpy.testing import assert_allclose

from deepboost.boosting import INDICATOR, StrongClassifier, Stump
from deepboost.deepmodel import (
    MODEL_FORMAT_VERSION,
    ClassModel,
    DeepBoostModel,
    ModelConfig,
    predict_batch,
    train_multiclass,
)
from deepboost.dictlearn import LayerModel
from deepboost.features import FeatureLayout
from deepboost.filters import AnalysisDictionary, GaborParams, compose_all, make_gabor_bank
from deepboost.imagekit import Image
from deepboost.persistence import (
    _HEADER,
    MAGIC,
    _json_bytes,
    _read_sections,
    _section,
    load_model,
    model_bytes,
    parse_model,
    save_model,
)
from utils.exceptions import (
    BadMagicError,
    ChecksumError,
    ModelFormatError,
    TruncatedModelError,
    VersionMismatchError,
)


@pytest.fixture
def trained(bars_train, fast_config):
    return train_multiclass(bars_train, fast_config)


def test_round_trip_keeps_predictions(trained, bars_test, tmp_path):
    path = save_model(trained, tmp_path / "nested" / "model.dpb")
    assert path.is_file()
    assert not path.with_name("model.dpb.tmp").exists()
    restored = load_model(path)
    assert restored.class_names == trained.class_names
    assert restored.image_shape == trained.image_shape
    assert restored.config == trained.config
    assert_allclose(predict_batch(restored, bars_test.images), predict_batch(trained, bars_test.images))


def test_reencoding_gives_identical_bytes(trained):
    data = model_bytes(trained)
    assert data.startswith(MAGIC)
    assert model_bytes(parse_model(data)) == data


def test_bad_magic(trained):
    data = bytearray(model_bytes(trained))
    data[0] ^= 0xFF
    with pytest.raises(BadMagicError):
        parse_model(bytes(data))


def test_unknown_version(trained):
    data = bytearray(model_bytes(trained))
    struct.pack_into('<I', data, 8, MODEL_FORMAT_VERSION + 1)
    with pytest.raises(VersionMismatchError):
        parse_model(bytes(data))


@pytest.mark.parametrize("keep", [4, 20, -5])
def test_truncated_file(trained, keep):
    data = model_bytes(trained)
    with pytest.raises(TruncatedModelError):
        parse_model(data[:keep])


def test_flipped_payload_byte(trained):
    data = bytearray(model_bytes(trained))
    # first byte of the META payload: 16-byte header, then 12-byte section header
    data[28] ^= 0x01
    with pytest.raises(ChecksumError):
        parse_model(bytes(data))


def test_trailing_bytes_rejected(trained):
    with pytest.raises(ModelFormatError):
        parse_model(model_bytes(trained) + b"\x00")


def test_missing_file(tmp_path):
    with pytest.raises(ModelFormatError, match="not found"):
        load_model(tmp_path / "absent.dpb")


def test_all_format_errors_share_a_base():
    for cls in (BadMagicError, VersionMismatchError, TruncatedModelError, ChecksumError):
        assert issubclass(cls, ModelFormatError)


def _framed(*sections) -> bytes:
    body = b''.join(_section(tag, payload) for tag, payload in sections)
    return _HEADER.pack(MAGIC, MODEL_FORMAT_VERSION, len(sections)) + body


@pytest.mark.parametrize("meta", [
    b"{not json",
    b'{"class_names":["a"],"image_shape":[8,8]}',
    b'{"config":{},"class_names":["a"],"image_shape":[8,8]}',
    b"\xff\xfe",
])
def test_malformed_meta_is_a_format_error(meta):
    with pytest.raises(ModelFormatError, match="Malformed"):
        parse_model(_framed((b'META', meta)))


def test_malformed_class_section_is_a_format_error(trained):
    meta = _json_bytes({
        'config': trained.config.to_dict(),
        'class_names': list(trained.class_names),
        'image_shape': list(trained.image_shape),
    })
    with pytest.raises(ModelFormatError):
        parse_model(_framed((b'META', meta), (b'CLSS', b'{"class_id":0}')))


def test_malformed_layer_header_is_a_format_error(trained):
    data = model_bytes(trained)
    sections = list(_read_sections(data))
    tag, payload = sections[2]
    assert tag == b'LAYR'
    sections[2] = (tag, payload[:4] + b'#' + payload[5:])
    with pytest.raises(ModelFormatError):
        parse_model(_framed(*sections))


def _two_layer_class(class_id):
    bank = make_gabor_bank(GaborParams(orientations=4), class_id=class_id)
    layout = FeatureLayout(M=4, bin_edges=np.linspace(0.0, 3.0, 4), filter_ids=bank.ids)
    first = LayerModel(
        dictionary=bank,
        classifier=StrongClassifier(
            stumps=[Stump(d=layout.encode(0, 0, 0), delta=0.5 * class_id, a=1.0, b=-0.5),
                    Stump(d=layout.encode(2, 4, 2), delta=1.0, a=-0.25, b=0.1)],
            rounds=2, dimension=layout.D),
        layout=layout,
        selected=(0, 2),
    )
    composed = compose_all([bank.get(0), bank.get(2)])
    second_dict = AnalysisDictionary(filters=tuple(composed), layer=2, class_id=class_id)
    second_layout = FeatureLayout(M=1, bin_edges=np.linspace(0.0, 3.0, 4), filter_ids=second_dict.ids)
    second = LayerModel(
        dictionary=second_dict,
        classifier=StrongClassifier(
            stumps=[Stump(d=second_layout.encode(0, 1, 2), delta=0.2, a=2.0, b=-1.0, kind=INDICATOR)],
            rounds=1, dimension=second_layout.D),
        layout=second_layout,
        selected=(0,),
    )
    return ClassModel(class_id=class_id, layers=[first, second])


def test_ten_class_two_layer_model_round_trip(rng):
    config = ModelConfig(layers=2, rounds=(2, 1), bins=3, gabor=GaborParams(orientations=4))
    model = DeepBoostModel(
        class_models=[_two_layer_class(k) for k in range(1, 11)],
        config=config,
        class_names=tuple(f"class{k}" for k in range(10)),
        image_shape=(16, 16),
    )
    data = model_bytes(model)
    restored = parse_model(data)
    assert restored.num_classes == 10
    assert model_bytes(restored) == data
    for cm in restored.class_models:
        assert cm.depth == 2
        (f,) = cm.layers[1].dictionary
        assert f.lineage == (0, 2)
        assert cm.layers[1].classifier.stumps[0].kind == INDICATOR
    images = [Image(rng.random((16, 16))) for _ in range(4)]
    assert_allclose(predict_batch(restored, images), predict_batch(model, images))
