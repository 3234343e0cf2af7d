"""Versioned little-endian model file.

    magic     8 bytes   b"DPBOOST1"
    version   <I
    sections  <I        number of sections that follow
    section:  tag 4s | length <Q | payload | crc32(payload) <I

Sections, in order: one META (JSON: config, class names, input shape), then per
class a CLSS (JSON: class id, depth, truncated flag) followed by one LAYR per
layer. A LAYR payload is `<I json_len | JSON | kernels | bin edges | stumps`,
the arrays stored as <f8: kernels M x k x k, edges C+1, stumps n x (d, delta, a, b).
JSON is written with sorted keys, so identical models give identical bytes.
"""
import json
import os
import struct
import zlib
from pathlib import Path
from typing import Iterator, List, Tuple, Union

import numpy as np

from deepboost.boosting import Stump, StrongClassifier
from deepboost.deepmodel import MODEL_FORMAT_VERSION, ClassModel, DeepBoostModel, ModelConfig
from deepboost.dictlearn import LayerModel, ObjectiveRecord
from deepboost.features import FeatureLayout
from deepboost.filters import AnalysisDictionary, Filter
from utils.exceptions import (
    BadMagicError,
    ChecksumError,
    DeepBoostError,
    ModelFormatError,
    TruncatedModelError,
    VersionMismatchError,
)
from utils.logger import Logger
from utils.utils import ensure_dir, format_size

logger = Logger.get_logger(__name__)

MAGIC = b"DPBOOST1"
_HEADER = struct.Struct('<8sII')
_SECTION = struct.Struct('<4sQ')
_CRC = struct.Struct('<I')
_F8 = np.dtype('<f8')


def _json_bytes(data: dict) -> bytes:
    return json.dumps(data, sort_keys=True, separators=(',', ':')).encode('utf-8')


def _section(tag: bytes, payload: bytes) -> bytes:
    return _SECTION.pack(tag, len(payload)) + payload + _CRC.pack(zlib.crc32(payload))


def _layer_payload(layer: LayerModel) -> bytes:
    G = layer.dictionary
    clf = layer.classifier
    meta = {
        'layer': G.layer,
        'class_id': G.class_id,
        'ids': list(G.ids),
        'lineage': [list(f.lineage) if f.lineage else None for f in G.filters],
        'kernel_size': G.kernel_size,
        'levels': list(layer.layout.levels),
        'bins': layer.layout.C,
        'selected': list(layer.selected),
        'rounds': clf.rounds,
        'dimension': clf.dimension,
        'kinds': [s.kind for s in clf.stumps],
        'trace': [list(r) for r in layer.trace],
    }
    header = _json_bytes(meta)
    stumps = np.array([[s.d, s.delta, s.a, s.b] for s in clf.stumps], dtype=_F8).reshape(-1, 4)
    return b''.join([
        struct.pack('<I', len(header)),
        header,
        G.kernels.astype(_F8).tobytes(),
        layer.layout.bin_edges.astype(_F8).tobytes(),
        stumps.tobytes(),
    ])


def model_bytes(model: DeepBoostModel) -> bytes:
    sections = [_section(b'META', _json_bytes({
        'config': model.config.to_dict(),
        'class_names': list(model.class_names),
        'image_shape': list(model.image_shape),
    }))]
    for cm in model.class_models:
        sections.append(_section(b'CLSS', _json_bytes({
            'class_id': cm.class_id, 'depth': cm.depth, 'truncated': cm.truncated,
        })))
        sections.extend(_section(b'LAYR', _layer_payload(layer)) for layer in cm.layers)
    return _HEADER.pack(MAGIC, model.version, len(sections)) + b''.join(sections)


def save_model(model: DeepBoostModel, path: Union[str, Path]) -> Path:
    """Write the model file atomically"""
    path = Path(path)
    ensure_dir(path.parent)
    data = model_bytes(model)
    tmp = path.with_name(path.name + '.tmp')
    tmp.write_bytes(data)
    os.replace(tmp, path)
    logger.info(f"Saved model with {model.num_classes} classes to {path} ({format_size(len(data))})")
    return path


def _read_sections(data: bytes) -> Iterator[Tuple[bytes, bytes]]:
    if len(data) < _HEADER.size:
        raise TruncatedModelError("Model file is shorter than its header")
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagicError(f"Bad magic header {magic!r}, expected {MAGIC!r}")
    if version != MODEL_FORMAT_VERSION:
        raise VersionMismatchError(
            f"Model format version {version} is not supported (expected {MODEL_FORMAT_VERSION})"
        )
    offset = _HEADER.size
    for n in range(count):
        if offset + _SECTION.size > len(data):
            raise TruncatedModelError(f"Section {n} header is truncated")
        tag, length = _SECTION.unpack_from(data, offset)
        offset += _SECTION.size
        end = offset + length
        if end + _CRC.size > len(data):
            raise TruncatedModelError(f"Section {n} ({tag!r}) is truncated")
        payload = data[offset:end]
        (crc,) = _CRC.unpack_from(data, end)
        if crc != zlib.crc32(payload):
            raise ChecksumError(f"Section {n} ({tag!r}) failed its checksum")
        offset = end + _CRC.size
        yield tag, payload
    if offset != len(data):
        raise ModelFormatError(f"{len(data) - offset} trailing bytes after the last section")


def _take(payload: bytes, offset: int, count: int) -> Tuple[np.ndarray, int]:
    end = offset + count * _F8.itemsize
    if end > len(payload):
        raise TruncatedModelError("Layer section arrays are truncated")
    return np.frombuffer(payload, dtype=_F8, count=count, offset=offset).astype(np.float64), end


def _parse_layer(payload: bytes) -> LayerModel:
    (header_len,) = struct.unpack_from('<I', payload, 0)
    meta = json.loads(payload[4:4 + header_len].decode('utf-8'))
    offset = 4 + header_len
    k = meta['kernel_size']
    ids = meta['ids']
    kernels, offset = _take(payload, offset, len(ids) * k * k)
    edges, offset = _take(payload, offset, meta['bins'] + 1)
    stump_values, offset = _take(payload, offset, len(meta['kinds']) * 4)

    filters = tuple(
        Filter(kernel=kernel, id=fid, layer=meta['layer'],
               lineage=tuple(lineage) if lineage else None)
        for kernel, fid, lineage in zip(kernels.reshape(-1, k, k), ids, meta['lineage'])
    )
    dictionary = AnalysisDictionary(filters=filters, layer=meta['layer'], class_id=meta['class_id'])
    layout = FeatureLayout(M=len(ids), bin_edges=edges, levels=tuple(meta['levels']), filter_ids=tuple(ids))
    stumps = [
        Stump(d=int(row[0]), delta=float(row[1]), a=float(row[2]), b=float(row[3]), kind=kind)
        for row, kind in zip(stump_values.reshape(-1, 4), meta['kinds'])
    ]
    classifier = StrongClassifier(stumps=stumps, rounds=meta['rounds'], dimension=meta['dimension'])
    return LayerModel(
        dictionary=dictionary,
        classifier=classifier,
        layout=layout,
        selected=tuple(meta['selected']),
        trace=[ObjectiveRecord(*record) for record in meta['trace']],
    )


def _build_model(sections: List[Tuple[bytes, bytes]]) -> DeepBoostModel:
    if not sections or sections[0][0] != b'META':
        raise ModelFormatError("Model file does not start with a META section")
    meta = json.loads(sections[0][1].decode('utf-8'))

    class_models: List[ClassModel] = []
    rest = sections[1:]
    i = 0
    while i < len(rest):
        tag, payload = rest[i]
        if tag != b'CLSS':
            raise ModelFormatError(f"Expected a CLSS section, found {tag!r}")
        info = json.loads(payload.decode('utf-8'))
        layer_sections = rest[i + 1:i + 1 + info['depth']]
        if len(layer_sections) != info['depth'] or any(t != b'LAYR' for t, _ in layer_sections):
            raise ModelFormatError(f"Class {info['class_id']} is missing layer sections")
        class_models.append(ClassModel(
            class_id=info['class_id'],
            layers=[_parse_layer(p) for _, p in layer_sections],
            truncated=info['truncated'],
        ))
        i += 1 + info['depth']

    return DeepBoostModel(
        class_models=class_models,
        config=ModelConfig.from_dict(meta['config']),
        class_names=tuple(meta['class_names']),
        image_shape=tuple(meta['image_shape']),
    )


def parse_model(data: bytes) -> DeepBoostModel:
    sections = list(_read_sections(data))
    try:
        return _build_model(sections)
    except ModelFormatError:
        raise
    except (ValueError, KeyError, TypeError, IndexError, AttributeError,
            struct.error, DeepBoostError) as e:
        logger.debug(f"Model content rejected: {type(e).__name__}: {e}")
        raise ModelFormatError(f"Malformed model file: {type(e).__name__}: {e}") from e


def load_model(path: Union[str, Path]) -> DeepBoostModel:
    path = Path(path)
    if not path.is_file():
        raise ModelFormatError(f"Model file not found: {path}")
    model = parse_model(path.read_bytes())
    logger.info(f"Loaded model with {model.num_classes} classes from {path}")
    return model
