import json
import re
import struct
import zlib

import numpy as np
import pytest

from cli import create_parser, parse_args
from cli.settings import SEED_ENV, build_run_config, parse_bool, parse_rounds, read_config_file
from deepboost.deepmodel import MODEL_FORMAT_VERSION
from deepboost.persistence import MAGIC
from main import EXIT_DATA, EXIT_OK, EXIT_TRAINING, EXIT_USAGE, exit_code_for, main
from utils.exceptions import (
    ChecksumError,
    ConfigError,
    EmptyClassError,
    FilterCompositionError,
    ProcessError,
    WeightDivergenceError,
)
from utils.utils_export import save_gray_png

TINY = ['--n-per-class', '4', '--target-size', '16', '--rounds', '4', '--bins', '6',
        '--orientations', '4', '--outer-iters', '1', '--grad-steps', '1', '--seed', '3']


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(['train', *TINY, '--output-dir', str(out)]) == EXIT_OK
    return out


def test_rounds_and_bool_parsing():
    assert parse_rounds("50,30, 30") == (50, 30, 30)
    assert parse_rounds(7) == (7,)
    with pytest.raises(ConfigError):
        parse_rounds("5,x")
    assert parse_bool("Yes") is True
    assert parse_bool("off") is False
    with pytest.raises(ConfigError):
        parse_bool("maybe")


def test_defaults_validate_and_map_to_model_config(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    config = build_run_config({})
    assert config.seed == 0
    assert config.rounds == (50,)
    model_config = config.to_model_config()
    assert model_config.gabor.orientations == 16
    assert model_config.threshold == 0.7


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv(SEED_ENV, "42")
    assert build_run_config({}).seed == 42
    assert build_run_config({'seed': 5}).seed == 5
    monkeypatch.setenv(SEED_ENV, "abc")
    with pytest.raises(ConfigError, match="seed"):
        build_run_config({})


@pytest.mark.parametrize("field, value", [
    ('bins', 0), ('layers', 0), ('tol', 1.5), ('dataset', 'imagenet'), ('jobs', 0), ('distractor', 2.0),
])
def test_validation_names_the_field(field, value):
    with pytest.raises(ConfigError, match=field):
        build_run_config({field: value, 'seed': 1})


def test_dir_dataset_needs_a_path():
    with pytest.raises(ConfigError, match="data_path"):
        build_run_config({'dataset': 'dir', 'seed': 1})


def test_config_file_sits_between_defaults_and_flags(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("layers = 2\nrounds = 30,20  # per layer\nno_such = 1\n")
    with pytest.raises(ConfigError, match="no_such"):
        read_config_file(path)

    path.write_text("layers = 2\nrounds = 30,20  # per layer\ncompress = false\n")
    assert read_config_file(path) == {'layers': 2, 'rounds': (30, 20), 'compress': False}
    args = parse_args(['train', '--config', str(path), '--layers', '3'])
    assert args.layers == 3
    assert args.rounds == (30, 20)
    config = build_run_config(vars(args), args.config_file)
    assert config.layers == 3
    assert config.rounds == (30, 20)
    assert config.compress is False


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        read_config_file(tmp_path / "absent.cfg")


def test_help_lists_every_model_option():
    _, commands = create_parser()
    text = commands['train'].format_help()
    for option in ('--layers', '--rounds', '--lam', '--eta', '--bins', '--threshold', '--no-compress',
                   '--raw-compose', '--seed', '--jobs', '--output-dir', '--config'):
        assert option in text
    assert set(commands) == {'train', 'evaluate', 'predict', 'synth', 'inspect-filters',
                             'render-template', 'crossval'}


def test_usage_errors_exit_one(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(['train', '--bogus']) == EXIT_USAGE
    assert main(['train', '--layers', '0', '--output-dir', str(tmp_path)]) == EXIT_USAGE
    assert "error:" in capsys.readouterr().err


def test_exit_code_mapping():
    assert exit_code_for(ConfigError("x")) == EXIT_USAGE
    assert exit_code_for(EmptyClassError("x")) == EXIT_DATA
    assert exit_code_for(ChecksumError("x")) == EXIT_DATA
    assert exit_code_for(FileNotFoundError("x")) == EXIT_DATA
    assert exit_code_for(WeightDivergenceError("x")) == EXIT_TRAINING
    assert exit_code_for(FilterCompositionError("x")) == EXIT_TRAINING
    assert exit_code_for(ProcessError("x")) == EXIT_TRAINING
    assert exit_code_for(RuntimeError("x")) == EXIT_TRAINING


def test_missing_model_exits_two(tmp_path, capsys):
    missing = tmp_path / "nothing.dpb"
    assert main(['evaluate', '--model', str(missing), '--output-dir', str(tmp_path)]) == EXIT_DATA
    assert str(missing) in capsys.readouterr().out


def test_train_writes_artifacts(trained_dir):
    assert (trained_dir / 'model.dpb').is_file()
    assert (trained_dir / 'reports' / 'objective_trace.csv').is_file()
    assert (trained_dir / 'reports' / 'layer_times.csv').is_file()
    assert (trained_dir / 'logs' / 'deepboost.log').is_file()
    assert sorted(p.name for p in (trained_dir / 'filters').iterdir()) == [
        'class1_horizontal_layer1.png', 'class2_vertical_layer1.png']
    assert len(list((trained_dir / 'templates').iterdir())) == 2


def test_training_through_main_is_deterministic(trained_dir, tmp_path):
    assert main(['train', *TINY, '--output-dir', str(tmp_path)]) == EXIT_OK
    assert (tmp_path / 'model.dpb').read_bytes() == (trained_dir / 'model.dpb').read_bytes()


def test_evaluate_saved_model(trained_dir, tmp_path, capsys):
    model = str(trained_dir / 'model.dpb')
    code = main(['evaluate', '--model', model, '--n-per-class', '4', '--target-size', '16',
                 '--seed', '3', '--output-dir', str(tmp_path)])
    assert code == EXIT_OK
    assert re.search(r"^accuracy=\d\.\d{4}$", capsys.readouterr().out, re.MULTILINE)
    report = json.loads((tmp_path / 'reports' / 'eval_report.json').read_text())
    assert report['class_names'] == ['horizontal', 'vertical']
    assert np.sum(report['confusion']) == 8
    assert (tmp_path / 'reports' / 'layer_accuracy.csv').is_file()


def test_evaluate_rejects_other_image_size(trained_dir, tmp_path, capsys):
    code = main(['evaluate', '--model', str(trained_dir / 'model.dpb'), '--n-per-class', '2',
                 '--target-size', '20', '--output-dir', str(tmp_path)])
    assert code == EXIT_DATA
    out = capsys.readouterr().out
    assert "20x20" in out and "16x16" in out


def test_predict_one_image(trained_dir, tmp_path, capsys):
    image = np.zeros((16, 16))
    image[5:8, :] = 0.8
    path = save_gray_png(image, tmp_path / "bar.png")
    code = main(['predict', '--model', str(trained_dir / 'model.dpb'), '--image', str(path),
                 '--output-dir', str(tmp_path)])
    assert code == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert any(re.fullmatch(r"[12] (horizontal|vertical)", line) for line in lines)
    assert any(len(line.split()) == 2 and all(re.fullmatch(r"-?\d+\.\d{6}", s) for s in line.split())
               for line in lines)


def test_predict_depth_beyond_model(trained_dir, tmp_path):
    path = save_gray_png(np.zeros((16, 16)), tmp_path / "blank.png")
    code = main(['predict', '--model', str(trained_dir / 'model.dpb'), '--image', str(path),
                 '--depth', '2', '--output-dir', str(tmp_path)])
    assert code == EXIT_USAGE


def test_predict_with_malformed_model_exits_two(tmp_path, capsys):
    meta = b"{not json"
    body = struct.pack('<4sQ', b'META', len(meta)) + meta + struct.pack('<I', zlib.crc32(meta))
    model = tmp_path / "broken.dpb"
    model.write_bytes(struct.pack('<8sII', MAGIC, MODEL_FORMAT_VERSION, 1) + body)
    path = save_gray_png(np.zeros((16, 16)), tmp_path / "blank.png")
    code = main(['predict', '--model', str(model), '--image', str(path), '--output-dir', str(tmp_path)])
    assert code == EXIT_DATA
    assert "Malformed model file" in capsys.readouterr().out


def test_inspect_and_render(trained_dir, tmp_path):
    model = str(trained_dir / 'model.dpb')
    assert main(['inspect-filters', '--model', model, '--output-dir', str(tmp_path)]) == EXIT_OK
    assert (tmp_path / 'filters' / 'class1_horizontal_layer1_distances.png').is_file()
    assert main(['render-template', '--model', model, '--n-per-class', '2', '--target-size', '16',
                 '--canvas-size', '24', '--output-dir', str(tmp_path)]) == EXIT_OK
    assert len(list((tmp_path / 'templates').glob('*.png'))) == 2


def test_synth_command_writes_class_folders(tmp_path):
    assert main(['synth', '--n-per-class', '3', '--target-size', '12', '--seed', '1',
                 '--output-dir', str(tmp_path)]) == EXIT_OK
    root = tmp_path / 'synth-bars'
    assert sorted(p.name for p in root.iterdir()) == ['horizontal', 'vertical']
    assert len(list((root / 'vertical').glob('*.png'))) == 3


@pytest.mark.slow
def test_crossval_reports_every_fold(tmp_path, capsys):
    assert main(['crossval', *TINY, '--folds', '2', '--output-dir', str(tmp_path)]) == EXIT_OK
    summary = json.loads((tmp_path / 'reports' / 'crossval.json').read_text())
    assert summary['folds'] == 2
    assert 0.0 <= summary['accuracy_mean'] <= 1.0
    assert "accuracy=" in capsys.readouterr().out
