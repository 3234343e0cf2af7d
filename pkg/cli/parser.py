import argparse
from typing import Dict, List, Optional, Tuple

from cli.settings import DATASET_KINDS, RunConfig, parse_rounds, read_config_file
from deepboost.synth import GENERATORS
from utils.exceptions import ConfigError

_DEFAULTS = RunConfig()


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors as ConfigError instead of exiting"""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _add_output_options(parser: argparse.ArgumentParser):
    parser.add_argument('--output-dir', dest='output_dir', default=_DEFAULTS.output_dir,
                        help="directory receiving every artifact and the logs")
    parser.add_argument('--config', dest='config_file', default=None,
                        help="flat 'key = value' settings file; flags override it")


def _add_data_options(parser: argparse.ArgumentParser):
    group = parser.add_argument_group('dataset')
    group.add_argument('--dataset', choices=DATASET_KINDS, default=_DEFAULTS.dataset,
                       help="dataset kind: image directory, CIFAR-10 binary batches or generated bars")
    group.add_argument('--data-path', dest='data_path', default=None,
                       help="image directory or CIFAR-10 batch file/directory")
    group.add_argument('--target-size', dest='target_size', type=int, default=_DEFAULTS.target_size,
                       help="side length images are resized to")
    group.add_argument('--n-per-class', dest='n_per_class', type=int, default=_DEFAULTS.n_per_class,
                       help="images per class for generated datasets")
    group.add_argument('--data-seed', dest='data_seed', type=int, default=None,
                       help="seed of the generated dataset (defaults to --seed)")
    group.add_argument('--distractor', type=float, default=_DEFAULTS.distractor,
                       help="fraction of generated images overlaid with label-free texture")


def _add_model_options(parser: argparse.ArgumentParser):
    group = parser.add_argument_group('model')
    group.add_argument('--layers', type=int, default=_DEFAULTS.layers, help="number of layers L")
    group.add_argument('--rounds', type=parse_rounds, default='50',
                       help="boosting rounds per layer, e.g. 50 or 50,30")
    group.add_argument('--lam', type=float, default=_DEFAULTS.lam, help="regularizer weight lambda")
    group.add_argument('--eta', type=float, default=_DEFAULTS.eta, help="initial dictionary step size")
    group.add_argument('--grad-steps', dest='grad_steps', type=int, default=_DEFAULTS.grad_steps,
                       help="gradient steps per dictionary update")
    group.add_argument('--outer-iters', dest='outer_iters', type=int, default=_DEFAULTS.outer_iters,
                       help="maximum boost/update alternations per layer")
    group.add_argument('--tol', type=float, default=_DEFAULTS.tol,
                       help="relative objective decrease that counts as converged")
    group.add_argument('--bins', type=int, default=_DEFAULTS.bins, help="histogram bins C")
    group.add_argument('--threshold', type=float, default=_DEFAULTS.threshold,
                       help="compression distance threshold")
    group.add_argument('--orientations', type=int, default=_DEFAULTS.orientations,
                       help="Gabor orientations in the first layer")
    group.add_argument('--no-compress', dest='compress', action='store_false',
                       help="keep every composed filter")
    group.add_argument('--raw-compose', dest='raw_compose', action='store_true',
                       help="skip re-normalizing composed filters")
    group.add_argument('--max-candidates', dest='max_candidates', type=int,
                       default=_DEFAULTS.max_candidates, help="stump thresholds tried per dimension")
    group.add_argument('--seed', type=int, default=None,
                       help="random seed (falls back to DEEPBOOST_SEED, then 0)")
    group.add_argument('--jobs', type=int, default=_DEFAULTS.jobs,
                       help="worker processes for per-class training")


def create_parser() -> Tuple[argparse.ArgumentParser, Dict[str, argparse.ArgumentParser]]:
    """Top-level parser and its sub-command parsers"""
    formatter = argparse.ArgumentDefaultsHelpFormatter
    parser = CliParser(
        prog='deepboost',
        description="Layer-wise boosting with learned analysis dictionaries for image classification",
        formatter_class=formatter,
    )
    sub = parser.add_subparsers(dest='command', parser_class=CliParser)
    commands: Dict[str, argparse.ArgumentParser] = {}

    train = sub.add_parser('train', help="train a model", formatter_class=formatter)
    _add_data_options(train)
    _add_model_options(train)
    _add_output_options(train)
    commands['train'] = train

    evaluate = sub.add_parser('evaluate', help="evaluate a saved model", formatter_class=formatter)
    evaluate.add_argument('--model', required=True, help="model file")
    evaluate.add_argument('--max-level', dest='max_level', type=int, default=10,
                          help="largest error level of the cumulative score curve")
    _add_data_options(evaluate)
    evaluate.add_argument('--seed', type=int, default=None, help="seed for generated datasets")
    _add_output_options(evaluate)
    commands['evaluate'] = evaluate

    predict = sub.add_parser('predict', help="classify one image file", formatter_class=formatter)
    predict.add_argument('--model', required=True, help="model file")
    predict.add_argument('--image', required=True, help="image file")
    predict.add_argument('--depth', type=int, default=None, help="use only layers 1..depth")
    _add_output_options(predict)
    commands['predict'] = predict

    synth = sub.add_parser('synth', help="write a generated dataset", formatter_class=formatter)
    synth.add_argument('--name', default='synth-bars', choices=sorted(GENERATORS), help="generator")
    synth.add_argument('--n-per-class', dest='n_per_class', type=int, default=_DEFAULTS.n_per_class,
                       help="images per class")
    synth.add_argument('--seed', type=int, default=None, help="generator seed")
    synth.add_argument('--target-size', dest='target_size', type=int, default=_DEFAULTS.target_size,
                       help="image side length")
    synth.add_argument('--distractor', type=float, default=_DEFAULTS.distractor,
                       help="fraction of images overlaid with label-free texture")
    _add_output_options(synth)
    commands['synth'] = synth

    inspect = sub.add_parser('inspect-filters', help="export filter grids and distance heatmaps",
                             formatter_class=formatter)
    inspect.add_argument('--model', required=True, help="model file")
    _add_output_options(inspect)
    commands['inspect-filters'] = inspect

    render = sub.add_parser('render-template', help="render per-layer class templates",
                            formatter_class=formatter)
    render.add_argument('--model', required=True, help="model file")
    render.add_argument('--canvas-size', dest='canvas_size', type=int, default=None,
                        help="template side length (defaults to the model input size)")
    _add_data_options(render)
    render.add_argument('--seed', type=int, default=None, help="seed for generated datasets")
    _add_output_options(render)
    commands['render-template'] = render

    crossval = sub.add_parser('crossval', help="k-fold train/evaluate", formatter_class=formatter)
    crossval.add_argument('--folds', type=int, default=6, help="number of folds")
    _add_data_options(crossval)
    _add_model_options(crossval)
    _add_output_options(crossval)
    commands['crossval'] = crossval

    return parser, commands


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse argv; values from --config become defaults that explicit flags override"""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument('--config', dest='config_file', default=None)
    known, _ = pre.parse_known_args(argv)

    parser, commands = create_parser()
    if known.config_file:
        file_values = read_config_file(known.config_file)
        for command in commands.values():
            command.set_defaults(**file_values)
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        raise ConfigError("No command given")
    return args
