import sys
from pathlib import Path
from typing import List, Optional

from cli import parse_args, run_command
from utils.logger import Logger
from utils.exceptions import (
    BoostingError,
    ConfigError,
    DatasetError,
    DeepBoostError,
    DictionaryLearningError,
    EvaluationError,
    FilterError,
    ImageDimensionError,
    ModelFormatError,
    ProcessError,
    TrainingError,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRAINING = 3

_EXIT_CODES = [
    (ConfigError, EXIT_USAGE),
    ((DatasetError, ImageDimensionError, ModelFormatError, EvaluationError, OSError), EXIT_DATA),
    ((TrainingError, DictionaryLearningError, BoostingError, FilterError, ProcessError), EXIT_TRAINING),
]


def exit_code_for(error: BaseException) -> int:
    for kinds, code in _EXIT_CODES:
        if isinstance(error, kinds):
            return code
    return EXIT_TRAINING


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    # Initialize logger first, inside the output directory
    logger = Logger.get_instance(log_dir=Path(args.output_dir) / "logs")
    try:
        logger.info(f"=== deepboost {args.command} ===")
        return run_command(args)
    except DeepBoostError as e:
        logger.error(f"{type(e).__name__}: {str(e)}")
        logger.debug("Failure details", exc_info=True)
        return exit_code_for(e)
    except OSError as e:
        logger.error(f"I/O error: {str(e)}", exc_info=True)
        return EXIT_DATA
    except Exception as e:
        logger.critical(f"Fatal error: {str(e)}", exc_info=True)
        return EXIT_TRAINING
    finally:
        Logger.shutdown()


if __name__ == "__main__":
    sys.exit(main())
