from .parser import create_parser, parse_args
from .commands import run_command
