"""
Console - Colored logging to standard error
"""

import logging
import sys

from colorama import Fore, Style, just_fix_windows_console

ROOT = "metamarl"

LEVEL_COLORS = {
    logging.DEBUG: Fore.CYAN,
    logging.INFO: Fore.GREEN,
    logging.WARNING: Fore.YELLOW,
    logging.ERROR: Fore.RED,
    logging.CRITICAL: Fore.MAGENTA + Style.BRIGHT,
}


class ColorFormatter(logging.Formatter):
    """LEVEL name: message, with the level tag colored"""

    def __init__(self, use_color: bool = True):
        super().__init__("%(levelname)s %(name)s: %(message)s")
        self.use_color = use_color

    def format(self, record: logging.LogRecord) -> str:
        text = super().format(record)
        if not self.use_color:
            return text
        color = LEVEL_COLORS.get(record.levelno, "")
        return text.replace(record.levelname, f"{color}{record.levelname}{Style.RESET_ALL}", 1)


def get_logger(name: str) -> logging.Logger:
    """Logger under the metamarl namespace"""
    if name != ROOT and not name.startswith(ROOT + "."):
        name = f"{ROOT}.{name}"
    return logging.getLogger(name)


def configure(verbosity: int = 0, stream=None) -> logging.Logger:
    """
    Attach the colored handler to the metamarl root logger

    Args:
        verbosity: -1 quiet (warnings), 0 info, 1+ debug
        stream: Output stream (standard error by default)

    Returns:
        The configured root logger
    """
    just_fix_windows_console()
    stream = stream or sys.stderr
    root = logging.getLogger(ROOT)
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(stream)
    handler.setFormatter(ColorFormatter(use_color=hasattr(stream, "isatty") and stream.isatty()))
    root.addHandler(handler)
    root.setLevel(logging.WARNING if verbosity < 0 else logging.DEBUG if verbosity > 0 else logging.INFO)
    root.propagate = False
    return root
