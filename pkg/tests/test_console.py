import io
import logging

from metamarl.utils.console import ColorFormatter, configure, get_logger


def test_loggers_share_the_namespace():
    assert get_logger("meta").name == "metamarl.meta"
    assert get_logger("metamarl.backend.tape").name == "metamarl.backend.tape"


def test_configure_levels_and_output():
    stream = io.StringIO()
    root = configure(0, stream)
    assert root.level == logging.INFO
    get_logger("cli").info("hello")
    assert "INFO metamarl.cli: hello" in stream.getvalue()
    assert configure(-1, stream).level == logging.WARNING
    assert configure(2, stream).level == logging.DEBUG
    assert len(logging.getLogger("metamarl").handlers) == 1


def test_color_formatter_tags_level():
    record = logging.LogRecord("metamarl.x", logging.ERROR, __file__, 1, "boom", None, None)
    assert "\x1b[" in ColorFormatter(use_color=True).format(record)
    assert ColorFormatter(use_color=False).format(record) == "ERROR metamarl.x: boom"
