import logging

from aurl.utils.logger import CustomFormatter, attach_file_handler, detach_handler, logger


def _record(level: int, msg: str = "buffer drained") -> logging.LogRecord:
    return logging.LogRecord("aurl", level, "orchestrator.py", 12, msg, None, None)


def test_console_lines_carry_the_level_emoji() -> None:
    plain = CustomFormatter(use_color=False)
    for level, emoji in ((logging.DEBUG, "🔍"), (logging.INFO, "✨"), (logging.WARNING, "⚠️"), (logging.ERROR, "❌")):
        line = plain.format(_record(level))
        assert f"{emoji} [{logging.getLevelName(level)}]" in line
        assert line.endswith("orchestrator.py:12 - buffer drained")
        assert "\033[" not in line


def test_colors_wrap_the_line_only_when_enabled() -> None:
    line = CustomFormatter(use_color=True).format(_record(logging.ERROR))
    assert line.startswith("\033[91m") and line.endswith("\033[0m")
    # levels without a style get neither color nor emoji
    unstyled = CustomFormatter(use_color=True).format(_record(logging.CRITICAL))
    assert "\033[" not in unstyled
    assert "[CRITICAL]" in unstyled


def test_file_handler_mirrors_records(tmp_path) -> None:
    handler = attach_file_handler(tmp_path / "run" / "aurl.log")
    try:
        logger.error("❌ test_logger.py: mirrored")
    finally:
        detach_handler(handler)
    text = (tmp_path / "run" / "aurl.log").read_text(encoding="utf-8")
    assert "[ERROR]" in text and "mirrored" in text
    assert handler not in logger.handlers
