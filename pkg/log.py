import sys
import logging

LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]


class ColorFormatter(logging.Formatter):
    COLORS = {
        logging.DEBUG: "\033[38;21m",
        logging.INFO: "\033[32m",
        logging.WARNING: "\033[33;1m",
        logging.ERROR: "\033[31;1m",
        logging.CRITICAL: "\033[31;1m",
    }
    RESET = "\033[0m"

    def __init__(self, color: bool = True):
        super().__init__()
        self.color = color
        self._formatters = {}

    def _formatter(self, levelno: int) -> logging.Formatter:
        if levelno not in self._formatters:
            if self.color:
                log_color = self.COLORS.get(levelno, self.RESET)
                log_fmt = f"%(asctime)s | {log_color}%(levelname)8s{self.RESET} | %(message)s"
            else:
                log_fmt = "%(asctime)s | %(levelname)8s | %(message)s"
            self._formatters[levelno] = logging.Formatter(log_fmt)
        return self._formatters[levelno]

    def format(self, record: logging.LogRecord):
        return self._formatter(record.levelno).format(record)


class ColorLogHandler(logging.StreamHandler):
    """Diagnostics on stderr, colorized when stderr is a terminal."""

    def __init__(self, stream=None):
        super().__init__(stream or sys.stderr)
        self.setFormatter(ColorFormatter(color=self.stream.isatty()))


# handler added by the last setup_logging call
_installed: logging.Handler | None = None


def setup_logging(level: str, systemd: bool, identifier: str) -> logging.Logger:
    """
    Configure the root logger with a single console or journald handler.

    Calling it again replaces the handler it installed before and leaves
    handlers added by anyone else in place.
    """
    global _installed

    logger = logging.getLogger()
    logger.setLevel(logging.getLevelName(level.upper()))

    if _installed is not None:
        logger.removeHandler(_installed)

    if systemd:
        from systemd import journal

        _installed = journal.JournaldLogHandler(identifier=identifier)
    else:
        _installed = ColorLogHandler()
    logger.addHandler(_installed)

    return logger
