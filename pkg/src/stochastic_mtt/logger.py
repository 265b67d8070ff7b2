import logging
import sys


def setup_logger(log_file: str | None = None, level: int | str = logging.INFO):
    (
        " Configure console and optional file logging for a batch run."
        " Library modules only create named loggers; this is the one"
        " place handlers are attached."
    )
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stdout)]

    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))

    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            raise ValueError(f"Unknown log level: {level}")

    logging.basicConfig(
        level=level,
        format="%(asctime)s [%(levelname)s] %(message)s",
        handlers=handlers,
        force=True,
    )
