"""Utility functions and helpers"""

import sys
from datetime import datetime


def debug_log(category: str, message: str, exc_info: bool = False) -> None:
    """Log a debug message with a category prefix and timestamp.

    Output goes to stderr and only when debug output is enabled in settings, so
    command output on stdout stays machine-readable.

    Args:
        category: Category of the log message (e.g. GEN, ENV, TRAIN)
        message: The message to log
        exc_info: Whether to include exception info in the log
    """
    from ..core.config import get_settings

    if not get_settings().debug:
        return
    timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S.%f")[:-3]
    print(f"[{timestamp}] [{category}] {message}", file=sys.stderr)
    if exc_info:
        import traceback
        print(traceback.format_exc(), file=sys.stderr)
