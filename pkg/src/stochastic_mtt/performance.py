import logging
import time
import tracemalloc
from functools import wraps

logger = logging.getLogger(__name__)


def track_performance(func):
    (" Log wall time and peak traced memory of a batch step.")

    @wraps(func)
    def wrapper(*args, **kwargs):
        logger.info(f"Starting: {func.__name__}")
        start_time = time.perf_counter()

        # nested decorated calls share the outer trace
        owns_trace = not tracemalloc.is_tracing()
        if owns_trace:
            tracemalloc.start()
        try:
            return func(*args, **kwargs)
        finally:
            _, peak = tracemalloc.get_traced_memory()
            if owns_trace:
                tracemalloc.stop()
            elapsed = time.perf_counter() - start_time
            logger.info(
                f"Completed: {func.__name__} | "
                f"Runtime: {elapsed:.2f}s | "
                f"Peak Memory: {peak / 10**6:.2f} MB"
            )

    return wrapper
