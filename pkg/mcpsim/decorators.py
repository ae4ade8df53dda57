import functools
import time
from datetime import datetime

from loguru import logger


def timeit(func):
    """Log the wall time of a call"""

    @functools.wraps(func)
    def timeit_wrapper(*args, **kwargs):
        start_time = time.perf_counter()
        result = func(*args, **kwargs)
        total_time = time.perf_counter() - start_time
        logger.info(f"{func.__name__} took {total_time:.3f} seconds")
        return result

    return timeit_wrapper


def log_function_call(func_name: str | None = None):
    """Decorator to log experiment entry points with their outcome"""

    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            name = func_name or func.__name__
            logger.opt(depth=1).debug(
                f"Calling {name}",
                function=name,
                args_count=len(args),
                kwargs_keys=sorted(kwargs),
                module=func.__module__,
            )

            start_time = datetime.now()
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                execution_time = (datetime.now() - start_time).total_seconds()
                logger.opt(exception=True).error(
                    f"Failed {name}: {type(e).__name__}",
                    function=name,
                    execution_time=execution_time,
                    error_type=type(e).__name__,
                    success=False,
                )
                raise

            execution_time = (datetime.now() - start_time).total_seconds()
            logger.debug(
                f"Completed {name}",
                function=name,
                execution_time=execution_time,
                success=True,
            )
            return result

        return wrapper

    return decorator
