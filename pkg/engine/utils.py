import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Any, Callable, Iterable, List

from common.constants import THREADS_ENV_VAR
from common.errors import ValidationError

logger = logging.getLogger(__name__)


def read_thread_count(environ=None) -> int:
    """Worker count from EVOMAX_THREADS (absent means a single worker)."""
    environ = os.environ if environ is None else environ
    raw = environ.get(THREADS_ENV_VAR)
    if raw is None or raw.strip() == "":
        return 1
    try:
        count = int(raw)
    except ValueError:
        raise ValidationError(THREADS_ENV_VAR, f"expected a positive integer, got {raw!r}")
    if count < 1:
        raise ValidationError(THREADS_ENV_VAR, f"expected a positive integer, got {count}")
    return count


def run_in_threads(target: Callable[[Any], Any], items: Iterable[Any], workers: int = 1) -> List[Any]:
    """Apply `target` to every item on a thread pool; results keep the input order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [target(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(target, items))


def canonical_json(document) -> str:
    return json.dumps(document, sort_keys=True, separators=(",", ":"))


def config_hash(config) -> str:
    """First 12 hex digits of the SHA-256 of the fully defaulted config."""
    document = config.as_dict() if hasattr(config, "as_dict") else config
    return hashlib.sha256(canonical_json(document).encode("utf-8")).hexdigest()[:12]


@contextmanager
def log_duration(label: str):
    start = time.perf_counter()
    try:
        yield
    finally:
        logger.info(f"{label} took {time.perf_counter() - start:.2f} s")
