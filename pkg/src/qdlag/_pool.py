"""Deterministic work-pool: results are reduced by task index, never by
completion order, so the thread count cannot change any output."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def thread_default() -> int:
    """Thread cap from the QDLAG_THREADS environment variable (default 1)."""
    try:
        return max(1, int(os.environ.get("QDLAG_THREADS", "1")))
    except ValueError:
        return 1


def run_tasks(fn, args, threads: int = 1):
    """Map fn over args, optionally on a thread pool; output order fixed."""
    args = list(args)
    if threads is None:
        threads = thread_default()
    if threads <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ThreadPoolExecutor(max_workers=min(threads, len(args))) as pool:
        return list(pool.map(fn, args))
