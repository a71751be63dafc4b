"""Deterministic worker-pool helper.

Work is split into index-ordered tasks whose random streams are derived from
task indices, never from worker identity; results are reduced in task order.
Reports are therefore identical for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

__all__ = ["pmap_ordered"]


def pmap_ordered(fn, args_list, workers: int = 1) -> list:
    """Map a picklable callable over tasks, preserving task order."""
    args_list = list(args_list)
    if workers <= 1 or len(args_list) <= 1:
        return [fn(a) for a in args_list]
    chunk = max(1, len(args_list) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, args_list, chunksize=chunk))
