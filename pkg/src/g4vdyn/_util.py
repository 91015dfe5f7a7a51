"""Seed streams and order-preserving parallel map.

Seeding scheme: every random draw comes from
``default_rng(SeedSequence(master_seed, spawn_key=(stream, *index)))``.
``stream`` is a fixed per-experiment integer (see ``STREAMS``) and
``index`` identifies the repetition, scan or shot.  Results therefore do
not depend on how repetitions are partitioned across workers.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

STREAMS = {
    "telegraph": 1,
    "capture": 2,
    "init_eff": 3,
    "ple_scan": 4,
    "ple_trajectory": 5,
    "readout": 6,
    "cpt_noise": 7,
    "synthetic": 8,
}


def rng_for(seed, stream, *index):
    key = (STREAMS[stream] if isinstance(stream, str) else int(stream),) + tuple(int(i) for i in index)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def resolve_threads(threads=None):
    if threads is None:
        threads = int(os.environ.get("G4VDYN_THREADS", "1") or 1)
    return max(1, int(threads))


def pmap(func, items, threads=None):
    """``[func(x) for x in items]``, optionally on a thread pool, order preserved."""
    items = list(items)
    threads = resolve_threads(threads)
    if threads == 1 or len(items) < 2:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))
