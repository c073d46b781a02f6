"""Internal plumbing: named RNG substreams, hashing, tiny parallel map."""
from __future__ import annotations

import hashlib
import json
import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def named_rng(seed: int, *names) -> np.random.Generator:
    """Independent, reproducible substream identified by (seed, names).

    Names may be strings or integers; the derived spawn key is stable
    across runs and platforms.
    """
    key = []
    for name in names:
        if isinstance(name, (int, np.integer)):
            key.append(int(name) & 0xFFFFFFFF)
        else:
            key.append(zlib.crc32(str(name).encode()))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def parallel_map(fn, items, threads: int = 1):
    """Order-preserving map, threaded when threads > 1."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def float_repr(x: float) -> str:
    """Shortest round-trip decimal form, used by all CSV writers."""
    return repr(float(x))
