"""Deterministic chunked Monte Carlo.

Work is split into fixed-size chunks, chunk i always draws from the i-th
child of ``SeedSequence(seed)`` and results are concatenated in chunk
order, so the output does not depend on the number of workers.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

DEFAULT_CHUNK = 4096
SEED_ENV = "CWEXTREMA_SEED"
DEFAULT_SEED = 12345


def default_seed() -> int:
    return int(os.environ.get(SEED_ENV, DEFAULT_SEED))


def chunk_sizes(n: int, chunk: int) -> list[int]:
    full, rest = divmod(int(n), int(chunk))
    return [chunk] * full + ([rest] if rest else [])


def run_chunks(
    fn: Callable[[np.random.Generator, int], np.ndarray],
    n: int,
    seed: int,
    workers: int = 1,
    chunk: int = DEFAULT_CHUNK,
) -> np.ndarray:
    """Evaluate ``fn(rng, size)`` on every chunk and stack the per-sample rows."""
    sizes = chunk_sizes(n, chunk)
    seqs = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = [(np.random.default_rng(sq), k) for sq, k in zip(seqs, sizes)]
    if workers <= 1 or len(jobs) <= 1:
        parts = [fn(rng, k) for rng, k in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda job: fn(*job), jobs))
    return np.concatenate(parts, axis=0)


@dataclass
class McEstimate:
    mean: float
    stderr: float
    n: int
    method: str
    seed: int
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, x, method: str, seed: int, **extra) -> "McEstimate":
        x = np.asarray(x, dtype=float)
        n = x.size
        sd = float(x.std(ddof=1)) if n > 1 else float("nan")
        return cls(float(x.mean()), sd / np.sqrt(n), n, method, seed, dict(extra))

    @property
    def rel_stderr(self) -> float:
        return self.stderr / abs(self.mean) if self.mean else float("inf")

    def as_dict(self) -> dict:
        out = {"mean": self.mean, "stderr": self.stderr, "n": self.n, "method": self.method, "seed": self.seed}
        out.update(self.extra)
        return out
