"""Synthetic comparison networks.

Randomness
----------
All generators take a :class:`numpy.random.Generator`.  Experiment streams use
the PCG64 bit generator seeded with a 64-bit value produced by
:func:`derive_seed`, a SplitMix64 fold over the base seed and integer keys
(replication index, subject count, ...).  The scheme is versioned by
:data:`RNG_SCHEME`; fixtures produced under one version stay valid as long as
the constant does not change.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .dataset import ComparisonDataset
from .models import LinkModel

RNG_SCHEME = "pcg64+splitmix64/v1"

_MASK64 = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(base_seed: int, *keys: int) -> int:
    """Mix ``base_seed`` and ``keys`` into one 64-bit seed.

    Each key is folded in as ``h = splitmix64(h ^ splitmix64(key))``.
    """
    h = _splitmix64(int(base_seed) & _MASK64)
    for k in keys:
        h = _splitmix64(h ^ _splitmix64(int(k) & _MASK64))
    return h


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK64))


def stream(base_seed: int, *keys: int) -> np.random.Generator:
    return make_rng(derive_seed(base_seed, *keys))


@dataclass(frozen=True, eq=False)
class ComparisonGraph:
    """Sorted pair list ``(i < j)`` with multiplicities in ``1..T``."""

    n: int
    i: np.ndarray
    j: np.ndarray
    count: np.ndarray
    T: int
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def num_pairs(self) -> int:
        return int(self.i.size)

    @property
    def total(self) -> int:
        return int(self.count.sum())

    def degrees(self) -> np.ndarray:
        """Comparisons per subject, counting multiplicity."""
        return (np.bincount(self.i, weights=self.count, minlength=self.n)
                + np.bincount(self.j, weights=self.count, minlength=self.n)).astype(np.int64)


def anchor(u) -> np.ndarray:
    """Shift a score vector so that its first component is exactly 0."""
    u = np.asarray(u, dtype=float)
    return u - u[0]


def generate_scores(n: int, M: float, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. Uniform[-M/2, M/2] scores, then anchored at subject 0."""
    if n < 2:
        raise ValueError("need n >= 2")
    if not M > 0:
        raise ValueError("dynamic range M must be positive")
    return anchor(rng.uniform(-M / 2.0, M / 2.0, size=n))


def _decode_pairs(n: int, k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # lexicographic index of (i, j), i < j; row i starts at i*(2n - i - 1)/2
    rows = np.arange(n, dtype=np.int64)
    offsets = rows * (2 * n - rows - 1) // 2
    i = np.searchsorted(offsets, k, side="right") - 1
    j = k - offsets[i] + i + 1
    return i, j


def generate_graph(n: int, p: float, T: int, rng: np.random.Generator) -> ComparisonGraph:
    """Every unordered pair independently gets ``Bin(T, p)`` comparisons.

    The binomial is realised as ``T`` independent Erdos-Renyi layers; in each
    layer the edge count is drawn from ``Bin(N, p)`` over the ``N = n(n-1)/2``
    pairs and that many distinct pairs are chosen uniformly.  This has the
    same joint law as ``N`` independent Bernoulli trials but never touches the
    unsampled pairs, so sparse graphs with large ``n`` stay cheap.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if T < 1:
        raise ValueError("T must be at least 1")
    N = n * (n - 1) // 2
    layers = []
    for _ in range(T):
        k = int(rng.binomial(N, p))
        if k == N:
            layers.append(np.arange(N, dtype=np.int64))
        elif k:
            layers.append(rng.choice(N, size=k, replace=False).astype(np.int64))
    if layers:
        keys, counts = np.unique(np.concatenate(layers), return_counts=True)
    else:
        keys, counts = np.empty(0, np.int64), np.empty(0, np.int64)
    i, j = _decode_pairs(n, keys)
    return ComparisonGraph(n, i, j, counts.astype(np.int64), T, meta={"p": p})


def generate_dataset(u, graph: ComparisonGraph, model: LinkModel,
                     rng: np.random.Generator) -> ComparisonDataset:
    """Draw one outcome per comparison from ``f(.; u_i - u_j)``."""
    u = np.asarray(u, dtype=float)
    if u.size != graph.n:
        raise ValueError("score vector length differs from graph size")
    i = np.repeat(graph.i, graph.count)
    j = np.repeat(graph.j, graph.count)
    x = model.sample(u[i] - u[j], rng) if i.size else np.empty(0)
    prov = {"model": model.to_spec(), "T": graph.T, **graph.meta}
    return ComparisonDataset(graph.n, i, j, x, provenance=prov)


def simulate(n: int, p: float, model: LinkModel, *, M: float = 1.0, T: int = 1,
             seed: int = 0) -> tuple[np.ndarray, ComparisonDataset]:
    """Scores, graph and outcomes from a single seeded stream."""
    rng = make_rng(derive_seed(seed))
    u = generate_scores(n, M, rng)
    graph = generate_graph(n, p, T, rng)
    ds = generate_dataset(u, graph, model, rng)
    ds.provenance.update({"seed": int(seed), "M": M, "rng": RNG_SCHEME})
    return u, ds
