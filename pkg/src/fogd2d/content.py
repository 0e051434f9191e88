"""File library, Zipf popularity, cache combinations, and placement policies.

File and combination indices are 1-based in the public API (files 1..N,
combinations 1..J, most popular file first).  Vectors indexed by file or by
combination are plain numpy arrays whose position 0 holds index 1.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np

RFS = "rfs"
MRFS = "mrfs"
SCHEMES = (RFS, MRFS)

#: Refuse to enumerate more cache combinations than this (J grows as C(N, K)).
COMBINATION_CAP = 10**6


def _readonly(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ContentParams:
    """Library size N, cache size K, Zipf exponent, and selection scheme."""

    N: int
    K: int
    gamma: float
    scheme: str = RFS

    def __post_init__(self):
        if int(self.N) < 1:
            raise ValueError("library size N must be at least 1")
        if not 1 <= int(self.K) <= int(self.N):
            raise ValueError("cache size K must satisfy 1 <= K <= N")
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise ValueError("Zipf exponent gamma must be finite and >= 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")


@dataclass(frozen=True, eq=False)
class Popularity:
    """Per-file request probabilities, non-increasing for a positive exponent."""

    p: np.ndarray

    def __post_init__(self):
        p = _readonly(self.p)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("popularity must be a non-empty 1-D vector")
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise ValueError("popularity entries must lie in [0, 1]")
        if abs(float(p.sum()) - 1.0) > 1e-12:
            raise ValueError("popularity must sum to 1 within 1e-12")
        object.__setattr__(self, "p", p)

    @property
    def n_files(self) -> int:
        return int(self.p.size)


@dataclass(frozen=True, eq=False)
class CombinationSet:
    """All size-K subsets of {1..N}, rows sorted ascending, lexicographic order."""

    N: int
    K: int
    combos: np.ndarray  # (J, K) int64, 1-based file ids

    @property
    def J(self) -> int:
        return int(self.combos.shape[0])

    @functools.cached_property
    def member_mask(self) -> np.ndarray:
        """Boolean (J, N) matrix: entry [i, n-1] is True when file n is cached."""
        mask = np.zeros((self.J, self.N), dtype=bool)
        rows = np.repeat(np.arange(self.J), self.K)
        mask[rows, (self.combos - 1).ravel()] = True
        mask.setflags(write=False)
        return mask

    def containing(self, n: int) -> np.ndarray:
        """0-based positions of the combinations that cache file n."""
        if not 1 <= n <= self.N:
            raise IndexError(f"file index {n} outside 1..{self.N}")
        return np.nonzero(self.member_mask[:, n - 1])[0]


@dataclass(frozen=True, eq=False)
class CachingPolicy:
    """Probability of each cache combination; entries snapped to [0, 1] and renormalized."""

    c: np.ndarray

    def __post_init__(self):
        c = np.array(self.c, dtype=np.float64)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("caching policy must be a non-empty 1-D vector")
        if np.any(c < -1e-12) or np.any(c > 1.0 + 1e-12):
            raise ValueError("caching probabilities must lie in [0, 1]")
        total = float(c.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"caching probabilities must sum to 1 within 1e-9, got {total!r}")
        np.clip(c, 0.0, 1.0, out=c)
        c /= c.sum()
        c.setflags(write=False)
        object.__setattr__(self, "c", c)

    @property
    def J(self) -> int:
        return int(self.c.size)


def zipf_popularity(N: int, gamma: float) -> Popularity:
    """Power-law request probabilities p_n proportional to n**(-gamma)."""
    if N < 1:
        raise ValueError("library size N must be at least 1")
    if not (math.isfinite(gamma) and gamma >= 0):
        raise ValueError("Zipf exponent gamma must be finite and >= 0")
    ranks = np.arange(1, N + 1, dtype=np.float64)
    p = ranks ** (-float(gamma))
    p /= p.sum()
    # absorb residual float drift so the vector sums to 1.0 exactly
    for _ in range(4):
        drift = 1.0 - float(p.sum())
        if drift == 0.0:
            break
        p[0] += drift
    return Popularity(p)


@functools.lru_cache(maxsize=64)
def combination_set(N: int, K: int, cap: int = COMBINATION_CAP) -> CombinationSet:
    """Cached accessor for the lexicographic combination enumeration."""
    return enumerate_combinations(N, K, cap=cap)


def enumerate_combinations(N: int, K: int, cap: int = COMBINATION_CAP) -> CombinationSet:
    """Enumerate all C(N, K) cache combinations in lexicographic order."""
    if not 1 <= K <= N:
        raise ValueError("combination size K must satisfy 1 <= K <= N")
    count = math.comb(N, K)
    if count > cap:
        raise ValueError(
            f"C({N}, {K}) = {count} combinations exceeds the enumeration cap of {cap}; "
            "this configuration is too large to index explicitly"
        )
    flat = np.fromiter(
        itertools.chain.from_iterable(itertools.combinations(range(1, N + 1), K)),
        dtype=np.int64,
        count=count * K,
    )
    combos = flat.reshape(count, K)
    combos.setflags(write=False)
    return CombinationSet(N=N, K=K, combos=combos)


def uniform_policy(J: int) -> CachingPolicy:
    """Equal probability 1/J on every combination."""
    if J < 1:
        raise ValueError("policy length J must be at least 1")
    return CachingPolicy(np.full(J, 1.0 / J))


def mpc_policy(combos: CombinationSet, pop: Popularity) -> CachingPolicy:
    """All probability on the most popular combination (ties: lexicographically first)."""
    if pop.n_files != combos.N:
        raise ValueError("popularity length must match the combination library size")
    weights = pop.p[combos.combos - 1].sum(axis=1)
    c = np.zeros(combos.J)
    c[int(np.argmax(weights))] = 1.0
    return CachingPolicy(c)


def sample_cache(policy: CachingPolicy, rand: float) -> int:
    """Inverse-CDF draw of a combination index in 1..J from a uniform rand in [0, 1)."""
    if not 0.0 <= rand < 1.0:
        raise ValueError("rand must lie in [0, 1)")
    cdf = np.cumsum(policy.c)
    idx = int(np.searchsorted(cdf, rand, side="right"))
    return min(idx, policy.J - 1) + 1
