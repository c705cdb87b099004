"""Multiplicative cyclic groups used to randomize the scan order.

Each builtin group is ``(Z/pZ)^x`` for a prime ``p`` whose ``p - 1`` has a
stored factorization. A scan picks a random primitive root ``g < 2**16`` and
walks ``g**0, g**1, ...`` which visits every element of ``[1, p - 1]`` exactly
once in a pseudorandom order.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from math import prod

logger = logging.getLogger(__name__)

# candidate generators stay below 2**16 so that element * g fits in 64 bits
GENERATOR_LIMIT = 2**16
MAX_MODULUS = 2**48 + 23

_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, exact for every ``n < 3.3 * 10**24``."""
    if n < 2:
        return False
    for q in _MR_BASES:
        if n % q == 0:
            return n == q
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def modpow(base: int, exponent: int, modulus: int) -> int:
    if not 0 <= base < modulus:
        raise ValueError(f"base {base} not reduced modulo {modulus}")
    if exponent < 0:
        raise ValueError("negative exponent")
    return pow(base, exponent, modulus)


@dataclass(frozen=True)
class GroupSpec:
    """A prime modulus together with the prime factorization of ``p - 1``."""

    p: int
    factors: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "factors", tuple((int(k), int(a)) for k, a in self.factors))
        if self.p > MAX_MODULUS:
            raise ValueError(f"modulus {self.p} exceeds 2**48 + 23")
        if not is_prime(self.p):
            raise ValueError(f"modulus {self.p} is not prime")
        primes = [k for k, _ in self.factors]
        if len(set(primes)) != len(primes):
            raise ValueError(f"repeated prime factor in {self.factors}")
        for k, a in self.factors:
            if a < 1 or not is_prime(k):
                raise ValueError(f"bad factor {k}^{a} of p-1 for p={self.p}")
        if prod(k**a for k, a in self.factors) != self.p - 1:
            raise ValueError(f"factorization {self.factors} does not multiply to p-1 = {self.p - 1}")

    @property
    def order(self) -> int:
        return self.p - 1

    @property
    def prime_factors(self) -> tuple[int, ...]:
        return tuple(k for k, _ in self.factors)


# p - 1 factorizations were computed offline by trial division and are
# re-verified by GroupSpec.__post_init__ at import time.
_BUILTIN_TABLE = (
    (2**16 + 1, ((2, 16),)),
    (2**24 + 43, ((2, 1), (23, 1), (103, 1), (3541, 1))),
    (2**32 + 15, ((2, 1), (3, 2), (5, 1), (131, 1), (364289, 1))),
    # 2**48 + 23 = 3 * 31 * 3026612652803 is composite; 2**48 + 21 is the
    # least prime above 2**48.
    (2**48 + 21, ((2, 2), (3, 1), (7, 1), (1361, 1), (2462081249, 1))),
)

_BUILTIN_GROUPS = tuple(GroupSpec(p, factors) for p, factors in _BUILTIN_TABLE)


def builtin_groups() -> list[GroupSpec]:
    return sorted(_BUILTIN_GROUPS, key=lambda g: g.p)


def smallest_group_for(space_size: int) -> GroupSpec:
    """Return the smallest builtin group with at least ``space_size`` elements."""
    if space_size < 1:
        raise ValueError("space_size must be positive")
    for group in builtin_groups():
        if group.p - 1 >= space_size:
            return group
    raise ValueError(f"target space of {space_size} exceeds the largest group (2**48 elements)")


def is_generator(g: int, group: GroupSpec) -> bool:
    """True iff ``g`` has multiplicative order ``p - 1``."""
    p = group.p
    if not 2 <= g <= p - 2:
        raise ValueError(f"candidate {g} outside [2, p-2]")
    return all(pow(g, (p - 1) // k, p) != 1 for k in group.prime_factors)


def search_generator(group: GroupSpec, rng: random.Random) -> tuple[int, int]:
    """Draw candidates from ``rng`` until one is a primitive root.

    Returns ``(g, attempts)``.
    """
    high = min(GENERATOR_LIMIT - 1, group.p - 2)
    attempts = 0
    while True:
        attempts += 1
        candidate = rng.randint(2, high)
        if is_generator(candidate, group):
            return candidate, attempts
        logger.debug("rejected generator candidate %d for p=%d", candidate, group.p)


def find_generator(group: GroupSpec, rng_seed: int) -> int:
    g, _ = search_generator(group, random.Random(rng_seed))
    return g


@dataclass
class Permutation:
    """Cursor over the powers of ``generator`` starting at ``first``.

    ``next()`` returns the following element, or ``None`` once the walk
    returns to ``first``. Iterating yields ``first`` and then every other
    element, ``p - 1`` values in total.
    """

    group: GroupSpec
    generator: int
    first: int
    current: int = field(default=0)

    def __post_init__(self) -> None:
        if not 2 <= self.generator < GENERATOR_LIMIT or not is_generator(self.generator, self.group):
            raise ValueError(f"{self.generator} is not a usable generator for p={self.group.p}")
        if not 1 <= self.first <= self.group.p - 1:
            raise ValueError(f"start element {self.first} outside [1, p-1]")
        if not self.current:
            self.current = self.first

    def next(self) -> int | None:
        self.current = self.current * self.generator % self.group.p
        if self.current == self.first:
            return None
        return self.current

    def __iter__(self):
        p, g, first = self.group.p, self.generator, self.first
        x = first
        while True:
            yield x
            x = x * g % p
            if x == first:
                return


def make_permutation(group: GroupSpec, seed: int) -> Permutation:
    """Choose generator and start element for ``group`` from ``seed``."""
    rng = random.Random(seed)
    g, _ = search_generator(group, rng)
    first = rng.randint(1, group.p - 1)
    return Permutation(group, g, first)
