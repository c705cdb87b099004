"""Pizza sharding: contiguous exponent ranges of one permutation.

Shard ``n`` of ``N`` owns exponents ``[floor(n*(p-1)/N), floor((n+1)*(p-1)/N))``
and each of its ``T`` subshards owns a contiguous slice of that range, cut the
same way. Cursors stop by count, so uneven splits never overrun.
"""

from __future__ import annotations

from dataclasses import dataclass

from cyclescan.groupcycle import GroupSpec, is_generator, modpow


@dataclass(frozen=True)
class ShardPlan:
    group: GroupSpec
    generator: int
    shards: int = 1
    subshards: int = 1
    # every cursor element is multiplied by ``start``; a bijection of the
    # group, so partition and coverage are unaffected
    start: int = 1

    def __post_init__(self) -> None:
        if self.shards < 1 or self.subshards < 1:
            raise ValueError("shard and subshard counts must be >= 1")
        if not is_generator(self.generator, self.group):
            raise ValueError(f"{self.generator} is not a generator for p={self.group.p}")
        if not 1 <= self.start <= self.group.p - 1:
            raise ValueError("start element outside the group")


def exponent_range(plan: ShardPlan, n: int, t: int) -> tuple[int, int]:
    if not 0 <= n < plan.shards:
        raise IndexError(f"shard index {n} out of range [0, {plan.shards})")
    if not 0 <= t < plan.subshards:
        raise IndexError(f"subshard index {t} out of range [0, {plan.subshards})")
    order = plan.group.p - 1
    slice_begin = n * order // plan.shards
    slice_len = (n + 1) * order // plan.shards - slice_begin
    begin = slice_begin + t * slice_len // plan.subshards
    end = slice_begin + (t + 1) * slice_len // plan.subshards
    return begin, end


@dataclass
class ShardCursor:
    plan: ShardPlan
    shard_index: int
    subshard_index: int
    exponent_begin: int
    exponent_end: int
    current_element: int
    emitted_count: int = 0

    @property
    def size(self) -> int:
        return self.exponent_end - self.exponent_begin

    @property
    def remaining(self) -> int:
        return self.size - self.emitted_count

    def next(self) -> int | None:
        """Return the next element, or ``None`` once the range is exhausted."""
        if self.emitted_count >= self.size:
            return None
        element = self.current_element
        self.current_element = element * self.plan.generator % self.plan.group.p
        self.emitted_count += 1
        return element

    def __iter__(self):
        while (element := self.next()) is not None:
            yield element


def make_cursor(plan: ShardPlan, n: int, t: int) -> ShardCursor:
    begin, end = exponent_range(plan, n, t)
    p = plan.group.p
    element = modpow(plan.generator, begin, p) * plan.start % p
    return ShardCursor(plan, n, t, begin, end, element)
