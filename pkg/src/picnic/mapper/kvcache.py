"""Cyclic KV-cache placement and capacity budgeting."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

if TYPE_CHECKING:
    from .plan import MappingPlan

KV_ENTRY_BYTES = 2
RESERVED_WORDS = 512      # per-router words kept for activations and schedule scratch


class KvCapacityError(RuntimeError):
    pass


def kv_slot(token: int, members: int) -> int:
    """Token ``t`` lives in set member ``t mod m``."""
    if members < 1:
        raise KvCapacityError("KV scratchpad set is empty")
    return token % members


@dataclass
class KvCache:
    """Per-layer bookkeeping of which set member holds each token."""

    members: Sequence[int]
    tokens_per_member: int
    counts: list[int] = field(default_factory=list)
    owner: list[int] = field(default_factory=list)
    keys: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.members:
            raise KvCapacityError("KV scratchpad set is empty")
        self.counts = [0] * len(self.members)

    @property
    def capacity(self) -> int:
        return self.tokens_per_member * len(self.members)

    def slot(self, token: int) -> tuple[int, int]:
        """(member index, local index within that member) for ``token``."""
        m = len(self.members)
        return kv_slot(token, m), token // m

    def append(self, token: int, k_vec=None, v_vec=None) -> tuple[int, int]:
        if token != len(self.owner):
            raise KvCapacityError(f"tokens must be appended in order; expected {len(self.owner)}")
        if token >= self.capacity:
            raise KvCapacityError(f"KV capacity exceeded: {self.capacity} tokens "
                                  f"({self.tokens_per_member} per scratchpad)")
        member, local = self.slot(token)
        self.counts[member] += 1
        self.owner.append(member)
        self.keys.append(k_vec)
        self.values.append(v_vec)
        return member, local

    def imbalance(self) -> int:
        return max(self.counts) - min(self.counts)


def kv_append(cache: KvCache, token: int, k_vec=None, v_vec=None) -> tuple[int, int]:
    return cache.append(token, k_vec, v_vec)


@dataclass
class KvBudget:
    decoder: int
    context: int
    kv_dim: int
    kv_bytes: int
    words_needed: int
    words_available: int
    routers: int

    @property
    def fits(self) -> bool:
        return self.words_needed <= self.words_available


def kv_budget(plan: "MappingPlan", decoder: int, context: int) -> KvBudget:
    """KV words for ``context`` tokens against the decoder's pooled scratchpads.

    Entries are 16-bit and packed ``kv_entries_per_word`` to a 64-bit word.
    The pool is every scratchpad on the decoder's chiplets minus a fixed
    per-router reservation.
    """
    hw = plan.hardware
    kv_dim = plan.model.kv_dim
    entries = 2 * context * kv_dim
    words = -(-entries // hw.kv_entries_per_word)
    routers = len(plan.decoder_chiplets(decoder)) * hw.pairs
    avail = routers * max(0, hw.scratchpad_words - RESERVED_WORDS)
    return KvBudget(decoder, context, kv_dim, entries * KV_ENTRY_BYTES, words, avail, routers)


def check_kv(plan: "MappingPlan", context: int) -> None:
    for d in range(plan.model.num_layers):
        b = kv_budget(plan, d, context)
        if not b.fits:
            raise KvCapacityError(f"decoder {d}: {context} tokens need {b.words_needed} KV words, "
                                  f"only {b.words_available} available")
