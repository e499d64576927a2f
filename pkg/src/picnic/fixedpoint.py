"""Numeric helpers shared by the router macros, PEs and SCUs.

Two modes exist. In *exact* mode payloads are unbounded integers and no
rounding happens anywhere, which lets every in-network result be compared
against a big-integer oracle. In *fixed* mode payloads are signed 64-bit
two's-complement words holding Q-format values (16 fractional bits unless
configured otherwise) and every arithmetic result saturates.
"""

from __future__ import annotations

from dataclasses import dataclass

WORD_BITS = 64
WORD_MAX = (1 << (WORD_BITS - 1)) - 1
WORD_MIN = -(1 << (WORD_BITS - 1))


@dataclass(frozen=True)
class NumericMode:
    exact: bool = False
    frac_bits: int = 16

    @property
    def name(self) -> str:
        return "exact" if self.exact else "fixed"

    @classmethod
    def parse(cls, name: str, frac_bits: int = 16) -> "NumericMode":
        if name not in ("exact", "fixed"):
            raise ValueError(f"unknown numeric mode {name!r} (expected 'exact' or 'fixed')")
        return cls(exact=name == "exact", frac_bits=frac_bits)


EXACT = NumericMode(exact=True)
FIXED = NumericMode(exact=False)


def saturate(value: int) -> tuple[int, bool]:
    """Clamp to the signed 64-bit range; the flag is True when clamping happened."""
    if value > WORD_MAX:
        return WORD_MAX, True
    if value < WORD_MIN:
        return WORD_MIN, True
    return value, False


def shift_round(value: int, shift: int) -> int:
    """Arithmetic right shift with round-half-up."""
    if shift <= 0:
        return value << (-shift)
    return (value + (1 << (shift - 1))) >> shift


def to_fixed(x: float, frac_bits: int = 16) -> int:
    return int(round(x * (1 << frac_bits)))


def from_fixed(v: int, frac_bits: int = 16) -> float:
    return v / float(1 << frac_bits)


def to_word(value: int) -> int:
    """Two's-complement 64-bit image of a signed payload."""
    return value & ((1 << WORD_BITS) - 1)


def from_word(word: int) -> int:
    word &= (1 << WORD_BITS) - 1
    return word - (1 << WORD_BITS) if word >> (WORD_BITS - 1) else word
