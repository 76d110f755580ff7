"""Shared constants of the network layout and the scale plan.

Scales are exact rationals; each of the three streams progressively
downscales, and a block's inter-stage ratio is the quotient of consecutive
stream scales (a stride when integer, a linear pre-downscale otherwise).
"""

from __future__ import annotations

from fractions import Fraction

SCALES_STREAM_1 = (Fraction(4, 3), Fraction(2), Fraction(4))
SCALES_STREAM_2 = (Fraction(3, 2), Fraction(3), Fraction(6))
SCALES_STREAM_3 = (Fraction(5, 4), Fraction(5, 2))
STREAMS = (SCALES_STREAM_1, SCALES_STREAM_2, SCALES_STREAM_3)

ALL_SCALES = tuple(sorted(SCALES_STREAM_1 + SCALES_STREAM_2 + SCALES_STREAM_3))

CH_3X3 = 8
CH_1X1 = 4

DEFAULT_PRELU = 0.25
PRE_SKIP_PRELU = 1.0  # identity at init so the non-linear path has full range

# Crops must give integer geometry at every scale: lcm of the scale
# denominators and integer factors.
CROP_MULTIPLE = 60


def scale_tag(s: Fraction) -> str:
    return f"{s.numerator}/{s.denominator}"


def target_extent(extent: int, s: Fraction) -> int:
    """Rounded output extent (half away from zero), same rule as inference."""
    return (2 * extent * s.denominator + s.numerator) // (2 * s.numerator)


def block_ratios(scales: tuple[Fraction, ...]) -> list[Fraction]:
    prev = Fraction(1)
    out = []
    for s in scales:
        out.append(s / prev)
        prev = s
    return out
