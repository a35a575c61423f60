"""Working-precision control.

Every numeric routine in this package runs under an explicit decimal-digit
budget.  A PrecisionContext is a value object; entering ``ctx.workdps()``
activates it for the current thread (mpmath's global context), and low-level
samplers simply evaluate at whatever precision is active.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from mpmath import mp, mpf

MIN_DIGITS = 30

# Headroom (decimal digits) added on top of pure dynamic-range requirements.
BUDGET_HEADROOM = 30


class InsufficientPrecisionError(ArithmeticError):
    """Raised when a computation would exceed the exponent budget of the
    active precision context."""


@dataclass(frozen=True)
class PrecisionContext:
    """Decimal working precision governing all scalar arithmetic.

    Results are deterministic for a fixed number of digits.
    """

    digits: int = 50

    def __post_init__(self):
        if int(self.digits) != self.digits or self.digits < MIN_DIGITS:
            raise ValueError(f"digits must be an integer >= {MIN_DIGITS}, got {self.digits}")

    def workdps(self):
        """Context manager activating this precision."""
        return mp.workdps(self.digits)

    def tolerance(self, headroom: int) -> mpf:
        """10^-(digits - headroom), the standard contract tolerance."""
        return mpf(10) ** (-(self.digits - headroom))

    def magnitude_cap(self) -> mpf:
        """Largest magnitude allowed before the exponent budget is exhausted."""
        return mpf(10) ** (self.digits - BUDGET_HEADROOM)


def digits_for_exponent(natural_exponent: float) -> int:
    """Digits needed to carry quantities of size e^x alongside O(1) terms,
    plus standard headroom."""
    if natural_exponent <= 0:
        return MIN_DIGITS
    return int(math.ceil(natural_exponent * math.log10(math.e))) + BUDGET_HEADROOM


def as_mpf(value) -> mpf:
    """Convert a real number given as int/float/str/mpf at the active precision.

    Floats are routed through repr() so that a literal like 0.8 means the
    decimal 0.8, not its binary double approximation.
    """
    if isinstance(value, str):
        return mpf(value)
    if isinstance(value, float):
        return mpf(repr(value))
    return mpf(value)
