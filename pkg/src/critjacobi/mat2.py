"""Exact-contract 2x2 complex linear algebra at the active working precision.

Matrices are tiny and allocated in hot loops, so everything is written out
explicitly (no generic n x n machinery).  The module norm is the maximum
absolute entry, matching entrywise O() estimates; the max-row-sum operator
norm is available separately where submultiplicativity matters.
"""

from __future__ import annotations

from typing import Callable

from mpmath import mp, mpf

Scalar = object  # mpf | mpc | int | float
Mat2Sampler = Callable[[int], "Mat2"]


class SingularMatrixError(ZeroDivisionError):
    """Inversion refused: determinant below the precision margin."""


class Vec2:
    """A 2-vector of complex scalars."""

    __slots__ = ("x", "y")

    def __init__(self, x, y):
        self.x = x
        self.y = y

    def __add__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x - other.x, self.y - other.y)

    def __rmul__(self, s) -> "Vec2":
        return Vec2(s * self.x, s * self.y)

    def __neg__(self) -> "Vec2":
        return Vec2(-self.x, -self.y)

    def norm(self):
        """Max absolute component."""
        return max(abs(self.x), abs(self.y))

    def norm2(self):
        """Euclidean norm."""
        return mp.sqrt(abs(self.x) ** 2 + abs(self.y) ** 2)

    def __iter__(self):
        yield self.x
        yield self.y

    def __repr__(self):
        return f"Vec2({mp.nstr(self.x, 8)}, {mp.nstr(self.y, 8)})"


class Mat2:
    """A 2x2 matrix [[a, b], [c, d]] of complex scalars."""

    __slots__ = ("a", "b", "c", "d")

    def __init__(self, a, b, c, d):
        self.a = a
        self.b = b
        self.c = c
        self.d = d

    @classmethod
    def from_rows(cls, rows) -> "Mat2":
        (a, b), (c, d) = rows
        return cls(a, b, c, d)

    @classmethod
    def identity(cls) -> "Mat2":
        return cls(mpf(1), mpf(0), mpf(0), mpf(1))

    @classmethod
    def zero(cls) -> "Mat2":
        return cls(mpf(0), mpf(0), mpf(0), mpf(0))

    @classmethod
    def diag(cls, first, second) -> "Mat2":
        return cls(first, mpf(0), mpf(0), second)

    def rows(self):
        return [[self.a, self.b], [self.c, self.d]]

    def __add__(self, other: "Mat2") -> "Mat2":
        return Mat2(self.a + other.a, self.b + other.b, self.c + other.c, self.d + other.d)

    def __sub__(self, other: "Mat2") -> "Mat2":
        return Mat2(self.a - other.a, self.b - other.b, self.c - other.c, self.d - other.d)

    def __neg__(self) -> "Mat2":
        return Mat2(-self.a, -self.b, -self.c, -self.d)

    def __rmul__(self, s) -> "Mat2":
        return Mat2(s * self.a, s * self.b, s * self.c, s * self.d)

    def __mul__(self, other):
        if isinstance(other, Mat2):
            return Mat2(
                self.a * other.a + self.b * other.c,
                self.a * other.b + self.b * other.d,
                self.c * other.a + self.d * other.c,
                self.c * other.b + self.d * other.d,
            )
        if isinstance(other, Vec2):
            return Vec2(self.a * other.x + self.b * other.y, self.c * other.x + self.d * other.y)
        return Mat2(self.a * other, self.b * other, self.c * other, self.d * other)

    def det(self):
        return self.a * self.d - self.b * self.c

    def trace(self):
        return self.a + self.d

    def discriminant(self):
        """trace^2 - 4 det; its sign separates elliptic/hyperbolic/critical."""
        return self.trace() ** 2 - 4 * self.det()

    def norm(self):
        """Max absolute entry."""
        return max(abs(self.a), abs(self.b), abs(self.c), abs(self.d))

    def row_sum_norm(self):
        """Max row sum of absolute entries (submultiplicative operator norm)."""
        return max(abs(self.a) + abs(self.b), abs(self.c) + abs(self.d))

    def inverse(self) -> "Mat2":
        """Adjugate/determinant inverse.

        Refuses when |det| < 10^-(digits-10) * norm^2 at the active precision.
        """
        det = self.det()
        margin = mpf(10) ** (-(mp.dps - 10)) * self.norm() ** 2
        if abs(det) < margin:
            raise SingularMatrixError(
                f"2x2 inversion refused: |det| = {mp.nstr(abs(det), 6)} below margin "
                f"{mp.nstr(margin, 6)}"
            )
        return Mat2(self.d / det, -self.b / det, -self.c / det, self.a / det)

    def __eq__(self, other):
        if not isinstance(other, Mat2):
            return NotImplemented
        return self.a == other.a and self.b == other.b and self.c == other.c and self.d == other.d

    __hash__ = None

    def __repr__(self):
        e = [mp.nstr(v, 8) for v in (self.a, self.b, self.c, self.d)]
        return f"Mat2([[{e[0]}, {e[1]}], [{e[2]}, {e[3]}]])"


def mul(lhs: Mat2, rhs: Mat2) -> Mat2:
    """Matrix product at the active working precision."""
    return lhs * rhs


def chrono_product(factors: Mat2Sampler, n1: int, n2: int) -> Mat2:
    """Chronological product factors(n2) * ... * factors(n1), highest index leftmost."""
    if n1 > n2:
        raise ValueError(f"chrono_product requires n1 <= n2, got {n1} > {n2}")
    out = factors(n1)
    for n in range(n1 + 1, n2 + 1):
        out = factors(n) * out
    return out


def telescope(A: Mat2Sampler, T: Mat2Sampler, n1: int, n2: int):
    """Similarity-transform a chronological product so intermediate affinity
    factors cancel.

    Returns (C, identity_check) where C(n) = T(n+1)^-1 A(n) T(n) and
    identity_check is the norm of

        prod A(n)  -  T(n2+1) [prod C(n)] T(n1)^-1,

    expected ~ 0 at working precision.
    """
    inverses = {}

    def t_inv(n: int) -> Mat2:
        if n not in inverses:
            try:
                inverses[n] = T(n).inverse()
            except SingularMatrixError as exc:
                raise SingularMatrixError(f"affinity matrix T({n}) is singular: {exc}") from exc
        return inverses[n]

    def C(n: int) -> Mat2:
        return t_inv(n + 1) * A(n) * T(n)

    direct = chrono_product(A, n1, n2)
    conjugated = T(n2 + 1) * chrono_product(C, n1, n2) * t_inv(n1)
    identity_check = (direct - conjugated).norm()
    return C, identity_check
