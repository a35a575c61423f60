"""The Jacobi model: power weights with a period-2 modulated diagonal.

Weights a_n = n^alpha; diagonal b_n = b*n^alpha on odd n and 0 on even n,
with alpha in (2/3, 1) and b != 0.  The spectral recurrence

    a_{n-1} u_{n-1} + b_n u_n + a_n u_{n+1} = lambda u_n,   n >= 2,

propagates pair vectors (u_{n-1}, u_n) by transfer matrices; pairing two
consecutive transfer matrices smooths the modulation and yields a sequence
with a common limit whose repeated eigenvalue makes the problem critical.
The discriminant of the paired matrices decides hyperbolic vs elliptic.
"""

from __future__ import annotations

from dataclasses import dataclass

from mpmath import mp, mpf

from .fits import fit_on_grid, geometric_grid, loglog_slope, richardson2
from .mat2 import Mat2
from .precision import PrecisionContext, as_mpf

REGIME_HYPERBOLIC = "critical-hyperbolic"
REGIME_ELLIPTIC = "critical-elliptic"
REGIME_DEGENERATE = "degenerate"


def _canonical(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


class ModelParams:
    """Model parameters: growth exponent alpha, modulation amplitude b,
    spectral parameter lambda.

    Stored as exact decimal strings; attribute access materializes values at
    the active working precision, so one ModelParams can be reused across
    precision contexts without truncation.
    """

    __slots__ = ("_alpha", "_b", "_lam")

    def __init__(self, alpha, b, lam):
        self._alpha = _canonical(alpha)
        self._b = _canonical(b)
        self._lam = _canonical(lam)
        with mp.workdps(50):
            try:
                a_v, b_v = mpf(self._alpha), mpf(self._b)
                mpf(self._lam)
            except Exception as exc:
                raise ValueError(f"unparseable model parameter: {exc}") from exc
            if not (mpf(2) / 3 < a_v < 1):
                raise ValueError(f"alpha out of (2/3,1): {self._alpha}")
            if b_v == 0:
                raise ValueError("b must be nonzero")

    @property
    def alpha(self) -> mpf:
        return mpf(self._alpha)

    @property
    def b(self) -> mpf:
        return mpf(self._b)

    @property
    def lam(self) -> mpf:
        return mpf(self._lam)

    def as_dict(self) -> dict:
        return {"alpha": self._alpha, "b": self._b, "lambda": self._lam}

    def __repr__(self):
        return f"ModelParams(alpha={self._alpha}, b={self._b}, lambda={self._lam})"

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (self._alpha, self._b, self._lam) == (other._alpha, other._b, other._lam)

    def __hash__(self):
        return hash((self._alpha, self._b, self._lam))


def weight(n: int, p: ModelParams) -> mpf:
    """Off-diagonal entry a_n = n^alpha."""
    if n < 1:
        raise ValueError(f"weight index must be >= 1, got {n}")
    return mpf(n) ** p.alpha


def diag(n: int, p: ModelParams) -> mpf:
    """Diagonal entry: b*n^alpha for odd n, 0 for even n."""
    if n < 1:
        raise ValueError(f"diagonal index must be >= 1, got {n}")
    if n % 2 == 1:
        return p.b * mpf(n) ** p.alpha
    return mpf(0)


def transfer(n: int, p: ModelParams) -> Mat2:
    """Transfer matrix propagating (u_{n-1}, u_n) to (u_n, u_{n+1})."""
    if n < 2:
        raise ValueError(f"transfer index must be >= 2, got {n}")
    a_n = weight(n, p)
    return Mat2(mpf(0), mpf(1), -weight(n - 1, p) / a_n, (p.lam - diag(n, p)) / a_n)


def paired(n: int, p: ModelParams) -> Mat2:
    """Product of two consecutive transfer matrices, smooth in n."""
    if n < 2:
        raise ValueError(f"paired index must be >= 2, got {n}")
    return transfer(2 * n, p) * transfer(2 * n - 1, p)


def limit_matrix(p: ModelParams) -> Mat2:
    """Common limit of the paired matrices: [[-1, -b], [0, -1]]."""
    return Mat2(mpf(-1), -p.b, mpf(0), mpf(-1))


def paired_expansion_residual(n: int, p: ModelParams) -> mpf:
    """Norm of paired(n) minus its two-term smooth expansion
    limit + lambda*(2n)^-alpha*[[0,1],[-1,-b]] + (alpha/2n)*I; decays like n^-2alpha."""
    two_n = mpf(2 * n)
    expansion = (
        limit_matrix(p)
        + (p.lam * two_n ** (-p.alpha)) * Mat2(mpf(0), mpf(1), mpf(-1), -p.b)
        + (p.alpha / two_n) * Mat2.identity()
    )
    return (paired(n, p) - expansion).norm()


@dataclass
class ClassificationResult:
    regime: str
    limit_matrix: Mat2
    discr_leading_coeff: mpf | None
    fitted_discr_exponent: float | None
    expected_coeff: mpf | None

    @property
    def coeff_rel_err(self):
        if self.discr_leading_coeff is None or self.expected_coeff in (None, 0):
            return None
        return abs(self.discr_leading_coeff / self.expected_coeff - 1)


def classify(p: ModelParams, n_max: int, ctx: PrecisionContext = PrecisionContext()) -> ClassificationResult:
    """Regime from the asymptotic sign of the paired-matrix discriminant.

    The discriminant behaves like (4*b*lambda/2^alpha) * n^-alpha; the leading
    coefficient is extracted by two-point Richardson extrapolation (removing
    the n^-alpha relative correction) and the exponent by a log-log fit.
    """
    if n_max < 100:
        raise ValueError(f"classify requires n_max >= 100, got {n_max}")
    with ctx.workdps():
        blam = p.b * p.lam
        lim = limit_matrix(p)
        if p.lam == 0:
            return ClassificationResult(REGIME_DEGENERATE, lim, None, None, None)
        regime = REGIME_HYPERBOLIC if blam > 0 else REGIME_ELLIPTIC

        def scaled_coeff(n: int) -> mpf:
            return paired(n, p).discriminant() * mpf(n) ** p.alpha

        coeff = richardson2(scaled_coeff(n_max // 2), scaled_coeff(n_max), 2, p.alpha)
        grid = geometric_grid(100, n_max, 24)
        exponent = loglog_slope([(n, paired(n, p).discriminant()) for n in grid])
        expected = 4 * blam / mpf(2) ** p.alpha
        return ClassificationResult(regime, lim, coeff, exponent, expected)


@dataclass
class CarlemanDiagnostic:
    partial_sums: list  # (n, sum of 1/a_k up to n)
    verdict: str  # always "divergent" for alpha < 1


def carleman_check(p: ModelParams, n_max: int, ctx: PrecisionContext = PrecisionContext()) -> CarlemanDiagnostic:
    """Partial sums of sum(1/a_n).

    The series is a p-series with exponent alpha < 1, hence divergent; the
    essential self-adjointness condition holds throughout the parameter range.
    """
    checkpoints = [10 ** k for k in range(1, 12) if 10 ** k <= n_max]
    if not checkpoints or checkpoints[-1] != n_max:
        checkpoints.append(n_max)
    with ctx.workdps():
        alpha = p.alpha
        total = mpf(0)
        sums = []
        last = 0
        for cp in checkpoints:
            for n in range(last + 1, cp + 1):
                total += mpf(n) ** (-alpha)
            last = cp
            sums.append((cp, +total))
        return CarlemanDiagnostic(sums, "divergent")


def expansion_certificate(p: ModelParams, ctx: PrecisionContext = PrecisionContext(),
                          lo: int = 100, hi: int = 10 ** 4, count: int = 24):
    """Fitted decay slope of the paired-matrix expansion residual (claim: -2*alpha)."""
    with ctx.workdps():
        slope, pts = fit_on_grid(lambda n: paired_expansion_residual(n, p), lo, hi, count)
    return slope, pts
