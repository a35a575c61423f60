"""Direct high-precision solution of the spectral recurrence.

Forward iteration reaches the dominant solution; the subordinate one is
recovered by backward (Miller) recursion from a far index, where it is the
dominant direction.  Envelope reports compare computed solutions against the
closed-form modulus asymptotics n^gamma * exp(+-A n^delta).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from mpmath import mp, mpf

from .mat2 import Vec2
from .model import ModelParams
from .precision import InsufficientPrecisionError, PrecisionContext

if TYPE_CHECKING:  # pragma: no cover
    from .pipeline import AsymptoticAnsatz

CSV_COLUMNS = ["n", "re(u_even)", "im(u_even)", "re(u_odd)", "im(u_odd)",
               "envelope_ratio", "wronskian_drift"]


@dataclass
class SolutionTrace:
    """Indexed record of a computed 2-component solution.

    For spectral-recurrence traces, pair index n holds (u_{2n}, u_{2n+1});
    for generic C^2 difference systems it holds the two vector components.
    """

    start: int
    even_components: list = field(default_factory=list)
    odd_components: list = field(default_factory=list)
    wronskian_drift: object = None
    envelope_ratios: list | None = None  # aligned with indices when computed

    @property
    def stop(self) -> int:
        return self.start + len(self.even_components) - 1

    @property
    def indices(self) -> range:
        return range(self.start, self.stop + 1)

    def pair(self, n: int) -> Vec2:
        i = n - self.start
        if i < 0 or i >= len(self.even_components):
            raise IndexError(f"pair index {n} outside [{self.start}, {self.stop}]")
        return Vec2(self.even_components[i], self.odd_components[i])

    def even(self, n: int):
        return self.pair(n).x

    def odd(self, n: int):
        return self.pair(n).y

    def component(self, m: int):
        """Scalar u_m (spectral-recurrence traces)."""
        return self.even(m // 2) if m % 2 == 0 else self.odd((m - 1) // 2)

    @property
    def scalar_range(self) -> range:
        return range(2 * self.start, 2 * self.stop + 2)

    def scaled(self, factor) -> "SolutionTrace":
        return SolutionTrace(
            self.start,
            [factor * v for v in self.even_components],
            [factor * v for v in self.odd_components],
        )


def _magnitude_guard(value, cap):
    if abs(value) > cap:
        raise InsufficientPrecisionError(
            "insufficient precision: solution magnitude exceeds the exponent budget; "
            "raise the digit count for this range"
        )


def forward_solve(p: ModelParams, seed: Vec2, n_start: int, n_max: int,
                  ctx: PrecisionContext = PrecisionContext()) -> SolutionTrace:
    """Iterate the spectral recurrence up from seed = (u_{n_start-1}, u_{n_start}).

    n_max is a pair index: the trace covers scalars u_m through m = 2*n_max+1.
    """
    if seed.norm() == 0:
        raise ValueError("seed must be nonzero")
    if n_start < 2:
        raise ValueError(f"n_start must be >= 2, got {n_start}")
    m_hi = 2 * n_max + 1
    if m_hi <= n_start:
        raise ValueError(f"n_max pairs {n_max} do not extend past the seed index {n_start}")
    with ctx.workdps():
        alpha, b, lam = p.alpha, p.b, p.lam
        cap = ctx.magnitude_cap()
        u = {n_start - 1: seed.x, n_start: seed.y}
        a_prev = mpf(n_start - 1) ** alpha
        for n in range(n_start, m_hi):
            a_n = mpf(n) ** alpha
            b_n = b * a_n if n % 2 == 1 else mpf(0)
            u[n + 1] = ((lam - b_n) * u[n] - a_prev * u[n - 1]) / a_n
            _magnitude_guard(u[n + 1], cap)
            a_prev = a_n
        # first pair k with both u_{2k}, u_{2k+1} available: 2k >= n_start-1
        k_lo = n_start // 2
        return SolutionTrace(
            k_lo,
            [u[2 * k] for k in range(k_lo, n_max + 1)],
            [u[2 * k + 1] for k in range(k_lo, n_max + 1)],
        )


def backward_solve(p: ModelParams, n_far: int | None, n_stop: int,
                   ctx: PrecisionContext = PrecisionContext(),
                   seed: Vec2 | None = None) -> SolutionTrace:
    """Recover the subordinate solution by backward recursion from a far index.

    Iterates down from an arbitrary seed (u_{n_far}, u_{n_far+1}) and
    normalizes at n_stop so the largest of (u_{n_stop}, u_{n_stop+1}) is 1.
    Indices are scalar u-indices; default n_far = 4*n_stop.
    """
    if n_far is None:
        n_far = 4 * n_stop
    if n_stop < 2:
        raise ValueError(f"n_stop must be >= 2, got {n_stop}")
    if n_far < 2 * n_stop:
        raise ValueError(f"n_far must be well beyond n_stop (got {n_far} < 2*{n_stop})")
    with ctx.workdps():
        alpha, b, lam = p.alpha, p.b, p.lam
        cap = ctx.magnitude_cap()
        if seed is None:
            seed = Vec2(mpf(1), mpf(0))
        u = {n_far: seed.x, n_far + 1: seed.y}
        for n in range(n_far, n_stop - 1, -1):
            a_n = mpf(n) ** alpha
            a_prev = mpf(n - 1) ** alpha
            b_n = b * a_n if n % 2 == 1 else mpf(0)
            u[n - 1] = ((lam - b_n) * u[n] - a_n * u[n + 1]) / a_prev
            _magnitude_guard(u[n - 1], cap)
        anchor = u[n_stop] if abs(u[n_stop]) >= abs(u[n_stop + 1]) else u[n_stop + 1]
        if anchor == 0:
            raise ValueError("backward trace vanished at the normalization index")
        k_lo = n_stop // 2
        k_hi = n_far // 2
        return SolutionTrace(
            k_lo,
            [u[2 * k] / anchor for k in range(k_lo, k_hi + 1)],
            [u[2 * k + 1] / anchor for k in range(k_lo, k_hi + 1)],
        )


def wronskian(p: ModelParams, u: SolutionTrace, v: SolutionTrace, n: int):
    """W_n = a_n (u_{n+1} v_n - u_n v_{n+1}), constant in n for two solutions."""
    a_n = mpf(n) ** p.alpha
    return a_n * (u.component(n + 1) * v.component(n) - u.component(n) * v.component(n + 1))


def wronskian_drift(p: ModelParams, u: SolutionTrace, v: SolutionTrace,
                    ctx: PrecisionContext = PrecisionContext(), max_samples: int = 4096):
    """Max relative deviation of W_n from its first overlapping value.

    Returns 0 for identically-zero Wronskians (e.g. u is v).  The result is
    stored on both traces.
    """
    lo = max(u.scalar_range.start, v.scalar_range.start)
    hi = min(u.scalar_range.stop - 1, v.scalar_range.stop - 1) - 1
    if hi <= lo:
        raise ValueError("traces do not overlap on two consecutive indices")
    step = max(1, (hi - lo) // max_samples)
    with ctx.workdps():
        ref = wronskian(p, u, v, lo)
        ws = [wronskian(p, u, v, n) for n in range(lo, hi + 1, step)]
        if all(w == 0 for w in ws):
            drift = mpf(0)
        elif ref == 0:
            drift = mp.inf
        else:
            drift = max(abs(w - ref) for w in ws) / abs(ref)
    u.wronskian_drift = drift
    v.wronskian_drift = drift
    return drift


def max_recurrence_residual(trace: SolutionTrace, p: ModelParams,
                            ctx: PrecisionContext = PrecisionContext(),
                            max_samples: int = 2048):
    """Largest relative defect of the defining three-term identity over the trace."""
    rng = trace.scalar_range
    lo, hi = rng.start + 1, rng.stop - 2
    step = max(1, (hi - lo) // max_samples)
    worst = mpf(0)
    with ctx.workdps():
        alpha, b, lam = p.alpha, p.b, p.lam
        for n in range(lo, hi + 1, step):
            a_n = mpf(n) ** alpha
            a_prev = mpf(n - 1) ** alpha
            b_n = b * a_n if n % 2 == 1 else mpf(0)
            terms = (a_prev * trace.component(n - 1), b_n * trace.component(n),
                     a_n * trace.component(n + 1), lam * trace.component(n))
            scale = max(abs(t) for t in terms)
            if scale == 0:
                continue
            resid = abs(terms[0] + terms[1] + terms[2] - terms[3]) / scale
            worst = max(worst, resid)
    return worst


@dataclass
class EnvelopeReport:
    sign: int
    window: tuple[int, int]
    drift: object
    drift_ok: bool
    odd_even_limit: object
    odd_even_target: object
    odd_even_rel_err: object
    odd_even_ok: bool
    prefactor_constant: object
    prefactor_rel_err: object
    alternation_ok: bool
    tolerance: float
    ratio_samples: list


def envelope_check(trace: SolutionTrace, a: "AsymptoticAnsatz", p: ModelParams, sign: int,
                   ctx: PrecisionContext = PrecisionContext(),
                   window: tuple[int, int] | None = None,
                   tolerance: float = 0.05) -> EnvelopeReport:
    """Compare a trace against the closed-form envelope for the given branch.

    Reports (i) the envelope ratio r_n = u_{2n} (-1)^n n^{alpha/4} e^{-sign A n^delta}
    and its relative drift over the window, (ii) the odd/even ratio
    n^{alpha/2} u_{2n+1}/u_{2n} against sqrt(lambda/(2^alpha b))(1-alpha/2) as
    well as against the step-4 prefactor constant sqrt(lambda/(2^alpha b)),
    and (iii) the (-1)^n sign alternation of even components.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    k_hi_avail = trace.stop
    if window is None:
        window = (max(trace.start, k_hi_avail // 2), k_hi_avail)
    k_lo, k_hi = window
    if k_lo < trace.start or k_hi > k_hi_avail or k_hi <= k_lo:
        raise ValueError(f"window {window} outside trace range [{trace.start}, {k_hi_avail}]")
    with ctx.workdps():
        alpha, b, lam = p.alpha, p.b, p.lam
        A, delta = a.A, a.delta
        ratios = []
        for k in range(k_lo, k_hi + 1):
            nk = mpf(k)
            r = trace.even(k) * (-1) ** k * nk ** (alpha / 4) * mp.exp(-sign * A * nk ** delta)
            ratios.append(r)
        ref = ratios[-1]
        drift = mp.inf if ref == 0 else max(abs(r / ref - 1) for r in ratios)

        q_hi = mpf(k_hi) ** (alpha / 2) * trace.odd(k_hi) / trace.even(k_hi)
        base = mp.sqrt(lam / (mpf(2) ** alpha * b))
        target = sign * base * (1 - alpha / 2)
        prefactor_const = sign * base
        oe_err = abs(q_hi / target - 1)
        pf_err = abs(q_hi / prefactor_const - 1)

        alternation_ok = True
        step = max(1, (k_hi - k_lo) // 64)
        for k in range(k_lo, k_hi, step):
            if k + 1 > k_hi_avail or trace.even(k) == 0:
                continue
            if mp.re(trace.even(k + 1) / trace.even(k)) >= 0:
                alternation_ok = False
                break

        sample_step = max(1, (k_hi - k_lo) // 32)
        samples = [(k_lo + i, ratios[i]) for i in range(0, len(ratios), sample_step)]

    if trace.envelope_ratios is None:
        trace.envelope_ratios = [None] * len(trace.even_components)
    for i, r in enumerate(ratios):
        trace.envelope_ratios[k_lo - trace.start + i] = r

    return EnvelopeReport(
        sign=sign,
        window=(k_lo, k_hi),
        drift=drift,
        drift_ok=bool(drift < tolerance),
        odd_even_limit=q_hi,
        odd_even_target=target,
        odd_even_rel_err=oe_err,
        odd_even_ok=bool(oe_err < tolerance),
        prefactor_constant=prefactor_const,
        prefactor_rel_err=pf_err,
        alternation_ok=alternation_ok,
        tolerance=tolerance,
        ratio_samples=samples,
    )


def _fmt(value) -> str:
    if value is None:
        return ""
    return mp.nstr(mp.mpf(value) if isinstance(value, (int, float)) else value, 17)


def write_trace_csv(trace: SolutionTrace, out) -> None:
    """Write the documented CSV columns; `out` is a path or text file object."""
    own = isinstance(out, (str, bytes))
    fh = open(out, "w", newline="") if own else out
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        drift = _fmt(trace.wronskian_drift)
        for i, n in enumerate(trace.indices):
            ev, od = trace.even_components[i], trace.odd_components[i]
            ratio = ""
            if trace.envelope_ratios is not None and trace.envelope_ratios[i] is not None:
                ratio = _fmt(trace.envelope_ratios[i])
            w.writerow([n, _fmt(mp.re(ev)), _fmt(mp.im(ev)),
                        _fmt(mp.re(od)), _fmt(mp.im(od)), ratio, drift])
    finally:
        if own:
            fh.close()


def trace_csv_text(trace: SolutionTrace) -> str:
    buf = io.StringIO()
    write_trace_csv(trace, buf)
    return buf.getvalue()
