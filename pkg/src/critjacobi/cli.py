"""Batch front-end: classification, pipeline verification, parameter scans,
and the generic Levinson engine, emitting JSON reports and CSV traces.

Exit codes: 0 success, 1 at least one verification check failed, 2 usage or
validation error.  Output is byte-identical for identical configuration.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import sys
from pathlib import Path

from mpmath import mp, mpf

from . import __version__
from .fits import geometric_grid
from .levinson import (
    SystemSpec, SystemSpecError, asymptotic_basis, load_system_spec,
)
from .mat2 import Mat2, Vec2
from .model import REGIME_HYPERBOLIC, ModelParams, carleman_check, classify
from .pipeline import (
    ansatz, certify_ansatz, certify_det_s, certify_stage_k, certify_stage_l,
    certify_step1, prefactor_ratio_defect, required_digits, route_equivalence,
    stage_l, l_shrink_rate, step1_n0, step4_reassemble,
)
from .model import expansion_certificate
from .precision import PrecisionContext, digits_for_exponent
from .recurrence import (
    backward_solve, envelope_check, forward_solve, wronskian, wronskian_drift,
    write_trace_csv,
)

BUILTIN_L_STAGE = "critical-L-stage"
DEFAULT_TOLERANCE = 0.05
SLOPE_WINDOW = (100, 10 ** 4)
ASYMPTOTIC_WINDOW = (10 ** 4, 10 ** 5)


def _num(x) -> object:
    """JSON-stable rendering of numbers (mpf/mpc as 17-digit strings)."""
    if x is None or isinstance(x, (bool, int, str)):
        return x
    if isinstance(x, float):
        return repr(x)
    return mp.nstr(x, 17)


def _mat(m: Mat2) -> list:
    return [[_num(m.a), _num(m.b)], [_num(m.c), _num(m.d)]]


def _vec(v: Vec2) -> list:
    return [_num(v.x), _num(v.y)]


def _emit(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _params_from_args(args) -> ModelParams:
    return ModelParams(args.alpha, args.b, args.lam)


def _add_model_flags(sp, required=False):
    sp.add_argument("--alpha", default=None if required else "0.8",
                    required=required, help="growth exponent, in (2/3, 1)")
    sp.add_argument("--b", default=None if required else "1",
                    required=required, help="modulation amplitude, nonzero")
    sp.add_argument("--lambda", dest="lam", default=None if required else "1",
                    required=required, help="spectral parameter")


def _add_common_flags(sp):
    sp.add_argument("--digits", type=int, default=None,
                    help="decimal working precision (auto-raised to the exponent budget)")
    sp.add_argument("--n-max", dest="n_max", type=int, default=None)
    sp.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE,
                    help="relative tolerance for drift/coefficient checks")
    sp.add_argument("--out", default=None, help="output file (default: stdout)")
    sp.add_argument("--format", dest="fmt", choices=("json", "csv"), default="json")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--spec", default=None, help="SystemSpec JSON path or builtin name")


# --- classify ---------------------------------------------------------------

def cmd_classify(args) -> int:
    p = _params_from_args(args)
    n_max = args.n_max or 10 ** 5
    ctx = PrecisionContext(args.digits or 50)
    result = classify(p, n_max, ctx)
    carleman = carleman_check(p, min(n_max, 10 ** 4), ctx)
    doc = {
        "command": "classify",
        "params": p.as_dict(),
        "n_max": n_max,
        "digits": ctx.digits,
        "regime": result.regime,
        "limit_matrix": _mat(result.limit_matrix),
        "discr_leading_coeff": _num(result.discr_leading_coeff),
        "discr_coeff_expected": _num(result.expected_coeff),
        "discr_coeff_rel_err": _num(result.coeff_rel_err),
        "fitted_discr_exponent": _num(result.fitted_discr_exponent),
        "carleman": {
            "partial_sums": [[n, _num(s)] for n, s in carleman.partial_sums],
            "verdict": carleman.verdict,
        },
    }
    _emit(doc, args.out)
    return 0


# --- verify -----------------------------------------------------------------

def _check(name: str, passed: bool, **details) -> dict:
    entry = {"name": name, "passed": bool(passed)}
    entry.update({k: _num(v) if not isinstance(v, (dict, list)) else v
                  for k, v in details.items()})
    return entry


def _slope_entry(cert) -> dict:
    return _check(cert.quantity + f"_{cert.window[0]}_{cert.window[1]}", cert.passed,
                  fitted_slope=cert.fitted_slope, bound=cert.bound,
                  window=list(cert.window))


def run_verify(p: ModelParams, n_max: int, user_digits: int | None,
               tolerance: float) -> tuple[dict, object]:
    """All verification checks; returns (report dict, forward trace for CSV)."""
    checks = []
    ctx_small = PrecisionContext(max(50, user_digits or 0))
    with ctx_small.workdps():
        a = ansatz(p)

    # classification and smooth-expansion law
    cls = classify(p, 10 ** 5, ctx_small)
    exp_ok = abs(cls.fitted_discr_exponent + float(p.alpha)) <= 0.1
    coeff_ok = cls.coeff_rel_err is not None and cls.coeff_rel_err < tolerance
    checks.append(_check("discriminant_law", exp_ok and coeff_ok,
                         regime=cls.regime,
                         fitted_exponent=cls.fitted_discr_exponent,
                         leading_coeff=cls.discr_leading_coeff,
                         expected_coeff=cls.expected_coeff,
                         coeff_rel_err=cls.coeff_rel_err))
    slope, _ = expansion_certificate(p, ctx_small, *SLOPE_WINDOW)
    checks.append(_check("pairing_expansion_residual", slope <= -2 * float(p.alpha) + 0.1,
                         fitted_slope=slope, bound=-2 * float(p.alpha) + 0.1))

    cert, _ = certify_step1(p, ctx_small, *SLOPE_WINDOW)
    checks.append(_slope_entry(cert))
    checks.append(_slope_entry(certify_ansatz(p, ctx_small, *SLOPE_WINDOW)))

    # stage K / stage L certificates need the exponent budget for the window top
    ctx_k = PrecisionContext(max(required_digits(a, SLOPE_WINDOW[1] + 1), user_digits or 0))
    det_cert = certify_det_s(p, ctx_k, at_n=10 ** 4, tolerance=tolerance)
    checks.append(_check("det_s_scaled_ratio", det_cert.passed,
                         value=det_cert.value, at_n=det_cert.at_n, tolerance=tolerance))
    k_certs, _ = certify_stage_k(p, ctx_k, *SLOPE_WINDOW)
    for cert in k_certs.values():
        checks.append(_slope_entry(cert))
    l_cert, _ = certify_stage_l(p, ctx_k, *SLOPE_WINDOW)
    checks.append(_slope_entry(l_cert.off_diagonal))
    checks.append(_slope_entry(l_cert.diagonal_series))
    checks.append(_check("stage_l_shrink_rate_positive", l_cert.shrink_rate_positive,
                         partial_sum=l_cert.shrink_rate_partial_sum))

    ctx_asym = PrecisionContext(max(required_digits(a, ASYMPTOTIC_WINDOW[1] + 1),
                                    user_digits or 0))
    k_certs_a, _ = certify_stage_k(p, ctx_asym, *ASYMPTOTIC_WINDOW, count=12)
    for cert in k_certs_a.values():
        checks.append(_slope_entry(cert))
    l_cert_a, _ = certify_stage_l(p, ctx_asym, *ASYMPTOTIC_WINDOW, count=12)
    checks.append(_slope_entry(l_cert_a.off_diagonal))

    # exact route equivalence over 50 consecutive factors
    ctx_route = PrecisionContext(max(60, user_digits or 0,
                                     required_digits(a, step1_n0(p) + 51)))
    resid = route_equivalence(p, None, 50, ctx_route)
    route_tol = ctx_route.tolerance(15)
    checks.append(_check("route_equivalence_50_steps", resid <= route_tol,
                         max_rel_err=resid, tolerance=route_tol,
                         digits=ctx_route.digits))

    with ctx_k.workdps():
        pf_defect = prefactor_ratio_defect(10 ** 4, p, a)
    checks.append(_check("prefactor_row_structure", pf_defect < tolerance,
                         defect_at_1e4=pf_defect, tolerance=tolerance))

    # envelopes from high-precision forward/backward solves
    n_stop = 512
    n_far = 4 * (2 * n_max + 1)
    env_digits = max(
        digits_for_exponent(float(a.A) * float(n_far / 2) ** float(a.delta)),
        user_digits or 0)
    ctx_env = PrecisionContext(env_digits)
    with ctx_env.workdps():
        a_env = ansatz(p)
    fwd = forward_solve(p, Vec2(mpf("0.3"), mpf(1)), 2, n_max, ctx_env)
    bwd = backward_solve(p, n_far, n_stop, ctx_env)
    window = (max(fwd.start, n_max // 2), n_max)
    rep_f = envelope_check(fwd, a_env, p, +1, ctx_env, window, tolerance)
    rep_b = envelope_check(bwd, a_env, p, -1, ctx_env, window, tolerance)
    for label, rep in (("forward", rep_f), ("backward", rep_b)):
        checks.append(_check(f"envelope_{label}_drift", rep.drift_ok,
                             drift=rep.drift, window=list(rep.window),
                             tolerance=tolerance))
        checks.append(_check(f"envelope_{label}_odd_even", rep.odd_even_ok,
                             limit=rep.odd_even_limit, target=rep.odd_even_target,
                             rel_err=rep.odd_even_rel_err,
                             prefactor_constant=rep.prefactor_constant,
                             prefactor_rel_err=rep.prefactor_rel_err,
                             tolerance=tolerance))
        checks.append(_check(f"envelope_{label}_alternation", rep.alternation_ok))

    drift = wronskian_drift(p, fwd, bwd, ctx_env)
    w_tol = ctx_env.tolerance(15)
    w_ref = wronskian(p, fwd, bwd, n_stop + 1)
    with ctx_env.workdps():
        scale = (mpf(n_stop + 1) ** p.alpha
                 * (abs(fwd.component(n_stop + 2)) * abs(bwd.component(n_stop + 1))
                    + abs(fwd.component(n_stop + 1)) * abs(bwd.component(n_stop + 2))))
        w_rel = abs(w_ref) / scale if scale != 0 else mpf(0)
        prod_vals = [abs(fwd.even(k) * bwd.even(k)) * mpf(k) ** (p.alpha / 2)
                     for k in range(window[0], window[1] + 1, max(1, (window[1] - window[0]) // 64))]
        prod_drift = max(abs(v / prod_vals[-1] - 1) for v in prod_vals)
    checks.append(_check("wronskian_conservation", drift < w_tol,
                         drift=drift, tolerance=w_tol))
    checks.append(_check("basis_wronskian_nonzero", w_rel > mpf("1e-6"),
                         normalized_magnitude=w_rel))
    checks.append(_check("envelope_product_constant", prod_drift < 2 * tolerance,
                         drift=prod_drift, tolerance=2 * tolerance))

    # step-4 reassembly against a matched direct solve
    n0 = step1_n0(p)
    steps = 60
    ctx_s4 = PrecisionContext(max(60, required_digits(a, n0 + steps + 1), user_digits or 0))
    basis = step4_reassemble(p, n0, n0 + steps, ctx_s4)
    dom = basis.dominant
    seed = Vec2(dom.even(dom.start), dom.odd(dom.start))
    direct = forward_solve(p, seed, 2 * dom.start + 1, dom.stop, ctx_s4)
    with ctx_s4.workdps():
        worst = mpf(0)
        for k in range(direct.start, direct.stop + 1):
            for got, want in ((dom.even(k), direct.even(k)), (dom.odd(k), direct.odd(k))):
                scale = max(abs(got), abs(want))
                if scale != 0:
                    worst = max(worst, abs(got - want) / scale)
    s4_tol = ctx_s4.tolerance(20)
    checks.append(_check("step4_vs_direct_solve", worst <= s4_tol,
                         max_rel_err=worst, tolerance=s4_tol, steps=steps))

    passed = all(c["passed"] for c in checks)
    report = {
        "command": "verify",
        "params": p.as_dict(),
        "n_max": n_max,
        "tolerance": repr(tolerance),
        "digits": {
            "base": ctx_small.digits,
            "stage_k_window": ctx_k.digits,
            "stage_k_asymptotic": ctx_asym.digits,
            "envelopes": ctx_env.digits,
            "reassembly": ctx_s4.digits,
        },
        "checks": checks,
        "passed": passed,
    }
    return report, fwd


def cmd_verify(args) -> int:
    p = _params_from_args(args)
    n_max = args.n_max or 2000
    if n_max < 500:
        _warn("insufficient range for slope fits (n-max below 500); "
              "envelope windows will be short")
    report, fwd = run_verify(p, n_max, args.digits, args.tolerance)
    if args.fmt == "csv" and not args.out:
        write_trace_csv(fwd, sys.stdout)
    else:
        _emit(report, args.out)
        if args.out:
            csv_path = str(Path(args.out).with_suffix(".csv"))
            write_trace_csv(fwd, csv_path)
    return 0 if report["passed"] else 1


# --- scan -------------------------------------------------------------------

def _parse_axis(text: str) -> list[str]:
    """A single value, or lo:hi:count expanded on a uniform grid."""
    if ":" not in text:
        return [text]
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"axis spec must be VALUE or LO:HI:COUNT, got {text!r}")
    lo, hi, count = parts
    count = int(count)
    if count < 1:
        raise ValueError("axis COUNT must be >= 1")
    if count == 1:
        return [lo]
    with mp.workdps(40):
        lo_v, hi_v = mpf(lo), mpf(hi)
        step = (hi_v - lo_v) / (count - 1)
        return [mp.nstr(lo_v + k * step, 17) for k in range(count)]


SCAN_COLUMNS = ["index", "alpha", "b", "lambda", "regime",
                "discr_leading_coeff", "fitted_discr_exponent",
                "envelope_drift", "odd_even_limit"]


def _scan_point(task: dict) -> list:
    p = ModelParams(task["alpha"], task["b"], task["lam"])
    ctx = PrecisionContext(task["digits"])
    n_cls = max(100, min(task["n_max"], 10 ** 5))
    res = classify(p, n_cls, ctx)
    row = [task["index"], task["alpha"], task["b"], task["lam"], res.regime,
           _num(res.discr_leading_coeff) or "",
           _num(res.fitted_discr_exponent) or ""]
    if task["envelope"] and res.regime == REGIME_HYPERBOLIC:
        n_max = task["n_max"]
        with ctx.workdps():
            a = ansatz(p)
        env_digits = digits_for_exponent(float(a.A) * float(n_max) ** float(a.delta))
        env_ctx = PrecisionContext(max(env_digits, ctx.digits))
        with env_ctx.workdps():
            a = ansatz(p)
        fwd = forward_solve(p, Vec2(mpf("0.3"), mpf(1)), 2, n_max, env_ctx)
        rep = envelope_check(fwd, a, p, +1, env_ctx, tolerance=task["tolerance"])
        row += [_num(rep.drift), _num(rep.odd_even_limit)]
    else:
        row += ["", ""]
    return row


def cmd_scan(args) -> int:
    alphas = _parse_axis(args.alpha)
    bs = _parse_axis(args.b)
    lams = _parse_axis(args.lam)
    n_max = args.n_max or 2000
    digits = args.digits or 50
    tasks = []
    index = 0
    for al in alphas:
        for bv in bs:
            for lv in lams:
                tasks.append({"index": index, "alpha": al, "b": bv, "lam": lv,
                              "n_max": n_max, "digits": digits,
                              "envelope": args.envelope,
                              "tolerance": args.tolerance})
                index += 1
    # validate eagerly so bad axes exit 2 before any work is scheduled
    for t in tasks:
        ModelParams(t["alpha"], t["b"], t["lam"])

    if args.workers > 1:
        try:
            with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as ex:
                rows = list(ex.map(_scan_point, tasks))
        except (OSError, ValueError) as exc:
            _warn(f"worker pool unavailable ({exc}); running sequentially")
            rows = [_scan_point(t) for t in tasks]
    else:
        rows = [_scan_point(t) for t in tasks]
    rows.sort(key=lambda r: r[0])

    lines = [",".join(SCAN_COLUMNS)]
    lines += [",".join(str(c) for c in row) for row in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# --- levinson ---------------------------------------------------------------

def _builtin_l_stage(p: ModelParams, n_max: int, digits: int | None):
    """SystemSpec for the pipeline's L-stage: p_n = 2 A delta n^{-alpha/2},
    V = diag(-1, 0), R_n the actual stage-L remainder."""
    probe = PrecisionContext(max(50, digits or 0))
    with probe.workdps():
        a = ansatz(p)
    need = max(required_digits(a, n_max + 2), digits or 0)
    ctx = PrecisionContext(need)
    with ctx.workdps():
        a = ansatz(p)
    sampler = stage_l(p, a)
    simple_v = Mat2(mpf(-1), mpf(0), mpf(0), mpf(0))

    def R(n: int) -> Mat2:
        pn = l_shrink_rate(n, a)
        return sampler(n) - Mat2.identity() + Mat2.diag(pn, mpf(0))

    spec = SystemSpec(p=lambda n: l_shrink_rate(n, a), V=lambda n: simple_v,
                      R=R, start_index=3)
    return spec, ctx


def cmd_levinson(args) -> int:
    if not args.spec:
        raise SystemSpecError("levinson requires --spec (a JSON path or "
                              f"the builtin '{BUILTIN_L_STAGE}')")
    n_max = args.n_max or 500
    if args.spec == BUILTIN_L_STAGE:
        p = _params_from_args(args)
        spec, ctx = _builtin_l_stage(p, n_max, args.digits)
        source = {"builtin": BUILTIN_L_STAGE, "params": p.as_dict()}
    else:
        spec = load_system_spec(args.spec)
        ctx = PrecisionContext(args.digits or 50)
        source = {"path": args.spec}

    basis = asymptotic_basis(spec, n_max, ctx)
    with ctx.workdps():
        grid = geometric_grid(basis.base_index, n_max, 16)
        trajectory = [[n, _num(basis.diagonalization.mu1(n)),
                       _num(basis.diagonalization.mu2(n))] for n in grid]
        products = [[n, _num(basis.scalar_products[0](n)),
                     _num(basis.scalar_products[1](n))] for n in grid]
    diag = basis.diagnostics
    doc = {
        "command": "levinson",
        "source": source,
        "n_max": n_max,
        "digits": ctx.digits,
        "regime": basis.regime,
        "base_index": basis.base_index,
        "threshold": basis.diagonalization.threshold,
        "mu_limits": [_num(basis.diagonalization.mu1_limit),
                      _num(basis.diagonalization.mu2_limit)],
        "directions": [_vec(basis.directions[0]), _vec(basis.directions[1])],
        "tail_residuals": [_num(basis.tail_residuals[0]), _num(basis.tail_residuals[1])],
        "eigenvalue_trajectory": trajectory,
        "scalar_products": products,
        "larger_solution": None if basis.larger is None else {
            "n0": basis.larger.n0,
            "retries": basis.larger.retries,
            "limit_second_component": _num(basis.larger.second_component),
            "first_component_end": _num(basis.larger.first_component_end),
        },
        "hypothesis_diagnostics": {
            "p_partial_sum": _num(diag.p_partial_sum),
            "p_last": _num(diag.p_last),
            "p_positive_from": diag.p_positive_from,
            "r_norm_sum": _num(diag.r_norm_sum),
            "r_norm_tail": _num(diag.r_norm_tail),
            "v_variation_sum": _num(diag.v_variation_sum),
            "v_variation_tail": _num(diag.v_variation_tail),
            "limit_discriminant": _num(diag.limit_discriminant),
            "warnings": diag.warnings + basis.diagonalization.warnings,
        },
    }
    _emit(doc, args.out)
    return 0


# --- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="critjacobi",
        description="Spectral asymptotics of a critical-hyperbolic Jacobi matrix: "
                    "classification, pipeline certification, envelope verification, "
                    "parameter scans, and a generalized discrete Levinson engine.",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("classify", help="regime from the paired-matrix discriminant")
    _add_model_flags(sp)
    _add_common_flags(sp)
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("verify", help="run all structural and envelope checks")
    _add_model_flags(sp)
    _add_common_flags(sp)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("scan", help="classify over a parameter grid (CSV)")
    _add_model_flags(sp)
    _add_common_flags(sp)
    sp.add_argument("--envelope", action="store_true",
                    help="add envelope columns (hyperbolic points only)")
    sp.set_defaults(func=cmd_scan)

    sp = sub.add_parser("levinson", help="asymptotic basis of a 2x2 difference system")
    _add_model_flags(sp)
    _add_common_flags(sp)
    sp.set_defaults(func=cmd_levinson)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, SystemSpecError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ArithmeticError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
