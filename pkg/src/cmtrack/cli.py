"""Command-line front end: ``check``, ``synthesize``, ``simulate``, ``example``.

Exit codes: 0 success, 2 parse or validation error, 3 assumption failure,
4 solver failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .assumptions import AssumptionReport, check_assumptions
from .augment import AugmentedErrorDynamics
from .expr import DomainError, ExpressionError
from .examples import COMPANIONS, EXAMPLES, example_text
from .model import ErrorDynamics, ModelError
from .report import StabilityVerdict, classify, classify_with_probes
from .simulate import (
    SimulationResult,
    integrate_closed_loop,
    probe_delta,
    scalar_linear_solution,
    sinusoid_reference_controller,
)
from .synthesis import (
    ContractionFailure,
    EigenvalueBoundError,
    FeedbackLaw,
    SingularB,
    SynthesisError,
    synthesize,
)
from .sysfile import SystemFileError, SystemSpec, load, loads

EXIT_OK, EXIT_INPUT, EXIT_ASSUMPTION, EXIT_SOLVER = 0, 2, 3, 4


class AssumptionFailure(RuntimeError):
    pass


class SolverFailure(RuntimeError):
    pass


def _fmt_vec(v) -> str:
    return "(" + ", ".join(f"{x:.10g}" for x in np.atleast_1d(v)) + ")"


def _fmt_mat(M) -> str:
    return "[" + "; ".join(" ".join(f"{x:.10g}" for x in row) for row in np.atleast_2d(M)) + "]"


def _error_dynamics(spec: SystemSpec):
    dyn = ErrorDynamics(spec.model)
    aug = AugmentedErrorDynamics(dyn, spec.columns) if dyn.m < dyn.n and spec.columns is not None else None
    return dyn, aug


def run_check(spec: SystemSpec, T_check: float | None = None) -> AssumptionReport:
    dyn, aug = _error_dynamics(spec)
    T = spec.T if T_check is None else T_check
    return check_assumptions(dyn, T, spec.N_check, spec.kappa, augmented=aug)


def build_law(spec: SystemSpec, report: AssumptionReport) -> tuple[ErrorDynamics, FeedbackLaw]:
    dyn = ErrorDynamics(spec.model)
    if not report.rank.passed:
        raise AssumptionFailure(
            f"rank condition fails at t={report.rank.first_violation_t:.6g}; synthesis refused"
        )
    failed = [k for k, s in report.status.items() if not s.ok]
    if failed:
        raise AssumptionFailure(f"assumptions not verified on grid: {', '.join(failed)}")
    law = synthesize(dyn, report, spec.eigenvalues, spec.margin, spec.columns)
    return dyn, law


def _probe_direction(spec: SystemSpec) -> np.ndarray:
    n = spec.model.n
    if spec.x0 is not None:
        d = spec.x0 - spec.model.x_d(0.0)
        if np.any(d):
            return d
    return np.ones(n)


def estimate_delta(spec: SystemSpec, dyn, law) -> tuple[float, bool]:
    """Largest tested |e(0)| whose run completes; coarse step to keep bisection cheap."""
    upper = 1.0
    if spec.x0 is not None:
        upper = max(1.0, 2.0 * float(np.linalg.norm(spec.x0 - spec.model.x_d(0.0))))
    return probe_delta(dyn, law, _probe_direction(spec), spec.T, max(spec.dt, 1e-2), upper=upper)


def _linear_form(law: FeedbackLaw, h: float = 1e-3):
    """Recover ``v* ~ G e`` from probes along the axes; also report exactness."""
    n = law.n
    G = np.zeros((law.dynamics.frame(0.0).n_controls, n))
    linear, one_step = True, True
    for i in range(n):
        d = np.zeros(n)
        d[i] = h
        v1, diag = law.solve_full(d, 0.0)
        v2, _ = law.solve_full(2 * d, 0.0)
        G[:, i] = v1 / h
        one_step &= diag.iterations <= 1
        linear &= bool(np.allclose(v2, 2 * v1, rtol=1e-9, atol=1e-14))
    # axis probes miss cross terms such as e2*v1
    d = np.full(n, h)
    v, diag = law.solve_full(d, 0.0)
    one_step &= diag.iterations <= 1
    linear &= bool(np.allclose(v, G @ d, rtol=1e-9, atol=1e-14))
    G[np.abs(G) < 1e-12 * max(1.0, float(np.abs(G).max()))] = 0.0
    return G, linear, one_step


def synthesis_text(spec: SystemSpec, report: AssumptionReport, dyn, law, delta=None) -> str:
    lines = [
        f"system = {spec.model.name or 'unnamed'}",
        f"mode = {law.mode}",
        f"Delta = diag{_fmt_vec(law.hurwitz.eigenvalues)}",
        f"Delta.source = {law.hurwitz.source}",
        f"margin = {law.hurwitz.margin:.6g}",
        f"eigenvalue_threshold = {report.threshold:.12g}",
    ]
    fr = law.dynamics.frame(0.0)
    if law.mode == "augmented":
        src = getattr(law.dynamics.columns, "source", "custom")
        lines.append(f"augmentation.source = {src}")
        for j in range(law.m, law.n):
            lines.append(f"l{j + 1}(0) = {_fmt_vec(fr.B[:, j])}")
        lines.append(f"Btilde(0) = {_fmt_mat(fr.B)}")
        lines.append(f"cond(Btilde(0)) = {np.linalg.cond(fr.B):.6g}")
    G, linear, one_step = _linear_form(law)
    if linear and one_step:
        K = -G + 0.0
        name = "Ktilde" if law.mode == "augmented" else "K"
        lines.append(f"{name} = B^-1 (A - Delta) at t=0 = {_fmt_mat(K)}")
    for i in range(law.m):
        terms = " ".join(f"{'+' if g >= 0 else '-'} {abs(g):.10g}*e{j + 1}" for j, g in enumerate(G[i] + 0.0))
        kind = "exact linear form" if linear else "linearization at e=0"
        lines.append(f"v{i + 1}* ~ {terms.lstrip('+ ')}   ({kind}, t=0)")
    lines.append(f"fixed_point.one_iteration = {'yes' if one_step else 'no'}")
    if delta is not None:
        d, capped = delta
        lines.append(f"delta_probe = {'>= ' if capped else ''}{d:.6g}")
    return "\n".join(lines) + "\n"


@dataclass
class RunOutcome:
    result: SimulationResult
    verdict: StabilityVerdict
    text: str


def simulate_spec(
    spec: SystemSpec,
    dyn,
    law,
    T: float,
    dt: float,
    eps=None,
    hold=None,
    bound_C: float = 10.0,
    controller=None,
    label: str = "",
) -> RunOutcome:
    if spec.x0 is None:
        raise SystemFileError("[simulate] x0 is required for simulation")
    verdict, result = classify_with_probes(
        dyn, law, spec.x0, T, dt, eps, hold, bound_C, controller=controller
    )
    lines = [f"run = {label or 'nominal'}", f"status = {result.status}"]
    if result.message:
        lines.append(f"message = {result.message}")
    lines += [f"T = {T:.6g}", f"dt = {dt:.6g}"]
    if not len(result.t):
        text = "\n".join(lines) + "\n" + verdict.to_text()
        return RunOutcome(result, verdict, text)
    lines.append(f"x(T) = {_fmt_vec(result.x[-1])}")
    if controller is None:
        lines.append(f"fp_iters.max = {np.nanmax(result.fp_iters):.0f}")
        lines.append(f"residual.max = {np.nanmax(result.residual):.3g}")
        lines.append(f"gamma_obs.max = {np.nanmax(result.gamma_obs):.6g}")
    if result.E is not None:
        lines.append(f"E(T) = {_fmt_vec(result.E[-1])}")
        lines.append(f"E_crosscheck = {result.E_crosscheck:.3g}")
    text = "\n".join(lines) + "\n" + verdict.to_text()
    if result.E is not None:
        text += (
            "note = Lyapunov stability for the underactuated case is stated through bounds on "
            "E(t) after a time T(eps); the classifier checks the |e| and |E| envelopes only\n"
        )
    return RunOutcome(result, verdict, text)


def run_id(text: str, flags: dict) -> str:
    h = hashlib.sha256()
    h.update(text.encode())
    h.update(json.dumps(flags, sort_keys=True).encode())
    return h.hexdigest()[:12]


def _write(path: str, text: str):
    with open(path, "w") as fh:
        fh.write(text)


def _paper2d_quadrature(result: SimulationResult, law: FeedbackLaw, model) -> float:
    """Max deviation of the simulated E1 from the variation-of-constants quadrature."""
    lam = law.hurwitz.diag
    t = result.t
    et = result.etilde
    w = np.array([model.w(s)[0] for s in t])
    h1 = lam[0] * et[:, 0] - w * et[:, 0] - lam[1] * et[:, 1]
    E1 = scalar_linear_solution(t, w, h1)
    return float(np.max(np.abs(result.E[:, 0] - E1)))


def pipeline(spec: SystemSpec, out_dir: str, T, dt, eps, hold, bound_C, extra_runs=()) -> tuple[str, int]:
    """check -> synthesize -> simulate; writes the three output files."""
    os.makedirs(out_dir, exist_ok=True)
    report = run_check(spec, T)
    _write(os.path.join(out_dir, "assumptions.txt"), report.to_text())
    dyn, law = build_law(spec, report)
    delta = estimate_delta(spec, dyn, law)
    law = law.replace(delta_probe=delta[0])
    parts = [synthesis_text(spec, report, dyn, law, delta)]
    run = simulate_spec(spec, dyn, law, T, dt, eps, hold, bound_C)
    run.result.to_csv(os.path.join(out_dir, "trace.csv"))
    parts.append(run.text)
    code = EXIT_OK if run.result.completed else EXIT_SOLVER
    for tag, fn in extra_runs:
        text, c = fn(spec, dyn, law, run, out_dir)
        parts.append(text)
        code = max(code, c)
    _write(os.path.join(out_dir, "report.txt"), "\n".join(parts))
    return "\n".join(parts), code


def _chained_sinusoid(spec, dyn, law, run, out_dir):
    other = simulate_spec(
        spec, dyn, None, spec.T, spec.dt, spec.eps, spec.hold, spec.bound_C,
        controller=sinusoid_reference_controller, label="sinusoid time-varying law",
    )
    other.result.to_csv(os.path.join(out_dir, "trace_sinusoid.csv"))
    summary = (
        f"comparison.static = {run.verdict.label}, |x3(T)| = {abs(run.result.x[-1, 2]):.6g}\n"
        f"comparison.sinusoid = {other.verdict.label}, |x(T)| = {np.linalg.norm(other.result.x[-1]):.6g}\n"
    )
    return other.text + summary, EXIT_OK if other.result.completed else EXIT_SOLVER


def _paper2d_extras(spec, dyn, law, run, out_dir):
    lines = []
    if run.result.E is not None:
        err = _paper2d_quadrature(run.result, law.replace(e0=run.result.e0), spec.model)
        lines.append(f"E1_quadrature.max_deviation = {err:.3g}")
    comp = loads(COMPANIONS["paper2d"]["w0"])
    crep = run_check(comp, spec.T)
    cdyn, claw = build_law(comp, crep)
    crun = simulate_spec(comp, cdyn, claw, spec.T, spec.dt, spec.eps, spec.hold, spec.bound_C, label="w = 0")
    crun.result.to_csv(os.path.join(out_dir, "trace_w0.csv"))
    e0 = crun.result.e0
    lines.append(f"w0.e1(T) = {crun.result.e[-1, 0]:.10g}  (e1(0) - e2(0) = {e0[0] - e0[1]:.10g})")
    return crun.text + "\n".join(lines) + "\n", EXIT_OK if crun.result.completed else EXIT_SOLVER


EXTRA_RUNS = {
    "chained3": [("sinusoid", _chained_sinusoid)],
    "paper2d": [("w0", _paper2d_extras)],
}


def _guard(fn):
    """Map library exceptions to exit codes; returns ``(text, code)``."""
    try:
        return fn()
    except (SystemFileError, ExpressionError, ModelError, EigenvalueBoundError) as exc:
        return f"error: {exc}\n", EXIT_INPUT
    except AssumptionFailure as exc:
        return f"assumption failure: {exc}\n", EXIT_ASSUMPTION
    except SynthesisError as exc:
        return f"synthesis error: {exc}\n", EXIT_ASSUMPTION
    except (SingularB, ContractionFailure, DomainError, SolverFailure) as exc:
        return f"solver failure: {exc}\n", EXIT_SOLVER


def cmd_check(args) -> tuple[str, int]:
    spec = load(args.file)
    report = run_check(spec, args.T_check)
    text = report.to_text()
    return text, EXIT_OK if report.passed else EXIT_ASSUMPTION


def cmd_synthesize(args) -> tuple[str, int]:
    spec = load(args.file)
    report = run_check(spec, args.T_check)
    dyn, law = build_law(spec, report)
    delta = estimate_delta(spec, dyn, law)
    return synthesis_text(spec, report, dyn, law, delta), EXIT_OK


def _override(spec: SystemSpec, args) -> dict:
    for key in ("T", "dt", "eps", "hold"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(spec, key, val)
    if getattr(args, "C", None) is not None:
        spec.bound_C = args.C
    if not (spec.dt > 0 and spec.T >= spec.dt):
        raise SystemFileError(f"need dt > 0 and T >= dt (T={spec.T}, dt={spec.dt})")
    return {"T": spec.T, "dt": spec.dt, "eps": spec.eps, "hold": spec.hold, "C": spec.bound_C}


def cmd_simulate(args) -> tuple[str, int]:
    spec = load(args.file)
    flags = _override(spec, args)
    out = os.path.join(args.out, run_id(spec.text, flags))
    text, code = pipeline(spec, out, spec.T, spec.dt, spec.eps, spec.hold, spec.bound_C)
    return text + f"output = {out}\n", code


def run_example(name: str, out_root: str, flags_in: dict | None = None) -> tuple[str, int]:
    def go():
        spec = loads(example_text(name))
        ns = argparse.Namespace(**(flags_in or {}))
        flags = _override(spec, ns)
        out = os.path.join(out_root, f"{name}-{run_id(spec.text, flags)}")
        text, code = pipeline(
            spec, out, spec.T, spec.dt, spec.eps, spec.hold, spec.bound_C, EXTRA_RUNS.get(name, ())
        )
        return f"== example {name} ==\n" + text + f"output = {out}\n", code

    return _guard(go)


def cmd_example(args) -> tuple[str, int]:
    names = list(EXAMPLES) if args.name == "all" else [args.name]
    if args.name != "all" and args.name not in EXAMPLES:
        return f"error: unknown example {args.name!r}; choose from {', '.join(EXAMPLES)} or all\n", EXIT_INPUT
    flags = {k: getattr(args, k) for k in ("T", "dt", "eps", "hold", "C") if getattr(args, k) is not None}
    if args.jobs > 1 and len(names) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run_example, names, [args.out] * len(names), [flags] * len(names)))
    else:
        results = [run_example(n, args.out, flags) for n in names]
    return "\n".join(t for t, _ in results), max(c for _, c in results)


def _positive(s):
    v = float(s)
    if not v > 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cmtrack",
        description="Tracking-controller synthesis: check, synthesize, simulate, example.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def sim_flags(sp):
        sp.add_argument("--T", type=_positive, help="horizon")
        sp.add_argument("--dt", type=_positive, help="RK4 step")
        sp.add_argument("--eps", type=_positive, help="attenuation radius")
        sp.add_argument("--hold", type=float, help="time after which |e| <= eps must hold")
        sp.add_argument("--C", type=_positive, help="Lyapunov bound factor (default 10)")
        sp.add_argument("--out", default="out", help="output root directory")

    c = sub.add_parser("check", help="estimate constants and verify assumptions on a grid")
    c.add_argument("file")
    c.add_argument("--T-check", dest="T_check", type=_positive)
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("synthesize", help="select Delta and build the feedback law")
    s.add_argument("file")
    s.add_argument("--T-check", dest="T_check", type=_positive)
    s.set_defaults(func=cmd_synthesize)

    m = sub.add_parser("simulate", help="check, synthesize, simulate and classify")
    m.add_argument("file")
    sim_flags(m)
    m.set_defaults(func=cmd_simulate)

    e = sub.add_parser("example", help="run a built-in example end to end")
    e.add_argument("name", help=f"one of {', '.join(EXAMPLES)} or all")
    sim_flags(e)
    e.add_argument("--jobs", type=int, default=1, help="parallel workers for 'all'")
    e.set_defaults(func=cmd_example)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "example":
        text, code = args.func(args)
    else:
        try:
            text, code = _guard(lambda: args.func(args))
        except OSError as exc:
            text, code = f"error: {exc}\n", EXIT_INPUT
    sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
