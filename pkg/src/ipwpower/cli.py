"""Command-line front end.

Exit status: 0 on success, 2 on invalid input, 3 when the requested
overlap cannot be attained, 1 on any other failure.
"""

import argparse
import csv
import io
import json
import math
import sys

from .design import DesignInputs, Sidedness, design_variance, power_at, sample_size, sensitivity_grid
from .errors import (
    BoundViolationError,
    ConvergenceError,
    DomainError,
    EstimationError,
    InconsistencyError,
    InfeasibleOverlapError,
    RankDeficiencyError,
)
from .outcome import RSquaredBound
from .propensity import OverlapSpec
from .simharness import (
    OutcomeKind,
    SampleMode,
    SimulationConfig,
    empirical_power,
    extract_summaries,
    fit_logistic,
    generate,
)
from .variance import Estimand, TiltingFunction, WateDenominator

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3

SENSITIVITY_COLUMNS = ["phi", "rho2", "n", "power", "v_total", "v_sh", "v_adj", "error"]


class UsageError(Exception):
    """Invalid flag value; the message names the flag."""


def parse_grid(text, flag):
    """Comma list ``a,b,c`` or inclusive range ``start:stop:step``."""
    text = str(text).strip()
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3:
                raise ValueError
            start, stop, step = parts
            if not step > 0.0 or stop < start:
                raise UsageError(f"{flag}: range needs step > 0 and stop >= start, got {text!r}")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + i * step, 12) for i in range(count)]
        values = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected a comma list or start:stop:step, got {text!r}") from None
    if not values:
        raise UsageError(f"{flag}: empty grid")
    return values


def _common_design_flags(p, with_phi=True):
    p.add_argument("--r", type=float, help="treated proportion, in (0, 1)")
    if with_phi:
        p.add_argument("--phi", type=float, help="overlap coefficient, in (0, 1]")
        p.add_argument("--rho2", type=float, default=0.0, help="squared outcome/propensity correlation, in [0, 1)")
    p.add_argument("--effect", type=float, help="standardised effect size tau/S")
    p.add_argument("--tau", type=float, help="raw effect size (use with --s)")
    p.add_argument("--s", type=float, help="pooled outcome standard deviation (use with --tau)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--beta", type=float, default=0.8, help="target power")
    p.add_argument("--estimand", choices=[e.value for e in Estimand], default="ate")
    p.add_argument("--sided", choices=[s.value for s in Sidedness], default="two")
    p.add_argument("--r2-bound", type=float, help="R-squared bound on rho2")
    p.add_argument("--v0", type=float, help="standardised variance under estimated scores")
    p.add_argument(
        "--wate-denominator",
        choices=[d.value for d in WateDenominator],
        default=WateDenominator.SECOND_MOMENT.value,
    )
    _output_flags(p)


def _output_flags(p):
    p.add_argument("--output", help="write the report here instead of stdout")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--config", help="JSON file of flag defaults (keys are flag names)")


def build_parser():
    parser = argparse.ArgumentParser(prog="ipwpower", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("size", help="minimal sample size")
    _common_design_flags(p)

    p = sub.add_parser("power", help="analytic power at a given sample size")
    _common_design_flags(p)
    p.add_argument("--n", type=int, help="sample size, >= 2")

    p = sub.add_parser("sensitivity", help="sample size over a (phi, rho2) grid")
    _common_design_flags(p, with_phi=False)
    p.add_argument("--phi-grid", help="overlap values: a,b,c or start:stop:step")
    p.add_argument("--rho2-grid", help="rho2 values: a,b,c or start:stop:step")

    p = sub.add_parser("simulate", help="empirical power on a synthetic superpopulation")
    p.add_argument("--n-pop", type=int, default=200_000)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--beta0", type=float)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--noise-sd", type=float, default=4.0)
    p.add_argument("--outcome-kind", choices=[k.value for k in OutcomeKind], default="continuous")
    p.add_argument("--binary-threshold", type=float, default=-2.0)
    p.add_argument("--b-reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, help="study size; computed from the population summaries if omitted")
    p.add_argument("--mode", choices=[m.value for m in SampleMode], default=SampleMode.WITHOUT_REPLACEMENT.value)
    p.add_argument("--estimand", choices=[e.value for e in Estimand], default="ate")
    p.add_argument("--scores", choices=["true", "fitted"], default="fitted")
    p.add_argument(
        "--test",
        choices=["sandwich", "design"],
        default="sandwich",
        help="standard error from the replicate sandwich or from the design variance",
    )
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--beta", type=float, default=0.8)
    p.add_argument(
        "--wate-denominator",
        choices=[d.value for d in WateDenominator],
        default=WateDenominator.SECOND_MOMENT.value,
    )
    _output_flags(p)
    return parser


def _apply_config(parser, argv):
    """Re-parse with defaults from ``--config`` so explicit flags still win."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        with open(args.config) as fh:
            values = json.load(fh)
    except (OSError, ValueError) as exc:
        raise UsageError(f"--config: cannot read {args.config}: {exc}") from None
    if not isinstance(values, dict):
        raise UsageError("--config: expected a flat JSON object")
    known = vars(args)
    defaults = {}
    for key, value in values.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in known or dest in ("command", "config"):
            raise UsageError(f"--config: unknown key {key!r} for '{args.command}'")
        defaults[dest] = value
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _require(args, name):
    value = getattr(args, name)
    if value is None:
        raise UsageError(f"--{name.replace('_', '-')} is required")
    return value


def _in_range(name, value, lo, hi, lo_closed=False, hi_closed=False):
    ok = math.isfinite(value)
    ok = ok and (value >= lo if lo_closed else value > lo)
    ok = ok and (value <= hi if hi_closed else value < hi)
    if not ok:
        left = "[" if lo_closed else "("
        right = "]" if hi_closed else ")"
        raise UsageError(f"--{name}: must lie in {left}{lo}, {hi}{right}, got {value}")
    return value


def _effect(args):
    if args.effect is not None:
        if args.tau is not None or args.s is not None:
            raise UsageError("--effect cannot be combined with --tau/--s")
        return _in_range("effect", args.effect, 0.0, math.inf)
    if args.tau is None or args.s is None:
        raise UsageError("--effect (or both --tau and --s) is required")
    _in_range("s", args.s, 0.0, math.inf)
    return _in_range("tau", args.tau, 0.0, math.inf) / args.s


def _design_inputs(args, phi=None, rho2=None):
    r = _in_range("r", _require(args, "r"), 0.0, 1.0)
    if phi is None:
        phi = _in_range("phi", _require(args, "phi"), 0.0, 1.0, hi_closed=True)
    if rho2 is None:
        rho2 = _in_range("rho2", args.rho2, 0.0, 1.0, lo_closed=True)
    _in_range("alpha", args.alpha, 0.0, 0.5)
    _in_range("beta", args.beta, 0.5, 1.0)
    bound = None
    if args.r2_bound is not None:
        bound = RSquaredBound(_in_range("r2-bound", args.r2_bound, 0.0, 1.0, lo_closed=True))
        if rho2 > bound.r2:
            raise UsageError(f"--rho2: {rho2} exceeds --r2-bound {bound.r2}")
    if args.v0 is not None:
        _in_range("v0", args.v0, 0.0, math.inf)
    return DesignInputs(
        alpha=args.alpha,
        beta=args.beta,
        tau_std=_effect(args),
        overlap=OverlapSpec(r, phi),
        rho2=rho2,
        sidedness=args.sided,
        estimand=args.estimand,
        r2_bound=bound,
        v0_override=args.v0,
        wate_denominator=args.wate_denominator,
    )


def _report(n, power, vb, trace):
    return {
        "n": n,
        "power": power,
        "v_total": vb.v_total,
        "v_sh": vb.v_sh,
        "v_adj": vb.v_adj,
        "trace": {
            "a": trace.a,
            "b": trace.b,
            "mu_e": trace.mu_e,
            "sigma_e2": trace.sigma_e2,
            "cond_mean_0": trace.cond_mean[0],
            "cond_mean_1": trace.cond_mean[1],
            "cond_var_0": trace.cond_var[0],
            "cond_var_1": trace.cond_var[1],
            "r_implied": trace.r_implied,
        },
    }


def _flatten(record):
    flat = {}
    for key, value in record.items():
        if isinstance(value, dict):
            flat.update(value)
        else:
            flat[key] = value
    return flat


def _emit(args, rows, columns=None):
    """Write a list of records as JSON (single record unwrapped) or CSV."""
    if args.format == "json":
        payload = rows[0] if len(rows) == 1 and columns is None else rows
        text = json.dumps(payload, indent=2) + "\n"
    else:
        flat = [_flatten(r) for r in rows]
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=columns or list(flat[0]), lineterminator="\n")
        writer.writeheader()
        for row in flat:
            writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
        text = buf.getvalue()
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_size(args):
    res = sample_size(_design_inputs(args))
    _emit(args, [_report(res.n, res.power, res.variance, res.trace)])
    return EXIT_OK


def cmd_power(args):
    n = _require(args, "n")
    if n < 2:
        raise UsageError(f"--n: must be an integer >= 2, got {n}")
    d = _design_inputs(args)
    vb, trace = design_variance(d)
    _emit(args, [_report(n, power_at(d, n), vb, trace)])
    return EXIT_OK


def cmd_sensitivity(args):
    phis = parse_grid(_require(args, "phi_grid"), "--phi-grid")
    rho2s = parse_grid(_require(args, "rho2_grid"), "--rho2-grid")
    for phi in phis:
        _in_range("phi-grid", phi, 0.0, 1.0, hi_closed=True)
    for rho2 in rho2s:
        _in_range("rho2-grid", rho2, 0.0, 1.0, lo_closed=True)
    # The base design is validated at the first cell; bound violations stay per cell.
    base = _design_inputs(args, phi=max(phis), rho2=0.0)
    cells = sensitivity_grid(base, phis, rho2s)
    rows = []
    for c in cells:
        row = {"phi": c.phi, "rho2": c.rho2, "n": None, "power": None, "v_total": None, "v_sh": None, "v_adj": None, "error": c.error}
        if c.result is not None:
            v = c.result.variance
            row.update(n=c.result.n, power=c.result.power, v_total=v.v_total, v_sh=v.v_sh, v_adj=v.v_adj)
        rows.append(row)
    _emit(args, rows, SENSITIVITY_COLUMNS)
    if any(c.result is not None for c in cells):
        return EXIT_OK
    if any(c.error and c.error.startswith(InfeasibleOverlapError.__name__) for c in cells):
        return EXIT_INFEASIBLE
    return EXIT_INVALID


def cmd_simulate(args):
    _in_range("alpha", args.alpha, 0.0, 0.5)
    _in_range("beta", args.beta, 0.5, 1.0)
    cfg = SimulationConfig(
        n_pop=args.n_pop,
        kappa=args.kappa,
        beta0=args.beta0,
        tau=args.tau,
        noise_sd=args.noise_sd,
        outcome_kind=args.outcome_kind,
        binary_threshold=args.binary_threshold,
        b_reps=args.b_reps,
        seed=args.seed,
    )
    pop = fit_logistic(generate(cfg))
    s = extract_summaries(pop)
    d = DesignInputs(
        alpha=args.alpha,
        beta=args.beta,
        tau_std=abs(cfg.tau) / math.sqrt(s.s2_pooled) if cfg.tau != 0.0 else 1.0,
        overlap=OverlapSpec(s.r, min(s.phi_hat, 1.0)),
        rho2=s.rho2_pooled,
        estimand=args.estimand,
        wate_denominator=args.wate_denominator,
    )
    n = args.n
    if n is None:
        if cfg.tau == 0.0:
            raise UsageError("--n is required when --tau is 0")
        n = sample_size(d).n
    fixed = None
    if args.test == "design":
        vb, _ = design_variance(d)
        fixed = vb.v_total * s.s2_pooled / n
    res = empirical_power(
        pop,
        n,
        cfg.b_reps,
        h=TiltingFunction(args.estimand),
        use_fitted=args.scores == "fitted",
        alpha=args.alpha,
        mode=args.mode,
        seed=cfg.seed,
        fixed_variance=fixed,
    )
    _emit(args, [res.record(phi=s.phi_hat, rho2=s.rho2_pooled)])
    return EXIT_OK


COMMANDS = {"size": cmd_size, "power": cmd_power, "sensitivity": cmd_sensitivity, "simulate": cmd_simulate}


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except InfeasibleOverlapError as exc:
        print(f"error: --phi: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DomainError, BoundViolationError, InconsistencyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConvergenceError, EstimationError, RankDeficiencyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
