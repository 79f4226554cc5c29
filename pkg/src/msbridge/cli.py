"""Command-line front end.

Wires calibration -> solve -> certify -> approx into reproducible runs
driven by a plain-text config file (key = value entries under sections).
Every run writes machine-readable CSV/JSON artifacts plus report figures
into the output directory; repeated runs with the same config and seed are
byte-identical.

Exit codes: 0 ok, 1 validation error, 2 numerical failure, 3 infeasible.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import figures
from .bridge import BridgeSolution, SolverOptions, feasibility_check, solve_bridge
from .calibration import CallQuote, implied_marginal
from .duality import duality_gap
from .approximation import entropy_convergence_report, bounded_approximation
from .errors import (
    ConvergenceError,
    InfeasibleError,
    StabilizationError,
    ValidationError,
)
from .measures import (
    DiscreteMeasure,
    JointMeasure,
    joint_tv_distance,
    relative_entropy,
    tv_distance,
)
from .oracle import brute_force_bridge
from .serialize import (
    ensure_dir,
    read_joint_csv,
    read_measure_csv,
    read_vector_csv,
    write_joint_csv,
    write_json,
    write_measure_csv,
    write_table_csv,
    write_vector_csv,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_INFEASIBLE = 3


@dataclass
class RunConfig:
    p_csv: str | None = None
    quotes_csv: str | None = None
    nu_csv: str | None = None
    h_csv: str | None = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    gammas: tuple[float, ...] = (1.0,)
    deltas: tuple[float, ...] = (1e-1, 1e-2, 1e-3)
    write_couplings: bool = False
    output_dir: str = "out"
    seed: int = 0

    def require(self, *names):
        for name in names:
            if getattr(self, name) is None:
                raise ValidationError(f"config is missing inputs.{name[:-4]}")


def _parse_floats(text: str) -> tuple[float, ...]:
    vals = tuple(float(tok) for tok in text.replace(",", " ").split())
    if not vals:
        raise ValidationError("empty numeric list in config")
    return vals


def load_config(path: str) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ValidationError(f"cannot read config file {path!r}")
    cfg = RunConfig()
    if parser.has_section("inputs"):
        sec = parser["inputs"]
        cfg.p_csv = sec.get("p", cfg.p_csv)
        cfg.quotes_csv = sec.get("quotes", cfg.quotes_csv)
        cfg.nu_csv = sec.get("nu", cfg.nu_csv)
        cfg.h_csv = sec.get("h", cfg.h_csv)
    if cfg.quotes_csv is not None and cfg.nu_csv is not None:
        raise ValidationError("provide exactly one of inputs.quotes and inputs.nu")
    if parser.has_section("solver"):
        sec = parser["solver"]
        cfg.solver = SolverOptions(
            max_iters=sec.getint("max_iters", SolverOptions.max_iters),
            marginal_tol=sec.getfloat("marginal_tol", SolverOptions.marginal_tol),
            martingale_tol=sec.getfloat("martingale_tol", SolverOptions.martingale_tol),
            newton_tol=sec.getfloat("newton_tol", SolverOptions.newton_tol),
            newton_max_steps=sec.getint("newton_max_steps", SolverOptions.newton_max_steps),
            damping=sec.getfloat("damping", SolverOptions.damping),
        )
    if parser.has_section("certify"):
        cfg.gammas = _parse_floats(parser["certify"].get("gammas", "1"))
        if any(g <= 0 for g in cfg.gammas):
            raise ValidationError("certify.gammas must be positive")
    if parser.has_section("approx"):
        sec = parser["approx"]
        cfg.deltas = _parse_floats(sec.get("deltas", "0.1 0.01 0.001"))
        cfg.write_couplings = sec.getboolean("write_couplings", False)
    if parser.has_section("run"):
        sec = parser["run"]
        cfg.output_dir = sec.get("output_dir", cfg.output_dir)
        cfg.seed = sec.getint("seed", cfg.seed)
    return cfg


def read_quotes_csv(path) -> list[CallQuote]:
    strikes, prices = read_vector_csv(path, ("strike", "price"))
    return [CallQuote(float(k), float(c)) for k, c in zip(strikes, prices)]


def _load_marginal(cfg: RunConfig, out: Path) -> DiscreteMeasure:
    """Marginal from inputs.nu, or via calibration when quotes are given."""
    if cfg.nu_csv is not None:
        return read_measure_csv(cfg.nu_csv)
    if cfg.quotes_csv is not None:
        report = implied_marginal(read_quotes_csv(cfg.quotes_csv))
        if not report.arbitrage_free:
            kinds = sorted({v.kind for v in report.violations})
            raise ValidationError(
                f"quote sheet carries static arbitrage ({', '.join(kinds)})"
            )
        write_measure_csv(out / "nu.csv", report.nu)
        return report.nu
    raise ValidationError("config provides neither inputs.nu nor inputs.quotes")


def _solution_payload(sol: BridgeSolution) -> dict:
    return {
        "entropy": sol.entropy,
        "log_normalizer": sol.potentials.c,
        "stock_positions": sol.potentials.h,
        "option_payoff": [
            None if not np.isfinite(v) else float(v) for v in sol.potentials.g
        ],
        "marginal_residual": sol.marginal_residual,
        "martingale_residual": sol.martingale_residual,
        "iterations": sol.iterations,
        "converged": sol.converged,
    }


# ---------------------------------------------------------------------------
# commands


def cmd_calibrate(cfg: RunConfig) -> int:
    cfg.require("quotes_csv")
    out = ensure_dir(cfg.output_dir)
    report = implied_marginal(read_quotes_csv(cfg.quotes_csv))
    write_measure_csv(out / "nu.csv", report.nu)
    write_json(
        out / "calibration.json",
        {
            "forward": report.forward,
            "arbitrage_free": report.arbitrage_free,
            "violations": [
                {"kind": v.kind, "strikes": list(v.strikes), "magnitude": v.magnitude}
                for v in report.violations
            ],
        },
    )
    figures.marginal_figure(out / "marginal.png", report.nu, report.forward)
    print(f"calibrate: wrote {out}/nu.csv ({len(report.violations)} violations)")
    return EXIT_OK


def cmd_solve(cfg: RunConfig) -> int:
    cfg.require("p_csv")
    out = ensure_dir(cfg.output_dir)
    p = read_joint_csv(cfg.p_csv)
    nu = _load_marginal(cfg, out)
    sol = solve_bridge(p, nu, cfg.solver)
    write_joint_csv(out / "q_star.csv", sol.q_star)
    write_json(out / "solution.json", _solution_payload(sol))
    figures.solution_figure(out / "bridge.png", p, sol)
    print(
        f"solve: entropy {sol.entropy:.12g}, residuals "
        f"{sol.marginal_residual:.3g}/{sol.martingale_residual:.3g}, "
        f"{sol.iterations} iterations"
    )
    return EXIT_OK


def cmd_certify(cfg: RunConfig) -> int:
    cfg.require("p_csv")
    out = ensure_dir(cfg.output_dir)
    p = read_joint_csv(cfg.p_csv)
    nu = _load_marginal(cfg, out)
    witness = feasibility_check(p, nu).witness
    certs = [duality_gap(p, nu, gamma, cfg.solver, witnesses=[witness]) for gamma in cfg.gammas]
    sol = certs[0].solution
    portfolio = None
    payload = []
    for cert in certs:
        report = cert.admissibility
        payload.append(
            {
                "gamma": cert.gamma,
                "primal_value": cert.primal_value,
                "dual_value": cert.dual_value,
                "gap": cert.gap,
                "price_defect": report.price_defect,
                "max_stock_gain_defect": report.max_stock_gain_defect,
                "admissible": report.passes(1e-8),
            }
        )
        portfolio = cert
    write_json(out / "certificate.json", {"certificates": payload})
    last = portfolio
    pf = _extract(last)
    write_vector_csv(out / "portfolio_h.csv", ("x", "h"), p.xgrid.points, pf.h)
    finite_g = np.where(np.isfinite(pf.g), pf.g, np.nan)
    write_vector_csv(out / "portfolio_g.csv", ("y", "g"), p.ygrid.points, finite_g)
    figures.portfolio_figure(out / "portfolio.png", p.xgrid.points, p.ygrid.points, pf, certs)
    worst = max(abs(c.gap) for c in certs)
    print(f"certify: {len(certs)} certificates, worst |gap| {worst:.3g}")
    return EXIT_OK if worst <= 1e-6 else EXIT_NUMERICAL


def _extract(cert):
    from .duality import extract_optimal_portfolio

    return extract_optimal_portfolio(cert.solution, cert.gamma)


def cmd_approx(cfg: RunConfig) -> int:
    cfg.require("p_csv")
    out = ensure_dir(cfg.output_dir)
    p = read_joint_csv(cfg.p_csv)
    nu = _load_marginal(cfg, out)
    sol = solve_bridge(p, nu, cfg.solver)
    if cfg.h_csv is not None:
        pts, h = read_vector_csv(cfg.h_csv, ("x", "h"))
        if not np.array_equal(pts, p.xgrid.points):
            raise ValidationError("h grid does not match the reference x-grid")
    else:
        h = sol.potentials.h
    deltas = tuple(sorted(cfg.deltas, reverse=True))
    rows = entropy_convergence_report(sol.q_star, p, h, list(deltas))
    write_table_csv(
        out / "convergence.csv",
        ["delta", "tv_to_q", "entropy", "entropy_gap", "h_bound", "keep_mass", "convexity_margin"],
        [
            [r.delta, r.tv_to_q, r.entropy, r.entropy_gap, r.h_bound, r.keep_mass, r.convexity_margin]
            for r in rows
        ],
    )
    if cfg.write_couplings:
        for idx, delta in enumerate(deltas):
            run = bounded_approximation(sol.q_star, p, h, delta)
            write_joint_csv(out / f"q_approx_{idx}.csv", run.q_approx)
    figures.convergence_figure(out / "approx.png", rows)
    print(f"approx: {len(rows)} deltas, final entropy gap {rows[-1].entropy_gap:.3g}")
    return EXIT_OK


def cmd_oracle(cfg: RunConfig) -> int:
    cfg.require("p_csv")
    out = ensure_dir(cfg.output_dir)
    p = read_joint_csv(cfg.p_csv)
    nu = _load_marginal(cfg, out)
    q, entropy = brute_force_bridge(p, nu)
    write_joint_csv(out / "q_oracle.csv", q)
    write_json(
        out / "oracle.json",
        {
            "entropy": entropy,
            "marginal_residual": tv_distance(q.second_marginal(), nu),
        },
    )
    print(f"oracle: entropy {entropy:.12g}")
    return EXIT_OK


def cmd_selftest(cfg: RunConfig) -> int:
    from . import selftest

    out = ensure_dir(cfg.output_dir)
    results = selftest.run_all(seed=cfg.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name.ljust(width)}  {'PASS' if r.passed else 'FAIL'}  {r.detail}")
    write_json(
        out / "selftest.json",
        {
            "seed": cfg.seed,
            "results": [
                {"name": r.name, "passed": r.passed, "detail": r.detail} for r in results
            ],
        },
    )
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERICAL


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_VALIDATION)


COMMANDS = {
    "calibrate": cmd_calibrate,
    "solve": cmd_solve,
    "certify": cmd_certify,
    "approx": cmd_approx,
    "oracle": cmd_oracle,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    parser = _Parser(prog="msbridge", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="plain-text key=value config file")
    parser.add_argument("--output-dir", default=None, help="override run.output_dir")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.output_dir is not None:
            cfg.output_dir = args.output_dir
        code = COMMANDS[args.command](cfg)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConvergenceError, StabilizationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return code


if __name__ == "__main__":
    sys.exit(main())
