"""Experiment runner: config parsing, solver runs and CSV output."""

from __future__ import annotations

import argparse
import configparser
import csv
import math
import os
import sys
from dataclasses import dataclass, field, fields
from typing import List, Optional

import numpy as np

from .linesearch import LineSearchParams
from .minres import Tag
from .problems import (Dataset, gaussian_blobs, load_dataset, logistic_problem,
                       nls_problem, pl_quadratic)
from .solver import (NoisyHessian, SolverConfig, SubsampledHessian, TerminationReason,
                     exact_hessian, newton_mr_first_order, newton_mr_second_order)
from . import spectral

TRACE_COLUMNS = ["k", "f", "grad_norm", "step_tag", "alpha", "inner_iters", "oracle_calls"]
PROBLEMS = ("logistic", "nls", "pl_quadratic", "synthetic_blobs")

EXIT_OK, EXIT_ERROR, EXIT_BUDGET = 0, 1, 2


def fmt(v) -> str:
    """Round-trippable decimal for reals; plain text otherwise."""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


@dataclass
class ExperimentConfig:
    """One experiment. ``hessian`` is ``exact``, ``sub:F`` or ``noisy:EPS``."""

    problem: str = "pl_quadratic"
    dataset: Optional[str] = None
    label_rule: str = "sign"
    hessian: str = "exact"
    solver: str = "first"
    eps_g: float = 1e-8
    eps_h: float = 1e-2
    eta: float = 0.01
    eps_noise: float = 0.0
    rho_s: float = 1e-4
    rho_n: float = 1e-4
    h: float = 0.5
    max_oracle: float = 1e6
    max_iters: int = 10_000
    seed: int = 0
    out: str = "out"
    dim: int = 50
    n_samples: int = 2000
    mu: float = 0.1
    lipschitz: float = 10.0
    separation: float = 1.0
    reg: float = 0.0

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.solver not in ("first", "second"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.problem in ("logistic", "nls") and not self.dataset:
            raise ValueError(f"problem {self.problem!r} needs --dataset")
        if self.dataset and not os.path.isfile(self.dataset):
            raise ValueError(f"dataset not found: {self.dataset}")
        parse_hessian(self.hessian)

    def solver_config(self) -> SolverConfig:
        ls = LineSearchParams(rho_S=self.rho_s, rho_N=self.rho_n, h=self.h)
        return SolverConfig(eps_g=self.eps_g, eps_H=self.eps_h, eta=self.eta,
                            eps_noise=self.eps_noise, ls=ls, max_outer_iters=self.max_iters,
                            max_oracle_calls=self.max_oracle, seed=self.seed)


def parse_hessian(spec: str):
    """``exact`` / ``sub:F`` / ``noisy:EPS`` to a Hessian source."""
    if spec == "exact":
        return exact_hessian
    kind, _, val = spec.partition(":")
    try:
        num = float(val)
    except ValueError:
        raise ValueError(f"bad hessian spec {spec!r}") from None
    if kind == "sub":
        if not 0 < num <= 1:
            raise ValueError("subsample fraction must lie in (0, 1]")
        return SubsampledHessian(num)
    if kind == "noisy":
        if num < 0:
            raise ValueError("noise level must be nonnegative")
        return NoisyHessian(num)
    raise ValueError(f"bad hessian spec {spec!r}")


def _coerce(name, raw):
    for f in fields(ExperimentConfig):
        if f.name == name:
            default = f.default
            if default is None:
                return raw
            return type(default)(raw) if not isinstance(default, bool) else raw in ("1", "true", "yes")
    raise ValueError(f"unknown config key {name!r}")


def read_config_file(path) -> dict:
    """Flat ``key = value`` pairs from every section; later sections win."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ValueError(f"cannot read config {path}")
    out = {}
    for section in parser.sections():
        for key, val in parser.items(section):
            key = key.replace("-", "_")
            out[key] = _coerce(key, val)
    return out


def build_problem(cfg: ExperimentConfig):
    if cfg.problem == "pl_quadratic":
        return pl_quadratic(cfg.dim, cfg.mu, cfg.lipschitz, seed=cfg.seed)
    if cfg.problem == "synthetic_blobs":
        data = gaussian_blobs(cfg.n_samples, cfg.dim, cfg.separation, seed=cfg.seed)
        return logistic_problem(data, reg=cfg.reg)
    data = load_dataset(cfg.dataset, cfg.label_rule)
    if cfg.problem == "logistic":
        return logistic_problem(data, reg=cfg.reg)
    return nls_problem(data, reg=cfg.reg)


def write_trace(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in records:
            w.writerow([r.k, fmt(r.f), fmt(r.grad_norm), r.step_tag, fmt(r.alpha),
                        r.inner_iters, fmt(float(r.cumulative_oracle))])


def write_summary(path, result):
    c = result.counter
    rows = [("reason", result.reason.value),
            ("iterations", len(result.records) - 1),
            ("final_f", fmt(result.records[-1].f) if result.records else "nan"),
            ("final_grad_norm", fmt(result.records[-1].grad_norm) if result.records else "nan"),
            ("function_calls", c.function_calls),
            ("gradient_calls", c.gradient_calls),
            ("hvp_calls", c.hvp_calls),
            ("oracle_calls", fmt(float(c.weighted_total))),
            ("message", result.message)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "value"])
        w.writerows(rows)


def exit_code(reason: TerminationReason) -> int:
    if reason in (TerminationReason.FIRST_ORDER_OPTIMAL, TerminationReason.SECOND_ORDER_OPTIMAL):
        return EXIT_OK
    if reason is TerminationReason.BUDGET_EXHAUSTED:
        return EXIT_BUDGET
    return EXIT_ERROR


def run_experiment(cfg: ExperimentConfig, stderr=None) -> int:
    """Run one configured experiment; writes ``trace.csv`` and ``summary.csv``."""
    stderr = stderr or sys.stderr
    try:
        cfg.validate()
        problem = build_problem(cfg)
        source = parse_hessian(cfg.hessian)
        scfg = cfg.solver_config()
        driver = newton_mr_second_order if cfg.solver == "second" else newton_mr_first_order
        result = driver(problem, source, scfg)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_ERROR
    os.makedirs(cfg.out, exist_ok=True)
    write_trace(os.path.join(cfg.out, "trace.csv"), result.records)
    write_summary(os.path.join(cfg.out, "summary.csv"), result)
    if result.message:
        print(f"{result.reason.value}: {result.message}", file=stderr)
    return exit_code(result.reason)


@dataclass
class SuiteReport:
    checks: List[tuple] = field(default_factory=list)

    def add(self, name, ok, detail=""):
        self.checks.append((name, bool(ok), detail))

    @property
    def passed(self):
        return all(ok for _, ok, _ in self.checks)

    def lines(self):
        return [f"{'PASS' if ok else 'FAIL'} {name} {detail}".rstrip()
                for name, ok, detail in self.checks]


def run_example_suite(out_dir: Optional[str] = None, tol: float = 1e-12) -> SuiteReport:
    """Closed-form checks for the 2x2 examples and the epsilon sweeps on the 30x30 construction."""
    rep = SuiteReport()
    L, mu = 2.0, 1.0
    for eps in (0.1, 0.5, 0.9):
        cf = spectral.example1_closed_forms(L, mu, eps)
        out = spectral.two_by_two_run(L, mu, eps)
        a1 = out.trace[0].alpha_tilde
        b2 = out.trace[0].beta_next
        rep.add(f"example1_alpha1[eps={eps}]", abs(a1 - cf["alpha1"]) <= tol,
                f"got {a1:.17g} expected {cf['alpha1']:.17g}")
        rep.add(f"example1_beta2[eps={eps}]", abs(b2 - cf["beta2"]) <= tol,
                f"got {b2:.17g} expected {cf['beta2']:.17g}")
        rep.add(f"example1_npc_t2[eps={eps}]", out.tag is Tag.NPC and out.iterations == 2,
                f"tag {out.tag.value} at t={out.iterations}")
    out = spectral.two_by_two_run(L, mu, mu)
    rep.add("example1_zero_curvature[eps=mu]", out.tag is Tag.NPC, f"tag {out.tag.value}")
    out = spectral.two_by_two_run(L, mu, 1.5)
    rep.add("example1_no_npc[eps>mu]", out.tag is not Tag.NPC, f"tag {out.tag.value}")

    for h in (0.1, 1.0, 10.0):
        bound = h / math.sqrt(1 + h * h)
        for eps in (0.25, 0.99, mu):
            _, rel, it = spectral.npc_relative_residual_study(
                dict(kind="example3", L_g=L, mu=mu, h=h, epsilons=[eps]))[0]
            tag = f"[h={h},eps={eps}]"
            rep.add(f"example3_bound{tag}", not math.isnan(rel) and rel >= bound - tol,
                    f"npc at t={it} rel {rel:.6g} >= {bound:.6g}")
            if spectral.example3_npc_at_first(L, mu, eps, h):
                rep.add(f"example3_first_iteration{tag}", it == 1 and abs(rel - 1.0) <= tol,
                        f"npc at t={it}")
            else:
                closed = spectral.example3_relative_residual(L, mu, eps, h)
                rep.add(f"example3_closed_form{tag}", it == 2 and abs(rel - closed) <= tol,
                        f"got {rel:.17g} expected {closed:.17g}")

    eps_grid = [1e-1, 1e-2, 1e-3, 1e-4]
    lam_rows = spectral.lambda_min_study(eps_grid)
    res_rows = spectral.npc_relative_residual_study(dict(kind="example2", epsilons=eps_grid))
    lam_pre = {e: spectral.pre_npc_lambda_min(e) for e in eps_grid}
    res = {e: r for e, r, _ in res_rows}
    rep.add("example2_lambda_min_eps_independent", abs(lam_pre[1e-3] - lam_pre[1e-4]) < 1e-2,
            f"{lam_pre[1e-3]:.6g} vs {lam_pre[1e-4]:.6g}")
    rep.add("example4_residual_eps_independent", abs(res[1e-3] - res[1e-4]) < 1e-2,
            f"{res[1e-3]:.6g} vs {res[1e-4]:.6g}")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        spectral.write_rows_csv(os.path.join(out_dir, "lambda_min.csv"),
                                ["epsilon", "iteration", "lambda_min_Tt"], lam_rows)
        spectral.write_rows_csv(os.path.join(out_dir, "npc_residual.csv"),
                                ["epsilon", "relative_residual", "npc_iteration"], res_rows)
        with open(os.path.join(out_dir, "report.txt"), "w") as fh:
            fh.write("\n".join(rep.lines()) + "\n")
    return rep


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="newtonmr", description="Newton-MR experiment runner")
    p.add_argument("--config", help="key=value config file with section headers")
    p.add_argument("--examples", action="store_true", help="run the worked-example suite")
    p.add_argument("--problem", choices=PROBLEMS)
    p.add_argument("--dataset")
    p.add_argument("--label-rule", dest="label_rule")
    p.add_argument("--hessian", help="exact | sub:FRACTION | noisy:EPS")
    p.add_argument("--solver", choices=("first", "second"))
    p.add_argument("--eps-g", dest="eps_g", type=float)
    p.add_argument("--eps-h", dest="eps_h", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--eps-noise", dest="eps_noise", type=float)
    p.add_argument("--rho-s", dest="rho_s", type=float)
    p.add_argument("--rho-n", dest="rho_n", type=float)
    p.add_argument("--h", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-oracle", dest="max_oracle", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--out")
    p.add_argument("--dim", type=int)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--lipschitz", type=float)
    p.add_argument("--separation", type=float)
    p.add_argument("--reg", type=float)
    return p


def config_from_args(args) -> ExperimentConfig:
    values = read_config_file(args.config) if args.config else {}
    for f in fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return ExperimentConfig(**values)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad flags, which would read as budget exhaustion
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    try:
        cfg = config_from_args(args)
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.examples:
        rep = run_example_suite(cfg.out)
        print("\n".join(rep.lines()))
        return EXIT_OK if rep.passed else EXIT_ERROR
    return run_experiment(cfg)
