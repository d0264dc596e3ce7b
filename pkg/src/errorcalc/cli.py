"""Command-line front end.

``errorcalc <subcommand> --config FILE [--seed S] [--workers W] [--out PATH]
[--format json|csv] [--a A] [--timing]``.  Exit codes: 0 success, 1 domain or
configuration error, 2 numerical error, 3 failed acceptance check.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time

import numpy as np

from . import asymptotics, config as cfgmod, fisher as fishermod, jeffreys, models, priors, transforms
from .domain import ParameterDomain
from .exceptions import ConfigError, DomainError, ErrorCalcError, NumericalError, PreconditionError
from .models import Branch, BranchMap
from .structure import ErrorStructure, Functional, from_model, propagate_bias

SUBCOMMANDS = ("fisher", "propagate", "image", "product", "simulate", "crlb", "compare-bounds",
               "jeffreys", "selftest")
EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 1, 2, 3


class _Stage:
    """Remembers which config block is being processed, for error messages."""

    def __init__(self):
        self.key = "config"

    def __call__(self, key: str) -> "_Stage":
        self.key = key
        return self


# -- builders -----------------------------------------------------------------------

def build_model(cfg: cfgmod.ExperimentConfig, section: str = "model") -> models.ParametricModel:
    block = cfg.section(section)
    family = cfg.require(f"{section}.family")
    factory = models.BUILTIN_FAMILIES[family]
    kwargs = {}
    for key in ("lower", "upper"):
        if key in block:
            kwargs[key] = block[key]
    if block.get("excluded"):
        if family == "squared-mixture":
            raise ConfigError("squared-mixture does not take excluded points", f"{section}.excluded")
        kwargs["excluded"] = block["excluded"]
    try:
        return factory(**kwargs)
    except DomainError as exc:
        raise ConfigError(str(exc), section) from None


def build_prior(cfg, model: models.ParametricModel, section: str = "prior") -> priors.PriorMeasure:
    kind = cfg.get(f"{section}.kind", "uniform")
    if kind == "uniform":
        return priors.uniform(model.domain)
    if kind == "jeffreys":
        return jeffreys.jeffreys_prior(model, cfg.get("run.grid", priors.DEFAULT_GRID))
    expr = cfg.require(f"{section}.density")
    return priors.from_density(model.domain, lambda t: expr(np.asarray(t)[..., 0]), name=str(expr))


def _expression_branch(fields: dict, key: str) -> Branch:
    for f in ("lower", "upper", "forward", "inverse"):
        if f not in fields:
            raise ConfigError("missing branch field", f"{key}.{f}")
    fwd, inv = fields["forward"], fields["inverse"]
    deriv = fields.get("derivative")
    return Branch(fields["lower"], fields["upper"], fwd, inv, deriv if deriv is not None else fwd.derivative)


def build_psi(cfg, domain: ParameterDomain, section: str = "psi") -> BranchMap:
    name = cfg.get(f"{section}.map", "identity")
    if name == "identity":
        return models.identity_map(domain)
    if name == "square":
        return models.square_map(domain)
    if name == "cube":
        return models.cube_map(domain)
    if name == "exp":
        return models.exp_map(domain)
    if name == "log":
        return models.log_map(domain)
    if name.startswith("affine"):
        slope, intercept = cfgmod.affine_parameters(name)
        return models.affine_map(domain, slope, intercept)
    pieces = tuple(_expression_branch(b, f"{section}.branch.{i + 1}") for i, b in enumerate(cfg.branches(section)))
    if not pieces:
        raise ConfigError("map 'branches' needs at least one psi.branch.N block", f"{section}.branch")
    ends = []
    for p in pieces:
        lo = max(p.lower[0], domain.lower[0])
        hi = min(p.upper[0], domain.upper[0])
        ends += [float(p.forward(np.float64(lo))), float(p.forward(np.float64(hi)))]
    image = ParameterDomain.interval(cfg.get(f"{section}.image.lower", min(ends)),
                                     cfg.get(f"{section}.image.upper", max(ends)))
    lip = cfg.get(f"{section}.lipschitz")
    if lip is None:
        # sampled slope bound with a small safety margin
        grid = np.linspace(domain.lower[0], domain.upper[0], 4097)[1:-1]
        slopes = [np.abs(p.derivative(grid[(grid > p.lower[0]) & (grid < p.upper[0])])) for p in pieces]
        lip = 1.01 * float(max(np.max(s) for s in slopes if s.size))
    psi = BranchMap(domain, pieces, image, lip, name="psi")
    psi.validate()
    return psi


def build_structure(cfg, model, prior, section: str = "model") -> ErrorStructure:
    return from_model(model, prior, cfg.get(f"{section}.fisher", "auto"),
                      assume_closable=cfg.get(f"{section}.closable", False))


def _functional(cfg) -> Functional:
    expr = cfg.get("run.functional")
    if expr is None:
        return Functional.identity()
    return Functional(lambda t: expr(t[0]), 1, 1, lambda t: np.atleast_1d(expr.derivative(t[0])), name=str(expr))


def _theta(cfg, model) -> np.ndarray:
    theta = cfg.get("run.theta")
    if not theta:
        raise ConfigError("missing required key", "run.theta")
    return model.domain.check(theta)


def _grid_a(cfg, args, psi: BranchMap) -> list[float]:
    if args.a is not None:
        return [args.a]
    a = cfg.get("run.a")
    if a:
        return list(a)
    return [float(v) for v in psi.image_domain.grid(9)]


# -- subcommands --------------------------------------------------------------------------

def cmd_fisher(cfg, args, stage):
    stage("model")
    model = build_model(cfg)
    theta = _theta(cfg, model)
    stage("run.method")
    method = cfg.get("run.method", "quadrature" if model.dim_obs == 1 else "monte-carlo")
    J = fishermod.fisher_information(model, theta, method, n=cfg.get("run.n", 200_000), seed=args.seed,
                                     atol=cfg.get("run.tolerance"))
    reg = fishermod.check_regularity(J)
    value = J.value if J.dim == 1 else J.matrix.tolist()
    reference = None
    if model.fisher_fn is not None:
        ref = model.fisher(theta)
        reference = float(ref[0, 0]) if J.dim == 1 else ref.tolist()
    se = None if J.mc_std_err is None else (float(J.mc_std_err[0, 0]) if J.dim == 1 else J.mc_std_err.tolist())
    return {"target": "J(theta)", "estimate": value, "std_err": se, "reference": reference,
            "provenance": J.method, "J": value, "method": J.method, "theta": theta.tolist(),
            "regular": reg.passed, "condition_number": reg.condition_number}, \
        f"J({theta.tolist()}) = {value} [{J.method}], regular={reg.passed}"


def cmd_propagate(cfg, args, stage):
    stage("model")
    model = build_model(cfg)
    stage("prior")
    prior = build_prior(cfg, model)
    stage("model")
    s = build_structure(cfg, model, prior)
    stage("run")
    theta = _theta(cfg, model)
    F = _functional(cfg)
    g = s.gamma(F, theta=theta)
    grad = s.gradient(F, theta)
    report = {"target": f"Gamma[{F.name}](theta)", "estimate": g, "std_err": None,
              "reference": None, "provenance": s.provenance, "theta": theta.tolist(),
              "gradient": grad.tolist(), "basis": list(s.basis)}
    if cfg.get("run.bias") is not None:
        expr = cfg.get("run.functional")
        fn = (lambda u: float(expr(u))) if expr is not None else (lambda u: u)
        gamma_u = float(s.gamma_matrix(theta)[0, 0])
        report["bias"] = propagate_bias(fn, float(theta[0]), cfg.get("run.bias"), gamma_u)
    return report, f"Gamma[{F.name}]({theta.tolist()}) = {g:.12g}"


def cmd_image(cfg, args, stage):
    stage("model")
    model = build_model(cfg)
    stage("prior")
    prior = build_prior(cfg, model)
    stage("model")
    s = build_structure(cfg, model, prior)
    stage("psi")
    psi = build_psi(cfg, model.domain)
    stage("run")
    F = None if cfg.get("run.functional") is None else _functional(cfg)
    path = cfg.get("run.path", "auto")
    if path == "auto":
        path = "closed-form" if psi.injective else "branch-exact"
    rows = []
    for a in _grid_a(cfg, args, psi):
        row = {"a": a, "path": path}
        if path == "closed-form":
            img = transforms.image_injective(s, psi)
            g = float(img.gamma_matrix([a])[0, 0])
            if F is not None:
                d = float(F.grad([a])[0])
                g *= d * d
            row.update(gamma=g, std_err=None)
        elif path == "branch-exact":
            row.update(gamma=transforms.image_conditional_exact(s, psi, F, a), std_err=None)
        else:
            bw = cfg.get("run.bandwidth", "auto")
            est = transforms.image_conditional_mc(s, psi, F, a, cfg.get("run.n", 1_000_000),
                                                  bw if bw == "auto" else float(bw), seed=args.seed,
                                                  bootstrap=cfg.get("run.bootstrap", 200))
            row.update(gamma=est.estimate, std_err=est.std_err, bandwidth=est.bandwidth,
                       effective_sample_size=est.effective_sample_size)
        rows.append(row)
    report = {"target": "Gamma_psi[F](a)", "estimate": rows[0]["gamma"] if len(rows) == 1 else None,
              "std_err": rows[0]["std_err"] if len(rows) == 1 else None, "reference": None,
              "provenance": path, "rows": rows}
    summary = "\n".join(f"a={r['a']:g}: Gamma={r['gamma']:.10g}" for r in rows)
    return report, summary


def cmd_product(cfg, args, stage):
    stage("model")
    m1 = build_model(cfg, "model")
    p1 = build_prior(cfg, m1, "prior")
    s1 = build_structure(cfg, m1, p1, "model")
    stage("model2")
    if not cfg.has("model2"):
        raise ConfigError("missing required key", "model2.family")
    m2 = build_model(cfg, "model2")
    p2 = build_prior(cfg, m2, "prior2")
    s2 = build_structure(cfg, m2, p2, "model2")
    stage("run.theta")
    s = transforms.product(s1, s2)
    theta = s.domain.check(cfg.require("run.theta"))
    g = s.gamma_matrix(theta)
    total = s.gamma(Functional(lambda t: t.sum(), s.dim, 1, lambda t: np.ones(s.dim), name="sum"), theta=theta)
    return {"target": "Gamma(theta1, theta2)", "estimate": g.tolist(), "std_err": None, "reference": None,
            "provenance": s.provenance, "gamma_sum": total, "theta": theta.tolist()}, \
        f"Gamma = {g.tolist()}, Gamma[theta1+theta2] = {total:.12g}"


def cmd_simulate(cfg, args, stage):
    stage("model")
    model = build_model(cfg)
    kind = cfg.get("run.kind", "psi-variance" if cfg.has("psi") else "mle")
    n = cfg.get("run.n", 10_000)
    reps = cfg.get("run.reps", 10_000)
    if kind == "mle":
        stage("run")
        rep = asymptotics.simulate_mle_asymptotics(model, _theta(cfg, model), n, reps, args.seed,
                                                   workers=args.workers)
    else:
        stage("prior")
        prior = build_prior(cfg, model)
        stage("psi")
        psi = build_psi(cfg, model.domain)
        stage("run")
        a = args.a if args.a is not None else (cfg.get("run.a") or (None,))[0]
        if a is None:
            raise ConfigError("missing required key", "run.a")
        s = build_structure(cfg, model, prior)
        rep = asymptotics.simulate_psi_variance(model, prior, psi, a, n, reps, cfg.get("run.window"), args.seed,
                                                center=cfg.get("run.center", "antecedent"), structure=s,
                                                workers=args.workers)
    d = rep.to_dict()
    d["provenance"] = d.pop("reference_provenance")
    return d, f"{rep.target} = {rep.estimate:.6g} +/- {rep.std_err:.2g} (reference {rep.reference_value})"


def cmd_crlb(cfg, args, stage):
    stage("model")
    model = build_model(cfg)
    stage("run")
    theta = _theta(cfg, model)
    est = cfg.get("run.estimator", "mean")
    expr = cfg.get("run.functional")
    if est == "mle":
        base = lambda x: asymptotics.mle_batch(model, x)[0]
    else:
        base = {"mean": lambda x: np.mean(x, axis=-1), "median": lambda x: np.median(x, axis=-1)}[est]

    # plug-in: the configured functional is applied to the estimate of theta
    def estimator(x):
        t = base(x)
        return t if expr is None else expr(t)
    estimator.vectorized = True
    F = None if expr is None else _functional(cfg)
    res = asymptotics.crlb_check(model, estimator, F, theta, cfg.get("run.n", 10_000), cfg.get("run.reps", 10_000),
                                 args.seed, workers=args.workers)
    d = res.report.to_dict()
    d["provenance"] = d.pop("reference_provenance")
    d["passed"] = res.passed
    return d, f"risk = {res.report.estimate:.6g} +/- {res.report.std_err:.2g}, bound = {res.bound:.6g}, pass={res.passed}"


def cmd_compare_bounds(cfg, args, stage):
    stage("model")
    model = build_model(cfg)
    stage("prior")
    prior = build_prior(cfg, model)
    stage("model")
    s = build_structure(cfg, model, prior)
    stage("psi")
    psi = build_psi(cfg, model.domain)
    q = models.pushforward_model(model, prior, psi)
    stage("run")
    tol = cfg.get("run.tolerance", 1e-6)
    rows = []
    for a in _grid_a(cfg, args, psi):
        c = asymptotics.fisher_vs_gamma(q, s, psi, a, atol=tol)
        row = {"a": a, "gamma_psi": c.gamma_psi, "inv_fisher_Q": c.inv_fisher, "strict": c.strict}
        if cfg.get("run.lemma", False) and not psi.injective:
            split = asymptotics.split_information(model, prior, psi, a)
            row.update(lemma_whole=split.whole, lemma_parts=sum(split.parts), lemma_holds=split.holds)
        rows.append(row)
    report = {"target": "1/J^Q(a) vs Gamma_psi[Id](a)", "estimate": None, "std_err": None, "reference": None,
              "provenance": "quadrature / branch-exact", "strict": all(r["strict"] for r in rows), "rows": rows}
    if len(rows) == 1:
        report.update({k: v for k, v in rows[0].items() if k != "a"}, estimate=rows[0]["inv_fisher_Q"],
                      reference=rows[0]["gamma_psi"], a=rows[0]["a"])
    summary = "\n".join(f"a={r['a']:g}: 1/J^Q={r['inv_fisher_Q']:.10g} Gamma_psi={r['gamma_psi']:.10g} "
                        f"strict={r['strict']}" for r in rows)
    return report, summary


def cmd_jeffreys(cfg, args, stage):
    stage("model")
    model = build_model(cfg)
    stage("run.grid")
    prior = jeffreys.jeffreys_prior(model, cfg.get("run.grid", priors.DEFAULT_GRID))
    pts = model.domain.grid(cfg.get("run.n", 9), margin=1e-3) if model.dim_param == 1 else np.empty(0)
    rows = [{"theta": float(t), "density": float(prior.density([t]))} for t in pts]
    report = {"target": "jeffreys density", "estimate": None, "std_err": None, "reference": None,
              "provenance": "sqrt(det J)/K", "normalization": prior.mass, "rows": rows}
    summary = f"Jeffreys prior of {model.name} on {model.domain}: mass {prior.mass:.12g}"
    if cfg.has("psi"):
        stage("psi")
        psi = build_psi(cfg, model.domain)
        inv = jeffreys.verify_jeffreys_invariance(model, psi)
        report["invariance_gap"] = inv.gap
        summary += f", invariance gap under {psi.name}: {inv.gap:.3g}"
    return report, summary


def cmd_selftest(cfg, args, stage):
    from . import acceptance

    results = acceptance.run_all(seed=args.seed, workers=args.workers, verbose=True, stream=sys.stdout)
    report = {"target": "acceptance", "estimate": sum(r.passed for r in results), "std_err": None,
              "reference": len(results), "provenance": "selftest",
              "rows": [{"criterion": r.number, "name": r.name, "passed": r.passed, "detail": r.detail}
                       for r in results]}
    return report, f"{sum(r.passed for r in results)}/{len(results)} acceptance criteria passed"


COMMANDS = {
    "fisher": cmd_fisher,
    "propagate": cmd_propagate,
    "image": cmd_image,
    "product": cmd_product,
    "simulate": cmd_simulate,
    "crlb": cmd_crlb,
    "compare-bounds": cmd_compare_bounds,
    "jeffreys": cmd_jeffreys,
    "selftest": cmd_selftest,
}


# -- output -----------------------------------------------------------------------------

def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(u) for k, u in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(u) for u in v]
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, list):
            out[key] = json.dumps(v)
        else:
            out[key] = v
    return out


def render(report: dict, fmt: str) -> str:
    report = _jsonable(report)
    if fmt == "json":
        return json.dumps(report, sort_keys=True, indent=2) + "\n"
    buf = io.StringIO()
    rows = report.get("rows")
    if rows:
        base = {k: v for k, v in report.items() if k != "rows" and not isinstance(v, (dict, list))}
        flat = [_flatten({**{f"report.{k}": v for k, v in base.items()}, **r}) for r in rows]
    else:
        flat = [_flatten(report)]
    header = sorted({k for r in flat for k in r})
    writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    writer.writeheader()
    for r in flat:
        writer.writerow(r)
    return buf.getvalue()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="errorcalc", description="Error calculus from Fisher information.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="key=value experiment file")
    parser.add_argument("--seed", type=int, default=None, help="root seed (overrides run.seed)")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out", default=None, help="report path (overrides output.path)")
    parser.add_argument("--format", choices=("json", "csv"), default=None)
    parser.add_argument("--a", type=float, default=None, help="image point (overrides run.a)")
    parser.add_argument("--timing", action="store_true", help="record runtime_ms in the report")
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    stage = _Stage()
    where = args.config or "<no config>"
    started = time.perf_counter()
    try:
        if args.subcommand == "selftest" and args.config is None:
            cfg = cfgmod.ExperimentConfig({"model.family": "normal-location"})
        elif args.config is None:
            raise ConfigError("--config is required for this subcommand", "--config")
        else:
            cfg = cfgmod.load(args.config)
        if args.seed is None:
            if args.subcommand == "selftest":
                from .acceptance import SEED
                args.seed = cfg.get("run.seed", SEED)
            else:
                args.seed = cfg.get("run.seed", 0)
        report, summary = COMMANDS[args.subcommand](cfg, args, stage)
    except (ConfigError, DomainError, PreconditionError) as exc:
        key = getattr(exc, "key", None) or stage.key
        print(f"error [{where}: {key}]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical error [{where}: {stage.key}]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ErrorCalcError as exc:
        print(f"error [{where}: {stage.key}]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    report.setdefault("seed", args.seed)
    report["runtime_ms"] = round(1000 * (time.perf_counter() - started), 1) if args.timing else None
    fmt = args.format or cfg.get("output.format", "json")
    path = args.out or cfg.get("output.path")
    text = render(report, fmt)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(summary)
    if not path:
        sys.stdout.write(text)
    if args.subcommand == "selftest" and report["estimate"] != report["reference"]:
        return EXIT_ACCEPTANCE
    return EXIT_OK


def main() -> None:
    try:
        code = run()
        sys.stdout.flush()
    except BrokenPipeError:
        # downstream reader closed early (e.g. `| head`); not an error for us
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        code = 0
    sys.exit(code)


if __name__ == "__main__":
    main()
