"""Command-line front end: ``defect-homog <subcommand> --config cfg.json``.

Exit codes: 0 success, 2 configuration or parse error, 3 numerical failure
(no convergence, degenerate linearization), 4 mesh/cell cap exceeded.
"""

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import harness
from .coeff import (
    check_Mr_membership,
    ellipticity_report,
    homogenized_matrix_A0,
)
from .config import load_config
from .errors import (
    ConfigError,
    DefectHomogError,
    FactorizationFailure,
    InsufficientPoints,
    MembershipViolation,
    MeshTooFine,
    ModelError,
    NoConvergence,
    NonElliptic,
    ParseError,
)
from .gridfn import GridFunction, uniform_mesh
from .model import eval_c, make_model
from .operators import make_instance
from .oracle import solve_fem
from .solver import (
    check_nondegeneracy,
    solve_eps,
    solve_homogenized,
    sufficient_nondegeneracy,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CAP = 0, 2, 3, 4
CONFIG_ERRORS = (ConfigError, ParseError, ModelError, NonElliptic, MembershipViolation,
                 InsufficientPoints)


class Degenerate(DefectHomogError):
    pass


# -- output ---------------------------------------------------------------------

def _clean(obj):
    """Make numpy scalars/arrays JSON-serializable, recursively."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    return obj


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Output:
    """Writes reports into one directory; every file carries hash and seed."""

    def __init__(self, cfg, out_dir, seed):
        self.cfg = cfg
        self.dir = out_dir
        self.seed = seed
        os.makedirs(out_dir, exist_ok=True)

    @property
    def meta(self):
        tol = self.cfg.tolerances
        return {
            "instance": self.cfg.name,
            "config_sha256": self.cfg.sha256,
            "seed": self.seed,
            "tolerances": {"newton": tol.newton, "fixed_point": tol.fixed_point,
                           "degeneracy": tol.degeneracy},
        }

    def header_lines(self):
        m = self.meta
        t = m["tolerances"]
        return [
            f"instance={m['instance']}",
            f"config_sha256={m['config_sha256']}",
            f"seed={m['seed']}",
            f"tolerances=newton:{t['newton']!r},fixed_point:{t['fixed_point']!r},"
            f"degeneracy:{t['degeneracy']!r}",
        ]

    def path(self, name):
        return os.path.join(self.dir, name)

    def json(self, name, payload):
        doc = dict(self.meta, **_clean(payload))
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
        with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        return self.path(name)

    def table(self, name, columns, rows):
        buf = io.StringIO()
        for line in self.header_lines():
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])
        with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(buf.getvalue())
        return self.path(name)

    def grid(self, name, u):
        with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(u.to_csv(self.header_lines()))
        return self.path(name)


def _eps_tag(eps):
    return repr(float(eps)).replace(".", "p").replace("-", "m")


# -- subcommands ----------------------------------------------------------------

def _instance(cfg, eps, B=None, check=True):
    return make_instance(cfg.field_A(), cfg.field_B() if B is None else B, cfg.model(), eps,
                         r=cfg.r, N_target=cfg.mesh.N_target, cap=cfg.mesh.cap, check=check)


def _homogenized(cfg, inst):
    return solve_homogenized(inst, tol=cfg.tolerances.newton)


def cmd_homogenize(cfg, args, out):
    inst = _instance(cfg, None)
    u0, rep = _homogenized(cfg, inst)
    A0 = homogenized_matrix_A0(inst.A)
    out.json("homogenize.json", {"A0": A0, "newton": rep.to_dict()})
    out.grid("u0.csv", u0)
    print("A0 =", json.dumps(_clean(A0)))
    sys.stdout.write(u0.to_csv(out.header_lines()))
    return EXIT_OK


def cmd_check(cfg, args, out):
    A, B = cfg.field_A(), cfg.field_B()
    ell = ellipticity_report(A, B)
    mem = check_Mr_membership(A, B, cfg.r)
    payload = {"ellipticity": vars(ell), "ellipticity_valid": ell.valid,
               "membership": vars(mem)}
    if not ell.valid:
        out.json("check.json", payload)
        raise NonElliptic(f"coefficient not uniformly elliptic (m_A={ell.m_A:.3g}, "
                          f"m_AB={ell.m_AB:.3g})")
    inst = _instance(cfg, None, check=False)
    u0, _ = _homogenized(cfg, inst)
    nd = check_nondegeneracy(inst, u0, threshold=cfg.tolerances.degeneracy)
    suff = sufficient_nondegeneracy(inst, u0)
    payload.update({
        "alpha": nd.alpha,
        "alpha_refined": nd.alpha_refined,
        "degenerate": nd.degenerate,
        "degeneracy_reason": nd.reason,
        "sufficient_condition": suff,
    })
    out.json("check.json", payload)
    print(f"alpha = {nd.alpha!r}")
    print(f"degenerate = {str(nd.degenerate).lower()}")
    print(f"sufficient_condition = {str(suff).lower()}")
    print(f"member_M_r = {str(mem.member).lower()}")
    if nd.degenerate:
        raise Degenerate(f"linearization at u0 is degenerate: {nd.reason}")
    return EXIT_OK


def _eps_list(cfg, args, default):
    return list(args.epsilon) if args.epsilon else list(default)


def cmd_solve(cfg, args, out):
    eps_list = _eps_list(cfg, args, cfg.epsilons[:1])
    for eps in eps_list:
        inst = _instance(cfg, eps)
        u0, _ = _homogenized(cfg, inst)
        tag = _eps_tag(eps)
        try:
            rep = solve_eps(inst, u0, tol=cfg.tolerances.fixed_point)
        except NoConvergence as exc:
            trace = out.json(f"trace_{tag}.json", {
                "eps": eps, "message": str(exc),
                "step_sizes": exc.residuals, "contraction_factors": exc.factors,
            })
            exc.trace_path = trace
            raise
        out.json(f"solve_{tag}.json", rep.to_dict())
        out.grid(f"u_eps_{tag}.csv", rep.solution)
        print(f"eps={eps!r} iterations={rep.iterations} error_vs_u0={rep.error_vs_u0!r} "
              f"alpha={rep.alpha!r} bound_ok={str(rep.bound_2_8_satisfied).lower()}")
    return EXIT_OK


def _late_ok(row, eps_max=2.0**-4, qmax=0.55):
    return row.eps > eps_max or row.max_late_factor is None or row.max_late_factor <= qmax


def _rate_checks(tables):
    conv = [r for t in tables for r in t.rows if r.converged]
    return {
        "slope_in_0.9_1.1": all(t.fitted_slope is not None and 0.9 <= t.fitted_slope <= 1.1
                                for t in tables),
        "all_rows_converged": all(r.converged for t in tables for r in t.rows),
        "error_bound_every_run": all(r.bound_ok for r in conv),
        "late_factors_le_0.55": all(_late_ok(r) for r in conv),
    }


def _rate_rows(table):
    return [[table.defect_id] + r.as_list() for r in table.rows]


def cmd_rates(cfg, args, out):
    inst = _instance(cfg, cfg.epsilons[0])
    eps_list = _eps_list(cfg, args, cfg.epsilons)
    did = "B" if cfg.B is not None else "zero"
    table = harness.rate_study(inst, eps_list, inst.B, did, tol=cfg.tolerances.fixed_point)
    out.table("rates.csv", ["defect_id"] + harness.RATE_COLUMNS, _rate_rows(table))
    out.json("rates.json", {"table": table.to_dict(), "checks": _rate_checks([table])})
    print(f"fitted_slope = {table.fitted_slope!r}")
    return EXIT_OK


def cmd_sweep(cfg, args, out):
    defects = cfg.defect_list()
    inst = _instance(cfg, cfg.epsilons[0], B=defects[0][1], check=False)
    eps_list = _eps_list(cfg, args, cfg.epsilons)
    sweep = harness.defect_sweep(inst, eps_list, defects, tol=cfg.tolerances.fixed_point)
    rows = [row for t in sweep.tables for row in _rate_rows(t)]
    out.table("sweep.csv", ["defect_id"] + harness.RATE_COLUMNS, rows)
    checks = _rate_checks(sweep.tables)
    checks["defect_ratio_le_5"] = all(s is not None and s <= 5.0 for s in sweep.spread)
    out.json("sweep.json", {"sweep": sweep.to_dict(), "checks": checks})
    for t in sweep.tables:
        print(f"{t.defect_id}: fitted_slope = {t.fitted_slope!r}")
    print(f"max defect ratio = {max(s for s in sweep.spread if s is not None)!r}")
    return EXIT_OK


def _averaging_u(cfg):
    n = cfg.n
    if len(cfg.averaging.u) != n:
        raise ConfigError(f"averaging.u needs {n} components")
    # u-independent expressions in x, evaluated through the c-slot of a model
    m = make_model(cfg.averaging.u, ["0"] * n, n)
    mesh = uniform_mesh(cfg.averaging.N)
    vals = eval_c(m, mesh.nodes, np.zeros((mesh.nodes.size, n)))
    return GridFunction(mesh, vals)


def cmd_averaging(cfg, args, out):
    u = _averaging_u(cfg)
    eps_list = _eps_list(cfg, args, cfg.averaging.epsilons)
    tab = harness.averaging_check(cfg.field_A(), cfg.field_B(), eps_list, u,
                                  samples=cfg.averaging.samples, seed=out.seed)
    out.table("averaging.csv", ["eps", "sup_value", "full_interval", "scaled"],
              [[r.eps, r.sup_value, r.full_interval, r.scaled] for r in tab.rows])
    checks = {
        "slope_in_0.9_1.1": tab.slope is not None and 0.9 <= tab.slope <= 1.1,
        "gamma_hat_spread_lt_2": tab.scaled_spread is not None and tab.scaled_spread < 2.0,
    }
    out.json("averaging.json", {"table": tab.to_dict(), "checks": checks})
    print(f"slope = {tab.slope!r} gamma_hat = {tab.gamma_hat!r}")
    return EXIT_OK


def cmd_oracle(cfg, args, out):
    s = args.refine if args.refine else cfg.oracle.refine
    eps = args.epsilon[0] if args.epsilon else cfg.oracle.epsilon
    inst = _instance(cfg, eps)
    comp = harness.oracle_compare(inst, (s, 2 * s))
    fem = solve_fem(inst, s)
    out.grid(f"oracle_s{s}.csv", fem.solution)
    rows = [[r.refine, r.h_oracle, r.sup_difference, r.tolerance, r.ratio_to_previous, r.within]
            for r in comp.rows]
    out.table("oracle_compare.csv",
              ["refine", "h_oracle", "sup_difference", "tolerance", "ratio_to_previous",
               "within"], rows)
    checks = {"within_tolerance": all(r.within for r in comp.rows)}
    out.json("oracle_compare.json", {"comparison": comp.to_dict(), "checks": checks,
                                     "oracle_newton_residual": fem.newton_residual})
    for r in comp.rows:
        print(f"s={r.refine} diff={r.sup_difference!r} tol={r.tolerance!r}")
    return EXIT_OK


def cmd_opnorm(cfg, args, out):
    inst = _instance(cfg, cfg.epsilons[0])
    eps_list = _eps_list(cfg, args, cfg.opnorm.epsilons)
    tab = harness.operator_convergence_demo(inst, eps_list, cfg.opnorm.test_vectors,
                                            seed=out.seed)
    k = cfg.opnorm.test_vectors
    out.table("opnorm.csv",
              ["eps"] + [f"v{j + 1}" for j in range(k)] + ["opnorm_inf", "opnorm_2"],
              [[r.eps] + list(r.vector_norms) + [r.opnorm_inf, r.opnorm_2] for r in tab.rows])
    d = tab.to_dict()
    slopes = [s for s in d["vector_slopes"] if s is not None]
    d["opnorm_to_vector_slope_ratio"] = (
        d["opnorm_inf_slope"] / min(slopes) if slopes and d["opnorm_inf_slope"] else None
    )
    out.json("opnorm.json", {"table": d, "checks": {"per_vector_monotone": all(d["monotone"])}})
    print(f"vector slopes = {d['vector_slopes']!r}")
    print(f"opnorm_inf slope = {d['opnorm_inf_slope']!r}")
    return EXIT_OK


COMMANDS = {
    "homogenize": cmd_homogenize,
    "check": cmd_check,
    "solve": cmd_solve,
    "rates": cmd_rates,
    "sweep-defects": cmd_sweep,
    "averaging": cmd_averaging,
    "oracle-compare": cmd_oracle,
    "opnorm-demo": cmd_opnorm,
}


def build_parser():
    p = argparse.ArgumentParser(prog="defect-homog", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--out-dir", help="output directory (overrides the config)")
        sp.add_argument("--epsilon", type=float, action="append",
                        help="eps value; repeat for several")
        sp.add_argument("--refine", type=int, help="oracle refinement factor s")
        sp.add_argument("--seed", type=int, help="seed (overrides the config)")
    return p


def _fail(code, msg):
    print(f"error: {msg}", file=sys.stderr)
    return code


def run(argv=None):
    """Parse ``argv``, run one subcommand and return the exit code."""
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        seed = cfg.seed if args.seed is None else args.seed
        out_dir = args.out_dir or cfg.output_dir or os.path.join("out", cfg.name)
        out = Output(cfg, out_dir, seed)
        if args.epsilon and any(e <= 0 for e in args.epsilon):
            raise ConfigError("--epsilon must be positive")
        if args.refine is not None and args.refine < 1:
            raise ConfigError("--refine must be at least 1")
        return COMMANDS[args.command](cfg, args, out)
    except ParseError as exc:
        return _fail(EXIT_CONFIG, f"ParseError: {exc} [offset {exc.offset}]")
    except CONFIG_ERRORS as exc:
        return _fail(EXIT_CONFIG, f"{type(exc).__name__}: {exc}")
    except MeshTooFine as exc:
        return _fail(EXIT_CAP, f"MeshTooFine: {exc}")
    except NoConvergence as exc:
        trace = getattr(exc, "trace_path", None)
        msg = f"NoConvergence: {exc}"
        if trace:
            msg += f"; q_k trace written to {trace}"
        return _fail(EXIT_NUMERIC, msg)
    except (Degenerate, FactorizationFailure, DefectHomogError) as exc:
        return _fail(EXIT_NUMERIC, f"{type(exc).__name__}: {exc}")


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
