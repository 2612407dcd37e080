"""Command-line front end: estimate, synthesize, check.

Exit codes: 0 success/converged, 1 input errors, 2 estimation did not
converge, 3 singular gain matrix.  Every run writes a manifest echo
next to its outputs; `estimate --manifest` and `synthesize --manifest`
replay a recorded run.  Result files carry 12 significant digits;
measurement and truth files keep full precision so reruns are
bit-identical in zero-noise mode.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .errors import EstimationError, InputError, SingularGain
from .estimators import (
    Formulation,
    SolverConfig,
    assemble_problem,
    result_to_dict,
    solve,
)
from .measurements import load_measurements, measurements_to_dict
from .network import assemble_admittance, load_network
from .states import StateVector
from .synthesis import (
    load_scenario,
    sample_true_state,
    state_from_dict,
    synthesize,
    truth_to_dict,
)

FORMULATION_TAGS = [f.value for f in Formulation]


def _round_sig(obj, digits: int = 12):
    """Recursively round floats to a fixed number of significant digits."""
    if isinstance(obj, float):
        return float(f"{obj:.{digits}g}")
    if isinstance(obj, dict):
        return {k: _round_sig(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_sig(v, digits) for v in obj]
    return obj


def _write_json(path: str, doc: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def _resolve(path: str, base: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base, path)


def _cmd_estimate(args) -> int:
    if args.manifest:
        doc = _load_json(args.manifest)
        if doc.get("command") != "estimate":
            raise InputError(f"{args.manifest} is not an estimate manifest")
        base = os.path.dirname(os.path.abspath(args.manifest))
        net_path = _resolve(doc["network"], base)
        meas_path = _resolve(doc["measurements"], base)
        formulation = doc["formulation"]
        cfg_doc = doc.get("config", {})
        cfg = SolverConfig(
            max_iterations=int(cfg_doc.get("max_iterations", 50)),
            step_tolerance=float(cfg_doc.get("step_tolerance", 1e-8)),
            linear_system_method=cfg_doc.get("linear_system_method", "normal"),
            neglect_phasor_covariance=bool(
                cfg_doc.get("neglect_phasor_covariance", False)),
        )
        init_path = doc.get("init")
        if init_path:
            init_path = _resolve(init_path, base)
        out_dir = args.out or doc.get("out", ".")
    else:
        if not args.net or not args.measurements or not args.formulation:
            raise InputError(
                "estimate needs --net, --measurements and --formulation "
                "(or --manifest)")
        net_path = args.net
        meas_path = args.measurements
        formulation = args.formulation
        cfg = SolverConfig(
            max_iterations=args.max_iter,
            step_tolerance=args.tol,
            linear_system_method=args.linear_method,
            neglect_phasor_covariance=args.neglect_phasor_cov,
        )
        init_path = args.init
        out_dir = args.out or "."
    try:
        formulation = Formulation(formulation)
    except ValueError:
        raise InputError(
            f"unknown formulation {formulation!r}; choose from "
            f"{FORMULATION_TAGS}") from None

    net = load_network(net_path)
    mset = load_measurements(meas_path)
    x0: StateVector | None = None
    if init_path:
        init_doc = _load_json(init_path)
        x0 = state_from_dict(init_doc.get("state", init_doc))

    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": "estimate",
        "tool_version": __version__,
        "network": os.path.abspath(net_path),
        "measurements": os.path.abspath(meas_path),
        "formulation": formulation.value,
        "config": {
            "max_iterations": cfg.max_iterations,
            "step_tolerance": cfg.step_tolerance,
            "linear_system_method": cfg.linear_system_method,
            "neglect_phasor_covariance": cfg.neglect_phasor_covariance,
        },
        "init": os.path.abspath(init_path) if init_path else None,
        "out": os.path.abspath(out_dir),
    }
    _write_json(os.path.join(out_dir, "manifest.json"), _round_sig(manifest))

    problem = assemble_problem(
        net, mset, formulation,
        neglect_phasor_covariance=cfg.neglect_phasor_covariance)
    result = solve(problem, cfg, x0)

    doc = _round_sig(result_to_dict(problem, result))
    result_path = os.path.join(out_dir, "result.json")
    _write_json(result_path, doc)

    objective = result.objective_trace[-1] if result.objective_trace else float("nan")
    max_resid = float(max(abs(r) for r in result.residuals)) if len(result.residuals) else 0.0
    exit_code = 0 if result.converged else 2
    if args.json:
        print(json.dumps(_round_sig({
            "formulation": formulation.value,
            "converged": result.converged,
            "iterations": result.iterations,
            "objective": objective,
            "max_abs_residual": max_resid,
            "result_file": result_path,
            "exit_code": exit_code,
        })))
    else:
        status = "converged" if result.converged else "NOT CONVERGED"
        print(f"{formulation}: {status} in {result.iterations} iteration(s), "
              f"objective {objective:.6g}, max |residual| {max_resid:.6g} "
              f"-> {result_path}")
    return exit_code


def _cmd_synthesize(args) -> int:
    spec = load_scenario(args.spec)
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    x_true = sample_true_state(spec)
    mset = synthesize(spec, x_true)
    os.makedirs(args.out, exist_ok=True)
    manifest = {
        "command": "synthesize",
        "tool_version": __version__,
        "spec": args.spec,
        "seed": spec.seed,
        "out": args.out,
    }
    _write_json(os.path.join(args.out, "manifest.json"), manifest)
    meas_path = os.path.join(args.out, "measurements.json")
    truth_path = os.path.join(args.out, "truth.json")
    _write_json(meas_path, measurements_to_dict(mset))
    _write_json(truth_path, truth_to_dict(spec, x_true))
    if args.json:
        print(json.dumps({
            "rows": len(mset),
            "seed": spec.seed,
            "measurement_file": meas_path,
            "truth_file": truth_path,
        }))
    else:
        print(f"synthesized {len(mset)} measurement(s) with seed {spec.seed} "
              f"-> {meas_path}")
    return 0


def _cmd_check(args) -> int:
    net = load_network(args.net)
    y = assemble_admittance(net)
    if args.json:
        print(json.dumps({
            "buses": net.n_buses,
            "branches": len(net.branches),
            "admittance_nonzeros": y.nnz,
            "slack_bus": net.slack_bus,
            "base_mva": net.base_mva,
        }))
    else:
        print(f"ok: N={net.n_buses} buses, {len(net.branches)} branch(es), "
              f"{y.nnz} admittance nonzeros, slack bus {net.slack_bus}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridse",
        description="Weighted least-squares state estimation for "
                    "transmission grids.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="solve a WLS estimation problem")
    est.add_argument("--net", help="network JSON file")
    est.add_argument("--measurements", help="measurement JSON file")
    est.add_argument("--formulation",
                     help="measurement model family: " + ", ".join(FORMULATION_TAGS))
    est.add_argument("--max-iter", type=int, default=50,
                     help="Gauss-Newton iteration cap (default 50)")
    est.add_argument("--tol", type=float, default=1e-8,
                     help="max |dx| stopping threshold (default 1e-8)")
    est.add_argument("--linear-method", choices=["normal", "orthogonal"],
                     default="normal",
                     help="gain solve: normal equations or QR (default normal)")
    est.add_argument("--neglect-phasor-cov", action="store_true",
                     help="ignore recorded rectangular-phasor covariance blocks")
    est.add_argument("--init", help="warm-start state JSON file")
    est.add_argument("--out", help="output directory (default .)")
    est.add_argument("--manifest", help="replay a recorded run manifest")
    est.add_argument("--json", action="store_true",
                     help="machine-readable summary on stdout")
    est.set_defaults(func=_cmd_estimate)

    syn = sub.add_parser("synthesize", help="generate a synthetic scenario")
    syn.add_argument("--spec", required=True, help="scenario spec JSON file")
    syn.add_argument("--out", default=".", help="output directory")
    syn.add_argument("--seed", type=int, help="override the spec seed")
    syn.add_argument("--json", action="store_true",
                     help="machine-readable summary on stdout")
    syn.set_defaults(func=_cmd_synthesize)

    chk = sub.add_parser("check", help="validate a network file")
    chk.add_argument("--net", required=True, help="network JSON file")
    chk.add_argument("--json", action="store_true",
                     help="machine-readable summary on stdout")
    chk.set_defaults(func=_cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SingularGain as exc:
        print(f"error: singular gain: {exc}", file=sys.stderr)
        return 3
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
