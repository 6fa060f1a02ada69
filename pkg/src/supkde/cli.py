"""Command-line front end.

Every output embeds the resolved run configuration and the library version;
passing such an output back through ``--config`` reruns the same command.

Exit codes: 0 success, 1 unexpected failure, 2 invalid configuration,
3 data ingestion error, 4 empty candidate set, 5 quadrature or constant
nonconvergence, 6 kernel assumption check failed. Failures print a JSON
object to stderr and leave no output files behind.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .constants import ConstantsContext, ConstantsError, constants_report
from .densities import DensityError, density_from_config, parse_density_spec
from .estimators import Dataset, EstimatorBank, EstimatorError, EvaluationGrid, check_bandwidth
from .harness import (
    HarnessError,
    PipelineConfig,
    QuadratureError,
    SmoothnessSpec,
    default_threads,
    mc_risk,
    rate_experiment,
    structure_recovery,
)
from .io import IngestionError, OutputSet, read_data, rows_to_csv
from .kernels import Kernel, KernelError, build_convolution_table, build_polynomial_kernel, check_assumptions
from .partitions import Partition, PartitionError, resolve_family
from .selection import CandidateError, select

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_INGEST, EXIT_EMPTY, EXIT_QUAD, EXIT_CHECK = 0, 1, 2, 3, 4, 5, 6


class ConfigError(ValueError):
    pass


class CheckFailed(RuntimeError):
    pass


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (IngestionError, FileNotFoundError)):
        return EXIT_INGEST
    if isinstance(exc, CandidateError):
        return EXIT_EMPTY
    if isinstance(exc, QuadratureError) or (isinstance(exc, ConstantsError) and "converge" in str(exc)):
        return EXIT_QUAD
    if isinstance(exc, CheckFailed):
        return EXIT_CHECK
    if isinstance(exc, (ConfigError, PartitionError, KernelError, ConstantsError, EstimatorError, HarnessError, DensityError)):
        return EXIT_CONFIG
    return EXIT_OTHER


# resolution helpers -------------------------------------------------------


def load_kernel(spec: str) -> Kernel:
    """``default`` (moment order 1), ``b=N`` / ``N``, or a kernel JSON file."""
    if spec == "default":
        return build_polynomial_kernel(1)
    s = spec[2:] if spec.startswith("b=") else spec
    if s.isdigit():
        return build_polynomial_kernel(int(s))
    try:
        text = Path(spec).read_text()
    except OSError:
        raise ConfigError(f"kernel {spec!r} is neither 'default', a moment order, nor a readable JSON file") from None
    try:
        return Kernel.from_json(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"kernel file {spec}: invalid JSON ({exc.msg})") from None


def _floats(s: str, what: str) -> list[float]:
    try:
        return [float(x) for x in s.replace(" ", "").split(",") if x]
    except ValueError:
        raise ConfigError(f"{what} must be comma-separated numbers, got {s!r}") from None


def _context(args, d: int, kernel: Kernel) -> ConstantsContext:
    if args.mode == "theoretical" and args.kappa is not None:
        raise ConfigError("--kappa only applies in calibrated mode")
    kw = {} if args.kappa is None else {"kappa": args.kappa}
    return ConstantsContext.for_kernel(kernel, d, q=args.q, mode=args.mode, a_floor=args.a_floor, **kw)


def _density(spec: str):
    if os.path.isfile(spec):
        with open(spec) as fh:
            cfg = json.load(fh)
    else:
        cfg = parse_density_spec(spec)
    return density_from_config(cfg), cfg


def _pipeline(args, kernel: Kernel, d: int) -> PipelineConfig:
    ctx = _context(args, d, kernel)
    return PipelineConfig(
        kernel=kernel,
        mode=ctx.mode,
        kappa=ctx.kappa,
        q_lambda=ctx.q,
        a_floor=ctx.a_floor,
        family=resolve_family(args.family, d),
        spacing=args.grid_res,
        k_max=args.k_max,
        eta_budget=args.eta_budget,
    )


def _provenance(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    return {"version": __version__, "config": cfg}


# commands -----------------------------------------------------------------


def cmd_select(args, out: OutputSet) -> dict:
    data = Dataset(read_data(args.data))
    kernel = load_kernel(args.kernel)
    family = resolve_family(args.family, data.d)
    res = select(
        data,
        kernel,
        _context(args, data.d, kernel),
        family,
        spacing=args.grid_res,
        k_max=args.k_max,
        eta_budget=args.eta_budget,
        threads=args.threads,
    )
    body = {**_provenance(args), "data": data.summary(), "kernel": kernel.to_json(), "result": res.to_json()}
    if res.mode == "theoretical":
        body["note"] = "theoretical lambda is very conservative at moderate n; see calibrated mode"
    out.add_json(args.out, body)
    if args.table_csv:
        rows = [
            {"h": " ".join(repr(v) for v in r.h), "P": str(r.P), "delta_hat": r.delta, "lambda_A_hat": r.penalty, "criterion": r.criterion, "V": r.volume}
            for r in res.table
        ]
        out.add_text(args.table_csv, rows_to_csv(rows))
    return {"h_hat": list(res.h_hat), "P_hat": res.P_hat.to_json(), "criterion": res.criterion}


def cmd_fit(args, out: OutputSet) -> dict:
    data = Dataset(read_data(args.data))
    kernel = load_kernel(args.kernel)
    h = check_bandwidth(_floats(args.h, "--h"), data.d)
    p = Partition.from_json(args.partition, data.d) if args.partition else Partition.trivial(data.d)
    spacing = args.grid_res if args.grid_res is not None else min(h) / 4.0
    grid = EvaluationGrid.for_data(data, h, spacing)
    est = EstimatorBank(data, kernel, grid).estimator(h, p)
    body = {
        **_provenance(args),
        "data": data.summary(),
        "kernel": kernel.to_json(),
        "h": list(h),
        "P": p.to_json(),
        "grid": grid.to_json(),
        "blocks": [[j + 1 for j in b] for b in est.blocks],
        "tables": [t.tolist() for t in est.tables],
        "block_mass": est.marginal_mass(),
    }
    out.add_json(args.out, body)
    if args.csv:
        rows = []
        for b, t in zip(est.blocks, est.tables):
            for idx in np.ndindex(t.shape):
                row = {"block": "{" + ",".join(str(j + 1) for j in b) + "}"}
                for pos, j in enumerate(b):
                    row[f"x{j + 1}"] = float(grid.axes[j][idx[pos]])
                row["value"] = float(t[idx])
                rows.append(row)
        # blocks differ in their coordinate columns, so pad to a common header
        cols = ["block"] + [f"x{j + 1}" for j in range(data.d)] + ["value"]
        out.add_text(args.csv, rows_to_csv([{c: r.get(c) for c in cols} for r in rows]))
    return {"blocks": body["blocks"], "block_mass": body["block_mass"]}


def cmd_constants(args, out: OutputSet) -> dict:
    kernel = load_kernel(args.kernel)
    rep = {**_provenance(args), **constants_report(args.q, args.s, kernel)}
    out.add_json(args.out, rep)
    return {k: rep[k] for k in ("delta_star", "C_s", "tau", "gamma", "Lambda", "a_star")}


def cmd_kernel_check(args, out: OutputSet) -> dict:
    kernel = load_kernel(args.kernel)
    rep = check_assumptions(kernel)
    body = {**_provenance(args), "kernel": kernel.to_json(), "report": rep.to_json()}
    if args.profile:
        h, eta = _floats(args.profile, "--profile")
        prof = build_convolution_table(kernel, h, eta)
        body["convolution"] = {"h": h, "eta": eta, "mass": prof.mass(), "nodes": len(prof.z)}
    out.add_json(args.out, body)
    if not rep.all_ok:
        out.commit()
        failed = [k for k in ("integral_ok", "support_ok", "symmetric", "lipschitz_finite", "moments_ok") if not getattr(rep, k)]
        raise CheckFailed(f"kernel fails assumption checks: {failed}")
    return {"all_ok": rep.all_ok}


def cmd_simulate(args, out: OutputSet) -> dict:
    f, dcfg = _density(args.density)
    kernel = load_kernel(args.kernel)
    cfg = _pipeline(args, kernel, f.d)
    est = mc_risk(f, cfg, args.n, args.reps, args.q_risk, args.seed, args.threads, with_oracle=args.oracle_ratio)
    body = {**_provenance(args), "density": f.describe(), "pipeline": cfg.to_json(), "summary": est.summary()}
    out.add_json(args.out, body)
    out.add_text(args.csv, rows_to_csv(r.to_row() for r in est.replicates))
    return est.summary()


def cmd_rates(args, out: OutputSet) -> dict:
    f, dcfg = _density(args.density)
    kernel = load_kernel(args.kernel)
    cfg = _pipeline(args, kernel, f.d)
    beta = _floats(args.beta, "--beta")
    p = [float("inf") if x in ("inf", "Inf") else float(x) for x in args.p.split(",")]
    if len(beta) == 1:
        beta = beta * f.d
    if len(p) == 1:
        p = p * f.d
    spec = SmoothnessSpec(tuple(beta), tuple(p), f.P_true)
    ns = [int(x) for x in _floats(args.n_list, "--n-list")]
    res = rate_experiment(f, spec, cfg, ns, args.reps, args.q_risk, args.seed, args.threads)
    body = {**_provenance(args), "density": f.describe(), "pipeline": cfg.to_json(), "rates": res.to_json()}
    out.add_json(args.out, body)
    rows = [{"n": r.n, "risk": r.risk, "stderr": r.stderr, "reps": len(r.replicates)} for r in res.risks]
    out.add_text(args.csv, rows_to_csv(rows))
    return {"slope": res.fit.slope, "theoretical_slope": res.fit.theoretical_slope}


def cmd_structure(args, out: OutputSet) -> dict:
    f, dcfg = _density(args.density)
    kernel = load_kernel(args.kernel)
    cfg = _pipeline(args, kernel, f.d)
    res = structure_recovery(f, cfg, args.n, args.reps, args.seed, args.threads)
    body = {**_provenance(args), "density": f.describe(), "pipeline": cfg.to_json(), **{k: v for k, v in res.items() if k != "replicates"}}
    out.add_json(args.out, body)
    out.add_text(args.csv, rows_to_csv(res["replicates"]))
    return res["frequencies"]


# parser -------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config or a previous output; explicit flags override it")
    p.add_argument("--out", help="output JSON path")


def _selection_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kernel", default="default", help="'default', a moment order, or a kernel JSON file")
    p.add_argument("--mode", choices=("calibrated", "theoretical"), default="calibrated")
    p.add_argument("--kappa", type=float, default=None, help="penalty multiplier in calibrated mode (default 0.5)")
    p.add_argument("--a-floor", dest="a_floor", type=float, default=None, help="bandwidth-set threshold a* override")
    p.add_argument("--q", type=float, default=1.0, help="moment order q entering the constants")
    p.add_argument("--family", default="auto", help="auto | all | trivial | independent | capped:D0 | partitions JSON file")
    p.add_argument("--grid-res", dest="grid_res", type=float, default=None, help="grid spacing per axis")
    p.add_argument("--k-max", dest="k_max", type=int, default=None, help="cap on the dyadic bandwidth depth")
    p.add_argument("--budget", dest="eta_budget", type=int, default=None, help="subsample comparison candidates (departure, off by default)")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $SUPKDE_THREADS or CPU count)")


def _experiment_flags(p: argparse.ArgumentParser, reps_default: int = 32) -> None:
    p.add_argument("--density", required=True, help="kind:key=value,... or a density JSON file")
    p.add_argument("--reps", type=int, default=reps_default)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--q-risk", dest="q_risk", type=float, default=1.0, help="risk exponent q")
    p.add_argument("--csv", help="per-replicate or per-n CSV path")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="supkde", description="Adaptive kernel density estimation with structure selection.")
    ap.add_argument("--version", action="version", version=f"supkde {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("select", help="select (h, P) for a dataset")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--table-csv", dest="table_csv")
    _selection_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("fit", help="fit one product estimator on a grid")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--kernel", default="default")
    p.add_argument("--h", required=True, help="comma-separated bandwidths")
    p.add_argument("--partition", help="1-based JSON partition, default the single block")
    p.add_argument("--grid-res", dest="grid_res", type=float, default=None)
    p.add_argument("--csv", help="long-format CSV of the block tables")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("constants", help="report the explicit constants")
    _common(p)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--kernel", default="default")
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("kernel-check", help="check kernel assumptions")
    _common(p)
    p.add_argument("--kernel", default="default")
    p.add_argument("--profile", help="'h,eta' convolution profile to report")
    p.set_defaults(func=cmd_kernel_check)

    for name, fn, help_ in (
        ("simulate", cmd_simulate, "Monte Carlo sup-norm risk"),
        ("structure", cmd_structure, "frequency of selected partitions"),
    ):
        p = sub.add_parser(name, help=help_)
        _common(p)
        _experiment_flags(p)
        p.add_argument("--n", type=int, required=True)
        _selection_flags(p)
        if name == "simulate":
            p.add_argument("--oracle-ratio", dest="oracle_ratio", action="store_true", help="also record the best candidate's error")
        p.set_defaults(func=fn)

    p = sub.add_parser("rates", help="fit the risk decay slope")
    _common(p)
    _experiment_flags(p)
    p.add_argument("--n-list", dest="n_list", required=True)
    p.add_argument("--beta", default="2")
    p.add_argument("--p", default="inf")
    _selection_flags(p)
    p.set_defaults(func=cmd_rates)
    return ap


def parse_args(argv: list[str]) -> argparse.Namespace:
    ap = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if known.config:
        try:
            with open(known.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load config {known.config}: {exc}") from None
        cfg = cfg.get("config", cfg)
        command = next((a for a in rest if not a.startswith("-")), None)
        sub = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction))
        if command not in sub.choices:
            raise ConfigError("a subcommand is required alongside --config")
        if cfg.get("command", command) != command:
            raise ConfigError(f"config is for {cfg['command']!r}, not {command!r}")
        sp = sub.choices[command]
        known_dests = {a.dest for a in sp._actions}
        unknown = sorted(k for k in cfg if k not in known_dests and k != "command")
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        sp.set_defaults(**{k: v for k, v in cfg.items() if k in known_dests})
        for a in sp._actions:
            if a.required and a.dest in cfg:
                a.required = False
    args = ap.parse_args(argv)
    if getattr(args, "threads", "missing") is None:
        args.threads = default_threads()
    return args


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    out = OutputSet()
    try:
        args = parse_args(argv)
        summary = args.func(args, out)
        written = out.commit()
        print(json.dumps({"status": "ok", "command": args.command, "outputs": written, "summary": summary}, default=float))
        return EXIT_OK
    except SystemExit as exc:
        return int(exc.code or 0)
    except BaseException as exc:  # noqa: BLE001
        if isinstance(exc, KeyboardInterrupt):
            raise
        code = _exit_code(exc)
        print(json.dumps({"status": "error", "exit_code": code, "error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
