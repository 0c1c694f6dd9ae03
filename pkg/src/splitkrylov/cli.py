"""Command-line driver: ``splitkrylov {cond,solve,ocp}``.

Each subcommand reads an optional JSON config, applies command-line overrides
and writes one table row per experiment in CSV or JSON. The exit status is 1
when any row failed and 0 otherwise.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .discretize import AssemblyError, ProblemSpec, assemble
from .krylov import SolverConfig, cg_solve, gmres_solve, rapoport_solve, widlund_solve
from .mmio import mm_read, vector_read
from .optctl import OcpProblem, condensed_solve, kkt_schur_solve, ppcg_solve
from .precond import PrecondSpec, build
from .sparse import SplitOperator, split
from .spectra import refinement_study

__all__ = ["main", "splitmix64_uniform", "run_cond", "run_solve", "run_ocp", "load_config"]

COND_COLUMNS = ["h", "dofs", "target", "kappa2", "lambda_width", "method", "status"]
SOLVE_COLUMNS = ["dofs", "method", "precond", "iters", "time_s", "final_relres", "converged", "status"]
OCP_COLUMNS = ["dofs", "mode", "inner", "lambda", "outer_iters", "inner_iters", "time_s", "converged", "status"]

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def splitmix64_uniform(seed: int, n: int) -> np.ndarray:
    """``n`` doubles uniform on ``[-1, 1)`` from the splitmix64 generator.

    Output ``k`` (0-based) mixes the state ``seed + (k + 1)·0x9E3779B97F4A7C15``
    (mod 2⁶⁴) and keeps its top 53 bits.
    """
    with np.errstate(over="ignore"):
        k = np.arange(1, n + 1, dtype=np.uint64)
        z = (np.uint64(seed % 2**64) + k * np.uint64(0x9E3779B97F4A7C15)) & _MASK
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53 * 2.0 - 1.0


# -- configuration -------------------------------------------------------------

def load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config must be a JSON object")
    return cfg


def _split_list(text: Optional[str]):
    return None if text is None else [t.strip() for t in text.split(",") if t.strip()]


def _problem_from_text(text: str) -> dict:
    """``kind[:dim[:cells]]``, e.g. ``advdiff:2:16``."""
    parts = text.split(":")
    out = {"kind": parts[0]}
    if len(parts) > 1:
        out["dim"] = int(parts[1])
    if len(parts) > 2:
        out["cells_per_side"] = int(parts[2])
    return out


def _merge(cfg: dict, args) -> dict:
    cfg = json.loads(json.dumps(cfg))  # deep copy
    if args.problem:
        prob = cfg.get("problem", {}) if isinstance(cfg.get("problem"), dict) else {}
        override = _problem_from_text(args.problem)
        if override["kind"] != prob.get("kind"):
            prob = {}
        prob.update(override)
        cfg["problem"] = prob
    for key, attr in [
        ("refinements", "refinements"),
        ("seed", "seed"),
        ("matrix", "matrix"),
        ("rhs_file", "rhs"),
    ]:
        val = getattr(args, attr, None)
        if val is not None:
            cfg[key] = val
    if args.matrix:
        cfg.pop("problem", None)
    solver = cfg.setdefault("solver", {})
    if args.method:
        solver["method"] = _split_list(args.method)
    if args.precond:
        solver["precond"] = _split_list(args.precond)
    if args.tol is not None:
        solver["tol"] = args.tol
    ocp = cfg.setdefault("ocp", {})
    if getattr(args, "mode", None):
        ocp["mode"] = _split_list(args.mode)
    if getattr(args, "inner", None):
        ocp["inner"] = _split_list(args.inner)
    if getattr(args, "lam", None):
        ocp["lambda_reg"] = [float(v) for v in _split_list(args.lam)]
    if getattr(args, "cgtol", None) is not None:
        ocp["cgtol"] = args.cgtol
    if getattr(args, "targets", None):
        cfg["targets"] = _split_list(args.targets)
    out = cfg.setdefault("output", {})
    if args.out:
        out["path"] = args.out
    if args.format:
        out["format"] = args.format
    return cfg


def _as_list(v, default):
    if v is None:
        return list(default)
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _problem_spec(cfg: dict) -> ProblemSpec:
    prob = cfg.get("problem")
    if not isinstance(prob, dict) or "kind" not in prob:
        raise ValueError("config needs a problem with a kind (or --problem)")
    box = prob.get("domain_box")
    return ProblemSpec(
        prob["kind"],
        int(prob.get("dim", 1)),
        int(prob.get("cells_per_side", 16)),
        dict(prob.get("params", {})),
        tuple(box) if box is not None else None,
    )


def _levels(cfg: dict):
    """Yield ``(spec_or_None, system)`` per refinement level."""
    if cfg.get("matrix"):
        if cfg.get("problem"):
            raise ValueError("give either a built-in problem or a matrix file, not both")
        yield None, split(mm_read(cfg["matrix"]))
        return
    n_levels = int(cfg.get("refinements", 1))
    if n_levels < 1:
        raise ValueError("refinements must be >= 1")
    spec = _problem_spec(cfg)
    for _ in range(n_levels):
        yield spec, assemble(spec)
        spec = spec.refine()


def _rhs(cfg: dict, n: int) -> np.ndarray:
    if cfg.get("rhs_file"):
        b = vector_read(cfg["rhs_file"])
        if b.shape != (n,):
            raise ValueError(f"rhs file has length {b.size}, expected {n}")
        return b
    kind = cfg.get("rhs", "random")
    if kind == "ones":
        return np.ones(n)
    if kind == "random":
        return splitmix64_uniform(int(cfg.get("seed", 0)), n)
    raise ValueError(f"unknown rhs {kind!r} (random, ones)")


# -- output --------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf"
        return repr(v)
    return "" if v is None else str(v)


def write_rows(rows: list[dict], columns: list[str], path: Optional[str], fmt: str) -> None:
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown output format {fmt!r}")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
        text = buf.getvalue()
    else:
        def clean(v):
            return None if isinstance(v, float) and not math.isfinite(v) else v

        text = json.dumps([{c: clean(r.get(c)) for c in columns} for r in rows], indent=2) + "\n"
    if path in (None, "", "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# -- experiments ---------------------------------------------------------------

def run_cond(cfg: dict) -> tuple[list[dict], bool]:
    """Condition numbers over refinements; returns rows and a failure flag."""
    targets = _as_list(cfg.get("targets"), ["H", "S", "H^-1A"])
    precond = cfg.get("solver", {}).get("precond")
    if isinstance(precond, list):
        precond = precond[0] if precond else None
    if cfg.get("matrix"):
        from .spectra import _split_target

        _, sop = next(_levels(cfg))
        rows = []
        for t in targets:
            row = {"h": None, "dofs": sop.n, "target": t, "lambda_width": None}
            try:
                rep = _split_target(sop, t, PrecondSpec.parse(precond) if precond else None, "auto")
                row.update(kappa2=rep.kappa2, method=rep.method, status=rep.status)
            except Exception as exc:  # recorded per row
                row.update(kappa2=math.nan, method="", status=f"error: {exc}")
            rows.append(row)
    else:
        spec = _problem_spec(cfg)
        rows = refinement_study(spec, max(3, int(cfg.get("refinements", 3))), targets, precond)
    failed = any(str(r["status"]).startswith("error") for r in rows)
    return rows, failed


def _solver_configs(cfg: dict) -> list[SolverConfig]:
    s = cfg.get("solver", {})
    methods = _as_list(s.get("method"), ["gmres"])
    preconds = _as_list(s.get("precond"), ["exact"])
    out = []
    for m in methods:
        for p in preconds:
            out.append(
                SolverConfig(
                    m,
                    float(s.get("tol", 1e-8)),
                    int(s.get("max_iter", 1000)),
                    s.get("restart"),
                    PrecondSpec.parse(p) if isinstance(p, str) else PrecondSpec(**p),
                )
            )
    return out


def _timed_solve(sop: SplitOperator, b: np.ndarray, sc: SolverConfig):
    """Solve with setup excluded from the returned time."""
    kind = sc.precond.kind
    if sc.method == "direct":
        import scipy.sparse.linalg as spla

        lu = spla.splu(sp.csc_array(sop.a.csr))
        t0 = time.perf_counter()
        x = lu.solve(b)
        dt = time.perf_counter() - t0
        rel = float(np.linalg.norm(b - sop.a.csr @ x)) / (float(np.linalg.norm(b)) or 1.0)
        return 1, dt, rel, rel <= sc.tol
    if sc.method in ("widlund", "rapoport"):
        spec = sc.precond if kind != "identity" else replace(sc.precond, kind="exact")
        hs = build(spec, sop.h, sop.grid)
        fn = widlund_solve if sc.method == "widlund" else rapoport_solve
        x, rep = fn(sop, b, sc, h_solver=hs)
    else:
        target = sop.a if (kind in ("ilu", "lu") or sc.method == "cg") else sop.h
        pc = None if kind == "identity" else build(sc.precond, target, sop.grid)
        fn = gmres_solve if sc.method == "gmres" else cg_solve
        x, rep = fn(sop.a, b, sc, pc)
    return rep.iterations, rep.wall_time, rep.final_relres, rep.converged


def run_solve(cfg: dict) -> tuple[list[dict], bool]:
    configs = _solver_configs(cfg)
    rows = []
    failed = False
    for _, sop in _levels(cfg):
        if not isinstance(sop, SplitOperator):
            raise ValueError("solve needs a single split operator (advdiff, stokes, wave or a matrix)")
        b = _rhs(cfg, sop.n)
        for sc in configs:
            row = {"dofs": sop.n, "method": sc.method, "precond": sc.precond.label()}
            try:
                iters, dt, rel, conv = _timed_solve(sop, b, sc)
                row.update(iters=iters, time_s=dt, final_relres=rel, converged=bool(conv))
                row["status"] = "ok" if conv else "not-converged"
            except Exception as exc:  # recorded per row
                row.update(iters=0, time_s=0.0, final_relres=math.nan, converged=False, status=f"error: {exc}")
            failed |= row["status"] != "ok"
            rows.append(row)
    return rows, failed


def _inner_config(text, tol: float) -> SolverConfig:
    """``method[+precond]``, e.g. ``direct``, ``gmres+exact``, ``widlund+multigrid:2``."""
    if isinstance(text, dict):
        d = dict(text)
        return SolverConfig(d.pop("method"), d.pop("tol", tol), **d)
    method, _, prec = text.partition("+")
    return SolverConfig(method, tol, 1000, None, prec or "exact")


def _vector(spec, n: int, seed: int) -> np.ndarray:
    if spec in (None, "zeros"):
        return np.zeros(n)
    if spec == "ones":
        return np.ones(n)
    if spec == "random":
        return splitmix64_uniform(seed, n)
    return np.asarray(spec, dtype=np.float64)


def run_ocp(cfg: dict) -> tuple[list[dict], bool]:
    o = cfg.get("ocp", {})
    modes = _as_list(o.get("mode"), ["condensed"])
    lambdas = [float(v) for v in _as_list(o.get("lambda_reg"), [0.1])]
    cgtol = float(o.get("cgtol", 1e-6))
    inners = _as_list(o.get("inner"), ["direct"])
    seed = int(cfg.get("seed", 0))
    rows = []
    failed = False
    for _, sop in _levels(cfg):
        if not isinstance(sop, SplitOperator):
            raise ValueError("ocp needs a split constraint operator")
        n = sop.n
        eye = sp.identity(n, format="csr")
        f = _vector(o.get("f", "ones"), n, seed)
        y_ref = _vector(o.get("y_ref", "random"), n, seed + 1)
        for mode in modes:
            for inner_text in inners:
                for lam in lambdas:
                    ocp = OcpProblem(sop, eye, eye, lam, f, y_ref)
                    label = inner_text if isinstance(inner_text, str) else json.dumps(inner_text, sort_keys=True)
                    row = {"dofs": n, "mode": mode, "inner": label, "lambda": lam}
                    try:
                        if mode == "condensed":
                            inner_tol = o.get("inner_tol", cgtol / 10)
                            sol = condensed_solve(ocp, _inner_config(inner_text, inner_tol), cgtol, inner_tol=inner_tol)
                        elif mode == "ppcg":
                            inner_tol = o.get("inner_tol", 1e-6)
                            sol = ppcg_solve(ocp, _inner_config(inner_text, inner_tol), cgtol, inner_tol=inner_tol)
                        elif mode == "schur":
                            sol = kkt_schur_solve(ocp, cgtol)
                        else:
                            raise ValueError(f"unknown mode {mode!r} (condensed, ppcg, schur)")
                        rep = sol.outer_report
                        row.update(
                            outer_iters=rep.iterations,
                            inner_iters=rep.inner_iterations,
                            time_s=rep.wall_time,
                            converged=bool(rep.converged),
                            status="ok" if rep.converged else "not-converged",
                        )
                        if rep.flags:
                            row["status"] += ";" + ";".join(sorted(rep.flags))
                    except Exception as exc:  # recorded per row
                        row.update(outer_iters=0, inner_iters=0, time_s=0.0, converged=False, status=f"error: {exc}")
                    failed |= not row["status"].startswith("ok")
                    rows.append(row)
    return rows, failed


# -- entry point ---------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="splitkrylov", description="Split-operator Krylov benchmarks.")
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment file; flags override its fields")
    common.add_argument("--problem", help="built-in problem as kind[:dim[:cells]], e.g. advdiff:2:16")
    common.add_argument("--refinements", type=int, help="number of refinement levels")
    common.add_argument("--method", help="solver method(s), comma separated")
    common.add_argument("--precond", help="preconditioner(s), e.g. exact,ichol:1e-2,multigrid:2")
    common.add_argument("--tol", type=float, help="relative residual tolerance")
    common.add_argument("--lambda", dest="lam", help="regularization value(s), comma separated")
    common.add_argument("--mode", help="ocp mode(s): condensed, ppcg, schur")
    common.add_argument("--inner", help="ocp inner solver(s), e.g. direct,gmres+exact,widlund")
    common.add_argument("--cgtol", type=float, help="outer CG tolerance for ocp")
    common.add_argument("--targets", help="cond targets, e.g. H,S,H^-1A")
    common.add_argument("--matrix", help="Matrix Market file with the system matrix")
    common.add_argument("--rhs", help="Matrix Market file with the right-hand side")
    common.add_argument("--out", help="output path ('-' for stdout)")
    common.add_argument("--format", choices=["csv", "json"], help="output format")
    common.add_argument("--seed", type=int, help="seed of the splitmix64 right-hand-side generator")
    for name, text in [
        ("cond", "condition numbers over refinements"),
        ("solve", "linear solver benchmark"),
        ("ocp", "optimal-control pipelines"),
    ]:
        sub.add_parser(name, parents=[common], help=text)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _merge(load_config(args.config), args)
        runner = {"cond": (run_cond, COND_COLUMNS), "solve": (run_solve, SOLVE_COLUMNS), "ocp": (run_ocp, OCP_COLUMNS)}
        fn, columns = runner[args.command]
        rows, failed = fn(cfg)
        out = cfg.get("output", {})
        write_rows(rows, columns, out.get("path"), out.get("format", "csv"))
    except (OSError, ValueError, AssemblyError) as exc:
        print(f"splitkrylov: error: {exc}", file=sys.stderr)
        return 2
    return 1 if failed else 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
