"""Command-line front end.

Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure (LP not
optimal, a checked inequality or Monte Carlo gate failing).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .causal_lp import lp_dual_certificate, solve_bicausal, solve_causal, solve_classical
from .costs import CostSpec, Rho
from .enlargement import (
    MCConfig,
    drift_energy,
    kl_information,
    mc_bessel_demo,
    mc_bridge_energy,
    mc_progressive_drift,
    partition_entropy,
)
from .causal_lp import drift_field
from .pathspace import (
    AtomLabeling,
    FiltrationSeq,
    ValidationError,
    build_binomial,
    enlarge_initial,
    enlarge_progressive,
    load_tree,
    natural_filtration,
    sign_labels,
    terminal_value_labels,
)
from .simplex import SolverError
from .stopping import (
    Payoff,
    builtin_payoff,
    model_sensitivity_stopping,
    optimal_stopping,
    rst_lp_value,
    value_of_info_stopping,
)
from .utility import MarketSpec, info_value_vs_entropy, log_utility_value, value_of_info_utility

log = logging.getLogger("causalot")

OUT_ENV = "CAUSALOT_OUT_DIR"
REPORT_COLUMNS = ["name", "N", "value", "bound", "gap", "pass", "drift_energy", "kl_information", "entropy"]


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    return obj


def write_atomic(path: Path, text: str) -> None:
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _out_path(args, default_name: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, ".")) / default_name


def _emit(args, default_name: str, payload: dict, summary: str) -> Path:
    path = _out_path(args, default_name)
    write_atomic(path, json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    print(f"{summary} -> {path}")
    return path


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}")


def _tree(path):
    if path is None:
        raise ValidationError("a tree file is required")
    try:
        return load_tree(path)
    except FileNotFoundError:
        raise ValidationError(f"file not found: {path}")
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path} is not a valid tree file: {exc}")


def _labels_from(spec, tree):
    """Labels from a JSON object: explicit list or a builtin name."""
    if isinstance(spec, str):
        if spec == "sign":
            return sign_labels(tree)
        if spec == "terminal":
            return terminal_value_labels(tree)
        raise ValidationError(f"unknown labeling {spec!r}")
    lab = np.asarray(spec, dtype=np.int64)
    if len(lab) != tree.n_leaves:
        raise ValidationError("labels must cover every leaf")
    return lab


def _filtration(path, tree, embedded_labels=None) -> FiltrationSeq:
    """Filtration file: partitions, an initial-enlargement labeling or a random time."""
    F = natural_filtration(tree)
    if path is None:
        if embedded_labels is not None:
            return enlarge_initial(F, AtomLabeling.from_labels(embedded_labels, tree.leaf_prob))
        return F
    data = _read_json(path)
    if "partitions" in data:
        G = FiltrationSeq.from_json(data)
        G.check_against(tree)
        return G
    if "labels" in data:
        return enlarge_initial(F, AtomLabeling.from_labels(_labels_from(data["labels"], tree), tree.leaf_prob))
    if "tau" in data:
        tau = data["tau"]
        if tau == "last_zero":
            from .pathspace import last_zero_time

            tau = last_zero_time(tree)
        return enlarge_progressive(F, np.asarray(tau, dtype=np.int64))
    if data.get("kind") == "natural":
        return F
    raise ValidationError(f"{path}: expected 'partitions', 'labels' or 'tau'")


def _cost(args) -> CostSpec:
    if args.cost == "cm":
        return CostSpec("cm", Rho(args.p))
    return CostSpec(args.cost)


# ---------------------------------------------------------------------------
# subcommands


def cmd_tree(args):
    if args.binomial is None:
        raise ValidationError("--binomial N is required")
    tree = build_binomial(args.binomial, args.T, args.prob_up)
    labels = None
    if args.labels:
        labels = _labels_from(args.labels, tree)
    _emit(args, "tree.json", tree.to_json(labels), f"tree: {tree.n_leaves} leaves, N={tree.steps}")


def cmd_solve(args):
    tx, _ = _tree(args.treeX)
    ty, ly = _tree(args.treeY or args.treeX)
    F = _filtration(args.filtF, tx)
    G = _filtration(args.filtG, ty, ly)
    cost = _cost(args)
    if args.mode == "causal":
        value, cp, sol = solve_causal(tx, F, ty, G, cost, formulation=args.formulation)
    elif args.mode == "bicausal":
        value, cp, sol = solve_bicausal(tx, F, ty, G, cost)
    else:
        value, cp, sol = solve_classical(tx, ty, cost)
    out = {
        "name": f"solve-{args.mode}-{cost.variant}",
        "N": tx.steps,
        "value": value,
        "status": sol.status,
        "duality_gap": sol.duality_gap,
        "gap": sol.duality_gap,
        "causality_residual": cp.causality_residual,
        "marginal_residual": cp.marginal_residual,
        "iterations": sol.iterations,
        "formulation": sol.meta.get("formulation", "pairs"),
        "tolerance": 1e-8,
    }
    if sol.meta.get("formulation") == "pairs" and args.mode != "classical":
        cert = lp_dual_certificate(sol)
        out["certificate_residual"] = cert.inequality_residual
    if args.coupling:
        out["coupling"] = cp.triples(1e-15)
    out["pass"] = bool(sol.status == "optimal" and sol.duality_gap <= 1e-8)
    _emit(args, f"solve-{args.mode}.json", out, f"{args.mode} value {value:.12g} (gap {sol.duality_gap:.2e})")
    if not out["pass"]:
        raise NumericalFailure("LP did not reach a verified optimum")


def _labeling_for_info(args):
    data = _read_json(args.labels) if args.labels else {}
    if args.tree:
        tree, emb = _tree(args.tree)
        spec = data.get("labels", emb if emb is not None else None)
        if spec is None:
            raise ValidationError("no labels given")
        return tree, AtomLabeling.from_labels(_labels_from(spec if not isinstance(spec, np.ndarray) else spec.tolist(), tree), tree.leaf_prob)
    if "probs" in data:
        p = np.asarray(data["probs"], dtype=float)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValidationError("class probabilities must be nonnegative and sum to 1")
        return None, p
    if "labels" in data:
        lab = np.asarray(data["labels"])
        return None, AtomLabeling.from_labels(lab, np.full(len(lab), 1.0 / len(lab)))
    raise ValidationError("labels file needs 'probs' or 'labels'")


def cmd_info(args):
    if args.what == "sweep":
        rows = []
        for N in range(args.nmin, args.nmax + 1):
            tree = build_binomial(N, args.T)
            F = natural_filtration(tree)
            L = AtomLabeling.from_labels(sign_labels(tree), tree.leaf_prob)
            G = enlarge_initial(F, L)
            de = drift_energy(drift_field(tree, F, G), Rho(args.p))
            rows.append({"name": "sign-sweep", "N": N, "drift_energy": de,
                         "kl_information": kl_information(tree, F, G), "entropy": partition_entropy(L)})
        _emit(args, "info-sweep.json", {"name": "sign-sweep", "rows": rows}, f"sweep N={args.nmin}..{args.nmax}")
        return
    tree, L = _labeling_for_info(args)
    if args.what == "entropy":
        val = partition_entropy(L)
        out = {"name": "entropy", "value": val, "estimate": val, "stderr": 0.0}
    else:
        if tree is None:
            raise ValidationError(f"info {args.what} needs --tree")
        F = natural_filtration(tree)
        G = enlarge_initial(F, L)
        if args.what == "kl":
            val = kl_information(tree, F, G)
            out = {"name": "kl", "N": tree.steps, "value": val, "entropy": partition_entropy(L),
                   "gap": abs(val - partition_entropy(L)), "tolerance": 1e-12}
        else:
            val = drift_energy(drift_field(tree, F, G), Rho(args.p))
            out = {"name": "drift-energy", "N": tree.steps, "value": val, "kl_information": kl_information(tree, F, G),
                   "entropy": partition_entropy(L)}
        out["estimate"] = val
        out["stderr"] = 0.0
    _emit(args, f"info-{args.what}.json", out, f"{args.what} {val:.12g}")


def cmd_mc(args):
    cfg = MCConfig(paths=args.paths, grid=args.grid, seed=args.seed, T=args.T, eps=args.eps)
    if args.which == "bridge":
        r = mc_bridge_energy(cfg)
        ok = r.within(3.0)
        out = {"name": "mc-bridge", **r.to_json(), "value": r.estimate, "gap": abs(r.estimate - r.target), "pass": ok}
        summary = f"bridge energy {r.estimate:.6f} +- {r.stderr:.6f} (target {r.target:.6f})"
    elif args.which == "progressive":
        r = mc_progressive_drift(cfg)
        ok = r.mean.within(4.0) and abs(r.variance - 1.0) <= 0.05 and r.sign_agreement == 1.0
        out = {"name": "mc-progressive", **r.to_json(), "estimate": r.mean.estimate, "stderr": r.mean.stderr,
               "value": r.variance, "pass": ok}
        summary = f"progressive: mean {r.mean.estimate:.2e} +- {r.mean.stderr:.1e}, var/dt {r.variance:.4f}"
    else:
        r = mc_bessel_demo(cfg, args.r0)
        ok = r.mean.within(4.0) and abs(r.variance - 1.0) <= 0.05 and r.j_monotone and r.j_terminal
        out = {"name": "mc-bessel", **r.to_json(), "estimate": r.mean.estimate, "stderr": r.mean.stderr,
               "value": r.variance, "pass": ok}
        summary = f"bessel: mean {r.mean.estimate:.2e} +- {r.mean.stderr:.1e}, var/dt {r.variance:.4f}"
    out.update({"paths": cfg.paths, "grid": cfg.grid, "seed": cfg.seed, "eps": cfg.eps, "T": cfg.T})
    _emit(args, f"mc-{args.which}.json", out, summary)
    if not ok:
        raise NumericalFailure("Monte Carlo gate failed")


def _payoff(path, tree) -> Payoff:
    if path is None:
        raise ValidationError("--payoff is required")
    data = _read_json(path)
    if "builtin" in data:
        p = builtin_payoff(tree, data["builtin"])
        if "K" in data:
            p = Payoff(p.ell, float(data["K"]), p.name)
        return p
    if "table" in data:
        return Payoff(np.asarray(data["table"], dtype=float), float(data["K"]), data.get("name", "table"))
    raise ValidationError("payoff file needs 'builtin' or 'table'")


def cmd_stopping(args):
    tree, labels = _tree(args.tree)
    F = natural_filtration(tree)
    payoff = _payoff(args.payoff, tree)
    payoff.check(tree)
    if args.what == "value":
        H = _filtration(args.filt, tree, labels)
        dp = optimal_stopping(tree, H, payoff)
        lp = rst_lp_value(tree, H, payoff)
        gap = abs(dp.value - lp)
        out = {"name": "stopping-value", "N": tree.steps, "value": dp.value, "lp_value": lp, "gap": gap,
               "tau": dp.tau, "tolerance": 1e-9, "pass": gap <= 1e-9}
        ok = out["pass"]
        summary = f"stopping value {dp.value:.12g}"
    elif args.what == "bound":
        G = _filtration(args.filt, tree, labels)
        r = value_of_info_stopping(tree, F, G, payoff)
        out = {"name": "stopping-bound", "N": tree.steps, "value": r.difference, **r.to_json(),
               "gap": r.K * r.transport - r.difference}
        ok = r.holds
        summary = f"v^F - v^G = {r.difference:.6g} <= {r.K * r.transport:.6g}"
    else:
        if args.nu is not None:
            other, _ = _tree(args.nu)
            nu = other.leaf_prob
            if len(nu) != tree.n_leaves:
                raise ValidationError("second measure lives on a different skeleton")
        else:
            nu = tree.with_edge_probs(np.where(tree.incr > 0, args.tilt, 1.0 - args.tilt)).leaf_prob
        r = model_sensitivity_stopping(tree, F, tree.leaf_prob, nu, payoff)
        out = {"name": "stopping-sensitivity", "N": tree.steps, "value": r.difference, **r.to_json(),
               "gap": r.K * r.transport - abs(r.difference)}
        ok = r.holds
        summary = f"|v^mu - v^nu| = {abs(r.difference):.6g} <= {r.K * r.transport:.6g}"
    _emit(args, f"stopping-{args.what}.json", out, summary)
    if not ok:
        raise NumericalFailure("stopping check failed")


def cmd_utility(args):
    tree, labels = _tree(args.tree)
    F = natural_filtration(tree)
    market = MarketSpec.from_config(_read_json(args.market)) if args.market else MarketSpec()
    if args.what == "value":
        H = _filtration(args.filt, tree, labels)
        r = log_utility_value(tree, H, market)
        out = {"name": "utility-value", "N": tree.steps, "value": r.value, "policy": r.policy,
               "tolerance": 1e-10, "pass": True}
        ok = True
        summary = f"log-utility value {r.value:.12g}"
    elif args.what == "bound":
        G = _filtration(args.filt, tree, labels)
        r = value_of_info_utility(tree, F, G, market)
        out = {"name": "utility-bound", "N": tree.steps, "value": r.gap, **r.to_json()}
        out["gap"] = r.K_tilde * r.transport - r.gap
        ok = r.holds
        summary = f"v^G - v^F = {r.gap:.6g} <= {r.K_tilde * r.transport:.6g}"
    else:
        if args.filt is not None:
            data = _read_json(args.filt)
            spec = data.get("labels")
        else:
            spec = labels.tolist() if labels is not None else None
        if spec is None:
            raise ValidationError("entropy-compare needs a labeling (--filt with 'labels' or labels in the tree)")
        L = AtomLabeling.from_labels(_labels_from(spec, tree), tree.leaf_prob)
        row = info_value_vs_entropy(tree, F, L, market)
        out = {"name": "utility-entropy", **row, "value": row["utility_gap"], "gap": row["bound"] - row["utility_gap"]}
        ok = row["pass"]
        summary = f"utility gap {row['utility_gap']:.6g}, drift energy {row['drift_energy']:.6g}, entropy {row['entropy']:.6g}"
    _emit(args, f"utility-{args.what}.json", out, summary)
    if not ok:
        raise NumericalFailure("utility bound failed")


def _fmt(v):
    if v is None or v == "":
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def collect_rows(directory: Path) -> list[dict]:
    rows = []
    for path in sorted(Path(directory).glob("*.json")):
        try:
            data = json.loads(path.read_text())
            if not isinstance(data, dict):
                raise ValueError("top level is not an object")
            if "rows" not in data and "value" not in data:
                # input files (trees, filtrations, markets) share the directory
                log.info("ignoring %s: not a result file", path.name)
                continue
            items = data["rows"] if "rows" in data else [data]
            for item in items:
                row = {c: item.get(c, "") for c in REPORT_COLUMNS}
                row["name"] = row["name"] or path.stem
                rows.append(row)
        except (ValueError, KeyError, TypeError) as exc:
            log.warning("skipping %s: %s", path.name, exc)
    return rows


def cmd_report(args):
    directory = Path(args.directory)
    if not directory.is_dir():
        raise ValidationError(f"{directory} is not a directory")
    rows = collect_rows(directory)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in REPORT_COLUMNS])
    out = Path(args.out) if args.out else Path(os.environ.get(OUT_ENV, directory)) / "report.csv"
    write_atomic(out, buf.getvalue())
    # whitespace-separated numeric columns per experiment name for plotting
    by_name: dict[str, list] = {}
    for r in rows:
        by_name.setdefault(str(r["name"]), []).append(r)
    for name, group in sorted(by_name.items()):
        lines = ["# " + " ".join(REPORT_COLUMNS[1:])]
        for r in group:
            lines.append(" ".join(_fmt(r[c]) if _fmt(r[c]) != "" else "nan" for c in REPORT_COLUMNS[1:]))
        write_atomic(out.with_name(f"{out.stem}-{name}.dat"), "\n".join(lines) + "\n")
    print(f"report: {len(rows)} rows -> {out}")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="causalot", description="Causal optimal transport on scenario trees.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", help="JSON file whose keys override command-line flags")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("tree", help="build a binomial scenario tree")
    t.add_argument("--binomial", type=int, metavar="N", help="number of steps")
    t.add_argument("--T", type=float, default=1.0, help="horizon")
    t.add_argument("--prob-up", type=float, default=0.5, help="up-move probability")
    t.add_argument("--labels", choices=["sign", "terminal"], help="embed a leaf labeling")
    t.add_argument("--out")
    t.set_defaults(func=cmd_tree)

    s = sub.add_parser("solve", help="solve a causal, bicausal or classical transport LP")
    s.add_argument("--mode", choices=["causal", "bicausal", "classical"], default="causal")
    s.add_argument("--cost", choices=["tv", "cm", "sup"], default="tv")
    s.add_argument("--p", type=float, default=2.0, help="power of the Cameron-Martin penalty")
    s.add_argument("--treeX", required=True)
    s.add_argument("--treeY")
    s.add_argument("--filtF", help="source filtration (default: natural)")
    s.add_argument("--filtG", help="target filtration file (partitions, labels or tau)")
    s.add_argument("--formulation", choices=["auto", "pairs", "local"], default="auto")
    s.add_argument("--coupling", action="store_true", help="include the coupling as sparse triples")
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    i = sub.add_parser("info", help="entropy, KL information and drift energy")
    i.add_argument("what", choices=["entropy", "kl", "drift-energy", "sweep"])
    i.add_argument("--tree")
    i.add_argument("--labels")
    i.add_argument("--p", type=float, default=2.0)
    i.add_argument("--nmin", type=int, default=2)
    i.add_argument("--nmax", type=int, default=10)
    i.add_argument("--T", type=float, default=1.0)
    i.add_argument("--out")
    i.set_defaults(func=cmd_info)

    m = sub.add_parser("mc", help="Monte Carlo demos of continuous-time enlargements")
    m.add_argument("which", choices=["bridge", "progressive", "bessel"])
    m.add_argument("--paths", type=int, default=100_000)
    m.add_argument("--grid", type=int, default=200)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--eps", type=float, default=0.1)
    m.add_argument("--T", type=float, default=1.0)
    m.add_argument("--r0", type=float, default=0.1)
    m.add_argument("--out")
    m.set_defaults(func=cmd_mc)

    st = sub.add_parser("stopping", help="optimal stopping values and bounds")
    st.add_argument("what", choices=["value", "bound", "sensitivity"])
    st.add_argument("--tree", required=True)
    st.add_argument("--filt")
    st.add_argument("--payoff", required=True)
    st.add_argument("--nu", help="tree file carrying the second measure (same skeleton)")
    st.add_argument("--tilt", type=float, default=0.6, help="up-probability of the second measure")
    st.add_argument("--out")
    st.set_defaults(func=cmd_stopping)

    u = sub.add_parser("utility", help="log-utility value of information")
    u.add_argument("what", choices=["value", "bound", "entropy-compare"])
    u.add_argument("--tree", required=True)
    u.add_argument("--filt")
    u.add_argument("--market")
    u.add_argument("--out")
    u.set_defaults(func=cmd_utility)

    r = sub.add_parser("report", help="consolidate result files into a CSV")
    r.add_argument("directory")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def _apply_config(args, parser):
    if not args.config:
        return
    data = _read_json(args.config)
    if not isinstance(data, dict):
        raise ValidationError("config file must hold a JSON object")
    for key, val in data.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ValidationError(f"unknown config key {key!r}")
        setattr(args, attr, val)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"causalot: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        _apply_config(args, parser)
        args.func(args)
    except (ValidationError, UsageError) as exc:
        print(f"causalot: error: {exc}", file=sys.stderr)
        return 1
    except (SolverError, NumericalFailure) as exc:
        print(f"causalot: numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
