"""``paircomp`` command line.

Exit status is 0 on success, 2 for configuration or usage errors and 3 for
malformed data.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .dataset import ComparisonDataset, DataError, write_json
from .estimator import FitOptions, fit
from .existence import check_condition1
from .experiments import ConfigError, ExperimentConfig, run_experiment
from .ingest import SubjectIndex, clean_never_win_lose, load_matches, to_dataset
from .models import ModelError, make_model
from .selection import CandidateModel, compare_models
from .simulate import simulate
from .theory import constants, delta_n, existence_rate_term, schedule

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _json_arg(text: str):
    """Inline JSON, a path to a JSON file, or a bare model name."""
    text = text.strip()
    if text.startswith(("{", "[")):
        return json.loads(text)
    p = Path(text)
    if p.suffix == ".json" or p.exists():
        try:
            return json.loads(p.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read {text}: {exc}") from None
    return text


def _model(text: str):
    spec = _json_arg(text)
    return make_model(spec)


def _emit(obj, out: str | None):
    if out:
        write_json(out, obj)
    else:
        json.dump(obj, sys.stdout, indent=2, sort_keys=True, default=_default)
        sys.stdout.write("\n")


def _default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _finite(v):
    return v if v is None or math.isfinite(v) else ("inf" if v > 0 else "-inf")


# -- subcommands -------------------------------------------------------------------

def cmd_simulate(a) -> int:
    model = _model(a.model)
    u, ds = simulate(a.n, a.p, model, M=a.M, T=a.T, seed=a.seed)
    if a.out:
        ds.to_csv(a.out)
    else:
        sys.stdout.write(ds.to_csv())
    if a.scores:
        write_json(a.scores, {"scores": u.tolist(), "anchored": True, **ds.provenance})
    return EXIT_OK


def cmd_fit(a) -> int:
    model = _model(a.model)
    ds = ComparisonDataset.read_csv(a.data, n=a.n)
    opts = FitOptions(tol=a.tol, max_iterations=a.max_iterations, precheck=not a.no_precheck)
    res = fit(ds, model, opts, solver=a.solver)
    out = res.to_dict()
    out["model"] = model.to_spec()
    out["log_likelihood"] = _finite(out["log_likelihood"])
    out["grad_inf_norm"] = _finite(out["grad_inf_norm"])
    _emit(out, a.out)
    return EXIT_OK


def cmd_check(a) -> int:
    ds = ComparisonDataset.read_csv(a.data, n=a.n)
    model = _model(a.model) if a.model else None
    verdict = check_condition1(ds, tie_edges=not a.no_tie_edges, model=model)
    _emit(verdict.to_dict(), a.out)
    return EXIT_OK


def cmd_theory(a) -> int:
    model = _model(a.model)
    bundle = constants(model, a.M, with_c5=True if a.c5 else None)
    out = {"constants": bundle.to_dict(), "n": a.n, "p": a.p}
    if a.n is not None:
        if a.n >= 3:
            out["schedule"] = schedule(a.n).__dict__
        if a.p is not None:
            try:
                out["delta_n"] = delta_n(bundle, a.n, a.p)
            except ValueError as exc:
                out["delta_n"] = None
                out["delta_n_error"] = str(exc)
            out["existence_rate_term"] = _finite(existence_rate_term(a.n, a.p, bundle.C1))
    _emit(out, a.out)
    return EXIT_OK


def cmd_select(a) -> int:
    ds = ComparisonDataset.read_csv(a.data, n=a.n)
    raw = _json_arg(a.candidates)
    if isinstance(raw, dict):
        raw = raw.get("candidates", raw)
    if not isinstance(raw, list):
        raise ConfigError("candidates must be a JSON list")
    cands = [CandidateModel.from_spec(c) for c in raw]
    rep = compare_models(ds, cands, with_loocv=not a.no_loocv)
    if a.out:
        write_json(a.out, rep.to_dict())
        print(rep.table())
    else:
        _emit(rep.to_dict(), None)
        print(rep.table(), file=sys.stderr)
    return EXIT_OK


def cmd_ingest(a) -> int:
    table = load_matches(a.input, format=a.format)
    index = SubjectIndex.from_matches(table)
    if len(table) == 0:
        raise DataError("no usable matches in input")
    ds = to_dataset(table, index)
    report = {"counts": table.counts, "subjects": len(index), "records": len(ds)}
    names = list(index.names)
    if not a.no_clean:
        cleaned = clean_never_win_lose(ds)
        report["removed_subjects"] = [names[k] for k in cleaned.removed]
        report["cleaning_rounds"] = cleaned.rounds
        if cleaned.empty:
            raise DataError("cleaning removed every subject")
        ds = cleaned.dataset
        index = SubjectIndex(ds.labels)
        report["subjects_after_cleaning"] = ds.n
        report["records_after_cleaning"] = len(ds)
    verdict = check_condition1(ds, model=make_model("general_bt_bo3"))
    report["condition1"] = verdict.to_dict()
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    ds.to_csv(out / "dataset.csv")
    index.write_json(out / "index.json")
    write_json(out / "ingest_report.json", report)
    _emit(report, None)
    return EXIT_OK


def cmd_experiment(a) -> int:
    raw = _json_arg(a.config)
    if not isinstance(raw, dict):
        raise ConfigError("experiment config must be a JSON object")
    for key in ("seed", "workers", "out"):
        val = getattr(a, key)
        if val is not None:
            raw[key] = val
    cfg = ExperimentConfig.from_dict(raw)
    if not cfg.out:
        raise ConfigError("no output directory (use --out or the 'out' config key)")
    res = run_experiment(cfg)
    paths = res.write(cfg.out)
    print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="paircomp", description="Pairwise-comparison models: simulate, fit, check, select.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic comparison dataset")
    s.add_argument("--model", required=True, help="model name, JSON spec or spec file")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--M", type=float, default=1.0)
    s.add_argument("--T", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="dataset CSV path (stdout if omitted)")
    s.add_argument("--scores", help="also write the true scores as JSON")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", help="maximum likelihood scores")
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--n", type=int)
    s.add_argument("--solver", choices=("newton", "mm"), default="newton")
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--max-iterations", type=int, default=200)
    s.add_argument("--no-precheck", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("check", help="decide whether the MLE exists")
    s.add_argument("--data", required=True)
    s.add_argument("--n", type=int)
    s.add_argument("--model", help="derive defeat edges from this model's limits")
    s.add_argument("--no-tie-edges", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("theory", help="constants C1..C5 and the error rate")
    s.add_argument("--model", required=True)
    s.add_argument("--M", type=float, default=1.0)
    s.add_argument("--n", type=int)
    s.add_argument("--p", type=float)
    s.add_argument("--c5", action="store_true", help="compute C5 even when C2 is finite")
    s.add_argument("--out")
    s.set_defaults(func=cmd_theory)

    s = sub.add_parser("select", help="compare candidate models by AIC, BIC and LOOCV")
    s.add_argument("--data", required=True)
    s.add_argument("--candidates", required=True, help="JSON list of candidate specs (inline or file)")
    s.add_argument("--n", type=int)
    s.add_argument("--no-loocv", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("ingest", help="convert match results to a dataset")
    s.add_argument("--input", required=True)
    s.add_argument("--format", choices=("atp_csv", "generic_csv"), default="atp_csv")
    s.add_argument("--no-clean", action="store_true")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("experiment", help="run a Monte-Carlo experiment from a config")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"paircomp: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except DataError as exc:
        print(f"paircomp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ModelError, json.JSONDecodeError) as exc:
        print(f"paircomp: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"paircomp: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"paircomp: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
