"""Command-line entry point: ``projector-info {verify-bounds,estimate,train,sweep}``.

Exit codes: 0 success, 1 I/O or config error, 2 bound violation, 3 diverged
training, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, exact_info, matrix_info, train_harness
from .tensor_core import TensorError

EXIT_OK = 0
EXIT_IO = 1
EXIT_VIOLATION = 2
EXIT_DIVERGED = 3
EXIT_USAGE = 64

log = logging.getLogger("projector_info")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_floats(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty value list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="projector-info", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def outputs(p):
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        p.add_argument("--force", action="store_true", help="overwrite existing artifacts")

    p = sub.add_parser("verify-bounds", help="check the information bounds on random discrete chains")
    p.add_argument("--chains", type=int, default=1000)
    p.add_argument("--max-alphabet", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    outputs(p)

    p = sub.add_parser("estimate", help="matrix entropies and MI of two feature CSV files")
    p.add_argument("z1", help="CSV of encoder features, one row per sample, no header")
    p.add_argument("z2", help="CSV of projector features, same row count")
    p.add_argument("--alpha", type=float, default=matrix_info.DEFAULT_ALPHA)

    p = sub.add_parser("train", help="train one toy model and write its per-epoch log")
    p.add_argument("config", nargs="?", help="JSON config (defaults used when omitted)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    outputs(p)

    p = sub.add_parser("sweep", help="train across values of one projector knob")
    p.add_argument("config", nargs="?")
    p.add_argument("--axis", required=True, choices=train_harness.SWEEP_AXES)
    p.add_argument("--values", required=True, type=_csv_floats)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--seeds", type=int, default=1, help="replicates per value")
    p.add_argument("--workers", type=int, default=1)
    outputs(p)
    return parser


# ---------------------------------------------------------------- helpers


def _prepare(out: str, names: list[str], force: bool) -> list[Path]:
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    paths = [d / n for n in names]
    existing = [str(p) for p in paths if p.exists()]
    if existing and not force:
        raise FileExistsError(f"refusing to overwrite {', '.join(existing)} (use --force)")
    return paths


def _write(path: Path, text: str):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _load_config(path: str | None, seed: int | None) -> train_harness.TrainConfig:
    raw = {}
    if path is not None:
        with open(path) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise train_harness.BadParams("config must be a JSON object")
    config = train_harness.TrainConfig.from_dict(raw)
    if seed is not None:
        config.seed = seed
    return config


def _json_dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _finite_or_none(v: float):
    return float(v) if math.isfinite(v) else None


# --------------------------------------------------------------- commands


def cmd_verify_bounds(args) -> int:
    if args.chains < 1:
        raise UsageError("--chains must be >= 1")
    if not 1 <= args.max_alphabet <= exact_info.MAX_ALPHABET:
        raise UsageError(f"--max-alphabet must lie in [1, {exact_info.MAX_ALPHABET}]")
    (path,) = _prepare(args.out, ["bounds_report.csv"], args.force)
    lines = ["chain_id,theorem,lhs,rhs,slack"]
    min_slack = {t: math.inf for t in exact_info.THEOREMS}
    worst_cmi = 0.0
    lemma_failures = 0
    for cid in range(args.chains):
        chain = exact_info.random_verification_chain(cid, args.max_alphabet, args.seed)
        for name, check in exact_info.THEOREMS.items():
            rep = check(chain)
            min_slack[name] = min(min_slack[name], rep.slack)
            lines.append(f"{cid},{name},{rep.lhs:.17g},{rep.rhs:.17g},{rep.slack:.17g}")
        lem = exact_info.check_lemmas(chain)
        worst_cmi = max(worst_cmi, abs(lem.cmi_y_r_given_z1), abs(lem.cmi_y_z2_given_z1))
        lemma_failures += not lem.passed
    _write(path, "\n".join(lines) + "\n")
    violations = sum(s < -exact_info.SLACK_TOL for s in min_slack.values())
    for name, s in min_slack.items():
        print(f"{name} min_slack = {s:.6e}")
    print(f"lemmas max |conditional MI| = {worst_cmi:.3e}, failing chains = {lemma_failures}")
    if violations or lemma_failures:
        print("VIOLATION", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def _read_features(path: str) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    if data.size == 0:
        raise ValueError(f"{path}: no feature rows")
    return data


def cmd_estimate(args) -> int:
    if not (args.alpha > 0 and math.isfinite(args.alpha)):
        raise UsageError("--alpha must be a positive number")
    z1 = _read_features(args.z1)
    z2 = _read_features(args.z2)
    if z1.shape[0] != z2.shape[0]:
        raise ValueError(f"row counts differ: {z1.shape[0]} vs {z2.shape[0]}")
    k1 = matrix_info.feature_kernel(z1)
    k2 = matrix_info.feature_kernel(z2)
    print(f"H_{args.alpha:g}(Z1) = {matrix_info.matrix_entropy(k1, args.alpha):.12g}")
    print(f"H_{args.alpha:g}(Z2) = {matrix_info.matrix_entropy(k2, args.alpha):.12g}")
    print(f"I_{args.alpha:g}(Z1;Z2) = {matrix_info.matrix_mi(k1, k2, args.alpha):.12g}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args.config, args.seed)
    runlog_path, meta_path = _prepare(args.out, ["runlog.csv", "run_meta.json"], args.force)
    meta = config.to_dict()
    meta["_meta"] = {"package_version": __version__}
    _write(meta_path, _json_dump(meta))
    try:
        runlog = train_harness.train(config)
    except train_harness.DivergedLoss as exc:
        _write(runlog_path, exc.log.to_csv())
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    _write(runlog_path, runlog.to_csv())
    if runlog.final:
        print(f"final: {train_harness.format_row(runlog.final)}")
    return EXIT_OK


SWEEP_COLUMNS = ("axis_value", "replicate", "seed", *train_harness.RUNLOG_COLUMNS)


def cmd_sweep(args) -> int:
    if args.seeds < 1 or args.workers < 1:
        raise UsageError("--seeds and --workers must be >= 1")
    config = _load_config(args.config, args.seed)
    sweep_path, corr_path = _prepare(args.out, ["sweep.csv", "correlations.json"], args.force)
    values = [int(v) if args.axis != "lambda" else v for v in args.values]
    try:
        rows = train_harness.sweep(config, args.axis, values, args.seeds, args.workers)
    except train_harness.DivergedLoss as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    lines = [",".join(SWEEP_COLUMNS)]
    for r in rows:
        if r.final is None:
            continue
        record = {"axis_value": r.axis_value, "replicate": r.replicate, "seed": r.seed, **r.final}
        lines.append(train_harness.format_row(record, SWEEP_COLUMNS))
    _write(sweep_path, "\n".join(lines) + "\n")
    finals = [r.final for r in rows if r.final is not None]
    report = {"axis": args.axis, "n_runs": len(finals)}
    try:
        corr = train_harness.correlation_report(finals)
        report.update({k: _finite_or_none(v) for k, v in corr.items()})
    except train_harness.TooFewRuns as exc:
        report["note"] = str(exc)
    _write(corr_path, _json_dump(report))
    print(f"{len(finals)} runs written to {sweep_path}")
    return EXIT_OK


COMMANDS = {
    "verify-bounds": cmd_verify_bounds,
    "estimate": cmd_estimate,
    "train": cmd_train,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"projector-info: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, TypeError, json.JSONDecodeError, TensorError) as exc:
        # BadParams and InfoError are ValueErrors too
        print(f"projector-info: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
