"""Batch CLI: simulate | fit | mc | km.

Every command accepts --seed, --out-dir and --config, writes its outputs as
CSV files plus a manifest.json that fully determines a rerun:
replay_manifest(path) reproduces the output files bit-for-bit on the same
build.

Exit codes: 0 success, 2 input/config error, 3 inference failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__, gompertz, io, kmsurv, mc
from .inference import FitConfig, InferenceError, InlaEngine
from .likelihood import ModeNotFoundError
from .model import InvalidParameterError, JointDataset
from .oracle import OracleError
from .simulate import SCENARIOS, simulate_dataset


def _versions() -> dict:
    from . import _core

    return {
        "jointcure": __version__,
        "numpy": np.__version__,
        "python": ".".join(map(str, sys.version_info[:3])),
        "kernel_backend": _core.backend(),
    }


def _write_manifest(out_dir: Path, command: str, args: dict, extra: dict | None = None) -> None:
    manifest = {"command": command, "args": args, "versions": _versions()}
    if extra:
        manifest.update(extra)
    io.write_manifest(manifest, out_dir / "manifest.json")


# ---------------------------------------------------------------------------
# commands (dict-in, files-out; the argparse layer and replay both call these)


def run_simulate(args: dict) -> None:
    out_dir = Path(args["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario = str(args["scenario"])
    if scenario not in SCENARIOS:
        raise InvalidParameterError(f"unknown scenario {scenario!r}")
    cfg = SCENARIOS[scenario](n=int(args["n"]), seed=int(args["seed"]))
    ds = simulate_dataset(cfg)
    io.write_simulated(ds, out_dir)
    _write_manifest(
        out_dir, "simulate", args,
        extra={"dataset": {
            "n_subjects": len(ds.subjects),
            "censoring_rate": round(ds.censoring_rate, 10),
            "mean_cure_prob": round(float(ds.cure_prob.mean()), 10),
        }},
    )
    print(f"simulated scenario {scenario}: n={cfg.n}, censoring {ds.censoring_rate:.1%}")


def _dataset_stats(data: JointDataset) -> dict:
    n = data.n_subjects
    counts = np.array([len(s.records) for s in data.subjects])
    events = np.array([s.event for s in data.subjects])
    dist = {}
    for k in range(1, int(counts.max()) + 1 if len(counts) else 1):
        frac = float(np.mean(counts == k))
        if frac > 0:
            dist[str(k)] = round(frac, 10)
    return {
        "n_subjects": n,
        "censoring_rate": round(float(1.0 - events.mean()), 10),
        "records_distribution": dist,
    }


def _model_curves(summary, groups, data: JointDataset, model_name: str):
    """Population-level survival curves per group at the posterior means."""
    alpha = summary.parameter("alpha").mean
    gamma0 = summary.parameter("gamma0").mean
    psi = np.array([summary.parameter(f"psi_{c}").mean for c in data.spec.survival_covariates])
    t_max = max(s.observed_time for s in data.subjects)
    grid = np.linspace(0.0, 1.05 * t_max, 101)
    w = np.array([s.survival_covariates for s in data.subjects])
    labels = np.asarray(groups)
    rows = []
    for g in sorted(set(groups), key=str):
        w_bar = w[labels == g].mean(axis=0)
        eta = float(w_bar @ psi)
        params = gompertz.GompertzParams.from_gamma0(alpha, gamma0 + eta)
        surv = gompertz.survival(grid, params)
        rows.extend((model_name, g, t, s) for t, s in zip(grid, surv))
    return rows


def run_fit(args: dict) -> None:
    out_dir = Path(args["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    config = io.parse_config(args["config"])
    data, groups = io.ingest(args["longitudinal"], args["survival"], config)
    stats = _dataset_stats(data)
    print(
        f"ingested {stats['n_subjects']} subjects, censoring {stats['censoring_rate']:.2%}, "
        f"records per subject: {stats['records_distribution']}"
    )

    rng = np.random.default_rng(np.random.SeedSequence(int(args["seed"])))
    engine = InlaEngine(data, priors=config.priors, config=config.fit)
    result = engine.fit(rng=rng, group_labels=groups)

    io.write_parameters(result.summary, out_dir / "parameters.csv")
    io.write_cure_fractions(result.summary, out_dir / "cure_fractions.csv")

    times = np.array([s.observed_time for s in data.subjects])
    events = np.array([s.event for s in data.subjects])
    curves = kmsurv.kaplan_meier(times, events, group_labels=np.asarray(groups))
    io.write_km_curves(curves, out_dir / "km_curves.csv")

    curve_rows = _model_curves(result.summary, groups, data, config.baseline)
    if args.get("compare_proper") and config.baseline != "proper":
        proper_cfg = io.parse_config({**config.raw, "model": {**config.raw["model"], "baseline": "proper"}})
        proper_engine = InlaEngine(data, priors=proper_cfg.priors, config=proper_cfg.fit)
        proper_rng = np.random.default_rng(np.random.SeedSequence(int(args["seed"]) + 1))
        proper_result = proper_engine.fit(rng=proper_rng, group_labels=groups)
        curve_rows += _model_curves(proper_result.summary, groups, data, "proper")
        io.write_parameters(proper_result.summary, out_dir / "parameters_proper.csv")
    io.write_model_curves(curve_rows, out_dir / "model_curves.csv")

    _write_manifest(out_dir, "fit", args, extra={"dataset": stats})
    alpha = result.summary.parameter("alpha")
    print(f"alpha: mean {alpha.mean:.4g}, 95% CI ({alpha.q025:.4g}, {alpha.q975:.4g})")
    for g, (m, lo, hi) in result.summary.group_cure.items():
        print(f"group {g}: cure fraction {m:.4g} ({lo:.4g}, {hi:.4g})")


def run_mc(args: dict) -> None:
    out_dir = Path(args["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    fit_kwargs = {}
    if args.get("config"):
        fit_kwargs = dict(args["config"].get("inference", {}) or {})
    report = mc.run_mc(
        scenario=str(args["scenario"]),
        n=int(args["n"]),
        replicates=int(args["replicates"]),
        seed=int(args["seed"]),
        parallelism=int(args["parallelism"]),
        fit_kwargs=fit_kwargs,
        progress=bool(args.get("progress")),
    )
    mc.write_mc_report(report, out_dir / "mc_report.csv")
    _write_manifest(out_dir, "mc", {k: v for k, v in args.items() if k != "progress"})
    print(
        f"scenario {report.scenario_id}, n={report.n_subjects}, "
        f"{report.replicates} replicates ({report.n_failed} failed) in {report.runtime:.0f}s"
    )
    for r in report.rows:
        print(f"  {r.parameter:10s} bias {r.avg_bias:+.4f}  coverage {r.coverage:.3f}")


def run_km(args: dict) -> None:
    out_dir = Path(args["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    times, events, groups = [], [], []
    group_col = args.get("group")
    with open(args["survival"], newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "time", "event"}.issubset(reader.fieldnames):
            raise io.IngestError(f"{args['survival']}: header must contain ['event', 'id', 'time']")
        if group_col and group_col not in reader.fieldnames:
            raise io.IngestError(f"{args['survival']}: group column {group_col!r} missing")
        for lineno, row in enumerate(reader, start=2):
            try:
                times.append(float(row["time"]))
                events.append(int(row["event"]))
            except ValueError as e:
                raise io.IngestError(f"{args['survival']}:{lineno}: {e}") from e
            groups.append(row[group_col] if group_col else "all")
    curves = kmsurv.kaplan_meier(np.array(times), np.array(events), group_labels=np.array(groups))
    io.write_km_curves(curves, out_dir / "km_curves.csv")
    _write_manifest(out_dir, "km", args)
    for c in curves:
        p = kmsurv.plateau(c)
        note = "informative" if p.informative else "not informative (last observation was an event)"
        print(f"group {c.group}: plateau {p.value:.4g} ({note})")


_COMMANDS = {"simulate": run_simulate, "fit": run_fit, "mc": run_mc, "km": run_km}


def replay_manifest(manifest_path, out_dir=None) -> None:
    """Re-execute the command recorded in a manifest; outputs are
    bit-identical on the same build."""
    manifest = io.read_manifest(manifest_path)
    args = dict(manifest["args"])
    if out_dir is not None:
        args["out_dir"] = str(out_dir)
    _COMMANDS[manifest["command"]](args)


# ---------------------------------------------------------------------------
# argparse layer


def _common(parser: argparse.ArgumentParser, config_required: bool = False):
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--config", required=config_required, help="YAML config file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jointcure",
        description="Joint longitudinal-survival cure modeling with a defective Gompertz baseline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a scenario dataset")
    p.add_argument("--scenario", choices=sorted(SCENARIOS), default="1")
    p.add_argument("--n", type=int, default=500)
    _common(p)

    p = sub.add_parser("fit", help="fit the joint cure model to CSV data")
    p.add_argument("--longitudinal", required=True)
    p.add_argument("--survival", required=True)
    p.add_argument("--compare-proper", action="store_true",
                   help="also fit the proper-Gompertz (alpha > 0) comparison model")
    _common(p, config_required=True)

    p = sub.add_parser("mc", help="Monte Carlo bias/coverage study")
    p.add_argument("--scenario", choices=sorted(SCENARIOS), default="1")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--progress", action="store_true")
    _common(p)

    p = sub.add_parser("km", help="Kaplan-Meier curves from a survival CSV")
    p.add_argument("--survival", required=True)
    p.add_argument("--group", default=None, help="grouping column name")
    _common(p)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    args = vars(ns).copy()
    command = args.pop("command")
    args = {k.replace("-", "_"): v for k, v in args.items()}
    if args.get("config"):
        try:
            args["config"] = io.read_config_raw(args["config"])
        except (io.ConfigError, OSError) as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
    try:
        _COMMANDS[command](args)
    except (io.IngestError, io.ConfigError, InvalidParameterError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (InferenceError, ModeNotFoundError, OracleError) as e:
        print(f"inference error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
