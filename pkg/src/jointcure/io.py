"""CSV ingestion, config parsing, and report emission for the batch CLI.

Input schema (two files):
  longitudinal CSV: id,biomarker,time,count,<covariates...>
  survival CSV:     id,time,event,<covariates...>   (one row per subject)

A YAML config maps column names onto design roles.  Design tokens
"intercept" and "time" are synthesized; every other token names a column of
the corresponding CSV.  Example:

    model:
      biomarkers:
        - name: anxiety
          fixed: [intercept, time, drug]
          random: [intercept, time]
      survival:
        covariates: [drug]
        group_by: drug
    encodings:
      drug: {CBZ: 0, LTG: 1}

Report files are written with 6 significant digits; dataset files (the
ingestion schema) keep full precision so that simulate -> ingest round-trips
exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .inference import FitConfig, PosteriorSummary, PriorSpec
from .kmsurv import KMCurve
from .model import (
    BiomarkerDesign,
    JointDataset,
    JointModelSpec,
    LongitudinalRecord,
    SubjectData,
)
from .simulate import SimulatedDataset

SPECIAL_TOKENS = ("intercept", "time")


class IngestError(ValueError):
    """Input file or config is malformed; message carries file/line context."""


class ConfigError(ValueError):
    pass


def fmt6(x) -> str:
    """Report-file float formatting: 6 significant digits."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.6g}"


# ---------------------------------------------------------------------------
# config


@dataclass(frozen=True)
class ModelConfig:
    """Parsed config: design spec plus fit settings."""

    spec: JointModelSpec
    group_by: str | None
    encodings: dict
    baseline: str
    priors: PriorSpec
    fit: FitConfig
    raw: dict

    @property
    def proper_baseline(self) -> bool:
        return self.baseline == "proper"


def read_config_raw(path) -> dict:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return raw


def load_config(path) -> ModelConfig:
    return parse_config(read_config_raw(path))


def parse_config(raw: dict) -> ModelConfig:
    model = raw.get("model")
    if not isinstance(model, dict):
        raise ConfigError("config needs a 'model' section")
    bms = model.get("biomarkers")
    if not bms:
        raise ConfigError("config needs model.biomarkers")
    try:
        spec = JointModelSpec(
            biomarkers=tuple(
                BiomarkerDesign(name=str(bm["name"]), fixed=tuple(bm["fixed"]), random=tuple(bm["random"]))
                for bm in bms
            ),
            survival_covariates=tuple(model.get("survival", {}).get("covariates", ())),
        )
    except (KeyError, TypeError) as e:
        raise ConfigError(f"malformed biomarker design: {e}") from e

    baseline = str(model.get("baseline", "defective"))
    if baseline not in ("defective", "proper"):
        raise ConfigError(f"model.baseline must be 'defective' or 'proper', got {baseline!r}")

    priors_raw = raw.get("priors", {}) or {}
    try:
        priors = PriorSpec(**priors_raw)
    except TypeError as e:
        raise ConfigError(f"unknown prior setting: {e}") from e

    fit_raw = dict(raw.get("inference", {}) or {})
    if baseline == "proper":
        fit_raw.setdefault("alpha_bounds", (1e-6, None))
    if "alpha_bounds" in fit_raw and fit_raw["alpha_bounds"] is not None:
        fit_raw["alpha_bounds"] = tuple(fit_raw["alpha_bounds"])
    try:
        fit = FitConfig(**fit_raw)
    except TypeError as e:
        raise ConfigError(f"unknown inference setting: {e}") from e

    return ModelConfig(
        spec=spec,
        group_by=model.get("survival", {}).get("group_by"),
        encodings=raw.get("encodings", {}) or {},
        baseline=baseline,
        priors=priors,
        fit=fit,
        raw=raw,
    )


# ---------------------------------------------------------------------------
# ingestion


def _parse_float(value: str, what: str, where: str) -> float:
    try:
        out = float(value)
    except ValueError as e:
        raise IngestError(f"{where}: {what} {value!r} is not a number") from e
    if not math.isfinite(out):
        raise IngestError(f"{where}: {what} must be finite, got {value!r}")
    return out


def _encode(column: str, value: str, encodings: dict, where: str) -> float:
    enc = encodings.get(column)
    if enc is not None:
        if value not in enc:
            raise IngestError(f"{where}: value {value!r} of column {column!r} not in its encoding {sorted(enc)}")
        return float(enc[value])
    return _parse_float(value, f"column {column!r}", where)


def _design_vector(tokens, row: dict, time: float, encodings: dict, where: str) -> np.ndarray:
    out = np.empty(len(tokens))
    for j, tok in enumerate(tokens):
        if tok == "intercept":
            out[j] = 1.0
        elif tok == "time":
            out[j] = time
        else:
            if tok not in row:
                raise IngestError(f"{where}: design column {tok!r} missing")
            out[j] = _encode(tok, row[tok], encodings, where)
    return out


def ingest(longitudinal_csv, survival_csv, config: ModelConfig):
    """Build a validated JointDataset plus group labels from the two CSVs."""
    spec = config.spec
    bm_index = {bm.name: k for k, bm in enumerate(spec.biomarkers)}

    surv_rows = {}
    order = []
    with open(survival_csv, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"id", "time", "event"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise IngestError(f"{survival_csv}: header must contain {sorted(required)}")
        for lineno, row in enumerate(reader, start=2):
            where = f"{survival_csv}:{lineno}"
            sid = row["id"]
            if sid in surv_rows:
                raise IngestError(f"{where}: duplicate subject id {sid!r}")
            t = _parse_float(row["time"], "time", where)
            if t < 0:
                raise IngestError(f"{where}: time must be nonnegative")
            if row["event"] not in ("0", "1"):
                raise IngestError(f"{where}: event must be 0 or 1, got {row['event']!r}")
            surv_rows[sid] = (t, int(row["event"]), row)
            order.append(sid)
    if not order:
        raise IngestError(f"{survival_csv}: no subjects")

    records: dict = {sid: [] for sid in order}
    with open(longitudinal_csv, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"id", "biomarker", "time", "count"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise IngestError(f"{longitudinal_csv}: header must contain {sorted(required)}")
        for lineno, row in enumerate(reader, start=2):
            where = f"{longitudinal_csv}:{lineno}"
            sid = row["id"]
            if sid not in records:
                raise IngestError(f"{where}: subject {sid!r} has no row in the survival file")
            name = row["biomarker"]
            if name not in bm_index:
                raise IngestError(f"{where}: unknown biomarker {name!r}; config defines {sorted(bm_index)}")
            k = bm_index[name]
            t = _parse_float(row["time"], "time", where)
            if t < 0:
                raise IngestError(f"{where}: time must be nonnegative")
            count_str = row["count"]
            try:
                count = int(count_str)
            except ValueError as e:
                raise IngestError(f"{where}: count {count_str!r} is not an integer") from e
            if count < 0:
                raise IngestError(f"{where}: count must be nonnegative")
            bm = spec.biomarkers[k]
            records[sid].append(
                LongitudinalRecord(
                    time=t,
                    count=count,
                    biomarker_index=k,
                    fixed_covariates=_design_vector(bm.fixed, row, t, config.encodings, where),
                    random_design=_design_vector(bm.random, row, t, config.encodings, where),
                )
            )

    subjects = []
    groups = []
    for sid in order:
        t, ev, row = surv_rows[sid]
        where = f"{survival_csv}: subject {sid}"
        w = _design_vector(spec.survival_covariates, row, t, config.encodings, where)
        subjects.append(
            SubjectData(id=sid, records=tuple(records[sid]), observed_time=t, event=ev, survival_covariates=w)
        )
        if config.group_by is not None:
            if config.group_by not in row:
                raise IngestError(f"{where}: group_by column {config.group_by!r} missing")
            groups.append(row[config.group_by])
        else:
            groups.append("all")

    w_matrix = np.array([s.survival_covariates for s in subjects])
    for j, name in enumerate(spec.survival_covariates):
        if len(subjects) > 1 and np.all(w_matrix[:, j] == 1.0):
            raise IngestError(
                f"survival column {name!r} is constantly 1: an explicit intercept is not "
                "identifiable next to the baseline gamma0"
            )

    return JointDataset(subjects=tuple(subjects), spec=spec), tuple(groups)


# ---------------------------------------------------------------------------
# dataset emission (ingestion schema; full float precision)


def scenario_config_yaml() -> dict:
    """The config dict matching the simulation scenarios' design."""
    return {
        "model": {
            "biomarkers": [
                {"name": "y", "fixed": ["intercept", "time", "x1", "x2"], "random": ["intercept", "time"]}
            ],
            "survival": {"covariates": ["x1"], "group_by": "x1"},
        }
    }


def write_simulated(ds: SimulatedDataset, out_dir) -> dict:
    """Emit longitudinal.csv + survival.csv + latent.csv; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    long_path = out_dir / "longitudinal.csv"
    surv_path = out_dir / "survival.csv"
    latent_path = out_dir / "latent.csv"

    with open(long_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "biomarker", "time", "count", "x1", "x2"])
        for subj in ds.subjects:
            for rec in subj.records:
                writer.writerow(
                    [subj.id, "y", repr(rec.time), rec.count,
                     repr(float(rec.fixed_covariates[2])), repr(float(rec.fixed_covariates[3]))]
                )
    with open(surv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "time", "event", "x1"])
        for subj in ds.subjects:
            writer.writerow([subj.id, repr(subj.observed_time), subj.event, repr(float(subj.survival_covariates[0]))])
    with open(latent_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        d = ds.b.shape[1]
        writer.writerow(["id", *[f"b{j}" for j in range(d)], "cure_prob", "cured", "latent_time"])
        for i, subj in enumerate(ds.subjects):
            writer.writerow(
                [subj.id, *[repr(float(v)) for v in ds.b[i]], repr(float(ds.cure_prob[i])),
                 int(ds.cured[i]), repr(float(ds.latent_time[i]))]
            )
    return {"longitudinal": str(long_path), "survival": str(surv_path), "latent": str(latent_path)}


# ---------------------------------------------------------------------------
# report emission (6 significant digits)


def write_parameters(summary: PosteriorSummary, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "mean", "sd", "q025", "q975"])
        for p in summary.parameters:
            writer.writerow([p.name, fmt6(p.mean), fmt6(p.sd), fmt6(p.q025), fmt6(p.q975)])
        for p in summary.hazard_ratios:
            writer.writerow([p.name, fmt6(p.mean), fmt6(p.sd), fmt6(p.q025), fmt6(p.q975)])


def write_cure_fractions(summary: PosteriorSummary, path) -> None:
    """Per-subject rows plus one aggregate row per group."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scope", "id", "group", "mean", "q025", "q975"])
        for i, sid in enumerate(summary.cure_ids):
            writer.writerow(
                ["subject", sid, summary.cure_group[i],
                 fmt6(summary.cure_mean[i]), fmt6(summary.cure_lo[i]), fmt6(summary.cure_hi[i])]
            )
        for g, (mean, lo, hi) in summary.group_cure.items():
            writer.writerow(["group", "", g, fmt6(mean), fmt6(lo), fmt6(hi)])


def write_km_curves(curves: list[KMCurve], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "time", "estimate", "at_risk", "n_events"])
        for c in curves:
            for t, s, r, d in zip(c.times, c.estimates, c.at_risk, c.n_events):
                writer.writerow([c.group, fmt6(t), fmt6(s), int(r), int(d)])


def write_model_curves(rows, path) -> None:
    """rows: iterable of (model, group, time, survival)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "group", "time", "survival"])
        for model, group, t, s in rows:
            writer.writerow([model, group, fmt6(t), fmt6(s)])


def write_manifest(manifest: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
