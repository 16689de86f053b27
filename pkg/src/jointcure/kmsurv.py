"""Kaplan-Meier product-limit estimator with plateau extraction.

A terminal flat stretch of the curve is the nonparametric signature of a
cured subpopulation; the plateau value is comparable to the model-based cure
fraction.  Ties follow the standard convention: at equal times, events are
processed before censorings (both share the same at-risk count).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PlateauResult:
    """Final survival estimate; informative only when follow-up ended in
    censoring (an observed terminal event drops the curve to its true end)."""

    value: float
    informative: bool


@dataclass(frozen=True)
class KMCurve:
    """Product-limit estimate over the event-time grid (t=0 included)."""

    times: np.ndarray
    estimates: np.ndarray
    at_risk: np.ndarray
    n_events: np.ndarray
    group: object = "all"
    last_observation_censored: bool = True

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "estimates", np.asarray(self.estimates, dtype=float))
        object.__setattr__(self, "at_risk", np.asarray(self.at_risk, dtype=int))
        object.__setattr__(self, "n_events", np.asarray(self.n_events, dtype=int))
        if np.any(np.diff(self.estimates) > 1e-12) or np.any(self.estimates < -1e-12) or np.any(self.estimates > 1 + 1e-12):
            raise ValueError("survival estimates must be nonincreasing within [0, 1]")

    @property
    def plateau_value(self) -> float:
        return float(self.estimates[-1])


def _km_single(times: np.ndarray, events: np.ndarray, group) -> KMCurve:
    order = np.argsort(times, kind="stable")
    times = times[order]
    events = events[order]
    n = len(times)
    uniq = np.unique(times[events == 1])
    grid = [0.0]
    est = [1.0]
    risk = [n]
    nev = [0]
    s = 1.0
    for t in uniq:
        at_risk = int(np.sum(times >= t))
        d = int(np.sum((times == t) & (events == 1)))
        s *= 1.0 - d / at_risk
        grid.append(float(t))
        est.append(s)
        risk.append(at_risk)
        nev.append(d)
    return KMCurve(
        times=np.array(grid),
        estimates=np.array(est),
        at_risk=np.array(risk),
        n_events=np.array(nev),
        group=group,
        last_observation_censored=bool(events[np.argmax(times)] == 0),
    )


def kaplan_meier(times, events, group_labels=None) -> list[KMCurve]:
    """Product-limit curves, one per group (a single 'all' group by default)."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events)
    if times.size == 0:
        raise ValueError("empty input")
    if times.shape != events.shape:
        raise ValueError("times and events must have equal length")
    if np.any(times < 0) or not np.all(np.isfinite(times)):
        raise ValueError("times must be finite and nonnegative")
    if not np.all(np.isin(events, (0, 1))):
        raise ValueError("events must be 0/1")
    events = events.astype(int)
    if group_labels is None:
        return [_km_single(times, events, "all")]
    group_labels = np.asarray(group_labels)
    if group_labels.shape != times.shape:
        raise ValueError("group_labels must match times in length")
    return [
        _km_single(times[group_labels == g], events[group_labels == g], g)
        for g in sorted(set(group_labels.tolist()), key=str)
    ]


def plateau(curve: KMCurve) -> PlateauResult:
    """Terminal estimate of the curve with its informativeness flag."""
    return PlateauResult(value=curve.plateau_value, informative=curve.last_observation_censored)
