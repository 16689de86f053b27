"""Joint-model data structures and deterministic evaluators.

Couples K Poisson longitudinal sub-models (log link, shared subject random
effects) to a defective-Gompertz hazard.  Random effects enter the hazard
through association coefficients, so the plateau of each subject's survival
curve depends on their latent intercepts/slopes: the subject-level cure
fraction is exp(exp(gamma0 + eta_s) / alpha) whenever alpha < 0.

Layout convention used everywhere: the flat random-effect vector b_i stacks
biomarkers in order, each biomarker contributing its random-design
coordinates (intercept first, then slope).  Association coefficients gamma
share the same flat layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import gompertz
from .gompertz import GompertzParams, InvalidParameterError


class DimensionError(ValueError):
    """Vector lengths do not match the model's design dimensions."""


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional")
    return arr


@dataclass(frozen=True)
class LongitudinalRecord:
    """One count measurement: covariates plus the random-effect design row."""

    time: float
    count: int
    biomarker_index: int
    fixed_covariates: np.ndarray
    random_design: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "fixed_covariates", _as_vector(self.fixed_covariates, "fixed_covariates"))
        object.__setattr__(self, "random_design", _as_vector(self.random_design, "random_design"))
        if not (math.isfinite(self.time) and self.time >= 0.0):
            raise InvalidParameterError(f"record time must be finite and >= 0, got {self.time}")
        if self.count < 0 or int(self.count) != self.count:
            raise InvalidParameterError(f"count must be a nonnegative integer, got {self.count}")


@dataclass(frozen=True)
class SubjectData:
    """One individual: longitudinal records plus the observed-time pair."""

    id: object
    records: tuple
    observed_time: float
    event: int
    survival_covariates: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "survival_covariates", _as_vector(self.survival_covariates, "survival_covariates"))
        if not (math.isfinite(self.observed_time) and self.observed_time >= 0.0):
            raise InvalidParameterError(f"observed_time must be finite and >= 0, got {self.observed_time}")
        if self.event not in (0, 1):
            raise InvalidParameterError(f"event indicator must be 0 or 1, got {self.event}")


@dataclass(frozen=True)
class FixedEffects:
    """All non-random coefficients of the joint model.

    beta is a tuple of per-biomarker coefficient vectors; gamma_assoc a tuple
    of per-biomarker association vectors aligned with the random-effect
    layout.  alpha and gamma0 parametrize the baseline hazard
    exp(alpha*t + gamma0).
    """

    beta: tuple
    psi: np.ndarray
    gamma_assoc: tuple
    gamma0: float
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(_as_vector(b, "beta") for b in self.beta))
        object.__setattr__(self, "psi", _as_vector(self.psi, "psi"))
        object.__setattr__(self, "gamma_assoc", tuple(_as_vector(g, "gamma_assoc") for g in self.gamma_assoc))
        for name in ("gamma0", "alpha"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidParameterError(f"{name} must be finite")

    @property
    def n_biomarkers(self) -> int:
        return len(self.beta)

    @property
    def gamma_flat(self) -> np.ndarray:
        """Association coefficients concatenated in the flat b layout."""
        return np.concatenate(self.gamma_assoc) if self.gamma_assoc else np.empty(0)

    @property
    def beta_flat(self) -> np.ndarray:
        return np.concatenate(self.beta) if self.beta else np.empty(0)

    def random_slices(self) -> list[slice]:
        """Slice of the flat b vector belonging to each biomarker."""
        out, start = [], 0
        for g in self.gamma_assoc:
            out.append(slice(start, start + len(g)))
            start += len(g)
        return out


@dataclass(frozen=True)
class RandomEffectsSpec:
    """Dimension layout and N(0, Sigma) law of the shared random effects.

    sigma holds per-coordinate standard deviations in the flat layout; corr
    the full correlation matrix.  SPD is enforced at construction by
    factorizing the implied covariance.
    """

    dims: tuple
    sigma: np.ndarray
    corr: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        sigma = _as_vector(self.sigma, "sigma")
        object.__setattr__(self, "sigma", sigma)
        corr = np.asarray(self.corr, dtype=float)
        object.__setattr__(self, "corr", corr)
        d = sum(self.dims)
        if len(sigma) != d:
            raise DimensionError(f"sigma has length {len(sigma)}, layout needs {d}")
        if corr.shape != (d, d):
            raise DimensionError(f"corr must be {d}x{d}, got {corr.shape}")
        if np.any(sigma <= 0.0) or not np.all(np.isfinite(sigma)):
            raise InvalidParameterError("random-effect standard deviations must be positive")
        if not np.allclose(corr, corr.T) or not np.allclose(np.diag(corr), 1.0):
            raise InvalidParameterError("corr must be symmetric with unit diagonal")
        off = corr[~np.eye(d, dtype=bool)]
        if np.any(np.abs(off) >= 1.0):
            raise InvalidParameterError("correlations must lie strictly inside (-1, 1)")
        try:
            chol = np.linalg.cholesky(self.covariance)
        except np.linalg.LinAlgError as e:
            raise InvalidParameterError("implied covariance is not positive definite") from e
        object.__setattr__(self, "_chol", chol)

    @property
    def total_dim(self) -> int:
        return sum(self.dims)

    @property
    def covariance(self) -> np.ndarray:
        return self.corr * np.outer(self.sigma, self.sigma)

    @property
    def cholesky(self) -> np.ndarray:
        """Lower-triangular factor L with L L^T = covariance."""
        return self._chol

    @property
    def precision(self) -> np.ndarray:
        eye = np.eye(self.total_dim)
        l_inv = np.linalg.solve(self._chol, eye)
        return l_inv.T @ l_inv

    @property
    def log_det_covariance(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    @classmethod
    def intercept_slope(cls, sigma, rho: float) -> "RandomEffectsSpec":
        """Single-biomarker intercept/slope spec with correlation rho."""
        sigma = _as_vector(sigma, "sigma")
        corr = np.array([[1.0, rho], [rho, 1.0]])
        return cls(dims=(2,), sigma=sigma, corr=corr)


@dataclass(frozen=True)
class RandomEffects:
    """Subject-specific effects in the flat biomarker-major layout."""

    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "b", _as_vector(self.b, "b"))

    @classmethod
    def zeros(cls, dim: int) -> "RandomEffects":
        return cls(np.zeros(dim))


@dataclass(frozen=True)
class BiomarkerDesign:
    """Names the design columns for one biomarker.

    Tokens: "intercept" and "time" are synthesized; anything else is a named
    covariate column of the longitudinal input.
    """

    name: str
    fixed: tuple
    random: tuple

    def __post_init__(self):
        object.__setattr__(self, "fixed", tuple(self.fixed))
        object.__setattr__(self, "random", tuple(self.random))
        if not self.fixed:
            raise InvalidParameterError(f"biomarker {self.name!r} needs at least one fixed column")
        if not self.random:
            raise InvalidParameterError(f"biomarker {self.name!r} needs at least one random column")


@dataclass(frozen=True)
class JointModelSpec:
    """Dimensions and design mapping for one fit.

    The survival design must not contain an explicit intercept: the baseline
    already carries gamma0, and a duplicate intercept is unidentifiable.
    """

    biomarkers: tuple
    survival_covariates: tuple

    def __post_init__(self):
        object.__setattr__(self, "biomarkers", tuple(self.biomarkers))
        object.__setattr__(self, "survival_covariates", tuple(self.survival_covariates))
        names = [bm.name for bm in self.biomarkers]
        if len(set(names)) != len(names):
            raise InvalidParameterError("biomarker names must be unique")
        if any(c == "intercept" for c in self.survival_covariates):
            raise InvalidParameterError(
                "survival design must not contain an intercept column: gamma0 is the baseline intercept"
            )

    @property
    def n_biomarkers(self) -> int:
        return len(self.biomarkers)

    @property
    def n_beta(self) -> int:
        return sum(len(bm.fixed) for bm in self.biomarkers)

    @property
    def n_psi(self) -> int:
        return len(self.survival_covariates)

    @property
    def random_dims(self) -> tuple:
        return tuple(len(bm.random) for bm in self.biomarkers)

    @property
    def n_random(self) -> int:
        return sum(self.random_dims)

    def beta_slices(self) -> list[slice]:
        out, start = [], 0
        for bm in self.biomarkers:
            out.append(slice(start, start + len(bm.fixed)))
            start += len(bm.fixed)
        return out

    def random_slices(self) -> list[slice]:
        out, start = [], 0
        for bm in self.biomarkers:
            out.append(slice(start, start + len(bm.random)))
            start += len(bm.random)
        return out

    def random_labels(self) -> list[str]:
        return [f"{bm.name}.{tok}" for bm in self.biomarkers for tok in bm.random]


def scenario_spec(biomarker_name: str = "y") -> JointModelSpec:
    """The single-biomarker design of the simulation scenarios."""
    return JointModelSpec(
        biomarkers=(
            BiomarkerDesign(
                name=biomarker_name,
                fixed=("intercept", "time", "x1", "x2"),
                random=("intercept", "time"),
            ),
        ),
        survival_covariates=("x1",),
    )


def longitudinal_linear_predictor(rec: LongitudinalRecord, fx: FixedEffects, b: RandomEffects) -> float:
    """eta^L = x' beta_k + z' b_ik; the Poisson mean is exp(eta^L)."""
    k = rec.biomarker_index
    if not 0 <= k < fx.n_biomarkers:
        raise DimensionError(f"biomarker index {k} outside 0..{fx.n_biomarkers - 1}")
    beta_k = fx.beta[k]
    if len(rec.fixed_covariates) != len(beta_k):
        raise DimensionError(
            f"fixed covariates have length {len(rec.fixed_covariates)}, beta_{k} has {len(beta_k)}"
        )
    sl = fx.random_slices()[k]
    b_ik = b.b[sl]
    if len(rec.random_design) != len(b_ik):
        raise DimensionError(
            f"random design has length {len(rec.random_design)}, b_{k} has {len(b_ik)}"
        )
    return float(rec.fixed_covariates @ beta_k + rec.random_design @ b_ik)


def survival_linear_predictor(w, fx: FixedEffects, b: RandomEffects) -> float:
    """eta^S = w' psi + sum_k b_ik' gamma_k."""
    w = _as_vector(w, "w")
    if len(w) != len(fx.psi):
        raise DimensionError(f"w has length {len(w)}, psi has {len(fx.psi)}")
    gamma = fx.gamma_flat
    if len(b.b) != len(gamma):
        raise DimensionError(f"b has length {len(b.b)}, gamma has {len(gamma)}")
    return float(w @ fx.psi + b.b @ gamma)


def _subject_params(fx: FixedEffects, eta_s: float) -> GompertzParams:
    return GompertzParams(alpha=fx.alpha, mu=math.exp(fx.gamma0 + eta_s))


def subject_hazard(t, fx: FixedEffects, eta_s: float):
    """h_i(t) = exp(alpha*t + gamma0 + eta_s)."""
    return gompertz.hazard(t, _subject_params(fx, eta_s))


def subject_cumulative_hazard(t, fx: FixedEffects, eta_s: float):
    """H_i(t) = exp(gamma0 + eta_s) * (exp(alpha*t) - 1) / alpha."""
    return gompertz.cumulative_hazard(t, _subject_params(fx, eta_s))


def subject_cure_fraction(fx: FixedEffects, eta_s: float) -> float:
    """Plateau of S_i(t): exp(exp(gamma0 + eta_s) / alpha) when alpha < 0, else 0.

    Strictly decreasing in eta_s for alpha < 0: a larger risk score leaves
    less immune mass.
    """
    return gompertz.cure_fraction(_subject_params(fx, eta_s))


@dataclass(frozen=True)
class JointDataset:
    """Subjects plus the design spec; the unit every fit consumes."""

    subjects: tuple
    spec: JointModelSpec

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        slices = self.spec.beta_slices()
        rdims = self.spec.random_dims
        for subj in self.subjects:
            if len(subj.survival_covariates) != self.spec.n_psi:
                raise DimensionError(
                    f"subject {subj.id}: survival covariates have length "
                    f"{len(subj.survival_covariates)}, spec needs {self.spec.n_psi}"
                )
            for rec in subj.records:
                k = rec.biomarker_index
                if not 0 <= k < self.spec.n_biomarkers:
                    raise DimensionError(f"subject {subj.id}: biomarker index {k} out of range")
                nfix = slices[k].stop - slices[k].start
                if len(rec.fixed_covariates) != nfix:
                    raise DimensionError(
                        f"subject {subj.id}: record fixed design length "
                        f"{len(rec.fixed_covariates)} != {nfix} for biomarker {k}"
                    )
                if len(rec.random_design) != rdims[k]:
                    raise DimensionError(
                        f"subject {subj.id}: record random design length "
                        f"{len(rec.random_design)} != {rdims[k]} for biomarker {k}"
                    )

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)
