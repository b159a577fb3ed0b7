"""Gaussian-backend language detection on unit-normalized speaker prototypes.

Two class-conditional Gaussians with a shared (pooled, ridged) covariance.
The effective English mean can be pulled toward the Farsi mean to model
English spoken by native Farsi speakers.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import (
    ClassTooSmall,
    CovarianceSingular,
    DimensionMismatch,
    ValidationError,
    WeightOutOfRange,
)
from .prototypes import PrototypeMatrix
from .vecmath import Embedding, Language, l2_normalize

CLASS_FARSI = "FARSI"
CLASS_USA = "USA"

#: Ridge on the pooled covariance, as a fraction of the mean eigenvalue.
#: Prototype counts are far below the embedding dimension, so the raw
#: pooled covariance is rank-deficient.
RIDGE_SCALE = 1e-4

#: Absolute ridge floor for zero-scatter inputs (keeps the matrix PD).
RIDGE_FLOOR = 1e-8


@dataclass(frozen=True)
class GaussianBackend:
    mu_farsi: np.ndarray
    mu_usa: np.ndarray
    mu_english_effective: np.ndarray
    shared_cov: np.ndarray
    interpolation_weight: float = 1.0
    diagonal: bool = False

    def __post_init__(self):
        mu_fa = np.asarray(self.mu_farsi, dtype=np.float64).copy()
        mu_us = np.asarray(self.mu_usa, dtype=np.float64).copy()
        mu_en = np.asarray(self.mu_english_effective, dtype=np.float64).copy()
        cov = np.asarray(self.shared_cov, dtype=np.float64).copy()
        d = mu_fa.shape[0]
        if mu_us.shape != (d,) or mu_en.shape != (d,) or cov.shape != (d, d):
            raise DimensionMismatch("backend mean/covariance shapes disagree")
        if not np.allclose(cov, cov.T, atol=1e-9, rtol=0):
            raise ValidationError("shared covariance is not symmetric")
        w = self.interpolation_weight
        if not 0.0 <= w <= 1.0:
            raise WeightOutOfRange(f"interpolation weight {w} outside [0, 1]")
        if not np.allclose(mu_en, w * mu_us + (1.0 - w) * mu_fa, atol=1e-12, rtol=0):
            raise ValidationError("effective English mean deviates from its interpolation")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise CovarianceSingular("shared covariance is not positive definite") from None
        for name, val in (
            ("mu_farsi", mu_fa),
            ("mu_usa", mu_us),
            ("mu_english_effective", mu_en),
            ("shared_cov", cov),
        ):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        chol.setflags(write=False)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return self.mu_farsi.shape[0]

    def log_density(self, x: np.ndarray, mu: np.ndarray) -> float:
        diff = x - mu
        # forward substitution via the cached Cholesky factor
        u = np.linalg.solve(self._chol, diff)
        quad = float(u @ u)
        logdet = 2.0 * float(np.sum(np.log(np.diagonal(self._chol))))
        return -0.5 * (quad + logdet + self.dim * np.log(2.0 * np.pi))


def classes_from_language_labels(protos: PrototypeMatrix) -> dict[str, str]:
    """Map FARSI-labeled speakers to the Farsi class and ENGLISH-labeled
    speakers to the USA class; other labels are left out (no inference of
    nationality beyond the explicit metadata)."""
    out: dict[str, str] = {}
    for sp in protos.speakers:
        if sp.language is Language.FARSI:
            out[sp.speaker_id] = CLASS_FARSI
        elif sp.language is Language.ENGLISH:
            out[sp.speaker_id] = CLASS_USA
    return out


def train_gb(
    protos: PrototypeMatrix,
    class_of: Mapping[str, str] | None = None,
    diagonal: bool = False,
) -> GaussianBackend:
    """Fit class means and a shared covariance on unit-normalized prototypes.

    ``class_of`` maps speaker_id to CLASS_FARSI / CLASS_USA; unmapped
    speakers are ignored.  Defaults to the prototype language labels.  The
    pooled within-class covariance (n-2 divisor) gets a ridge of
    ``RIDGE_SCALE * trace/D`` (floored for zero scatter); ``diagonal=True``
    keeps only its diagonal.
    """
    if class_of is None:
        class_of = classes_from_language_labels(protos)
    unit = protos.unit_rows
    members: dict[str, list[int]] = {CLASS_FARSI: [], CLASS_USA: []}
    for j, sp in enumerate(protos.speakers):
        cls = class_of.get(sp.speaker_id)
        if cls is None:
            continue
        if cls not in members:
            raise ValidationError(f"unknown class {cls!r} for {sp.speaker_id!r}")
        members[cls].append(j)
    for cls, idx in members.items():
        if len(idx) < 2:
            raise ClassTooSmall(f"class {cls} has {len(idx)} prototypes, need >= 2")

    fa = unit[members[CLASS_FARSI]]
    us = unit[members[CLASS_USA]]
    mu_fa = fa.mean(axis=0)
    mu_us = us.mean(axis=0)
    centered = np.concatenate([fa - mu_fa, us - mu_us])
    dof = centered.shape[0] - 2
    cov = (centered.T @ centered) / dof
    if diagonal:
        cov = np.diag(np.diagonal(cov))
    d = protos.dim
    ridge = max(RIDGE_SCALE * float(np.trace(cov)) / d, RIDGE_FLOOR)
    cov = cov + ridge * np.eye(d)
    return GaussianBackend(
        mu_farsi=mu_fa,
        mu_usa=mu_us,
        mu_english_effective=mu_us,
        shared_cov=cov,
        interpolation_weight=1.0,
        diagonal=diagonal,
    )


def adapt_english_mean(gb: GaussianBackend, w: float) -> GaussianBackend:
    """Move the effective English mean to ``w*mu_usa + (1-w)*mu_farsi``."""
    if not 0.0 <= w <= 1.0:
        raise WeightOutOfRange(f"interpolation weight {w} outside [0, 1]")
    return dataclasses.replace(
        gb,
        mu_english_effective=w * gb.mu_usa + (1.0 - w) * gb.mu_farsi,
        interpolation_weight=w,
    )


def log_likelihood_ratio(gb: GaussianBackend, vec: np.ndarray) -> float:
    """log N(x; mu_EN, cov) - log N(x; mu_FA, cov) on the normalized input."""
    x = l2_normalize(vec)
    if x.shape[0] != gb.dim:
        raise DimensionMismatch(f"vector dim {x.shape[0]} vs backend dim {gb.dim}")
    return gb.log_density(x, gb.mu_english_effective) - gb.log_density(x, gb.mu_farsi)


def classify(gb: GaussianBackend, emb: Embedding, tau: float = 0.0) -> tuple[Language, float]:
    """Language decision for one embedding: ENGLISH iff llr > tau."""
    llr = log_likelihood_ratio(gb, emb.vec)
    return (Language.ENGLISH if llr > tau else Language.FARSI), llr


def affine_coefficients(gb: GaussianBackend) -> tuple[np.ndarray, float]:
    """(a, b) with ``llr(x) = a.x + b`` for normalized x.

    With a shared covariance the log-likelihood ratio is affine in the
    input; this form enables fast batch classification and is asserted to
    agree with :func:`log_likelihood_ratio` in the test suite.
    """
    a = np.linalg.solve(gb.shared_cov, gb.mu_english_effective - gb.mu_farsi)
    b = -0.5 * (
        float(gb.mu_english_effective @ np.linalg.solve(gb.shared_cov, gb.mu_english_effective))
        - float(gb.mu_farsi @ np.linalg.solve(gb.shared_cov, gb.mu_farsi))
    )
    return a, b
