"""Trial scoring: enrollment models, adaptive s-norm, and the language offset.

The imposter cohort for trial scoring is built from training embeddings
(one averaged vector per speaker); the cross-language compensation offset
is estimated on prototype columns.  Those are two distinct populations and
are kept as two separate inputs throughout.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ClassTooSmall,
    DegenerateCohort,
    DimensionMismatch,
    EmptySet,
    MissingEmbedding,
    MissingLidDecision,
    ParamInvalid,
    ValidationError,
)
from .prototypes import PrototypeMatrix
from .vecmath import Domain, Embedding, Language, average_embedding, cosine, l2_normalize

log = logging.getLogger(__name__)

DEFAULT_TOP_N = 40


@dataclass(frozen=True)
class CohortEntry:
    speaker_id: str
    vec: np.ndarray
    domain: Domain
    language: Language


@dataclass(frozen=True)
class Cohort:
    """Imposter cohort: one (typically averaged) vector per speaker."""

    entries: tuple[CohortEntry, ...]
    tag: str = ""

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise EmptySet("cohort must contain at least one entry")
        ids = [e.speaker_id for e in entries]
        if len(set(ids)) != len(ids):
            raise ValidationError("cohort speaker_ids must be unique")
        dims = {e.vec.shape[0] for e in entries}
        if len(dims) != 1:
            raise DimensionMismatch(f"mixed cohort dimensions: {sorted(dims)}")
        unit = np.stack([l2_normalize(e.vec) for e in entries])
        unit.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "_unit_rows", unit)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def dim(self) -> int:
        return self.entries[0].vec.shape[0]

    @property
    def unit_rows(self) -> np.ndarray:
        return self._unit_rows

    @classmethod
    def from_embeddings(cls, embeddings: Iterable[Embedding], tag: str = "") -> "Cohort":
        """Average each speaker's length-normalized embeddings into one entry.

        Speaker order follows first appearance; the entry's domain/language
        labels are taken from the speaker's first utterance.
        """
        groups: dict[str, list[Embedding]] = {}
        for e in embeddings:
            groups.setdefault(e.speaker_id, []).append(e)
        entries = [
            CohortEntry(
                speaker_id=sid,
                vec=average_embedding(members),
                domain=members[0].domain,
                language=members[0].language,
            )
            for sid, members in groups.items()
        ]
        return cls(entries=tuple(entries), tag=tag)

    def restrict_domains(self, domains: Iterable[Domain]) -> "Cohort":
        allowed = set(domains)
        kept = tuple(e for e in self.entries if e.domain in allowed)
        names = "+".join(sorted(d.value for d in allowed))
        if not kept:
            raise EmptySet(f"no cohort entries left for domains {names}")
        return Cohort(kept, tag=f"{self.tag}|{names}" if self.tag else names)

    def excluding_speakers(self, speaker_ids: Iterable[str]) -> "Cohort":
        drop = set(speaker_ids)
        kept = tuple(e for e in self.entries if e.speaker_id not in drop)
        if not kept:
            raise EmptySet("excluding enrollment speakers emptied the cohort")
        if len(kept) == len(self.entries):
            return self
        return Cohort(kept, tag=self.tag)


@dataclass(frozen=True)
class SnormStats:
    """Mean and population standard deviation of the top-N cohort scores."""

    mu: float
    sigma: float
    top_n: int
    cohort_tag: str = ""

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ValidationError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class AlphaProvenance:
    top_n: int
    n_farsi: int
    n_usa: int
    mu_imposter_farsi: float
    mu_imposter_usa: float


@dataclass(frozen=True)
class LanguageOffset:
    """Compensation subtracted from the enrollment-side imposter mean when
    the test utterance is detected to be English."""

    alpha: float
    provenance: AlphaProvenance | None = None

    def __post_init__(self):
        if not np.isfinite(self.alpha):
            raise ValidationError("offset must be finite")


class ScoringMode(enum.Enum):
    RAW = "raw"
    SNORM = "snorm"
    SNORM_LID = "snorm-lid"


@dataclass(frozen=True)
class TrialScore:
    model_id: str
    test_utt_id: str
    raw: float
    normalized: float
    calibrated: float | None = None


def build_enrollment_model(utts: Sequence[Embedding]) -> np.ndarray:
    """Average of the L2-normalized enrollment embeddings (not re-normalized)."""
    return average_embedding(utts)


def snorm_stats(x, cohort: Cohort, top_n: int = DEFAULT_TOP_N) -> SnormStats:
    """Statistics of the top-N cohort scores for one vector.

    Scores x against every cohort entry by cosine, keeps the top_n highest,
    and returns their mean and population standard deviation.  A top_n
    beyond the cohort size falls back to the whole cohort with a warning so
    small runs stay usable.
    """
    if top_n < 2:
        raise ParamInvalid(f"top_n must be >= 2, got {top_n}")
    xhat = l2_normalize(x)
    if xhat.shape[0] != cohort.dim:
        raise DimensionMismatch(f"vector dim {xhat.shape[0]} vs cohort dim {cohort.dim}")
    scores = cohort.unit_rows @ xhat
    if top_n > len(scores):
        log.warning(
            "top_n=%d exceeds cohort size %d; using the whole cohort", top_n, len(scores)
        )
        top_n = len(scores)
    selected = np.partition(scores, len(scores) - top_n)[len(scores) - top_n :]
    mu = float(np.mean(selected))
    sigma = float(np.std(selected))
    if sigma <= 0.0:
        raise DegenerateCohort("selected cohort scores have zero variance")
    return SnormStats(mu=mu, sigma=sigma, top_n=top_n, cohort_tag=cohort.tag)


def adaptive_snorm(raw: float, stats_e: SnormStats, stats_t: SnormStats) -> float:
    """Two-sided adaptive score normalization."""
    return (raw - stats_t.mu) / stats_t.sigma + (raw - stats_e.mu) / stats_e.sigma


def language_dependent_snorm(
    raw: float,
    stats_e: SnormStats,
    stats_t: SnormStats,
    offset: LanguageOffset,
    test_is_english: bool,
) -> float:
    """Adaptive s-norm with the enrollment-side imposter mean lowered by
    ``alpha`` when the test utterance is English; otherwise identical
    (bit-exactly) to :func:`adaptive_snorm`."""
    alpha = offset.alpha if test_is_english else 0.0
    return (raw - stats_t.mu) / stats_t.sigma + (raw - (stats_e.mu - alpha)) / stats_e.sigma


def estimate_alpha(protos: PrototypeMatrix, top_n: int = DEFAULT_TOP_N) -> LanguageOffset:
    """Cross-language offset estimated on unit-normalized prototypes.

    mu_imposter_farsi: mean over Farsi prototypes of the top-N imposter
    mean against the other Farsi prototypes (leave-one-out; a prototype's
    self-score of 1.0 would bias the mean upward).  mu_imposter_usa: the
    same statistic for English-labeled prototypes against the full Farsi
    cohort.  alpha is their difference.
    """
    farsi = [i for i, sp in enumerate(protos.speakers) if sp.language is Language.FARSI]
    usa = [i for i, sp in enumerate(protos.speakers) if sp.language is Language.ENGLISH]
    if len(farsi) < top_n + 1:
        raise ClassTooSmall(
            f"need at least top_n+1={top_n + 1} Farsi prototypes, have {len(farsi)}"
        )
    if not usa:
        raise ClassTooSmall("need at least one English-labeled prototype")

    unit = protos.unit_rows
    farsi_entries = tuple(
        CohortEntry(
            speaker_id=protos.speakers[i].speaker_id,
            vec=unit[i],
            domain=protos.speakers[i].domain,
            language=protos.speakers[i].language,
        )
        for i in farsi
    )
    full = Cohort(farsi_entries, tag="alpha-farsi-prototypes")

    mu_fa = float(
        np.mean(
            [
                snorm_stats(
                    unit[i],
                    Cohort(farsi_entries[:k] + farsi_entries[k + 1 :], tag=full.tag),
                    top_n,
                ).mu
                for k, i in enumerate(farsi)
            ]
        )
    )
    mu_usa = float(np.mean([snorm_stats(unit[i], full, top_n).mu for i in usa]))
    return LanguageOffset(
        alpha=mu_fa - mu_usa,
        provenance=AlphaProvenance(
            top_n=top_n,
            n_farsi=len(farsi),
            n_usa=len(usa),
            mu_imposter_farsi=mu_fa,
            mu_imposter_usa=mu_usa,
        ),
    )


def score_trials(
    trials: Sequence[tuple[str, str]],
    enrollment_map: Mapping[str, Sequence[str]],
    embeddings: Mapping[str, Embedding] | Iterable[Embedding],
    cohort: Cohort | None,
    mode: ScoringMode,
    offset: LanguageOffset | None = None,
    lid_decisions: Mapping[str, Language] | None = None,
    top_n: int = DEFAULT_TOP_N,
    cache_stats: bool = True,
) -> list[TrialScore]:
    """Score every (model, test utterance) trial in the requested mode.

    Normalization statistics for each enrollment model and each test
    utterance are computed once and reused across trials; pass
    ``cache_stats=False`` to recompute per trial (same results, for
    equivalence checking).  Cohort entries sharing a speaker_id with a
    model's enrollment utterances are excluded from that model's imposter
    statistics.
    """
    if isinstance(embeddings, Mapping):
        emb = dict(embeddings)
    else:
        emb = {e.utt_id: e for e in embeddings}
    if mode is not ScoringMode.RAW:
        if cohort is None:
            raise ParamInvalid(f"mode {mode.value} requires a cohort")
    if mode is ScoringMode.SNORM_LID:
        if offset is None:
            raise ParamInvalid("mode snorm-lid requires a language offset")
        if lid_decisions is None:
            raise ParamInvalid("mode snorm-lid requires language decisions")

    def embedding_of(utt_id: str) -> Embedding:
        try:
            return emb[utt_id]
        except KeyError:
            raise MissingEmbedding(f"no embedding for utterance {utt_id!r}") from None

    model_vecs: dict[str, np.ndarray] = {}
    model_speakers: dict[str, frozenset[str]] = {}
    for model_id, utt_ids in enrollment_map.items():
        members = [embedding_of(u) for u in utt_ids]
        model_vecs[model_id] = build_enrollment_model(members)
        model_speakers[model_id] = frozenset(m.speaker_id for m in members)

    def model_stats(model_id: str) -> SnormStats:
        pruned = cohort.excluding_speakers(model_speakers[model_id])
        return snorm_stats(model_vecs[model_id], pruned, top_n)

    def test_stats(utt_id: str) -> SnormStats:
        return snorm_stats(embedding_of(utt_id).vec, cohort, top_n)

    e_cache: dict[str, SnormStats] = {}
    t_cache: dict[str, SnormStats] = {}

    results: list[TrialScore] = []
    for model_id, utt_id in trials:
        if model_id not in model_vecs:
            raise MissingEmbedding(f"trial references unknown model {model_id!r}")
        test_emb = embedding_of(utt_id)
        raw = cosine(model_vecs[model_id], test_emb.vec)
        if mode is ScoringMode.RAW:
            normalized = raw
        else:
            if cache_stats:
                if model_id not in e_cache:
                    e_cache[model_id] = model_stats(model_id)
                if utt_id not in t_cache:
                    t_cache[utt_id] = test_stats(utt_id)
                st_e, st_t = e_cache[model_id], t_cache[utt_id]
            else:
                st_e, st_t = model_stats(model_id), test_stats(utt_id)
            if mode is ScoringMode.SNORM:
                normalized = adaptive_snorm(raw, st_e, st_t)
            else:
                if utt_id not in lid_decisions:
                    raise MissingLidDecision(f"no language decision for {utt_id!r}")
                is_en = lid_decisions[utt_id] is Language.ENGLISH
                normalized = language_dependent_snorm(raw, st_e, st_t, offset, is_en)
        results.append(
            TrialScore(model_id=model_id, test_utt_id=utt_id, raw=raw, normalized=normalized)
        )
    return results
