"""Detection metrics: ROC AUC, TDR at fixed FDR, attention coverage.

Conventions (documented because the thresholding convention decides exact
oracle agreement): the fake score of a sample is any monotone function of
(fake logit - real logit); a sample counts as detected when score > t; the
operating threshold t* is the smallest value whose false-detect rate on
real samples is <= the requested level, measured on the evaluated set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedCoverageError, UndefinedMetricError

REAL, FAKE = 0, 1


@dataclass(frozen=True)
class ScoredSample:
    fake_score: float
    label: int  # 0 = real, 1 = fake


def _split_scores(samples: list[ScoredSample]) -> tuple[np.ndarray, np.ndarray]:
    real = np.asarray([s.fake_score for s in samples if s.label == REAL], dtype=np.float64)
    fake = np.asarray([s.fake_score for s in samples if s.label == FAKE], dtype=np.float64)
    if len(real) == 0 or len(fake) == 0:
        raise UndefinedMetricError("both classes must be present")
    if not (np.isfinite(real).all() and np.isfinite(fake).all()):
        raise UndefinedMetricError("scores must be finite")
    return real, fake


def roc_auc(samples: list[ScoredSample]) -> float:
    """Mann-Whitney statistic: P(fake score > real score) + 0.5 * P(tie).

    Computed by sorted counting, so it agrees exactly with the O(n^2)
    pairwise comparison.
    """
    real, fake = _split_scores(samples)
    real_sorted = np.sort(real)
    greater = np.searchsorted(real_sorted, fake, side="left").sum()
    greater_or_equal = np.searchsorted(real_sorted, fake, side="right").sum()
    ties = greater_or_equal - greater
    return float((greater + 0.5 * ties) / (len(fake) * len(real)))


def tdr_at_fdr(samples: list[ScoredSample], fdr_level: float) -> float:
    """Fraction of fakes above the smallest threshold holding real FDR <= level."""
    tdr, _ = tdr_at_fdr_detail(samples, fdr_level)
    return tdr


def tdr_at_fdr_detail(samples: list[ScoredSample],
                      fdr_level: float) -> tuple[float, bool]:
    """As tdr_at_fdr, plus a granularity flag (level finer than 1/#real)."""
    if not (0.0 < fdr_level < 1.0):
        raise UndefinedMetricError(f"fdr level must lie in (0, 1), got {fdr_level}")
    real, fake = _split_scores(samples)
    n_real = len(real)
    coarse = (1.0 / n_real) > fdr_level
    # Largest allowed count k of reals above threshold, by the same float
    # comparison k / n_real <= level a threshold scan would use.
    k = int(np.searchsorted(np.arange(n_real + 1) / n_real, fdr_level, side="right")) - 1
    if k >= n_real:
        return 1.0, coarse
    # Smallest threshold admitting at most k reals above it is the
    # (k+1)-th largest real score: any smaller value strictly exceeds k.
    threshold = np.sort(real)[n_real - 1 - k]
    detected = int((fake > threshold).sum())
    return float(detected / len(fake)), coarse


def attention_coverage(fam: np.ndarray, forgery_mask: np.ndarray) -> float:
    """Fraction of total attention mass lying inside a ground-truth mask."""
    fam = np.asarray(fam, dtype=np.float64)
    mask = np.asarray(forgery_mask, dtype=bool)
    if fam.shape != mask.shape:
        raise UndefinedCoverageError(
            f"shape mismatch: map {fam.shape} vs mask {mask.shape}")
    if not mask.any():
        raise UndefinedCoverageError("mask is empty")
    total = fam.sum()
    if total == 0.0:
        raise UndefinedCoverageError("map is all-zero; coverage undefined")
    return float(fam[mask].sum() / total)


# ---------------------------------------------------------------------------
# Evaluation report
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    auc: float
    tdr_at_fdr: dict[float, float]
    n_real: int
    n_fake: int
    warnings: list[str] = field(default_factory=list)
    name: str = "eval"

    def to_text(self) -> str:
        lines = [f"name: {self.name}",
                 f"n_real: {self.n_real}",
                 f"n_fake: {self.n_fake}",
                 f"auc: {self.auc!r}"]
        for level in sorted(self.tdr_at_fdr, reverse=True):
            lines.append(f"tdr_at_fdr_{level:g}: {self.tdr_at_fdr[level]!r}")
        for warning in self.warnings:
            lines.append(f"warning: {warning}")
        return "\n".join(lines) + "\n"

    def to_row(self) -> tuple[str, str]:
        """Header and value line for one delimited-text table row."""
        levels = sorted(self.tdr_at_fdr, reverse=True)
        header = "name,n_real,n_fake,auc," + ",".join(f"tdr_at_fdr_{lv:g}" for lv in levels)
        row = f"{self.name},{self.n_real},{self.n_fake},{self.auc!r}," + \
            ",".join(repr(self.tdr_at_fdr[lv]) for lv in levels)
        return header, row


def evaluate_scores(samples: list[ScoredSample], fdr_levels: list[float],
                    name: str = "eval") -> EvalReport:
    real_count = sum(1 for s in samples if s.label == REAL)
    fake_count = len(samples) - real_count
    tdrs: dict[float, float] = {}
    warnings: list[str] = []
    for level in fdr_levels:
        tdr, coarse = tdr_at_fdr_detail(samples, level)
        tdrs[level] = tdr
        if coarse:
            warnings.append(
                f"fdr level {level:g} finer than 1/{real_count} real-sample resolution")
    return EvalReport(auc=roc_auc(samples), tdr_at_fdr=tdrs,
                      n_real=real_count, n_fake=fake_count,
                      warnings=warnings, name=name)
