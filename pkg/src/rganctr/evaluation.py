"""Ranking metrics and the score/penalty rank-agreement diagnostic."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .errors import ValidationError


def auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2).

    Computed from average ranks (Mann-Whitney U), O(n log n).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise ValidationError("scores and labels differ in length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def rela_impr(auc_measured: float, auc_base: float) -> float:
    """Relative AUC improvement over a base model, in percent, against the 0.5 floor."""
    if auc_base == 0.5:
        raise ValidationError("RelaImpr is undefined for a base AUC of 0.5")
    return ((auc_measured - 0.5) / (auc_base - 0.5) - 1.0) * 100.0


def _tau_b_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sa = np.sign(a[:, :, None] - a[:, None, :])
    sb = np.sign(b[:, :, None] - b[:, None, :])
    C = a.shape[1]
    iu = np.triu_indices(C, k=1)
    sa = sa[:, iu[0], iu[1]]
    sb = sb[:, iu[0], iu[1]]
    s = (sa * sb).sum(axis=1)
    n0 = C * (C - 1) / 2.0
    n1 = (sa == 0).sum(axis=1)
    n2 = (sb == 0).sum(axis=1)
    denom = np.sqrt((n0 - n1) * (n0 - n2))
    out = np.zeros(a.shape[0])
    ok = denom > 0
    out[ok] = s[ok] / denom[ok]
    return out


def kendall_tau(perm_a, perm_b) -> float:
    """Kendall tau-b between two rankings of the same elements.

    Returns 0.0 when either ranking is entirely tied.
    """
    a = np.asarray(perm_a, dtype=np.float64)
    b = np.asarray(perm_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError(f"rankings differ in length: {a.shape} vs {b.shape}")
    if a.size < 2:
        return 0.0
    return float(_tau_b_rows(a[None], b[None])[0])


def kendall_tau_rows(a, b) -> np.ndarray:
    """Row-wise tau-b for two ``(n, C)`` arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.shape[1] < 2:
        return np.zeros(a.shape[0])
    return _tau_b_rows(a, b)


def tau_diagnostic(cand_scores, cand_penalties, rng: np.random.Generator):
    """Mean tau between candidate scores and negated penalties, per batch.

    ``cand_scores`` and ``cand_penalties`` are ``(B, C)``. Also returns the
    same statistic against a seeded random permutation for comparison.
    """
    cand_scores = np.asarray(cand_scores, dtype=np.float64)
    tau = kendall_tau_rows(cand_scores, -np.asarray(cand_penalties, dtype=np.float64))
    B, C = cand_scores.shape
    random_perm = np.argsort(rng.random((B, C)), axis=1).astype(np.float64)
    tau_rand = kendall_tau_rows(cand_scores, random_perm)
    return float(tau.mean()), float(tau_rand.mean())
