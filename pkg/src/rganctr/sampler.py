"""Negative-sample selection: uniform, 1:N under-sampling, user-fixed, and the
pieces of the regularized adversarial sampler (candidate sets, policy,
distance penalty, reward, baseline).
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigurationError, ContractError, ValidationError

log = logging.getLogger(__name__)


class SamplerKind(str, enum.Enum):
    UNIFORM = "uniform"
    UNDER_SAMPLE = "under_sample_1to5"
    USER_FIXED = "user_fixed"
    LOGISTIC = "logistic"
    RGAN = "rgan"
    RGAN_SCORE_ONLY = "rgan_score_only"
    RGAN_PENALTY_ONLY = "rgan_penalty_only"
    IRGAN_STYLE = "irgan_style"

    @property
    def adversarial(self) -> bool:
        return self in (SamplerKind.RGAN, SamplerKind.RGAN_SCORE_ONLY,
                        SamplerKind.RGAN_PENALTY_ONLY, SamplerKind.IRGAN_STYLE)

    @property
    def pointwise(self) -> bool:
        return self in (SamplerKind.LOGISTIC, SamplerKind.UNDER_SAMPLE)


WITH_NEGATIVES = "with_negatives"
WITHOUT_NEGATIVES = "without_negatives"


@dataclass(frozen=True)
class RewardConfig:
    lambda_i: float = 3.0
    lambda_h: float = 5.0
    mode: str = WITH_NEGATIVES
    use_score: bool = True

    def __post_init__(self):
        if self.lambda_i < 0 or self.lambda_h < 0:
            raise ConfigurationError("penalty coefficients must be >= 0")
        if self.mode not in (WITH_NEGATIVES, WITHOUT_NEGATIVES):
            raise ConfigurationError(f"unknown reward mode {self.mode!r}")

    @classmethod
    def for_kind(cls, kind: SamplerKind, lambda_i=3.0, lambda_h=5.0) -> "RewardConfig":
        if kind is SamplerKind.RGAN_SCORE_ONLY:
            return cls(0.0, 0.0)
        if kind is SamplerKind.RGAN_PENALTY_ONLY:
            return cls(lambda_i, lambda_h, use_score=False)
        if kind is SamplerKind.IRGAN_STYLE:
            return cls(lambda_i, lambda_h, mode=WITHOUT_NEGATIVES)
        return cls(lambda_i, lambda_h)


# ---------------------------------------------------------------------------
# baseline samplers
# ---------------------------------------------------------------------------

def uniform_sample(negatives, rng: np.random.Generator):
    """One element of ``negatives`` drawn uniformly."""
    n = len(negatives)
    if n == 0:
        raise ValidationError("cannot sample from an empty negative pool")
    return negatives[int(rng.integers(0, n))]


def draw_candidates(n: int, C: int, rng: np.random.Generator) -> np.ndarray:
    """``min(C, n)`` distinct positions in ``range(n)``, uniformly (Floyd's algorithm).

    For ``C == 1`` this consumes the generator exactly like :func:`uniform_sample`.
    """
    if n == 0:
        raise ValidationError("cannot draw candidates from an empty pool")
    C = min(C, n)
    chosen: list[int] = []
    seen: set[int] = set()
    for j in range(n - C, n):
        t = int(rng.integers(0, j + 1))
        pick = j if t in seen else t
        seen.add(pick)
        chosen.append(pick)
    return np.asarray(chosen, dtype=np.int64)


def under_sample_build(ds: Dataset, ratio: int = 5, rng: np.random.Generator | None = None) -> Dataset:
    """All positives plus ``ratio`` uniformly chosen negatives per positive."""
    rng = rng or np.random.default_rng(0)
    pos, neg = ds.positives, ds.negatives
    want = ratio * len(pos)
    if len(neg) < want:
        log.warning("only %d negatives for %d requested; keeping all", len(neg), want)
        keep = neg
    else:
        keep = np.sort(rng.choice(neg, size=want, replace=False))
    return ds.subset(np.sort(np.concatenate([pos, keep])))


def build_user_index(ds: Dataset) -> dict[int, np.ndarray]:
    """Negative sample indices grouped by user id (unknown users excluded)."""
    neg = ds.negatives
    users = ds.user[neg]
    keep = users >= 0
    neg, users = neg[keep], users[keep]
    order = np.argsort(users, kind="stable")
    neg, users = neg[order], users[order]
    uniq, starts = np.unique(users, return_index=True)
    bounds = list(starts[1:]) + [len(users)]
    return {int(u): neg[s:e] for u, s, e in zip(uniq, starts, bounds)}


def user_fixed_sample(ds: Dataset, pos_index: int, user_index: dict, negatives,
                      rng: np.random.Generator):
    """A negative of the same user, or a global uniform negative when there is none."""
    own = user_index.get(int(ds.user[pos_index]))
    if own is not None and len(own):
        return uniform_sample(own, rng)
    return uniform_sample(negatives, rng)


def nonpositive_candidates(ds: Dataset, pos_index: int, C: int,
                           rng: np.random.Generator) -> np.ndarray:
    """``C`` item-table rows the user never interacted with (for the no-negatives mode)."""
    seen = set(ds.history[pos_index][ds.history_mask[pos_index]].tolist())
    seen.add(int(ds.target[pos_index]))
    seen.add(0)
    n_rows = ds.raw.shape[0]
    if n_rows - len(seen) < 1:
        raise ValidationError("no non-interacted items available")
    out = []
    while len(out) < C:
        r = int(rng.integers(1, n_rows))
        if r not in seen:
            out.append(r)
    return np.asarray(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# adversarial pieces
# ---------------------------------------------------------------------------

def policy_logits(e_pos, e_cand, T: float):
    """``e_cand . e_pos / (T * |e_cand|)``; zero-norm candidates get logit 0.

    ``e_pos`` is ``(B, D)``, ``e_cand`` is ``(B, C, D)``.
    """
    if T <= 0:
        raise ConfigurationError("temperature must be positive")
    e_pos = np.asarray(e_pos, dtype=np.float64)
    e_cand = np.asarray(e_cand, dtype=np.float64)
    norms = np.sqrt((e_cand * e_cand).sum(axis=-1))
    dots = np.einsum("bcd,bd->bc", e_cand, e_pos)
    safe = np.where(norms > 0, norms, 1.0)
    logits = np.where(norms > 0, dots / (T * safe), 0.0)
    return logits, (e_pos, e_cand, norms, dots, T)


def policy_logits_backward(dlogits, cache):
    """Gradients for ``(e_pos, e_cand)``."""
    e_pos, e_cand, norms, dots, T = cache
    ok = norms > 0
    safe = np.where(ok, norms, 1.0)
    scale = np.where(ok, dlogits / (T * safe), 0.0)
    de_pos = np.einsum("bc,bcd->bd", scale, e_cand)
    de_cand = scale[..., None] * e_pos[:, None, :]
    de_cand -= (scale * dots / (safe * safe))[..., None] * e_cand
    return de_pos, de_cand


def policy_distribution(e_pos, e_cand, T: float) -> np.ndarray:
    """Softmax policy over each positive's candidates, ``(B, C)``."""
    logits, _ = policy_logits(e_pos, e_cand, T)
    z = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=-1, keepdims=True)


def compute_penalty(emb_pos, emb_neg, lambda_i: float, lambda_h: float):
    """Distance penalty in the discriminator's item and history embedding spaces.

    ``emb_*`` are :class:`~rganctr.model.SampleEmbedding` (or anything with
    ``e_i0`` and ``e_h``) with matching leading shapes.
    """
    di = np.sqrt(((emb_pos.e_i0 - emb_neg.e_i0) ** 2).sum(axis=-1))
    dh = np.sqrt(((emb_pos.e_h - emb_neg.e_h) ** 2).sum(axis=-1))
    return lambda_i * di + lambda_h * dh


def compute_reward(score_neg, emb_pos, emb_neg, cfg: RewardConfig, same_user=None):
    """Reward of a selected negative.

    With observed negatives: score minus the full penalty. Without: score
    minus only the item-distance term; ``same_user`` (bool array or scalar)
    must then confirm the pair shares its user part.
    """
    score_term = np.asarray(score_neg, dtype=np.float64) if cfg.use_score else 0.0
    if cfg.mode == WITH_NEGATIVES:
        return score_term - compute_penalty(emb_pos, emb_neg, cfg.lambda_i, cfg.lambda_h)
    if same_user is None or not np.all(same_user):
        raise ContractError("without_negatives rewards need pairs that share the user part")
    return score_term - compute_penalty(emb_pos, emb_neg, cfg.lambda_i, 0.0)


def update_baseline(rewards) -> float:
    """Mean of all rewards in the mini-batch; used as the baseline for the next one."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        raise ValidationError("baseline update needs at least one reward")
    return float(rewards.mean())


@dataclass
class GeneratorState:
    net: object
    T: float = 20.0
    T_decay: float = 0.98
    b: float = 0.0
    adam: object = None

    def __post_init__(self):
        if self.T <= 0:
            raise ConfigurationError("temperature must be positive")
        if not 0 < self.T_decay <= 1:
            raise ConfigurationError("T_decay must lie in (0, 1]")

    def anneal(self):
        self.T *= self.T_decay
