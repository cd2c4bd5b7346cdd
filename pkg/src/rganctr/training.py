"""Training loops: pointwise, pairwise with baseline samplers, and adversarial.

The adversarial loop alternates, per mini-batch of positives: draw candidate
negatives, sample one per positive from the generator policy, take one
discriminator step on the hinge loss, score the selection with the updated
discriminator, take one policy-gradient step on the generator and refresh
the reward baseline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import numeric as nm
from .data import Dataset, batch_size_for, minibatch_iter
from .errors import ConfigurationError, ValidationError
from .evaluation import auc, tau_diagnostic
from .model import ModelConfig, SampleBatch, TimeAwareAttentionNet, make_batch, pairwise_hinge, pointwise_loss
from .sampler import (
    GeneratorState,
    RewardConfig,
    SamplerKind,
    WITHOUT_NEGATIVES,
    build_user_index,
    compute_penalty,
    compute_reward,
    draw_candidates,
    nonpositive_candidates,
    policy_logits,
    policy_logits_backward,
    under_sample_build,
    uniform_sample,
    update_baseline,
    user_fixed_sample,
)

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "step", "d_loss", "g_surrogate", "mean_reward", "baseline",
                  "temperature", "train_auc_snapshot")
_PRETRAIN_EPOCH_BASE = 1_000_000  # shuffle seeds for pre-training epochs
EPOCH_COLUMNS = ("epoch", "test_auc", "d_loss", "mean_reward", "tau", "tau_random",
                 "temperature", "lr_d", "lr_g")


@dataclass(frozen=True)
class TrainConfig:
    sampler: str = "rgan"
    epochs: int = 50
    steps_per_epoch: int = 30
    lr_d: float = 0.02
    lr_g: float = 0.01
    lr_decay_every: int = 10
    lr_decay: float = 0.5
    gamma: float = 1.0
    lambda_i: float = 3.0
    lambda_h: float = 5.0
    C: int = 20
    T0: float = 20.0
    T_decay: float = 0.98
    K: int = 1
    pretrain_epochs: int = 2
    under_ratio: int = 5
    tau_diagnostic: bool = True
    eval_every: int = 1
    seed: int = 0

    def validate(self):
        SamplerKind(self.sampler)
        for name in ("steps_per_epoch", "C", "K", "lr_decay_every", "eval_every", "under_ratio"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        for name in ("epochs", "pretrain_epochs"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        for name in ("lr_d", "lr_g", "gamma", "T0"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 0 < self.T_decay <= 1 or not 0 < self.lr_decay <= 1:
            raise ConfigurationError("decay rates must lie in (0, 1]")
        if self.lambda_i < 0 or self.lambda_h < 0:
            raise ConfigurationError("penalty coefficients must be >= 0")


@dataclass
class TrainResult:
    discriminator: TimeAwareAttentionNet
    generator: TimeAwareAttentionNet | None
    step_rows: list = field(default_factory=list)
    epoch_rows: list = field(default_factory=list)
    best: TimeAwareAttentionNet | None = None
    best_auc: float | None = None
    initial: TimeAwareAttentionNet | None = None

    @property
    def final_auc(self) -> float | None:
        for row in reversed(self.epoch_rows):
            if row["test_auc"] is not None:
                return row["test_auc"]
        return None


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------

def discriminator_step(D: TimeAwareAttentionNet, pos: SampleBatch, neg: SampleBatch,
                       gamma: float, adam: nm.AdamState):
    """One Adam step on the batch-mean hinge loss.

    Returns ``(loss, f_pos, f_neg)`` with scores taken before the update.
    """
    f_pos, _, c_pos = D.forward(pos)
    f_neg, _, c_neg = D.forward(neg)
    loss, d_pos, d_neg = pairwise_hinge(f_pos, f_neg, gamma)
    n = len(f_pos)
    D.zero_grad()
    D.backward(d_pos / n, c_pos)
    D.backward(d_neg / n, c_neg)
    nm.adam_step(D.params, adam)
    return float(loss.mean()), f_pos, f_neg


def sample_actions(p: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """``K`` draws per row of the ``(B, C)`` policy by inverse CDF."""
    cdf = np.cumsum(p, axis=1)
    u = rng.random((p.shape[0], K))
    a = (u[:, :, None] >= cdf[:, None, :]).sum(axis=2)
    return np.minimum(a, p.shape[1] - 1)


def reinforce_logit_grad(p: np.ndarray, actions: np.ndarray, advantages: np.ndarray) -> np.ndarray:
    """Gradient of ``sum_k log p[a_k] * adv_k / K`` w.r.t. the logits, per row."""
    B, C = p.shape
    K = actions.shape[1]
    onehot = np.zeros((B, K, C))
    np.put_along_axis(onehot, actions[:, :, None], 1.0, axis=2)
    return ((onehot - p[:, None, :]) * advantages[:, :, None]).sum(axis=1) / K


def generator_step(G: TimeAwareAttentionNet, pos: SampleBatch, cand: SampleBatch, C: int,
                   actions: np.ndarray, rewards: np.ndarray, baseline: float, T: float,
                   adam: nm.AdamState, cache=None):
    """Ascend the REINFORCE surrogate ``mean_s sum_k log p(a_k|s) (r_k - b) / K``.

    Rewards are constants here; only the generator's weights move. ``cache``
    may carry the generator forward pass that produced the actions.
    Returns the surrogate value.
    """
    if cache is None:
        cache = generator_forward(G, pos, cand, C, T)
    p, logits, c_logits, c_pos, c_cand = cache
    B = p.shape[0]
    adv = np.asarray(rewards, dtype=np.float64) - baseline
    K = actions.shape[1]
    logp = np.log(np.take_along_axis(p, actions, axis=1))
    surrogate = float((logp * adv).sum() / (K * B))
    dlogits = -reinforce_logit_grad(p, actions, adv) / B
    de_pos, de_cand = policy_logits_backward(dlogits, c_logits)
    G.zero_grad()
    G.embed_backward(de_pos, c_pos)
    G.embed_backward(de_cand.reshape(B * C, -1), c_cand)
    nm.adam_step(G.params, adam)
    return surrogate


def generator_forward(G: TimeAwareAttentionNet, pos: SampleBatch, cand: SampleBatch,
                      C: int, T: float):
    emb_pos, c_pos = G.embed(pos)
    emb_cand, c_cand = G.embed(cand)
    B = len(pos)
    logits, c_logits = policy_logits(emb_pos.e_s, emb_cand.e_s.reshape(B, C, -1), T)
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return p, logits, c_logits, c_pos, c_cand


# ---------------------------------------------------------------------------
# loops
# ---------------------------------------------------------------------------

def _lr_at(base: float, epoch: int, cfg: TrainConfig) -> float:
    return base * cfg.lr_decay ** (epoch // cfg.lr_decay_every)


def _safe_auc(pos_scores, neg_scores) -> float:
    s = np.concatenate([pos_scores, neg_scores])
    y = np.concatenate([np.ones(len(pos_scores)), np.zeros(len(neg_scores))])
    return auc(s, y)


class _Streams:
    """Independent seeded generators, one per purpose, so draw orders stay fixed."""

    def __init__(self, seed: int):
        ss = np.random.SeedSequence(seed)
        init_d, init_g, cand, policy, diag, data = ss.spawn(6)
        self.init_d, self.init_g = init_d, init_g
        self.cand = np.random.default_rng(cand)
        self.policy = np.random.default_rng(policy)
        self.diag = np.random.default_rng(diag)
        self.data = np.random.default_rng(data)


def _pairwise_epoch(D, train, cfg, epoch, adam, negs_for, streams, rows, log_rows=True):
    bsz = batch_size_for(len(train.positives), cfg.steps_per_epoch)
    losses = []
    for step, pos_idx in enumerate(minibatch_iter(train, bsz, cfg.seed, epoch)):
        neg_idx = negs_for(pos_idx)
        loss, fp, fn = discriminator_step(D, make_batch(train, pos_idx), make_batch(train, neg_idx),
                                          cfg.gamma, adam)
        losses.append(loss)
        if log_rows:
            rows.append(dict(epoch=epoch, step=step, d_loss=loss, g_surrogate=0.0,
                             mean_reward=0.0, baseline=0.0, temperature=0.0,
                             train_auc_snapshot=_safe_auc(fp, fn)))
    return dict(d_loss=float(np.mean(losses)) if losses else 0.0)


def _pointwise_epoch(D, data, cfg, epoch, adam, streams, rows):
    order = np.random.default_rng([cfg.seed, epoch]).permutation(len(data))
    bsz = batch_size_for(len(data), cfg.steps_per_epoch)
    losses = []
    for step, start in enumerate(range(0, len(order), bsz)):
        idx = order[start:start + bsz]
        f, _, cache = D.forward(make_batch(data, idx))
        loss, df = pointwise_loss(f, data.label[idx], reduction="mean")
        D.zero_grad()
        D.backward(df, cache)
        nm.adam_step(D.params, adam)
        losses.append(loss)
        y = data.label[idx]
        snap = auc(f, y) if 0 < y.sum() < len(y) else 0.5
        rows.append(dict(epoch=epoch, step=step, d_loss=loss, g_surrogate=0.0, mean_reward=0.0,
                         baseline=0.0, temperature=0.0, train_auc_snapshot=snap))
    return dict(d_loss=float(np.mean(losses)) if losses else 0.0)


def _adversarial_epoch(D, gen: GeneratorState, train, cfg, epoch, adam_d, reward_cfg,
                       streams, rows):
    bsz = batch_size_for(len(train.positives), cfg.steps_per_epoch)
    negatives = train.negatives
    d_losses, mean_rewards, taus, taus_rand = [], [], [], []
    no_neg = reward_cfg.mode == WITHOUT_NEGATIVES
    for step, pos_idx in enumerate(minibatch_iter(train, bsz, cfg.seed, epoch)):
        B = len(pos_idx)
        if no_neg:
            C = cfg.C
            cand_rows = np.stack([nonpositive_candidates(train, i, C, streams.cand)
                                  for i in pos_idx])
            cand_src = np.repeat(pos_idx, C)
            cand_batch = make_batch(train, cand_src, target_rows=cand_rows.ravel())
        else:
            C = min(cfg.C, len(negatives))
            cand_src = np.concatenate([negatives[draw_candidates(len(negatives), C, streams.cand)]
                                       for _ in pos_idx])
            cand_rows = None
            cand_batch = make_batch(train, cand_src)
        pos_batch = make_batch(train, pos_idx)

        g_cache = generator_forward(gen.net, pos_batch, cand_batch, C, gen.T)
        p = g_cache[0]
        actions = sample_actions(p, cfg.K, streams.policy)
        flat_choice = (np.arange(B)[:, None] * C + actions).ravel()
        chosen_src = cand_src[flat_choice]
        chosen_tgt = None if cand_rows is None else cand_rows.ravel()[flat_choice]
        pos_rep = np.repeat(pos_idx, cfg.K)
        d_loss, fp, fn = discriminator_step(
            D, make_batch(train, pos_rep), make_batch(train, chosen_src, chosen_tgt),
            cfg.gamma, adam_d)

        # rewards from the updated discriminator
        emb_pos, _ = D.embed(pos_batch)
        if cfg.tau_diagnostic:
            emb_c, _ = D.embed(cand_batch)
            f_c, _ = D.score(emb_c.e_s)
            rep = lambda a: np.repeat(a, C, axis=0)
            pos_rep_emb = type(emb_pos)(rep(emb_pos.e_h), rep(emb_pos.e_i0), rep(emb_pos.e_a))
            pen_c = compute_penalty(pos_rep_emb, emb_c, reward_cfg.lambda_i,
                                    0.0 if no_neg else reward_cfg.lambda_h)
            r_all = compute_reward(f_c, pos_rep_emb, emb_c, reward_cfg,
                                   same_user=True if no_neg else None)
            rewards = r_all[flat_choice].reshape(B, cfg.K)
            tau, tau_r = tau_diagnostic(f_c.reshape(B, C), pen_c.reshape(B, C), streams.diag)
            taus.append(tau)
            taus_rand.append(tau_r)
        else:
            emb_s, _ = D.embed(make_batch(train, chosen_src, chosen_tgt))
            f_s, _ = D.score(emb_s.e_s)
            rep = lambda a: np.repeat(a, cfg.K, axis=0)
            pos_rep_emb = type(emb_pos)(rep(emb_pos.e_h), rep(emb_pos.e_i0), rep(emb_pos.e_a))
            rewards = compute_reward(f_s, pos_rep_emb, emb_s, reward_cfg,
                                     same_user=True if no_neg else None).reshape(B, cfg.K)

        surrogate = generator_step(gen.net, pos_batch, cand_batch, C, actions, rewards, gen.b,
                                   gen.T, gen.adam, cache=g_cache)
        baseline_used = gen.b
        gen.b = update_baseline(rewards)
        d_losses.append(d_loss)
        mean_rewards.append(gen.b)
        rows.append(dict(epoch=epoch, step=step, d_loss=d_loss, g_surrogate=surrogate,
                         mean_reward=gen.b, baseline=baseline_used, temperature=gen.T,
                         train_auc_snapshot=_safe_auc(fp, fn)))
    return dict(
        d_loss=float(np.mean(d_losses)) if d_losses else 0.0,
        mean_reward=float(np.mean(mean_rewards)) if mean_rewards else 0.0,
        tau=float(np.mean(taus)) if taus else None,
        tau_random=float(np.mean(taus_rand)) if taus_rand else None,
    )


def train(train_ds: Dataset, test_ds: Dataset | None, cfg: TrainConfig,
          model_cfg: ModelConfig) -> TrainResult:
    """Run one training job with the sampler named in ``cfg.sampler``."""
    cfg.validate()
    kind = SamplerKind(cfg.sampler)
    if len(train_ds.positives) == 0 or len(train_ds.negatives) == 0:
        raise ValidationError("training data needs positives and negatives")
    streams = _Streams(cfg.seed)
    D = TimeAwareAttentionNet(model_cfg, seed=streams.init_d)
    adam_d = nm.AdamState(lr=cfg.lr_d)
    result = TrainResult(discriminator=D, generator=None)
    negatives = train_ds.negatives

    gen = None
    if kind.adversarial:
        for e in range(cfg.pretrain_epochs):
            _pairwise_epoch(
                D, train_ds, cfg, _PRETRAIN_EPOCH_BASE + e, adam_d,
                lambda pos: np.array([uniform_sample(negatives, streams.cand) for _ in pos]),
                streams, [], log_rows=False)
        G = TimeAwareAttentionNet(model_cfg, seed=streams.init_g)
        gen = GeneratorState(G, T=cfg.T0, T_decay=cfg.T_decay, b=0.0,
                             adam=nm.AdamState(lr=cfg.lr_g))
        result.generator = G
        reward_cfg = RewardConfig.for_kind(kind, cfg.lambda_i, cfg.lambda_h)
    result.initial = D.copy()

    point_data = None
    if kind is SamplerKind.LOGISTIC:
        point_data = train_ds
    elif kind is SamplerKind.UNDER_SAMPLE:
        point_data = under_sample_build(train_ds, cfg.under_ratio, streams.data)
    user_index = build_user_index(train_ds) if kind is SamplerKind.USER_FIXED else None

    for epoch in range(cfg.epochs):
        adam_d.lr = _lr_at(cfg.lr_d, epoch, cfg)
        if gen is not None:
            gen.adam.lr = _lr_at(cfg.lr_g, epoch, cfg)
        temperature = gen.T if gen is not None else None
        if kind.pointwise:
            stats = _pointwise_epoch(D, point_data, cfg, epoch, adam_d, streams, result.step_rows)
        elif kind is SamplerKind.UNIFORM:
            stats = _pairwise_epoch(
                D, train_ds, cfg, epoch, adam_d,
                lambda pos: np.array([uniform_sample(negatives, streams.cand) for _ in pos]),
                streams, result.step_rows)
        elif kind is SamplerKind.USER_FIXED:
            stats = _pairwise_epoch(
                D, train_ds, cfg, epoch, adam_d,
                lambda pos: np.array([user_fixed_sample(train_ds, i, user_index, negatives,
                                                        streams.cand) for i in pos]),
                streams, result.step_rows)
        else:
            stats = _adversarial_epoch(D, gen, train_ds, cfg, epoch, adam_d, reward_cfg,
                                       streams, result.step_rows)
            gen.anneal()
        test_auc = None
        if test_ds is not None and ((epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1):
            test_auc = auc(D.predict(test_ds), test_ds.label)
            if result.best_auc is None or test_auc > result.best_auc:
                result.best_auc = test_auc
                result.best = D.copy()
        result.epoch_rows.append(dict(
            epoch=epoch, test_auc=test_auc, d_loss=stats["d_loss"],
            mean_reward=stats.get("mean_reward"), tau=stats.get("tau"),
            tau_random=stats.get("tau_random"), temperature=temperature,
            lr_d=adam_d.lr, lr_g=gen.adam.lr if gen is not None else None))
        log.info("epoch %d test_auc=%s d_loss=%.4f", epoch, test_auc, stats["d_loss"])
    if result.best is None:
        result.best = D.copy()
    return result


def adversarial_train(train_ds: Dataset, test_ds: Dataset | None, cfg: TrainConfig,
                      model_cfg: ModelConfig) -> TrainResult:
    """Algorithm-level entry point for the adversarial samplers."""
    if not SamplerKind(cfg.sampler).adversarial:
        raise ConfigurationError(f"sampler {cfg.sampler!r} is not adversarial")
    return train(train_ds, test_ds, cfg, model_cfg)
