"""Synthetic CTR data with planted interest, recency and periodic structure.

Each exposure picks a user and a time. The click logit adds

* affinity between the user's (slowly drifting) interest vector and the
  target item's latent vector,
* a recency-weighted match between the target and the user's clicked
  history, weighted by history position only,
* a global hour-of-day / day-of-week propensity scaled by
  ``periodic_amplitude``,

plus a per-user offset and an intercept solved so that the expected CTR
equals ``ctr``. Only the periodic term depends on the clock, so with
``periodic_amplitude=0`` the logit carries no information a time-blind
model could not also see.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, softmax

from .data import RAW_DIM, Dataset, time_indices
from .errors import ValidationError

DAY = 86400
LATENT_DIM = 8


@dataclass(frozen=True)
class SyntheticConfig:
    n_users: int = 2000
    n_items: int = 5000
    n_categories: int = 20
    n_samples: int = 100_000
    ctr: float = 0.012
    horizon_days: int = 14
    test_days: int = 4
    L: int = 10
    aux_dim: int = 4
    periodic_amplitude: float = 1.0
    drift_rate: float = 0.5
    start_time: int = 1535760000  # 2018-09-01T00:00:00Z
    seed: int = 0

    def validate(self):
        for name in ("n_users", "n_items", "n_categories", "n_samples", "horizon_days", "L"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if not 0.0 < self.ctr < 1.0:
            raise ValidationError(f"ctr must lie in (0, 1), got {self.ctr}")
        if self.ctr * self.n_samples < 1.0:
            raise ValidationError(
                f"infeasible config: ctr*n_samples = {self.ctr * self.n_samples:.3g} < 1")
        if not 0 <= self.test_days < self.horizon_days:
            raise ValidationError("test_days must lie in [0, horizon_days)")
        if self.periodic_amplitude < 0 or self.drift_rate < 0:
            raise ValidationError("periodic_amplitude and drift_rate must be >= 0")
        if self.start_time < 30 * DAY:
            raise ValidationError("start_time must leave room for history before it")

    @property
    def split_time(self) -> int:
        return self.start_time + (self.horizon_days - self.test_days) * DAY


def parse_kv(text: str) -> dict:
    """Parse ``key = value`` / ``key: value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        for sep in ("=", ":"):
            if sep in line:
                key, value = line.split(sep, 1)
                break
        else:
            raise ValidationError(f"config line {lineno}: expected 'key = value'")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def coerce_fields(cls, values: dict) -> dict:
    """Convert string values to the annotated field types of dataclass ``cls``."""
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    out = {}
    for key, value in values.items():
        if key not in types:
            raise ValidationError(f"unknown config key '{key}'")
        t = str(types[key])
        if not isinstance(value, str):
            out[key] = value
        elif t.startswith("int"):
            out[key] = int(float(value)) if "e" in value.lower() else int(value)
        elif t.startswith("float"):
            out[key] = float(value)
        elif t.startswith("bool"):
            out[key] = value.lower() in ("1", "true", "yes", "on")
        else:
            out[key] = value
    return out


def load_config(path) -> SyntheticConfig:
    values = coerce_fields(SyntheticConfig, parse_kv(Path(path).read_text()))
    cfg = SyntheticConfig(**values)
    cfg.validate()
    return cfg


def config_to_text(cfg: SyntheticConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(cfg).items())


# ---------------------------------------------------------------------------

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _splitmix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def hashed_uniform(seed: int, *keys) -> np.ndarray:
    """Uniform [0, 1) values that are a pure function of ``(seed, *keys)``."""
    h = _splitmix(np.full(np.shape(keys[0]), seed, dtype=np.uint64))
    for k in keys:
        h = _splitmix(h ^ np.asarray(k, dtype=np.int64).astype(np.uint64))
    return (h >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def hour_profile() -> np.ndarray:
    h = np.arange(24)
    g = np.sin(2 * np.pi * (h - 14) / 24) + 0.5 * np.sin(4 * np.pi * (h - 3) / 24)
    return (g - g.mean()) / g.std()


def weekday_profile() -> np.ndarray:
    g = np.array([-0.4, -0.5, -0.3, -0.2, 0.2, 1.0, 0.8])
    return 0.5 * (g - g.mean()) / g.std()


def _pick_in_category(rng, cats, by_cat_start, by_cat_count, order):
    offs = np.floor(rng.random(cats.shape) * by_cat_count[cats]).astype(np.int64)
    return order[by_cat_start[cats] + offs]


def generate_synthetic(cfg: SyntheticConfig, seed: int | None = None) -> Dataset:
    """Generate a dataset; ground truth lives in ``ds.extras``.

    ``extras`` holds ``logit`` (full ground-truth logit), ``logit_time_blind``
    (the logit minus its periodic term), ``item_id`` and ``split_time``.
    """
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    k, L, N = LATENT_DIM, cfg.L, cfg.n_samples

    centers = rng.normal(size=(cfg.n_categories, k))
    item_cat = rng.integers(0, cfg.n_categories, size=cfg.n_items)
    z = centers[item_cat] + 0.5 * rng.normal(size=(cfg.n_items, k))
    proj = rng.normal(scale=1.0 / np.sqrt(k), size=(k, RAW_DIM))
    raw = z @ proj + 0.1 * rng.normal(size=(cfg.n_items, RAW_DIM))

    order = np.argsort(item_cat, kind="stable")
    by_cat_count = np.bincount(item_cat, minlength=cfg.n_categories)
    by_cat_start = np.concatenate([[0], np.cumsum(by_cat_count)[:-1]])
    # categories with no items fall back to category of item 0
    empty = by_cat_count == 0
    by_cat_start[empty] = by_cat_start[item_cat[0]]
    by_cat_count[empty] = by_cat_count[item_cat[0]]

    u0 = rng.normal(size=(cfg.n_users, k))
    u1 = rng.normal(size=(cfg.n_users, k))
    user_offset = 0.3 * rng.normal(size=cfg.n_users)
    aux_proj = rng.normal(scale=1.0 / np.sqrt(k), size=(k, cfg.aux_dim))
    user_aux = u0 @ aux_proj + 0.5 * rng.normal(size=(cfg.n_users, cfg.aux_dim))
    horizon = cfg.horizon_days * DAY

    def interest(users, t):
        frac = (t - cfg.start_time) / horizon
        return u0[users] + cfg.drift_rate * frac[..., None] * u1[users]

    def choose_items(users, t):
        pref = interest(users, t) @ centers.T / np.sqrt(k)
        p = softmax(1.5 * pref, axis=-1)
        cdf = np.cumsum(p, axis=-1)
        draw = rng.random(p.shape[:-1])[..., None]
        cats = np.minimum((draw > cdf).sum(axis=-1), cfg.n_categories - 1)
        return _pick_in_category(rng, cats, by_cat_start, by_cat_count, order)

    users = rng.integers(0, cfg.n_users, size=N)
    t0 = cfg.start_time + rng.integers(0, horizon, size=N)

    targeted = rng.random(N) < 0.5
    target = rng.integers(0, cfg.n_items, size=N)
    target[targeted] = choose_items(users[targeted], t0[targeted])

    # history click times: exponential gaps back from the exposure, clock hour
    # redrawn from the same diurnal profile the clicks follow
    gaps = rng.exponential(scale=0.5 * DAY, size=(N, L)) + 60.0
    ht = t0[:, None] - np.cumsum(gaps, axis=1).astype(np.int64)
    hour_p = softmax(0.5 * cfg.periodic_amplitude * hour_profile())
    hours = rng.choice(24, size=(N, L), p=hour_p)
    ht = (ht // DAY) * DAY + hours * 3600 + rng.integers(0, 3600, size=(N, L))
    ht = np.where(ht > t0[:, None], ht - DAY, ht)
    ht = np.sort(ht, axis=1)
    hist = choose_items(np.repeat(users[:, None], L, axis=1), ht)

    zt = z[target]
    affinity = np.einsum("nk,nk->n", interest(users, t0), zt) / np.sqrt(k)
    recency = 0.6 ** np.arange(L - 1, -1, -1)
    recency = recency / recency.sum()
    match = np.einsum("nlk,nk,l->n", z[hist], zt, recency) / k
    tidx = time_indices(t0)
    periodic = cfg.periodic_amplitude * (hour_profile()[tidx[:, 3]] + weekday_profile()[tidx[:, 2]])
    blind = affinity + 1.5 * match + user_offset[users]
    base = blind + periodic
    bias = brentq(lambda b: expit(base + b).mean() - cfg.ctr, -50.0, 50.0, xtol=1e-12)
    logit = base + bias
    u = hashed_uniform(cfg.seed, users, target, t0)
    label = (u < expit(logit)).astype(np.int8)

    # item table rows are item_id + 1; row 0 is the null item; cid3 0 reserved
    raw_table = np.vstack([np.zeros(RAW_DIM), raw])
    cid_table = np.concatenate([[0], item_cat + 1]).astype(np.int64)
    return Dataset(
        raw=raw_table, cid3=cid_table,
        target=target + 1, target_t=t0, target_time=tidx,
        history=hist + 1, history_t=ht, history_time=time_indices(ht),
        history_mask=np.ones((N, L), dtype=bool),
        aux=user_aux[users], label=label, user=users.astype(np.int64),
        n_categories=cfg.n_categories + 1,
        extras={
            "logit": logit,
            "logit_time_blind": blind + bias,
            "item_id": target,
            "split_time": cfg.split_time,
        },
    )


def split_by_time(ds: Dataset, boundary: int) -> tuple[Dataset, Dataset]:
    """Train = exposures before ``boundary``; test = the rest."""
    before = ds.target_t < boundary
    return ds.subset(np.flatnonzero(before)), ds.subset(np.flatnonzero(~before))
