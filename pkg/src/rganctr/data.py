"""Sample schema, timestamp decomposition, JSON-Lines I/O and minibatching.

A :class:`Dataset` is stored column-wise: an item table (raw vectors and
category ids) plus per-sample index arrays into it. Row 0 of the item table
is the null item used to left-pad histories shorter than ``L``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterator, Sequence

import numpy as np

from .errors import ValidationError

RAW_DIM = 50
NULL_ITEM = 0
NULL_CID3 = 0

# vocabulary sizes of the four temporal one-hots: month, week, day-of-week, hour
TIME_VOCAB = (12, 53, 7, 24)


@dataclass(frozen=True)
class TimeSignals:
    t_a: int
    t_m: int
    t_w: int
    t_d: int
    t_h: int

    def indices(self) -> tuple[int, int, int, int]:
        return (self.t_m, self.t_w, self.t_d, self.t_h)


@dataclass(frozen=True)
class ItemRecord:
    raw: tuple
    time: TimeSignals
    cid3: int


@dataclass(frozen=True)
class Sample:
    history: tuple
    target: ItemRecord
    aux: tuple
    label: int
    user_id: int | None = None


def decompose_timestamp(t_a: int) -> TimeSignals:
    """Split epoch seconds into UTC month/ISO-week/weekday/hour indices (all 0-based)."""
    t_a = int(t_a)
    if t_a < 0:
        raise ValidationError(f"timestamp must be non-negative, got {t_a}")
    dt = datetime.fromtimestamp(t_a, tz=timezone.utc)
    week = min(max(dt.isocalendar()[1] - 1, 0), 52)
    return TimeSignals(t_a, dt.month - 1, week, dt.weekday(), dt.hour)


def time_indices(t_a) -> np.ndarray:
    """Vectorized :func:`decompose_timestamp`; returns ``(..., 4)`` int64 indices."""
    t = np.asarray(t_a, dtype=np.int64)
    if t.size and t.min() < 0:
        raise ValidationError("timestamps must be non-negative")
    days = t // 86400
    dow = (days + 3) % 7
    hour = (t % 86400) // 3600
    d = days.astype("datetime64[D]")
    month = d.astype("datetime64[M]").astype(np.int64) % 12
    thursday = days - dow + 3
    jan1 = (thursday.astype("datetime64[D]").astype("datetime64[Y]")
            .astype("datetime64[D]").astype(np.int64))
    week = np.clip((thursday - jan1) // 7, 0, 52)
    return np.stack([month, week, dow, hour], axis=-1)


@dataclass(frozen=True)
class SchemaConfig:
    L: int = 10
    n_categories: int = 1000
    raw_dim: int = RAW_DIM
    aux_dim: int | None = None
    pad_short_history: bool = True


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-wise collection of samples sharing one item table."""

    raw: np.ndarray            # (n_items, raw_dim); row 0 is the null item
    cid3: np.ndarray           # (n_items,)
    target: np.ndarray         # (N,) item rows
    target_t: np.ndarray       # (N,) epoch seconds
    target_time: np.ndarray    # (N, 4) month/week/day/hour indices
    history: np.ndarray        # (N, L) item rows, oldest first
    history_t: np.ndarray      # (N, L)
    history_time: np.ndarray   # (N, L, 4)
    history_mask: np.ndarray   # (N, L) True for real (unpadded) positions
    aux: np.ndarray            # (N, aux_dim)
    label: np.ndarray          # (N,) 0/1
    user: np.ndarray           # (N,) user ids, -1 when unknown
    n_categories: int
    extras: dict = field(default_factory=dict)

    def __len__(self):
        return int(self.label.shape[0])

    @property
    def L(self) -> int:
        return int(self.history.shape[1])

    @property
    def aux_dim(self) -> int:
        return int(self.aux.shape[1])

    @property
    def positives(self) -> np.ndarray:
        return np.flatnonzero(self.label == 1)

    @property
    def negatives(self) -> np.ndarray:
        return np.flatnonzero(self.label == 0)

    @property
    def ctr(self) -> float | None:
        """Positive fraction, or ``None`` for an empty dataset."""
        n = len(self)
        return None if n == 0 else float(self.label.sum()) / n

    @property
    def metadata(self) -> dict:
        return {
            "n_samples": len(self),
            "positives": int(self.label.sum()),
            "negatives": int(len(self) - self.label.sum()),
            "ctr": self.ctr,
            "n_categories": self.n_categories,
            "L": self.L,
        }

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        extras = {k: (v[idx] if isinstance(v, np.ndarray) and v.shape[:1] == self.label.shape
                      else v)
                  for k, v in self.extras.items()}
        return Dataset(
            raw=self.raw, cid3=self.cid3,
            target=self.target[idx], target_t=self.target_t[idx],
            target_time=self.target_time[idx],
            history=self.history[idx], history_t=self.history_t[idx],
            history_time=self.history_time[idx], history_mask=self.history_mask[idx],
            aux=self.aux[idx], label=self.label[idx], user=self.user[idx],
            n_categories=self.n_categories, extras=extras,
        )

    def item_record(self, row: int, t_a: int, time_idx) -> ItemRecord:
        m, w, d, h = (int(v) for v in time_idx)
        return ItemRecord(tuple(float(v) for v in self.raw[row]),
                          TimeSignals(int(t_a), m, w, d, h), int(self.cid3[row]))

    def sample(self, i: int) -> Sample:
        hist = tuple(
            self.item_record(self.history[i, l], self.history_t[i, l], self.history_time[i, l])
            for l in range(self.L) if self.history_mask[i, l])
        user = int(self.user[i])
        return Sample(
            history=hist,
            target=self.item_record(self.target[i], self.target_t[i], self.target_time[i]),
            aux=tuple(float(v) for v in self.aux[i]),
            label=int(self.label[i]),
            user_id=None if user < 0 else user,
        )

    def equals(self, other: "Dataset") -> bool:
        """Sample-wise equality (item table layout may differ)."""
        if len(self) != len(other) or self.L != other.L or self.n_categories != other.n_categories:
            return False
        return all(self.sample(i) == other.sample(i) for i in range(len(self)))


def from_samples(samples: Sequence[Sample], schema: SchemaConfig) -> Dataset:
    """Build a column-wise :class:`Dataset` from record objects."""
    L = schema.L
    rows: dict = {}
    raw_rows = [np.zeros(schema.raw_dim)]
    cid_rows = [NULL_CID3]

    def row_of(item: ItemRecord) -> int:
        key = (tuple(item.raw), item.cid3)
        r = rows.get(key)
        if r is None:
            r = rows[key] = len(raw_rows)
            raw_rows.append(np.asarray(item.raw, dtype=np.float64))
            cid_rows.append(item.cid3)
        return r

    n = len(samples)
    aux_dim = schema.aux_dim
    if aux_dim is None:
        aux_dim = len(samples[0].aux) if n else 0
    target = np.zeros(n, dtype=np.int64)
    target_t = np.zeros(n, dtype=np.int64)
    target_time = np.zeros((n, 4), dtype=np.int64)
    history = np.zeros((n, L), dtype=np.int64)
    history_t = np.zeros((n, L), dtype=np.int64)
    history_time = np.zeros((n, L, 4), dtype=np.int64)
    mask = np.zeros((n, L), dtype=bool)
    aux = np.zeros((n, aux_dim))
    label = np.zeros(n, dtype=np.int8)
    user = np.full(n, -1, dtype=np.int64)
    for i, s in enumerate(samples):
        target[i] = row_of(s.target)
        target_t[i] = s.target.time.t_a
        target_time[i] = s.target.time.indices()
        pad = L - len(s.history)
        null_time = decompose_timestamp(s.target.time.t_a).indices()
        for l in range(L):
            if l < pad:
                history_t[i, l] = s.target.time.t_a
                history_time[i, l] = null_time
            else:
                item = s.history[l - pad]
                history[i, l] = row_of(item)
                history_t[i, l] = item.time.t_a
                history_time[i, l] = item.time.indices()
                mask[i, l] = True
        aux[i] = s.aux
        label[i] = s.label
        if s.user_id is not None:
            user[i] = s.user_id
    return Dataset(
        raw=np.vstack(raw_rows), cid3=np.asarray(cid_rows, dtype=np.int64),
        target=target, target_t=target_t, target_time=target_time,
        history=history, history_t=history_t, history_time=history_time,
        history_mask=mask, aux=aux, label=label, user=user,
        n_categories=schema.n_categories,
    )


# ---------------------------------------------------------------------------
# JSON-Lines I/O
# ---------------------------------------------------------------------------

_TIME_KEYS = ("t_m", "t_w", "t_d", "t_h")


def _parse_item(obj, lineno: int, where: str, schema: SchemaConfig) -> ItemRecord:
    if not isinstance(obj, dict):
        raise ValidationError(f"line {lineno}: {where} must be an object")
    for key in ("raw", "t_a", "cid3"):
        if key not in obj:
            raise ValidationError(f"line {lineno}: {where} is missing field '{key}'")
    raw = obj["raw"]
    if not isinstance(raw, list) or len(raw) != schema.raw_dim:
        got = len(raw) if isinstance(raw, list) else type(raw).__name__
        raise ValidationError(
            f"line {lineno}: {where}.raw has arity {got}, expected {schema.raw_dim}")
    raw = tuple(float(v) for v in raw)
    if not all(math.isfinite(v) for v in raw):
        raise ValidationError(f"line {lineno}: {where}.raw contains non-finite values")
    cid3 = obj["cid3"]
    if not isinstance(cid3, int) or not 0 <= cid3 < schema.n_categories:
        raise ValidationError(
            f"line {lineno}: {where}.cid3={cid3!r} outside [0, {schema.n_categories})")
    t_a = obj["t_a"]
    if not isinstance(t_a, int) or t_a < 0:
        raise ValidationError(f"line {lineno}: {where}.t_a must be a non-negative integer")
    ts = decompose_timestamp(t_a)
    if any(k in obj for k in _TIME_KEYS):
        vals = []
        for k, size, default in zip(_TIME_KEYS, TIME_VOCAB, ts.indices()):
            v = obj.get(k, default)
            if not isinstance(v, int) or not 0 <= v < size:
                raise ValidationError(f"line {lineno}: {where}.{k}={v!r} outside [0, {size})")
            vals.append(v)
        ts = TimeSignals(t_a, *vals)
    return ItemRecord(raw, ts, cid3)


def parse_sample(obj, lineno: int, schema: SchemaConfig) -> Sample:
    if not isinstance(obj, dict):
        raise ValidationError(f"line {lineno}: expected a JSON object")
    for key in ("label", "aux", "target", "history"):
        if key not in obj:
            raise ValidationError(f"line {lineno}: missing field '{key}'")
    label = obj["label"]
    if label not in (0, 1) or isinstance(label, bool):
        raise ValidationError(f"line {lineno}: label must be 0 or 1, got {label!r}")
    aux = obj["aux"]
    if not isinstance(aux, list):
        raise ValidationError(f"line {lineno}: aux must be a list")
    if schema.aux_dim is not None and len(aux) != schema.aux_dim:
        raise ValidationError(
            f"line {lineno}: aux has arity {len(aux)}, expected {schema.aux_dim}")
    target = _parse_item(obj["target"], lineno, "target", schema)
    hist_raw = obj["history"]
    if not isinstance(hist_raw, list):
        raise ValidationError(f"line {lineno}: history must be a list")
    n_hist = len(hist_raw)
    if n_hist > schema.L or (n_hist < schema.L and not schema.pad_short_history):
        raise ValidationError(f"line {lineno}: history length {n_hist} != L={schema.L}")
    history = tuple(_parse_item(h, lineno, f"history[{k}]", schema)
                    for k, h in enumerate(hist_raw))
    prev = -1
    for k, h in enumerate(history):
        if h.time.t_a < prev:
            raise ValidationError(f"line {lineno}: history not ordered by click time at {k}")
        if h.time.t_a > target.time.t_a:
            raise ValidationError(f"line {lineno}: history[{k}] clicked after the target exposure")
        prev = h.time.t_a
    user = obj.get("user_id")
    if user is not None and not isinstance(user, int):
        raise ValidationError(f"line {lineno}: user_id must be an integer")
    return Sample(history, target, tuple(float(v) for v in aux), int(label), user)


def load_jsonl(path, schema: SchemaConfig | None = None) -> Dataset:
    """Read and validate a JSON-Lines dataset. Blank lines are skipped."""
    schema = schema or SchemaConfig()
    samples = []
    aux_dim = schema.aux_dim
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            s = parse_sample(obj, lineno, schema)
            if aux_dim is None:
                aux_dim = len(s.aux)
            elif len(s.aux) != aux_dim:
                raise ValidationError(
                    f"line {lineno}: aux has arity {len(s.aux)}, expected {aux_dim}")
            samples.append(s)
    schema = SchemaConfig(schema.L, schema.n_categories, schema.raw_dim,
                          aux_dim if aux_dim is not None else 0, schema.pad_short_history)
    return from_samples(samples, schema)


def _item_obj(ds: Dataset, row, t_a, time_idx) -> dict:
    obj = {"raw": [float(v) for v in ds.raw[row]], "t_a": int(t_a), "cid3": int(ds.cid3[row])}
    derived = time_indices(int(t_a))
    if not np.array_equal(derived, time_idx):
        obj.update({k: int(v) for k, v in zip(_TIME_KEYS, time_idx)})
    return obj


def sample_to_json(ds: Dataset, i: int) -> dict:
    obj = {
        "label": int(ds.label[i]),
        "aux": [float(v) for v in ds.aux[i]],
        "target": _item_obj(ds, ds.target[i], ds.target_t[i], ds.target_time[i]),
        "history": [_item_obj(ds, ds.history[i, l], ds.history_t[i, l], ds.history_time[i, l])
                    for l in range(ds.L) if ds.history_mask[i, l]],
    }
    if ds.user[i] >= 0:
        obj["user_id"] = int(ds.user[i])
    return obj


def write_jsonl(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(len(ds)):
            fh.write(json.dumps(sample_to_json(ds, i), separators=(",", ":")))
            fh.write("\n")


# ---------------------------------------------------------------------------
# minibatches
# ---------------------------------------------------------------------------

def minibatch_iter(ds: Dataset, batch_size: int, seed: int, epoch: int = 0) -> Iterator[np.ndarray]:
    """Yield shuffled batches of positive-sample indices for one epoch.

    The permutation is seeded by ``(seed, epoch)``; full batches come first
    and a ragged tail, if any, last.
    """
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    pos = ds.positives
    order = pos[np.random.default_rng([seed, epoch]).permutation(len(pos))]
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def batch_size_for(n_positives: int, steps_per_epoch: int) -> int:
    return max(1, math.ceil(n_positives / steps_per_epoch))
