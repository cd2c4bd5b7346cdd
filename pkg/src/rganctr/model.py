"""Time-aware attention network: item embedders, two-layer GRU, relative-time
attention, auxiliary net and a linear score head, with manual backward passes.

All forward functions work on a batch. Shapes use ``B`` for batch size,
``L`` for history length, ``d`` for item embedding width, ``h`` for the GRU
width and ``v`` for the attention width.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import numeric as nm
from .data import RAW_DIM, TIME_VOCAB, Dataset, Sample, decompose_timestamp
from .errors import ConfigurationError, ValidationError

ONEHOT_DIM = 8
AUX_OUT = 8


@dataclass(frozen=True)
class ModelConfig:
    n_categories: int
    aux_dim: int
    L: int = 10
    d: int = 90
    h: int = 90
    v: int = 64
    raw_dim: int = RAW_DIM
    use_time: bool = True

    def validate(self):
        if self.d % 2:
            raise ConfigurationError(f"item embedding width d={self.d} must be even")
        for name in ("n_categories", "L", "d", "h", "v", "raw_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")

    @property
    def sample_dim(self) -> int:
        return self.h + self.d + AUX_OUT


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------

@dataclass
class SampleBatch:
    tgt_raw: np.ndarray      # (B, raw)
    tgt_cid: np.ndarray      # (B,)
    tgt_time: np.ndarray     # (B, 4)
    hist_raw: np.ndarray     # (B, L, raw)
    hist_cid: np.ndarray     # (B, L)
    hist_time: np.ndarray    # (B, L, 4)
    dt: np.ndarray           # (B, L) seconds between exposure and click
    mask: np.ndarray         # (B, L)
    aux: np.ndarray          # (B, A)

    def __len__(self):
        return self.tgt_cid.shape[0]


def make_batch(ds: Dataset, idx, target_rows=None) -> SampleBatch:
    """Gather samples ``idx``; ``target_rows`` swaps in other target items."""
    idx = np.asarray(idx, dtype=np.int64)
    hist = ds.history[idx]
    tgt = ds.target[idx] if target_rows is None else np.asarray(target_rows, dtype=np.int64)
    dt = (ds.target_t[idx][:, None] - ds.history_t[idx]).astype(np.float64)
    return SampleBatch(
        tgt_raw=ds.raw[tgt], tgt_cid=ds.cid3[tgt],
        tgt_time=ds.target_time[idx],
        hist_raw=ds.raw[hist], hist_cid=ds.cid3[hist], hist_time=ds.history_time[idx],
        dt=dt, mask=ds.history_mask[idx], aux=ds.aux[idx],
    )


def batch_from_samples(samples, L: int) -> SampleBatch:
    """Build a batch straight from :class:`Sample` records (left-padded to ``L``)."""
    B = len(samples)
    raw_dim = len(samples[0].target.raw)
    hist_raw = np.zeros((B, L, raw_dim))
    hist_cid = np.zeros((B, L), dtype=np.int64)
    hist_time = np.zeros((B, L, 4), dtype=np.int64)
    dt = np.zeros((B, L))
    mask = np.zeros((B, L), dtype=bool)
    for b, s in enumerate(samples):
        if len(s.history) > L:
            raise ValidationError(f"history length {len(s.history)} exceeds L={L}")
        pad = L - len(s.history)
        t0 = s.target.time.t_a
        hist_time[b, :pad] = decompose_timestamp(t0).indices()
        for l, item in enumerate(s.history):
            if item.time.t_a > t0:
                raise ValidationError("history item clicked after the target exposure")
            hist_raw[b, pad + l] = item.raw
            hist_cid[b, pad + l] = item.cid3
            hist_time[b, pad + l] = item.time.indices()
            dt[b, pad + l] = t0 - item.time.t_a
            mask[b, pad + l] = True
    return SampleBatch(
        tgt_raw=np.array([s.target.raw for s in samples], dtype=np.float64),
        tgt_cid=np.array([s.target.cid3 for s in samples], dtype=np.int64),
        tgt_time=np.array([s.target.time.indices() for s in samples], dtype=np.int64),
        hist_raw=hist_raw, hist_cid=hist_cid, hist_time=hist_time, dt=dt, mask=mask,
        aux=np.array([s.aux for s in samples], dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

_TIME_NAMES = ("W_m", "W_w", "W_d", "W_h")


def init_params(cfg: ModelConfig, seed) -> dict[str, nm.Parameter]:
    """Glorot-uniform weights, zero biases."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    p: dict[str, nm.Parameter] = {}

    def W(name, fan_out, fan_in):
        p[name] = nm.Parameter(nm.glorot_uniform(rng, fan_out, fan_in))

    def b(name, n):
        p[name] = nm.Parameter(np.zeros(n))

    f_in = cfg.raw_dim + ONEHOT_DIM + (4 * ONEHOT_DIM if cfg.use_time else 0)
    for side in ("tgt", "hist"):
        W(f"{side}.W_c", ONEHOT_DIM, cfg.n_categories)
        if cfg.use_time:
            for name, vocab in zip(_TIME_NAMES, TIME_VOCAB):
                W(f"{side}.{name}", ONEHOT_DIM, vocab)
        widths = [f_in, cfg.d, cfg.d, cfg.d]
        for k in range(3):
            W(f"{side}.F{k}.W", widths[k + 1], widths[k])
            b(f"{side}.F{k}.b", widths[k + 1])
    for layer, n_in in ((0, cfg.d), (1, cfg.h)):
        for gate in ("r", "z", "c"):
            W(f"gru{layer}.W_e{gate}", cfg.h, n_in)
            W(f"gru{layer}.W_h{gate}", cfg.h, cfg.h)
            b(f"gru{layer}.b_{gate}", cfg.h)
    W("att.W_h", cfg.v, cfg.h)
    W("att.W_i", cfg.v, cfg.d)
    if cfg.use_time:
        W("att.W_t", cfg.v, cfg.d)
    p["att.v"] = nm.Parameter(nm.glorot_uniform(rng, 1, cfg.v)[0])
    W("aux.W", AUX_OUT, cfg.aux_dim)
    b("aux.b", AUX_OUT)
    W("score.W", 1, cfg.sample_dim)
    b("score.b", 1)
    return p


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def relative_time_encoding(dt, d: int) -> np.ndarray:
    """Sinusoidal encoding of elapsed seconds; output has a trailing axis of size ``d``.

    ``out[..., 2j] = sin(dt / 10000**(2j/d))`` and ``out[..., 2j+1]`` the cosine.
    """
    if d % 2:
        raise ConfigurationError(f"encoding width d={d} must be even")
    dt = np.asarray(dt, dtype=np.float64)
    if np.any(dt < 0):
        raise ValidationError("history item clicked after the target exposure (t0 < tl)")
    freq = 10000.0 ** (-np.arange(0, d, 2) / d)
    phase = dt[..., None] * freq
    out = np.empty(dt.shape + (d,))
    out[..., 0::2] = np.sin(phase)
    out[..., 1::2] = np.cos(phase)
    return out


def time_encoding_pair(t0: int, tl: int, d: int) -> np.ndarray:
    if t0 < tl:
        raise ValidationError(f"t0={t0} precedes history time tl={tl}")
    return relative_time_encoding(float(t0 - tl), d)


def embed_items(raw, cid, time_idx, params, prefix: str, use_time: bool):
    """Item embedding for a flat batch of items: ``(n, raw)`` -> ``(n, d)``."""
    n_cat = params[f"{prefix}.W_c"].value.shape[1]
    if cid.size and (cid.min() < 0 or cid.max() >= n_cat):
        raise ValidationError(f"cid3 outside the category vocabulary of size {n_cat}")
    caches = {}
    ec_pre, caches["c"] = nm.embedding_lookup(cid, params[f"{prefix}.W_c"])
    ec, caches["c_relu"] = nm.relu(ec_pre)
    parts = [raw, ec]
    if use_time:
        pieces = []
        for k, name in enumerate(_TIME_NAMES):
            out, caches[name] = nm.embedding_lookup(time_idx[:, k], params[f"{prefix}.{name}"])
            pieces.append(out)
        et, caches["t_relu"] = nm.relu(np.concatenate(pieces, axis=1))
        parts.append(et)
    x = np.concatenate(parts, axis=1)
    acts = []
    for k in range(3):
        y, c_aff = nm.affine(x, params[f"{prefix}.F{k}.W"], params[f"{prefix}.F{k}.b"])
        if k < 2:
            x, c_act = nm.relu(y)
        else:
            x, c_act = nm.tanh(y)
        acts.append((c_aff, c_act))
    caches["F"] = acts
    caches["raw_dim"] = raw.shape[1]
    return x, caches


def embed_items_backward(dout, caches, use_time: bool):
    for k in (2, 1, 0):
        c_aff, c_act = caches["F"][k]
        dy = nm.tanh_backward(dout, c_act) if k == 2 else nm.relu_backward(dout, c_act)
        dout = nm.affine_backward(dy, c_aff)
    r = caches["raw_dim"]
    dec = nm.relu_backward(dout[:, r:r + ONEHOT_DIM], caches["c_relu"])
    nm.embedding_lookup_backward(dec, caches["c"])
    if use_time:
        det = nm.relu_backward(dout[:, r + ONEHOT_DIM:], caches["t_relu"])
        for k, name in enumerate(_TIME_NAMES):
            nm.embedding_lookup_backward(det[:, k * ONEHOT_DIM:(k + 1) * ONEHOT_DIM], caches[name])


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_layer(x, params, prefix: str):
    """One GRU layer over ``x`` of shape ``(B, L, n_in)`` from a zero state."""
    g = lambda n: params[f"{prefix}.{n}"].value
    B, L, _ = x.shape
    hsz = g("W_hr").shape[0]
    xt = np.ascontiguousarray(x.transpose(1, 0, 2))
    W_x = np.concatenate([g("W_er"), g("W_ez"), g("W_ec")])
    b_x = np.concatenate([g("b_r"), g("b_z"), g("b_c")])
    X = xt @ W_x.T + b_x                       # (L, B, 3h)
    W_rz = np.concatenate([g("W_hr"), g("W_hz")]).T
    W_hc = g("W_hc").T
    H = np.empty((L, B, hsz))
    RZ = np.empty((L, B, 2 * hsz))
    C = np.empty((L, B, hsz))
    h = np.zeros((B, hsz))
    for l in range(L):
        rz = _sigmoid(X[l, :, :2 * hsz] + h @ W_rz)
        c = np.tanh(X[l, :, 2 * hsz:] + (rz[:, :hsz] * h) @ W_hc)
        h = h + rz[:, hsz:] * (c - h)
        RZ[l], C[l], H[l] = rz, c, h
    return H.transpose(1, 0, 2), (xt, H, RZ, C, prefix)


def gru_layer_backward(dH, cache, params):
    xt, H, RZ, C, prefix = cache
    P = lambda n: params[f"{prefix}.{n}"]
    L, B, hsz = H.shape
    dHt = np.ascontiguousarray(dH.transpose(1, 0, 2))
    W_rz = np.concatenate([P("W_hr").value, P("W_hz").value])   # (2h, h)
    W_hc = P("W_hc").value
    dA = np.empty((L, B, 3 * hsz))            # pre-activation grads, gates r|z|c
    g_rz = np.zeros((2 * hsz, hsz))
    g_hc = np.zeros_like(W_hc)
    zeros = np.zeros((B, hsz))
    dh_next = zeros
    for l in range(L - 1, -1, -1):
        h_prev = H[l - 1] if l > 0 else zeros
        r, z, c = RZ[l, :, :hsz], RZ[l, :, hsz:], C[l]
        dh = dHt[l] + dh_next
        a_c = dh * z * (1.0 - c * c)
        rh = r * h_prev
        g_hc += a_c.T @ rh
        drh = a_c @ W_hc
        a_r = drh * h_prev * r * (1.0 - r)
        a_z = dh * (c - h_prev) * z * (1.0 - z)
        a_rz = np.concatenate([a_r, a_z], axis=1)
        g_rz += a_rz.T @ h_prev
        dh_next = dh * (1.0 - z) + drh * r + a_rz @ W_rz
        dA[l, :, :2 * hsz] = a_rz
        dA[l, :, 2 * hsz:] = a_c
    P("W_hr").grad += g_rz[:hsz]
    P("W_hz").grad += g_rz[hsz:]
    P("W_hc").grad += g_hc
    flat_dA = dA.reshape(-1, 3 * hsz)
    gW_x = flat_dA.T @ xt.reshape(-1, xt.shape[-1])
    gb_x = flat_dA.sum(axis=0)
    for k, gate in enumerate("rzc"):
        P(f"W_e{gate}").grad += gW_x[k * hsz:(k + 1) * hsz]
        P(f"b_{gate}").grad += gb_x[k * hsz:(k + 1) * hsz]
    W_x = np.concatenate([P("W_er").value, P("W_ez").value, P("W_ec").value])
    return (dA @ W_x).transpose(1, 0, 2)


def gru_forward(items, params):
    """Two stacked GRU layers; returns the top-layer states ``(B, L, h)``."""
    H1, c1 = gru_layer(items, params, "gru0")
    H2, c2 = gru_layer(H1, params, "gru1")
    return H2, (c1, c2)


def gru_backward(dH2, cache, params):
    c1, c2 = cache
    dH1 = gru_layer_backward(dH2, c2, params)
    return gru_layer_backward(dH1, c1, params)


def attention_pool(H, e0, ET, mask, params):
    """Additive attention over history states.

    ``u_l = v . tanh(W_h h_l + W_i e0 + W_t et_l)``; weights are a masked
    softmax of ``u``; returns ``(e_h, a, cache)``. ``ET`` may be ``None`` for
    the time-stripped variant.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValidationError("attention: every history position of a sample is masked")
    pre = H @ params["att.W_h"].value.T + (e0 @ params["att.W_i"].value.T)[:, None, :]
    if ET is not None:
        pre = pre + ET @ params["att.W_t"].value.T
    g = np.tanh(pre)
    u = g @ params["att.v"].value
    a, c_sm = nm.softmax(u, mask)
    e_h = np.einsum("bl,blh->bh", a, H)
    return e_h, a, (H, e0, ET, g, a, c_sm)


def attention_backward(de_h, cache, params):
    """Returns gradients for ``(H, e0)``."""
    H, e0, ET, g, a, c_sm = cache
    dH = a[..., None] * de_h[:, None, :]
    da = np.einsum("blh,bh->bl", H, de_h)
    du = nm.softmax_backward(da, c_sm)
    vv = params["att.v"]
    params["att.v"].grad += np.einsum("bl,blv->v", du, g)
    dpre = du[..., None] * vv.value * (1.0 - g * g)
    flat = dpre.reshape(-1, dpre.shape[-1])
    params["att.W_h"].grad += flat.T @ H.reshape(-1, H.shape[-1])
    dH += dpre @ params["att.W_h"].value
    dpre_sum = dpre.sum(axis=1)
    params["att.W_i"].grad += dpre_sum.T @ e0
    de0 = dpre_sum @ params["att.W_i"].value
    if ET is not None:
        params["att.W_t"].grad += flat.T @ ET.reshape(-1, ET.shape[-1])
    return dH, de0


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

@dataclass
class SampleEmbedding:
    e_h: np.ndarray
    e_i0: np.ndarray
    e_a: np.ndarray

    @property
    def e_s(self) -> np.ndarray:
        return np.concatenate([self.e_h, self.e_i0, self.e_a], axis=-1)


class TimeAwareAttentionNet:
    """One set of weights for the full sample-embedding and scoring pipeline."""

    def __init__(self, cfg: ModelConfig, seed=0, params=None):
        cfg.validate()
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)

    # -- forward ------------------------------------------------------------
    def embed(self, batch: SampleBatch):
        cfg = self.cfg
        B, L = batch.hist_cid.shape
        e_i0, c_tgt = embed_items(batch.tgt_raw, batch.tgt_cid, batch.tgt_time,
                                  self.params, "tgt", cfg.use_time)
        flat_hist, c_hist = embed_items(
            batch.hist_raw.reshape(B * L, -1), batch.hist_cid.reshape(-1),
            batch.hist_time.reshape(B * L, 4), self.params, "hist", cfg.use_time)
        H, c_gru = gru_forward(flat_hist.reshape(B, L, -1), self.params)
        ET = relative_time_encoding(batch.dt, cfg.d) if cfg.use_time else None
        e_h, a, c_att = attention_pool(H, e_i0, ET, batch.mask, self.params)
        pre_a, c_aux = nm.affine(batch.aux, self.params["aux.W"], self.params["aux.b"])
        e_a, c_tanh = nm.tanh(pre_a)
        emb = SampleEmbedding(e_h, e_i0, e_a)
        cache = (c_tgt, c_hist, c_gru, c_att, c_aux, c_tanh, B, L, a)
        return emb, cache

    def attention_weights(self, cache) -> np.ndarray:
        return cache[-1]

    def score(self, e_s):
        f, c = nm.affine(e_s, self.params["score.W"], self.params["score.b"])
        return f[..., 0], c

    def forward(self, batch: SampleBatch):
        emb, cache = self.embed(batch)
        f, c_score = self.score(emb.e_s)
        return f, emb, (cache, c_score)

    # -- backward -----------------------------------------------------------
    def embed_backward(self, d_es, cache):
        cfg = self.cfg
        c_tgt, c_hist, c_gru, c_att, c_aux, c_tanh, B, L, _ = cache
        d_eh = d_es[:, :cfg.h]
        d_ei0 = d_es[:, cfg.h:cfg.h + cfg.d].copy()
        d_ea = d_es[:, cfg.h + cfg.d:]
        nm.affine_backward(nm.tanh_backward(d_ea, c_tanh), c_aux)
        dH, de0 = attention_backward(d_eh, c_att, self.params)
        d_ei0 += de0
        d_hist = gru_backward(dH, c_gru, self.params)
        embed_items_backward(d_hist.reshape(B * L, -1), c_hist, cfg.use_time)
        embed_items_backward(d_ei0, c_tgt, cfg.use_time)

    def score_backward(self, df, c_score):
        return nm.affine_backward(np.asarray(df, dtype=np.float64)[..., None], c_score)

    def backward(self, df, caches):
        cache, c_score = caches
        self.embed_backward(self.score_backward(df, c_score), cache)

    # -- helpers ------------------------------------------------------------
    def predict(self, ds: Dataset, idx=None, chunk: int = 2048) -> np.ndarray:
        """Scores for ``ds`` (or the rows ``idx``), computed in chunks."""
        idx = np.arange(len(ds)) if idx is None else np.asarray(idx)
        out = np.empty(len(idx))
        for s in range(0, len(idx), chunk):
            f, _, _ = self.forward(make_batch(ds, idx[s:s + chunk]))
            out[s:s + chunk] = f
        return out

    def zero_grad(self):
        nm.zero_grads(self.params)

    def copy(self) -> "TimeAwareAttentionNet":
        return TimeAwareAttentionNet(
            self.cfg, params={k: nm.Parameter(p.value.copy()) for k, p in self.params.items()})


def embed_item(item, params, prefix="tgt", use_time=True) -> np.ndarray:
    """Embed a single :class:`~rganctr.data.ItemRecord`."""
    out, _ = embed_items(np.asarray([item.raw], dtype=np.float64),
                         np.asarray([item.cid3]), np.asarray([item.time.indices()]),
                         params, prefix, use_time)
    return out[0]


def embed_sample(sample: Sample, net: TimeAwareAttentionNet) -> SampleEmbedding:
    emb, _ = net.embed(batch_from_samples([sample], net.cfg.L))
    return SampleEmbedding(emb.e_h[0], emb.e_i0[0], emb.e_a[0])


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

_CLAMP = 1e-12


def pointwise_loss(scores, labels, reduction: str = "sum"):
    """Negated log-likelihood of labels under ``sigmoid(scores)``.

    Returns ``(loss, dloss/dscores)``.
    """
    f = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    s = np.clip(expit(f), _CLAMP, 1.0 - _CLAMP)
    loss = -(y * np.log(s) + (1.0 - y) * np.log(1.0 - s)).sum()
    grad = expit(f) - y
    if reduction == "mean":
        loss, grad = loss / max(len(f), 1), grad / max(len(f), 1)
    return float(loss), grad


def pairwise_hinge(f_pos, f_neg, gamma: float = 1.0):
    """Elementwise ``max(0, -f_pos + f_neg + gamma)`` and its subgradients.

    Returns ``(loss, d/df_pos, d/df_neg)``; the subgradient is 0 on the flat
    side including the kink.
    """
    if gamma <= 0:
        raise ConfigurationError("hinge margin must be positive")
    margin = -np.asarray(f_pos, dtype=np.float64) + np.asarray(f_neg, dtype=np.float64) + gamma
    active = (margin > 0).astype(np.float64)
    return np.maximum(margin, 0.0), -active, active


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "rganctr-checkpoint/1"


def save_checkpoint(net: TimeAwareAttentionNet, path, extra: dict | None = None) -> None:
    """JSON container: config header plus flat fp64 arrays (exact round trip)."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": dataclasses.asdict(net.cfg),
        "extra": extra or {},
        "params": {k: {"shape": list(p.value.shape), "values": p.value.reshape(-1).tolist()}
                   for k, p in sorted(net.params.items())},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> TimeAwareAttentionNet:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path}: not a checkpoint of format {CHECKPOINT_FORMAT}")
    cfg = ModelConfig(**doc["config"])
    params = {k: nm.Parameter(np.asarray(v["values"], dtype=np.float64).reshape(v["shape"]))
              for k, v in doc["params"].items()}
    expected = init_params(cfg, 0)
    if set(expected) != set(params):
        raise ValidationError(f"{path}: parameter names do not match the config")
    for k, p in expected.items():
        if p.shape != params[k].shape:
            raise ValidationError(f"{path}: parameter {k} has shape {params[k].shape}, "
                                  f"expected {p.shape}")
    return TimeAwareAttentionNet(cfg, params=params)
