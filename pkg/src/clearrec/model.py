"""Multimodal graph recommender: parameters, forward pass, BPR objective and
hand-derived gradients.

Projectors are treated as constants: no gradient flows into their
construction, only through the fixed matrix multiply.
"""
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.special import expit, softmax

from . import spectral
from .graph import propagate_layers
from .redundancy import RedundancyConfig

PARAM_NAMES = (
    "enc_v_weight",
    "enc_v_bias",
    "enc_t_weight",
    "enc_t_bias",
    "user_v",
    "user_t",
    "fusion_logits",
)


@dataclass
class ModelState:
    enc_v_weight: np.ndarray
    enc_v_bias: np.ndarray
    enc_t_weight: np.ndarray
    enc_t_bias: np.ndarray
    user_v: np.ndarray
    user_t: np.ndarray
    fusion_logits: np.ndarray

    @property
    def dim(self):
        return self.enc_v_weight.shape[1]

    @property
    def num_users(self):
        return self.user_v.shape[0]

    def params(self):
        """Name -> array mapping; arrays are shared, not copied."""
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self):
        return ModelState(**{name: arr.copy() for name, arr in self.params().items()})

    def norms(self):
        return {name: float(np.linalg.norm(arr)) for name, arr in self.params().items()}

    @classmethod
    def initialize(cls, num_users, raw_dim_v, raw_dim_t, dim, rng):
        """Xavier-uniform weights and user tables, zero biases and logits."""

        def xavier(fan_in, fan_out):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-bound, bound, size=(fan_in, fan_out))

        return cls(
            enc_v_weight=xavier(raw_dim_v, dim),
            enc_v_bias=np.zeros(dim),
            enc_t_weight=xavier(raw_dim_t, dim),
            enc_t_bias=np.zeros(dim),
            user_v=xavier(num_users, dim),
            user_t=xavier(num_users, dim),
            fusion_logits=np.zeros(2),
        )


@dataclass(frozen=True)
class TrainConfig:
    d: int = 64
    layers: int = 2
    lr: float = 1e-3
    gamma_reg: float = 1e-4
    batch_size: int = 2048
    max_epochs: int = 200
    seed: int = 0
    redundancy: RedundancyConfig = field(default_factory=RedundancyConfig)
    early_stop_patience: int = 20
    knn_k: int = 10
    modality_graph_alpha: float = 0.5
    edge_dropout: float = 0.1
    eval_k: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        from .exceptions import ConfigError

        for name in ("d", "batch_size", "max_epochs", "early_stop_patience", "eval_k"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.layers < 0 or self.knn_k < 0:
            raise ConfigError("layers and knn_k must be nonnegative")
        if self.lr <= 0 or self.gamma_reg < 0:
            raise ConfigError("lr must be positive and gamma_reg nonnegative")
        if not 0.0 <= self.modality_graph_alpha <= 1.0:
            raise ConfigError(f"modality_graph_alpha must lie in [0, 1], got {self.modality_graph_alpha}")
        if not 0.0 <= self.edge_dropout < 1.0:
            raise ConfigError(f"edge_dropout must lie in [0, 1), got {self.edge_dropout}")

    def to_dict(self):
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, RedundancyConfig):
                val = {g.name: getattr(val, g.name) for g in fields(val)}
            out[f.name] = val
        return out

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        if "redundancy" in doc and isinstance(doc["redundancy"], dict):
            doc["redundancy"] = RedundancyConfig(**doc["redundancy"])
        return cls(**doc)


def encode(raw_v, raw_t, m):
    """Affine encoders into the shared d-dimensional space."""
    raw_v = spectral.as_matrix(raw_v, "raw_v")
    raw_t = spectral.as_matrix(raw_t, "raw_t")
    if raw_v.shape[1] != m.enc_v_weight.shape[0] or raw_t.shape[1] != m.enc_t_weight.shape[0]:
        raise spectral.DimensionError(
            f"raw feature dims ({raw_v.shape[1]}, {raw_t.shape[1]}) do not match encoders "
            f"({m.enc_v_weight.shape[0]}, {m.enc_t_weight.shape[0]})"
        )
    return raw_v @ m.enc_v_weight + m.enc_v_bias, raw_t @ m.enc_t_weight + m.enc_t_bias


def propagate(v_proj, t_proj, m, g, layers):
    """LightGCN-style propagation of ``[user table; item features]`` per
    modality through ``g.adjacency``. Returns ``(h_v, h_t)``, each (M+N) x d."""
    x_v = np.vstack([m.user_v, v_proj])
    x_t = np.vstack([m.user_t, t_proj])
    return propagate_layers(x_v, g.adjacency, layers), propagate_layers(x_t, g.adjacency, layers)


def fusion_weights(m):
    return softmax(m.fusion_logits)


def fuse_and_score(h_v, h_t, m, g):
    """Final user and item embeddings.

    Users mix the two modalities with softmax weights; items sum both
    modalities plus the item-item aggregate of their alpha-weighted mix.
    """
    nu = m.num_users
    a = fusion_weights(m)
    user_emb = a[0] * h_v[:nu] + a[1] * h_t[:nu]
    item_v = h_v[nu:]
    item_t = h_t[nu:]
    item_emb = item_v + item_t
    if g.item_item is not None:
        item_emb = item_emb + g.item_item @ (g.alpha * item_v + (1.0 - g.alpha) * item_t)
    return user_emb, item_emb


def regularizer(m):
    return float(
        np.sum(m.user_v * m.user_v) + np.sum(m.user_t * m.user_t)
        + np.sum(m.fusion_logits * m.fusion_logits)
    )


def bpr_loss(user_emb, item_emb, batch, m, gamma):
    """BPR loss over ``batch`` (an (B, 3) array of user, positive, negative)
    plus ``gamma`` times the squared norms of the user tables and fusion
    logits.

    Returns ``(loss, grad_user_emb, grad_item_emb)``; the regularizer's own
    gradient is added by :func:`loss_and_grad`.
    """
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    u, pos, neg = batch[:, 0], batch[:, 1], batch[:, 2]
    eu = user_emb[u]
    diff = item_emb[pos] - item_emb[neg]
    x = np.einsum("ij,ij->i", eu, diff)
    loss = float(np.sum(np.logaddexp(0.0, -x))) + gamma * regularizer(m)

    coef = -expit(-x)[:, None]
    g_user = np.zeros_like(user_emb)
    g_item = np.zeros_like(item_emb)
    np.add.at(g_user, u, coef * diff)
    np.add.at(g_item, pos, coef * eu)
    np.add.at(g_item, neg, -coef * eu)
    return loss, g_user, g_item


@dataclass
class ForwardCache:
    v_enc: np.ndarray
    t_enc: np.ndarray
    h_v: np.ndarray
    h_t: np.ndarray
    user_emb: np.ndarray
    item_emb: np.ndarray


def project_encoded(v_enc, t_enc, pair, center):
    if pair is None or pair.is_identity:
        return v_enc, t_enc
    if center:
        v = (v_enc - pair.mean_visual) @ pair.visual.matrix + pair.mean_visual
        t = (t_enc - pair.mean_textual) @ pair.textual.matrix + pair.mean_textual
        return v, t
    return v_enc @ pair.visual.matrix, t_enc @ pair.textual.matrix


def forward(raw_v, raw_t, m, g, pair, layers, center=False):
    v_enc, t_enc = encode(raw_v, raw_t, m)
    v_proj, t_proj = project_encoded(v_enc, t_enc, pair, center)
    h_v, h_t = propagate(v_proj, t_proj, m, g, layers)
    user_emb, item_emb = fuse_and_score(h_v, h_t, m, g)
    return ForwardCache(v_enc, t_enc, h_v, h_t, user_emb, item_emb)


def loss_and_grad(raw_v, raw_t, m, g, pair, batch, gamma, layers, center=False):
    """Full forward and backward pass. Returns ``(loss, grads, cache)`` with
    ``grads`` keyed like :meth:`ModelState.params`."""
    fc = forward(raw_v, raw_t, m, g, pair, layers, center)
    loss, g_user, g_item = bpr_loss(fc.user_emb, fc.item_emb, batch, m, gamma)
    nu = m.num_users

    a = fusion_weights(m)
    gh_v = np.empty_like(fc.h_v)
    gh_t = np.empty_like(fc.h_t)
    gh_v[:nu] = a[0] * g_user
    gh_t[:nu] = a[1] * g_user
    g_a = np.array([np.sum(g_user * fc.h_v[:nu]), np.sum(g_user * fc.h_t[:nu])])
    g_logits = a * (g_a - np.dot(a, g_a)) + 2.0 * gamma * m.fusion_logits

    if g.item_item is not None:
        back = g.item_item.T @ g_item
        gh_v[nu:] = g_item + g.alpha * back
        gh_t[nu:] = g_item + (1.0 - g.alpha) * back
    else:
        gh_v[nu:] = g_item
        gh_t[nu:] = g_item

    gx_v = propagate_layers(gh_v, g.adjacency, layers)
    gx_t = propagate_layers(gh_t, g.adjacency, layers)

    g_vproj = gx_v[nu:]
    g_tproj = gx_t[nu:]
    if pair is not None and not pair.is_identity:
        g_venc = g_vproj @ pair.visual.matrix.T
        g_tenc = g_tproj @ pair.textual.matrix.T
    else:
        g_venc, g_tenc = g_vproj, g_tproj

    raw_v = np.asarray(raw_v, dtype=np.float64)
    raw_t = np.asarray(raw_t, dtype=np.float64)
    grads = {
        "enc_v_weight": raw_v.T @ g_venc,
        "enc_v_bias": g_venc.sum(axis=0),
        "enc_t_weight": raw_t.T @ g_tenc,
        "enc_t_bias": g_tenc.sum(axis=0),
        "user_v": gx_v[:nu] + 2.0 * gamma * m.user_v,
        "user_t": gx_t[:nu] + 2.0 * gamma * m.user_t,
        "fusion_logits": g_logits,
    }
    return loss, grads, fc


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            self.m[name] *= self.beta1
            self.m[name] += (1.0 - self.beta1) * g
            self.v[name] *= self.beta2
            self.v[name] += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + self.eps)
