"""Training loop with epoch-level projector refresh, plus the estimator
wrapper and checkpoint I/O."""
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import matrixio
from .evaluation import rank_and_score
from .exceptions import ConfigError, FormatError, InvalidInputError, NumericalAbort
from .graph import GraphSet
from .model import PARAM_NAMES, Adam, ModelState, TrainConfig, forward, loss_and_grad
from .redundancy import ProjectionCache, ProjectionPair, RedundancyConfig
from .spectral import ProjectionOperator, TEXTUAL, VISUAL, as_matrix

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "clearrec-checkpoint/1"


def sample_triplets(train_pairs, user_pos, num_items, rng):
    """One uniformly drawn unobserved negative per training positive, in a
    shuffled order."""
    pairs = train_pairs[rng.permutation(len(train_pairs))]
    neg = rng.integers(0, num_items, size=len(pairs))
    bad = np.flatnonzero([n in user_pos[u] for (u, _), n in zip(pairs, neg)])
    while len(bad):
        neg[bad] = rng.integers(0, num_items, size=len(bad))
        bad = bad[[neg[j] in user_pos[pairs[j, 0]] for j in bad]]
    return np.column_stack([pairs, neg])


def redundancy_ratio(pair):
    """Frobenius norm ratio of the projected to the original cross-covariance,
    computed from the spectrum the pair was fitted on."""
    sigma = np.asarray(pair.spectrum)
    total = float(np.sum(sigma ** 2))
    if total == 0.0:
        return 1.0
    scale = np.ones_like(sigma)
    scale[:pair.rank] = (1.0 - pair.strength) ** 2
    return float(np.sqrt(np.sum((scale * sigma) ** 2) / total))


@dataclass
class TrainResult:
    state: ModelState
    pair: ProjectionPair
    log: list
    best_epoch: int
    best_val: float
    config: TrainConfig
    graphs: GraphSet = field(repr=False, default=None)


def _param_dump(state, epoch, batch):
    return {"epoch": epoch, "batch": batch, "param_norms": state.norms()}


def train(data, raw_v, raw_t, cfg, on_epoch=None):
    """Fit the recommender on ``data.train``.

    Per epoch: refresh projectors when due (from detached encoder outputs),
    resample edge dropout, run Adam over shuffled BPR triplets, then score
    validation Recall@K for early stopping. The state with the best
    validation score is returned along with the projector pair it used.
    """
    raw_v = as_matrix(raw_v, "raw_v")
    raw_t = as_matrix(raw_t, "raw_t")
    if raw_v.shape[0] != data.num_items or raw_t.shape[0] != data.num_items:
        raise ConfigError(
            f"feature rows ({raw_v.shape[0]}, {raw_t.shape[0]}) != num_items {data.num_items}"
        )
    rc = cfg.redundancy
    if rc.rank_mode == "fixed" and rc.rank_k > cfg.d:
        raise ConfigError(f"rank_k={rc.rank_k} exceeds embedding dimension d={cfg.d}")

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    init_rng, drop_rng, sample_rng = (np.random.default_rng(s) for s in seeds)

    state = ModelState.initialize(data.num_users, raw_v.shape[1], raw_t.shape[1], cfg.d, init_rng)
    graphs = GraphSet.build(
        data.train, data.num_users, data.num_items, raw_v, raw_t,
        knn_k=cfg.knn_k, alpha=cfg.modality_graph_alpha, edge_dropout_rate=cfg.edge_dropout,
    )
    params = state.params()
    opt = Adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    cache = ProjectionCache(rc)
    user_pos = [set(x.tolist()) for x in data.user_items("train")]

    best = (-np.inf, 0, state.copy(), None)
    stale = 0
    log = []
    for epoch in range(1, cfg.max_epochs + 1):
        refreshed = False
        if rc.enabled:
            v_enc, t_enc = forward_encoded(raw_v, raw_t, state)
            if not (np.all(np.isfinite(v_enc)) and np.all(np.isfinite(t_enc))):
                raise NumericalAbort(
                    f"non-finite encoder output at epoch {epoch}", _param_dump(state, epoch, None)
                )
            try:
                refreshed = cache.update(epoch, v_enc, t_enc)
            except InvalidInputError as exc:
                raise NumericalAbort(
                    f"projector refresh failed at epoch {epoch}: {exc}", _param_dump(state, epoch, None)
                ) from exc
        pair = cache.pair

        graphs.resample_dropout(drop_rng)
        triplets = sample_triplets(data.train, user_pos, data.num_items, sample_rng)
        total = 0.0
        for b, start in enumerate(range(0, len(triplets), cfg.batch_size)):
            batch = triplets[start:start + cfg.batch_size]
            loss, grads, _ = loss_and_grad(
                raw_v, raw_t, state, graphs, pair, batch, cfg.gamma_reg, cfg.layers,
                rc.center_before_project,
            )
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NumericalAbort(
                    f"non-finite loss at epoch {epoch}, batch {b}", _param_dump(state, epoch, b)
                )
            opt.step(params, grads)
            total += loss

        graphs.use_full()
        fc = forward(raw_v, raw_t, state, graphs, pair, cfg.layers, rc.center_before_project)
        val = rank_and_score(fc.user_emb, fc.item_emb, data, ks=(cfg.eval_k,), split="val")
        val_recall = val.recall(cfg.eval_k)

        entry = {
            "epoch": epoch,
            "loss": total,
            f"val_recall@{cfg.eval_k}": val_recall,
            "k": pair.rank if pair is not None else 0,
            "lambda": pair.strength if pair is not None else 0.0,
            "refreshed": refreshed,
            "redundancy_ratio": redundancy_ratio(pair) if pair is not None else 1.0,
        }
        log.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
        logger.debug("epoch %d loss %.6f val R@%d %.5f", epoch, total, cfg.eval_k, val_recall)

        if val_recall > best[0]:
            best = (val_recall, epoch, state.copy(), pair)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break

    return TrainResult(
        state=best[2], pair=best[3], log=log, best_epoch=best[1], best_val=float(best[0]),
        config=cfg, graphs=graphs,
    )


def forward_encoded(raw_v, raw_t, state):
    """Encoder outputs as plain arrays, detached from any gradient bookkeeping."""
    v = raw_v @ state.enc_v_weight + state.enc_v_bias
    t = raw_t @ state.enc_t_weight + state.enc_t_bias
    return v.copy(), t.copy()


def embeddings(state, pair, data, raw_v, raw_t, cfg):
    """Final user/item embeddings on the full (dropout-free) training graph."""
    graphs = GraphSet.build(
        data.train, data.num_users, data.num_items, raw_v, raw_t,
        knn_k=cfg.knn_k, alpha=cfg.modality_graph_alpha, edge_dropout_rate=cfg.edge_dropout,
    )
    fc = forward(raw_v, raw_t, state, graphs, pair, cfg.layers, cfg.redundancy.center_before_project)
    return fc.user_emb, fc.item_emb


def _pair_tensors(pair):
    if pair is None:
        return {}
    return {
        "proj_visual": pair.visual.matrix,
        "proj_textual": pair.textual.matrix,
        "basis_visual": pair.visual.basis,
        "basis_textual": pair.textual.basis,
        "spectrum": pair.spectrum[None, :],
        "mean_visual": pair.mean_visual[None, :],
        "mean_textual": pair.mean_textual[None, :],
    }


def save_checkpoint(path, result, extra=None):
    tensors = {name: getattr(result.state, name) for name in PARAM_NAMES}
    tensors.update(_pair_tensors(result.pair))
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": result.config.to_dict(),
        "best_epoch": result.best_epoch,
        "best_val": result.best_val,
        "shapes": {name: list(np.shape(arr)) for name, arr in tensors.items()},
        "pair": None if result.pair is None else {
            "rank": result.pair.rank,
            "strength": result.pair.strength,
            "epoch_built": result.pair.epoch_built,
        },
    }
    if extra:
        manifest["extra"] = extra
    matrixio.write_container(path, tensors, manifest)


def load_checkpoint(path):
    """Returns ``(state, pair, config, manifest)``."""
    tensors, manifest = matrixio.read_container(path)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: unexpected checkpoint format {manifest.get('format')!r}")
    shapes = manifest["shapes"]
    t = {name: arr.reshape(shapes[name]) for name, arr in tensors.items()}
    state = ModelState(**{name: t[name] for name in PARAM_NAMES})
    cfg = TrainConfig.from_dict(manifest["config"])
    pair = None
    if manifest.get("pair"):
        info = manifest["pair"]
        pair = ProjectionPair(
            visual=ProjectionOperator(t["proj_visual"], info["rank"], info["strength"],
                                      t["basis_visual"], VISUAL),
            textual=ProjectionOperator(t["proj_textual"], info["rank"], info["strength"],
                                       t["basis_textual"], TEXTUAL),
            epoch_built=info["epoch_built"],
            spectrum=t["spectrum"],
            mean_visual=t["mean_visual"],
            mean_textual=t["mean_textual"],
        )
    return state, pair, cfg, manifest


class ClearRecommender(BaseEstimator):
    """Graph-based multimodal recommender with cross-modal null-space
    projection, as a scikit-learn style estimator.

    ``fit(data, visual, textual)`` takes an
    :class:`~clearrec.data.InteractionDataset` and the raw item feature
    matrices. ``rank`` / ``strength`` configure the projector; ``strength=0``
    or ``projection=False`` disable it.
    """

    def __init__(self, dim=64, layers=2, rank=4, strength=0.9, refresh_interval=1,
                 rank_mode="fixed", energy_threshold=0.5, center=False, projection=True,
                 lr=1e-3, gamma_reg=1e-4, batch_size=2048, max_epochs=200,
                 early_stop_patience=20, knn_k=10, modality_graph_alpha=0.5,
                 edge_dropout=0.1, random_state=0):
        self.dim = dim
        self.layers = layers
        self.rank = rank
        self.strength = strength
        self.refresh_interval = refresh_interval
        self.rank_mode = rank_mode
        self.energy_threshold = energy_threshold
        self.center = center
        self.projection = projection
        self.lr = lr
        self.gamma_reg = gamma_reg
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.early_stop_patience = early_stop_patience
        self.knn_k = knn_k
        self.modality_graph_alpha = modality_graph_alpha
        self.edge_dropout = edge_dropout
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(
            d=self.dim,
            layers=self.layers,
            lr=self.lr,
            gamma_reg=self.gamma_reg,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            seed=self.random_state,
            early_stop_patience=self.early_stop_patience,
            knn_k=self.knn_k,
            modality_graph_alpha=self.modality_graph_alpha,
            edge_dropout=self.edge_dropout,
            redundancy=RedundancyConfig(
                rank_k=self.rank,
                strength_lambda=self.strength,
                refresh_interval_tau=self.refresh_interval,
                rank_mode=self.rank_mode,
                energy_threshold=self.energy_threshold,
                center_before_project=self.center,
                enabled=self.projection,
            ),
        )

    def fit(self, data, visual, textual):
        result = train(data, visual, textual, self._train_config())
        self.result_ = result
        self.state_ = result.state
        self.pair_ = result.pair
        self.log_ = result.log
        self.user_embedding_, self.item_embedding_ = embeddings(
            result.state, result.pair, data, visual, textual, result.config
        )
        return self

    def predict(self, users, items):
        """Preference scores for aligned arrays of user and item indices."""
        check_is_fitted(self, "state_")
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        return np.einsum("ij,ij->i", self.user_embedding_[users], self.item_embedding_[items])

    def score_all(self, users=None):
        check_is_fitted(self, "state_")
        u = self.user_embedding_ if users is None else self.user_embedding_[users]
        return u @ self.item_embedding_.T

    def recommend(self, user, k=20, exclude=()):
        scores = self.score_all([user])[0]
        scores[list(exclude)] = -np.inf
        order = np.argsort(-scores, kind="stable")
        return order[np.isfinite(scores[order])][:k]

    def evaluate(self, data, ks=(10, 20), split="test"):
        check_is_fitted(self, "state_")
        return rank_and_score(self.user_embedding_, self.item_embedding_, data, ks, split)


def write_log(path, log, header=None):
    """JSON-lines epoch log; an optional header record goes first."""
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps(header) + "\n")
        for entry in log:
            fh.write(json.dumps(entry) + "\n")
