"""Per-user random splits and top-K ranking metrics."""
import json
from dataclasses import dataclass, field

import numpy as np

from .data import InteractionDataset
from .exceptions import InvalidInputError


@dataclass
class EvalReport:
    metrics: dict
    users_evaluated: int
    users_skipped: int
    split: str = "test"
    per_user: dict = field(default_factory=dict)

    def recall(self, k):
        return self.metrics[k]["recall"]

    def ndcg(self, k):
        return self.metrics[k]["ndcg"]

    def to_dict(self):
        return {
            "split": self.split,
            "users_evaluated": self.users_evaluated,
            "users_skipped": self.users_skipped,
            "metrics": {
                f"@{k}": {"recall": v["recall"], "ndcg": v["ndcg"]}
                for k, v in sorted(self.metrics.items())
            },
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc):
        metrics = {int(k.lstrip("@")): dict(v) for k, v in doc["metrics"].items()}
        return cls(
            metrics=metrics,
            users_evaluated=doc["users_evaluated"],
            users_skipped=doc["users_skipped"],
            split=doc.get("split", "test"),
        )


def split_dataset(raw, ratios=(0.8, 0.1, 0.1), seed=0):
    """Random per-user train/val/test split.

    Each user's interactions are shuffled and cut at
    ``round(n * ratios[0])`` and ``round(n * (ratios[0] + ratios[1]))``;
    at least one interaction always stays in train.
    """
    pairs = np.asarray(raw.pairs, dtype=np.int64).reshape(-1, 2)
    if not len(pairs):
        raise InvalidInputError("cannot split an empty interaction list")
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios < 0) or not np.isclose(ratios.sum(), 1.0):
        raise InvalidInputError(f"split ratios must be three nonnegative values summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    order = np.argsort(pairs[:, 0], kind="stable")
    users, starts = np.unique(pairs[order, 0], return_index=True)
    bounds = list(starts) + [len(order)]
    train, val, test = [], [], []
    for j in range(len(users)):
        idx = order[bounds[j]:bounds[j + 1]]
        idx = idx[rng.permutation(len(idx))]
        n = len(idx)
        n_train = max(1, int(round(n * ratios[0])))
        n_val = int(round(n * (ratios[0] + ratios[1]))) - n_train
        n_val = max(0, min(n_val, n - n_train))
        train.append(idx[:n_train])
        val.append(idx[n_train:n_train + n_val])
        test.append(idx[n_train + n_val:])
    take = lambda parts: pairs[np.sort(np.concatenate(parts))] if parts else pairs[:0]
    return InteractionDataset(
        num_users=raw.num_users,
        num_items=raw.num_items,
        train=take(train),
        val=take(val),
        test=take(test),
        user_ids=list(raw.user_ids),
        item_ids=list(raw.item_ids),
    )


def _groups(pairs, num_users):
    out = [[] for _ in range(num_users)]
    for u, i in pairs:
        out[u].append(i)
    return out


def top_k(scores, k):
    """Indices of the ``k`` largest scores per row; ties go to the lower index."""
    return np.argsort(-scores, axis=1, kind="stable")[:, :k]


def rank_and_score(user_emb, item_emb, data, ks=(10, 20), split="test", keep_per_user=False):
    """Recall@K and NDCG@K averaged over users with a nonempty target split.

    Train items are always masked; validation items are masked as well when
    scoring the test split.
    """
    ks = sorted(int(k) for k in ks)
    scores = np.asarray(user_emb, dtype=np.float64) @ np.asarray(item_emb, dtype=np.float64).T
    return rank_scores(scores, data, ks, split, keep_per_user)


def rank_scores(scores, data, ks=(10, 20), split="test", keep_per_user=False):
    ks = sorted(int(k) for k in ks)
    scores = np.array(scores, dtype=np.float64)
    mask_splits = ["train"] if split != "test" else ["train", "val"]
    for name in mask_splits:
        pairs = getattr(data, name)
        if len(pairs):
            scores[pairs[:, 0], pairs[:, 1]] = -np.inf

    targets = _groups(getattr(data, split), data.num_users)
    users = np.array([u for u in range(data.num_users) if targets[u]], dtype=np.int64)
    kmax = min(max(ks), data.num_items)
    ranked = top_k(scores[users], kmax) if len(users) else np.zeros((0, kmax), dtype=np.int64)

    discounts = 1.0 / np.log2(np.arange(2, kmax + 2))
    sums = {k: {"recall": 0.0, "ndcg": 0.0} for k in ks}
    per_user = {k: {"recall": [], "ndcg": []} for k in ks}
    for row, u in enumerate(users):
        target = set(targets[u])
        hits = np.fromiter((i in target for i in ranked[row]), dtype=bool, count=kmax)
        for k in ks:
            kk = min(k, kmax)
            h = hits[:kk]
            recall = h.sum() / len(target)
            dcg = discounts[:kk][h].sum()
            idcg = discounts[:min(len(target), kk)].sum()
            ndcg = dcg / idcg
            sums[k]["recall"] += recall
            sums[k]["ndcg"] += ndcg
            if keep_per_user:
                per_user[k]["recall"].append(float(recall))
                per_user[k]["ndcg"].append(float(ndcg))
    n = len(users)
    metrics = {
        k: {m: (float(v / n) if n else 0.0) for m, v in sums[k].items()} for k in ks
    }
    return EvalReport(
        metrics=metrics,
        users_evaluated=n,
        users_skipped=data.num_users - n,
        split=split,
        per_user=per_user if keep_per_user else {},
    )
