"""Interaction datasets: TSV loading, id maps, k-core filtering, manifests."""
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FormatError, InvalidInputError

logger = logging.getLogger(__name__)

# reported counts for the Amazon Baby benchmark after 5-core filtering
BABY_STATS = {"users": 19445, "items": 7050, "interactions": 160792}


@dataclass
class RawInteractions:
    """Deduplicated (user, item) index pairs plus the external id maps."""

    pairs: np.ndarray
    user_ids: list
    item_ids: list
    duplicates: int = 0

    @property
    def num_users(self):
        return len(self.user_ids)

    @property
    def num_items(self):
        return len(self.item_ids)

    def report(self):
        return {
            "users": self.num_users,
            "items": self.num_items,
            "interactions": int(len(self.pairs)),
            "duplicates_dropped": self.duplicates,
        }


@dataclass
class InteractionDataset:
    num_users: int
    num_items: int
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    user_ids: list = field(default_factory=list)
    item_ids: list = field(default_factory=list)

    def __post_init__(self):
        for name in ("train", "val", "test"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 2)
            if arr.size and (arr[:, 0].min() < 0 or arr[:, 0].max() >= self.num_users
                             or arr[:, 1].min() < 0 or arr[:, 1].max() >= self.num_items):
                raise InvalidInputError(f"{name} split has indices out of range")
            setattr(self, name, arr)

    def user_items(self, split="train"):
        """List of item index arrays per user for the given split."""
        pairs = getattr(self, split)
        out = [[] for _ in range(self.num_users)]
        for u, i in pairs:
            out[u].append(i)
        return [np.asarray(sorted(x), dtype=np.int64) for x in out]

    def train_matrix(self):
        from scipy import sparse

        r = sparse.csr_matrix(
            (np.ones(len(self.train)), (self.train[:, 0], self.train[:, 1])),
            shape=(self.num_users, self.num_items),
        )
        r.sum_duplicates()
        r.data[:] = 1.0
        return r


def _intern(table, index, key):
    idx = index.get(key)
    if idx is None:
        idx = len(table)
        index[key] = idx
        table.append(key)
    return idx


def parse_interactions(lines, source="<memory>", item_order=None):
    """Parse TSV lines. ``item_order`` pre-assigns item indices (for example
    to match feature-matrix rows); unseen items are appended after it."""
    user_ids, item_ids = [], []
    user_index, item_index = {}, {}
    for iid in item_order or ():
        _intern(item_ids, item_index, iid)
    seen = set()
    pairs = []
    duplicates = 0
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise FormatError(f"{source}:{lineno}: expected 'user_id<TAB>item_id', got {line!r}")
        u = _intern(user_ids, user_index, parts[0])
        i = _intern(item_ids, item_index, parts[1])
        if (u, i) in seen:
            duplicates += 1
            continue
        seen.add((u, i))
        pairs.append((u, i))
    if not pairs:
        raise FormatError(f"{source}: no interactions found")
    if duplicates:
        logger.info("%s: dropped %d duplicate interactions", source, duplicates)
    return RawInteractions(
        pairs=np.asarray(pairs, dtype=np.int64),
        user_ids=user_ids,
        item_ids=item_ids,
        duplicates=duplicates,
    )


def load_interactions(path, fmt="tsv", item_order=None):
    """Read ``user_id<TAB>item_id`` lines; ids are assigned in first-seen order."""
    if fmt != "tsv":
        raise InvalidInputError(f"unsupported interaction format {fmt!r}")
    with open(path, encoding="utf-8") as fh:
        return parse_interactions(fh, source=str(path), item_order=item_order)


def save_interactions(path, pairs, user_ids=None, item_ids=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, i in pairs:
            uid = user_ids[u] if user_ids is not None else f"u{u}"
            iid = item_ids[i] if item_ids is not None else f"i{i}"
            fh.write(f"{uid}\t{iid}\n")


def check_baby_stats(raw):
    """Compare loaded counts against the published Baby statistics.

    Returns the mismatching fields (empty dict when everything agrees).
    """
    got = raw.report()
    return {k: (got[k], v) for k, v in BABY_STATS.items() if got[k] != v}


def k_core(raw, k=5):
    """Iteratively drop users and items with fewer than ``k`` interactions.

    Surviving ids are reindexed densely in their original order. Returns the
    filtered interactions and the original indices of the kept items, for
    subsetting feature rows.
    """
    pairs = raw.pairs
    while True:
        ucount = np.bincount(pairs[:, 0], minlength=raw.num_users)
        icount = np.bincount(pairs[:, 1], minlength=raw.num_items)
        keep = (ucount[pairs[:, 0]] >= k) & (icount[pairs[:, 1]] >= k)
        if keep.all():
            break
        pairs = pairs[keep]
        if not len(pairs):
            raise InvalidInputError(f"{k}-core filtering removed every interaction")
    users = np.unique(pairs[:, 0])
    items = np.unique(pairs[:, 1])
    umap = np.full(raw.num_users, -1, dtype=np.int64)
    imap = np.full(raw.num_items, -1, dtype=np.int64)
    umap[users] = np.arange(len(users))
    imap[items] = np.arange(len(items))
    return RawInteractions(
        pairs=np.stack([umap[pairs[:, 0]], imap[pairs[:, 1]]], axis=1),
        user_ids=[raw.user_ids[u] for u in users],
        item_ids=[raw.item_ids[i] for i in items],
        duplicates=raw.duplicates,
    ), items


def write_manifest(path, name, counts, checksums, extra=None):
    doc = {"dataset": name, "counts": counts, "checksums": checksums}
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_manifest(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
