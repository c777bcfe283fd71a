"""Synthetic multimodal data with a planted shared (redundant) subspace.

Each item has shared latent factors seen by both modalities and
modality-specific factors seen by only one. User tastes live in the
specific factors (optionally mixed with the shared ones), so with
``preference_source="specific_only"`` the shared subspace carries no
preference signal at all.
"""
from dataclasses import asdict, dataclass

import numpy as np

from .data import RawInteractions
from .exceptions import ConfigError

SPECIFIC_ONLY = "specific_only"
MIXED = "mixed"


@dataclass(frozen=True)
class SyntheticSpec:
    num_users: int = 500
    num_items: int = 800
    raw_dim_v: int = 64
    raw_dim_t: int = 48
    shared_rank: int = 4
    specific_rank: int = 8
    shared_strength: float = 3.0
    preference_source: str = SPECIFIC_ONLY
    shared_weight: float = 0.0
    interactions_per_user: int = 20
    feature_noise: float = 0.1
    taste_noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.shared_rank + self.specific_rank > min(self.raw_dim_v, self.raw_dim_t):
            raise ConfigError("shared_rank + specific_rank exceeds the raw feature dimensions")
        if self.shared_strength < 0:
            raise ConfigError("shared_strength must be nonnegative")
        if self.preference_source not in (SPECIFIC_ONLY, MIXED):
            raise ConfigError(f"unknown preference_source {self.preference_source!r}")
        if not 0 < self.interactions_per_user <= self.num_items:
            raise ConfigError("interactions_per_user must lie in [1, num_items]")

    def to_dict(self):
        return asdict(self)


def _modality(z_shared, z_specific, dim, strength, noise, rng):
    a = rng.standard_normal((z_shared.shape[1], dim))
    b = rng.standard_normal((z_specific.shape[1], dim))
    # unit expected variance per raw dimension before noise
    scale = np.sqrt(strength ** 2 * z_shared.shape[1] + z_specific.shape[1])
    x = (strength * z_shared @ a + z_specific @ b) / scale
    return x + noise * rng.standard_normal(x.shape)


def generate_synthetic(spec):
    """Returns ``(raw_v, raw_t, interactions)``.

    Deterministic for a given spec (including its seed).
    """
    rng = np.random.default_rng(spec.seed)
    n, r_s, r_m = spec.num_items, spec.shared_rank, spec.specific_rank
    z_s = rng.standard_normal((n, r_s))
    z_v = rng.standard_normal((n, r_m))
    z_t = rng.standard_normal((n, r_m))
    raw_v = _modality(z_s, z_v, spec.raw_dim_v, spec.shared_strength, spec.feature_noise, rng)
    raw_t = _modality(z_s, z_t, spec.raw_dim_t, spec.shared_strength, spec.feature_noise, rng)

    m = spec.num_users
    taste_v = rng.standard_normal((m, r_m))
    taste_t = rng.standard_normal((m, r_m))
    scores = taste_v @ z_v.T + taste_t @ z_t.T
    if spec.preference_source == MIXED:
        taste_s = rng.standard_normal((m, r_s))
        scores = scores + spec.shared_weight * (taste_s @ z_s.T)
    scores = scores + spec.taste_noise * rng.gumbel(size=scores.shape)

    top = np.argsort(-scores, axis=1, kind="stable")[:, :spec.interactions_per_user]
    users = np.repeat(np.arange(m), spec.interactions_per_user)
    pairs = np.column_stack([users, top.ravel()])
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    pairs = pairs[order]
    interactions = RawInteractions(
        pairs=pairs,
        user_ids=[f"u{u}" for u in range(m)],
        item_ids=[f"i{i}" for i in range(n)],
    )
    return raw_v, raw_t, interactions
