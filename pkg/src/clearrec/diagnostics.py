"""Redundancy diagnostics: cross-modal retrieval overlap, similarity
densities, sliced Wasserstein distance and covariance spectra."""
import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import spectral
from .exceptions import DimensionError, InvalidInputError
from .redundancy import project_features

DEFAULT_DIRECTIONS = 128


def _unit_rows(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def _neighbors(x, anchors, kmax):
    """Top-``kmax`` cosine neighbors of each anchor (self excluded) and their
    similarity scores. Ties go to the lower item index."""
    unit = _unit_rows(x)
    sim = unit[anchors] @ unit.T
    sim[np.arange(len(anchors)), anchors] = -np.inf
    order = np.argsort(-sim, axis=1, kind="stable")[:, :kmax]
    return order, np.take_along_axis(sim, order, axis=1)


def retrieval_overlap(v, t, ks=(5, 10, 20, 50), anchors=None, return_scores=False):
    """Mean fraction of shared items among the top-K cosine neighbors
    retrieved under each modality, per K.

    Each entry also carries ``random_expectation = K / (N - 1)`` and the
    standard error of the mean over anchors.
    """
    v = spectral.as_matrix(v, "v")
    t = spectral.as_matrix(t, "t")
    n = v.shape[0]
    if t.shape[0] != n:
        raise DimensionError(f"item counts differ: {n} vs {t.shape[0]}")
    ks = sorted(int(k) for k in ks)
    if not ks or ks[0] < 1 or ks[-1] >= n:
        raise InvalidInputError(f"every K must satisfy 1 <= K < N={n}, got {ks}")
    anchors = np.arange(n) if anchors is None else np.asarray(anchors, dtype=np.int64)

    kmax = ks[-1]
    nv, sv = _neighbors(v, anchors, kmax)
    nt, st = _neighbors(t, anchors, kmax)
    curve = {}
    for k in ks:
        # sorted-membership test: one row of nt per row of nv
        a = np.sort(nv[:, :k], axis=1)
        b = np.sort(nt[:, :k], axis=1)
        hits = np.array([np.intersect1d(x, y, assume_unique=True).size for x, y in zip(a, b)])
        ratios = hits / k
        curve[k] = {
            "mean_overlap_ratio": float(ratios.mean()),
            "random_expectation": k / (n - 1),
            "std_error": float(ratios.std(ddof=1) / np.sqrt(len(ratios))) if len(ratios) > 1 else 0.0,
        }
    if return_scores:
        return curve, (sv, st)
    return curve


def similarity_densities(scores_v, scores_t, bins=50):
    """Shared-bin density histograms of retrieved-neighbor similarities."""
    edges = np.linspace(-1.0, 1.0, bins + 1)
    hv, _ = np.histogram(np.clip(np.ravel(scores_v), -1, 1), bins=edges, density=True)
    ht, _ = np.histogram(np.clip(np.ravel(scores_t), -1, 1), bins=edges, density=True)
    return {"bin_edges": edges.tolist(), "visual": hv.tolist(), "textual": ht.tolist()}


def random_directions(d, n_directions, seed):
    """Unit vectors uniform on the sphere, one per column."""
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal((d, n_directions))
    return theta / np.linalg.norm(theta, axis=0, keepdims=True)


def sliced_wasserstein(v, t, n_directions=DEFAULT_DIRECTIONS, seed=0):
    """Average 1-D Wasserstein-1 distance between the two point sets
    projected onto seeded random unit directions.

    Unequal sample counts are handled by subsampling the larger set, without
    replacement, down to the smaller size.
    """
    v = spectral.as_matrix(v, "v")
    t = spectral.as_matrix(t, "t")
    if v.shape[1] != t.shape[1]:
        raise DimensionError(f"feature dims differ: {v.shape[1]} vs {t.shape[1]}")
    theta = random_directions(v.shape[1], n_directions, seed)
    if v.shape[0] != t.shape[0]:
        rng = np.random.default_rng([seed, 1])
        n = min(v.shape[0], t.shape[0])
        if v.shape[0] > n:
            v = v[np.sort(rng.choice(v.shape[0], n, replace=False))]
        else:
            t = t[np.sort(rng.choice(t.shape[0], n, replace=False))]
    pv = np.sort(v @ theta, axis=0)
    pt = np.sort(t @ theta, axis=0)
    return float(np.mean(np.abs(pv - pt)))


def _cov(v, t):
    vb, _ = spectral.mean_center(v)
    tb, _ = spectral.mean_center(t)
    return spectral.cross_covariance(vb, tb)


def suppression_law(spectrum, k, strength):
    """Expected post-projection values: leading ``k`` scaled by (1-strength)^2."""
    out = np.array(spectrum, dtype=np.float64)
    out[:k] *= (1.0 - strength) ** 2
    return out


def spectrum_report(v, t, pair, cfg):
    """Cross-covariance spectra before and after projecting with ``pair``.

    ``spectrum_after`` is the sorted spectrum of the projected covariance;
    ``paired_after`` holds ``u_i' C~ w_i`` along the original singular
    directions. ``law_max_rel_deviation`` compares the sorted spectrum with
    the sorted suppression-law prediction.
    """
    c = _cov(v, t)
    dec = spectral.svd(c)
    pv, pt = project_features(v, t, pair, cfg)
    c_after = _cov(pv, pt)
    after = spectral.svd(c_after).singular_values
    paired = np.einsum("ij,ik,kj->j", dec.left_vectors, c_after, dec.right_vectors)
    predicted = np.sort(suppression_law(dec.singular_values, pair.rank, pair.strength))[::-1]
    denom = np.maximum(predicted, np.finfo(np.float64).tiny)
    scale = dec.singular_values[0] if dec.singular_values[0] > 0 else 1.0
    nz = predicted > 1e-12 * scale
    dev = float(np.max(np.abs(after[nz] - predicted[nz]) / denom[nz])) if nz.any() else 0.0
    norm_before = np.linalg.norm(c)
    return {
        "spectrum_before": dec.singular_values,
        "spectrum_after": after,
        "paired_after": paired,
        "frobenius_ratio": float(np.linalg.norm(c_after) / norm_before) if norm_before > 0 else 1.0,
        "law_max_rel_deviation": dev,
        "rank_k": pair.rank,
        "strength_lambda": pair.strength,
    }


def pca2(x):
    """First two principal coordinates, for external 2-D plotting."""
    xb, _ = spectral.mean_center(x)
    dec = spectral.svd(xb.T @ xb)
    return xb @ dec.left_vectors[:, :2]


@dataclass
class DiagnosticsReport:
    overlap_curve: dict = field(default_factory=dict)
    similarity_densities: dict = field(default_factory=dict)
    spectrum_before: list = field(default_factory=list)
    spectrum_after: list = field(default_factory=list)
    paired_after: list = field(default_factory=list)
    swd_before: float = 0.0
    swd_after: float = 0.0
    frobenius_ratio: float = 1.0
    law_max_rel_deviation: float = 0.0
    overlap_curve_after: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "overlap_curve": {str(k): v for k, v in self.overlap_curve.items()},
            "overlap_curve_after": {str(k): v for k, v in self.overlap_curve_after.items()},
            "similarity_densities": self.similarity_densities,
            "spectrum_before": list(map(float, self.spectrum_before)),
            "spectrum_after": list(map(float, self.spectrum_after)),
            "paired_after": list(map(float, self.paired_after)),
            "swd_before": self.swd_before,
            "swd_after": self.swd_after,
            "frobenius_ratio": self.frobenius_ratio,
            "law_max_rel_deviation": self.law_max_rel_deviation,
        }

    def write(self, out_dir):
        """JSON report plus CSV series for plotting."""
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "diagnostics.json", "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")
        with open(out / "spectrum.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "before", "after_sorted", "after_paired"])
            for i, row in enumerate(zip(self.spectrum_before, self.spectrum_after, self.paired_after)):
                w.writerow([i + 1, *map(repr, map(float, row))])
        with open(out / "overlap.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["K", "mean_overlap_ratio", "random_expectation", "std_error",
                        "mean_overlap_ratio_after"])
            for k, v in self.overlap_curve.items():
                after = self.overlap_curve_after.get(k, {}).get("mean_overlap_ratio", "")
                w.writerow([k, v["mean_overlap_ratio"], v["random_expectation"], v["std_error"], after])
        dens = self.similarity_densities
        if dens:
            with open(out / "similarity_hist.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["bin_left", "bin_right", "visual_density", "textual_density"])
                e = dens["bin_edges"]
                for i in range(len(e) - 1):
                    w.writerow([e[i], e[i + 1], dens["visual"][i], dens["textual"][i]])


def diagnose(v, t, pair, cfg, ks=(5, 10, 20, 50), n_directions=DEFAULT_DIRECTIONS, seed=0,
             anchors=None, bins=50):
    """Full report for encoded features ``v``, ``t`` and a fitted pair."""
    n = v.shape[0]
    ks = [k for k in ks if k < n]
    curve, (sv, st) = retrieval_overlap(v, t, ks, anchors=anchors, return_scores=True)
    pv, pt = project_features(v, t, pair, cfg)
    curve_after = retrieval_overlap(pv, pt, ks, anchors=anchors)
    spec = spectrum_report(v, t, pair, cfg)
    return DiagnosticsReport(
        overlap_curve=curve,
        overlap_curve_after=curve_after,
        similarity_densities=similarity_densities(sv, st, bins),
        spectrum_before=spec["spectrum_before"],
        spectrum_after=spec["spectrum_after"],
        paired_after=spec["paired_after"],
        swd_before=sliced_wasserstein(v, t, n_directions, seed),
        swd_after=sliced_wasserstein(pv, pt, n_directions, seed),
        frobenius_ratio=spec["frobenius_ratio"],
        law_max_rel_deviation=spec["law_max_rel_deviation"],
    )
