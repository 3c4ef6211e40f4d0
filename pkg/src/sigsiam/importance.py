"""Input-dimension and cortical-region importance from trained encoder weights."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import atlas
from .errors import SchemaError, StateError
from .features import DEFAULT_LAYOUT, FeatureLayout

FLOOR = 0.2


def _weight_matrices(encoder) -> list[np.ndarray]:
    if hasattr(encoder, "stage"):
        if encoder.stage != "trained":
            raise StateError(f"compressor is not trained (stage {encoder.stage!r})")
        encoder = encoder.encoder
    mats = [np.asarray(getattr(layer, "weights", layer), dtype=float) for layer in encoder]
    for prev, nxt in zip(mats, mats[1:]):
        if prev.shape[0] != nxt.shape[1]:
            raise SchemaError("encoder layers do not chain")
    return mats


def layer_importance(weights: np.ndarray, out_importance: np.ndarray) -> np.ndarray:
    """One backward step through a layer with weights ``(out, in)``.

    Each output neuron's incoming absolute weights are scaled by its
    importance; those strictly below that neuron's median are dropped; input
    importance is the importance-weighted sum of what survives.
    """
    w = np.abs(np.asarray(weights, dtype=float))
    imp = np.asarray(out_importance, dtype=float)
    if imp.shape != (w.shape[0],):
        raise SchemaError(f"need {w.shape[0]} output importances, got {imp.shape}")
    scaled = imp[:, None] * w
    median = np.median(scaled, axis=1, keepdims=True)
    scaled[scaled < median] = 0.0
    return imp @ scaled


def input_importance(encoder) -> np.ndarray:
    """Importance factor of every encoder input.

    ``encoder`` is a trained ``AutoencoderStack``, a sequence of layers, or a
    sequence of ``(out, in)`` weight matrices, first layer first.  The last
    layer's outputs start with importance 1.

    Worked example, ``W1 = [[4, 1], [1, 4]]`` then ``W2 = [[2, 3]]``: the code
    neuron keeps only the 3 (median 2.5), so hidden importance is (0, 3).
    Hidden neuron 1 scales its row to (3, 12) and keeps the 12, giving input
    importance (0, 3 * 12) = (0, 36).
    """
    mats = _weight_matrices(encoder)
    imp = np.ones(mats[-1].shape[0])
    for w in reversed(mats):
        imp = layer_importance(w, imp)
    return imp


@dataclass(frozen=True)
class RegionImportanceReport:
    raw: np.ndarray  # (70,) summed importance per region
    normalized: np.ndarray  # (70,) mapped onto [0.2, 1]
    volume_raw: float
    volume_normalized: float
    gender_raw: float
    gender_normalized: float

    def ranking(self) -> np.ndarray:
        """Region indices, most important first (ties by index)."""
        return np.lexsort((np.arange(self.raw.size), -self.raw))

    def top(self, n: int = 20) -> list[str]:
        return [atlas.region_label(r) for r in self.ranking()[:n]]

    def rows(self) -> list[dict]:
        rank = np.empty(self.raw.size, dtype=int)
        rank[self.ranking()] = np.arange(1, self.raw.size + 1)
        out = []
        for r, (hemi, name) in enumerate(atlas.REGIONS):
            out.append(
                {"region_name": name, "hemisphere": hemi, "raw_score": float(self.raw[r]),
                 "normalized_score": float(self.normalized[r]), "rank": int(rank[r])}
            )
        out.append({"region_name": "total_volume", "hemisphere": "both", "raw_score": self.volume_raw,
                    "normalized_score": self.volume_normalized, "rank": ""})
        out.append({"region_name": "gender", "hemisphere": "", "raw_score": self.gender_raw,
                    "normalized_score": self.gender_normalized, "rank": ""})
        return out


def aggregate_regions(imp: np.ndarray, layout: FeatureLayout = DEFAULT_LAYOUT) -> RegionImportanceReport:
    """Sum importances per region, volume block and gender block, then rescale.

    Region scores are mapped affinely so the least important region lands on
    0.2 and the most important on 1.0; volume and gender use the same map and
    may fall outside that range.  If all regions tie they all map to 1.0 and
    volume and gender are expressed as a ratio to the common region score.
    """
    imp = np.asarray(imp, dtype=float)
    if imp.shape != (layout.dim,):
        raise SchemaError(f"importance vector must have {layout.dim} entries, got {imp.shape}")
    groups = layout.group_of()
    sums = np.bincount(groups, weights=imp, minlength=atlas.N_REGIONS + 2)
    raw, volume, gender = sums[: atlas.N_REGIONS], sums[atlas.N_REGIONS], sums[atlas.N_REGIONS + 1]
    lo, hi = raw.min(), raw.max()
    if np.isclose(hi, lo, rtol=1e-12, atol=0.0):
        def scale(x):
            return float(x / hi) if hi > 0 else 1.0

        normalized = np.ones_like(raw)
    else:
        def scale(x):
            return float(FLOOR + (1.0 - FLOOR) * (x - lo) / (hi - lo))

        normalized = FLOOR + (1.0 - FLOOR) * (raw - lo) / (hi - lo)
    return RegionImportanceReport(raw, normalized, float(volume), scale(volume), float(gender), scale(gender))


def average_importance(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Mean of unit-sum-normalised importance vectors (one per fold)."""
    if not vectors:
        raise SchemaError("no importance vectors to average")
    stacked = np.stack([np.asarray(v, dtype=float) for v in vectors])
    totals = stacked.sum(axis=1, keepdims=True)
    stacked = np.divide(stacked, totals, out=np.zeros_like(stacked), where=totals > 0)
    return stacked.mean(axis=0)
