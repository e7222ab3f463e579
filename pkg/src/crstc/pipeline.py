"""End-to-end helpers: trained model + features -> frame labels -> events."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import clustering, segmentation
from .config import ClusterConfig, SegmentConfig
from .dsp import FrameGrid
from .stvae import STVAEParams, extract_embeddings


@dataclass
class Segmentation:
    clusters: np.ndarray
    labels: np.ndarray
    events: list[segmentation.Event]
    mapping: dict = field(default_factory=dict)
    heuristic: bool = False


def embed(seq: np.ndarray, params: STVAEParams, mode: str = "both") -> np.ndarray:
    """Standardized transition embeddings for one (already normalized) feature sequence."""
    return clustering.standardize(extract_embeddings(seq, params, mode))


def cluster_embeddings(emb: np.ndarray, cfg: ClusterConfig) -> np.ndarray:
    return clustering.cluster(emb, cfg.method, cfg.k, cfg.seed, cfg.bandwidth).labels


def cluster_pooled(embs: list[np.ndarray], cfg: ClusterConfig) -> list[np.ndarray]:
    """Cluster all files' embeddings jointly; returns per-file label arrays."""
    pooled = np.concatenate(embs)
    labels = cluster_embeddings(pooled, cfg)
    bounds = np.cumsum([0] + [len(e) for e in embs])
    return [labels[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def segment_labels(clusters: np.ndarray, cfg: SegmentConfig, grid: FrameGrid,
                   reference=None, energies=None) -> Segmentation:
    """Smooth cluster ids, map them to cry / non-cry and assemble filtered events.

    ``identity`` mapping treats cluster ids as classes directly (k = 2 only).
    """
    smoothed = segmentation.smooth(clusters, cfg.smooth_window)
    mode = cfg.mapping
    heuristic = False
    if mode == "identity":
        if not np.isin(smoothed, (0, 1)).all():
            raise ValueError("identity mapping needs binary cluster ids")
        labels, mapping = smoothed.astype(np.int64), {0: 0, 1: 1}
    else:
        if mode == "eval" and reference is None:
            raise ValueError("eval mapping needs reference labels")
        labels, mapping = segmentation.map_clusters(smoothed, mode, reference, energies,
                                                    return_mapping=True)
        heuristic = mode == "heuristic"
    events = segmentation.labels_to_events(labels, grid)
    events = segmentation.min_duration_filter(events, cfg.min_s, cfg.max_gap_s)
    final = segmentation.events_to_labels(events, grid)
    return Segmentation(np.asarray(clusters), final, events,
                        {int(k): int(v) for k, v in mapping.items()}, heuristic)


def energy_proxy(raw_features: np.ndarray) -> np.ndarray:
    """Frame energy stand-in from log-mel features: log of summed mel energy."""
    f = np.asarray(raw_features, dtype=np.float64)
    top = f.max(axis=1, keepdims=True)
    return (top + np.log(np.exp(f - top).sum(axis=1, keepdims=True))).ravel()
