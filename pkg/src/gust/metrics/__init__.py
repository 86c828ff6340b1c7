"""Distributional evaluation of generated geometries and their properties."""

from .embedding import (GENERATED, REAL, CellEmbedding, EmbeddedSet, MetricConfig, embed,
                        embed_points, pca_embed, tsne_embed)
from .knn import coverage, density, knn_radii, pairwise_distances
from .stats import (kde_curve, silverman_bandwidth, wasserstein1, welch_p_value, write_kde_csv,
                    write_metric_csv)

__all__ = [
    "GENERATED", "REAL", "CellEmbedding", "EmbeddedSet", "MetricConfig", "coverage", "density",
    "embed", "embed_points", "kde_curve", "knn_radii", "pairwise_distances", "pca_embed",
    "silverman_bandwidth", "tsne_embed", "wasserstein1", "welch_p_value", "write_kde_csv",
    "write_metric_csv",
]
