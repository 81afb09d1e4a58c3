"""Differentiable k-means: cluster means learned jointly with a feature embedding."""
from .cluster_head import (
    Assignment,
    ClusterHead,
    assign,
    balance_metric,
    init_clusters,
    kmeans_backward,
    kmeans_loss,
    l2_reg,
)
from .data import Dataset, SampleBatch, gen_blobs, read_cifar10_binary, relabel_foreground, split
from .evalkit import ConfusionReport, confusion, evaluate_model, lloyd_kmeans
from .trainer import EmbeddingNet, TrainConfig, rmsprop_step, total_loss, train

__version__ = "0.1.0"
