"""Approximate nearest neighbour search over a neighborhood graph augmented
with product-quantizer bridge vectors."""

from .graph import AugmentedGraph, BridgeGraph, NeighborhoodGraph, build_bgraph, build_index, build_ngraph, load_index, save_index
from .ivfadc import CoarseIndex, RerankParams, build_ivf, load_ivf, recall_at, save_ivf, search_ivf
from .multiseq import ms_init, ms_next
from .quantizer import ProductQuantizer, asymmetric_distance, build_tables, train
from .search import SearchParams, accuracy, search_augmented, search_exact, search_plain
from .vecstore import Dataset, DistanceCounter, brute_force_knn, load_dataset, save_dataset, sq_dist

__all__ = [
    "AugmentedGraph", "BridgeGraph", "CoarseIndex", "Dataset", "DistanceCounter", "NeighborhoodGraph",
    "ProductQuantizer", "RerankParams", "SearchParams", "accuracy", "asymmetric_distance",
    "brute_force_knn", "build_bgraph", "build_index", "build_ivf", "build_ngraph", "build_tables",
    "load_dataset", "load_index", "load_ivf", "ms_init", "ms_next", "recall_at", "save_dataset",
    "save_index", "save_ivf", "search_augmented", "search_exact", "search_ivf", "search_plain",
    "sq_dist", "train",
]
