"""Collaborative similarity embedding for top-N recommendation."""

from .alias import AliasTable
from .graph import (BipartiteGraph, DataError, EdgeListError, Interactions, Schema,
                    binarize, build_graph, canonical, filter_min_degree, load_edge_list,
                    merge_duplicates, preprocess, random_walk, read_edge_list,
                    sample_edge, sample_negative, write_edge_list)
from .evaluator import (EvalReport, SplitPair, average_precision, evaluate,
                        map_at_n, recall_at_n, recommend_top_n, split)
from .model import EmbeddingTriplet, init_embeddings, score, sigmoid
from .trainer import (NumericalError, StepReport, TrainConfig, run_parallel,
                      step_ds_rank, step_ds_rate, step_ns, train)

__version__ = "0.1.0"
