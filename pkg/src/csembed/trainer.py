"""Sampling-based joint optimization of direct and neighborhood losses.

Each sample draws one observed (user, item) edge, applies the direct loss
update (rating or ranking form), then walks ``walk_order`` steps from each
endpoint and trains the same-side contexts with ``negatives`` negatives,
scaled by ``lambda_ns``. Workers are threads running compiled, GIL-free
loops over shared matrices without locks.
"""

from __future__ import annotations

import threading
import time
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .graph import BipartiteGraph, random_walk, sample_negative
from .model import EmbeddingTriplet, init_embeddings

DEFAULT_LAMBDA = {"rate": 0.05, "rank": 0.1}
CHUNK = 1 << 16


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    dim: int = 100
    learning_rate: float = 0.1
    lambda_ns: Optional[float] = None  # None: 0.05 for rate, 0.1 for rank
    lambda_reg: float = 0.025
    walk_order: int = 2
    negatives: int = 5
    total_samples: Optional[int] = None  # None: samples_multiplier * |E|
    samples_multiplier: float = 80.0
    loss_variant: str = "rate"
    workers: int = 1
    seed: int = 0
    negative_distribution: str = "degree"
    lr_schedule: str = "linear"
    context_init: str = "zero"

    def validate(self) -> TrainConfig:
        problems = []
        if self.dim < 1:
            problems.append("dim must be >= 1")
        if not self.learning_rate > 0:
            problems.append("learning_rate must be > 0")
        if self.lambda_ns is not None and self.lambda_ns < 0:
            problems.append("lambda_ns must be >= 0")
        if self.lambda_reg < 0:
            problems.append("lambda_reg must be >= 0")
        if self.walk_order < 1:
            problems.append("walk_order must be >= 1")
        if self.negatives < 0:
            problems.append("negatives must be >= 0")
        if self.total_samples is not None and self.total_samples < 0:
            problems.append("total_samples must be >= 0")
        if self.samples_multiplier < 0:
            problems.append("samples_multiplier must be >= 0")
        if self.loss_variant not in ("rate", "rank"):
            problems.append("loss_variant must be 'rate' or 'rank'")
        if self.workers < 1:
            problems.append("workers must be >= 1")
        if self.negative_distribution not in ("degree", "uniform"):
            problems.append("negative_distribution must be 'degree' or 'uniform'")
        if self.lr_schedule not in ("linear", "constant"):
            problems.append("lr_schedule must be 'linear' or 'constant'")
        if self.context_init not in ("zero", "uniform"):
            problems.append("context_init must be 'zero' or 'uniform'")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @property
    def lam(self) -> float:
        if self.lambda_ns is None:
            return DEFAULT_LAMBDA[self.loss_variant]
        return self.lambda_ns

    def samples_for(self, edge_count: int) -> int:
        if self.total_samples is not None:
            return int(self.total_samples)
        return int(round(self.samples_multiplier * edge_count))

    def resolved(self, edge_count: int) -> dict:
        out = asdict(self)
        out["lambda_ns"] = self.lam
        out["total_samples"] = self.samples_for(edge_count)
        return out


@dataclass
class StepReport:
    samples_done: int
    total_samples: int
    loss: float
    elapsed: float

    @property
    def fraction(self) -> float:
        return self.samples_done / self.total_samples if self.total_samples else 1.0

    @property
    def samples_per_sec(self) -> float:
        return self.samples_done / self.elapsed if self.elapsed > 0 else 0.0

    def format(self) -> str:
        return (f"samples {self.samples_done}/{self.total_samples} "
                f"({100 * self.fraction:.1f}%) loss {self.loss:.4f} "
                f"{self.samples_per_sec:,.0f} samples/s")


# ── single-sample entry points ───────────────────────────────────────────────

def _state_from(rng: np.random.Generator) -> np.ndarray:
    return np.array([rng.integers(0, 2**63)], dtype=np.uint64)


def _neg_arrays(graph: BipartiteGraph):
    u, i = graph.negative_samplers["user"], graph.negative_samplers["item"]
    return u.prob, u.alias, i.prob, i.alias


def step_ds_rate(user: int, item: int, graph: BipartiteGraph, triplet: EmbeddingTriplet,
                 config: TrainConfig, rng: np.random.Generator) -> float:
    """One rating-form update: the positive pair plus ``negatives`` random
    (user, item) pairs drawn independently from each whole side."""
    up, ua, ip, ia = _neg_arrays(graph)
    uniform = config.negative_distribution == "uniform"
    state = _state_from(rng)
    neg_u = np.empty(config.negatives, np.int64)
    neg_i = np.empty(config.negatives, np.int64)
    _kernels.draw_side_into(up, ua, 0, graph.n_users, uniform, neg_u, state)
    _kernels.draw_side_into(ip, ia, graph.n_users, graph.n_items, uniform, neg_i, state)
    return float(_kernels.ds_rate_apply(triplet.phi, user, item, neg_u, neg_i,
                                        config.learning_rate, config.lambda_reg))


def step_ds_rank(user: int, pos_item: int, graph: BipartiteGraph, triplet: EmbeddingTriplet,
                 config: TrainConfig, rng: np.random.Generator) -> float:
    """One pairwise-preference update against a single sampled item."""
    neg = sample_negative(graph, "item", rng, config.negative_distribution)
    return float(_kernels.ds_rank_apply(triplet.phi, user, pos_item, neg,
                                        config.learning_rate, config.lambda_reg))


def step_ns(center: int, graph: BipartiteGraph, triplet: EmbeddingTriplet,
            config: TrainConfig, rng: np.random.Generator) -> float:
    """Neighborhood update from one walk; returns the unscaled loss."""
    side = graph.side_of(center)
    ctx = triplet.phi_uc if side == "user" else triplet.phi_ic
    table = graph.negative_samplers[side]
    walk = np.asarray(random_walk(graph, center, config.walk_order, rng), np.int64)
    contexts = walk[1::2]
    offset, size = graph.side_offset(side), graph.side_size(side)
    if np.any((contexts < offset) | (contexts >= offset + size)):
        raise AssertionError("context vertex on the wrong side")
    negs = np.empty((contexts.size, config.negatives), np.int64)
    _kernels.draw_side_into(table.prob, table.alias, offset, size,
                            config.negative_distribution == "uniform", negs, _state_from(rng))
    acc = np.zeros(triplet.dim, np.float32)
    return float(_kernels.ns_apply(triplet.phi, ctx, center, contexts, negs, config.lam,
                                   config.learning_rate, config.lambda_reg, acc))


# ── full runs ────────────────────────────────────────────────────────────────

def worker_shares(total: int, workers: int) -> list[int]:
    base, extra = divmod(total, workers)
    return [base + (1 if w < extra else 0) for w in range(workers)]


def _worker_state(seed: int, w: int) -> np.ndarray:
    ss = np.random.SeedSequence(seed, spawn_key=(1, w))
    return ss.generate_state(1, np.uint64)


def train(graph: BipartiteGraph, config: TrainConfig,
          progress: Callable[[StepReport], None] | None = None,
          report_every: float = 2.0) -> EmbeddingTriplet:
    """Initialize embeddings and optimize them over ``graph``."""
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(0,)))
    triplet = init_embeddings(graph.vertex_count, config.dim, rng, config.context_init)
    return run_parallel(graph, config, triplet, progress, report_every)


def run_parallel(graph: BipartiteGraph, config: TrainConfig,
                 triplet: EmbeddingTriplet | None = None,
                 progress: Callable[[StepReport], None] | None = None,
                 report_every: float = 2.0) -> EmbeddingTriplet:
    """Run all samples across ``config.workers`` lock-free threads.

    Updates ``triplet`` in place. With one worker and a fixed seed the result
    is bit-reproducible.
    """
    config.validate()
    if triplet is None:
        rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(0,)))
        triplet = init_embeddings(graph.vertex_count, config.dim, rng, config.context_init)
    if triplet.vertex_count != graph.vertex_count:
        raise ValueError("triplet and graph disagree on vertex count")

    total = config.samples_for(graph.edge_count)
    shares = worker_shares(total, config.workers)
    done = [0] * config.workers
    emas = [np.zeros(2, np.float64) for _ in shares]
    statuses = [np.zeros(2, np.int64) for _ in shares]
    errors: list[BaseException] = []
    stop = threading.Event()

    up, ua, ip, ia = _neg_arrays(graph)
    fixed = (graph.edge_packed, graph.indptr, graph.nbr_packed, up, ua, ip, ia,
             triplet.phi, triplet.phi_uc, triplet.phi_ic,
             graph.n_users, graph.n_items, config.loss_variant == "rank",
             config.negatives, config.walk_order, float(config.lam),
             float(config.lambda_reg), config.negative_distribution == "uniform",
             float(config.learning_rate), config.lr_schedule == "linear")

    def work(w: int) -> None:
        state = _worker_state(config.seed, w)
        share = shares[w]
        try:
            begin = 0
            while begin < share and not stop.is_set():
                end = min(begin + CHUNK, share)
                reached = _kernels.train_range(*fixed, begin, end, share, state,
                                               emas[w], statuses[w])
                done[w] = reached
                if statuses[w][0]:
                    stop.set()
                    return
                begin = end
        except BaseException as exc:  # propagate after join
            errors.append(exc)
            stop.set()

    def report() -> StepReport:
        started = [e for e in emas if e[1]]
        loss = float(np.mean([e[0] for e in started])) if started else float("nan")
        return StepReport(sum(done), total, loss, time.perf_counter() - t0)

    t0 = time.perf_counter()
    threads = [threading.Thread(target=work, args=(w,), name=f"csembed-worker-{w}", daemon=True)
               for w in range(config.workers)]
    for t in threads:
        t.start()
    for t in threads:
        while t.is_alive():
            t.join(timeout=report_every)
            if progress is not None and t.is_alive():
                progress(report())

    if errors:
        raise RuntimeError("training worker failed") from errors[0]
    for w, status in enumerate(statuses):
        if status[0] == 1:
            raise NumericalError(f"non-finite loss in worker {w} at sample {status[1]}; "
                                 f"try a smaller learning rate")
        if status[0] == 2:
            raise AssertionError(f"worker {w}: neighborhood context on the wrong side "
                                 f"at sample {status[1]}")
    if progress is not None:
        progress(report())
    return triplet
