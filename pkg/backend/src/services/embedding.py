"""
Incident-type embeddings learned from hierarchical random walks over impact graphs.

Each walk step first moves to a random topology neighbour inside the impact graph and
then emits an incident type drawn from that node's window incidents, so types rendered
by nodes of one failure end up close in the emitted sequences. A skip-gram model with
negative sampling turns the sequences into one vector per type.
"""
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from ..config import WalkConfig
from ..core.model import FailureImpactGraph, IncidentEmbedding
from ..core.topology import TopologyGraph
from ..errors import DataValidationError

logger = logging.getLogger(__name__)

NEGATIVE_POWER = 0.75
MIN_LR_FRACTION = 1e-4


@dataclass
class WalkCorpus:
    """Incident-type sequences, one per walk"""

    sequences: List[List[str]] = field(default_factory=list)

    @property
    def vocabulary(self) -> List[str]:
        return sorted({t for seq in self.sequences for t in seq})

    def type_counts(self) -> Counter:
        return Counter(t for seq in self.sequences for t in seq)

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self) -> Iterator[List[str]]:
        return iter(self.sequences)


# --- walks -----------------------------------------------------------------------

def _graph_walks(graph: FailureImpactGraph, topo: TopologyGraph, cfg: WalkConfig,
                 rng: np.random.Generator) -> List[List[str]]:
    members = sorted(graph.nodes)
    member_set = set(members)
    types = graph.incidents_by_node()
    nbrs = {n: [m for m in topo.neighbor_names(n) if m in member_set] for n in members}

    sub = nx.Graph()
    sub.add_nodes_from(members)
    sub.add_edges_from((a, b) for a in members for b in nbrs[a])
    starts = []
    for comp in nx.connected_components(sub):
        if any(types[n] for n in comp):
            starts.extend(comp)
        else:
            logger.warning("impact graph nodes %s carry no incidents; no walks start there", sorted(comp))
    starts.sort()

    walks = []
    for start in starts:
        for _ in range(cfg.walks_per_start):
            current = start
            seq: List[str] = []
            while len(seq) < cfg.walk_length:
                options = nbrs[current]
                if options:
                    current = options[rng.integers(len(options))]
                emitted = types[current]
                if emitted:
                    seq.append(emitted[rng.integers(len(emitted))])
            walks.append(seq)
    return walks


def generate_walks(graphs: Sequence[FailureImpactGraph], topo: TopologyGraph, cfg: WalkConfig,
                   workers: int = 1) -> WalkCorpus:
    """Walk corpus over every impact graph; per-graph seeds keep parallel runs deterministic"""
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(len(graphs))]
    jobs = []
    for graph, rng in zip(graphs, rngs):
        if not graph.incidents:
            logger.warning("skipping impact graph in window [%d,%d]: no incidents",
                           graph.window.start_minute, graph.window.end_minute)
            continue
        jobs.append((graph, rng))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_graph = list(pool.map(lambda job: _graph_walks(job[0], topo, cfg, job[1]), jobs))
    else:
        per_graph = [_graph_walks(g, topo, cfg, rng) for g, rng in jobs]
    corpus = WalkCorpus([seq for walks in per_graph for seq in walks])
    logger.info("generated %d walks over %d impact graphs", len(corpus), len(jobs))
    return corpus


# --- skip-gram with negative sampling --------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def emb_softmax_row(emb: IncidentEmbedding, i: str) -> Tuple[List[str], np.ndarray]:
    vocab = emb.vocabulary
    matrix = emb.matrix(vocab).astype(np.float64)
    scores = matrix @ emb.vector(i).astype(np.float64)
    scores -= scores.max()
    probs = np.exp(scores)
    return vocab, probs / probs.sum()


def emb_softmax(emb: IncidentEmbedding, i: str, j: str) -> float:
    """Full-softmax probability of type j in the context of type i"""
    emb.vector(j)
    vocab, probs = emb_softmax_row(emb, i)
    return float(probs[vocab.index(j)])


@dataclass
class SgnsGradients:
    center: np.ndarray
    context: np.ndarray
    negatives: np.ndarray
    loss: float


def sgns_loss(center: np.ndarray, context: np.ndarray, negs: np.ndarray) -> float:
    """-log sig(c.o) - sum_k log sig(-c.n_k)"""
    c = np.asarray(center, dtype=float)
    pos = float(np.logaddexp(0.0, -(c @ np.asarray(context, dtype=float))))
    neg = float(np.sum(np.logaddexp(0.0, np.asarray(negs, dtype=float).reshape(-1, c.size) @ c)))
    return pos + neg


def sgns_batch_gradients(centers: np.ndarray, contexts: np.ndarray, negs: np.ndarray,
                         mask: Optional[np.ndarray] = None):
    """Batched gradients of the negative-sampling loss.

    Args:
        centers: (B, d) center vectors
        contexts: (B, d) context vectors
        negs: (B, k, d) negative context vectors
        mask: optional (B, k) 0/1 weights switching individual negatives off

    Returns:
        (grad_centers, grad_contexts, grad_negs, per-row losses)
    """
    s = np.einsum("bd,bd->b", centers, contexts)
    sk = np.einsum("bkd,bd->bk", negs, centers)
    weights = np.ones_like(sk) if mask is None else mask
    g_pos = _sigmoid(s) - 1.0
    g_neg = _sigmoid(sk) * weights
    grad_c = g_pos[:, None] * contexts + np.einsum("bk,bkd->bd", g_neg, negs)
    grad_o = g_pos[:, None] * centers
    grad_n = g_neg[:, :, None] * centers[:, None, :]
    losses = np.logaddexp(0.0, -s) + np.sum(np.logaddexp(0.0, sk) * weights, axis=1)
    return grad_c, grad_o, grad_n, losses


def sgns_gradient(center: np.ndarray, context: np.ndarray, negs: np.ndarray) -> SgnsGradients:
    c = np.asarray(center, dtype=float)[None, :]
    o = np.asarray(context, dtype=float)[None, :]
    n = np.asarray(negs, dtype=float).reshape(1, -1, c.shape[1])
    grad_c, grad_o, grad_n, losses = sgns_batch_gradients(c, o, n)
    return SgnsGradients(grad_c[0], grad_o[0], grad_n[0], float(losses[0]))


def _apply_rows(matrix: np.ndarray, rows: np.ndarray, grads: np.ndarray, lr: float) -> None:
    """Subtract lr times the per-row mean gradient"""
    uniq, inverse = np.unique(rows, return_inverse=True)
    acc = np.zeros((uniq.size, matrix.shape[1]))
    np.add.at(acc, inverse, grads)
    counts = np.bincount(inverse, minlength=uniq.size)
    matrix[uniq] -= lr * acc / counts[:, None]


class SkipGramTrainer:
    """Skip-gram with negative sampling over a walk corpus.

    ``workers == 1`` is deterministic for a fixed seed; more workers train shards of
    each epoch on threads that update the shared matrices without locks, so results
    vary from run to run.
    """

    def __init__(self, cfg: Optional[WalkConfig] = None):
        self.cfg = cfg or WalkConfig()
        self.vocab: List[str] = []
        self.center_vectors: Optional[np.ndarray] = None
        self.context_vectors: Optional[np.ndarray] = None
        self.pairs: Optional[np.ndarray] = None
        self.epoch_losses: List[float] = []
        self._cum_table: Optional[np.ndarray] = None
        self._rng = np.random.default_rng(self.cfg.seed)
        self._step = 0
        self._total_steps = 1

    def prepare(self, corpus: WalkCorpus) -> "SkipGramTrainer":
        if len(corpus) == 0:
            raise DataValidationError("cannot train on an empty corpus")
        self.vocab = corpus.vocabulary
        if len(self.vocab) < 2:
            raise DataValidationError("vocabulary of size 1 has nothing to contrast against")
        index = {t: i for i, t in enumerate(self.vocab)}
        encoded = [np.fromiter((index[t] for t in seq), dtype=np.int64, count=len(seq)) for seq in corpus]

        counts = np.bincount(np.concatenate(encoded), minlength=len(self.vocab)).astype(float)
        cum = np.cumsum(counts ** NEGATIVE_POWER)
        self._cum_table = cum / cum[-1]
        self.pairs = self._context_pairs(encoded)

        dim = self.cfg.dim
        self.center_vectors = (self._rng.random((len(self.vocab), dim)) - 0.5) / dim
        self.context_vectors = np.zeros((len(self.vocab), dim))
        n_batches = -(-len(self.pairs) // self.cfg.batch_size)
        self._total_steps = max(1, n_batches * self.cfg.epochs)
        self._step = 0
        self.epoch_losses = []
        logger.info("skip-gram: %d types, %d sequences, %d pairs per epoch",
                    len(self.vocab), len(corpus), len(self.pairs))
        return self

    def _context_pairs(self, encoded: List[np.ndarray]) -> np.ndarray:
        by_length: Dict[int, List[np.ndarray]] = {}
        for seq in encoded:
            by_length.setdefault(seq.size, []).append(seq)
        chunks = []
        for length in sorted(by_length):
            block = np.stack(by_length[length])
            for offset in range(1, min(self.cfg.window, length - 1) + 1):
                left, right = block[:, :-offset].ravel(), block[:, offset:].ravel()
                chunks.append(np.stack([left, right], axis=1))
                chunks.append(np.stack([right, left], axis=1))
        if not chunks:
            raise DataValidationError("corpus sequences are too short to form context pairs")
        return np.concatenate(chunks)

    def sample_negatives(self, rng: np.random.Generator, size) -> np.ndarray:
        return np.searchsorted(self._cum_table, rng.random(size), side="right")

    def _learning_rate(self) -> float:
        return self.cfg.learning_rate * max(MIN_LR_FRACTION, 1.0 - self._step / self._total_steps)

    def train_batch(self, centers: np.ndarray, contexts: np.ndarray, negatives: np.ndarray, lr: float) -> float:
        mask = (negatives != contexts[:, None]).astype(float)
        c = self.center_vectors[centers]
        o = self.context_vectors[contexts]
        n = self.context_vectors[negatives]
        grad_c, grad_o, grad_n, losses = sgns_batch_gradients(c, o, n, mask)
        _apply_rows(self.center_vectors, centers, grad_c, lr)
        _apply_rows(
            self.context_vectors,
            np.concatenate([contexts, negatives.ravel()]),
            np.concatenate([grad_o, grad_n.reshape(-1, grad_n.shape[2])]),
            lr,
        )
        return float(losses.sum())

    def loss(self, centers: np.ndarray, contexts: np.ndarray, negatives: np.ndarray) -> float:
        """Mean loss of a fixed batch under the current vectors"""
        mask = (negatives != contexts[:, None]).astype(float)
        _, _, _, losses = sgns_batch_gradients(
            self.center_vectors[centers], self.context_vectors[contexts],
            self.context_vectors[negatives], mask,
        )
        return float(losses.mean())

    def _run_shard(self, order: np.ndarray, rng: np.random.Generator) -> float:
        total = 0.0
        size = self.cfg.batch_size
        for b in range(0, order.size, size):
            batch = self.pairs[order[b:b + size]]
            negatives = self.sample_negatives(rng, (batch.shape[0], self.cfg.negatives))
            lr = self._learning_rate()
            self._step += 1
            total += self.train_batch(batch[:, 0], batch[:, 1], negatives, lr)
        return total

    def run_epoch(self) -> float:
        if self.pairs is None:
            raise DataValidationError("call prepare() before training")
        order = self._rng.permutation(len(self.pairs))
        if self.cfg.workers > 1:
            shards = np.array_split(order, self.cfg.workers)
            rngs = [np.random.default_rng(s) for s in
                    np.random.SeedSequence(int(self._rng.integers(2**63))).spawn(len(shards))]
            with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
                total = sum(pool.map(self._run_shard, shards, rngs))
        else:
            total = self._run_shard(order, self._rng)
        mean = total / len(self.pairs)
        self.epoch_losses.append(mean)
        logger.debug("epoch %d: mean loss %.5f", len(self.epoch_losses), mean)
        return mean

    def embedding(self) -> IncidentEmbedding:
        vectors = {t: self.center_vectors[i].astype(np.float32) for i, t in enumerate(self.vocab)}
        return IncidentEmbedding(self.cfg.dim, vectors)

    def fit(self, corpus: WalkCorpus) -> IncidentEmbedding:
        self.prepare(corpus)
        for _ in range(self.cfg.epochs):
            self.run_epoch()
        logger.info("skip-gram trained: %d epochs, final loss %.5f", self.cfg.epochs, self.epoch_losses[-1])
        return self.embedding()


def train(corpus: WalkCorpus, cfg: WalkConfig) -> IncidentEmbedding:
    return SkipGramTrainer(cfg).fit(corpus)
