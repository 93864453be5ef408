"""claimsml: CBOW Embedding Trainer

Continuous bag-of-words with negative sampling over claim sequences. For a
center token t with context set C (up to ``window`` tokens on each side,
same sequence), h = mean(W_in[C]) and the loss is

    -log sigmoid(W_out[t] . h) - sum_{n in negatives} log sigmoid(-W_out[n] . h)

Negatives come from the unigram^0.75 table using the word2vec 48-bit linear
congruential update, so a given seed reproduces the same draws. The numba
kernels apply the exact mean-context gradient; ``cbow_step`` is the same
computation in plain numpy for gradient checks.
"""

from __future__ import annotations

import logging
from typing import Iterable

import numpy as np
from numba import njit, prange

from claimsml.config import CbowConfig
from claimsml.embeddings.table import EmbeddingTable
from claimsml.errors import TrainingError
from claimsml.narrative.tokenize import ClaimSequence
from claimsml.narrative.vocab import UNK_ID, Vocabulary
from claimsml.utils import make_rng

logger = logging.getLogger(__name__)

TABLE_DOMAIN = 2**31 - 1
_LCG_MUL = np.uint64(25214903917)
_LCG_ADD = np.uint64(11)


def build_cum_table(frequencies: np.ndarray, power: float) -> np.ndarray:
    """Cumulative unigram^power table scaled to ``TABLE_DOMAIN`` (int64)."""
    weights = np.asarray(frequencies, dtype=np.float64) ** power
    weights[np.asarray(frequencies) <= 0] = 0.0
    total = weights.sum()
    if total <= 0:
        raise TrainingError("noise distribution is empty")
    cum = np.round(np.cumsum(weights) / total * TABLE_DOMAIN).astype(np.int64)
    cum[-1] = TABLE_DOMAIN
    return cum


def pack_sequences(sequences: Iterable[ClaimSequence]) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate token ids (dropping [UNK]) into (tokens, offsets)."""
    chunks: list[np.ndarray] = []
    offsets = [0]
    for seq in sequences:
        ids = seq.as_array()
        ids = ids[ids != UNK_ID]
        chunks.append(ids)
        offsets.append(offsets[-1] + len(ids))
    tokens = np.concatenate(chunks).astype(np.int32) if chunks else np.zeros(0, dtype=np.int32)
    return tokens, np.asarray(offsets, dtype=np.int64)


# ── Reference step (numpy) ───────────────────────────────────────────────────

def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def cbow_step(w_in: np.ndarray, w_out: np.ndarray, context: np.ndarray, center: int,
              negatives: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and full gradients of one (center, context, negatives) example.

    Returns ``(loss, grad_in, grad_out)`` with gradients shaped like the
    weight matrices; duplicated context or negative ids accumulate.
    """
    context = np.asarray(context, dtype=np.int64)
    targets = np.concatenate([[center], np.asarray(negatives, dtype=np.int64)])
    labels = np.zeros(len(targets))
    labels[0] = 1.0
    h = w_in[context].mean(axis=0)
    scores = w_out[targets] @ h
    signs = 2.0 * labels - 1.0
    loss = -float(np.sum(_log_sigmoid(signs * scores)))
    g = 1.0 / (1.0 + np.exp(-scores)) - labels          # d loss / d score
    grad_out = np.zeros_like(w_out)
    np.add.at(grad_out, targets, g[:, None] * h[None, :])
    grad_h = g @ w_out[targets]
    grad_in = np.zeros_like(w_in)
    np.add.at(grad_in, context, np.tile(grad_h / len(context), (len(context), 1)))
    return loss, grad_in, grad_out


# ── Kernels ──────────────────────────────────────────────────────────────────

@njit(cache=True)
def _draw_negative(cum_table, rand):
    r = np.int64((rand >> np.uint64(16)) % np.uint64(cum_table[-1]))
    lo, hi = 0, cum_table.shape[0] - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cum_table[mid] > r:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit(cache=True)
def _log1p_exp(x):
    if x > 0.0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


@njit(cache=True)
def _train_range(syn0, syn1neg, tokens, offsets, seq_lo, seq_hi, cum_table, window, negatives,
                 alpha0, alpha_min, done0, total, stride, rand):
    """Train sequences [seq_lo, seq_hi); ``stride`` scales local progress for the LR schedule."""
    dim = syn0.shape[1]
    neu1 = np.zeros(dim, dtype=np.float32)
    neu1e = np.zeros(dim, dtype=np.float32)
    loss = 0.0
    n_examples = 0
    done = done0
    for s in range(seq_lo, seq_hi):
        start = offsets[s]
        stop = offsets[s + 1]
        for i in range(start, stop):
            done += stride
            alpha = alpha0 - (alpha0 - alpha_min) * done / total
            if alpha < alpha_min:
                alpha = alpha_min
            lo = max(start, i - window)
            hi = min(stop, i + window + 1)
            cw = 0
            neu1[:] = 0.0
            for j in range(lo, hi):
                if j != i:
                    for k in range(dim):
                        neu1[k] += syn0[tokens[j], k]
                    cw += 1
            if cw == 0:
                continue
            inv = np.float32(1.0 / cw)
            for k in range(dim):
                neu1[k] *= inv
            neu1e[:] = 0.0
            center = tokens[i]
            for d in range(negatives + 1):
                if d == 0:
                    target = center
                    label = 1.0
                else:
                    rand = rand * _LCG_MUL + _LCG_ADD
                    target = _draw_negative(cum_table, rand)
                    if target == center:
                        continue
                    label = 0.0
                f = 0.0
                for k in range(dim):
                    f += neu1[k] * syn1neg[target, k]
                if label > 0.5:
                    loss += _log1p_exp(-f)
                else:
                    loss += _log1p_exp(f)
                g = np.float32((label - 1.0 / (1.0 + np.exp(-f))) * alpha)
                for k in range(dim):
                    neu1e[k] += g * syn1neg[target, k]
                    syn1neg[target, k] += g * neu1[k]
            n_examples += 1
            for j in range(lo, hi):
                if j != i:
                    for k in range(dim):
                        syn0[tokens[j], k] += neu1e[k] * inv
    return loss, n_examples, rand


@njit(cache=True)
def _train_epoch_serial(syn0, syn1neg, tokens, offsets, cum_table, window, negatives,
                        alpha0, alpha_min, done0, total, rand):
    return _train_range(syn0, syn1neg, tokens, offsets, 0, offsets.shape[0] - 1, cum_table, window,
                        negatives, alpha0, alpha_min, done0, total, 1, rand)


@njit(parallel=True, cache=True)
def _train_epoch_hogwild(syn0, syn1neg, tokens, offsets, cum_table, window, negatives,
                         alpha0, alpha_min, done0, total, seeds):
    """Lock-free shards; update interleaving (and so the result) depends on scheduling."""
    n_shards = seeds.shape[0]
    n_seq = offsets.shape[0] - 1
    losses = np.zeros(n_shards)
    counts = np.zeros(n_shards, dtype=np.int64)
    for shard in prange(n_shards):
        lo = shard * n_seq // n_shards
        hi = (shard + 1) * n_seq // n_shards
        loss, n, _ = _train_range(syn0, syn1neg, tokens, offsets, lo, hi, cum_table, window, negatives,
                                  alpha0, alpha_min, done0, total, n_shards, seeds[shard])
        losses[shard] = loss
        counts[shard] = n
    return losses.sum(), counts.sum()


# ── Trainer ──────────────────────────────────────────────────────────────────

def train_cbow(
    sequences: Iterable[ClaimSequence],
    vocab: Vocabulary,
    cfg: CbowConfig,
    threads: int = 1,
    deterministic: bool = True,
    loss_history: list[float] | None = None,
) -> EmbeddingTable:
    """Train input vectors for every vocabulary token.

    Deterministic mode runs the serial kernel and is bit-reproducible.
    Otherwise ``threads`` Hogwild shards update the shared matrices. The mean
    per-example loss of each epoch is appended to ``loss_history`` if given.
    """
    tokens, offsets = pack_sequences(sequences)
    if len(tokens) == 0:
        raise TrainingError("cannot train embeddings on an empty corpus")
    freqs = np.zeros(len(vocab), dtype=np.int64)
    np.add.at(freqs, tokens, 1)
    cum_table = build_cum_table(freqs, cfg.noise_power)

    rng = make_rng(cfg.seed)
    syn0 = ((rng.random((len(vocab), cfg.dim)) - 0.5) / cfg.dim).astype(np.float32)
    syn1neg = np.zeros((len(vocab), cfg.dim), dtype=np.float32)

    total = float(len(tokens) * cfg.epochs)
    rand = np.uint64(cfg.seed)
    parallel = not deterministic and threads > 1
    for epoch in range(cfg.epochs):
        done0 = float(epoch * len(tokens))
        if parallel:
            seeds = np.array([cfg.seed + 1_000_003 * (epoch * threads + s) for s in range(threads)], dtype=np.uint64)
            loss, n = _train_epoch_hogwild(syn0, syn1neg, tokens, offsets, cum_table, cfg.window, cfg.negatives,
                                           cfg.learning_rate, cfg.min_learning_rate, done0, total, seeds)
        else:
            loss, n, rand = _train_epoch_serial(syn0, syn1neg, tokens, offsets, cum_table, cfg.window,
                                                cfg.negatives, cfg.learning_rate, cfg.min_learning_rate,
                                                done0, total, rand)
        mean_loss = float(loss) / max(int(n), 1)
        if loss_history is not None:
            loss_history.append(mean_loss)
        logger.info("cbow epoch", extra={"fields": {
            "epoch": epoch + 1, "loss": mean_loss, "examples": int(n), "parallel": parallel}})

    if not np.all(np.isfinite(syn0)):
        raise TrainingError("embedding training diverged (non-finite weights)")
    return EmbeddingTable(vocab, syn0)
