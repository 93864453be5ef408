"""claimsml: Masked-LM Transformer

A small encoder pretrained by masked-token reconstruction on claim
sequences, then fine-tuned with a sigmoid head on the [CLS] position of
whole patient histories.

Masking selects each maskable position (a real token, never a special) with
probability ``mask_rate``; a selected position becomes [MASK] 80% of the
time, a random real token 10% of the time, and is left unchanged otherwise.
Only selected positions contribute to the loss.
"""

from __future__ import annotations

import copy
import logging
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from claimsml.claims.preprocessing import DEFAULT_AGE_TABLE, AgeBucketTable
from claimsml.claims.records import LabeledExample, PatientHistory
from claimsml.config import SplitSpec, TransformerConfig
from claimsml.errors import SplitError, TrainingError
from claimsml.models.base import ModelKind, ProbabilisticClassifier, labels_of
from claimsml.models.split import split_train_test
from claimsml.narrative.tokenize import ClaimSequence, tokenize_history
from claimsml.narrative.vocab import MASK_ID, PAD_ID, SPECIALS, Vocabulary

logger = logging.getLogger(__name__)

IGNORE_INDEX = -100
N_SPECIALS = len(SPECIALS)
_INFERENCE_BATCH = 256


# ── Modules ──────────────────────────────────────────────────────────────────

class ClaimsEncoder(nn.Module):
    """Token plus learned position embeddings followed by post-norm encoder blocks."""

    def __init__(self, vocab_size: int, cfg: TransformerConfig):
        super().__init__()
        self.vocab_size = vocab_size
        self.max_len = cfg.max_len
        self.tokens = nn.Embedding(vocab_size, cfg.d_model, padding_idx=PAD_ID)
        self.positions = nn.Embedding(cfg.max_len, cfg.d_model)
        self.embed_norm = nn.LayerNorm(cfg.d_model)
        layer = nn.TransformerEncoderLayer(
            cfg.d_model, cfg.heads, cfg.ffn_dim, cfg.dropout,
            activation="gelu", batch_first=True, norm_first=False,
        )
        self.blocks = nn.TransformerEncoder(layer, cfg.layers, enable_nested_tensor=False)

    def forward(self, ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        if ids.shape[1] > self.max_len:
            raise ValueError(f"sequence length {ids.shape[1]} exceeds max_len {self.max_len}; truncate first")
        pos = torch.arange(ids.shape[1], device=ids.device)
        x = self.embed_norm(self.tokens(ids) + self.positions(pos)[None, :, :])
        return self.blocks(x, src_key_padding_mask=pad_mask)


class MlmHead(nn.Module):
    def __init__(self, d_model: int, vocab_size: int):
        super().__init__()
        self.dense = nn.Linear(d_model, d_model)
        self.norm = nn.LayerNorm(d_model)
        self.decoder = nn.Linear(d_model, vocab_size)

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.norm(F.gelu(self.dense(hidden))))


class MaskedLanguageModel(nn.Module):
    def __init__(self, vocab_size: int, cfg: TransformerConfig):
        super().__init__()
        self.config = cfg
        self.encoder = ClaimsEncoder(vocab_size, cfg)
        self.head = MlmHead(cfg.d_model, vocab_size)

    def forward(self, ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        return self.head(self.encoder(ids, pad_mask))


def build_masked_lm(vocab_size: int, cfg: TransformerConfig) -> MaskedLanguageModel:
    """Freshly initialised model; initialisation depends only on ``cfg.seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        return MaskedLanguageModel(vocab_size, cfg)


# ── Batching and masking ─────────────────────────────────────────────────────

def pad_batch(sequences: Sequence[np.ndarray | Sequence[int]]) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad id sequences with [PAD]; returns ids and a True-at-padding mask."""
    width = max(len(s) for s in sequences)
    ids = torch.full((len(sequences), width), PAD_ID, dtype=torch.long)
    for i, seq in enumerate(sequences):
        ids[i, :len(seq)] = torch.as_tensor(np.asarray(seq, dtype=np.int64))
    return ids, ids == PAD_ID


def mask_tokens(ids: torch.Tensor, vocab_size: int, mask_rate: float,
                generator: torch.Generator) -> tuple[torch.Tensor, torch.Tensor]:
    """Masked inputs and targets (IGNORE_INDEX where not selected)."""
    maskable = ids >= N_SPECIALS
    selected = (torch.rand(ids.shape, generator=generator) < mask_rate) & maskable
    labels = torch.where(selected, ids, torch.full_like(ids, IGNORE_INDEX))
    roll = torch.rand(ids.shape, generator=generator)
    random_ids = torch.randint(N_SPECIALS, vocab_size, ids.shape, generator=generator)
    inputs = ids.clone()
    inputs[selected & (roll < 0.8)] = MASK_ID
    swap = selected & (roll >= 0.8) & (roll < 0.9)
    inputs[swap] = random_ids[swap]
    return inputs, labels


def masked_lm_loss(model: MaskedLanguageModel, inputs: torch.Tensor, labels: torch.Tensor,
                   pad_mask: torch.Tensor) -> torch.Tensor:
    logits = model(inputs, pad_mask)
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), labels.reshape(-1), ignore_index=IGNORE_INDEX)


def mlm_step(model: MaskedLanguageModel, optimizer: torch.optim.Optimizer, ids: torch.Tensor,
             pad_mask: torch.Tensor, generator: torch.Generator) -> float | None:
    """One masked-LM update; None when the draw selected no position."""
    inputs, labels = mask_tokens(ids, model.encoder.vocab_size, model.config.mask_rate, generator)
    if not bool((labels != IGNORE_INDEX).any()):
        return None
    model.train()
    optimizer.zero_grad()
    loss = masked_lm_loss(model, inputs, labels, pad_mask)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def _sequence_ids(seq: ClaimSequence | np.ndarray | Sequence[int]) -> np.ndarray:
    return seq.as_array() if isinstance(seq, ClaimSequence) else np.asarray(seq, dtype=np.int64)


# ── Pretraining ──────────────────────────────────────────────────────────────

def pretrain_mlm(
    sequences: Iterable[ClaimSequence | np.ndarray],
    vocab_size: int,
    cfg: TransformerConfig = TransformerConfig(),
    loss_history: list[float] | None = None,
) -> MaskedLanguageModel:
    data = [_sequence_ids(s) for s in sequences]
    if not data:
        raise TrainingError("masked-LM pretraining needs at least one sequence")
    too_long = max(len(s) for s in data)
    if too_long > cfg.max_len:
        raise ValueError(f"pretraining sequence of length {too_long} exceeds max_len {cfg.max_len}")
    model = build_masked_lm(vocab_size, cfg)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.pretrain_lr, weight_decay=cfg.weight_decay)
    generator = torch.Generator().manual_seed(cfg.seed)
    for epoch in range(cfg.pretrain_epochs):
        order = torch.randperm(len(data), generator=generator).tolist()
        total, steps = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            ids, pad_mask = pad_batch([data[i] for i in order[start:start + cfg.batch_size]])
            loss = mlm_step(model, optimizer, ids, pad_mask, generator)
            if loss is None:
                continue
            total += loss
            steps += 1
            if loss_history is not None:
                loss_history.append(loss)
        logger.info("mlm pretraining epoch", extra={"fields": {
            "epoch": epoch + 1, "steps": steps, "mean_loss": total / max(steps, 1)}})
    model.eval()
    return model


# ── Fine-tuning ──────────────────────────────────────────────────────────────

class MlmClassifier(ProbabilisticClassifier):
    kind = ModelKind.MLM

    def __init__(self, encoder: ClaimsEncoder, head: nn.Linear, vocab: Vocabulary,
                 config: TransformerConfig, age_table: AgeBucketTable = DEFAULT_AGE_TABLE):
        if encoder.vocab_size != len(vocab):
            raise ValueError(f"encoder has {encoder.vocab_size} tokens, vocabulary has {len(vocab)}")
        self.encoder = encoder.eval()
        self.head = head.eval()
        self.vocab = vocab
        self.config = config
        self.age_table = age_table

    def encode(self, histories: Sequence[PatientHistory]) -> list[np.ndarray]:
        return [tokenize_history(h, self.vocab, self.config.max_len, self.age_table).as_array() for h in histories]

    def logits(self, ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        hidden = self.encoder(ids, pad_mask)
        return self.head(hidden[:, 0, :]).squeeze(-1)

    def predict_proba(self, histories: Sequence[PatientHistory]) -> np.ndarray:
        encoded = self.encode(histories)
        out = np.empty(len(encoded), dtype=np.float64)
        with torch.no_grad():
            for start in range(0, len(encoded), _INFERENCE_BATCH):
                ids, pad_mask = pad_batch(encoded[start:start + _INFERENCE_BATCH])
                out[start:start + len(ids)] = torch.sigmoid(self.logits(ids, pad_mask)).double().numpy()
        return out

    def sections(self) -> dict[str, np.ndarray]:
        out = {f"encoder.{k}": v.detach().cpu().numpy() for k, v in self.encoder.state_dict().items()}
        out.update({f"head.{k}": v.detach().cpu().numpy() for k, v in self.head.state_dict().items()})
        return out

    def manifest_extras(self) -> dict:
        return {"vocab_size": len(self.vocab), "age_lower_bounds": list(self.age_table.lower_bounds)}


def _new_head(cfg: TransformerConfig) -> nn.Linear:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed + 1)
        return nn.Linear(cfg.d_model, 1)


def _validation_split(train: Sequence[LabeledExample], cfg: TransformerConfig):
    if cfg.validation_fraction <= 0:
        return list(train), []
    try:
        return split_train_test(train, SplitSpec(1.0 - cfg.validation_fraction, True, cfg.seed))
    except SplitError:
        logger.warning("no validation fold; early stopping disabled", extra={"fields": {"examples": len(train)}})
        return list(train), []


def _mean_bce(classifier: MlmClassifier, encoded: list[np.ndarray], y: np.ndarray) -> float:
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(encoded), _INFERENCE_BATCH):
            ids, pad_mask = pad_batch(encoded[start:start + _INFERENCE_BATCH])
            target = torch.as_tensor(y[start:start + len(ids)], dtype=torch.float32)
            total += float(F.binary_cross_entropy_with_logits(
                classifier.logits(ids, pad_mask), target, reduction="sum"))
    return total / len(encoded)


def finetune_classifier(
    encoder: ClaimsEncoder | None,
    train: Sequence[LabeledExample],
    vocab: Vocabulary,
    cfg: TransformerConfig = TransformerConfig(),
    age_table: AgeBucketTable = DEFAULT_AGE_TABLE,
) -> MlmClassifier:
    """Fine-tune a copy of ``encoder`` with a [CLS] head.

    ``encoder=None`` trains from a freshly initialised encoder, the
    untrained-encoder control. With ``cfg.freeze_encoder`` only the head learns.
    The epoch with the lowest validation loss is restored.
    """
    if not train:
        raise TrainingError("fine-tuning needs a nonempty training set")
    if encoder is None:
        encoder = build_masked_lm(len(vocab), cfg).encoder
    else:
        encoder = copy.deepcopy(encoder)
    classifier = MlmClassifier(encoder, _new_head(cfg), vocab, cfg, age_table)

    fit_part, val_part = _validation_split(train, cfg)
    fit_ids = classifier.encode([e.history for e in fit_part])
    fit_y = labels_of(fit_part)
    val_ids = classifier.encode([e.history for e in val_part])
    val_y = labels_of(val_part)

    for p in encoder.parameters():
        p.requires_grad_(not cfg.freeze_encoder)
    params = [p for p in (*encoder.parameters(), *classifier.head.parameters()) if p.requires_grad]
    optimizer = torch.optim.AdamW(params, lr=cfg.finetune_lr, weight_decay=cfg.weight_decay)
    generator = torch.Generator().manual_seed(cfg.seed)

    best_loss = float("inf")
    best_state = None
    for epoch in range(cfg.finetune_epochs):
        encoder.train(not cfg.freeze_encoder)
        classifier.head.train()
        order = torch.randperm(len(fit_ids), generator=generator).tolist()
        total = 0.0
        for start in range(0, len(order), cfg.finetune_batch_size):
            batch = order[start:start + cfg.finetune_batch_size]
            ids, pad_mask = pad_batch([fit_ids[i] for i in batch])
            target = torch.as_tensor(fit_y[batch], dtype=torch.float32)
            optimizer.zero_grad()
            loss = F.binary_cross_entropy_with_logits(classifier.logits(ids, pad_mask), target)
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(batch)
        encoder.eval()
        classifier.head.eval()
        train_loss = total / len(fit_ids)
        val_loss = _mean_bce(classifier, val_ids, val_y) if val_ids else train_loss
        logger.info("fine-tuning epoch", extra={"fields": {
            "epoch": epoch + 1, "train_loss": train_loss, "validation_loss": val_loss}})
        if val_loss < best_loss:
            best_loss = val_loss
            best_state = (copy.deepcopy(encoder.state_dict()), copy.deepcopy(classifier.head.state_dict()))
    if best_state is not None:
        encoder.load_state_dict(best_state[0])
        classifier.head.load_state_dict(best_state[1])
    for p in encoder.parameters():
        p.requires_grad_(False)
    return classifier
