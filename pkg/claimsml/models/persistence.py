"""claimsml: Model Artifacts

A model is stored as ``<name>.json`` (kind, config, featurizer fingerprints,
scalar extras) next to ``<name>.bin`` (sectioned parameter blob). Loading
checks the fingerprints against the featurizer the caller supplies.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from claimsml import config
from claimsml.claims.preprocessing import AgeBucketTable
from claimsml.claims.risk_factors import RiskFactorMap
from claimsml.embeddings.table import EmbeddingTable
from claimsml.errors import ArtifactError, ArtifactMismatchError, VersionError
from claimsml.models.base import ModelKind, ProbabilisticClassifier
from claimsml.models.bow_svm import BowSvmClassifier
from claimsml.models.gbm import EmbedGbmClassifier
from claimsml.models.risk_logit import RiskLogitClassifier
from claimsml.models.transformer import MaskedLanguageModel, MlmClassifier
from claimsml.narrative.vocab import Vocabulary
from claimsml.services import artifact_store

logger = logging.getLogger(__name__)

MANIFEST_FORMAT = "claimsml-model"
ENCODER_KIND = "mlm-encoder"

_CONFIG_TYPES = {
    ModelKind.RISK_LOGIT: config.LogitConfig,
    ModelKind.BOW_SVM: config.SvmConfig,
    ModelKind.EMBED_GBM: config.GbmConfig,
    ModelKind.MLM: config.TransformerConfig,
}


def table_fingerprint(table: EmbeddingTable) -> str:
    """SHA-256 of the embedding matrix as little-endian f32."""
    return hashlib.sha256(np.ascontiguousarray(table.matrix, dtype="<f4").tobytes()).hexdigest()


def artifact_paths(directory: str | Path, name: str) -> tuple[Path, Path]:
    directory = Path(directory)
    return directory / f"{name}.json", directory / f"{name}.bin"


def _fingerprints(model: ProbabilisticClassifier) -> dict[str, str]:
    if isinstance(model, RiskLogitClassifier):
        return {"risk_map": model.risk_map.fingerprint()}
    if isinstance(model, EmbedGbmClassifier):
        return {"vocab": model.table.vocab.fingerprint(), "embeddings": table_fingerprint(model.table)}
    return {"vocab": model.vocab.fingerprint()}


def _config_dict(cfg) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(cfg).items()}


def save_model(model: ProbabilisticClassifier, directory: str | Path, name: str | None = None) -> Path:
    """Write manifest and blob; returns the manifest path."""
    name = name or model.kind.value
    manifest_path, blob_path = artifact_paths(directory, name)
    sections = model.sections()
    artifact_store.write_sections(blob_path, sections)
    artifact_store.write_manifest(manifest_path, {
        "format": MANIFEST_FORMAT,
        "version": artifact_store.FORMAT_VERSION,
        "kind": model.kind.value,
        "config": _config_dict(model.config),
        "fingerprints": _fingerprints(model),
        "extras": model.manifest_extras(),
        "sections": list(sections),
    })
    logger.info("model written", extra={"fields": {"kind": model.kind.value, "path": str(manifest_path)}})
    return manifest_path


def _read(directory: str | Path, name: str, expected_kind: str) -> tuple[dict, dict[str, np.ndarray]]:
    manifest_path, blob_path = artifact_paths(directory, name)
    manifest = artifact_store.read_manifest(manifest_path)
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ArtifactError(manifest_path, f"not a model manifest (format {manifest.get('format')!r})")
    if manifest.get("version") != artifact_store.FORMAT_VERSION:
        raise VersionError(manifest_path, f"manifest version {manifest.get('version')}, "
                                         f"expected {artifact_store.FORMAT_VERSION}")
    if manifest.get("kind") != expected_kind:
        raise ArtifactMismatchError(manifest_path, f"holds a {manifest.get('kind')} model, expected {expected_kind}")
    return manifest, artifact_store.read_sections(blob_path)


def _check(manifest: dict, path: Path, key: str, actual: str) -> None:
    recorded = manifest.get("fingerprints", {}).get(key)
    if recorded != actual:
        raise ArtifactMismatchError(path, f"{key} fingerprint differs from the one the model was trained with")


def _state_dict(sections: dict[str, np.ndarray], prefix: str) -> dict[str, torch.Tensor]:
    return {k[len(prefix):]: torch.from_numpy(v) for k, v in sections.items() if k.startswith(prefix)}


def load_model(
    directory: str | Path,
    kind: ModelKind | str,
    *,
    name: str | None = None,
    vocab: Vocabulary | None = None,
    risk_map: RiskFactorMap | None = None,
    table: EmbeddingTable | None = None,
) -> ProbabilisticClassifier:
    """Rebuild a classifier; the featurizer it needs must be supplied and match."""
    kind = ModelKind(kind)
    name = name or kind.value
    manifest, sections = _read(directory, name, kind.value)
    manifest_path = artifact_paths(directory, name)[0]
    cfg = config.section_from_dict(_CONFIG_TYPES[kind], manifest.get("config", {}), kind.value)
    extras = manifest.get("extras", {})

    if kind is ModelKind.RISK_LOGIT:
        if risk_map is None:
            raise ValueError("risk-logit needs the risk map it was trained with")
        _check(manifest, manifest_path, "risk_map", risk_map.fingerprint())
        return RiskLogitClassifier(risk_map, sections["coef"], float(sections["intercept"][0]),
                                   sections["mean"], sections["scale"],
                                   AgeBucketTable(extras["age_lower_bounds"]), cfg)
    if kind is ModelKind.EMBED_GBM:
        if table is None:
            raise ValueError("embed-gbm needs the embedding table it was trained with")
        _check(manifest, manifest_path, "vocab", table.vocab.fingerprint())
        _check(manifest, manifest_path, "embeddings", table_fingerprint(table))
        arrays = {k: sections[k] for k in ("feature", "threshold", "left", "right", "value", "offsets")}
        return EmbedGbmClassifier(table, float(sections["base_score"][0]),
                                  age_table=AgeBucketTable(extras["age_lower_bounds"]), config=cfg, **arrays)

    if vocab is None:
        raise ValueError(f"{kind.value} needs the vocabulary it was trained with")
    _check(manifest, manifest_path, "vocab", vocab.fingerprint())
    if kind is ModelKind.BOW_SVM:
        a, b = sections["platt"]
        return BowSvmClassifier(vocab, sections["weights"], float(a), float(b), cfg)
    model = MaskedLanguageModel(len(vocab), cfg)
    model.encoder.load_state_dict(_state_dict(sections, "encoder."))
    head = nn.Linear(cfg.d_model, 1)
    head.load_state_dict(_state_dict(sections, "head."))
    return MlmClassifier(model.encoder, head, vocab, cfg, AgeBucketTable(extras["age_lower_bounds"]))


# ── Pretrained encoder ───────────────────────────────────────────────────────

def save_encoder(model: MaskedLanguageModel, vocab: Vocabulary, directory: str | Path,
                 name: str = ENCODER_KIND) -> Path:
    manifest_path, blob_path = artifact_paths(directory, name)
    sections = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    artifact_store.write_sections(blob_path, sections)
    artifact_store.write_manifest(manifest_path, {
        "format": MANIFEST_FORMAT,
        "version": artifact_store.FORMAT_VERSION,
        "kind": ENCODER_KIND,
        "config": _config_dict(model.config),
        "fingerprints": {"vocab": vocab.fingerprint()},
        "extras": {"vocab_size": len(vocab)},
        "sections": list(sections),
    })
    logger.info("encoder written", extra={"fields": {"path": str(manifest_path)}})
    return manifest_path


def load_encoder(directory: str | Path, vocab: Vocabulary, name: str = ENCODER_KIND) -> MaskedLanguageModel:
    manifest, sections = _read(directory, name, ENCODER_KIND)
    _check(manifest, artifact_paths(directory, name)[0], "vocab", vocab.fingerprint())
    cfg = config.section_from_dict(config.TransformerConfig, manifest.get("config", {}), ENCODER_KIND)
    model = MaskedLanguageModel(len(vocab), cfg)
    model.load_state_dict(_state_dict(sections, ""))
    return model.eval()
