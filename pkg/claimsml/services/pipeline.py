"""claimsml: Pipeline Stages

One function per subcommand. Each checks its upstream artifacts before doing
any work, writes only its declared outputs, and returns a JSON-ready summary
for standard output.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from claimsml.claims.preprocessing import AgeBucketTable, build_cohort, default_covid_codes
from claimsml.claims.records import LabeledExample
from claimsml.claims.risk_factors import RiskFactorMap
from claimsml.config import PipelineConfig
from claimsml.embeddings.cbow import train_cbow
from claimsml.embeddings.table import EmbeddingTable, load_embeddings, nearest_codes, save_embeddings
from claimsml.errors import ArtifactMismatchError, NotAttributableError
from claimsml.evaluation.lime import lime_explain, select_explanation_sample
from claimsml.evaluation.metrics import compute_metrics
from claimsml.evaluation.perturb import EmbeddingPerturber
from claimsml.evaluation.sanity import highrisk_sanity_check
from claimsml.evaluation.stability import stability_eval
from claimsml.models.base import ModelKind, ProbabilisticClassifier, labels_of
from claimsml.models.bow_svm import train_bow_svm
from claimsml.models.gbm import train_embed_gbm
from claimsml.models.persistence import ENCODER_KIND, artifact_paths, load_encoder, load_model, save_encoder, save_model
from claimsml.models.risk_logit import train_risk_logit
from claimsml.models.split import split_train_test
from claimsml.models.transformer import finetune_classifier, pretrain_mlm
from claimsml.narrative.tokenize import pretrain_sequences
from claimsml.narrative.vocab import Vocabulary, build_vocab
from claimsml.services import artifact_store, export_service
from claimsml.services.corpus_store import load_claims_corpus, save_claims_corpus
from claimsml.synthgen.generator import generate_cohort_records, generate_pretrain_corpus, oracle_probability

logger = logging.getLogger(__name__)

_ARCHITECTURE = ("layers", "heads", "d_model", "ffn_dim", "max_len")


# ── Shared loaders ───────────────────────────────────────────────────────────

def _age_table(cfg: PipelineConfig) -> AgeBucketTable:
    return AgeBucketTable(cfg.age_lower_bounds)


def _risk_map(cfg: PipelineConfig) -> RiskFactorMap:
    if cfg.paths.risk_map is None:
        return RiskFactorMap.default()
    return RiskFactorMap.load(artifact_store.require_artifact(cfg.paths.resolve("risk_map"), "risk map"))


def _vocab(cfg: PipelineConfig) -> Vocabulary:
    return Vocabulary.load(artifact_store.require_artifact(cfg.paths.resolve("vocab"), "vocabulary"))


def _embeddings(cfg: PipelineConfig, vocab: Vocabulary) -> EmbeddingTable:
    path = cfg.paths.resolve("embeddings")
    artifact_store.check_header(path)
    return load_embeddings(path, vocab)


def _corpus(cfg: PipelineConfig, name: str):
    return load_claims_corpus(artifact_store.require_artifact(cfg.paths.resolve(name), name.replace("_", " ")))


def cohort_split(cfg: PipelineConfig) -> tuple[list[LabeledExample], list[LabeledExample]]:
    examples, _ = build_cohort(_corpus(cfg, "cohort_corpus"), default_covid_codes(cfg.covid_codes))
    return split_train_test(examples, cfg.split)


def _require_model(cfg: PipelineConfig, name: str) -> None:
    manifest, blob = artifact_paths(cfg.paths.resolve("models_dir"), name)
    artifact_store.require_artifact(manifest, f"{name} manifest")
    artifact_store.check_header(blob)


def load_trained(cfg: PipelineConfig, kind: ModelKind | str, vocab: Vocabulary | None = None,
                 table: EmbeddingTable | None = None) -> ProbabilisticClassifier:
    kind = ModelKind(kind)
    _require_model(cfg, kind.value)
    models_dir = cfg.paths.resolve("models_dir")
    if kind is ModelKind.RISK_LOGIT:
        return load_model(models_dir, kind, risk_map=_risk_map(cfg))
    vocab = vocab or _vocab(cfg)
    if kind is ModelKind.EMBED_GBM:
        return load_model(models_dir, kind, table=table or _embeddings(cfg, vocab))
    return load_model(models_dir, kind, vocab=vocab)


def _report_stem(cfg: PipelineConfig, name: str, out: str | Path | None) -> Path:
    if out is not None:
        return Path(out).with_suffix("")
    return cfg.paths.resolve("reports_dir") / name


# ── Stages ───────────────────────────────────────────────────────────────────

def gen_data(cfg: PipelineConfig, out: str | Path | None = None) -> dict:
    """Write the pretraining corpus and the unfiltered cohort records."""
    if out is not None:
        pretrain_path, cohort_path = Path(out) / "pretrain.jsonl", Path(out) / "cohort.jsonl"
    else:
        pretrain_path, cohort_path = cfg.paths.resolve("pretrain_corpus"), cfg.paths.resolve("cohort_corpus")
    risk_map, age_table = _risk_map(cfg), _age_table(cfg)
    n_pretrain = save_claims_corpus(generate_pretrain_corpus(cfg.generator, risk_map), pretrain_path)
    n_cohort = save_claims_corpus(generate_cohort_records(cfg.generator, risk_map, age_table), cohort_path)
    return {"pretrain_corpus": str(pretrain_path), "pretrain_patients": n_pretrain,
            "cohort_corpus": str(cohort_path), "cohort_patients": n_cohort}


def build_vocabulary(cfg: PipelineConfig, out: str | Path | None = None) -> dict:
    vocab = build_vocab(_corpus(cfg, "pretrain_corpus"), cfg.narrative.min_count, _age_table(cfg))
    path = Path(out) if out is not None else cfg.paths.resolve("vocab")
    vocab.save(path)
    return {"vocab": str(path), "size": len(vocab), "fingerprint": vocab.fingerprint()}


def train_embeddings(cfg: PipelineConfig, out: str | Path | None = None) -> dict:
    vocab = _vocab(cfg)
    sequences = pretrain_sequences(_corpus(cfg, "pretrain_corpus"), vocab, cfg.cbow.seed, _age_table(cfg))
    losses: list[float] = []
    table = train_cbow(sequences, vocab, cfg.cbow, cfg.threads, cfg.deterministic, losses)
    path = Path(out) if out is not None else cfg.paths.resolve("embeddings")
    save_embeddings(table, path)
    return {"embeddings": str(path), "rows": len(vocab), "dim": table.dim, "epoch_losses": losses}


def pretrain_encoder(cfg: PipelineConfig, out: str | Path | None = None) -> dict:
    vocab = _vocab(cfg)
    sequences = pretrain_sequences(_corpus(cfg, "pretrain_corpus"), vocab, cfg.transformer.seed, _age_table(cfg))
    losses: list[float] = []
    model = pretrain_mlm(sequences, len(vocab), cfg.transformer, losses)
    directory = Path(out) if out is not None else cfg.paths.resolve("models_dir")
    path = save_encoder(model, vocab, directory)
    return {"encoder": str(path), "steps": len(losses), "final_loss": losses[-1] if losses else None}


def train(cfg: PipelineConfig, model: str, out: str | Path | None = None) -> dict:
    kind = ModelKind(model)
    directory = Path(out) if out is not None else cfg.paths.resolve("models_dir")
    age_table = _age_table(cfg)
    if kind is ModelKind.RISK_LOGIT:
        risk_map = _risk_map(cfg)
        train_set, _ = cohort_split(cfg)
        classifier = train_risk_logit(train_set, risk_map, cfg.logit, age_table)
    elif kind is ModelKind.BOW_SVM:
        vocab = _vocab(cfg)
        train_set, _ = cohort_split(cfg)
        classifier = train_bow_svm(train_set, vocab, cfg.svm)
    elif kind is ModelKind.EMBED_GBM:
        vocab = _vocab(cfg)
        table = _embeddings(cfg, vocab)
        train_set, _ = cohort_split(cfg)
        classifier = train_embed_gbm(train_set, table, cfg.gbm, age_table)
    else:
        vocab = _vocab(cfg)
        _require_model(cfg, ENCODER_KIND)
        pretrained = load_encoder(cfg.paths.resolve("models_dir"), vocab)
        for name in _ARCHITECTURE:
            if getattr(pretrained.config, name) != getattr(cfg.transformer, name):
                raise ArtifactMismatchError(artifact_paths(cfg.paths.resolve("models_dir"), ENCODER_KIND)[0],
                                            f"encoder {name} differs from transformer.{name} in the config")
        train_set, _ = cohort_split(cfg)
        classifier = finetune_classifier(pretrained.encoder, train_set, vocab, cfg.transformer, age_table)
    path = save_model(classifier, directory)
    return {"model": kind.value, "manifest": str(path), "train_examples": len(train_set)}


def evaluate(cfg: PipelineConfig, out: str | Path | None = None) -> dict:
    _, test = cohort_split(cfg)
    histories = [e.history for e in test]
    labels = labels_of(test)
    vocab = _vocab(cfg)
    table = _embeddings(cfg, vocab)
    reports = {}
    for kind in ModelKind:
        classifier = load_trained(cfg, kind, vocab, table)
        reports[kind.value] = compute_metrics(classifier.predict_proba(histories), labels)
    risk_map, age_table = _risk_map(cfg), _age_table(cfg)
    try:
        oracle = np.array([oracle_probability(h, cfg.generator, risk_map, age_table) for h in histories])
        reports["oracle"] = compute_metrics(oracle, labels)
    except NotAttributableError as e:
        logger.warning("oracle unavailable for this cohort", extra={"fields": {"reason": str(e)}})
    payload = {"metrics": {k: r.as_dict() for k, r in reports.items()}, "test_examples": len(test),
               "seed": cfg.seed, "split": {"train_fraction": cfg.split.train_fraction, "seed": cfg.split.seed}}
    export_service.write_report(_report_stem(cfg, "metrics", out), payload, export_service.metrics_frame(reports))
    return payload


def stability(cfg: PipelineConfig, out: str | Path | None = None) -> dict:
    _, test = cohort_split(cfg)
    histories = [e.history for e in test]
    vocab = _vocab(cfg)
    table = _embeddings(cfg, vocab)
    perturber = EmbeddingPerturber(table)
    reports = [
        stability_eval(load_trained(cfg, kind, vocab, table), histories, perturber, cfg.stability, cfg.lime)
        for kind in cfg.stability.models
    ]
    payload = {"stability": [r.as_dict() for r in reports], "seed": cfg.seed,
               "config": {"n_pairs": cfg.stability.n_pairs, "models": list(cfg.stability.models)}}
    export_service.write_report(_report_stem(cfg, "stability", out), payload, export_service.stability_frame(reports))
    return payload


def explain(cfg: PipelineConfig, model: str, out: str | Path | None = None) -> dict:
    kind = ModelKind(model)
    _, test = cohort_split(cfg)
    histories = [e.history for e in test]
    classifier = load_trained(cfg, kind)
    predictions = classifier.predict_proba(histories)
    chosen = select_explanation_sample(predictions, cfg.explain.n_positive, cfg.explain.n_negative, cfg.explain.seed)
    chosen = [int(i) for i in chosen if any(True for _ in histories[i].codes())]
    explanations = [lime_explain(classifier, histories[i], cfg.lime, cfg.lime.seed + i) for i in chosen]
    ids = [histories[i].patient_id for i in chosen]
    payload = {"model": kind.value, "seed": cfg.seed,
               "explanations": {pid: e.as_dict() for pid, e in zip(ids, explanations)}}
    export_service.write_report(_report_stem(cfg, f"explain-{kind.value}", out), payload,
                                export_service.explanation_frame(ids, explanations))
    return payload


def nearest(cfg: PipelineConfig, token: str, k: int = 1) -> list[tuple[str, float]]:
    vocab = _vocab(cfg)
    return nearest_codes(token, _embeddings(cfg, vocab), k)


def sanity(cfg: PipelineConfig, out: str | Path | None = None) -> dict:
    vocab = _vocab(cfg)
    table = _embeddings(cfg, vocab)
    classifiers = {kind.value: load_trained(cfg, kind, vocab, table) for kind in ModelKind}
    report = highrisk_sanity_check(classifiers, _risk_map(cfg), vocab, cfg.sanity)
    payload = report.as_dict()
    export_service.write_report(_report_stem(cfg, "sanity", out), payload, export_service.sanity_frame(report))
    return payload
