"""Shared fixtures: a small generated corpus and the artifacts built from it."""

from __future__ import annotations

import logging

import pytest

from claimsml.claims.risk_factors import RiskFactorMap
from claimsml.config import CbowConfig, PipelineConfig, PathsConfig
from claimsml.embeddings.cbow import train_cbow
from claimsml.narrative.tokenize import pretrain_sequences
from claimsml.narrative.vocab import build_vocab
from claimsml.synthgen.generator import generate_labeled_cohort, generate_pretrain_corpus
from claimsml.synthgen.profiles import GeneratorConfig

SMALL_GENERATOR = GeneratorConfig(
    seed=11,
    n_patients=600,
    n_pretrain_claims=4000,
    partition_size=200,
    intercept=-2.0,
)


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.WARNING, logger="claimsml")


@pytest.fixture(scope="session")
def risk_map() -> RiskFactorMap:
    return RiskFactorMap.default()


@pytest.fixture(scope="session")
def small_generator() -> GeneratorConfig:
    return SMALL_GENERATOR


@pytest.fixture(scope="session")
def pretrain_corpus(small_generator):
    return list(generate_pretrain_corpus(small_generator))


@pytest.fixture(scope="session")
def labeled_cohort(small_generator):
    return list(generate_labeled_cohort(small_generator))


@pytest.fixture(scope="session")
def corpus_vocab(pretrain_corpus):
    return build_vocab(pretrain_corpus, min_count=1)


@pytest.fixture(scope="session")
def corpus_table(pretrain_corpus, corpus_vocab):
    cfg = CbowConfig(dim=16, window=5, epochs=3, seed=5)
    return train_cbow(pretrain_sequences(pretrain_corpus, corpus_vocab, 5), corpus_vocab, cfg)


@pytest.fixture
def workdir_config(tmp_path) -> PipelineConfig:
    """Pipeline config rooted in a temporary workdir with a small generator."""
    return PipelineConfig(paths=PathsConfig(workdir=str(tmp_path)), generator=SMALL_GENERATOR)
