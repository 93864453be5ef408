"""Tests for the synthetic claims generator and its oracle."""

import dataclasses

import numpy as np
import pytest
from sklearn.metrics import roc_auc_score

from claimsml.claims.preprocessing import AgeBucketTable, lookback_window
from claimsml.claims.risk_factors import RiskFactorMap, map_risk_factors
from claimsml.errors import ConfigError, NotAttributableError
from claimsml.synthgen.generator import (
    generate_cohort_records,
    generate_labeled_cohort,
    generate_pretrain_corpus,
    oracle_probability,
    oracle_score,
    resolved_intercept,
    sample_patients,
)
from claimsml.synthgen.profiles import GeneratorConfig, build_code_space
from tests.helpers import history_of


class TestCodeSpace:
    """Profiles and the noise pool."""

    def test_default_profiles(self, small_generator, risk_map):
        space = build_code_space(small_generator)
        assert len(space.profiles) == 40
        risky = [p for p in space.profiles if p.risk_name is not None]
        assert len(risky) == 25
        for profile in risky:
            assert all(profile.risk_name in risk_map.lookup(c) for c in profile.dx_pool)

    def test_pools_disjoint(self, small_generator):
        space = build_code_space(small_generator)
        seen = set()
        for profile in space.profiles:
            codes = set(profile.codes())
            assert not codes & seen
            seen |= codes
        assert not set(space.noise_codes) & seen

    def test_noise_codes_carry_no_risk(self, small_generator, risk_map):
        space = build_code_space(small_generator)
        assert all(not risk_map.lookup(c) for c in space.noise_codes)

    def test_rejects_bad_rates(self):
        with pytest.raises(ConfigError):
            GeneratorConfig(target_positive_rate=1.5)
        with pytest.raises(ConfigError):
            GeneratorConfig.from_dict({"n_patient": 3})


class TestPretrainCorpus:
    """Exact claim count and determinism."""

    def test_exact_claim_count(self, pretrain_corpus, small_generator):
        assert sum(len(h.claims) for h in pretrain_corpus) == small_generator.n_pretrain_claims
        assert all(h.anchor_date is None for h in pretrain_corpus)

    def test_deterministic(self, small_generator):
        gen = dataclasses.replace(small_generator, n_pretrain_claims=300)
        assert list(generate_pretrain_corpus(gen)) == list(generate_pretrain_corpus(gen))

    def test_seed_changes_output(self, small_generator):
        a = dataclasses.replace(small_generator, n_pretrain_claims=300)
        b = dataclasses.replace(a, seed=a.seed + 1)
        assert list(generate_pretrain_corpus(a)) != list(generate_pretrain_corpus(b))


class TestCohort:
    """Cohort records, labels and the leakage filter."""

    def test_partition_independence(self, small_generator):
        whole = list(generate_cohort_records(small_generator))
        coarse = list(generate_cohort_records(dataclasses.replace(small_generator, n_patients=200)))
        assert whole[:200] == coarse

    def test_filtered_histories_respect_window(self, labeled_cohort):
        for example in labeled_cohort:
            start, cutoff = lookback_window(example.history.anchor_date)
            assert all(start <= c.service_date < cutoff for c in example.history.claims)

    def test_leakage_claims_generated_then_removed(self, small_generator):
        records = list(generate_cohort_records(small_generator))
        leaked = [r for r in records
                  if any(0 <= (r.anchor_date - c.service_date).days <= 7 for c in r.claims)]
        assert len(leaked) > 0.15 * len(records)

    def test_both_classes_present(self, labeled_cohort):
        labels = {e.y for e in labeled_cohort}
        assert labels == {0, 1}

    def test_calibrated_intercept_hits_target(self):
        gen = GeneratorConfig(seed=3, n_patients=3000, partition_size=500, target_positive_rate=0.2)
        rate = np.mean([e.y for e in generate_labeled_cohort(gen)])
        assert abs(rate - 0.2) < 0.04
        assert resolved_intercept(gen) == resolved_intercept(gen)


class TestOracle:
    """The Bayes probability recovered from a filtered history."""

    def test_probabilities_in_range(self, labeled_cohort, small_generator):
        p = np.array([oracle_probability(e.history, small_generator) for e in labeled_cohort])
        assert np.all((p > 0) & (p < 1))

    def test_oracle_beats_chance(self, labeled_cohort, small_generator):
        p = [oracle_probability(e.history, small_generator) for e in labeled_cohort]
        assert roc_auc_score([e.y for e in labeled_cohort], p) > 0.7

    def test_foreign_code_not_attributable(self, small_generator):
        with pytest.raises(NotAttributableError):
            oracle_probability(history_of("x", ["DX_Q999"]), small_generator)

    def test_latent_draw_matches_records(self, small_generator):
        latent = list(sample_patients(small_generator, n=50))
        records = list(generate_cohort_records(dataclasses.replace(small_generator, n_patients=50)))
        assert [(p.patient_id, p.age_years, p.sex) for p in latent] == \
               [(r.patient_id, r.age_years, r.sex) for r in records]


class TestCustomRiskMap:
    """A configured risk map and age table drive both the planted signal and the oracle."""

    @pytest.fixture(scope="class")
    def gout_map(self, tmp_path_factory):
        path = tmp_path_factory.mktemp("risk") / "gout.tsv"
        path.write_text("gout\tdx\tM10\tM10\n", encoding="utf-8")
        return RiskFactorMap.load(path)

    @pytest.fixture(scope="class")
    def generator(self, small_generator):
        return dataclasses.replace(small_generator, n_patients=200)

    def test_single_risk_profile(self, generator, gout_map):
        space = build_code_space(generator, gout_map)
        risky = [p for p in space.profiles if p.risk_name is not None]
        assert [p.risk_name for p in risky] == ["gout"]
        assert all(c.value.startswith("M10") for c in risky[0].dx_pool)
        assert len(space.profiles) == generator.n_profiles

    def test_risk_features_follow_planted_condition(self, generator, gout_map):
        latent = list(sample_patients(generator, risk_map=gout_map))
        records = list(generate_cohort_records(generator, gout_map))
        active = [0 in p.active for p in latent]
        flagged = [map_risk_factors(r, gout_map)[0] == 1.0 for r in records]
        assert flagged == active
        assert any(active)

    def test_oracle_attributes_custom_space(self, generator, gout_map):
        for record in generate_cohort_records(generator, gout_map):
            assert 0.0 < oracle_probability(record, generator, gout_map) < 1.0

    def test_age_table_reaches_oracle(self, generator, gout_map):
        coarse = AgeBucketTable((0, 50))
        old = next(r for r in generate_cohort_records(generator, gout_map, coarse) if r.age_years >= 79)
        shift = oracle_score(old, generator, gout_map) - oracle_score(old, generator, gout_map, coarse)
        assert shift == pytest.approx(generator.age_coefficient * (8 - 1))
