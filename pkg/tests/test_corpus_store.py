"""Tests for JSONL corpus persistence."""

import pytest

from claimsml.claims.records import PatientHistory, Sex
from claimsml.errors import ArtifactError, SchemaError
from claimsml.services.corpus_store import load_claims_corpus, save_claims_corpus
from tests.helpers import ANCHOR, claim_on, days_after, days_before, dx, px, rx


def _records():
    return [
        PatientHistory("A1", 65, Sex.M, (
            claim_on("A1-1", days_before(200), [dx("R062"), dx("J189"), px("G0299"), rx("0143988701")]),
            claim_on("A1-2", days_after(3), [dx("U071")], hospitalization=True),
        ), ANCHOR),
        PatientHistory("B2", 4, Sex.F, (claim_on("B2-1", days_before(20), [px("99214")]),), None),
    ]


class TestCorpusStore:
    """Save/load behaviour and schema errors."""

    def test_roundtrip(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        assert save_claims_corpus(_records(), path) == 2
        assert list(load_claims_corpus(path)) == _records()

    def test_byte_stable(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_claims_corpus(_records(), a)
        save_claims_corpus(list(load_claims_corpus(a)), b)
        assert a.read_bytes() == b.read_bytes()

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("", encoding="utf-8")
        assert list(load_claims_corpus(path)) == []

    def test_malformed_line_named(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        save_claims_corpus(_records() * 3, path)
        lines = path.read_text(encoding="utf-8").splitlines()
        lines.append('{"patient_id": "X"')
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(SchemaError) as info:
            list(load_claims_corpus(path))
        assert info.value.line == 7
        assert ":7" in str(info.value)

    @pytest.mark.parametrize("line", [
        '{"patient_id": "X", "age": 3, "sex": "F", "anchor_date": null}',
        '{"patient_id": "X", "age": "3", "sex": "F", "anchor_date": null, "claims": []}',
        '{"patient_id": "X", "age": 3, "sex": "U", "anchor_date": null, "claims": []}',
        '{"patient_id": "X", "age": 3, "sex": "F", "anchor_date": null, "claims": '
        '[{"claim_id": "c", "service_date": "2020-01-01", "dx": ["1234"]}]}',
        '{"patient_id": "X", "age": 3, "sex": "F", "anchor_date": null, "claims": '
        '[{"claim_id": "c", "service_date": "2020-01-01", "dx": []}]}',
        '{"patient_id": "X", "age": 3, "sex": "F", "anchor_date": null, "claims": '
        '[{"claim_id": "c", "service_date": "2020-01-01", "is_hospitalization": "false", "dx": ["R062"]}]}',
    ])
    def test_schema_violations(self, tmp_path, line):
        path = tmp_path / "bad.jsonl"
        path.write_text(line + "\n", encoding="utf-8")
        with pytest.raises(SchemaError) as info:
            list(load_claims_corpus(path))
        assert info.value.line == 1

    def test_invalid_utf8_named(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        save_claims_corpus(_records(), path)
        good = path.read_bytes().splitlines()[0]
        path.write_bytes(good + b"\n" + good.replace(b"\"A1\"", b"\"A\xff\"", 1) + b"\n")
        with pytest.raises(SchemaError) as info:
            list(load_claims_corpus(path))
        assert info.value.line == 2
        assert "UTF-8" in str(info.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ArtifactError):
            list(load_claims_corpus(tmp_path / "nope.jsonl"))
